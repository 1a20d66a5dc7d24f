//! Training loop with per-epoch wall-clock timing.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::framelet::SubbandStack;
use crate::image::Image;
use crate::nn::{build_unet, AdamConfig, Network, Scalar, Tensor};

use super::checkpoint;
use super::config::{ExperimentConfig, Precision};
use super::container;
use super::dataset::{decompose_all, Dataset, Pair};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_LOG: &str = "loss_log.csv";
pub const EPOCH_LOG: &str = "epoch_times.csv";

/// Decorrelates the batch-order stream from the initialization stream.
const SHUFFLE_SALT: u64 = 0x5eed_0f_ba7c4;

/// Network-ready inputs and labels, `(n, channels, s, s)` each.
#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    pub inputs: Tensor<T>,
    pub labels: Tensor<T>,
}

fn images_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let side = images.first().map_or(0, |i| i.side());
    let data = images
        .iter()
        .flat_map(|im| im.as_slice().iter().map(|&v| T::of(v)))
        .collect();
    Tensor::from_vec([images.len(), 1, side, side], data)
}

fn stacks_tensor<T: Scalar>(stacks: &[SubbandStack]) -> Result<Tensor<T>> {
    let first = stacks
        .first()
        .ok_or_else(|| Error::dim("no stacks to train on"))?;
    let (c, s) = (first.subbands.len(), first.subband_side());
    let data = stacks
        .iter()
        .flat_map(|st| st.subbands.iter().flat_map(|b| b.as_slice().iter().map(|&v| T::of(v))))
        .collect();
    Tensor::from_vec([stacks.len(), c, s, s], data)
}

impl<T: Scalar> TrainingSet<T> {
    /// Builds the training tensors from image pairs, decomposing when
    /// `cfg.level ≥ 1`.
    pub fn from_pairs(pairs: &[Pair], cfg: &ExperimentConfig) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Degenerate("no training pairs".into()));
        }
        let xs: Vec<&Image> = pairs.iter().map(|p| &p.x).collect();
        let ys: Vec<&Image> = pairs.iter().map(|p| &p.y).collect();
        if cfg.level == 0 {
            Ok(TrainingSet {
                inputs: images_tensor(&xs)?,
                labels: images_tensor(&ys)?,
            })
        } else {
            Ok(TrainingSet {
                inputs: stacks_tensor(&decompose_all(&xs, cfg)?)?,
                labels: stacks_tensor(&decompose_all(&ys, cfg)?)?,
            })
        }
    }

    /// Reads the training split written by `gen-data`; decomposed files must
    /// match the config's bank and level.
    pub fn load(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.level == 0 {
            let ds = Dataset::load(dir)?;
            ds.check_matches(cfg)?;
            return Self::from_pairs(&ds.train, cfg);
        }
        let read = |name: &str| -> Result<Vec<SubbandStack>> {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::Consistency(format!(
                    "{} is missing; regenerate the dataset with level={}",
                    path.display(),
                    cfg.level
                )));
            }
            let stacks = container::read_stacks(&path)?;
            let m = stacks.first().map(SubbandStack::meta);
            if let Some(m) = m {
                if m.bank != cfg.bank || m.level != cfg.level || m.side != cfg.image_side {
                    return Err(Error::Consistency(format!(
                        "{} holds bank={} level={} side={}, config asks for bank={} level={} side={}",
                        path.display(),
                        m.bank,
                        m.level,
                        m.side,
                        cfg.bank,
                        cfg.level,
                        cfg.image_side
                    )));
                }
            }
            Ok(stacks)
        };
        Ok(TrainingSet {
            inputs: stacks_tensor(&read("train_x_w.fpt")?)?,
            labels: stacks_tensor(&read("train_y_w.fpt")?)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(t: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
        let [_, c, h, w] = t.shape();
        let mut data = Vec::with_capacity(idx.len() * c * h * w);
        for &i in idx {
            data.extend_from_slice(t.sample(i));
        }
        Tensor::from_vec([idx.len(), c, h, w], data).expect("gathered shape")
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor<T>, Tensor<T>) {
        (Self::gather(&self.inputs, idx), Self::gather(&self.labels, idx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss after every optimizer step.
    pub losses: Vec<f64>,
    /// Wall-clock seconds of every epoch, in order.
    pub epoch_seconds: Vec<f64>,
    pub params: usize,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    /// Mean epoch time excluding the first (warm-up) epoch when there are
    /// at least two.
    pub fn mean_epoch_seconds(&self) -> f64 {
        let t = if self.epoch_seconds.len() > 1 {
            &self.epoch_seconds[1..]
        } else {
            &self.epoch_seconds[..]
        };
        t.iter().sum::<f64>() / t.len().max(1) as f64
    }
}

/// Runs the configured epochs (or `max_steps`) of mini-batch Adam on the
/// ℓ² loss. Batch order is reshuffled every epoch from a seeded stream;
/// the last batch of an epoch may be smaller.
pub fn fit<T: Scalar>(
    net: &mut Network<T>,
    data: &TrainingSet<T>,
    cfg: &ExperimentConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    let mut epoch_seconds = Vec::new();
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    for _ in 0..cfg.epochs {
        if losses.len() >= budget {
            break;
        }
        order.shuffle(&mut rng);
        let start = Instant::now();
        for idx in order.chunks(cfg.batch_size) {
            if losses.len() >= budget {
                break;
            }
            let (x, y) = data.batch(idx);
            losses.push(net.train_step(&x, &y, &adam)?);
        }
        epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(TrainReport {
        losses,
        epoch_seconds,
        params: net.count_params(),
    })
}

/// Builds a fresh network from the config seed and trains it on `ds`.
pub fn train_on<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
) -> Result<(Network<T>, TrainReport)> {
    cfg.validate()?;
    ds.check_matches(cfg)?;
    let data = TrainingSet::<T>::from_pairs(&ds.train, cfg)?;
    let mut net = build_unet::<T>(cfg.network_spec(), cfg.seed)?;
    let report = fit(&mut net, &data, cfg)?;
    Ok((net, report))
}

pub fn write_logs(dir: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(LOSS_LOG))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in report.losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:e}")])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(EPOCH_LOG))?;
    w.write_record(["epoch", "seconds"])?;
    for (i, s) in report.epoch_seconds.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{s:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

fn train_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let dir = &cfg.output_dir;
    let data = TrainingSet::<T>::load(dir, cfg)?;
    let mut net = build_unet::<T>(cfg.network_spec(), cfg.seed)?;
    let report = fit(&mut net, &data, cfg)?;
    checkpoint::save(&dir.join(CHECKPOINT_DIR), &net, cfg.bank_label())?;
    write_logs(dir, &report)?;
    Ok(report)
}

/// The `train` command: reads the dataset in `cfg.output_dir`, trains, and
/// writes the checkpoint, loss log and epoch-time log next to it.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}
