//! Phantom-derived training and test pairs, in memory and on disk.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! dataset.txt                 problem, side, seed, sizes, acquisition line
//! {train,test}_{x,y}.fpt      (n, 1, d, d) inputs and labels
//! {train,test}_{x,y}_w.fpt    (n, C, d/2^k, d/2^k) decomposed pairs, level ≥ 1
//! {train,test}_sino.fpt       measured CT views (ct only)
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::ct::{self, Sinogram, SinogramMeta};
use crate::error::{Error, Result};
use crate::filterbank::build_bank;
use crate::framelet::{decompose, SubbandStack};
use crate::image::Image;
use crate::mri::{self, SamplingMask};
use crate::phantom;

use super::config::{ExperimentConfig, Problem};
use super::container;

/// Test phantoms use generator streams starting here; training uses `0..n`.
pub const TEST_STREAM_OFFSET: u64 = 1 << 32;

pub const DATASET_FILE: &str = "dataset.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    /// Degraded network input.
    pub x: Image,
    /// Clean label.
    pub y: Image,
}

/// How inputs are degraded.
#[derive(Debug, Clone, PartialEq)]
pub enum Acquisition {
    Mri(SamplingMask),
    Ct { angles: Vec<f64>, factor: usize },
}

impl Acquisition {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match cfg.problem {
            Problem::Mri => Acquisition::Mri(mri::make_mask(
                cfg.image_side,
                cfg.mri_factor,
                cfg.mri_low_lines(),
            )?),
            Problem::Ct => Acquisition::Ct {
                angles: ct::uniform_angles(cfg.ct_views),
                factor: cfg.ct_factor,
            },
        })
    }

    pub fn problem(&self) -> Problem {
        match self {
            Acquisition::Mri(_) => Problem::Mri,
            Acquisition::Ct { .. } => Problem::Ct,
        }
    }

    /// Degrades `y`; for CT also returns the measured views.
    pub fn synthesize(&self, y: &Image) -> Result<(Pair, Option<Sinogram>)> {
        match self {
            Acquisition::Mri(mask) => {
                let (x, y) = mri::synthesize_mri_pair(y, mask)?;
                Ok((Pair { x, y }, None))
            }
            Acquisition::Ct { angles, factor } => {
                let full = ct::radon(y, angles)?;
                let sparse = ct::subsample_views(&full, *factor)?;
                let x = ct::fbp(&ct::zero_fill_views(&sparse, angles)?)?;
                let y = ct::mask_to_circle(y);
                Ok((Pair { x, y }, Some(sparse)))
            }
        }
    }

    /// One-line description: the mask line or the full-grid CT meta line.
    pub fn describe(&self, side: usize) -> String {
        match self {
            Acquisition::Mri(m) => m.to_string(),
            Acquisition::Ct { angles, factor } => SinogramMeta {
                n_angles: angles.len(),
                n_det: side,
                factor: *factor,
            }
            .to_string(),
        }
    }

    fn parse(line: &str) -> Result<Self> {
        let line = line.trim();
        if line.starts_with("mri") {
            let m: SamplingMask = line.parse()?;
            // rebuild so kept lines are recomputed
            Ok(Acquisition::Mri(mri::make_mask(m.side, m.factor, m.n_low)?))
        } else {
            let meta: SinogramMeta = line.parse()?;
            Ok(Acquisition::Ct {
                angles: ct::uniform_angles(meta.n_angles),
                factor: meta.factor,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub side: usize,
    pub seed: u64,
    pub acquisition: Acquisition,
    pub train: Vec<Pair>,
    pub test: Vec<Pair>,
}

/// Values are stored as f32 on disk; rounding in memory too keeps the two
/// paths identical.
fn round_f32(x: &Image) -> Image {
    x.map(|v| v as f32 as f64)
}

fn synthesize_range(
    acq: &Acquisition,
    side: usize,
    seed: u64,
    streams: std::ops::Range<u64>,
) -> Result<Vec<(Pair, Option<Sinogram>)>> {
    streams
        .into_par_iter()
        .map(|i| {
            let y = phantom::random_phantom(side, seed, i);
            let (p, s) = acq.synthesize(&y)?;
            Ok((
                Pair {
                    x: round_f32(&p.x),
                    y: round_f32(&p.y),
                },
                s,
            ))
        })
        .collect()
}

/// Generates a dataset in memory. Pairs are independent of thread count.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    Ok(generate_with_sinograms(cfg)?.0)
}

type Sinograms = (Vec<Sinogram>, Vec<Sinogram>);

fn generate_with_sinograms(cfg: &ExperimentConfig) -> Result<(Dataset, Sinograms)> {
    cfg.validate()?;
    let acq = Acquisition::from_config(cfg)?;
    let side = cfg.image_side;
    let train = synthesize_range(&acq, side, cfg.seed, 0..cfg.n_train as u64)?;
    let test = synthesize_range(
        &acq,
        side,
        cfg.seed,
        TEST_STREAM_OFFSET..TEST_STREAM_OFFSET + cfg.n_test as u64,
    )?;
    let split = |v: Vec<(Pair, Option<Sinogram>)>| -> (Vec<Pair>, Vec<Sinogram>) {
        let mut pairs = Vec::with_capacity(v.len());
        let mut sinos = Vec::new();
        for (p, s) in v {
            pairs.push(p);
            sinos.extend(s);
        }
        (pairs, sinos)
    };
    let (train, train_s) = split(train);
    let (test, test_s) = split(test);
    Ok((
        Dataset {
            side,
            seed: cfg.seed,
            acquisition: acq,
            train,
            test,
        },
        (train_s, test_s),
    ))
}

/// Decomposes images at the config's bank and level, rounding coefficients
/// to f32 like the on-disk copies.
pub fn decompose_all(images: &[&Image], cfg: &ExperimentConfig) -> Result<Vec<SubbandStack>> {
    let bank = build_bank(cfg.bank)?;
    images
        .par_iter()
        .map(|x| {
            let mut st = decompose(x, &bank, cfg.level)?;
            st.subbands.iter_mut().for_each(|b| *b = round_f32(b));
            Ok(st)
        })
        .collect()
}

impl Dataset {
    fn header(&self) -> String {
        format!(
            "problem={}\nside={}\nseed={}\nn_train={}\nn_test={}\nphantom=random-ellipse-blob\nacquisition={}\n",
            self.acquisition.problem(),
            self.side,
            self.seed,
            self.train.len(),
            self.test.len(),
            self.acquisition.describe(self.side)
        )
    }

    /// Writes images (and decomposed stacks when `cfg.level ≥ 1`).
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(DATASET_FILE), self.header())?;
        for (split, pairs) in [("train", &self.train), ("test", &self.test)] {
            let xs: Vec<Image> = pairs.iter().map(|p| p.x.clone()).collect();
            let ys: Vec<Image> = pairs.iter().map(|p| p.y.clone()).collect();
            container::write_images(&dir.join(format!("{split}_x.fpt")), &xs)?;
            container::write_images(&dir.join(format!("{split}_y.fpt")), &ys)?;
            if cfg.level >= 1 && !pairs.is_empty() {
                let xr: Vec<&Image> = xs.iter().collect();
                let yr: Vec<&Image> = ys.iter().collect();
                container::write_stacks(
                    &dir.join(format!("{split}_x_w.fpt")),
                    &decompose_all(&xr, cfg)?,
                )?;
                container::write_stacks(
                    &dir.join(format!("{split}_y_w.fpt")),
                    &decompose_all(&yr, cfg)?,
                )?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::format(path.display().to_string(), format!("cannot read dataset header: {e}"))
        })?;
        let origin = path.display().to_string();
        let mut side = None;
        let mut seed = None;
        let mut acq = None;
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            let num = |v: &str| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::format(origin.clone(), format!("bad number in '{line}'")))
            };
            match k {
                "side" => side = Some(num(v)? as usize),
                "seed" => seed = Some(num(v)?),
                "acquisition" => acq = Some(Acquisition::parse(v)?),
                _ => {}
            }
        }
        let (Some(side), Some(seed), Some(acquisition)) = (side, seed, acq) else {
            return Err(Error::format(origin, "missing side, seed or acquisition"));
        };
        let read_pairs = |split: &str| -> Result<Vec<Pair>> {
            let xs = container::read_images(&dir.join(format!("{split}_x.fpt")))?;
            let ys = container::read_images(&dir.join(format!("{split}_y.fpt")))?;
            if xs.len() != ys.len() {
                return Err(Error::Consistency(format!(
                    "{split}: {} inputs but {} labels",
                    xs.len(),
                    ys.len()
                )));
            }
            Ok(xs.into_iter().zip(ys).map(|(x, y)| Pair { x, y }).collect())
        };
        let ds = Dataset {
            side,
            seed,
            acquisition,
            train: read_pairs("train")?,
            test: read_pairs("test")?,
        };
        if ds.train.iter().chain(&ds.test).any(|p| p.x.side() != side) {
            return Err(Error::Consistency(format!(
                "images in {} do not match side {side}",
                dir.display()
            )));
        }
        Ok(ds)
    }

    /// Checks that this dataset was generated for `cfg`.
    pub fn check_matches(&self, cfg: &ExperimentConfig) -> Result<()> {
        if self.side != cfg.image_side || self.acquisition.problem() != cfg.problem {
            return Err(Error::Consistency(format!(
                "dataset is {} at side {}, config asks for {} at side {}",
                self.acquisition.problem(),
                self.side,
                cfg.problem,
                cfg.image_side
            )));
        }
        if self.train.len() < cfg.n_train.min(1) {
            return Err(Error::Consistency("dataset has no training pairs".into()));
        }
        Ok(())
    }
}

/// The `gen-data` command: generate and write to `cfg.output_dir`.
pub fn gen_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let (ds, (train_s, test_s)) = generate_with_sinograms(cfg)?;
    let dir = &cfg.output_dir;
    ds.write(dir, cfg)?;
    if let Acquisition::Ct { factor, .. } = ds.acquisition {
        if !train_s.is_empty() {
            container::write_sinograms(&dir.join("train_sino.fpt"), &train_s, factor)?;
        }
        if !test_s.is_empty() {
            container::write_sinograms(&dir.join("test_sino.fpt"), &test_s, factor)?;
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(problem: Problem, level: usize) -> ExperimentConfig {
        ExperimentConfig {
            problem,
            level,
            image_side: 32,
            n_train: 4,
            n_test: 2,
            n_levels: 2,
            ct_views: 36,
            ..Default::default()
        }
    }

    #[test]
    fn mri_pairs_have_expected_shape() {
        let ds = generate(&small(Problem::Mri, 0)).unwrap();
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.test.len(), 2);
        assert!(ds.train.iter().all(|p| p.x.side() == 32 && p.y.side() == 32));
        assert_ne!(ds.train[0].x, ds.train[0].y);
        assert_ne!(ds.train[0].y, ds.test[0].y);
    }

    #[test]
    fn ct_decomposed_stacks() {
        let cfg = small(Problem::Ct, 1);
        let ds = generate(&cfg).unwrap();
        let xs: Vec<&Image> = ds.train.iter().map(|p| &p.x).collect();
        let st = decompose_all(&xs, &cfg).unwrap();
        assert_eq!(st[0].subbands.len(), 4);
        assert_eq!(st[0].subband_side(), 16);
    }

    #[test]
    fn disk_round_trip_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = small(Problem::Ct, 1);
        cfg.output_dir = a.path().to_path_buf();
        let ds = gen_dataset(&cfg).unwrap();
        cfg.output_dir = b.path().to_path_buf();
        gen_dataset(&cfg).unwrap();
        for f in ["dataset.txt", "train_x.fpt", "train_y_w.fpt", "test_sino.fpt"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let back = Dataset::load(a.path()).unwrap();
        assert_eq!(back, ds);
        back.check_matches(&cfg).unwrap();
        cfg.problem = Problem::Mri;
        assert!(back.check_matches(&cfg).is_err());
    }

    #[test]
    fn missing_dataset_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        assert!(Dataset::load(d.path()).is_err());
    }
}
