//! Test-set scoring in the image domain.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filterbank::build_bank;
use crate::framelet::{decompose, reconstruct, SubbandStack};
use crate::image::Image;
use crate::metrics::{format_value, MetricReport};
use crate::nn::{Network, Scalar, Tensor};

use super::checkpoint;
use super::config::{ExperimentConfig, Precision};
use super::dataset::{Dataset, Pair};
use super::pgm;
use super::train::CHECKPOINT_DIR;

pub const EVAL_CSV: &str = "eval.csv";
pub const IMAGE_DIR: &str = "images";

/// Column order of the evaluation table.
pub const EVAL_COLUMNS: [&str; 11] = [
    "problem",
    "bank",
    "level",
    "image",
    "peak",
    "mse",
    "psnr",
    "ssim",
    "input_mse",
    "input_psnr",
    "input_ssim",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    /// `max(label)`, the PSNR/SSIM data range.
    pub peak: f64,
    pub pred: MetricReport,
    /// Score of the raw degraded input.
    pub input: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub predictions: Vec<Image>,
}

impl EvalReport {
    pub fn mean_pred(&self) -> MetricReport {
        MetricReport::mean(&self.rows.iter().map(|r| r.pred).collect::<Vec<_>>())
    }

    pub fn mean_input(&self) -> MetricReport {
        MetricReport::mean(&self.rows.iter().map(|r| r.input).collect::<Vec<_>>())
    }
}

/// Runs the model on one degraded image; `None` is the pass-through model.
/// For `level ≥ 1` the image is decomposed, mapped, and reconstructed.
pub fn predict_image<T: Scalar>(
    net: Option<&Network<T>>,
    x: &Image,
    cfg: &ExperimentConfig,
) -> Result<Image> {
    if cfg.level == 0 {
        let Some(net) = net else {
            return Ok(x.clone());
        };
        let t = Tensor::from_vec(
            [1, 1, x.side(), x.side()],
            x.as_slice().iter().map(|&v| T::of(v)).collect(),
        )?;
        let y = net.predict(&t)?;
        return Image::from_vec(x.side(), y.into_vec().into_iter().map(|v| v.as_f64()).collect());
    }
    let bank = build_bank(cfg.bank)?;
    let stack = decompose(x, &bank, cfg.level)?;
    let out = match net {
        None => stack,
        Some(net) => {
            let s = stack.subband_side();
            let c = stack.subbands.len();
            let data = stack
                .subbands
                .iter()
                .flat_map(|b| b.as_slice().iter().map(|&v| T::of(v)))
                .collect();
            let y = net.predict(&Tensor::from_vec([1, c, s, s], data)?)?;
            let subbands = y
                .as_slice()
                .chunks_exact(s * s)
                .map(|ch| Image::from_vec(s, ch.iter().map(|v| v.as_f64()).collect()))
                .collect::<Result<Vec<_>>>()?;
            SubbandStack { subbands, ..stack }
        }
    };
    reconstruct(&out, &bank)
}

/// Scores every pair in parallel; rows keep the input order.
pub fn evaluate_pairs<T: Scalar>(
    cfg: &ExperimentConfig,
    net: Option<&Network<T>>,
    pairs: &[Pair],
) -> Result<EvalReport> {
    let results: Vec<(EvalRow, Image)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let pred = predict_image(net, &p.x, cfg)?;
            let peak = p.y.max();
            let row = EvalRow {
                index: i,
                peak,
                pred: MetricReport::with_peak(&pred, &p.y, peak)?,
                input: MetricReport::with_peak(&p.x, &p.y, peak)?,
            };
            Ok((row, pred))
        })
        .collect::<Result<_>>()?;
    let (rows, predictions) = results.into_iter().unzip();
    Ok(EvalReport { rows, predictions })
}

pub fn write_csv(path: &Path, cfg: &ExperimentConfig, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVAL_COLUMNS)?;
    let lead = [
        cfg.problem.to_string(),
        cfg.bank_label().to_string(),
        cfg.level.to_string(),
    ];
    let record = |image: String, peak: f64, p: &MetricReport, x: &MetricReport| {
        let mut r: Vec<String> = lead.to_vec();
        r.push(image);
        r.extend(
            [peak, p.mse, p.psnr, p.ssim, x.mse, x.psnr, x.ssim]
                .iter()
                .map(|&v| format_value(v)),
        );
        r
    };
    for row in &report.rows {
        w.write_record(record(row.index.to_string(), row.peak, &row.pred, &row.input))?;
    }
    let mean_peak =
        report.rows.iter().map(|r| r.peak).sum::<f64>() / report.rows.len().max(1) as f64;
    w.write_record(record(
        "mean".into(),
        mean_peak,
        &report.mean_pred(),
        &report.mean_input(),
    ))?;
    w.flush()?;
    Ok(())
}

/// Writes `test_<i>_{input,pred,label}.pgm`, each scaled to the label peak.
pub fn write_images(dir: &Path, pairs: &[Pair], report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    for ((p, row), pred) in pairs.iter().zip(&report.rows).zip(&report.predictions) {
        let i = row.index;
        pgm::write_pgm16(&dir.join(format!("test_{i}_input.pgm")), &p.x, row.peak)?;
        pgm::write_pgm16(&dir.join(format!("test_{i}_pred.pgm")), pred, row.peak)?;
        pgm::write_pgm16(&dir.join(format!("test_{i}_label.pgm")), &p.y, row.peak)?;
    }
    Ok(())
}

fn load_checked<T: Scalar>(cfg: &ExperimentConfig) -> Result<Network<T>> {
    let dir = cfg.output_dir.join(CHECKPOINT_DIR);
    let (net, header) = checkpoint::load::<T>(&dir)?;
    let want = cfg.network_spec();
    if header.spec != want || header.bank != cfg.bank_label() {
        return Err(Error::Consistency(format!(
            "checkpoint in {} was trained for bank={} {:?}, config asks for bank={} {:?}",
            dir.display(),
            header.bank,
            header.spec,
            cfg.bank_label(),
            want
        )));
    }
    Ok(net)
}

fn evaluate_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    passthrough: bool,
) -> Result<EvalReport> {
    let net = if passthrough {
        None
    } else {
        Some(load_checked::<T>(cfg)?)
    };
    evaluate_pairs(cfg, net.as_ref(), &ds.test)
}

/// The `eval` command. With `passthrough` the network is replaced by the
/// identity (a debugging baseline that needs no checkpoint).
pub fn evaluate(cfg: &ExperimentConfig, passthrough: bool) -> Result<EvalReport> {
    cfg.validate()?;
    let ds = Dataset::load(&cfg.output_dir)?;
    ds.check_matches(cfg)?;
    let report = match cfg.precision {
        Precision::F32 => evaluate_typed::<f32>(cfg, &ds, passthrough)?,
        Precision::F64 => evaluate_typed::<f64>(cfg, &ds, passthrough)?,
    };
    write_csv(&cfg.output_dir.join(EVAL_CSV), cfg, &report)?;
    write_images(&cfg.output_dir.join(IMAGE_DIR), &ds.test, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::BankName;
    use crate::metrics::psnr;
    use crate::pipeline::config::Problem;
    use crate::pipeline::dataset::generate;

    fn small(level: usize) -> ExperimentConfig {
        ExperimentConfig {
            problem: Problem::Mri,
            level,
            bank: BankName::Pl,
            image_side: 32,
            n_train: 2,
            n_test: 3,
            n_levels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn passthrough_scores_the_raw_input() {
        let cfg = small(0);
        let ds = generate(&cfg).unwrap();
        let r = evaluate_pairs::<f32>(&cfg, None, &ds.test).unwrap();
        for (row, p) in r.rows.iter().zip(&ds.test) {
            assert_eq!(row.pred.psnr, psnr(&p.x, &p.y, p.y.max()).unwrap());
            assert_eq!(row.pred, row.input);
        }
    }

    #[test]
    fn decomposition_round_trip_leaves_metrics_unchanged() {
        let direct = small(0);
        let ds = generate(&direct).unwrap();
        let a = evaluate_pairs::<f64>(&direct, None, &ds.test).unwrap();
        for level in [1, 2] {
            let b = evaluate_pairs::<f64>(&small(level), None, &ds.test).unwrap();
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                assert!((ra.pred.psnr - rb.pred.psnr).abs() < 1e-8);
                assert!((ra.pred.ssim - rb.pred.ssim).abs() < 1e-8);
                assert!((ra.pred.mse - rb.pred.mse).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn csv_has_every_column_and_a_mean_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(1);
        let ds = generate(&cfg).unwrap();
        let r = evaluate_pairs::<f32>(&cfg, None, &ds.test).unwrap();
        let path = dir.path().join("e.csv");
        write_csv(&path, &cfg, &r).unwrap();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        let headers: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(headers, EVAL_COLUMNS);
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 4);
        assert_eq!(&recs[3][3], "mean");
        for rec in &recs {
            for col in 5..8 {
                assert!(!rec[col].is_empty());
            }
        }
        write_images(&dir.path().join("img"), &ds.test, &r).unwrap();
        assert!(dir.path().join("img/test_2_label.pgm").exists());
    }
}
