//! Timing sweeps over levels, banks and feature depths.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::nn::Scalar;

use super::config::{ExperimentConfig, Precision};
use super::dataset::{generate, Dataset};
use super::train::train_on;

pub const SUMMARY_CSV: &str = "bench_summary.csv";
pub const TABLE_CSV: &str = "bench_table.csv";

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "problem",
    "bank",
    "level",
    "base_depth",
    "image_side",
    "n_train",
    "epochs",
    "params",
    "steps",
    "mean_epoch_seconds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub cfg: ExperimentConfig,
    pub params: usize,
    pub steps: usize,
    pub mean_epoch_seconds: f64,
}

impl BenchRow {
    /// Column label in the pivot table, e.g. `U0` or `U2-pl`.
    pub fn variant_label(&self) -> String {
        if self.cfg.level == 0 {
            "U0".into()
        } else {
            format!("U{}-{}", self.cfg.level, self.cfg.bank)
        }
    }
}

/// Every configuration of the sweep in run order: depths, then levels, then
/// banks (level 0 runs once per depth since it ignores the bank).
pub fn matrix(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for &depth in &base.bench_depths {
        for &level in &base.bench_levels {
            let banks = if level == 0 {
                vec![base.bank]
            } else {
                base.bench_banks.clone()
            };
            for bank in banks {
                out.push(ExperimentConfig {
                    level,
                    bank,
                    base_depth: depth,
                    ..base.clone()
                });
            }
        }
    }
    out
}

fn run_one<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset) -> Result<BenchRow> {
    let (_, report) = train_on::<T>(cfg, ds)?;
    Ok(BenchRow {
        cfg: cfg.clone(),
        params: report.params,
        steps: report.steps(),
        mean_epoch_seconds: report.mean_epoch_seconds(),
    })
}

/// Runs the sweep sequentially on one shared dataset. Data generation is
/// outside every timed region.
pub fn bench_suite(base: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    let configs = matrix(base);
    for c in &configs {
        c.validate()?;
    }
    let ds = generate(base)?;
    configs
        .iter()
        .map(|cfg| match cfg.precision {
            Precision::F32 => run_one::<f32>(cfg, &ds),
            Precision::F64 => run_one::<f64>(cfg, &ds),
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        let c = &r.cfg;
        w.write_record([
            c.problem.to_string(),
            c.bank_label().to_string(),
            c.level.to_string(),
            c.base_depth.to_string(),
            c.image_side.to_string(),
            c.n_train.to_string(),
            c.epochs.to_string(),
            r.params.to_string(),
            r.steps.to_string(),
            format!("{:.6}", r.mean_epoch_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pivot of mean epoch seconds: one row per depth, one column per variant.
pub fn write_table(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut variants: Vec<String> = Vec::new();
    let mut depths: Vec<usize> = Vec::new();
    for r in rows {
        let v = r.variant_label();
        if !variants.contains(&v) {
            variants.push(v);
        }
        if !depths.contains(&r.cfg.base_depth) {
            depths.push(r.cfg.base_depth);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["base_depth".to_string()];
    header.extend(variants.iter().cloned());
    w.write_record(&header)?;
    for d in depths {
        let mut rec = vec![d.to_string()];
        for v in &variants {
            let cell = rows
                .iter()
                .find(|r| r.cfg.base_depth == d && &r.variant_label() == v)
                .map_or(String::new(), |r| format!("{:.6}", r.mean_epoch_seconds));
            rec.push(cell);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The `bench` command: sweep and write both tables to `cfg.output_dir`.
pub fn bench(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    let rows = bench_suite(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_summary(&cfg.output_dir.join(SUMMARY_CSV), &rows)?;
    write_table(&cfg.output_dir.join(TABLE_CSV), &rows)?;
    Ok(rows)
}
