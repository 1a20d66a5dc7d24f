//! Experiment configuration: a plain `key = value` file with `#` comments,
//! overridable from the command line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filterbank::BankName;
use crate::nn::{ChannelGrowth, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Mri,
    Ct,
}

impl Problem {
    pub fn as_str(self) -> &'static str {
        match self {
            Problem::Mri => "mri",
            Problem::Ct => "ct",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mri" => Ok(Problem::Mri),
            "ct" => Ok(Problem::Ct),
            other => Err(Error::config(format!("unknown problem '{other}' (expected mri or ct)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::config(format!("unknown precision '{other}' (expected f32 or f64)"))),
        }
    }
}

/// One experiment. `level = 0` trains directly on images and ignores `bank`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub bank: BankName,
    pub level: usize,
    pub image_side: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub base_depth: usize,
    pub n_levels: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub growth: ChannelGrowth,
    pub mri_factor: usize,
    /// Centred low-frequency lines; `None` scales 12 lines at side 256.
    pub mri_low: Option<usize>,
    pub ct_views: usize,
    pub ct_factor: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub bench_levels: Vec<usize>,
    pub bench_banks: Vec<BankName>,
    pub bench_depths: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: Problem::Mri,
            bank: BankName::Haar,
            level: 0,
            image_side: 64,
            n_train: 100,
            n_test: 10,
            base_depth: 16,
            n_levels: 3,
            lr: 1e-6,
            epochs: 5,
            batch_size: 4,
            seed: 0,
            output_dir: PathBuf::from("out"),
            precision: Precision::F32,
            growth: ChannelGrowth::Constant,
            mri_factor: 4,
            mri_low: None,
            ct_views: 180,
            ct_factor: 6,
            max_steps: None,
            bench_levels: vec![0, 1, 2],
            bench_banks: vec![BankName::Haar],
            bench_depths: vec![16],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub const KEYS: &[&str] = &[
    "problem",
    "bank",
    "level",
    "image_side",
    "n_train",
    "n_test",
    "base_depth",
    "n_levels",
    "lr",
    "epochs",
    "batch_size",
    "seed",
    "output_dir",
    "precision",
    "growth",
    "mri_factor",
    "mri_low",
    "ct_views",
    "ct_factor",
    "max_steps",
    "bench_levels",
    "bench_banks",
    "bench_depths",
];

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "problem" => self.problem = v.parse()?,
            "bank" => {
                // "none" is what level-0 configs record
                if v != "none" {
                    self.bank = v.parse()?;
                }
            }
            "level" => self.level = parse(key, v)?,
            "image_side" => self.image_side = parse(key, v)?,
            "n_train" => self.n_train = parse(key, v)?,
            "n_test" => self.n_test = parse(key, v)?,
            "base_depth" => self.base_depth = parse(key, v)?,
            "n_levels" => self.n_levels = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "precision" => self.precision = v.parse()?,
            "growth" => self.growth = v.parse()?,
            "mri_factor" => self.mri_factor = parse(key, v)?,
            "mri_low" => self.mri_low = if v == "auto" { None } else { Some(parse(key, v)?) },
            "ct_views" => self.ct_views = parse(key, v)?,
            "ct_factor" => self.ct_factor = parse(key, v)?,
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "bench_levels" => self.bench_levels = parse_list(key, v)?,
            "bench_banks" => self.bench_banks = parse_list(key, v)?,
            "bench_depths" => self.bench_depths = parse_list(key, v)?,
            _ => {
                return Err(Error::config(format!(
                    "unknown key '{key}' (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{assignment}' is not key=value")))?;
        self.set(k, v)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value', got '{raw}'", i + 1))
            })?;
            cfg.set(k, v)
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// Low-frequency line count actually used.
    pub fn mri_low_lines(&self) -> usize {
        self.mri_low
            .unwrap_or_else(|| ((12 * self.image_side) as f64 / 256.0).round() as usize)
    }

    /// Bank label for tables: `none` for direct learning.
    pub fn bank_label(&self) -> &'static str {
        if self.level == 0 {
            "none"
        } else {
            self.bank.as_str()
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut spec = NetworkSpec::for_level(
            self.bank.filter_count(),
            self.level,
            self.image_side,
            self.base_depth,
            self.n_levels,
        );
        spec.growth = self.growth;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_side", self.image_side),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("base_depth", self.base_depth),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("mri_factor", self.mri_factor),
            ("ct_views", self.ct_views),
            ("ct_factor", self.ct_factor),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        if self.level > 2 {
            return Err(Error::config(format!("level must be 0, 1 or 2, got {}", self.level)));
        }
        if self.level > self.n_levels {
            return Err(Error::config(format!(
                "level {} needs at least {} network levels, got {}",
                self.level, self.level, self.n_levels
            )));
        }
        let div = 1usize << self.n_levels;
        if self.image_side % div != 0 {
            return Err(Error::config(format!(
                "image_side {} must be divisible by 2^(level + network poolings) = {div}",
                self.image_side
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.mri_low_lines() > self.image_side {
            return Err(Error::config("mri_low exceeds the image side"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps must be positive"));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("problem", self.problem.to_string());
        put("bank", self.bank_label().to_string());
        put("level", self.level.to_string());
        put("image_side", self.image_side.to_string());
        put("n_train", self.n_train.to_string());
        put("n_test", self.n_test.to_string());
        put("base_depth", self.base_depth.to_string());
        put("n_levels", self.n_levels.to_string());
        put("lr", format!("{:e}", self.lr));
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("precision", self.precision.to_string());
        put("growth", self.growth.to_string());
        put("mri_factor", self.mri_factor.to_string());
        put(
            "mri_low",
            self.mri_low.map_or("auto".into(), |v| v.to_string()),
        );
        put("ct_views", self.ct_views.to_string());
        put("ct_factor", self.ct_factor.to_string());
        put(
            "max_steps",
            self.max_steps.map_or("none".into(), |v| v.to_string()),
        );
        put("bench_levels", join(&self.bench_levels));
        put("bench_banks", join(&self.bench_banks));
        put("bench_depths", join(&self.bench_depths));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let cfg = ExperimentConfig::parse_text(
            "# demo\nproblem = ct\nbank = pl   # smooth bank\nlevel=2\n\nimage_side = 128\nlr = 1e-3\n",
        )
        .unwrap();
        assert_eq!(cfg.problem, Problem::Ct);
        assert_eq!(cfg.bank, BankName::Pl);
        assert_eq!(cfg.level, 2);
        assert_eq!(cfg.image_side, 128);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.n_train, 100);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("level", "1").unwrap();
        cfg.set("max_steps", "2000").unwrap();
        cfg.set("bench_banks", "haar, pl").unwrap();
        cfg.set("mri_low", "6").unwrap();
        let back = ExperimentConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_are_config_errors() {
        for text in ["nonsense", "problem = pet", "level = x", "colour = red"] {
            assert!(matches!(ExperimentConfig::parse_text(text), Err(Error::Config(_))), "{text}");
        }
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_override("seed").is_err());
        cfg.apply_override("seed=9").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        cfg.image_side = 60;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.image_side = 64;
        cfg.level = 3;
        assert!(cfg.validate().is_err());
        cfg.level = 0;
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.image_side = 256;
        assert_eq!(cfg.mri_low_lines(), 12);
        cfg.image_side = 64;
        assert_eq!(cfg.mri_low_lines(), 3);
        assert_eq!(cfg.bank_label(), "none");
        cfg.level = 2;
        let spec = cfg.network_spec();
        assert_eq!((spec.variant, spec.in_channels, spec.image_side), (2, 16, 16));
        assert_eq!(cfg.bank_label(), "haar");
    }
}
