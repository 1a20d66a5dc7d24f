use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use framepool::filterbank::{self, BankName};
use framepool::metrics::format_value;
use framepool::pipeline::{bench, dataset, evaluate, train, ExperimentConfig};
use framepool::Result;

#[derive(Parser)]
#[command(name = "framepool", version, about = "Framelet-pooled learning for undersampled MRI and sparse-view CT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file with `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set level=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output (and dataset) directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        for s in &self.set {
            cfg.apply_override(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom pairs (and decomposed stacks when level ≥ 1).
    GenData(Common),
    /// Train on the dataset in the output directory.
    Train(Common),
    /// Score the trained model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Replace the network with the identity.
        #[arg(long)]
        passthrough: bool,
    },
    /// Time training across levels, banks and depths.
    Bench(Common),
    /// Print the 2-D filters of a bank.
    DumpFilters {
        #[arg(long, default_value = "haar")]
        bank: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the unitary extension principle numerically for every bank.
    VerifyUep {
        #[arg(long, default_value_t = 128)]
        grid: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: &Option<PathBuf>, name: &str, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.load()?;
            let ds = dataset::gen_dataset(&cfg)?;
            println!(
                "wrote {} train and {} test pairs ({}) to {}",
                ds.train.len(),
                ds.test.len(),
                ds.acquisition.describe(ds.side),
                cfg.output_dir.display()
            );
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let r = train::train(&cfg)?;
            println!(
                "trained {} steps, {} parameters, final loss {:e}, mean epoch {:.3} s",
                r.steps(),
                r.params,
                r.losses.last().copied().unwrap_or(f64::NAN),
                r.mean_epoch_seconds()
            );
        }
        Command::Eval {
            common,
            passthrough,
        } => {
            let cfg = common.load()?;
            let r = evaluate::evaluate(&cfg, passthrough)?;
            let m = r.mean_pred();
            println!(
                "mean over {} test images: mse={} psnr={} ssim={} (input psnr={})",
                r.rows.len(),
                format_value(m.mse),
                format_value(m.psnr),
                format_value(m.ssim),
                format_value(r.mean_input().psnr)
            );
        }
        Command::Bench(c) => {
            let cfg = c.load()?;
            for r in bench::bench(&cfg)? {
                println!(
                    "{:>8} depth {:>3}: {:.4} s/epoch, {} params",
                    r.variant_label(),
                    r.cfg.base_depth,
                    r.mean_epoch_seconds,
                    r.params
                );
            }
        }
        Command::DumpFilters { bank, out, .. } => {
            let bank = filterbank::bank_by_name(&bank)?;
            emit(&out, &format!("filters_{}.txt", bank.name()), &filterbank::format_bank(&bank))?;
        }
        Command::VerifyUep { grid, out, .. } => {
            let mut text = String::new();
            let mut ok = true;
            for name in BankName::ALL {
                let r = filterbank::verify_uep(&filterbank::build_bank(name)?, grid)?;
                ok &= r.pass;
                text.push_str(&format!(
                    "{name}: identity {:.3e}, shift {:.3e}, {}\n",
                    r.max_identity_error,
                    r.max_shift_error,
                    if r.pass { "pass" } else { "FAIL" }
                ));
            }
            emit(&out, "uep.txt", &text)?;
            if !ok {
                return Err(framepool::Error::Consistency("a bank failed the UEP check".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
