use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tempfair_cli::commands::{cmd_epoch, cmd_learn, cmd_oracle, cmd_oracle_agreement, cmd_roc, Outcome};
use tempfair_cli::config::{OracleMethod, RunConfig, SettingKind};
use tempfair_cli::verify::{Suite, SuiteOptions, CRITERIA};
use tempfair_cli::CliError;

/// Temporally fair scheduling: threshold learning, oracles and convergence-rate experiments.
#[derive(Parser)]
#[command(name = "tempfair", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config, or an output JSON/CSV whose embedded config is replayed.
    #[arg(long, global = true, env = "TEMPFAIR_CONFIG")]
    config: Option<PathBuf>,

    #[arg(long, global = true, env = "TEMPFAIR_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true, env = "TEMPFAIR_THREADS")]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "TEMPFAIR_OUT")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, env = "TEMPFAIR_SETTING")]
    setting: Option<SettingKind>,

    /// Write the per-slot trace (learn only; large).
    #[arg(long, global = true, env = "TEMPFAIR_TRACE")]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the threshold learner and write its trajectory.
    Learn {
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Compute (or fetch from the cache) the reference thresholds and U*.
    Oracle {
        #[arg(long, value_enum)]
        method: Option<OracleMethod>,
        /// Compute both methods and check that they agree.
        #[arg(long, conflicts_with = "method")]
        agreement: bool,
    },
    /// Rate-of-convergence experiment against a reference.
    Roc {
        /// Use this reference instead of the cached one for the config.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Epoch scheduler (greedy / frozen-estimate phases).
    Epoch {
        #[arg(long)]
        base: Option<u64>,
        #[arg(long)]
        alpha_star: Option<f64>,
        #[arg(long)]
        epochs: Option<u32>,
    },
    /// Run the acceptance suite.
    Verify {
        /// 100 RoC replications and flatness factor 2 instead of 20 and 2.5.
        #[arg(long, env = "TEMPFAIR_FULL")]
        full: bool,
        /// Run only these criteria.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    if let Command::Verify { full, only } = &cli.command {
        return verify(*full, only, cli.seed);
    }

    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
        cfg.reference_cache = None;
    }
    if let Some(setting) = cli.setting {
        if setting != cfg.setting {
            // setting-dependent defaults must be re-derived
            cfg.setting = setting;
            cfg.mode = None;
            cfg.demands.w = None;
        }
    }
    match cli.command {
        Command::Learn { horizon } => {
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            cmd_learn(&cfg.resolve()?, cli.trace)
        }
        Command::Oracle { method, agreement } => {
            let cfg = cfg.resolve()?;
            if agreement {
                cmd_oracle_agreement(&cfg)
            } else {
                cmd_oracle(&cfg, method.unwrap_or(cfg.oracle.method))
            }
        }
        Command::Roc { reference, reps, horizon } => {
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(h) = horizon {
                cfg.roc.horizon = h;
            }
            cmd_roc(&cfg.resolve()?, reference.as_deref())
        }
        Command::Epoch { base, alpha_star, epochs } => {
            if let Some(m) = base {
                cfg.epoch.base = m;
            }
            if let Some(a) = alpha_star {
                cfg.epoch.alpha_star = a;
            }
            if let Some(k) = epochs {
                cfg.epoch.epochs = k;
            }
            cmd_epoch(&cfg.resolve()?)
        }
        Command::Verify { .. } => unreachable!("handled above"),
    }
}

fn verify(full: bool, only: &[u8], seed: Option<u64>) -> Result<Outcome, CliError> {
    let mut opts = SuiteOptions { full, ..SuiteOptions::default() };
    if let Some(seed) = seed {
        opts.seed = seed;
    }
    let suite = Suite::new(opts);
    let ids: Vec<u8> = if only.is_empty() { CRITERIA.to_vec() } else { only.to_vec() };
    let mut failed = Vec::new();
    for id in ids {
        let result = suite.run(id);
        println!("{result}");
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(Outcome { files: Vec::new(), message: "all selected criteria passed".into() })
    } else {
        Err(CliError::Acceptance(format!("criteria {failed:?} failed")))
    }
}
