use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rp3::harness::{bounds_report, run_experiment, sweep, validate_report, CheckStatus, SimConfig};
use rp3::protocol::Algorithm;

#[derive(Parser)]
#[command(name = "rp3-sim", version, about = "Resilient projected push-pull experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all replications and write CSV, JSON and TOML outputs.
    Run(Common),
    /// Print contraction constants, step sizes, M, rho(M) and the bound curve.
    Bounds(Common),
    /// Check the topology and step-size assumptions.
    Validate(Common),
    /// Run once per value of a config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key such as `run.iterations`.
        #[arg(long)]
        param: String,
        /// Comma-separated TOML literals.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, env = "RP3_SIM_THREADS")]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    /// Extra `key=value` overrides, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Rp3,
    Ppp,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<rp3::Error> for Failure {
    fn from(e: rp3::Error) -> Self {
        match e {
            rp3::Error::Config(m) => Failure::Usage(format!("config: {m}")),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl Common {
    fn load(&self) -> Result<SimConfig, Failure> {
        if !self.config.is_file() {
            return Err(Failure::Usage(format!("config file {} not found", self.config.display())));
        }
        let mut cfg = SimConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(a) = self.algorithm {
            cfg.run.algorithm = match a {
                AlgorithmArg::Rp3 => Algorithm::Rp3,
                AlgorithmArg::Ppp => Algorithm::Ppp,
            };
        }
        for o in &self.overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            cfg = cfg.with_override(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &SimConfig) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone())
    }
}

fn print_summary(dir: &Path, s: &rp3::harness::ExperimentSummary) {
    println!("wrote {} files to {}", s.files.len(), dir.display());
    println!(
        "mean final errors: opt {:e}  cons {:e}  track {:e}",
        s.mean_final.opt, s.mean_final.cons, s.mean_final.track
    );
    if !s.bounds_written {
        println!("no bound curve for this configuration (see metadata.json)");
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let dir = common.out_dir(&cfg);
            let s = run_experiment(&cfg, &dir, common.threads)?;
            print_summary(&dir, &s);
        }
        Command::Bounds(common) => {
            let cfg = common.load()?;
            print!("{}", bounds_report(&cfg)?.render());
        }
        Command::Validate(common) => {
            let cfg = common.load()?;
            let checks = validate_report(&cfg)?;
            let mut ok = true;
            for (what, status) in &checks {
                let tag = match status {
                    CheckStatus::Pass => "ok  ",
                    CheckStatus::Fail => "FAIL",
                    CheckStatus::Note => "note",
                };
                println!("{tag} {what}");
                ok &= *status != CheckStatus::Fail;
            }
            if !ok {
                return Err(Failure::Runtime("some checks failed".into()));
            }
        }
        Command::Sweep { common, param, values } => {
            let cfg = common.load()?;
            let dir = common.out_dir(&cfg);
            for (v, s) in values.iter().zip(sweep(&cfg, &param, &values, &dir, common.threads)?) {
                println!("{param} = {v}");
                print_summary(&s.out_dir, &s);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
