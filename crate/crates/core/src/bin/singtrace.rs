use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use singtrace::harness::{
    builtin_config, run, run_suite, ChainConfig, ExperimentConfig, ModelConfig, RunOutput,
    SuiteName, IDENTITY_CHECKS,
};
use singtrace::traces::ExtendedLimitScheme;
use singtrace::triples::KernelPhase;
use singtrace::Error;

#[derive(Parser, Debug)]
#[command(
    name = "singtrace",
    version,
    about = "Spectral-triple truncations and singular-trace checks"
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug)]
struct Opts {
    /// circle | nc-torus | toy
    #[arg(long, global = true, default_value = "circle")]
    model: String,
    /// Truncation N (default 256; overrides --config)
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long, global = true)]
    band: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Phase::PlusOne)]
    kernel_phase: Phase,
    /// Builtin chain name or path to a chain JSON file
    #[arg(long, global = true)]
    chain: Option<String>,
    /// Scale of the torus volume cycle
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// Experiment config file, or the name of a builtin config
    #[arg(long, global = true)]
    config: Option<String>,
    /// Directory for report.json, report.md, timings.csv and curve data
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extended-limit scheme ratio
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Measurability residual tolerance
    #[arg(long = "tol-measure", global = true)]
    tol_measure: Option<f64>,
    /// Relative tolerance of the main comparison
    #[arg(long = "tol-main", global = true)]
    tol_main: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Phase {
    PlusOne,
    GradedSwap,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Model construction and summability diagnostics
    Model {
        #[command(subcommand)]
        cmd: ModelCmd,
    },
    /// Exact cycle test of the chain
    Cycle {
        #[command(subcommand)]
        cmd: CycleCmd,
    },
    /// Chern character with convergence record
    Chern,
    /// Eigenvalue partial sums and measurability verdict
    EigenSums,
    /// Heat trace of the cycle on the invertible double
    Heat,
    /// Dixmier log-mean of the eigenvalue sums
    Dixmier,
    /// Heat-side measurability criterion
    Measure,
    /// Reduction check on the invertible double
    Reduce,
    /// Spectral side against the Chern character
    MainTheorem,
    /// Exact algebraic identities
    IdentitySuite,
    /// Curated runs: quick or full
    Suite { name: String },
    /// Run the checks of --config
    Run,
}

#[derive(Subcommand, Debug)]
enum ModelCmd {
    Build,
}

#[derive(Subcommand, Debug)]
enum CycleCmd {
    Check,
}

fn chain_arg(s: &str) -> Result<ChainConfig, Error> {
    let path = Path::new(s);
    if path.extension().is_some_and(|e| e == "json") || path.exists() {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        Ok(ChainConfig::Inline { inline: value })
    } else {
        Ok(ChainConfig::Builtin {
            builtin: s.into(),
            kappa: None,
        })
    }
}

fn base_config(o: &Opts) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &o.config {
        Some(c) if Path::new(c).exists() => ExperimentConfig::from_file(Path::new(c))?,
        Some(c) => builtin_config(c)?,
        None => ExperimentConfig::new(
            "cli",
            ModelConfig {
                name: o.model.clone(),
                n: o.n.unwrap_or(256),
                theta: o.theta,
                p: o.p,
                band: o.band,
                kernel_phase: match o.kernel_phase {
                    Phase::PlusOne => KernelPhase::PlusOne,
                    Phase::GradedSwap => KernelPhase::GradedSwap,
                },
            },
            &[],
        ),
    };
    if o.config.is_some() {
        if let Some(n) = o.n {
            cfg.model.n = n;
        }
        if let Some(t) = o.theta {
            cfg.model.theta = Some(t);
        }
        if let Some(p) = o.p {
            cfg.model.p = Some(p);
        }
        if let Some(b) = o.band {
            cfg.model.band = Some(b);
        }
    }
    if let Some(c) = &o.chain {
        cfg.chain = Some(chain_arg(c)?);
    }
    if let Some(k) = o.kappa {
        cfg.chain = Some(ChainConfig::Builtin {
            builtin: "torus-volume".into(),
            kappa: Some(k),
        });
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(r) = o.ratio {
        cfg.scheme = ExtendedLimitScheme {
            ratio: r,
            ..cfg.scheme
        };
    }
    if let Some(t) = o.tol_measure {
        cfg.tolerances.measurability = t;
    }
    if let Some(t) = o.tol_main {
        cfg.tolerances.main_theorem = t;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<RunOutput, Error> {
    let checks: &[&str] = match &cli.verb {
        Verb::Model {
            cmd: ModelCmd::Build,
        } => &["model_build"],
        Verb::Cycle {
            cmd: CycleCmd::Check,
        } => &["is_cycle"],
        Verb::Chern => &["chern"],
        Verb::EigenSums => &["eigen_sums"],
        Verb::Heat => &["heat"],
        Verb::Dixmier => &["dixmier"],
        Verb::Measure => &["measure"],
        Verb::Reduce => &["reduce"],
        Verb::MainTheorem => &["main_theorem"],
        Verb::IdentitySuite => IDENTITY_CHECKS,
        Verb::Suite { name } => return run_suite(name.parse::<SuiteName>()?),
        Verb::Run => {
            if cli.opts.config.is_none() {
                return Err(Error::Config("`run` needs --config".into()));
            }
            &[]
        }
    };
    let mut cfg = base_config(&cli.opts)?;
    if !matches!(cli.verb, Verb::Run) {
        cfg.checks = checks.iter().map(|s| s.to_string()).collect();
    }
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("SINGTRACE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("warning: thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(out) => {
            print!("{}", out.report.markdown());
            let out_dir = cli.opts.out.clone().or_else(|| {
                base_config(&cli.opts)
                    .ok()
                    .and_then(|c| c.output.map(PathBuf::from))
            });
            if let Some(dir) = out_dir {
                if let Err(e) = out.write(&dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(3);
                }
            }
            if out.report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ (Error::Config(_) | Error::Format(_) | Error::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
