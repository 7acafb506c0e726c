//! `lpca`: local PCA estimation from the command line.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lpca::{ErrorClass, LpcaError, Result};

use crate::config::{Command, Params};

#[derive(Parser)]
#[command(name = "lpca", version, about = "Local PCA for nonlinear factor models")]
struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit local PCA to a p × n CSV panel (rows are features, columns units).
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// Also fit the global PCA baseline.
        #[arg(long)]
        gpca: Option<String>,
        /// Largest factor count tried by the global baseline.
        #[arg(long)]
        kmax: Option<String>,
        /// Report the latent-dimension diagnostic with this eigenvalue gap ratio.
        #[arg(long)]
        latent_gap: Option<String>,
    },
    /// Local PCA after removing the effect of observed regressors.
    Covadjust {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated regressor CSV files, each shaped like the input.
        #[arg(long)]
        covariates: Option<String>,
    },
    /// Counterfactual path for one treated unit after period p0.
    Synth {
        #[command(flatten)]
        data: DataArgs,
        /// Treated unit: 1-based column number or header label.
        #[arg(long)]
        treated: Option<String>,
        /// Number of pre-treatment periods.
        #[arg(long)]
        p0: Option<String>,
        /// Level translation: additive or multiplicative.
        #[arg(long)]
        mode: Option<String>,
        /// Starting level for the level table.
        #[arg(long)]
        initial_level: Option<String>,
    },
    /// Monte Carlo comparison of local and global PCA.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Data-generating model: 1, 2 or 3.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        reps: Option<String>,
        /// K = round(c · n^(2/3)).
        #[arg(long)]
        c: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        distance: Option<String>,
        /// Share of rows used for matching.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        kmax: Option<String>,
        #[arg(long)]
        gpca: Option<String>,
        /// `model` or a Gaussian noise standard deviation.
        #[arg(long)]
        noise: Option<String>,
    },
    /// Re-run a previous run from its manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Options shared by the commands that read a data panel.
#[derive(Args)]
struct DataArgs {
    /// key=value config file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Input CSV panel.
    #[arg(long)]
    input: Option<String>,
    /// The first CSV line holds unit labels.
    #[arg(long)]
    header: Option<String>,
    #[arg(long)]
    missing_token: Option<String>,
    /// Neighborhood size: an integer, or c:<const> for round(c · n^(2/3)).
    #[arg(long)]
    k: Option<String>,
    /// euclidean, pseudo-max, average or weighted:<weights.csv>.
    #[arg(long)]
    distance: Option<String>,
    /// fixed:<d>, ratio:<dmax>:loglogk or ratio:<dmax>:<threshold>.
    #[arg(long)]
    rule: Option<String>,
    /// Row fractions for matching, PCA and (covadjust) final fit.
    #[arg(long)]
    split: Option<String>,
    /// contiguous or random.
    #[arg(long)]
    split_mode: Option<String>,
    /// Use the leading rows for matching and the rest for PCA.
    #[arg(long)]
    match_rows: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl DataArgs {
    fn overrides(self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("input", self.input),
            ("header", self.header),
            ("missing_token", self.missing_token),
            ("k", self.k),
            ("distance", self.distance),
            ("rule", self.rule),
            ("split", self.split),
            ("split_mode", self.split_mode),
            ("match_rows", self.match_rows),
            ("seed", self.seed),
        ]
    }
}

/// Resolves the command line into parameters and an output directory.
fn resolve(cmd: Cmd) -> Result<(Params, PathBuf)> {
    let with_data = |command, data: DataArgs, extra: Vec<(&'static str, Option<String>)>| {
        let (config, out) = (data.config.clone(), data.out.clone());
        let mut overrides = data.overrides();
        overrides.extend(extra);
        Params::resolve(command, config.as_deref(), &overrides).map(|p| (p, out))
    };
    match cmd {
        Cmd::Estimate { data, gpca, kmax, latent_gap } => with_data(
            Command::Estimate,
            data,
            vec![("gpca", gpca), ("kmax", kmax), ("latent_gap", latent_gap)],
        ),
        Cmd::Covadjust { data, covariates } => {
            with_data(Command::Covadjust, data, vec![("covariates", covariates)])
        }
        Cmd::Synth { data, treated, p0, mode, initial_level } => with_data(
            Command::Synth,
            data,
            vec![
                ("treated", treated),
                ("p0", p0),
                ("mode", mode),
                ("initial_level", initial_level),
            ],
        ),
        Cmd::Simulate {
            config,
            out,
            model,
            n,
            p,
            reps,
            c,
            seed,
            distance,
            split,
            rule,
            kmax,
            gpca,
            noise,
        } => {
            let overrides = [
                ("model", model),
                ("n", n),
                ("p", p),
                ("reps", reps),
                ("c", c),
                ("seed", seed),
                ("distance", distance),
                ("split", split),
                ("rule", rule),
                ("kmax", kmax),
                ("gpca", gpca),
                ("noise", noise),
            ];
            Params::resolve(Command::Simulate, config.as_deref(), &overrides).map(|p| (p, out))
        }
        Cmd::Replay { manifest, out } => {
            let (params, version) = Params::from_manifest(&manifest)?;
            if version != env!("CARGO_PKG_VERSION") {
                eprintln!(
                    "lpca: warning: manifest written by version {version}, running {}",
                    env!("CARGO_PKG_VERSION")
                );
            }
            let out = out.unwrap_or_else(|| {
                manifest
                    .parent()
                    .filter(|d| !d.as_os_str().is_empty())
                    .unwrap_or(Path::new("."))
                    .to_path_buf()
            });
            Ok((params, out))
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn report(err: &LpcaError) -> ExitCode {
    let class = err.class();
    let code = exit_code(class);
    let class_name = match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    };
    eprintln!("lpca: error: {err}");
    let record = serde_json::json!({
        "error": {
            "class": class_name,
            "exit_code": code,
            "message": err.to_string(),
        }
    });
    eprintln!("{record}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return report(&LpcaError::Config("invalid command line".into()));
        }
    };
    let pool = match cli.threads {
        Some(0) => return report(&LpcaError::Config("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(pool) => pool,
        Err(e) => return report(&LpcaError::Config(format!("thread pool: {e}"))),
    };
    let outcome = resolve(cli.command).and_then(|(params, out)| {
        pool.install(|| commands::run(&params, &out))
    });
    match outcome {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}
