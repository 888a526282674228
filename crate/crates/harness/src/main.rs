use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relaygen::relay::FailureMode;
use relaygen::sta::StateArchive;
use relaygen_harness::config::{ExperimentConfig, Profile};
use relaygen_harness::manifest::{self, LoadedManifest};
use relaygen_harness::relay_cmd::{cmd_relay, RelayOptions, L_SWEEP};
use relaygen_harness::sweep::{cmd_sweep, SweepAxis, SweepOptions};
use relaygen_harness::{export, fleet, report, HarnessError};

#[derive(Parser)]
#[command(
    name = "relaygen",
    version,
    about = "Relay evaluation and self-trajectory augmentation experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the profile named in the config.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Comma-separated seeds, replacing the config's.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one fleet of agents.
    Train,
    /// Relay-evaluate test fleets against stranger fleets.
    Relay {
        /// Test fleet manifests (file or directory).
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        tests: Vec<PathBuf>,
        /// Stranger fleet manifests; defaults to the test fleets.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        strangers: Vec<PathBuf>,
        /// Evaluate L in {50, 100, 200, 500}.
        #[arg(long)]
        l_sweep: bool,
        /// Explicit horizons.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<u64>>,
        /// Extra return-below-threshold matrices.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Train and relay-evaluate one fleet per value of a setting.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, required = true, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        strangers: Vec<PathBuf>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Write labeled observations for external embedding.
    ExportStates {
        #[arg(long, conflicts_with = "archive", required_unless_present = "archive")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long, default_value_t = export::STATES_PER_AGENT)]
        per_agent: usize,
    },
    /// Render grouped tables from relay report files.
    Report {
        /// Report CSV or meta files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig, HarnessError> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path, g.profile)?;
    if let Some(seeds) = &g.seeds {
        cfg.seeds = seeds.clone();
        cfg.n_seeds = seeds.len();
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<LoadedManifest>, HarnessError> {
    paths.iter().map(|p| manifest::load(p)).collect()
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Number of failed jobs.
fn run(cli: Cli) -> Result<usize, HarnessError> {
    let g = &cli.global;
    match cli.command {
        Command::Train => {
            let cfg = load_config(g)?;
            let dir = Path::new(&cfg.out_dir).join(&cfg.name);
            let m = fleet::train_fleet(&cfg, &dir, g.jobs)?;
            println!("{}", dir.join(manifest::MANIFEST_FILE).display());
            Ok(m.failed_runs())
        }
        Command::Relay {
            tests,
            strangers,
            l_sweep,
            horizons,
            thresholds,
            no_cache,
        } => {
            let tests = load_manifests(&tests)?;
            let strangers = if strangers.is_empty() {
                tests.clone()
            } else {
                load_manifests(&strangers)?
            };
            let mut cfg = match &g.config {
                Some(_) => load_config(g)?,
                None => tests[0].config.clone(),
            };
            if l_sweep {
                cfg.relay.horizons = L_SWEEP.to_vec();
            }
            if let Some(h) = horizons {
                cfg.relay.horizons = h;
            }
            if let Some(t) = thresholds {
                cfg.relay.return_thresholds = t;
            }
            cfg.validate()?;
            let out = g
                .out
                .clone()
                .unwrap_or_else(|| Path::new(&cfg.out_dir).join("reports"));
            let opts = RelayOptions {
                configs: cfg.relay_configs(),
                seed: cfg.master_seed,
                jobs: g.jobs.max(cfg.relay.jobs),
                cache: (!no_cache).then(|| out.join("cache")),
                out,
                prefix: "relay-".into(),
            };
            let res = cmd_relay(&tests, &strangers, &opts)?;
            for r in &res.runs {
                println!("{}", report::csv_path(&r.stem).display());
                if let FailureMode::SimulatorTermination = r.config.failure_mode {
                    print!(
                        "{}",
                        std::fs::read_to_string(report::companion(&r.stem, ".txt"))
                            .unwrap_or_default()
                    );
                }
            }
            Ok(res.failures())
        }
        Command::Sweep {
            axis,
            values,
            strangers,
            no_cache,
        } => {
            let cfg = load_config(g)?;
            let out = PathBuf::from(&cfg.out_dir);
            let opts = SweepOptions {
                axis,
                values,
                jobs: g.jobs,
                cache: (!no_cache).then(|| out.join("cache")),
                out,
            };
            let res = cmd_sweep(&cfg, load_manifests(&strangers)?, &opts)?;
            print!("{}", res.table);
            Ok(res.failures)
        }
        Command::ExportStates {
            manifest: m,
            archive,
            per_agent,
        } => {
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let (name, csv) = match (m, archive) {
                (Some(p), _) => {
                    let loaded = manifest::load(&p)?;
                    (
                        format!("{}-states.csv", loaded.manifest.name),
                        export::export_manifest(&loaded, per_agent)?,
                    )
                }
                (None, Some(p)) => {
                    let bytes = std::fs::read(&p).map_err(|e| HarnessError::io(&p, e))?;
                    let stem = p
                        .file_stem()
                        .map_or("archive".into(), |s| s.to_string_lossy().into_owned());
                    (
                        format!("{stem}-states.csv"),
                        export::export_archive(&StateArchive::decode(&bytes)?)?,
                    )
                }
                (None, None) => {
                    return Err(HarnessError::Config(
                        "--manifest or --archive is required".into(),
                    ))
                }
            };
            let path = out.join(name);
            write(&path, &csv)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Report { inputs } => {
            let loaded = inputs
                .iter()
                .map(|p| report::load_input(p))
                .collect::<Result<Vec<_>, _>>()?;
            let text = report::render(&loaded)?;
            print!("{text}");
            if let Some(out) = &g.out {
                write(&out.join("report.txt"), &text)?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("error: {}", HarnessError::JobsFailed(n));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
