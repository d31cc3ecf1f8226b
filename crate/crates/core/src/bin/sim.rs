use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hetnet_handover::controller::Algorithm;
use hetnet_handover::esn::{build_reservoir, nrmse, EsnConfig, Normalizer};
use hetnet_handover::fahp::{Attribute, FahpConfig, PossibilityRule, Service};
use hetnet_handover::harness::{export, preset, run, Scenario};
use hetnet_handover::mobility::{ingest_trajectory, Position};

#[derive(Parser)]
#[command(name = "sim", about = "Vertical handover simulator for heterogeneous wireless networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Extent,
    PaperLiteral,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write metrics, traces and events.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "fahp")]
        algorithm: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the attribute weights of a service (or all services).
    Weights {
        service: String,
        #[arg(long, value_enum, default_value = "extent")]
        rule: Rule,
        /// Alternative FAHP config file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a location predictor on the head of each trajectory and print
    /// the held-out one-step NRMSE.
    Predict {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        period: f64,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a built-in scenario; the scenario file is written next to the outputs.
    Preset {
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "fahp")]
        algorithm: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run_scenario(mut scenario: Scenario, algorithm: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let algorithm: Algorithm = algorithm.parse()?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let m = run(&scenario, algorithm)?;
    export(&m, out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} {} seed {}: handovers {} (completed {}, failed {}), seamless {:.3}, suppressed {}, delivered {}/{} bytes",
        scenario.name,
        algorithm,
        scenario.seed,
        m.handover_count,
        m.handovers_completed,
        m.handovers_failed,
        m.seamless_ratio,
        m.suppression_count,
        m.delivered_bytes,
        m.submitted_bytes
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, algorithm, seed, out } => {
            let s = Scenario::from_path(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            run_scenario(s, &algorithm, seed, &out)
        }
        Command::Preset { name, out, algorithm, seed } => {
            let mut s = preset(&name)?;
            if let Some(v) = seed {
                s.seed = v;
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("scenario.toml"), s.to_toml()?)?;
            run_scenario(s, &algorithm, None, &out)
        }
        Command::Weights { service, rule, config } => {
            let cfg = match config {
                Some(p) => FahpConfig::from_path(&p)?,
                None => FahpConfig::builtin()?,
            };
            let rule = match rule {
                Rule::Extent => PossibilityRule::Extent,
                Rule::PaperLiteral => PossibilityRule::PaperLiteral,
            };
            let weights = cfg.weights(rule)?;
            let services: Vec<Service> = if service == "all" {
                Service::ALL.to_vec()
            } else {
                vec![service.parse().map_err(anyhow::Error::msg)?]
            };
            for s in services {
                let w = weights[s.index()].as_slice();
                let cells: Vec<String> = Attribute::ALL.iter().map(|a| format!("{}={:.4}", a.label().to_lowercase().replace(' ', "_"), w[a.index()])).collect();
                println!("{} {}", s.as_str(), cells.join(" "));
            }
            Ok(())
        }
        Command::Predict { trajectory, period, train_fraction, seed } => {
            if !(0.0 < train_fraction && train_fraction < 1.0) {
                bail!("train_fraction must lie in (0, 1)");
            }
            let file = File::open(&trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
            let users = ingest_trajectory(file, period)?;
            let config = EsnConfig { seed, ..EsnConfig::default() };
            let base = build_reservoir(&config)?;
            let mut scored = 0;
            for (uid, traj) in &users {
                let path: Vec<Position> = traj.fixes().iter().map(|f| f.position()).collect();
                let split = (path.len() as f64 * train_fraction).round() as usize;
                if split <= config.n_in + config.n_out || split >= path.len() {
                    println!("user {uid}: too few fixes ({})", path.len());
                    continue;
                }
                let mut model = base.clone();
                model.fit(&[path[..split].to_vec()], Normalizer::from_points(&path))?;
                let pred = model.rollout(&path, split)?;
                match nrmse(&pred, &path[split..]) {
                    Ok(v) => println!("user {uid}: nrmse {v:.4} over {} fixes", pred.len()),
                    Err(e) => println!("user {uid}: {e}"),
                }
                scored += 1;
            }
            if scored == 0 {
                bail!("no trajectory long enough to evaluate");
            }
            Ok(())
        }
    }
}
