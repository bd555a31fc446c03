//! `ddafl`: train, test and compare vehicle-selection schemes for
//! asynchronous federated learning, writing metrics CSVs and checkpoints.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ddafl::config::SimConfig;
use ddafl::data::AttackKind;
use ddafl::ddpg::{Agent, AgentSettings, CheckpointManifest};
use ddafl::experiment::{
    attack_sweep, final_slots, rows_for, run_experiment, run_id, test_agent, train_agent,
    ExperimentResult, Scheme,
};
use ddafl::metrics::write_csv;
use ddafl::scenario::Scenario;

#[derive(Debug, Parser)]
#[command(
    name = "ddafl",
    version,
    about = "DRL-driven vehicle selection for asynchronous federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines; unset keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config file.
    #[arg(long, env = "SIM_SEED")]
    seed: Option<u64>,

    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory for metrics and checkpoints.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                SimConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => SimConfig::default(),
        };
        for kv in &self.overrides {
            let Some((key, value)) = kv.split_once('=') else {
                bail!("override `{kv}` is not of the form key=value");
            };
            cfg.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a selection agent and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ddafl")]
        scheme: Scheme,
        /// Checkpoint directory; defaults to `<out>/<run id>/checkpoint`.
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
    },
    /// Run the testing stage with a saved agent.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ddafl")]
        scheme: Scheme,
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
    },
    /// Run the synchronous or plain asynchronous baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Baseline to run; both when omitted.
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Train and test the full scheme next to its ablations.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
    /// Defended versus undefended error over attacked-vehicle fractions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "class_flip")]
        attack: AttackKind,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6")]
        fractions: Vec<f64>,
    },
}

fn cell_dir(out: &Path, scheme: Scheme, cfg: &SimConfig) -> PathBuf {
    out.join(run_id(scheme, cfg))
}

/// Writes the metrics CSV and the effective config for one cell.
fn write_cell(dir: &Path, cfg: &SimConfig, result: &ExperimentResult) -> Result<PathBuf> {
    let csv = dir.join("metrics.csv");
    write_csv(&result.rows, &csv)?;
    cfg.save(&dir.join("config.txt"))?;
    Ok(csv)
}

fn summarize(result: &ExperimentResult, csv: &Path) {
    println!(
        "{:<18} final_loss {:.4} final_error {:.4} -> {}",
        result.scheme.as_str(),
        result.final_loss(),
        result.final_error(),
        csv.display()
    );
}

fn train(common: &Common, scheme: Scheme, checkpoint: Option<PathBuf>) -> Result<()> {
    if !scheme.uses_agent() {
        bail!("scheme `{scheme}` has no agent to train");
    }
    let cfg = common.config()?;
    let scenario = Scenario::new(&cfg)?;
    let report = train_agent(&scenario, scheme)?;
    let dir = cell_dir(&common.out, scheme, &cfg);
    let rows = rows_for(scheme, &cfg, 0.0, &report.slots);
    write_csv(&rows, &dir.join("train.csv"))?;
    cfg.save(&dir.join("config.txt"))?;
    let ckpt = checkpoint.unwrap_or_else(|| dir.join("checkpoint"));
    let manifest = CheckpointManifest {
        episodes: cfg.train_episodes,
        config_hash: cfg.hash(),
        rng_digest: report.rng_digest.clone(),
        num_vehicles: cfg.num_vehicles,
    };
    report.agent.save(&ckpt, &manifest)?;
    let n = report.episode_rewards.len();
    let window = (n / 10).max(1);
    let head: f64 = report.episode_rewards[..window].iter().sum::<f64>() / window as f64;
    let tail: f64 = report.episode_rewards[n - window..].iter().sum::<f64>() / window as f64;
    println!("trained {scheme} for {n} episodes: mean reward first {window} {head:.3}, last {window} {tail:.3}");
    println!(
        "checkpoint {} (rng digest {})",
        ckpt.display(),
        report.rng_digest
    );
    Ok(())
}

fn test(common: &Common, scheme: Scheme, checkpoint: &Path) -> Result<()> {
    let cfg = common.config()?;
    let (agent, manifest) = Agent::load(checkpoint, AgentSettings::from_config(&cfg))
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    if manifest.config_hash != cfg.hash() {
        eprintln!(
            "warning: checkpoint was trained under config {} but testing under {}",
            manifest.config_hash,
            cfg.hash()
        );
    }
    let scenario = Scenario::new(&cfg)?;
    let trace = test_agent(&scenario, scheme, &agent)?;
    let rows = rows_for(scheme, &cfg, scenario.attacked_fraction(), &trace.slots);
    let dir = cell_dir(&common.out, scheme, &cfg);
    let csv = dir.join("test.csv");
    write_csv(&rows, &csv)?;
    cfg.save(&dir.join("config.txt"))?;
    let finals: Vec<_> = final_slots(&trace.slots).collect();
    let loss = finals.iter().map(|s| s.outcome.avg_loss).sum::<f64>() / finals.len() as f64;
    let error = finals.iter().map(|s| s.eval.error_rate).sum::<f64>() / finals.len() as f64;
    println!(
        "{scheme} final_loss {loss:.4} final_error {error:.4} -> {}",
        csv.display()
    );
    println!("admission rates {:?}", trace.admission_rates());
    Ok(())
}

fn run_cells(common: &Common, schemes: &[Scheme]) -> Result<()> {
    let cfg = common.config()?;
    for &scheme in schemes {
        let result = run_experiment(&cfg, scheme)?;
        let csv = write_cell(&cell_dir(&common.out, scheme, &cfg), &cfg, &result)?;
        summarize(&result, &csv);
    }
    Ok(())
}

fn sweep(common: &Common, attack: AttackKind, fractions: &[f64]) -> Result<()> {
    if attack == AttackKind::None {
        bail!("sweep needs an attack (class_flip or data_flip)");
    }
    let cfg = common.config()?;
    let result = attack_sweep(&cfg, attack, fractions)?;
    let csv = common
        .out
        .join(format!("sweep-{attack}-s{}-{}", cfg.seed, cfg.hash()))
        .join("metrics.csv");
    write_csv(&result.rows, &csv)?;
    if let Some(dir) = csv.parent() {
        cfg.save(&dir.join("config.txt"))?;
    }
    println!("fraction  defended_error  undefended_error");
    for p in &result.points {
        println!(
            "{:>8.2}  {:>14.4}  {:>16.4}",
            p.fraction, p.defended_error, p.undefended_error
        );
    }
    println!("-> {}", csv.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            scheme,
            checkpoint,
        } => train(&common, scheme, checkpoint),
        Command::Test {
            common,
            scheme,
            checkpoint,
        } => test(&common, scheme, &checkpoint),
        Command::Baseline { common, scheme } => {
            let schemes = match scheme {
                Some(s) if s.uses_agent() => {
                    bail!("`{s}` is not a baseline; use plain_afl or sync_fl")
                }
                Some(s) => vec![s],
                None => vec![Scheme::PlainAfl, Scheme::SyncFl],
            };
            run_cells(&common, &schemes)
        }
        Command::Ablation { common } => run_cells(
            &common,
            &[Scheme::Ddafl, Scheme::DdaflNoLt, Scheme::DdaflNoCt],
        ),
        Command::Sweep {
            common,
            attack,
            fractions,
        } => sweep(&common, attack, &fractions),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ddafl: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
