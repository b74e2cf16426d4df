//! `picbalance`: runs one experiment and writes its CSVs and partition
//! snapshots to the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use picbalance::config::{ConfigBuilder, RunConfig};
use picbalance::harness::Simulation;
use picbalance::report::{emit_energy, emit_metrics, snapshot_due, snapshot_name};

#[derive(Debug, Parser)]
#[command(name = "picbalance", version, about = "2D PIC load-balancing experiment on virtual ranks")]
struct Cli {
    /// Config file of `key = value` lines. Omitted keys take defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of supersteps (overrides `n_steps`).
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// static_uniform, static_urb, rcb, urb, urb_limited or orbh.
    #[arg(long, value_name = "NAME")]
    strategy: Option<String>,
    /// eulerian or lagrangian.
    #[arg(long, value_name = "NAME")]
    policy: Option<String>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig, String> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut b = ConfigBuilder::from_text(&text).map_err(|e| e.to_string())?;
    let overrides = [
        ("seed", cli.seed.map(|s| s.to_string())),
        ("n_steps", cli.steps.map(|s| s.to_string())),
        ("strategy", cli.strategy.clone()),
        ("policy", cli.policy.clone()),
        ("output_dir", cli.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            b.set(key, &v).map_err(|e| e.to_string())?;
        }
    }
    b.build().map_err(|e| e.to_string())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn execute(cli: &Cli) -> Result<(), String> {
    let cfg = resolve(cli)?;
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    write(&dir, "config.resolved", &cfg.to_resolved())?;

    let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
    write(&dir, &snapshot_name(0), &sim.partition_map().to_text())?;
    log::info!(
        "{} particles, {} ranks, strategy {}, policy {}, {} steps",
        cfg.n_particles,
        cfg.ranks,
        cfg.strategy,
        cfg.policy,
        cfg.n_steps
    );

    let mut series = Vec::with_capacity(cfg.n_steps);
    for _ in 0..cfg.n_steps {
        let m = sim.superstep().map_err(|e| e.to_string())?;
        if snapshot_due(m.step, cfg.snapshot_every) {
            write(&dir, &snapshot_name(m.step), &sim.partition_map().to_text())?;
        }
        if m.step % 100 == 0 {
            log::info!("step {}: imbalance {:.3}, field energy {:.4e}", m.step, m.imbalance, m.field_energy);
        }
        series.push(m);
    }
    write(&dir, "metrics.csv", &emit_metrics(&series))?;
    write(&dir, "energy.csv", &emit_energy(&series))?;

    let unconverged = series.iter().filter(|m| !m.solver_converged).count();
    if unconverged > 0 {
        log::warn!(
            "field solve stopped at the iteration cap on {unconverged} of {} steps (see energy.csv)",
            series.len()
        );
    }
    log::info!("wrote results to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("picbalance: {msg}");
            ExitCode::FAILURE
        }
    }
}
