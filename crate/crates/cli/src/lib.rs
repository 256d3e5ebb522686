//! `uam` subcommands. [`run`] returns the process exit code so the whole
//! front end is testable in-process.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use uam_core::airspace::{EnvInstance, ObservationConfig};
use uam_core::config::{parse_config, RunConfig, RunManifest, StageArtifacts};
use uam_core::ddpg::Agent;
use uam_core::evaluation::{capacity_sweep, run_single_ppz, CapacityResult};
use uam_core::rewards::RewardConfig;
use uam_core::seeding::{stream_rng, Stream};
use uam_core::training::{
    compare_reward_modes, run_episode, train_stage, EpisodeSettings, Greedy,
};

#[derive(Debug, Parser)]
#[command(name = "uam", version, about = "Train and evaluate UAV navigation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured training stages in order.
    Train { config: PathBuf },
    /// Fly the single-PPZ scenario with a trained policy.
    Evaluate { config: PathBuf, checkpoint: PathBuf },
    /// Success rates against fleet size.
    Capacity {
        config: PathBuf,
        checkpoint: PathBuf,
        /// Fleet sizes: `1..10`, `2` or `1,2,4`.
        #[arg(long, value_parser = parse_fleet_sizes)]
        n: Option<FleetSizes>,
        #[arg(long)]
        trials: Option<usize>,
        /// Output CSV (default: `capacity.csv` in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the first stage once per shaping mode and compare.
    CompareRewards { config: PathBuf },
    /// Fly one scenario file greedily and export its trajectory.
    Replay {
        scenario: PathBuf,
        checkpoint: PathBuf,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        /// Take the observation settings from this run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct FleetSizes(Vec<usize>);

fn parse_fleet_sizes(s: &str) -> Result<FleetSizes, String> {
    let bad = || format!("`{s}` is not a fleet size list");
    let sizes: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(bad());
    }
    Ok(FleetSizes(sizes))
}

/// Parse `argv` (program name first) and execute. 0 on success, 2 on
/// usage errors, 1 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train { config } => train(&config),
        Command::Evaluate { config, checkpoint } => evaluate(&config, &checkpoint),
        Command::Capacity {
            config,
            checkpoint,
            n,
            trials,
            out,
        } => capacity(&config, &checkpoint, n, trials, out),
        Command::CompareRewards { config } => compare(&config),
        Command::Replay {
            scenario,
            checkpoint,
            out,
            config,
            seed,
        } => replay(&scenario, &checkpoint, &out, config.as_deref(), seed),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(path).with_context(|| format!("loading {}", path.display()))
}

fn load_agent(path: &Path) -> Result<Agent> {
    Agent::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn train(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let out = output_dir(&cfg)?.to_path_buf();
    let mut manifest = RunManifest::begin("train", &cfg);
    let mut agent = None;
    for (i, stage) in cfg.stages.iter().enumerate() {
        eprintln!("stage {} ({} episodes)", stage.name, stage.episodes);
        let ctx = cfg.training_context(i);
        let mut outcomes = Vec::new();
        let result = train_stage(stage, agent.take(), &ctx, |r| {
            outcomes.push(r.outcome);
            if r.episode % 100 == 0 {
                let success = outcomes.iter().rev().take(cfg.window)
                    .filter(|s| **s == uam_core::airspace::Status::Success)
                    .count() as f64
                    / outcomes.len().min(cfg.window) as f64;
                eprintln!("  episode {:>6}  rolling success {success:.2}  epsilon {:.3}", r.episode, r.epsilon);
            }
        })?;
        let metrics = out.join(format!("{}_metrics.csv", stage.name));
        result.metrics.save_csv(&metrics)?;
        let checkpoint = result
            .final_checkpoint
            .clone()
            .context("stage produced no checkpoint")?;
        manifest.stages.push(StageArtifacts {
            name: stage.name.clone(),
            checkpoint,
            metrics,
        });
        agent = Some(result.agent);
    }
    let path = manifest.finalize(&out)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn evaluate(config: &Path, checkpoint: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let agent = load_agent(checkpoint)?;
    let out = output_dir(&cfg)?.to_path_buf();
    let spec = &cfg.evaluation.single_ppz;
    let report = run_single_ppz(
        spec,
        &mut Greedy(&agent),
        &cfg.observation,
        cfg.master_seed,
        Some(cfg.evaluation.traced_trial),
    )?;
    let mut manifest = RunManifest::begin("evaluate", &cfg);
    let table = out.join("single_ppz.csv");
    CapacityResult {
        rows: vec![report.result],
    }
    .save_csv(&table)?;
    manifest.outputs.push(table);
    if let Some(log) = &report.trajectory {
        let path = out.join("single_ppz_trajectory.csv");
        log.export(&path)?;
        manifest.outputs.push(path);
    }
    let r = report.result;
    println!(
        "single-PPZ: {} trials, success {:.3} ± {:.3}, collision {:.3}, ppz {:.3}, exit {:.3}, timeout {:.3}",
        r.trials, r.success, r.success_ci, r.collision, r.ppz, r.exit, r.timeout
    );
    manifest.finalize(&out)?;
    Ok(())
}

fn capacity(
    config: &Path,
    checkpoint: &Path,
    n: Option<FleetSizes>,
    trials: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let agent = load_agent(checkpoint)?;
    let sizes = n.map(|f| f.0).unwrap_or_else(|| cfg.evaluation.capacity_n.clone());
    let trials = trials.unwrap_or(cfg.evaluation.capacity.trials);
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let path = match out {
        Some(p) => p,
        None => output_dir(&cfg)?.join("capacity.csv"),
    };
    let result = capacity_sweep(
        &sizes,
        trials,
        &cfg.evaluation.capacity,
        &mut Greedy(&agent),
        &cfg.observation,
        cfg.master_seed,
        |r| {
            eprintln!(
                "N = {:>3}: success {:.3} ± {:.3}, collision {:.3}",
                r.n_uavs, r.success, r.success_ci, r.collision
            )
        },
    )?;
    result.save_csv(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn compare(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let out = output_dir(&cfg)?.to_path_buf();
    let stage = cfg.stages.first().context("config has no stages")?;
    let cmp = compare_reward_modes(stage, &cfg.training_context(0), |mode, r| {
        if r.episode % 100 == 0 {
            eprintln!("  {mode:>8} episode {:>6}", r.episode);
        }
    })?;
    let mut manifest = RunManifest::begin("compare-rewards", &cfg);
    for (mode, m) in [("dot", &cmp.dot), ("distance", &cmp.distance)] {
        let path = out.join(format!("compare_{mode}_metrics.csv"));
        m.save_csv(&path)?;
        manifest.outputs.push(path);
    }
    let table = out.join("compare_rewards.csv");
    let file = fs::File::create(&table).with_context(|| format!("creating {}", table.display()))?;
    cmp.write_table(file)?;
    manifest.outputs.push(table);
    println!(
        "final rolling success: dot {:.3}, distance {:.3}",
        cmp.dot.final_rates().success,
        cmp.distance.final_rates().success
    );
    manifest.finalize(&out)?;
    Ok(())
}

fn replay(
    scenario: &Path,
    checkpoint: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let text = fs::read_to_string(scenario)
        .with_context(|| format!("reading {}", scenario.display()))?;
    let env = EnvInstance::from_toml(&text)?;
    let agent = load_agent(checkpoint)?;
    let observation = match config {
        Some(p) => load_config(p)?.observation,
        None => ObservationConfig::default(),
    };
    let settings = EpisodeSettings {
        reward: RewardConfig::default(),
        observation,
        epsilon: 0.0,
        learn: false,
        record_trajectory: true,
    };
    let mut rng = stream_rng(seed, Stream::Evaluation, 0);
    let mut unused = rng.clone();
    let outcome = run_episode(&mut Greedy(&agent), &env, &settings, &mut rng, &mut unused)?;
    outcome
        .trajectory
        .context("trajectory was not recorded")?
        .export(out)?;
    println!(
        "{} after {} steps, return {:.3}",
        outcome.status.as_str(),
        outcome.steps,
        outcome.cumulative_reward
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fleet_size_lists() {
        assert_eq!(parse_fleet_sizes("1..4").unwrap().0, vec![1, 2, 3, 4]);
        assert_eq!(parse_fleet_sizes("1..=3").unwrap().0, vec![1, 2, 3]);
        assert_eq!(parse_fleet_sizes("2").unwrap().0, vec![2]);
        assert_eq!(parse_fleet_sizes("1, 2,8").unwrap().0, vec![1, 2, 8]);
        assert!(parse_fleet_sizes("0..3").is_err());
        assert!(parse_fleet_sizes("4..2").is_err());
        assert!(parse_fleet_sizes("x").is_err());
    }
}
