use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use fedselect::sim::{corrupt_clients, Corruption, Policy, SimConfig, Simulation};
use fedselect::workload::{generate_population, load_trace, PopulationSpec, SimWorld};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{usage, OutDir};

#[derive(Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policies to compare; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<Policy>,
    /// First seed; runs use consecutive seeds from here.
    #[arg(long)]
    seed: Option<u64>,
    /// Independent runs per policy.
    #[arg(long)]
    runs: Option<usize>,
    /// Updates aggregated per round.
    #[arg(long)]
    k: Option<usize>,
    /// Target test accuracy. Defaults to the best accuracy a random-selection
    /// reference run reaches within `reference_rounds`.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    max_rounds: Option<u64>,
    #[arg(long)]
    reference_rounds: Option<u64>,
    /// Continue from checkpoints left in the output directory.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    policies: Vec<Policy>,
    seed: u64,
    runs: usize,
    target: Option<f64>,
    reference_rounds: u64,
    max_rounds: u64,
    /// Its `seed` is replaced by each run's seed.
    population: PopulationSpec,
    trace: Option<PathBuf>,
    corruption: Option<Corruption>,
    sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policies: vec![Policy::Random, Policy::Oort],
            seed: 1,
            runs: 5,
            target: None,
            reference_rounds: 300,
            max_rounds: 1000,
            population: PopulationSpec::canonical(0),
            trace: None,
            corruption: None,
            sim: SimConfig::canonical(),
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let bad = |e: &dyn std::fmt::Display| usage(format!("{}: {e}", path.display()));
        let user: toml::Table = toml::from_str(&text).map_err(|e| bad(&e))?;
        let mut merged = toml::Table::try_from(Self::default())?;
        overlay(&mut merged, user);
        let mut cfg: Self = merged.try_into().map_err(|e| bad(&e))?;
        if let Some(trace) = &cfg.trace {
            cfg.trace = Some(path.parent().unwrap_or(Path::new(".")).join(trace));
        }
        Ok(cfg)
    }

    fn apply(&mut self, args: &TrainArgs) {
        if !args.policy.is_empty() {
            self.policies = args.policy.clone();
        }
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(r) = args.runs {
            self.runs = r;
        }
        if let Some(k) = args.k {
            self.sim.participants = k;
        }
        if args.target.is_some() {
            self.target = args.target;
        }
        if let Some(m) = args.max_rounds {
            self.max_rounds = m;
        }
        if let Some(r) = args.reference_rounds {
            self.reference_rounds = r;
        }
    }

    fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(usage("policies: at least one policy is required"));
        }
        if self.runs == 0 {
            return Err(usage("runs: must be at least 1"));
        }
        if let Some(t) = self.target {
            if !(0.0..=1.0).contains(&t) {
                return Err(usage(format!("target: must lie in [0, 1], got {t}")));
            }
        } else if self.reference_rounds == 0 {
            return Err(usage("reference_rounds: must be positive when no target is given"));
        }
        self.sim.validate().map_err(|e| usage(e.to_string()))?;
        self.population.validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    fn world(&self, seed: u64) -> Result<SimWorld> {
        let spec = PopulationSpec { seed, ..self.population };
        let mut world = generate_population(&spec)?;
        if let Some(path) = &self.trace {
            let report = load_trace(path)?.apply(&mut world);
            if !report.unmatched.is_empty() {
                log::warn!("{} trace rows match no client", report.unmatched.len());
            }
            info!("trace overlay matched {} clients", report.matched);
        }
        if let Some(mode) = self.corruption {
            let n = corrupt_clients(&mut world, mode, seed);
            info!("seed {seed}: corrupted {n} clients");
        }
        Ok(world)
    }
}

/// Recursively replaces entries of `base` with those of `over`.
fn overlay(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => overlay(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

struct RunOutcome {
    policy: Policy,
    seed: u64,
    target: f64,
    reached: bool,
    rounds: u64,
    wall_clock: f64,
    final_accuracy: f64,
    variance: f64,
}

fn reference_target(world: &SimWorld, cfg: &RunConfig, seed: u64) -> Result<f64> {
    let mut sim = Simulation::new(world, Policy::Random, cfg.sim.clone(), seed)?;
    sim.run(cfg.reference_rounds)?;
    Ok(sim.records().iter().map(|r| r.test_accuracy).fold(sim.accuracy(), f64::max))
}

struct Job<'a> {
    world: &'a SimWorld,
    policy: Policy,
    seed: u64,
    target: f64,
}

fn run_job(job: &Job, cfg: &RunConfig, out: &Path, resume: bool, verbose: bool) -> Result<RunOutcome> {
    let stem = format!("{}_seed{}", job.policy, job.seed);
    let ck_path = out.join("checkpoints").join(format!("{stem}.json"));
    let mut sim = if resume && ck_path.exists() {
        let ck = Simulation::load_checkpoint(&ck_path)?;
        if ck.policy != job.policy || ck.seed != job.seed {
            return Err(usage(format!("{} belongs to a different run", ck_path.display())));
        }
        Simulation::resume(job.world, cfg.sim.clone(), ck)?
    } else {
        Simulation::new(job.world, job.policy, cfg.sim.clone(), job.seed)?
    }
    .with_checkpoint_path(&ck_path);

    let mut breakdowns = if verbose {
        sim.record_breakdowns(true);
        let path = out.join(format!("breakdowns_{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record([
            "round",
            "client_id",
            "stat_component",
            "staleness_bonus",
            "system_factor",
            "fairness_component",
            "final_utility",
        ])?;
        Some(w)
    } else {
        None
    };

    let initial = sim.records().is_empty().then_some(sim.accuracy());
    while sim.round() < cfg.max_rounds && sim.accuracy() < job.target {
        let r = sim.run_round()?;
        if let Some(w) = &mut breakdowns {
            for b in sim.last_breakdowns() {
                w.write_record([
                    r.round.to_string(),
                    b.client_id.to_string(),
                    b.stat_component.to_string(),
                    b.staleness_bonus.to_string(),
                    b.system_factor.to_string(),
                    b.fairness_component.to_string(),
                    b.final_utility.to_string(),
                ])?;
            }
        }
    }
    if let Some(mut w) = breakdowns {
        w.flush()?;
    }

    let hit = sim.records().iter().find(|r| r.test_accuracy >= job.target);
    let (reached, rounds, wall_clock) = match (initial, hit) {
        (Some(a), _) if a >= job.target => (true, 0, 0.0),
        (_, Some(r)) => (true, r.round, r.wall_clock_s),
        _ => (false, sim.round(), sim.clock()),
    };
    let metrics = out.join(format!("metrics_{stem}.csv"));
    let file = File::create(&metrics).with_context(|| format!("writing {}", metrics.display()))?;
    sim.write_metrics(BufWriter::new(file))?;
    info!("{stem}: reached {reached} after {rounds} rounds, {wall_clock:.1}s");

    Ok(RunOutcome {
        policy: job.policy,
        seed: job.seed,
        target: job.target,
        reached,
        rounds,
        wall_clock,
        final_accuracy: sim.accuracy(),
        variance: sim.participation_variance(),
    })
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

fn write_tables(out: &Path, cfg: &RunConfig, outcomes: &[RunOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("runs.csv"))?;
    w.write_record([
        "policy",
        "seed",
        "target",
        "reached",
        "rounds",
        "wall_clock_s",
        "final_accuracy",
        "participation_variance",
    ])?;
    for o in outcomes {
        w.write_record([
            o.policy.to_string(),
            o.seed.to_string(),
            o.target.to_string(),
            o.reached.to_string(),
            o.rounds.to_string(),
            o.wall_clock.to_string(),
            o.final_accuracy.to_string(),
            o.variance.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record([
        "policy",
        "runs",
        "reached",
        "rounds_mean",
        "rounds_std",
        "wall_clock_mean",
        "wall_clock_std",
    ])?;
    println!(
        "{:<14} {:>7}  {:>22}  {:>26}",
        "policy", "reached", "rounds (mean ± std)", "wall clock s (mean ± std)"
    );
    for &policy in &cfg.policies {
        let runs: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.policy == policy).collect();
        let hits: Vec<&&RunOutcome> = runs.iter().filter(|o| o.reached).collect();
        let rounds = mean_std(&hits.iter().map(|o| o.rounds as f64).collect::<Vec<_>>());
        let wall = mean_std(&hits.iter().map(|o| o.wall_clock).collect::<Vec<_>>());
        let cell = |v: Option<(f64, f64)>, i: usize| v.map(|p| [p.0, p.1][i].to_string()).unwrap_or_default();
        w.write_record([
            policy.to_string(),
            runs.len().to_string(),
            hits.len().to_string(),
            cell(rounds, 0),
            cell(rounds, 1),
            cell(wall, 0),
            cell(wall, 1),
        ])?;
        let show = |v: Option<(f64, f64)>| v.map(|(m, s)| format!("{m:.1} ± {s:.1}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<14} {:>7}  {:>22}  {:>26}",
            policy.name(),
            format!("{}/{}", hits.len(), runs.len()),
            show(rounds),
            show(wall)
        );
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: TrainArgs, verbose: bool) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply(&args);
    cfg.validate()?;
    let out = &args.out.out;
    fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;

    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|i| cfg.seed + i).collect();
    let worlds = seeds.iter().map(|&s| cfg.world(s)).collect::<Result<Vec<_>>>()?;
    let targets = seeds
        .par_iter()
        .zip(&worlds)
        .map(|(&s, w)| match cfg.target {
            Some(t) => Ok(t),
            None => reference_target(w, &cfg, s),
        })
        .collect::<Result<Vec<_>>>()?;
    for (s, t) in seeds.iter().zip(&targets) {
        println!("seed {s}: target accuracy {t}");
    }

    let jobs: Vec<Job> = cfg
        .policies
        .iter()
        .flat_map(|&policy| {
            (0..seeds.len()).map(move |i| (policy, i))
        })
        .map(|(policy, i)| Job {
            world: &worlds[i],
            policy,
            seed: seeds[i],
            target: targets[i],
        })
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|job| run_job(job, &cfg, out, args.resume, verbose))
        .collect::<Result<Vec<_>>>()?;
    write_tables(out, &cfg, &outcomes)
}
