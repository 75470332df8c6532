use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use fedselect::rng::{stream_rng, Stream};
use fedselect::testing::io::{load_query, write_assignment, write_capacities, write_profiles, QueryDescriptor};
use fedselect::testing::{
    duration_of, estimate_participant_count, exact_milp, greedy_cover, validate_assignment, verify_bound_montecarlo,
    Assignment, CoverError, DeviationQuery, DistributionQuery,
};
use fedselect::workload::{synthetic_query, QueryWorkload};
use rand::Rng;
use serde::Deserialize;

use crate::{usage, OutDir};

#[derive(Args)]
pub struct EstimateArgs {
    /// Tolerated deviation ε of the sampled mean, in samples.
    #[arg(long)]
    tolerance: f64,
    /// Probability δ that the deviation stays below ε.
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Number of clients N.
    #[arg(long)]
    population: Option<usize>,
    /// Smallest per-client sample count.
    #[arg(long)]
    min: Option<f64>,
    /// Largest per-client sample count.
    #[arg(long)]
    max: Option<f64>,
    /// CSV with a `samples` column; fills in N, min and max when omitted.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Check the estimate with this many Monte-Carlo trials.
    #[arg(long)]
    validate: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Deserialize)]
struct CountRow {
    samples: f64,
}

fn read_counts(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let rows = reader
        .deserialize::<CountRow>()
        .map(|r| r.map(|c| c.samples))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(usage(format!("{}: no sample counts", path.display())));
    }
    Ok(rows)
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let counts = args.counts.as_deref().map(read_counts).transpose()?;
    let from_counts = |f: fn(&[f64]) -> f64| counts.as_deref().map(f);
    let min = args
        .min
        .or(from_counts(|c| c.iter().copied().fold(f64::INFINITY, f64::min)))
        .ok_or_else(|| usage("--min is required without --counts"))?;
    let max = args
        .max
        .or(from_counts(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        .ok_or_else(|| usage("--max is required without --counts"))?;
    let population = args
        .population
        .or(counts.as_ref().map(Vec::len))
        .ok_or_else(|| usage("--population is required without --counts"))?;
    let q = DeviationQuery {
        tolerance: args.tolerance,
        confidence: args.confidence,
        population,
        min_count: min,
        max_count: max,
    };
    let n = estimate_participant_count(&q).map_err(|e| usage(e.to_string()))?;
    println!("participants {n}");

    let Some(trials) = args.validate else {
        return Ok(());
    };
    let values = match counts {
        Some(c) => c,
        None => {
            let mut rng = stream_rng(args.seed, Stream::MonteCarlo, u64::MAX, 0);
            let (lo, hi) = (min.ceil() as u64, max.floor() as u64);
            if lo > hi {
                return Err(usage("no integer sample count lies in [--min, --max]"));
            }
            (0..population).map(|_| rng.random_range(lo..=hi) as f64).collect()
        }
    };
    let rate = verify_bound_montecarlo(&q, &values, n, trials, args.seed).map_err(|e| usage(e.to_string()))?;
    let miss = 1.0 - q.confidence;
    let slack = 3.0 * (miss * (1.0 - miss) / trials.max(1) as f64).sqrt();
    println!("violation rate {rate} over {trials} trials (allowed {miss:.4} + {slack:.4})");
    if rate > miss + slack {
        bail!("violation rate {rate} exceeds {miss} beyond sampling error");
    }
    Ok(())
}

#[derive(Args)]
pub struct ComposeArgs {
    /// Query descriptor (TOML).
    #[arg(long, visible_alias = "config")]
    query: PathBuf,
    /// Also run the exact solver.
    #[arg(long)]
    exact: bool,
    #[command(flatten)]
    out: OutDir,
}

fn report(name: &str, q: &DistributionQuery, a: &Assignment, secs: f64) -> Result<()> {
    validate_assignment(q, a).with_context(|| format!("{name} assignment failed validation"))?;
    let makespan = duration_of(a, &q.clients)?;
    println!(
        "{name}: {} participants, makespan {makespan} s, solved in {secs:.3} s",
        a.participants()
    );
    Ok(())
}

fn save(path: &Path, a: &Assignment) -> Result<()> {
    let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    write_assignment(BufWriter::new(file), a)?;
    Ok(())
}

fn explain(e: CoverError) -> anyhow::Error {
    if let CoverError::Infeasible { shortfalls } = &e {
        for (category, short) in shortfalls {
            eprintln!("category {category}: short by {short} samples");
        }
    }
    e.into()
}

fn deviation_count(desc: &QueryDescriptor, q: &DistributionQuery) -> Option<Result<usize>> {
    let target = desc.deviation?;
    let totals: Vec<f64> = q
        .capacity
        .iter()
        .map(|row| row.iter().map(|&(_, c)| c as f64).sum())
        .collect();
    let dq = DeviationQuery {
        tolerance: target.tolerance,
        confidence: target.confidence,
        population: totals.len(),
        min_count: totals.iter().copied().fold(f64::INFINITY, f64::min),
        max_count: totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Some(estimate_participant_count(&dq).map_err(|e| usage(e.to_string())))
}

pub fn compose(args: ComposeArgs) -> Result<()> {
    let (desc, q) = load_query(&args.query).map_err(|e| match e {
        e @ fedselect::testing::io::QueryFileError::Io { .. } => anyhow::Error::from(e),
        other => usage(other.to_string()),
    })?;
    fs::create_dir_all(&args.out.out).with_context(|| format!("creating {}", args.out.out.display()))?;
    if let Some(n) = deviation_count(&desc, &q) {
        println!("deviation target: {} participants", n?);
    }

    let start = Instant::now();
    let greedy = greedy_cover(&q).map_err(explain)?;
    report("greedy", &q, &greedy, start.elapsed().as_secs_f64())?;
    save(&args.out.out.join("assignment.csv"), &greedy)?;

    if args.exact {
        let start = Instant::now();
        let exact = exact_milp(&q).map_err(explain)?;
        report("exact", &q, &exact, start.elapsed().as_secs_f64())?;
        save(&args.out.out.join("assignment_exact.csv"), &exact)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    clients: usize,
    #[arg(long)]
    categories: usize,
    /// Total samples requested across categories.
    #[arg(long)]
    representative: u64,
    /// Participant budget; defaults to every client.
    #[arg(long)]
    budget: Option<usize>,
    /// Category draws per client.
    #[arg(long, default_value_t = 8)]
    per_client: usize,
    /// Largest per-category holding.
    #[arg(long, default_value_t = 50)]
    max_count: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

pub fn generate(args: GenArgs) -> Result<()> {
    let w = QueryWorkload {
        clients: args.clients,
        categories: args.categories,
        categories_per_client: args.per_client,
        max_count: args.max_count,
        representative: args.representative,
        budget: args.budget,
    };
    let q = synthetic_query(&w, args.seed).map_err(|e| usage(e.to_string()))?;
    let dir = &args.out.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_profiles(BufWriter::new(File::create(dir.join("clients.csv"))?), &q.clients)?;
    write_capacities(BufWriter::new(File::create(dir.join("capacities.csv"))?), &q)?;
    let desc = QueryDescriptor {
        capacities: "capacities.csv".into(),
        clients: "clients.csv".into(),
        budget: q.budget,
        categories: Some(w.categories),
        preference: Some(q.preference.clone()),
        representative: None,
        deviation: None,
    };
    fs::write(dir.join("query.toml"), toml::to_string(&desc)?)?;
    println!("wrote {}", dir.join("query.toml").display());
    Ok(())
}

#[derive(Args)]
pub struct BenchArgs {
    /// Client counts to try.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    categories: usize,
    /// Instances per size.
    #[arg(long, default_value_t = 3)]
    trials: u64,
    /// Samples requested per client in the instance.
    #[arg(long, default_value_t = 10)]
    demand: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let mut w = args.out.as_deref().map(csv::Writer::from_path).transpose()?;
    let header = ["clients", "trial", "greedy_s", "exact_s", "greedy_makespan", "exact_makespan", "ratio"];
    if let Some(w) = &mut w {
        w.write_record(header)?;
    }
    println!(
        "{:>8} {:>5} {:>10} {:>10} {:>14} {:>14} {:>8}",
        header[0], header[1], header[2], header[3], header[4], header[5], header[6]
    );
    for &n in &args.sizes {
        for trial in 0..args.trials {
            let spec = QueryWorkload {
                max_count: 8,
                ..QueryWorkload::new(n, args.categories, args.demand * n as u64)
            };
            let q = synthetic_query(&spec, args.seed.wrapping_add(trial)).map_err(|e| usage(e.to_string()))?;
            let start = Instant::now();
            let greedy = greedy_cover(&q)?;
            let greedy_s = start.elapsed().as_secs_f64();
            validate_assignment(&q, &greedy)?;
            let g = duration_of(&greedy, &q.clients)?;

            let start = Instant::now();
            let exact = match exact_milp(&q) {
                Ok(a) => Some(a),
                Err(CoverError::SizeGuard { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            let exact_s = start.elapsed().as_secs_f64();
            let e = exact.as_ref().map(|a| duration_of(a, &q.clients)).transpose()?;
            let cells = [
                n.to_string(),
                trial.to_string(),
                format!("{greedy_s:.6}"),
                e.map(|_| format!("{exact_s:.6}")).unwrap_or_default(),
                g.to_string(),
                e.map(|v| v.to_string()).unwrap_or_default(),
                e.map(|v| format!("{:.4}", g / v)).unwrap_or_default(),
            ];
            println!(
                "{:>8} {:>5} {:>10} {:>10} {:>14.4} {:>14} {:>8}",
                cells[0],
                cells[1],
                cells[2],
                if cells[3].is_empty() { "-" } else { &cells[3] },
                g,
                e.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                if cells[6].is_empty() { "-" } else { &cells[6] },
            );
            if let Some(w) = &mut w {
                w.write_record(&cells)?;
            }
        }
    }
    if let Some(mut w) = w {
        w.flush()?;
    }
    Ok(())
}
