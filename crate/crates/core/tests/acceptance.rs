//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use fedselect::sim::{corrupt_clients, Corruption, LinearModel, Policy, RoundRecord, SimConfig, Simulation};
use fedselect::testing::{
    duration_of, estimate_participant_count, exact_milp, greedy_cover, representative_preference, validate_assignment,
    verify_bound_montecarlo, ClientProfile, CoverError, DeviationQuery, DistributionQuery,
};
use fedselect::training::{staleness_bonus, statistical_utility, system_penalty};
use fedselect::workload::{generate_population, PopulationSpec, SimWorld};
use fedselect::ClientId;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const HORIZON: u64 = 300;
const MAX_ROUNDS: u64 = 1200;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u8, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Simulation criteria (1-6)

/// Summary of one run: horizon metrics plus first crossing of the target.
struct Run {
    reached: Option<(u64, f64)>,
    accuracy_at_horizon: f64,
    variance_at_horizon: f64,
    records: Vec<RoundRecord>,
    history: Vec<f64>,
    pacer_active: bool,
}

impl Run {
    fn rounds(&self) -> f64 {
        self.reached.map_or(MAX_ROUNDS as f64, |r| r.0 as f64)
    }
    fn wall(&self) -> f64 {
        self.reached
            .map_or_else(|| self.records.last().map_or(0.0, |r| r.wall_clock_s), |r| r.1)
    }
}

fn run(world: &SimWorld, policy: Policy, cfg: SimConfig, seed: u64, target: f64) -> Run {
    let mut sim = Simulation::new(world, policy, cfg, seed).unwrap();
    let mut reached = None;
    let mut at_horizon = (0.0, 0.0);
    while sim.round() < HORIZON || (reached.is_none() && sim.round() < MAX_ROUNDS) {
        let r = sim.run_round().unwrap();
        if reached.is_none() && r.test_accuracy >= target {
            reached = Some((r.round, sim.clock()));
        }
        if r.round == HORIZON {
            at_horizon = (r.test_accuracy, sim.participation_variance());
        }
    }
    Run {
        reached,
        accuracy_at_horizon: at_horizon.0,
        variance_at_horizon: at_horizon.1,
        records: sim.records().to_vec(),
        history: sim.store().pacer().utility_history.clone(),
        pacer_active: !matches!(policy, Policy::Random | Policy::SpeedOnly | Policy::OortNoPacer),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Job {
    Plain(Policy),
    Noise,
    Fairness(u8),
    CorruptOort,
    CorruptRandom,
}

const JOBS: [Job; 10] = [
    Job::Plain(Policy::Oort),
    Job::Plain(Policy::OortNoPacer),
    Job::Plain(Policy::StatOnly),
    Job::Plain(Policy::OortNoSys),
    Job::Noise,
    Job::Fairness(5),
    Job::Fairness(10),
    Job::CorruptOort,
    Job::CorruptRandom,
    Job::Plain(Policy::Random),
];

struct SeedRuns {
    target: f64,
    random_rounds: f64,
    random_wall: f64,
    jobs: Vec<(Job, Run)>,
}

impl SeedRuns {
    fn get(&self, job: Job) -> &Run {
        &self.jobs.iter().find(|(j, _)| *j == job).unwrap().1
    }
}

fn simulate_all() -> Vec<SeedRuns> {
    let cfg = SimConfig::canonical();
    SEEDS
        .par_iter()
        .map(|&seed| {
            let world = generate_population(&PopulationSpec::canonical(seed)).unwrap();
            let mut random = Simulation::new(&world, Policy::Random, cfg.clone(), seed).unwrap();
            random.run(HORIZON).unwrap();
            let target = random.records().iter().map(|r| r.test_accuracy).fold(0.0, f64::max);
            let first = random.records().iter().find(|r| r.test_accuracy >= target).unwrap();
            let (random_rounds, random_wall) = (first.round as f64, first.wall_clock_s);

            let mut corrupted = world.clone();
            corrupt_clients(&mut corrupted, Corruption::Clients { fraction: 0.1 }, seed);

            let jobs = JOBS
                .par_iter()
                .map(|&job| {
                    let mut c = cfg.clone();
                    let r = match job {
                        Job::Plain(p) => run(&world, p, c, seed, target),
                        Job::Noise => {
                            c.selector.noise_epsilon = 5.0;
                            run(&world, Policy::Oort, c, seed, target)
                        }
                        Job::Fairness(tenths) => {
                            c.selector.fairness_weight = tenths as f64 / 10.0;
                            run(&world, Policy::Oort, c, seed, target)
                        }
                        Job::CorruptOort => run(&corrupted, Policy::Oort, c, seed, target),
                        Job::CorruptRandom => run(&corrupted, Policy::Random, c, seed, target),
                    };
                    (job, r)
                })
                .collect();
            SeedRuns {
                target,
                random_rounds,
                random_wall,
                jobs,
            }
        })
        .collect()
}

/// Checks a logged T trajectory against the achieved-utility history.
fn pacer_violation(run: &Run, window: usize) -> Option<String> {
    for pair in run.records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let r = cur.round as usize;
        if cur.preferred_duration < prev.preferred_duration {
            return Some(format!("T decreased at round {r}"));
        }
        if cur.preferred_duration > prev.preferred_duration {
            let done = r - 1;
            if done < 2 * window {
                return Some(format!("T increased at round {r}, before 2W"));
            }
            let older: f64 = run.history[done - 2 * window..done - window].iter().sum();
            let recent: f64 = run.history[done - window..done].iter().sum();
            if older <= recent {
                return Some(format!("T increased at round {r} with older {older} <= recent {recent}"));
            }
        }
    }
    None
}

fn simulation_criteria() -> Vec<Outcome> {
    let start = Instant::now();
    let runs = simulate_all();
    let elapsed = start.elapsed();
    let mut out = Vec::new();

    for (s, seed) in runs.iter().zip(SEEDS) {
        let line: Vec<String> = s
            .jobs
            .iter()
            .map(|(j, r)| format!("{j:?}: rounds {} wall {:.0} acc@300 {:.4}", r.rounds(), r.wall(), r.accuracy_at_horizon))
            .collect();
        println!(
            "  seed {seed}: target {:.4} random rounds {} wall {:.0}\n    {}",
            s.target,
            s.random_rounds,
            s.random_wall,
            line.join("\n    ")
        );
    }

    let random_wall = mean(runs.iter().map(|s| s.random_wall));
    let oort = |job: Job| mean(runs.iter().map(|s| s.get(job).wall()));
    let oort_wall = oort(Job::Plain(Policy::Oort));
    let speedup = random_wall / oort_wall;
    let all_reached = runs.iter().all(|s| s.get(Job::Plain(Policy::Oort)).reached.is_some());
    out.push(outcome(
        1,
        "time-to-accuracy",
        speedup >= 1.2 && all_reached && elapsed.as_secs() < 600,
        format!(
            "random {random_wall:.0}s, oort {oort_wall:.0}s, speedup {speedup:.2}x (need >= 1.2); simulations took {:.0}s",
            elapsed.as_secs_f64()
        ),
    ));

    let rounds = |job: Job| mean(runs.iter().map(|s| s.get(job).rounds()));
    let random_rounds = mean(runs.iter().map(|s| s.random_rounds));
    let (r_oort, r_nopacer, r_stat, r_nosys) = (
        rounds(Job::Plain(Policy::Oort)),
        rounds(Job::Plain(Policy::OortNoPacer)),
        rounds(Job::Plain(Policy::StatOnly)),
        rounds(Job::Plain(Policy::OortNoSys)),
    );
    let stat_wall = oort(Job::Plain(Policy::StatOnly));
    let fewest = r_stat <= r_oort && r_stat <= r_nopacer && r_stat <= random_rounds;
    out.push(outcome(
        2,
        "ablation ordering",
        fewest && r_oort <= 2.0 * r_stat && oort_wall < stat_wall,
        format!(
            "rounds: stat_only {r_stat:.1}, oort {r_oort:.1}, oort_no_pacer {r_nopacer:.1}, random {random_rounds:.1} \
             (oort_no_sys {r_nosys:.1}); wall: oort {oort_wall:.0}s vs stat_only {stat_wall:.0}s"
        ),
    ));

    let window = SimConfig::canonical().selector.pacer_window;
    let mut checked = 0;
    let mut increases = 0;
    let mut violation = None;
    for s in &runs {
        for (job, r) in &s.jobs {
            if !r.pacer_active {
                continue;
            }
            checked += 1;
            increases += r.records.windows(2).filter(|p| p[1].preferred_duration > p[0].preferred_duration).count();
            if let Some(v) = pacer_violation(r, window) {
                violation.get_or_insert(format!("{job:?}: {v}"));
            }
        }
    }
    out.push(outcome(
        3,
        "pacer behavior",
        violation.is_none() && checked > 0,
        format!(
            "{checked} paced runs, {increases} increases; {}",
            violation.unwrap_or_else(|| "no violations".into())
        ),
    ));

    let acc = |job: Job| mean(runs.iter().map(|s| s.get(job).accuracy_at_horizon));
    let (c_oort, c_random) = (acc(Job::CorruptOort), acc(Job::CorruptRandom));
    out.push(outcome(
        4,
        "robustness (10% corrupted clients)",
        c_oort >= c_random,
        format!("accuracy at round {HORIZON}: oort {c_oort:.4}, random {c_random:.4}"),
    ));

    let noisy = oort(Job::Noise);
    out.push(outcome(
        5,
        "noise tolerance (epsilon = 5)",
        noisy <= random_wall,
        format!("wall to target: oort {noisy:.0}s, random {random_wall:.0}s"),
    ));

    let var = |job: Job| mean(runs.iter().map(|s| s.get(job).variance_at_horizon));
    let (v0, v5, v10) = (
        var(Job::Plain(Policy::Oort)),
        var(Job::Fairness(5)),
        var(Job::Fairness(10)),
    );
    let fair_wall = oort(Job::Fairness(10));
    out.push(outcome(
        6,
        "fairness knob",
        v0 > v5 && v5 > v10 && fair_wall <= random_wall,
        format!(
            "participation variance at round {HORIZON}: f=0 {v0:.2}, f=0.5 {v5:.2}, f=1 {v10:.2}; \
             f=1 wall {fair_wall:.0}s vs random {random_wall:.0}s"
        ),
    ));
    out
}

// ---------------------------------------------------------------------------
// Criterion 7

fn lemma_criterion() -> Outcome {
    let worked = DeviationQuery {
        tolerance: 10.0,
        confidence: 0.95,
        population: 1000,
        min_count: 0.0,
        max_count: 100.0,
    };
    let n131 = estimate_participant_count(&worked).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 1000;
    let mut worst = String::new();
    let mut ok = n131 == 131;
    for t in 0..20 {
        let population = rng.random_range(100..=5000usize);
        let min_count = rng.random_range(0..=50) as f64;
        let range = rng.random_range(10..=500) as f64;
        let tolerance = range * rng.random_range(0.02..0.2);
        let confidence = rng.random_range(0.5..0.99);
        let q = DeviationQuery {
            tolerance,
            confidence,
            population,
            min_count,
            max_count: min_count + range,
        };
        let counts: Vec<f64> = (0..population)
            .map(|_| (min_count as u64 + rng.random_range(0..=range as u64)) as f64)
            .collect();
        let n = estimate_participant_count(&q).unwrap();
        let rate = verify_bound_montecarlo(&q, &counts, n, trials, t).unwrap();
        let allowed = (1.0 - confidence) + 3.0 * (confidence * (1.0 - confidence) / trials as f64).sqrt();
        if rate > allowed {
            ok = false;
            worst = format!("; tuple {t} (N={population}, n={n}) rate {rate:.4} > {allowed:.4}");
        }
    }
    outcome(
        7,
        "deviation bound",
        ok,
        format!("worked example n = {n131} (need 131); 20 tuples checked{worst}"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 8: cover correctness against subset enumeration

struct Instance {
    preference: Vec<u64>,
    budget: usize,
    capacity: Vec<Vec<u64>>,
    profiles: Vec<ClientProfile>,
}

fn time_of(p: &ClientProfile, k: u64) -> f64 {
    k as f64 / p.speed + p.transfer_bytes / p.bandwidth
}

/// Transportation feasibility by the cut condition: every category subset J
/// must be coverable given each client's per-makespan sample limit.
fn feasible(inst: &Instance, subset: &[usize], makespan: f64) -> bool {
    let total: u64 = inst.preference.iter().sum();
    let limit: Vec<u64> = subset
        .iter()
        .map(|&n| {
            let p = &inst.profiles[n];
            if time_of(p, 0) > makespan {
                0
            } else {
                (0..=total).take_while(|&k| time_of(p, k) <= makespan).last().unwrap_or(0)
            }
        })
        .collect();
    let cats = inst.preference.len();
    (1u32..(1 << cats)).all(|j| {
        let need: u64 = (0..cats).filter(|i| j >> i & 1 == 1).map(|i| inst.preference[i]).sum();
        let have: u64 = subset
            .iter()
            .zip(&limit)
            .map(|(&n, &l)| {
                let c: u64 = (0..cats).filter(|i| j >> i & 1 == 1).map(|i| inst.capacity[n][i]).sum();
                c.min(l)
            })
            .sum();
        need <= have
    })
}

fn enumerate_optimum(inst: &Instance) -> Option<f64> {
    let n = inst.profiles.len();
    let total: u64 = inst.preference.iter().sum();
    let mut best: Option<f64> = None;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > inst.budget {
            continue;
        }
        let subset: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let mut candidates: Vec<f64> = subset
            .iter()
            .flat_map(|&c| (1..=total).map(move |k| (c, k)))
            .map(|(c, k)| time_of(&inst.profiles[c], k))
            .collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        if let Some(&m) = candidates.iter().find(|&&m| feasible(inst, &subset, m)) {
            best = Some(best.map_or(m, |b: f64| b.min(m)));
        }
    }
    best
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..=10usize);
    let cats = rng.random_range(1..=3usize);
    let capacity: Vec<Vec<u64>> = (0..n)
        .map(|_| {
            (0..cats)
                .map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(1..=8) })
                .collect()
        })
        .collect();
    let mut preference: Vec<u64> = (0..cats)
        .map(|i| {
            let total: u64 = capacity.iter().map(|r| r[i]).sum();
            rng.random_range(0..=total.min(12))
        })
        .collect();
    if preference.iter().all(|&p| p == 0) {
        preference[0] = 1;
    }
    let profiles = (0..n)
        .map(|i| ClientProfile {
            client_id: ClientId(i as u64 + 1),
            speed: rng.random_range(1..=20) as f64,
            bandwidth: rng.random_range(1..=10) as f64,
            transfer_bytes: rng.random_range(0..=20) as f64,
        })
        .collect();
    Instance {
        preference,
        budget: rng.random_range(n.div_ceil(2)..=n),
        capacity,
        profiles,
    }
}

fn cover_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut greedy_ok, mut equal, mut oracle_checked) = (0, 0, 0);
    let mut failure: Option<String> = None;
    let mut fail = |m: String| {
        failure.get_or_insert(m);
    };
    for t in 0..200 {
        let inst = random_instance(&mut rng);
        let q = DistributionQuery::from_dense(inst.preference.clone(), inst.budget, inst.profiles.clone(), &inst.capacity)
            .unwrap();
        let greedy = greedy_cover(&q);
        let exact = exact_milp(&q);
        if let Ok(a) = &exact {
            if let Err(v) = validate_assignment(&q, a) {
                fail(format!("instance {t}: exact assignment invalid: {v:?}"));
            }
        }
        match (&greedy, &exact) {
            (Ok(g), Ok(e)) => {
                greedy_ok += 1;
                if let Err(v) = validate_assignment(&q, g) {
                    fail(format!("instance {t}: greedy assignment invalid: {v:?}"));
                }
                let recomputed = duration_of(g, &q.clients).unwrap();
                if !rel_close(recomputed, g.makespan, 1e-12) {
                    fail(format!("instance {t}: greedy makespan {} != recomputed {recomputed}", g.makespan));
                }
                if e.makespan > g.makespan * (1.0 + 1e-9) {
                    fail(format!("instance {t}: exact {} > greedy {}", e.makespan, g.makespan));
                }
                if rel_close(e.makespan, g.makespan, 1e-9) {
                    equal += 1;
                }
            }
            (Ok(_), Err(e)) => fail(format!("instance {t}: greedy succeeded but exact failed: {e}")),
            (Err(CoverError::BudgetExceeded { .. }) | Err(CoverError::Infeasible { .. }), _) => {}
            (Err(e), _) => fail(format!("instance {t}: greedy error {e}")),
        }
        if inst.profiles.len() <= 8 {
            oracle_checked += 1;
            let oracle = enumerate_optimum(&inst);
            match (oracle, &exact) {
                (Some(m), Ok(a)) if rel_close(m, a.makespan, 1e-9) => {}
                (None, Err(_)) => {}
                (o, e) => fail(format!(
                    "instance {t}: oracle {o:?} vs exact {:?}",
                    e.as_ref().map(|a| a.makespan)
                )),
            }
        }
    }
    let pass = failure.is_none() && equal >= 20;
    outcome(
        8,
        "cover solver correctness",
        pass,
        format!(
            "200 instances, greedy feasible on {greedy_ok}, greedy = exact on {equal} (need >= 20), \
             {oracle_checked} checked by enumeration{}",
            failure.map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 9

fn scalability_criterion() -> Outcome {
    let (n, cats) = (10_000usize, 100usize);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut capacity = vec![Vec::new(); n];
    for row in capacity.iter_mut() {
        let mut picks: Vec<usize> = (0..8).map(|_| rng.random_range(0..cats)).collect();
        picks.sort_unstable();
        picks.dedup();
        *row = picks.into_iter().map(|i| (i, rng.random_range(1..=50u64))).collect();
    }
    let profiles: Vec<ClientProfile> = (0..n)
        .map(|i| ClientProfile {
            client_id: ClientId(i as u64),
            speed: rng.random_range(5.0..50.0),
            bandwidth: rng.random_range(1e5..1e7),
            transfer_bytes: 1e6,
        })
        .collect();
    let mut global = vec![0.0; cats];
    for row in &capacity {
        for &(i, c) in row {
            global[i] += c as f64;
        }
    }
    let preference = representative_preference(&global, 20_000);
    let q = DistributionQuery::new(preference, n, profiles, capacity).unwrap();
    let start = Instant::now();
    let greedy = greedy_cover(&q);
    let secs = start.elapsed().as_secs_f64();
    let valid = greedy.as_ref().is_ok_and(|a| validate_assignment(&q, a).is_ok());
    let guard = matches!(exact_milp(&q), Err(CoverError::SizeGuard { .. }));
    outcome(
        9,
        "solver scalability",
        valid && secs < 60.0 && guard,
        format!(
            "greedy on {n} clients x {cats} categories: {secs:.2}s (need < 60), {} participants, valid {valid}; \
             exact refused by size guard: {guard}",
            greedy.as_ref().map(|a| a.participants()).unwrap_or(0)
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 10

fn finite_difference_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (classes, dim, count) = (4, 5, 7);
    let mut model = LinearModel::zeros(classes, dim);
    model.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    let features: Vec<f64> = (0..count * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..count).map(|_| rng.random_range(0..classes)).collect();
    let idx: Vec<usize> = (0..count).collect();
    let mut grad = vec![0.0; model.weights.len()];
    model.batch_gradient(&features, &labels, &idx, &mut grad, &mut Vec::new());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..grad.len() {
        let w0 = model.weights[j];
        model.weights[j] = w0 + h;
        let up = model.loss(&features, &labels);
        model.weights[j] = w0 - h;
        let down = model.loss(&features, &labels);
        model.weights[j] = w0;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((numeric - grad[j]).abs() / numeric.abs().max(grad[j].abs()).max(1e-8));
    }
    worst
}

fn small_world() -> SimWorld {
    generate_population(&PopulationSpec {
        client_count: 120,
        feature_dim: 8,
        test_samples: 300,
        ..PopulationSpec::canonical(21)
    })
    .unwrap()
}

fn small_config() -> SimConfig {
    SimConfig {
        participants: 10,
        checkpoint_every: 5,
        ..SimConfig::canonical()
    }
}

fn conservation_error() -> f64 {
    let world = small_world();
    let mut sim = Simulation::new(&world, Policy::Oort, small_config(), 3).unwrap();
    sim.retain_updates(true);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let r = sim.run_round().unwrap();
        let k = r.updates.len() as f64;
        for (j, &w) in sim.model().weights.iter().enumerate() {
            let mean = r.updates.iter().map(|m| m.weights[j]).sum::<f64>() / k;
            worst = worst.max((w - mean).abs() / mean.abs().max(1e-300));
        }
    }
    worst
}

fn restore_is_deterministic() -> bool {
    let world = small_world();
    let mut straight = Simulation::new(&world, Policy::Oort, small_config(), 4).unwrap();
    straight.run(20).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.json");
    let mut first = Simulation::new(&world, Policy::Oort, small_config(), 4)
        .unwrap()
        .with_checkpoint_path(&path);
    first.run(10).unwrap();
    drop(first);
    let ck = Simulation::load_checkpoint(&path).unwrap();
    let mut resumed = Simulation::resume(&world, small_config(), ck).unwrap();
    resumed.run(10).unwrap();
    resumed.records() == straight.records()
        && resumed.model() == straight.model()
        && resumed.store().snapshot() == straight.store().snapshot()
}

fn threads_are_invisible() -> bool {
    let world = small_world();
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut sim = Simulation::new(&world, Policy::Oort, small_config(), 5).unwrap();
            sim.run(15).unwrap();
            (sim.records().to_vec(), sim.model().clone())
        })
    };
    let one = run_with(1);
    [2, 4, 8].into_iter().all(|t| run_with(t) == one)
}

fn numeric_criterion() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        let pass = rel_close(got, want, tol);
        ok &= pass;
        if !pass {
            notes.push(format!("{name}: got {got}, want {want}"));
        }
    };
    check("utility [2,2,2]", statistical_utility(&[2.0, 2.0, 2.0]), 6.0, 1e-4);
    check("utility [3,4]", statistical_utility(&[3.0, 4.0]), 7.0711, 1e-4);
    check("penalty t=5", system_penalty(6.0, 10.0, 5.0, 2.0).unwrap(), 6.0, 1e-4);
    check("penalty t=20", system_penalty(6.0, 10.0, 20.0, 2.0).unwrap(), 1.5, 1e-4);
    check("penalty alpha=0", system_penalty(6.0, 10.0, 20.0, 0.0).unwrap(), 6.0, 1e-4);
    check("staleness R=100", staleness_bonus(100, 10).unwrap(), 0.2146, 1e-4);
    let n = estimate_participant_count(&DeviationQuery {
        tolerance: 10.0,
        confidence: 0.95,
        population: 1000,
        min_count: 0.0,
        max_count: 100.0,
    })
    .unwrap();
    check("participant count", n as f64, 131.0, 1e-4);
    let empty_ok = statistical_utility(&[]) == 0.0 && staleness_bonus(1, 1).unwrap() == 0.0;
    ok &= empty_ok;

    let grad = finite_difference_check();
    let cons = conservation_error();
    let restore = restore_is_deterministic();
    let threads = threads_are_invisible();
    ok &= grad < 1e-5 && cons < 1e-9 && restore && threads;
    outcome(
        10,
        "numerical suite",
        ok,
        format!(
            "hand values {}; gradient rel err {grad:.2e} (< 1e-5); aggregation rel err {cons:.2e} (< 1e-9); \
             checkpoint resume identical {restore}; thread-count invariant {threads}",
            if notes.is_empty() { "match".to_string() } else { notes.join(", ") }
        ),
    )
}

// Runs without the libtest harness so the criterion lines are never captured.
fn main() -> std::process::ExitCode {
    let mut results = simulation_criteria();
    results.push(lemma_criterion());
    results.push(cover_criterion());
    results.push(scalability_criterion());
    results.push(numeric_criterion());
    results.sort_by_key(|o| o.id);
    for o in &results {
        println!(
            "criterion {:>2} {}: {} | {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let failed: Vec<u8> = results.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
