//! Emulated client populations.
//!
//! Label skew comes from a symmetric Dirichlet per client, quantity skew from
//! a truncated power law, and system capacity from log-normal compute latency
//! and bandwidth. Features are drawn from per-class Gaussians so the task is
//! learnable by a linear classifier.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metastore::ClientId;
use crate::rng::{stream_rng, Stream};
use crate::testing::{representative_preference, ClientProfile, DistributionQuery};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid population spec field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("trace line {line}: {message}")]
    TraceParse { line: u64, message: String },
    #[error("trace line {line}: {message}")]
    TraceValidation { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    /// Density exponent: p(x) ∝ x^-exponent.
    pub exponent: f64,
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalSpec {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub client_count: usize,
    pub class_count: usize,
    pub feature_dim: usize,
    /// Dirichlet concentration of per-client label distributions.
    pub label_concentration: f64,
    pub sample_count: PowerLaw,
    /// Seconds per sample.
    pub compute_latency: LogNormalSpec,
    /// Bytes per second.
    pub bandwidth: LogNormalSpec,
    pub availability: RangeSpec,
    #[serde(default)]
    pub seed: u64,
    /// Distance scale between class means.
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    /// Per-feature noise standard deviation.
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
    /// Held-out test samples, balanced across classes.
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    /// Features are rescaled geometrically from 1/spread to spread. Values
    /// above 1 make the loss surface ill-conditioned, so gradient descent
    /// keeps improving for many rounds.
    #[serde(default = "default_spread")]
    pub feature_scale_spread: f64,
}

fn default_separation() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_test_samples() -> usize {
    2000
}
fn default_spread() -> f64 {
    1.0
}

/// Per-feature scale factors for a spread.
pub fn feature_scales(dim: usize, spread: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    (0..dim)
        .map(|j| spread.powf(2.0 * j as f64 / (dim - 1) as f64 - 1.0))
        .collect()
}

impl PopulationSpec {
    /// The canonical non-IID workload: 1000 clients, 10 classes,
    /// Dirichlet 0.3 label skew, log-normal latency with σ = 1, and features
    /// spread over two orders of magnitude in scale.
    pub fn canonical(seed: u64) -> Self {
        Self {
            client_count: 1000,
            class_count: 10,
            feature_dim: 32,
            label_concentration: 0.3,
            sample_count: PowerLaw {
                exponent: 1.8,
                min: 20,
                max: 600,
            },
            compute_latency: LogNormalSpec {
                mu: (0.05f64).ln(),
                sigma: 1.0,
            },
            bandwidth: LogNormalSpec {
                mu: (1.0e6f64).ln(),
                sigma: 0.5,
            },
            availability: RangeSpec { min: 0.7, max: 1.0 },
            seed,
            class_separation: 1.0,
            feature_noise: 1.0,
            test_samples: 2000,
            feature_scale_spread: 10.0,
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: Self = toml::from_str(&text).map_err(|e| WorkloadError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |field: &'static str, reason: &str| {
            Err(WorkloadError::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        };
        if self.client_count == 0 {
            return fail("client_count", "must be positive");
        }
        if self.class_count < 2 {
            return fail("class_count", "need at least 2 classes");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim", "must be positive");
        }
        if !(self.label_concentration > 0.0 && self.label_concentration.is_finite()) {
            return fail("label_concentration", "must be positive");
        }
        let sc = &self.sample_count;
        if !(sc.exponent > 0.0 && sc.exponent.is_finite()) {
            return fail("sample_count", "exponent must be positive");
        }
        if sc.min == 0 || sc.min > sc.max {
            return fail("sample_count", "need 1 <= min <= max");
        }
        for (field, ln) in [("compute_latency", &self.compute_latency), ("bandwidth", &self.bandwidth)] {
            if !(ln.mu.is_finite() && ln.sigma >= 0.0 && ln.sigma.is_finite()) {
                return fail(field, "need finite mu and sigma >= 0");
            }
        }
        let av = &self.availability;
        if !(av.min > 0.0 && av.min <= av.max && av.max <= 1.0) {
            return fail("availability", "need 0 < min <= max <= 1");
        }
        if !(self.class_separation > 0.0 && self.feature_noise > 0.0) {
            return fail("class_separation", "separation and noise must be positive");
        }
        if !(self.feature_scale_spread >= 1.0 && self.feature_scale_spread.is_finite()) {
            return fail("feature_scale_spread", "must be >= 1");
        }
        Ok(())
    }
}

/// One emulated device.
#[derive(Debug, Clone, PartialEq)]
pub struct SimClient {
    pub client_id: ClientId,
    /// Row-major, `labels.len() × feature_dim`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Seconds per sample.
    pub compute_latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Probability of being reachable in a given round.
    pub availability: f64,
    pub corrupted: bool,
}

impl SimClient {
    pub fn sample_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    pub fn label_distribution(&self, classes: usize) -> Vec<f64> {
        let n = self.labels.len().max(1) as f64;
        self.label_counts(classes).into_iter().map(|c| c as f64 / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

/// The emulated population plus a held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    pub class_count: usize,
    pub feature_dim: usize,
    pub clients: Vec<SimClient>,
    pub test: Dataset,
}

impl SimWorld {
    /// Sample-count-weighted label distribution over all clients.
    pub fn global_distribution(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count];
        for c in &self.clients {
            for &y in &c.labels {
                counts[y] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        counts.into_iter().map(|c| c as f64 / total.max(1) as f64).collect()
    }

    pub fn client(&self, id: ClientId) -> Option<&SimClient> {
        self.clients.get(id.0 as usize).filter(|c| c.client_id == id)
    }
}

/// Draws from the power law truncated to [min, max + 1), floored to an integer.
pub fn sample_power_law<R: Rng + ?Sized>(law: &PowerLaw, rng: &mut R) -> u64 {
    let lo = law.min as f64;
    let hi = law.max as f64 + 1.0;
    let u: f64 = rng.random();
    let x = power_law_quantile(law.exponent, lo, hi, u);
    (x.floor() as u64).clamp(law.min, law.max)
}

fn power_law_quantile(a: f64, lo: f64, hi: f64, u: f64) -> f64 {
    if (a - 1.0).abs() < 1e-12 {
        (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    } else {
        let e = 1.0 - a;
        (lo.powf(e) + u * (hi.powf(e) - lo.powf(e))).powf(1.0 / e)
    }
}

/// P(count <= k) for the discretized truncated power law.
pub fn power_law_cdf(law: &PowerLaw, k: u64) -> f64 {
    if k < law.min {
        return 0.0;
    }
    if k >= law.max {
        return 1.0;
    }
    let (lo, hi, x) = (law.min as f64, law.max as f64 + 1.0, k as f64 + 1.0);
    let a = law.exponent;
    if (a - 1.0).abs() < 1e-12 {
        (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
    } else {
        let e = 1.0 - a;
        (x.powf(e) - lo.powf(e)) / (hi.powf(e) - lo.powf(e))
    }
}

/// Symmetric Dirichlet draw via normalized gammas. When every gamma
/// underflows (tiny concentrations) all mass goes to one random class.
pub fn sample_dirichlet<R: Rng + ?Sized>(classes: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        draws.iter_mut().for_each(|d| *d = 0.0);
        draws[rng.random_range(0..classes)] = 1.0;
    }
    draws
}

fn draw_class<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn draw_features<R: Rng + ?Sized>(mean: &[f64], scales: &[f64], noise: f64, rng: &mut R, out: &mut Vec<f64>) {
    let normal = Normal::new(0.0, noise).expect("positive noise");
    out.extend(mean.iter().zip(scales).map(|(m, s)| s * (m + normal.sample(rng))));
}

pub fn generate_population(spec: &PopulationSpec) -> Result<SimWorld, WorkloadError> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let classes = spec.class_count;

    let mut mean_rng = stream_rng(spec.seed, Stream::Population, u64::MAX, 0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| spec.class_separation * unit.sample(&mut mean_rng)).collect())
        .collect();

    let scales = feature_scales(dim, spec.feature_scale_spread);
    let latency = LogNormal::new(spec.compute_latency.mu, spec.compute_latency.sigma).expect("validated");
    let bandwidth = LogNormal::new(spec.bandwidth.mu, spec.bandwidth.sigma).expect("validated");

    let clients: Vec<SimClient> = (0..spec.client_count)
        .into_par_iter()
        .map(|n| {
            let mut rng = stream_rng(spec.seed, Stream::Population, n as u64, 0);
            let probs = sample_dirichlet(classes, spec.label_concentration, &mut rng);
            let count = sample_power_law(&spec.sample_count, &mut rng) as usize;
            let mut labels = Vec::with_capacity(count);
            let mut features = Vec::with_capacity(count * dim);
            for _ in 0..count {
                let y = draw_class(&probs, &mut rng);
                labels.push(y);
                draw_features(&means[y], &scales, spec.feature_noise, &mut rng, &mut features);
            }
            SimClient {
                client_id: ClientId(n as u64),
                features,
                labels,
                compute_latency: latency.sample(&mut rng),
                bandwidth: bandwidth.sample(&mut rng),
                availability: rng.random_range(spec.availability.min..=spec.availability.max),
                corrupted: false,
            }
        })
        .collect();

    let mut test_rng = stream_rng(spec.seed, Stream::Population, u64::MAX, 1);
    let mut test = Dataset {
        features: Vec::with_capacity(spec.test_samples * dim),
        labels: Vec::with_capacity(spec.test_samples),
    };
    for k in 0..spec.test_samples {
        let y = k % classes;
        test.labels.push(y);
        draw_features(&means[y], &scales, spec.feature_noise, &mut test_rng, &mut test.features);
    }

    Ok(SimWorld {
        class_count: classes,
        feature_dim: dim,
        clients,
        test,
    })
}

/// Half the L1 distance is total variation; this is the full L1 distance.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Per-device capacities read from a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub client_id: u64,
    pub compute_latency: f64,
    pub bandwidth: f64,
    pub availability: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceTrace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OverlayReport {
    pub matched: usize,
    /// Trace rows with no client of that id in the world.
    pub unmatched: Vec<ClientId>,
}

/// Parses a trace table with header `client_id,compute_latency,bandwidth,availability`.
pub fn parse_trace<R: std::io::Read>(input: R) -> Result<DeviceTrace, WorkloadError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    let mut ids = HashSet::new();
    for rec in reader.deserialize::<TraceRow>() {
        let row = rec.map_err(|e| WorkloadError::TraceParse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rows.len() as u64 + 2;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(row.compute_latency) || !positive(row.bandwidth) {
            return Err(WorkloadError::TraceValidation {
                line,
                message: format!("client {} has a nonpositive capacity", row.client_id),
            });
        }
        if !(row.availability > 0.0 && row.availability <= 1.0) {
            return Err(WorkloadError::TraceValidation {
                line,
                message: format!("client {} availability must lie in (0, 1]", row.client_id),
            });
        }
        if !ids.insert(row.client_id) {
            return Err(WorkloadError::TraceValidation {
                line,
                message: format!("duplicate client {}", row.client_id),
            });
        }
        rows.push(row);
    }
    Ok(DeviceTrace { rows })
}

pub fn load_trace(path: &Path) -> Result<DeviceTrace, WorkloadError> {
    let file = std::fs::File::open(path).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(file)
}

impl DeviceTrace {
    /// Overrides capacities of clients whose id appears in the trace.
    pub fn apply(&self, world: &mut SimWorld) -> OverlayReport {
        let index: HashMap<ClientId, usize> = world
            .clients
            .iter()
            .enumerate()
            .map(|(n, c)| (c.client_id, n))
            .collect();
        let mut report = OverlayReport::default();
        for row in &self.rows {
            match index.get(&ClientId(row.client_id)) {
                Some(&n) => {
                    let c = &mut world.clients[n];
                    c.compute_latency = row.compute_latency;
                    c.bandwidth = row.bandwidth;
                    c.availability = row.availability;
                    report.matched += 1;
                }
                None => report.unmatched.push(ClientId(row.client_id)),
            }
        }
        report
    }
}

/// Shape of a synthetic distribution query: sparse per-client category
/// holdings with uniform device speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryWorkload {
    pub clients: usize,
    pub categories: usize,
    /// Category draws per client; duplicates collapse.
    pub categories_per_client: usize,
    /// Per-category holdings are uniform on 1..=max_count.
    pub max_count: u64,
    /// Total samples requested, split by the global category distribution.
    pub representative: u64,
    /// Participant budget; `None` allows every client.
    pub budget: Option<usize>,
}

impl QueryWorkload {
    pub fn new(clients: usize, categories: usize, representative: u64) -> Self {
        Self {
            clients,
            categories,
            categories_per_client: 8,
            max_count: 50,
            representative,
            budget: None,
        }
    }
}

pub fn synthetic_query(w: &QueryWorkload, seed: u64) -> Result<DistributionQuery, WorkloadError> {
    let bad = |field, reason: &str| WorkloadError::InvalidSpec {
        field,
        reason: reason.to_string(),
    };
    if w.clients == 0 {
        return Err(bad("clients", "must be at least 1"));
    }
    if w.categories == 0 {
        return Err(bad("categories", "must be at least 1"));
    }
    if w.categories_per_client == 0 {
        return Err(bad("categories_per_client", "must be at least 1"));
    }
    if w.max_count == 0 {
        return Err(bad("max_count", "must be at least 1"));
    }
    let rows: Vec<(ClientProfile, Vec<(usize, u64)>)> = (0..w.clients)
        .into_par_iter()
        .map(|n| {
            let mut rng = stream_rng(seed, Stream::Instance, n as u64, 1);
            let mut picks: Vec<usize> = (0..w.categories_per_client)
                .map(|_| rng.random_range(0..w.categories))
                .collect();
            picks.sort_unstable();
            picks.dedup();
            let row = picks.into_iter().map(|i| (i, rng.random_range(1..=w.max_count))).collect();
            let profile = ClientProfile {
                client_id: ClientId(n as u64),
                speed: rng.random_range(5.0..50.0),
                bandwidth: rng.random_range(1e5..1e7),
                transfer_bytes: 1e6,
            };
            (profile, row)
        })
        .collect();
    let (profiles, capacity): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let mut global = vec![0.0; w.categories];
    for row in &capacity {
        for &(i, c) in row {
            global[i] += c as f64;
        }
    }
    let preference = representative_preference(&global, w.representative);
    DistributionQuery::new(preference, w.budget.unwrap_or(w.clients), profiles, capacity)
        .map_err(|e| bad("representative", &e.to_string()))
}
