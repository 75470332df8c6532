//! Distribution queries, assignments and the constraint validator.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cover::CoverError;
use crate::metastore::ClientId;

/// System profile of one testing candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: ClientId,
    /// Samples processed per second.
    pub speed: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Bytes transferred for the round.
    pub transfer_bytes: f64,
}

impl ClientProfile {
    pub fn transfer_time(&self) -> f64 {
        self.transfer_bytes / self.bandwidth
    }

    /// Compute plus transfer time for `samples` samples.
    pub fn time_for(&self, samples: u64) -> f64 {
        samples as f64 / self.speed + self.transfer_time()
    }

    /// Largest sample count finishing within `makespan`, or None when even
    /// the transfer alone does not fit.
    pub fn samples_within(&self, makespan: f64) -> Option<u64> {
        let slack = makespan - self.transfer_time();
        if slack < 0.0 {
            return None;
        }
        let mut k = (slack * self.speed).floor().max(0.0).min(u64::MAX as f64 / 2.0) as u64;
        // Agree exactly with `time_for`, which defines the objective.
        while k > 0 && self.time_for(k) > makespan {
            k -= 1;
        }
        while self.time_for(k + 1) <= makespan {
            k += 1;
        }
        if self.time_for(k) > makespan {
            return None;
        }
        Some(k)
    }

    fn check(&self) -> Result<(), CoverError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.speed) && ok(self.bandwidth) && self.transfer_bytes.is_finite() && self.transfer_bytes >= 0.0 {
            Ok(())
        } else {
            Err(CoverError::InvalidProfile(self.client_id))
        }
    }
}

/// Exact categorical preference under capacity and budget constraints.
///
/// Capacities are stored sparsely: `capacity[n]` lists `(category, count)`
/// pairs with nonzero counts, sorted by category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionQuery {
    pub preference: Vec<u64>,
    pub budget: usize,
    pub clients: Vec<ClientProfile>,
    pub capacity: Vec<Vec<(usize, u64)>>,
}

impl DistributionQuery {
    /// Builds a query from a dense capacity matrix (`capacity[n][i]`).
    pub fn from_dense(
        preference: Vec<u64>,
        budget: usize,
        clients: Vec<ClientProfile>,
        capacity: &[Vec<u64>],
    ) -> Result<Self, CoverError> {
        let sparse = capacity
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (i, c))
                    .collect()
            })
            .collect();
        Self::new(preference, budget, clients, sparse)
    }

    pub fn new(
        preference: Vec<u64>,
        budget: usize,
        clients: Vec<ClientProfile>,
        mut capacity: Vec<Vec<(usize, u64)>>,
    ) -> Result<Self, CoverError> {
        if clients.len() != capacity.len() {
            return Err(CoverError::InvalidQuery(format!(
                "{} client profiles but {} capacity rows",
                clients.len(),
                capacity.len()
            )));
        }
        if budget == 0 {
            return Err(CoverError::InvalidQuery("budget must be positive".into()));
        }
        if preference.is_empty() || preference.iter().all(|&p| p == 0) {
            return Err(CoverError::InvalidQuery("preference must request at least one sample".into()));
        }
        let mut ids = HashSet::new();
        for c in &clients {
            c.check()?;
            if !ids.insert(c.client_id) {
                return Err(CoverError::InvalidQuery(format!("duplicate client {}", c.client_id)));
            }
        }
        let cats = preference.len();
        for row in &mut capacity {
            row.retain(|&(_, c)| c > 0);
            row.sort_by_key(|&(i, _)| i);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(CoverError::InvalidQuery("duplicate category in capacity row".into()));
            }
            if let Some(&(i, _)) = row.iter().find(|&&(i, _)| i >= cats) {
                return Err(CoverError::InvalidQuery(format!(
                    "category {i} outside preference of length {cats}"
                )));
            }
        }
        Ok(Self {
            preference,
            budget,
            clients,
            capacity,
        })
    }

    pub fn categories(&self) -> usize {
        self.preference.len()
    }

    pub fn capacity_of(&self, client: usize, category: usize) -> u64 {
        let row = &self.capacity[client];
        row.binary_search_by_key(&category, |&(i, _)| i)
            .map(|pos| row[pos].1)
            .unwrap_or(0)
    }

    /// Categories whose total capacity falls short of the preference.
    pub fn shortfalls(&self) -> Vec<(usize, u64)> {
        let mut total = vec![0u64; self.categories()];
        for row in &self.capacity {
            for &(i, c) in row {
                total[i] = total[i].saturating_add(c);
            }
        }
        self.preference
            .iter()
            .zip(total)
            .enumerate()
            .filter(|(_, (&p, t))| *t < p)
            .map(|(i, (&p, t))| (i, p - t))
            .collect()
    }
}

/// Samples a selected client contributes per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientAssignment {
    pub client_id: ClientId,
    /// Dense per-category sample counts.
    pub samples: Vec<u64>,
}

impl ClientAssignment {
    pub fn total(&self) -> u64 {
        self.samples.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub clients: Vec<ClientAssignment>,
    /// Testing duration in seconds.
    pub makespan: f64,
}

impl Assignment {
    /// Clients contributing at least one sample.
    pub fn participants(&self) -> usize {
        self.clients.iter().filter(|c| c.total() > 0).count()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintViolation {
    #[error("client {0} is not part of the query")]
    UnknownClient(ClientId),
    #[error("client {0} appears more than once")]
    DuplicateClient(ClientId),
    #[error("client {client} has {found} categories, query has {expected}")]
    Shape {
        client: ClientId,
        found: usize,
        expected: usize,
    },
    #[error("client {client} exceeds capacity in category {category}: {assigned} > {capacity}")]
    Capacity {
        client: ClientId,
        category: usize,
        assigned: u64,
        capacity: u64,
    },
    #[error("category {category} receives {assigned} samples, preference is {preferred}")]
    Preference {
        category: usize,
        assigned: u64,
        preferred: u64,
    },
    #[error("{participants} participants exceed budget {budget}")]
    Budget { participants: usize, budget: usize },
    #[error("reported makespan {reported} differs from recomputed {actual}")]
    Makespan { reported: f64, actual: f64 },
}

/// Checks capacity, preference and budget constraints, and that the
/// reported makespan matches the assignment.
pub fn validate_assignment(q: &DistributionQuery, a: &Assignment) -> Result<(), ConstraintViolation> {
    let index: HashMap<ClientId, usize> = q.clients.iter().enumerate().map(|(n, c)| (c.client_id, n)).collect();
    let mut seen = HashSet::new();
    let mut totals = vec![0u64; q.categories()];
    for ca in &a.clients {
        let &n = index
            .get(&ca.client_id)
            .ok_or(ConstraintViolation::UnknownClient(ca.client_id))?;
        if !seen.insert(ca.client_id) {
            return Err(ConstraintViolation::DuplicateClient(ca.client_id));
        }
        if ca.samples.len() != q.categories() {
            return Err(ConstraintViolation::Shape {
                client: ca.client_id,
                found: ca.samples.len(),
                expected: q.categories(),
            });
        }
        for (i, &x) in ca.samples.iter().enumerate() {
            let cap = q.capacity_of(n, i);
            if x > cap {
                return Err(ConstraintViolation::Capacity {
                    client: ca.client_id,
                    category: i,
                    assigned: x,
                    capacity: cap,
                });
            }
            totals[i] += x;
        }
    }
    for (i, (&got, &want)) in totals.iter().zip(&q.preference).enumerate() {
        if got != want {
            return Err(ConstraintViolation::Preference {
                category: i,
                assigned: got,
                preferred: want,
            });
        }
    }
    let participants = a.participants();
    if participants > q.budget {
        return Err(ConstraintViolation::Budget {
            participants,
            budget: q.budget,
        });
    }
    let actual = duration_of(a, &q.clients).expect("profiles validated at query construction");
    if (actual - a.makespan).abs() > 1e-9 * actual.abs().max(1.0) {
        return Err(ConstraintViolation::Makespan {
            reported: a.makespan,
            actual,
        });
    }
    Ok(())
}

/// Slowest participant's compute-plus-transfer time; 0 for an empty assignment.
pub fn duration_of(a: &Assignment, clients: &[ClientProfile]) -> Result<f64, CoverError> {
    let index: HashMap<ClientId, &ClientProfile> = clients.iter().map(|c| (c.client_id, c)).collect();
    let mut worst = 0.0f64;
    for ca in &a.clients {
        let total = ca.total();
        if total == 0 {
            continue;
        }
        let p = index
            .get(&ca.client_id)
            .ok_or_else(|| CoverError::InvalidQuery(format!("unknown client {}", ca.client_id)))?;
        p.check()?;
        worst = worst.max(p.time_for(total));
    }
    Ok(worst)
}

/// Scales a categorical distribution to `total` samples using the
/// largest-remainder method (ties go to the lower category index).
pub fn representative_preference(distribution: &[f64], total: u64) -> Vec<u64> {
    let mass: f64 = distribution.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
    if distribution.is_empty() || mass <= 0.0 {
        return vec![0; distribution.len()];
    }
    let quotas: Vec<f64> = distribution
        .iter()
        .map(|&w| if w.is_finite() && w > 0.0 { w / mass * total as f64 } else { 0.0 })
        .collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(id: u64, speed: f64, bytes: f64, bw: f64) -> ClientProfile {
        ClientProfile {
            client_id: ClientId(id),
            speed,
            bandwidth: bw,
            transfer_bytes: bytes,
        }
    }

    #[test]
    fn duration_examples() {
        let clients = [profile(1, 10.0, 1e6, 1e6), profile(2, 10.0, 0.0, 1.0)];
        let one = Assignment {
            clients: vec![ClientAssignment {
                client_id: ClientId(1),
                samples: vec![20],
            }],
            makespan: 3.0,
        };
        assert_eq!(duration_of(&one, &clients).unwrap(), 3.0);
        let two = Assignment {
            clients: vec![
                one.clients[0].clone(),
                ClientAssignment {
                    client_id: ClientId(2),
                    samples: vec![20],
                },
            ],
            makespan: 3.0,
        };
        assert_eq!(duration_of(&two, &clients).unwrap(), 3.0);
        let empty = Assignment {
            clients: vec![],
            makespan: 0.0,
        };
        assert_eq!(duration_of(&empty, &clients).unwrap(), 0.0);
        let zero_speed = [profile(1, 0.0, 1.0, 1.0)];
        assert!(duration_of(&one, &zero_speed).is_err());
    }

    #[test]
    fn samples_within_agrees_with_time() {
        let p = profile(1, 3.0, 1.0, 10.0);
        assert_eq!(p.samples_within(0.05), None);
        assert_eq!(p.samples_within(0.1), Some(0));
        let k = p.samples_within(2.0).unwrap();
        assert!(p.time_for(k) <= 2.0 && p.time_for(k + 1) > 2.0);
    }

    #[test]
    fn validator_catches_each_constraint() {
        let clients = vec![profile(1, 1.0, 0.0, 1.0), profile(2, 1.0, 0.0, 1.0)];
        let q = DistributionQuery::from_dense(vec![3, 2], 1, clients, &[vec![3, 2], vec![1, 2]]).unwrap();
        let ok = Assignment {
            clients: vec![ClientAssignment {
                client_id: ClientId(1),
                samples: vec![3, 2],
            }],
            makespan: 5.0,
        };
        validate_assignment(&q, &ok).unwrap();

        let mut over = ok.clone();
        over.clients[0].samples = vec![4, 1];
        assert!(matches!(validate_assignment(&q, &over), Err(ConstraintViolation::Capacity { .. })));

        let mut short = ok.clone();
        short.clients[0].samples = vec![2, 2];
        short.makespan = 4.0;
        assert!(matches!(validate_assignment(&q, &short), Err(ConstraintViolation::Preference { .. })));

        let split = Assignment {
            clients: vec![
                ClientAssignment {
                    client_id: ClientId(1),
                    samples: vec![2, 2],
                },
                ClientAssignment {
                    client_id: ClientId(2),
                    samples: vec![1, 0],
                },
            ],
            makespan: 4.0,
        };
        assert!(matches!(validate_assignment(&q, &split), Err(ConstraintViolation::Budget { .. })));

        let mut wrong = ok.clone();
        wrong.makespan = 1.0;
        assert!(matches!(validate_assignment(&q, &wrong), Err(ConstraintViolation::Makespan { .. })));
    }

    #[test]
    fn representative_sums_to_total() {
        assert_eq!(representative_preference(&[0.5, 0.3, 0.2], 100), vec![50, 30, 20]);
        assert_eq!(representative_preference(&[1.0, 1.0, 1.0], 100), vec![34, 33, 33]);
        assert_eq!(representative_preference(&[0.0, 0.0], 10), vec![0, 0]);
    }

    proptest! {
        #[test]
        fn representative_is_largest_remainder(
            weights in prop::collection::vec(0.0f64..10.0, 1..30),
            total in 0u64..100_000,
        ) {
            prop_assume!(weights.iter().any(|&w| w > 0.0));
            let counts = representative_preference(&weights, total);
            prop_assert_eq!(counts.iter().sum::<u64>(), total);
            let mass: f64 = weights.iter().sum();
            for (c, w) in counts.iter().zip(&weights) {
                let quota = w / mass * total as f64;
                prop_assert!((*c as f64 - quota).abs() < 1.0 + 1e-9);
            }
        }
    }
}
