//! Greedy two-phase cover for distribution queries.
//!
//! Phase one grows a client subset, each time adding the client holding the
//! most samples across categories that are still short. Phase two minimizes
//! the makespan over that subset alone: a binary search on the makespan
//! where every probe is an exact max-flow feasibility check.

use thiserror::Error;

use super::flow::FlowNetwork;
use super::query::{Assignment, ClientAssignment, DistributionQuery};
use crate::metastore::ClientId;

#[derive(Debug, Error, PartialEq)]
pub enum CoverError {
    #[error("preference cannot be met; shortfall per category: {shortfalls:?}")]
    Infeasible { shortfalls: Vec<(usize, u64)> },
    #[error("covering the preference needs {required} participants, budget is {budget}")]
    BudgetExceeded { required: usize, budget: usize },
    #[error("instance with {clients} clients and {categories} categories exceeds the exact solver guard")]
    SizeGuard { clients: usize, categories: usize },
    #[error("client {0} has a nonpositive speed or bandwidth")]
    InvalidProfile(ClientId),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

pub fn greedy_cover(q: &DistributionQuery) -> Result<Assignment, CoverError> {
    let shortfalls = q.shortfalls();
    if !shortfalls.is_empty() {
        return Err(CoverError::Infeasible { shortfalls });
    }
    let subset = greedy_subset(q);
    if subset.len() > q.budget {
        return Err(CoverError::BudgetExceeded {
            required: subset.len(),
            budget: q.budget,
        });
    }
    optimize_subset(q, &subset).ok_or_else(|| CoverError::Infeasible {
        shortfalls: q.shortfalls(),
    })
}

/// Phase one. Returns client indices in pick order.
pub(crate) fn greedy_subset(q: &DistributionQuery) -> Vec<usize> {
    let mut remaining = q.preference.clone();
    let mut left: u64 = remaining.iter().sum();
    let mut taken = vec![false; q.clients.len()];
    let mut picked = Vec::new();
    while left > 0 {
        let mut best: Option<(u64, ClientId, usize)> = None;
        for (n, row) in q.capacity.iter().enumerate() {
            if taken[n] {
                continue;
            }
            let score: u64 = row.iter().map(|&(i, c)| c.min(remaining[i])).sum();
            if score == 0 {
                continue;
            }
            let id = q.clients[n].client_id;
            let better = match best {
                None => true,
                Some((s, bid, _)) => score > s || (score == s && id < bid),
            };
            if better {
                best = Some((score, id, n));
            }
        }
        let Some((score, _, n)) = best else { break };
        taken[n] = true;
        picked.push(n);
        for &(i, c) in &q.capacity[n] {
            remaining[i] -= c.min(remaining[i]);
        }
        left -= score;
    }
    picked
}

/// Phase two: the least makespan achievable using only `subset`, with no
/// budget limit. None when the subset cannot cover the preference.
pub(crate) fn optimize_subset(q: &DistributionQuery, subset: &[usize]) -> Option<Assignment> {
    let needed: u64 = q.preference.iter().sum();
    let upper = subset
        .iter()
        .map(|&n| q.clients[n].time_for(q.capacity[n].iter().map(|&(_, c)| c).sum()))
        .fold(0.0f64, f64::max);
    let mut hi = upper;
    let mut best = route(q, subset, hi)?;
    if best.1 < needed {
        return None;
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.max(f64::MIN_POSITIVE) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match route(q, subset, mid) {
            Some(found) if found.1 == needed => {
                hi = mid;
                best = found;
            }
            _ => lo = mid,
        }
    }
    let mut clients: Vec<ClientAssignment> = best.0.into_iter().filter(|c| c.total() > 0).collect();
    clients.sort_by_key(|c| c.client_id);
    let mut a = Assignment {
        clients,
        makespan: 0.0,
    };
    a.makespan = super::query::duration_of(&a, &q.clients).ok()?;
    Some(a)
}

/// Routes as many preferred samples as possible with every client finishing
/// within `makespan`. Returns the per-client assignment and the routed total.
fn route(q: &DistributionQuery, subset: &[usize], makespan: f64) -> Option<(Vec<ClientAssignment>, u64)> {
    let cats = q.categories();
    let source = 0;
    let sink = 1;
    let cat_node = |i: usize| 2 + i;
    let client_node = |k: usize| 2 + cats + k;
    let mut g = FlowNetwork::new(2 + cats + subset.len());
    for (i, &p) in q.preference.iter().enumerate() {
        if p > 0 {
            g.add_edge(cat_node(i), sink, p);
        }
    }
    let mut handles = Vec::with_capacity(subset.len());
    for (k, &n) in subset.iter().enumerate() {
        let budget = q.clients[n].samples_within(makespan).unwrap_or(0);
        let mut edges = Vec::new();
        if budget > 0 {
            g.add_edge(source, client_node(k), budget);
            for &(i, c) in &q.capacity[n] {
                if q.preference[i] > 0 {
                    edges.push((i, g.add_edge(client_node(k), cat_node(i), c)));
                }
            }
        }
        handles.push(edges);
    }
    let routed = g.max_flow(source, sink);
    let clients = subset
        .iter()
        .zip(handles)
        .map(|(&n, edges)| {
            let mut samples = vec![0u64; cats];
            for (i, h) in edges {
                samples[i] = g.flow_on(h);
            }
            ClientAssignment {
                client_id: q.clients[n].client_id,
                samples,
            }
        })
        .collect();
    Some((clients, routed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::query::{validate_assignment, ClientProfile};

    fn profiles(n: usize) -> Vec<ClientProfile> {
        (0..n)
            .map(|i| ClientProfile {
                client_id: ClientId(i as u64),
                speed: 1.0,
                bandwidth: 1.0,
                transfer_bytes: 1.0,
            })
            .collect()
    }

    #[test]
    fn exact_cover_of_two_categories() {
        let q = DistributionQuery::from_dense(vec![5, 5], 2, profiles(2), &[vec![5, 0], vec![0, 5]]).unwrap();
        let a = greedy_cover(&q).unwrap();
        validate_assignment(&q, &a).unwrap();
        assert_eq!(a.clients.len(), 2);
        assert_eq!(a.clients[0].samples, vec![5, 0]);
        assert_eq!(a.clients[1].samples, vec![0, 5]);
        assert_eq!(a.makespan, 6.0);
    }

    #[test]
    fn picks_the_two_large_clients() {
        let q = DistributionQuery::from_dense(vec![10, 0], 2, profiles(3), &[vec![5, 0], vec![5, 0], vec![3, 0]])
            .unwrap();
        assert_eq!(greedy_subset(&q), vec![0, 1]);
        let a = greedy_cover(&q).unwrap();
        validate_assignment(&q, &a).unwrap();
        let ids: Vec<_> = a.clients.iter().map(|c| c.client_id.0).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn infeasible_lists_shortfall() {
        let q = DistributionQuery::from_dense(vec![10], 2, profiles(1), &[vec![5]]).unwrap();
        assert_eq!(
            greedy_cover(&q),
            Err(CoverError::Infeasible {
                shortfalls: vec![(0, 5)]
            })
        );
    }

    #[test]
    fn budget_exceeded_reports_requirement() {
        let q = DistributionQuery::from_dense(vec![9], 2, profiles(3), &[vec![3], vec![3], vec![3]]).unwrap();
        assert_eq!(
            greedy_cover(&q),
            Err(CoverError::BudgetExceeded { required: 3, budget: 2 })
        );
    }

    #[test]
    fn phase_two_balances_load() {
        // One preferred category; two identical clients share the work.
        let q = DistributionQuery::from_dense(vec![10], 2, profiles(2), &[vec![10], vec![10]]).unwrap();
        let a = greedy_cover(&q).unwrap();
        validate_assignment(&q, &a).unwrap();
        // Phase one needs only client 0, so phase two cannot split.
        assert_eq!(a.makespan, 11.0);
        let both = optimize_subset(&q, &[0, 1]).unwrap();
        assert_eq!(both.makespan, 6.0);
    }

    #[test]
    fn scoring_caps_at_remaining_preference() {
        // Client 0 holds a huge surplus of a nearly met category; client 1
        // covers more of what is still missing.
        let q = DistributionQuery::from_dense(vec![2, 6], 3, profiles(2), &[vec![100, 1], vec![1, 5]]).unwrap();
        assert_eq!(greedy_subset(&q), vec![1, 0]);
    }
}
