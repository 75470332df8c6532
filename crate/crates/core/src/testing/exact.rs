//! Exact makespan minimization for small distribution queries.
//!
//! Branch and bound over client inclusion. A node's lower bound is the
//! optimum over its included clients plus every undecided one with the
//! budget relaxed; the leaf value is the optimum over a fixed subset.
//! Both come from the same exact per-subset solver used by the greedy
//! cover's second phase, so the returned makespan is globally optimal.

use super::cover::{greedy_cover, greedy_subset, optimize_subset, CoverError};
use super::query::{Assignment, DistributionQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactLimits {
    pub max_clients: usize,
    pub max_categories: usize,
}

impl Default for ExactLimits {
    fn default() -> Self {
        Self {
            max_clients: 20,
            max_categories: 5,
        }
    }
}

pub fn exact_milp(q: &DistributionQuery) -> Result<Assignment, CoverError> {
    exact_milp_with_limits(q, ExactLimits::default())
}

pub fn exact_milp_with_limits(q: &DistributionQuery, limits: ExactLimits) -> Result<Assignment, CoverError> {
    if q.clients.len() > limits.max_clients || q.categories() > limits.max_categories {
        return Err(CoverError::SizeGuard {
            clients: q.clients.len(),
            categories: q.categories(),
        });
    }
    let shortfalls = q.shortfalls();
    if !shortfalls.is_empty() {
        return Err(CoverError::Infeasible { shortfalls });
    }

    // Larger clients first tend to find good incumbents early.
    let mut order: Vec<usize> = (0..q.clients.len()).collect();
    order.sort_by_key(|&n| {
        let total: u64 = q.capacity[n]
            .iter()
            .filter(|&&(i, _)| q.preference[i] > 0)
            .map(|&(_, c)| c)
            .sum();
        (std::cmp::Reverse(total), q.clients[n].client_id)
    });

    let mut search = Search {
        q,
        order,
        best: greedy_cover(q).ok(),
    };
    search.branch(&mut Vec::new(), 0);
    search.best.ok_or_else(|| CoverError::BudgetExceeded {
        required: greedy_subset(q).len().max(q.budget + 1),
        budget: q.budget,
    })
}

struct Search<'a> {
    q: &'a DistributionQuery,
    order: Vec<usize>,
    best: Option<Assignment>,
}

impl Search<'_> {
    fn improves(&self, makespan: f64) -> bool {
        self.best.as_ref().is_none_or(|b| makespan < b.makespan)
    }

    fn offer(&mut self, a: Assignment) {
        if a.participants() <= self.q.budget && self.improves(a.makespan) {
            self.best = Some(a);
        }
    }

    fn branch(&mut self, included: &mut Vec<usize>, next: usize) {
        let undecided = &self.order[next..];
        let mut relaxed = included.clone();
        relaxed.extend_from_slice(undecided);
        let Some(bound) = optimize_subset(self.q, &relaxed) else {
            return;
        };
        if !self.improves(bound.makespan) {
            return;
        }
        if relaxed.len() <= self.q.budget {
            self.offer(bound);
            return;
        }
        if included.len() == self.q.budget {
            if let Some(a) = optimize_subset(self.q, included) {
                self.offer(a);
            }
            return;
        }
        let pick = self.order[next];
        included.push(pick);
        self.branch(included, next + 1);
        included.pop();
        self.branch(included, next + 1);
    }
}
