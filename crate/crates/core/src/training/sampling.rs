//! Weighted sampling without replacement by sequential draws.

use rand::Rng;

/// Draws `count` distinct indices with probability proportional to
/// `weights`, renormalizing after every draw. Once the remaining weight is
/// zero the rest are drawn uniformly. Callers fix item order (client-id
/// order) so results are reproducible for a given generator state.
pub fn weighted_without_replacement<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let count = count.min(weights.len());
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|&i| sanitize(weights[i])).sum();
        let pos = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (pos, &i) in remaining.iter().enumerate() {
                let w = sanitize(weights[i]);
                acc += w;
                if w > 0.0 && target < acc {
                    chosen = Some(pos);
                    break;
                }
            }
            // Rounding can leave target just past the last positive weight.
            chosen.unwrap_or_else(|| {
                remaining
                    .iter()
                    .rposition(|&i| sanitize(weights[i]) > 0.0)
                    .expect("positive total")
            })
        } else {
            rng.random_range(0..remaining.len())
        };
        picked.push(remaining.remove(pos));
    }
    picked
}

fn sanitize(w: f64) -> f64 {
    if w.is_finite() && w > 0.0 {
        w
    } else {
        0.0
    }
}
