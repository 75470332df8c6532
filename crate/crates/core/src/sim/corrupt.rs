use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::workload::SimWorld;

/// Label-flipping modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Flip every label on a random fraction of clients.
    Clients { fraction: f64 },
    /// Flip a random subset of each client's labels at the given rate.
    Data { rate: f64 },
}

fn flip<R: Rng + ?Sized>(label: usize, classes: usize, rng: &mut R) -> usize {
    (label + 1 + rng.random_range(0..classes - 1)) % classes
}

/// Flips labels to a different class. Returns the number of clients touched.
pub fn corrupt_clients(world: &mut SimWorld, mode: Corruption, seed: u64) -> usize {
    let classes = world.class_count;
    let n = world.clients.len();
    match mode {
        Corruption::Clients { fraction } => {
            let count = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
            let mut rng = stream_rng(seed, Stream::Corruption, u64::MAX, 0);
            let mut picked: Vec<usize> = index::sample(&mut rng, n, count).into_vec();
            picked.sort_unstable();
            for i in &picked {
                let client = &mut world.clients[*i];
                let mut rng = stream_rng(seed, Stream::Corruption, client.client_id.0, 0);
                for y in &mut client.labels {
                    *y = flip(*y, classes, &mut rng);
                }
                client.corrupted = true;
            }
            picked.len()
        }
        Corruption::Data { rate } => {
            let rate = rate.clamp(0.0, 1.0);
            let mut touched = 0;
            for client in &mut world.clients {
                let m = client.labels.len();
                let count = (rate * m as f64).round() as usize;
                if count == 0 {
                    continue;
                }
                let mut rng = stream_rng(seed, Stream::Corruption, client.client_id.0, 1);
                for k in index::sample(&mut rng, m, count) {
                    client.labels[k] = flip(client.labels[k], classes, &mut rng);
                }
                client.corrupted = true;
                touched += 1;
            }
            touched
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate_population, PopulationSpec};

    fn world() -> SimWorld {
        generate_population(&PopulationSpec {
            client_count: 50,
            feature_dim: 2,
            test_samples: 10,
            ..PopulationSpec::canonical(11)
        })
        .unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let base = world();
        for mode in [Corruption::Clients { fraction: 0.0 }, Corruption::Data { rate: 0.0 }] {
            let mut w = base.clone();
            assert_eq!(corrupt_clients(&mut w, mode, 1), 0);
            assert_eq!(w, base);
        }
    }

    #[test]
    fn full_fraction_flips_every_label() {
        let base = world();
        let mut w = base.clone();
        assert_eq!(corrupt_clients(&mut w, Corruption::Clients { fraction: 1.0 }, 1), 50);
        for (a, b) in w.clients.iter().zip(&base.clients) {
            assert!(a.corrupted);
            assert!(a.labels.iter().zip(&b.labels).all(|(x, y)| x != y));
        }
    }

    #[test]
    fn partial_fraction_and_rate() {
        let base = world();
        let mut w = base.clone();
        assert_eq!(corrupt_clients(&mut w, Corruption::Clients { fraction: 0.1 }, 2), 5);
        assert_eq!(w.clients.iter().filter(|c| c.corrupted).count(), 5);

        let mut w = base.clone();
        corrupt_clients(&mut w, Corruption::Data { rate: 0.5 }, 3);
        for (a, b) in w.clients.iter().zip(&base.clients) {
            let flipped = a.labels.iter().zip(&b.labels).filter(|(x, y)| x != y).count();
            assert_eq!(flipped, (0.5 * b.labels.len() as f64).round() as usize);
        }
    }
}
