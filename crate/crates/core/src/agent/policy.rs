use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::QNetwork;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::state::StateVector;

/// Linear epsilon decay over the first `decay_runs` runs, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_runs: u64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_runs: 20,
        }
    }
}

impl ExplorationSchedule {
    pub fn constant(epsilon: f64) -> Self {
        Self {
            start: epsilon,
            end: epsilon,
            decay_runs: 1,
        }
    }

    /// Epsilon for the action chosen at the end of run `run_index` (1-based).
    pub fn epsilon(&self, run_index: u64) -> f64 {
        if self.decay_runs <= 1 || run_index >= self.decay_runs {
            return self.end;
        }
        let k = run_index.saturating_sub(1) as f64;
        let span = (self.decay_runs - 1) as f64;
        self.start + (self.end - self.start) * k / span
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over the network's Q-values.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    net: &QNetwork<T>,
    state: &StateVector<T>,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let q = net.forward(state.as_slice())?;
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(argmax(&q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::network::DenseLayer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Net whose output is exactly its bias vector.
    fn constant_net(q: &[f64]) -> QNetwork<f64> {
        let mut l = DenseLayer::zeros(2, q.len());
        l.bias = q.to_vec();
        QNetwork::from_layers(vec![l], 0.01, 0.9).unwrap()
    }

    #[test]
    fn greedy_picks_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = constant_net(&[0.1, 0.9, 0.3]);
        let s = StateVector(vec![0.0, 0.0]);
        assert_eq!(select_action(&net, &s, 0.0, &mut rng).unwrap(), 1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = constant_net(&[0.5, 0.5]);
        let s = StateVector(vec![0.0, 0.0]);
        assert_eq!(select_action(&net, &s, 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let k = 9;
        let net = constant_net(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = StateVector(vec![0.0, 0.0]);
        let n = 10_000;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[select_action(&net, &s, 1.0, &mut rng).unwrap()] += 1;
        }
        let expected = n as f64 / k as f64;
        let sigma = (n as f64 * (1.0 / k as f64) * (1.0 - 1.0 / k as f64)).sqrt();
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
        // 99.9th percentile of chi-square with 8 degrees of freedom
        assert!(chi2 < 26.12, "chi2 = {chi2}");
    }

    #[test]
    fn schedule_decays_linearly_then_holds() {
        let s = ExplorationSchedule::default();
        assert_eq!(s.epsilon(1), 1.0);
        assert!((s.epsilon(11) - (1.0 - 0.95 * 10.0 / 19.0)).abs() < 1e-12);
        assert!((s.epsilon(20) - 0.05).abs() < 1e-12);
        assert_eq!(s.epsilon(500), 0.05);
        assert_eq!(ExplorationSchedule::constant(1.0).epsilon(3), 1.0);
    }

    #[test]
    fn greedy_choice_invariant_to_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c = rng.random_range(-100.0..100.0);
            let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
            assert_eq!(argmax(&q), argmax(&shifted));
        }
    }
}
