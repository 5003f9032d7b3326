//! Deep Q-learning over the discrete action space.
//!
//! Targets come from the same network that is being trained (semi-gradient
//! TD, no separate target network). Stability relies on reward clamping and
//! periodic replay over the full experience.

mod actions;
mod network;
mod policy;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use actions::{enumerate_actions, Action, ActionSpace};
pub use network::{DenseLayer, ForwardTrace, Gradients, QNetwork};
pub use policy::{argmax, select_action, ExplorationSchedule};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::state::StateVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub discount: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub replay_interval: u64,
    pub exploration: ExplorationSchedule,
    /// Apply one TD update per completed run in addition to periodic replay.
    pub online_updates: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            learning_rate: 0.01,
            hidden: vec![32, 32],
            batch_size: 64,
            replay_interval: 200,
            exploration: ExplorationSchedule::default(),
            online_updates: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidArgument(format!(
                "discount {} must be in [0, 1)",
                self.discount
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        let e = &self.exploration;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return Err(Error::InvalidArgument("epsilon must lie in [0, 1]".into()));
        }
        if self.replay_interval == 0 {
            return Err(Error::InvalidArgument("replay interval must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer of width 0".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, state_dim: usize, actions: usize) -> Vec<usize> {
        let mut sizes = vec![state_dim];
        sizes.extend(&self.hidden);
        sizes.push(actions);
        sizes
    }

    pub fn build_network<T: Scalar, R: Rng + ?Sized>(
        &self,
        state_dim: usize,
        actions: usize,
        rng: &mut R,
    ) -> QNetwork<T> {
        QNetwork::new(
            &self.layer_sizes(state_dim, actions),
            T::lit(self.learning_rate),
            T::lit(self.discount),
            rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transition<T> {
    pub state: StateVector<T>,
    pub action: usize,
    pub reward: T,
    pub next_state: StateVector<T>,
}

impl<T: Scalar> Transition<T> {
    pub fn validate(&self, actions: usize) -> Result<()> {
        if self.state.dim() != self.next_state.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state.dim(),
                got: self.next_state.dim(),
            });
        }
        if self.action >= actions {
            return Err(Error::Invariant(format!(
                "action {} out of range {actions}",
                self.action
            )));
        }
        Ok(())
    }
}

/// Every transition ever observed, in arrival order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct ReplayBuffer<T> {
    transitions: Vec<Transition<T>>,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new() -> Self {
        Self {
            transitions: Vec::new(),
        }
    }

    pub fn push(&mut self, t: Transition<T>) {
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn as_slice(&self) -> &[Transition<T>] {
        &self.transitions
    }

    pub fn truncate(&mut self, len: usize) {
        self.transitions.truncate(len);
    }

    /// Uniform sample of `min(n, len)` distinct transitions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition<T>> {
        let amount = n.min(self.len());
        rand::seq::index::sample(rng, self.len(), amount)
            .into_iter()
            .map(|i| &self.transitions[i])
            .collect()
    }
}

impl<T> From<Vec<Transition<T>>> for ReplayBuffer<T> {
    fn from(transitions: Vec<Transition<T>>) -> Self {
        Self { transitions }
    }
}

/// `reward + discount * max(next_q)`.
pub fn td_target<T: Scalar>(reward: T, discount: T, next_q: &[T]) -> T {
    let best = next_q
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    if next_q.is_empty() || discount == T::zero() {
        return reward;
    }
    reward + discount * best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome<T> {
    /// Update applied; `loss` is measured before the step.
    Applied { loss: T },
    /// Non-finite loss or update; parameters left unchanged.
    Skipped,
}

impl<T: Scalar> QNetwork<T> {
    /// Target (held constant), prediction and loss `0.5 * (target - prediction)^2`
    /// together with the parameter gradients of that loss.
    pub fn td_gradients(&self, t: &Transition<T>) -> Result<(T, T, Gradients<T>)> {
        t.validate(self.output_dim())?;
        let next_q = self.forward(t.next_state.as_slice())?;
        let target = td_target(t.reward, self.discount, &next_q);
        let trace = self.trace(t.state.as_slice())?;
        let prediction = trace.output()[t.action];
        let err = prediction - target;
        let loss = T::lit(0.5) * err * err;
        let mut d_out = vec![T::zero(); self.output_dim()];
        d_out[t.action] = err;
        Ok((target, loss, self.backward(&trace, &d_out)))
    }

    /// One gradient step on the TD loss of `t`.
    pub fn train_step(&mut self, t: &Transition<T>) -> Result<TrainOutcome<T>> {
        let (_, loss, grads) = self.td_gradients(t)?;
        if !loss.is_finite() || !grads.flat().iter().all(|g| g.is_finite()) {
            warn!("non-finite TD loss; update skipped");
            return Ok(TrainOutcome::Skipped);
        }
        let before = self.clone();
        self.apply_gradients(&grads, self.learning_rate);
        if !self.is_finite() {
            warn!("update produced non-finite parameters; reverted");
            *self = before;
            return Ok(TrainOutcome::Skipped);
        }
        Ok(TrainOutcome::Applied { loss })
    }
}

/// Trains on a uniform sample of the whole buffer when `run_index` is a
/// positive multiple of `interval`. Returns the number of updates performed.
pub fn replay<T: Scalar, R: Rng + ?Sized>(
    net: &mut QNetwork<T>,
    buffer: &ReplayBuffer<T>,
    run_index: u64,
    interval: u64,
    batch_size: usize,
    rng: &mut R,
) -> Result<usize> {
    if !replay_due(run_index, interval) || buffer.is_empty() {
        return Ok(0);
    }
    let batch = buffer.sample(batch_size, rng);
    for t in &batch {
        net.train_step(t)?;
    }
    Ok(batch.len())
}

pub fn replay_due(run_index: u64, interval: u64) -> bool {
    interval > 0 && run_index > 0 && run_index.is_multiple_of(interval)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub analytic_norm: f64,
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU, where finite
    /// differences are meaningless.
    pub skipped: usize,
}

/// Relative error floor so vanishing gradients do not blow up the ratio.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the TD loss with central differences,
/// holding the TD target fixed.
pub fn gradient_check<T: Scalar>(net: &QNetwork<T>, t: &Transition<T>, h: T) -> Result<GradientCheck> {
    let (target, _, grads) = net.td_gradients(t)?;
    let analytic = grads.flat();
    let loss_at = |n: &QNetwork<T>| -> Result<(T, Vec<bool>)> {
        let trace = n.trace(t.state.as_slice())?;
        let e = trace.output()[t.action] - target;
        Ok((T::lit(0.5) * e * e, trace.activation_pattern()))
    };
    let mut probe = net.clone();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(i).expect("parameter index");
        *probe.param_mut(i).expect("parameter index") = original + h;
        let (plus, pattern_plus) = loss_at(&probe)?;
        *probe.param_mut(i).expect("parameter index") = original - h;
        let (minus, pattern_minus) = loss_at(&probe)?;
        *probe.param_mut(i).expect("parameter index") = original;
        if pattern_plus != pattern_minus {
            skipped += 1;
            continue;
        }
        let numeric = ((plus - minus) / (h + h)).to_f64_lossy();
        let a = a.to_f64_lossy();
        let denom = a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
        max_rel = max_rel.max((a - numeric).abs() / denom);
        checked += 1;
    }
    Ok(GradientCheck {
        max_rel_error: max_rel,
        analytic_norm: grads.norm().to_f64_lossy(),
        checked,
        skipped,
    })
}
