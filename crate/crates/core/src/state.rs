//! Standardized state features and reward, both measured against the
//! reference (first) run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::variables::{PerformanceStats, Profile};

/// Denominator floor for fractional features.
pub const FEATURE_EPS: f64 = 1e-9;
/// Fractional features are clipped to this magnitude so a near-zero baseline
/// cannot produce unbounded inputs.
pub const FEATURE_LIMIT: f64 = 10.0;
pub const REWARD_FLOOR: f64 = -10.0;
pub const REWARD_CEIL: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReferenceBaseline<T> {
    pub stats: BTreeMap<String, PerformanceStats<T>>,
    pub nprocs_ref: u32,
}

impl<T: Scalar> ReferenceBaseline<T> {
    pub fn capture(
        profile: &Profile,
        stats: &BTreeMap<String, PerformanceStats<T>>,
        nprocs: u32,
    ) -> Result<Self> {
        if nprocs == 0 {
            return Err(Error::Invariant("nprocs must be positive".into()));
        }
        let total = stats
            .get(&profile.total_time_variable)
            .and_then(|s| s.mean())
            .ok_or_else(|| Error::MissingTotalTime(profile.total_time_variable.clone()))?;
        if !(total > T::zero()) {
            return Err(Error::NonPositiveBaseline(total.to_f64_lossy()));
        }
        let stats = profile
            .performance
            .iter()
            .map(|p| {
                let s = stats
                    .get(&p.name)
                    .cloned()
                    .unwrap_or_else(PerformanceStats::absent);
                (p.name.clone(), s)
            })
            .collect();
        Ok(Self {
            stats,
            nprocs_ref: nprocs,
        })
    }

    pub fn total_time(&self, profile: &Profile) -> T {
        self.stats
            .get(&profile.total_time_variable)
            .and_then(|s| s.mean())
            .expect("baseline carries total time")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct StateVector<T>(pub Vec<T>);

impl<T: Scalar> StateVector<T> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct Reward<T>(pub T);

impl<T: Scalar> Reward<T> {
    pub fn value(self) -> T {
        self.0
    }
}

pub fn relativize<T: Scalar>(baseline_value: T, current_value: T) -> T {
    baseline_value - current_value
}

/// Two features per performance variable plus the process count.
pub fn state_dim(profile: &Profile) -> usize {
    2 * profile.performance.len() + 1
}

fn fractional<T: Scalar>(baseline: Option<T>, current: Option<T>) -> T {
    match (baseline, current) {
        (Some(b), Some(c)) => {
            let denom = b.abs().max(T::lit(FEATURE_EPS));
            let limit = T::lit(FEATURE_LIMIT);
            (relativize(b, c) / denom).max(-limit).min(limit)
        }
        _ => T::zero(),
    }
}

pub fn nprocs_feature<T: Scalar>(nprocs: u32) -> T {
    T::lit((nprocs.max(1) as f64).log2() / 16.0)
}

pub fn build_state<T: Scalar>(
    profile: &Profile,
    stats: &BTreeMap<String, PerformanceStats<T>>,
    nprocs: u32,
    baseline: Option<&ReferenceBaseline<T>>,
) -> Result<StateVector<T>> {
    let baseline = baseline.ok_or(Error::MissingBaseline)?;
    if nprocs == 0 {
        return Err(Error::Invariant("nprocs must be positive".into()));
    }
    let mut features = Vec::with_capacity(state_dim(profile));
    for var in &profile.performance {
        let base = baseline.stats.get(&var.name);
        let cur = stats.get(&var.name);
        features.push(fractional(
            base.and_then(|s| s.mean()),
            cur.and_then(|s| s.mean()),
        ));
        features.push(fractional(
            base.and_then(|s| s.max()),
            cur.and_then(|s| s.max()),
        ));
    }
    features.push(nprocs_feature(nprocs));
    Ok(StateVector(features))
}

pub fn compute_reward<T: Scalar>(baseline_total: T, current_total: T) -> Result<Reward<T>> {
    if !(baseline_total > T::zero()) || !baseline_total.is_finite() {
        return Err(Error::NonPositiveBaseline(baseline_total.to_f64_lossy()));
    }
    if !current_total.is_finite() {
        return Err(Error::Invariant("non-finite total time".into()));
    }
    let frac = relativize(baseline_total, current_total) / baseline_total;
    Ok(Reward(
        frac.max(T::lit(REWARD_FLOOR)).min(T::lit(REWARD_CEIL)),
    ))
}
