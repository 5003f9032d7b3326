//! Condenses an exploration history into one recommended configuration:
//! drop runs slower than the reference, keep those within a tolerance of the
//! fastest, and take the per-variable median of what remains.

use std::fmt;

use log::warn;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::RunRecord;
use crate::variables::{ControlKind, ControlSetting, ControlVariableSpec, Profile};

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const DEFAULT_MIN_RUNS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecommendationStatus {
    Tuned,
    /// No run beat the reference; defaults are returned.
    NoImprovement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub settings: ControlSetting,
    pub status: RecommendationStatus,
    pub baseline_time: f64,
    pub best_time: Option<f64>,
    /// Run indices of the ensemble members.
    pub kept: Vec<u64>,
}

/// Median of lattice offsets, returned doubled so half steps stay exact.
fn doubled_median(mut offsets: Vec<i64>) -> i64 {
    offsets.sort_unstable();
    let n = offsets.len();
    if n % 2 == 1 {
        2 * offsets[n / 2]
    } else {
        offsets[n / 2 - 1] + offsets[n / 2]
    }
}

fn stepped_median(spec: &ControlVariableSpec, values: &[i64]) -> i64 {
    let offsets = values
        .iter()
        .map(|v| ((v - spec.default) as f64 / spec.step as f64).round() as i64)
        .collect();
    // integer division truncates toward zero: half steps snap to the default side
    let k = doubled_median(offsets) / 2;
    let (lo, hi) = spec.lattice_bounds();
    (spec.default + k * spec.step).clamp(lo, hi)
}

fn majority(spec: &ControlVariableSpec, values: &[i64]) -> i64 {
    let ones = values.iter().filter(|v| **v != 0).count();
    let zeros = values.len() - ones;
    match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => spec.default,
    }
}

pub fn recommend<T: Scalar>(
    runs: &[RunRecord<T>],
    profile: &Profile,
    baseline_time: T,
    tolerance: f64,
    min_runs: usize,
) -> Result<Recommendation> {
    if runs.len() < min_runs {
        return Err(Error::InsufficientRuns {
            have: runs.len(),
            need: min_runs,
        });
    }
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tolerance} must be finite and non-negative"
        )));
    }
    let baseline = baseline_time.to_f64_lossy();
    let timed: Vec<(&RunRecord<T>, f64)> = runs
        .iter()
        .filter_map(|r| r.total_time(profile).map(|t| (r, t.to_f64_lossy())))
        .filter(|(_, t)| *t <= baseline)
        .collect();
    let best = timed.iter().map(|(_, t)| *t).fold(f64::INFINITY, f64::min);
    if !(best < baseline) {
        warn!("no run improved on the reference; recommending defaults");
        return Ok(Recommendation {
            settings: ControlSetting::defaults(profile),
            status: RecommendationStatus::NoImprovement,
            baseline_time: baseline,
            best_time: best.is_finite().then_some(best),
            kept: Vec::new(),
        });
    }
    let cutoff = best * (1.0 + tolerance);
    let mut kept: Vec<&RunRecord<T>> = timed
        .iter()
        .filter(|(_, t)| *t <= cutoff)
        .map(|(r, _)| *r)
        .collect();
    kept.sort_by_key(|r| r.run_index);

    let mut settings = ControlSetting::default();
    for spec in &profile.controls {
        let values: Vec<i64> = kept
            .iter()
            .map(|r| r.settings.get(&spec.name).unwrap_or(spec.default))
            .collect();
        let v = match spec.kind {
            ControlKind::SteppedNumeric => stepped_median(spec, &values),
            ControlKind::Binary => majority(spec, &values),
        };
        settings.set(&spec.name, v);
    }
    Ok(Recommendation {
        settings,
        status: RecommendationStatus::Tuned,
        baseline_time: baseline,
        best_time: Some(best),
        kept: kept.iter().map(|r| r.run_index).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpread {
    pub name: String,
    pub recommended: i64,
    pub default: i64,
    pub kept_min: i64,
    pub kept_max: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub baseline_time: f64,
    pub best_time: Option<f64>,
    pub kept: usize,
    pub status: RecommendationStatus,
    pub recommended: Vec<(String, i64)>,
    /// Variables moved away from their default, with the range seen in the ensemble.
    pub spread: Vec<VariableSpread>,
}

pub fn report<T: Scalar>(runs: &[RunRecord<T>], profile: &Profile, rec: &Recommendation) -> Summary {
    let kept: Vec<&RunRecord<T>> = runs.iter().filter(|r| rec.kept.contains(&r.run_index)).collect();
    let mut recommended = Vec::new();
    let mut spread = Vec::new();
    for spec in &profile.controls {
        let value = rec.settings.get(&spec.name).unwrap_or(spec.default);
        recommended.push((spec.name.clone(), value));
        if value == spec.default || kept.is_empty() {
            continue;
        }
        let values = kept.iter().filter_map(|r| r.settings.get(&spec.name));
        let (lo, hi) = values.fold((i64::MAX, i64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        spread.push(VariableSpread {
            name: spec.name.clone(),
            recommended: value,
            default: spec.default,
            kept_min: lo,
            kept_max: hi,
        });
    }
    Summary {
        runs: runs.len(),
        baseline_time: rec.baseline_time,
        best_time: rec.best_time,
        kept: rec.kept.len(),
        status: rec.status,
        recommended,
        spread,
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "runs analysed:   {}", self.runs)?;
        writeln!(f, "baseline time:   {:.6}", self.baseline_time)?;
        match self.best_time {
            Some(t) => writeln!(f, "best time:       {t:.6}")?,
            None => writeln!(f, "best time:       n/a")?,
        }
        writeln!(f, "kept runs:       {}", self.kept)?;
        if self.status == RecommendationStatus::NoImprovement {
            writeln!(f, "warning: no run improved on the baseline; defaults returned")?;
        }
        writeln!(f, "recommendation:")?;
        for (name, v) in &self.recommended {
            writeln!(f, "  {name} = {v}")?;
        }
        writeln!(f, "spread:")?;
        for s in &self.spread {
            writeln!(
                f,
                "  {}: {} (default {}, kept range {}..={})",
                s.name, s.recommended, s.default, s.kept_min, s.kept_max
            )?;
        }
        Ok(())
    }
}
