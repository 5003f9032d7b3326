//! Control and performance variable model.
//!
//! A [`Profile`] is the static description of one communication layer: the
//! knobs the tuner may turn and the metrics it observes. Profiles are stored as
//! JSON (see `profiles/mpich.profile` for the annotated reference profile).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    Binary,
    SteppedNumeric,
}

fn default_step() -> i64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlVariableSpec {
    pub name: String,
    /// Environment variable the library reads this knob from, if it differs from `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_name: Option<String>,
    pub kind: ControlKind,
    pub default: i64,
    pub min: i64,
    pub max: i64,
    #[serde(default = "default_step")]
    pub step: i64,
    #[serde(default)]
    pub description: String,
}

impl ControlVariableSpec {
    pub fn binary(name: &str, default: i64) -> Self {
        Self {
            name: name.to_string(),
            env_name: None,
            kind: ControlKind::Binary,
            default,
            min: 0,
            max: 1,
            step: 1,
            description: String::new(),
        }
    }

    pub fn stepped(name: &str, default: i64, min: i64, max: i64, step: i64) -> Self {
        Self {
            name: name.to_string(),
            env_name: None,
            kind: ControlKind::SteppedNumeric,
            default,
            min,
            max,
            step,
            description: String::new(),
        }
    }

    pub fn export_name(&self) -> &str {
        self.env_name.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invariant(format!("control `{}`: {msg}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Invariant("control variable with empty name".into()));
        }
        if self.min > self.max {
            return bad(format!("min {} > max {}", self.min, self.max));
        }
        if self.default < self.min || self.default > self.max {
            return bad(format!(
                "default {} outside [{}, {}]",
                self.default, self.min, self.max
            ));
        }
        match self.kind {
            ControlKind::Binary => {
                if self.min != 0 || self.max != 1 {
                    return bad("binary variables must have min 0 and max 1".into());
                }
            }
            ControlKind::SteppedNumeric => {
                if self.step < 1 {
                    return bad(format!("step {} must be >= 1", self.step));
                }
                if self.max - self.min < self.step {
                    return bad(format!(
                        "range [{}, {}] narrower than step {}",
                        self.min, self.max, self.step
                    ));
                }
            }
        }
        Ok(())
    }

    /// Smallest and largest values on the step lattice anchored at `default`.
    pub fn lattice_bounds(&self) -> (i64, i64) {
        match self.kind {
            ControlKind::Binary => (0, 1),
            ControlKind::SteppedNumeric => (
                self.default - (self.default - self.min) / self.step * self.step,
                self.default + (self.max - self.default) / self.step * self.step,
            ),
        }
    }

    pub fn is_legal(&self, value: i64) -> bool {
        let (lo, hi) = self.lattice_bounds();
        if value < lo || value > hi {
            return false;
        }
        match self.kind {
            ControlKind::Binary => true,
            ControlKind::SteppedNumeric => (value - self.default).rem_euclid(self.step) == 0,
        }
    }

    /// All legal values in increasing order.
    pub fn lattice(&self) -> Vec<i64> {
        let (lo, hi) = self.lattice_bounds();
        let step = match self.kind {
            ControlKind::Binary => 1,
            ControlKind::SteppedNumeric => self.step,
        };
        (0..=(hi - lo) / step).map(|k| lo + k * step).collect()
    }
}

/// Current value of every control variable.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlSetting {
    pub values: BTreeMap<String, i64>,
}

impl ControlSetting {
    pub fn defaults(profile: &Profile) -> Self {
        Self {
            values: profile
                .controls
                .iter()
                .map(|c| (c.name.clone(), c.default))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.values.get(name).copied()
    }

    pub fn set(&mut self, name: &str, value: i64) {
        self.values.insert(name.to_string(), value);
    }

    /// Checks every value against its spec's lattice and that no variable is missing.
    pub fn validate(&self, profile: &Profile) -> Result<()> {
        for spec in &profile.controls {
            let value = self
                .get(&spec.name)
                .ok_or_else(|| Error::UnknownVariable(spec.name.clone()))?;
            if !spec.is_legal(value) {
                return Err(Error::Invariant(format!(
                    "value {value} is not legal for `{}`",
                    spec.name
                )));
            }
        }
        if let Some(extra) = self
            .values
            .keys()
            .find(|k| profile.control(k).is_none())
        {
            return Err(Error::UnknownVariable(extra.clone()));
        }
        Ok(())
    }

    /// Number of variables whose value differs from `other`.
    pub fn diff_count(&self, other: &ControlSetting) -> usize {
        self.values
            .iter()
            .filter(|(k, v)| other.values.get(*k) != Some(*v))
            .count()
    }

    /// `NAME=VALUE` lines in profile order, using each variable's export name.
    pub fn to_env_lines(&self, profile: &Profile) -> String {
        let mut out = String::new();
        for spec in &profile.controls {
            if let Some(v) = self.get(&spec.name) {
                out.push_str(&format!("{}={}\n", spec.export_name(), v));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableSource {
    Builtin,
    UserDefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceVariableSpec {
    pub name: String,
    pub source: VariableSource,
    pub relative: bool,
    pub valid_min: f64,
    pub valid_max: f64,
    pub unit: String,
}

impl PerformanceVariableSpec {
    pub fn new(name: &str, relative: bool, valid_min: f64, valid_max: f64, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            source: VariableSource::UserDefined,
            relative,
            valid_min,
            valid_max,
            unit: unit.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Invariant("performance variable with empty name".into()));
        }
        if !(self.valid_min < self.valid_max) {
            return Err(Error::Invariant(format!(
                "performance `{}`: valid_min {} must be < valid_max {}",
                self.name, self.valid_min, self.valid_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub layer: String,
    pub total_time_variable: String,
    pub controls: Vec<ControlVariableSpec>,
    pub performance: Vec<PerformanceVariableSpec>,
}

impl Profile {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.controls {
            c.validate()?;
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Invariant(format!("duplicate control `{}`", c.name)));
            }
        }
        let mut seen = HashSet::new();
        for p in &self.performance {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Invariant(format!(
                    "duplicate performance variable `{}`",
                    p.name
                )));
            }
        }
        match self.performance_var(&self.total_time_variable) {
            None => Err(Error::Invariant(format!(
                "total_time_variable `{}` is not a performance variable",
                self.total_time_variable
            ))),
            Some(p) if !p.relative => Err(Error::Invariant(format!(
                "total_time_variable `{}` must be relative",
                p.name
            ))),
            Some(_) => Ok(()),
        }
    }

    pub fn control(&self, name: &str) -> Option<&ControlVariableSpec> {
        self.controls.iter().find(|c| c.name == name)
    }

    pub fn performance_var(&self, name: &str) -> Option<&PerformanceVariableSpec> {
        self.performance.iter().find(|p| p.name == name)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let profile: Profile =
            serde_json::from_str(text).map_err(|e| Error::parse("profile", e))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("profile serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// The reference MPICH profile shipped with the crate.
    pub fn mpich() -> Self {
        Self::from_json(MPICH_PROFILE).expect("bundled profile is valid")
    }
}

pub const MPICH_PROFILE: &str = include_str!("../profiles/mpich.profile");

pub fn load_profile(path: &Path) -> Result<Profile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Profile::from_json(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

pub fn save_profile(profile: &Profile, path: &Path) -> Result<()> {
    std::fs::write(path, profile.to_json()).map_err(|e| Error::io(path, e))
}

/// Accepts a finite sample lying in the variable's valid range.
pub fn validate_sample<T: Scalar>(spec: &PerformanceVariableSpec, value: T) -> Result<T> {
    if !value.is_finite() {
        return Err(Error::NonFinite {
            name: spec.name.clone(),
        });
    }
    let v = value.to_f64_lossy();
    if v < spec.valid_min || v > spec.valid_max {
        return Err(Error::OutOfRange {
            name: spec.name.clone(),
            value: v,
            min: spec.valid_min,
            max: spec.valid_max,
        });
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Summary<T> {
    pub min: T,
    pub max: T,
    pub mean: T,
    pub median: T,
}

/// Per-run summary of one performance variable. `summary` is `None` when no
/// valid sample was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PerformanceStats<T> {
    pub count: usize,
    #[serde(default)]
    pub rejected: usize,
    pub summary: Option<Summary<T>>,
}

impl<T: Scalar> PerformanceStats<T> {
    pub fn absent() -> Self {
        Self {
            count: 0,
            rejected: 0,
            summary: None,
        }
    }

    pub fn mean(&self) -> Option<T> {
        self.summary.map(|s| s.mean)
    }

    pub fn max(&self) -> Option<T> {
        self.summary.map(|s| s.max)
    }
}

pub fn aggregate<T: Scalar>(samples: &[T]) -> PerformanceStats<T> {
    if samples.is_empty() {
        return PerformanceStats::absent();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("validated samples are finite"));
    let n = sorted.len();
    let sum: T = sorted.iter().copied().sum();
    let mean = sum / T::from_usize(n).expect("sample count fits scalar");
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
    };
    // the sum can round the mean just outside the extreme samples
    let mean = mean.max(sorted[0]).min(sorted[n - 1]);
    PerformanceStats {
        count: n,
        rejected: 0,
        summary: Some(Summary {
            min: sorted[0],
            max: sorted[n - 1],
            mean,
            median,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Decrease,
    None,
    Increase,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Decrease => Direction::Increase,
            Direction::None => Direction::None,
            Direction::Increase => Direction::Decrease,
        }
    }
}

/// Moves one variable by one step (stepped) or toggles it (binary).
pub fn apply_change(
    setting: &ControlSetting,
    spec: &ControlVariableSpec,
    direction: Direction,
) -> Result<ControlSetting> {
    let current = setting
        .get(&spec.name)
        .ok_or_else(|| Error::UnknownVariable(spec.name.clone()))?;
    let next = match (spec.kind, direction) {
        (_, Direction::None) => current,
        (ControlKind::Binary, _) => 1 - current.clamp(0, 1),
        (ControlKind::SteppedNumeric, dir) => {
            let (lo, hi) = spec.lattice_bounds();
            let delta = if dir == Direction::Increase {
                spec.step
            } else {
                -spec.step
            };
            current.saturating_add(delta).clamp(lo, hi)
        }
    };
    let mut out = setting.clone();
    out.set(&spec.name, next);
    Ok(out)
}
