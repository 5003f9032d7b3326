//! Text formats exchanged with the application: the performance report read
//! after a run and the `NAME=VALUE` settings export written before one.
//!
//! Report format:
//!
//! ```text
//! # comments and blank lines are ignored
//! nprocs 256
//! total_execution_time 12.5
//! flush_time_avg 0.004
//! flush_time_avg 0.0051
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::variables::{aggregate, validate_sample, ControlSetting, PerformanceStats, Profile};

/// Raw samples of one run, grouped by variable in report order.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport<T> {
    pub nprocs: u32,
    pub samples: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> PerformanceReport<T> {
    pub fn new(nprocs: u32) -> Self {
        Self {
            nprocs,
            samples: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, name: &str, value: T) {
        self.samples.entry(name.to_string()).or_default().push(value);
    }

    pub fn parse(text: &str, profile: &Profile) -> Result<Self> {
        let mut report: Option<Self> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = || format!("report line {}", lineno + 1);
            let mut fields = line.split_whitespace();
            let (Some(key), Some(value), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::parse(ctx(), "expected `<name> <value>`"));
            };
            match report.as_mut() {
                None => {
                    if key != "nprocs" {
                        return Err(Error::parse(ctx(), "first entry must be `nprocs <N>`"));
                    }
                    let n: u32 = value
                        .parse()
                        .map_err(|e| Error::parse(ctx(), format!("nprocs: {e}")))?;
                    if n == 0 {
                        return Err(Error::parse(ctx(), "nprocs must be positive"));
                    }
                    report = Some(Self::new(n));
                }
                Some(r) => {
                    if profile.performance_var(key).is_none() {
                        return Err(Error::parse(ctx(), format!("unknown variable `{key}`")));
                    }
                    // non-finite literals are accepted here and rejected by validation
                    let v: f64 = value
                        .parse()
                        .map_err(|e| Error::parse(ctx(), format!("`{value}`: {e}")))?;
                    r.push(key, T::lit(v));
                }
            }
        }
        report.ok_or_else(|| Error::parse("report", "missing `nprocs` header"))
    }

    pub fn load(path: &Path, profile: &Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, profile).map_err(|e| match e {
            Error::Parse { context, message } => {
                Error::parse(format!("{}: {context}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("nprocs {}\n", self.nprocs);
        for (name, values) in &self.samples {
            for v in values {
                let _ = writeln!(out, "{name} {v}");
            }
        }
        out
    }

    /// Validates every sample against the profile and aggregates per variable.
    /// Invalid samples are dropped and counted in `rejected`; variables with no
    /// valid sample come back absent.
    pub fn summarize(&self, profile: &Profile) -> BTreeMap<String, PerformanceStats<T>> {
        let mut out = BTreeMap::new();
        for spec in &profile.performance {
            let raw = self.samples.get(&spec.name).map(Vec::as_slice).unwrap_or(&[]);
            let mut valid = Vec::with_capacity(raw.len());
            let mut rejected = 0;
            for &v in raw {
                match validate_sample(spec, v) {
                    Ok(v) => valid.push(v),
                    Err(e) => {
                        warn!("{e}; sample dropped");
                        rejected += 1;
                    }
                }
            }
            let mut stats = aggregate(&valid);
            stats.rejected = rejected;
            out.insert(spec.name.clone(), stats);
        }
        out
    }
}

pub fn write_settings(path: &Path, setting: &ControlSetting, profile: &Profile) -> Result<()> {
    super::files::write_atomic(path, setting.to_env_lines(profile).as_bytes(), true)
}
