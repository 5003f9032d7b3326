//! Synthetic response surfaces with a known optimum and multiplicative
//! Gaussian run-to-run noise, and closed-loop tuning campaigns against them.
//!
//! Total time is a separable sum of per-variable penalties around the optimum:
//! quadratic in lattice steps for stepped variables and an indicator for
//! binary ones. Secondary performance variables are fixed fractions of the
//! noiseless total time with independent noise.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::ensemble::{recommend, Recommendation, DEFAULT_MIN_RUNS, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{ExperienceStore, PerformanceReport, RunRecord, StoreConfig, StoreOptions};
use crate::variables::{ControlKind, ControlSetting, ControlVariableSpec, Profile};

pub const MAX_NOISE_FRACTION: f64 = 0.3;
pub const DEFAULT_SAMPLES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantTerm {
    pub variable: String,
    pub optimum: i64,
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondaryResponse {
    pub variable: String,
    /// Value as a fraction of the noiseless total time.
    pub scale: f64,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

/// On-disk plant definition (JSON), resolved against a profile by [`load_plant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub base_time: f64,
    pub noise_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples_per_variable: usize,
    pub terms: Vec<PlantTerm>,
    #[serde(default)]
    pub secondary: Vec<SecondaryResponse>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlant<T> {
    specs: Vec<ControlVariableSpec>,
    terms: Vec<PlantTerm>,
    base_time: T,
    noise_fraction: T,
    total_time_variable: String,
    secondary: Vec<SecondaryResponse>,
    samples: usize,
    seed: u64,
}

const TOTAL_TIME: &str = "total_execution_time";

impl<T: Scalar> SyntheticPlant<T> {
    fn build(
        specs: Vec<ControlVariableSpec>,
        terms: Vec<PlantTerm>,
        base_time: f64,
        noise_fraction: f64,
    ) -> Result<Self> {
        if !(base_time > 0.0 && base_time.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "base time {base_time} must be positive"
            )));
        }
        if !(0.0..=MAX_NOISE_FRACTION).contains(&noise_fraction) {
            return Err(Error::InvalidArgument(format!(
                "noise fraction {noise_fraction} outside [0, {MAX_NOISE_FRACTION}]"
            )));
        }
        for (spec, term) in specs.iter().zip(&terms) {
            spec.validate()?;
            if !spec.is_legal(term.optimum) {
                return Err(Error::InvalidArgument(format!(
                    "optimum {} of `{}` is not on its lattice",
                    term.optimum, spec.name
                )));
            }
            if !(term.curvature > 0.0 && term.curvature.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "curvature of `{}` must be positive",
                    spec.name
                )));
            }
        }
        Ok(Self {
            specs,
            terms,
            base_time: T::lit(base_time),
            noise_fraction: T::lit(noise_fraction),
            total_time_variable: TOTAL_TIME.to_string(),
            secondary: Vec::new(),
            samples: DEFAULT_SAMPLES,
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples.max(1);
        self
    }

    pub fn with_secondary(mut self, secondary: Vec<SecondaryResponse>) -> Self {
        self.secondary = secondary;
        self
    }

    pub fn with_total_time_variable(mut self, name: &str) -> Self {
        self.total_time_variable = name.to_string();
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_fraction(&self) -> T {
        self.noise_fraction
    }

    pub fn specs(&self) -> &[ControlVariableSpec] {
        &self.specs
    }

    pub fn terms(&self) -> &[PlantTerm] {
        &self.terms
    }

    /// Optimum of every plant variable; variables outside the plant are absent.
    pub fn optimum(&self) -> ControlSetting {
        let mut s = ControlSetting::default();
        for t in &self.terms {
            s.set(&t.variable, t.optimum);
        }
        s
    }

    pub fn noiseless_time(&self, settings: &ControlSetting) -> Result<T> {
        let mut penalty = 0.0;
        for (spec, term) in self.specs.iter().zip(&self.terms) {
            let value = settings
                .get(&spec.name)
                .ok_or_else(|| Error::UnknownVariable(spec.name.clone()))?;
            penalty += match spec.kind {
                ControlKind::SteppedNumeric => {
                    let steps = (value - term.optimum) as f64 / spec.step as f64;
                    term.curvature * steps * steps
                }
                ControlKind::Binary => {
                    if value != term.optimum {
                        term.curvature
                    } else {
                        0.0
                    }
                }
            };
        }
        Ok(self.base_time * T::lit(1.0 + penalty))
    }

    /// `(noiseless - optimum) / optimum` on noiseless times.
    pub fn regret(&self, settings: &ControlSetting) -> Result<f64> {
        let best = self.noiseless_time(&self.optimum())?.to_f64_lossy();
        let t = self.noiseless_time(settings)?.to_f64_lossy();
        Ok(((t - best) / best).max(0.0))
    }

    /// Distance from the optimum in lattice steps (0 or 1 for binary).
    pub fn distance_steps(&self, settings: &ControlSetting) -> BTreeMap<String, i64> {
        self.specs
            .iter()
            .zip(&self.terms)
            .map(|(spec, term)| {
                let v = settings.get(&spec.name).unwrap_or(spec.default);
                let d = match spec.kind {
                    ControlKind::SteppedNumeric => ((v - term.optimum) / spec.step).abs(),
                    ControlKind::Binary => i64::from(v != term.optimum),
                };
                (spec.name.clone(), d)
            })
            .collect()
    }

    fn noisy<R: Rng + ?Sized>(&self, value: T, rng: &mut R) -> T {
        let g: f64 = rng.sample(StandardNormal);
        let noisy = value * (T::one() + self.noise_fraction * T::lit(g));
        noisy.max(value * T::lit(1e-3))
    }

    /// One simulated run: `samples` noisy readings of total time and of each
    /// secondary variable.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        settings: &ControlSetting,
        nprocs: u32,
        rng: &mut R,
    ) -> Result<PerformanceReport<T>> {
        let total = self.noiseless_time(settings)?;
        let mut report = PerformanceReport::new(nprocs);
        for _ in 0..self.samples {
            let v = self.noisy(total, rng);
            report.push(&self.total_time_variable, v);
        }
        for s in &self.secondary {
            let base = total * T::lit(s.scale);
            for _ in 0..self.samples {
                let v = self.noisy(base, rng);
                report.push(&s.variable, v);
            }
        }
        Ok(report)
    }
}

/// Single stepped variable with a parabolic total time around `optimum_value`.
pub fn parabola_plant<T: Scalar>(
    spec: &ControlVariableSpec,
    optimum_value: i64,
    curvature: f64,
    base_time: f64,
    noise_fraction: f64,
) -> Result<SyntheticPlant<T>> {
    SyntheticPlant::build(
        vec![spec.clone()],
        vec![PlantTerm {
            variable: spec.name.clone(),
            optimum: optimum_value,
            curvature,
        }],
        base_time,
        noise_fraction,
    )
}

/// Separable sum of per-variable penalties.
pub fn multi_var_plant<T: Scalar>(
    specs: &[ControlVariableSpec],
    optimum: &ControlSetting,
    curvatures: &[f64],
    base_time: f64,
    noise_fraction: f64,
) -> Result<SyntheticPlant<T>> {
    if specs.len() != curvatures.len() {
        return Err(Error::DimensionMismatch {
            expected: specs.len(),
            got: curvatures.len(),
        });
    }
    let terms = specs
        .iter()
        .zip(curvatures)
        .map(|(spec, &curvature)| {
            let opt = optimum
                .get(&spec.name)
                .ok_or_else(|| Error::UnknownVariable(spec.name.clone()))?;
            Ok(PlantTerm {
                variable: spec.name.clone(),
                optimum: opt,
                curvature,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SyntheticPlant::build(specs.to_vec(), terms, base_time, noise_fraction)
}

pub fn plant_from_file<T: Scalar>(file: &PlantFile, profile: &Profile) -> Result<SyntheticPlant<T>> {
    let specs = file
        .terms
        .iter()
        .map(|t| {
            profile
                .control(&t.variable)
                .cloned()
                .ok_or_else(|| Error::UnknownVariable(t.variable.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &file.secondary {
        if profile.performance_var(&s.variable).is_none() {
            return Err(Error::UnknownVariable(s.variable.clone()));
        }
    }
    Ok(
        SyntheticPlant::build(specs, file.terms.clone(), file.base_time, file.noise_fraction)?
            .with_seed(file.seed)
            .with_samples(file.samples_per_variable)
            .with_secondary(file.secondary.clone())
            .with_total_time_variable(&profile.total_time_variable),
    )
}

pub fn load_plant<T: Scalar>(path: &Path, profile: &Profile) -> Result<SyntheticPlant<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PlantFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    plant_from_file(&file, profile)
}

#[derive(Debug, Clone)]
pub struct CampaignOptions {
    pub episodes: usize,
    pub agent_seed: u64,
    pub agent: AgentConfig,
    pub nprocs: u32,
    pub tolerance: f64,
    pub min_runs: usize,
}

impl CampaignOptions {
    pub fn new(episodes: usize, agent_seed: u64) -> Self {
        Self {
            episodes,
            agent_seed,
            agent: AgentConfig::default(),
            nprocs: 64,
            tolerance: DEFAULT_TOLERANCE,
            min_runs: DEFAULT_MIN_RUNS,
        }
    }

    /// Same budget, uniformly random actions throughout.
    pub fn random_actions(mut self) -> Self {
        self.agent.exploration = crate::agent::ExplorationSchedule::constant(1.0);
        self
    }
}

#[derive(Debug, Clone)]
pub struct CampaignResult<T> {
    pub seed: u64,
    pub runs: Vec<RunRecord<T>>,
    pub recommendation: Recommendation,
    pub distance_steps: BTreeMap<String, i64>,
    pub regret: f64,
    pub replay_runs: Vec<u64>,
    pub store_dir: PathBuf,
}

impl<T: Scalar> CampaignResult<T> {
    pub fn max_distance(&self) -> i64 {
        self.distance_steps.values().copied().max().unwrap_or(0)
    }
}

/// Seed of the plant noise stream for one campaign.
fn noise_seed(plant_seed: u64, agent_seed: u64) -> u64 {
    plant_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .rotate_left(17)
        ^ agent_seed
}

/// Baseline run, `episodes - 1` closed-loop runs through a fresh store in
/// `store_dir`, then the ensemble recommendation.
pub fn run_campaign<T: Scalar>(
    plant: &SyntheticPlant<T>,
    profile: &Profile,
    store_dir: &Path,
    options: &CampaignOptions,
) -> Result<CampaignResult<T>> {
    let minimum = options.min_runs + 1;
    if options.episodes < minimum {
        return Err(Error::InvalidArgument(format!(
            "campaign needs at least {minimum} episodes, got {}",
            options.episodes
        )));
    }
    let config = StoreConfig {
        seed: options.agent_seed,
        agent: options.agent.clone(),
    };
    let mut store =
        ExperienceStore::<T>::init(store_dir, profile, config, StoreOptions::simulation())?;
    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed(plant.seed, options.agent_seed));
    for episode in 1..=options.episodes {
        let settings = store.export_settings();
        let stats = plant
            .evaluate(&settings, options.nprocs, &mut noise)?
            .summarize(profile);
        if episode == 1 {
            store.record_first_run(&stats, options.nprocs)?;
        } else {
            store.complete_run(&stats, options.nprocs)?;
        }
    }
    let baseline = store
        .baseline()
        .expect("baseline recorded in first episode")
        .total_time(profile);
    let recommendation = recommend(
        store.runs(),
        profile,
        baseline,
        options.tolerance,
        options.min_runs,
    )?;
    Ok(CampaignResult {
        seed: options.agent_seed,
        distance_steps: plant.distance_steps(&recommendation.settings),
        regret: plant.regret(&recommendation.settings)?,
        runs: store.runs().to_vec(),
        recommendation,
        replay_runs: store.counters().replay_runs.clone(),
        store_dir: store_dir.to_path_buf(),
    })
}

/// One row per run: seed, episode, settings, total time, reward, action.
pub fn campaign_csv_rows<T: Scalar>(
    seed: u64,
    runs: &[RunRecord<T>],
    profile: &Profile,
) -> Vec<Vec<String>> {
    runs.iter()
        .map(|r| {
            let mut row = vec![seed.to_string(), r.run_index.to_string()];
            for c in &profile.controls {
                row.push(r.settings.get(&c.name).map(|v| v.to_string()).unwrap_or_default());
            }
            row.push(r.total_time(profile).map(|t| t.to_string()).unwrap_or_default());
            row.push(r.reward.map(|t| t.to_string()).unwrap_or_default());
            row.push(r.action_taken.map(|a| a.to_string()).unwrap_or_default());
            row
        })
        .collect()
}

pub fn campaign_csv_header(profile: &Profile) -> Vec<String> {
    let mut h = vec!["seed".to_string(), "episode".to_string()];
    h.extend(profile.controls.iter().map(|c| c.name.clone()));
    h.extend(["total_time", "reward", "action"].map(String::from));
    h
}

/// Writes every run of every campaign as CSV, one header row first.
pub fn write_campaign_csv<T: Scalar, W: std::io::Write>(
    out: W,
    profile: &Profile,
    campaigns: &[CampaignResult<T>],
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv output: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(campaign_csv_header(profile)).map_err(csv_err)?;
    for c in campaigns {
        for row in campaign_csv_rows(c.seed, &c.runs, profile) {
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(Path::new("<csv>"), e))?;
    Ok(())
}
