//! Durable experience store shared by successive application runs.
//!
//! On-disk layout of a store directory (format 1):
//!
//! ```text
//! HEAD                    commit pointer (JSON), replaced atomically
//! profile.json            profile the store was created with
//! state-<generation>.json config, baseline, network, rng, pending action, counters
//! runs-<epoch>.jsonl      one RunRecord per line, append-only
//! transitions.jsonl       one Transition per line, append-only
//! store.lock              advisory lock held by the single writer
//! ```
//!
//! `HEAD` records the current state file with its SHA-256 and the committed
//! byte length and entry count of each log. A commit appends to the logs,
//! writes the next state file, then renames a new `HEAD` into place; bytes past
//! a committed length are ignored on load and truncated before the next
//! append. An interrupted commit therefore leaves the previous generation
//! intact.

mod files;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use files::{sha256_hex, FaultInjector, StoreLock, FAULT_ENV};
pub use report::{write_settings, PerformanceReport};

use crate::agent::{
    enumerate_actions, replay, select_action, ActionSpace, AgentConfig, QNetwork, ReplayBuffer,
    TrainOutcome, Transition,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::state::{build_state, compute_reward, state_dim, ReferenceBaseline, StateVector};
use crate::variables::{ControlSetting, PerformanceStats, Profile};

pub const FORMAT_VERSION: u32 = 1;
/// Environment variable marking the reference run.
pub const FIRST_RUN_ENV: &str = "AITUNING_FIRST_RUN";

const HEAD_FILE: &str = "HEAD";
const PROFILE_FILE: &str = "profile.json";
const TRANSITIONS_FILE: &str = "transitions.jsonl";

pub type Stats<T> = BTreeMap<String, PerformanceStats<T>>;

/// True when `AITUNING_FIRST_RUN` is set to `1`.
pub fn first_run_requested() -> bool {
    std::env::var(FIRST_RUN_ENV).is_ok_and(|v| v.trim() == "1")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub seed: u64,
    pub agent: AgentConfig,
}

impl StoreConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            agent: AgentConfig::default(),
        }
    }
}

#[derive(Debug, Default)]
pub struct StoreOptions {
    /// fsync files and directories at each commit.
    pub sync: bool,
    /// Stamp runs with their index instead of wall-clock seconds.
    pub logical_clock: bool,
    pub fault: FaultInjector,
}

impl StoreOptions {
    /// Durable, wall-clock stamped; honours the fault-injection variable.
    pub fn cli() -> Self {
        Self {
            sync: true,
            logical_clock: false,
            fault: FaultInjector::from_env(),
        }
    }

    /// Reproducible in-process use (simulation campaigns).
    pub fn simulation() -> Self {
        Self {
            sync: false,
            logical_clock: true,
            fault: FaultInjector::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RunRecord<T> {
    pub run_index: u64,
    pub settings: ControlSetting,
    pub stats: Stats<T>,
    pub nprocs: u32,
    pub reward: Option<T>,
    pub action_taken: Option<usize>,
    pub timestamp: u64,
}

impl<T: Scalar> RunRecord<T> {
    pub fn total_time(&self, profile: &Profile) -> Option<T> {
        self.stats
            .get(&profile.total_time_variable)
            .and_then(|s| s.mean())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Pending<T> {
    pub state: StateVector<T>,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub online_updates: u64,
    pub replay_updates: u64,
    pub skipped_updates: u64,
    /// Run indices at which replay ran.
    pub replay_runs: Vec<u64>,
    pub rejected_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Snapshot<T> {
    format: u32,
    scalar: String,
    profile_sha256: String,
    config: StoreConfig,
    epoch: u32,
    baseline: Option<ReferenceBaseline<T>>,
    network: QNetwork<T>,
    rng: ChaCha8Rng,
    pending: Option<Pending<T>>,
    next_settings: ControlSetting,
    counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct Head {
    format: u32,
    generation: u64,
    state_file: String,
    state_sha256: String,
    runs_file: String,
    runs_len: u64,
    runs_count: usize,
    transitions_len: u64,
    transitions_count: usize,
}

/// What happened at the end of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome<T> {
    pub run_index: u64,
    pub reward: Option<T>,
    pub action: usize,
    pub epsilon: f64,
    pub next_settings: ControlSetting,
    pub replay_updates: usize,
    pub baseline_recaptured: bool,
}

pub struct ExperienceStore<T: Scalar> {
    dir: PathBuf,
    options: StoreOptions,
    lock: Option<StoreLock>,
    profile: Profile,
    actions: ActionSpace,
    snapshot: Snapshot<T>,
    runs: Vec<RunRecord<T>>,
    transitions: ReplayBuffer<T>,
    head: Head,
}

fn scalar_tag<T: Scalar>() -> String {
    std::any::type_name::<T>().to_string()
}

fn runs_file(epoch: u32) -> String {
    format!("runs-{epoch}.jsonl")
}

pub fn init_store<T: Scalar>(
    dir: &Path,
    profile: &Profile,
    config: StoreConfig,
    options: StoreOptions,
) -> Result<ExperienceStore<T>> {
    ExperienceStore::init(dir, profile, config, options)
}

impl<T: Scalar> ExperienceStore<T> {
    pub fn exists(dir: &Path) -> bool {
        dir.join(HEAD_FILE).is_file()
    }

    pub fn init(dir: &Path, profile: &Profile, config: StoreConfig, options: StoreOptions) -> Result<Self> {
        profile.validate()?;
        config.agent.validate()?;
        if Self::exists(dir) {
            return Err(Error::AlreadyInitialized(dir.to_path_buf()));
        }
        if dir.exists() {
            let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            if entries.next().is_some() {
                return Err(Error::InvalidArgument(format!(
                    "{} exists and is not empty",
                    dir.display()
                )));
            }
        } else {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let lock = StoreLock::acquire(dir)?;
        files::write_atomic(&dir.join(PROFILE_FILE), profile.to_json().as_bytes(), options.sync)?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actions = enumerate_actions(profile);
        let network = config
            .agent
            .build_network(state_dim(profile), actions.len(), &mut rng);
        let snapshot = Snapshot {
            format: FORMAT_VERSION,
            scalar: scalar_tag::<T>(),
            profile_sha256: profile.fingerprint(),
            config,
            epoch: 0,
            baseline: None,
            network,
            rng,
            pending: None,
            next_settings: ControlSetting::defaults(profile),
            counters: Counters::default(),
        };
        let mut store = Self {
            dir: dir.to_path_buf(),
            options,
            lock: Some(lock),
            profile: profile.clone(),
            actions,
            snapshot,
            runs: Vec::new(),
            transitions: ReplayBuffer::new(),
            head: Head {
                format: FORMAT_VERSION,
                runs_file: runs_file(0),
                ..Head::default()
            },
        };
        store.commit()?;
        Ok(store)
    }

    /// Opens an existing store for mutation, taking the store lock.
    pub fn open(dir: &Path, options: StoreOptions) -> Result<Self> {
        if !Self::exists(dir) {
            return Err(Error::Uninitialized(dir.to_path_buf()));
        }
        let lock = StoreLock::acquire(dir)?;
        let mut store = Self::load(dir, options)?;
        store.lock = Some(lock);
        Ok(store)
    }

    /// Opens without locking; mutation is refused.
    pub fn open_read_only(dir: &Path) -> Result<Self> {
        Self::load(dir, StoreOptions::default())
    }

    fn load(dir: &Path, options: StoreOptions) -> Result<Self> {
        let head_path = dir.join(HEAD_FILE);
        let head_text = std::fs::read(&head_path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Uninitialized(dir.to_path_buf())
            } else {
                Error::io(&head_path, e)
            }
        })?;
        let head: Head = serde_json::from_slice(&head_text)
            .map_err(|e| Error::Corrupt(format!("HEAD: {e}")))?;
        if head.format != FORMAT_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported store format {}",
                head.format
            )));
        }
        let state_path = dir.join(&head.state_file);
        let state_bytes = std::fs::read(&state_path).map_err(|e| Error::io(&state_path, e))?;
        if sha256_hex(&state_bytes) != head.state_sha256 {
            return Err(Error::Corrupt(format!(
                "hash mismatch for {}",
                head.state_file
            )));
        }
        let snapshot: Snapshot<T> = serde_json::from_slice(&state_bytes)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", head.state_file)))?;
        if snapshot.scalar != scalar_tag::<T>() {
            return Err(Error::InvalidArgument(format!(
                "store holds {} values, opened as {}",
                snapshot.scalar,
                scalar_tag::<T>()
            )));
        }
        let profile_path = dir.join(PROFILE_FILE);
        let profile_text =
            std::fs::read_to_string(&profile_path).map_err(|e| Error::io(&profile_path, e))?;
        let profile: Profile = serde_json::from_str(&profile_text)
            .map_err(|e| Error::Corrupt(format!("profile.json: {e}")))?;
        if profile.fingerprint() != snapshot.profile_sha256 {
            return Err(Error::Corrupt("profile hash mismatch".into()));
        }
        profile
            .validate()
            .map_err(|e| Error::Corrupt(format!("stored profile invalid: {e}")))?;
        let runs = files::read_lines(&dir.join(&head.runs_file), head.runs_len, head.runs_count)?;
        let transitions: Vec<Transition<T>> = files::read_lines(
            &dir.join(TRANSITIONS_FILE),
            head.transitions_len,
            head.transitions_count,
        )?;
        let actions = enumerate_actions(&profile);
        if snapshot.network.output_dim() != actions.len()
            || snapshot.network.input_dim() != state_dim(&profile)
        {
            return Err(Error::Corrupt("network shape does not match profile".into()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            options,
            lock: None,
            profile,
            actions,
            snapshot,
            runs,
            transitions: transitions.into(),
            head,
        })
    }

    fn ensure_writable(&self) -> Result<()> {
        if self.lock.is_none() {
            return Err(Error::InvalidArgument("store opened read-only".into()));
        }
        Ok(())
    }

    fn commit(&mut self) -> Result<()> {
        let sync = self.options.sync;
        let fault = &self.options.fault;
        let mut head = self.head.clone();

        let new_runs = &self.runs[head.runs_count.min(self.runs.len())..];
        head.runs_len =
            files::append_lines(&self.dir.join(&head.runs_file), head.runs_len, new_runs, sync)?;
        head.runs_count = self.runs.len();
        fault.step();

        let new_transitions = &self.transitions.as_slice()[head.transitions_count..];
        head.transitions_len = files::append_lines(
            &self.dir.join(TRANSITIONS_FILE),
            head.transitions_len,
            new_transitions,
            sync,
        )?;
        head.transitions_count = self.transitions.len();
        fault.step();

        head.generation += 1;
        head.state_file = format!("state-{}.json", head.generation);
        let mut state_bytes = serde_json::to_vec(&self.snapshot).expect("snapshot serializes");
        state_bytes.push(b'\n');
        head.state_sha256 = sha256_hex(&state_bytes);
        files::write_atomic(&self.dir.join(&head.state_file), &state_bytes, sync)?;
        fault.step();

        let mut head_bytes = serde_json::to_vec_pretty(&head).expect("head serializes");
        head_bytes.push(b'\n');
        files::write_atomic(&self.dir.join(HEAD_FILE), &head_bytes, sync)?;
        fault.step();

        self.head = head;
        self.remove_stale_files();
        fault.step();
        Ok(())
    }

    /// Drops state files of older generations and logs of earlier epochs.
    fn remove_stale_files(&self) {
        let Ok(entries) = std::fs::read_dir(&self.dir) else {
            return;
        };
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let stale_state = name.starts_with("state-") && name != self.head.state_file;
            let stale_runs = name.starts_with("runs-") && name != self.head.runs_file;
            if stale_state || stale_runs || name.ends_with(".tmp") {
                let _ = std::fs::remove_file(entry.path());
            }
        }
    }

    fn now(&self, run_index: u64) -> u64 {
        if self.options.logical_clock {
            run_index
        } else {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        }
    }

    fn choose_action(&mut self, state: &StateVector<T>, run_index: u64) -> Result<(usize, f64)> {
        let epsilon = self.snapshot.config.agent.exploration.epsilon(run_index);
        let action = select_action(
            &self.snapshot.network,
            state,
            epsilon,
            &mut self.snapshot.rng,
        )?;
        Ok((action, epsilon))
    }

    fn count_rejections(&mut self, stats: &Stats<T>) {
        let rejected: usize = stats.values().map(|s| s.rejected).sum();
        self.snapshot.counters.rejected_samples += rejected as u64;
    }

    /// Runs `f` and commits; on any error the in-memory store is rolled back
    /// to the last committed generation.
    fn transact<R>(&mut self, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.ensure_writable()?;
        let saved = self.snapshot.clone();
        let result = f(self).and_then(|r| self.commit().map(|()| r));
        if result.is_err() {
            self.snapshot = saved;
            self.runs.truncate(self.head.runs_count);
            self.transitions.truncate(self.head.transitions_count);
        }
        result
    }

    /// Captures the reference run and picks the first action.
    pub fn record_first_run(&mut self, stats: &Stats<T>, nprocs: u32) -> Result<RunOutcome<T>> {
        self.ensure_writable()?;
        if self.snapshot.baseline.is_some() {
            return Err(Error::BaselineExists);
        }
        self.transact(|s| {
            let baseline = ReferenceBaseline::capture(&s.profile, stats, nprocs)?;
            let state = build_state(&s.profile, stats, nprocs, Some(&baseline))?;
            let defaults = ControlSetting::defaults(&s.profile);
            s.snapshot.baseline = Some(baseline);
            let (action, epsilon) = s.choose_action(&state, 1)?;
            let next = s.actions.apply(&s.profile, &defaults, action)?;
            s.runs.push(RunRecord {
                run_index: 1,
                settings: defaults,
                stats: stats.clone(),
                nprocs,
                reward: None,
                action_taken: Some(action),
                timestamp: s.now(1),
            });
            s.count_rejections(stats);
            s.snapshot.pending = Some(Pending { state, action });
            s.snapshot.next_settings = next.clone();
            Ok(RunOutcome {
                run_index: 1,
                reward: None,
                action,
                epsilon,
                next_settings: next,
                replay_updates: 0,
                baseline_recaptured: false,
            })
        })
    }

    /// Discards the run log and pending action, keeping learned weights and
    /// experience, and records `stats` as the new reference run.
    pub fn recapture_baseline(&mut self, stats: &Stats<T>, nprocs: u32) -> Result<RunOutcome<T>> {
        self.ensure_writable()?;
        let saved = (self.snapshot.clone(), self.runs.clone(), self.head.clone());
        self.snapshot.epoch += 1;
        self.snapshot.baseline = None;
        self.snapshot.pending = None;
        self.snapshot.next_settings = ControlSetting::defaults(&self.profile);
        self.runs.clear();
        self.head.runs_file = runs_file(self.snapshot.epoch);
        self.head.runs_len = 0;
        self.head.runs_count = 0;
        match self.record_first_run(stats, nprocs) {
            Ok(mut out) => {
                out.baseline_recaptured = true;
                Ok(out)
            }
            Err(e) => {
                (self.snapshot, self.runs, self.head) = saved;
                Err(e)
            }
        }
    }

    /// Closes the pending transition with this run's outcome, trains, and
    /// chooses the settings for the next run.
    pub fn complete_run(&mut self, stats: &Stats<T>, nprocs: u32) -> Result<RunOutcome<T>> {
        let baseline = self
            .snapshot
            .baseline
            .as_ref()
            .ok_or(Error::MissingBaseline)?;
        let total = stats
            .get(&self.profile.total_time_variable)
            .and_then(|s| s.mean())
            .ok_or_else(|| Error::MissingTotalTime(self.profile.total_time_variable.clone()))?;
        let reward = compute_reward(baseline.total_time(&self.profile), total)?.value();
        let state = build_state(&self.profile, stats, nprocs, Some(baseline))?;
        let run_index = self.runs.len() as u64 + 1;

        self.transact(|s| {
            let agent = s.snapshot.config.agent.clone();
            let applied = s.snapshot.next_settings.clone();
            if let Some(pending) = s.snapshot.pending.take() {
                let t = Transition {
                    state: pending.state,
                    action: pending.action,
                    reward,
                    next_state: state.clone(),
                };
                if agent.online_updates {
                    match s.snapshot.network.train_step(&t)? {
                        TrainOutcome::Applied { .. } => s.snapshot.counters.online_updates += 1,
                        TrainOutcome::Skipped => s.snapshot.counters.skipped_updates += 1,
                    }
                }
                s.transitions.push(t);
            }
            let replayed = replay(
                &mut s.snapshot.network,
                &s.transitions,
                run_index,
                agent.replay_interval,
                agent.batch_size,
                &mut s.snapshot.rng,
            )?;
            if replayed > 0 {
                s.snapshot.counters.replay_updates += replayed as u64;
                s.snapshot.counters.replay_runs.push(run_index);
                info!("replayed {replayed} transitions at run {run_index}");
            }
            let (action, epsilon) = s.choose_action(&state, run_index)?;
            let next = s.actions.apply(&s.profile, &applied, action)?;
            s.runs.push(RunRecord {
                run_index,
                settings: applied,
                stats: stats.clone(),
                nprocs,
                reward: Some(reward),
                action_taken: Some(action),
                timestamp: s.now(run_index),
            });
            s.count_rejections(stats);
            s.snapshot.pending = Some(Pending { state, action });
            s.snapshot.next_settings = next.clone();
            Ok(RunOutcome {
                run_index,
                reward: Some(reward),
                action,
                epsilon,
                next_settings: next,
                replay_updates: replayed,
                baseline_recaptured: false,
            })
        })
    }

    /// Routes a finished run: reference capture when requested, otherwise
    /// [`Self::complete_run`], which fails if no baseline exists.
    pub fn ingest(&mut self, stats: &Stats<T>, nprocs: u32, first_run: bool) -> Result<RunOutcome<T>> {
        match (first_run, self.snapshot.baseline.is_some()) {
            (true, true) => {
                warn!("{FIRST_RUN_ENV}=1 but a baseline exists; recapturing baseline");
                self.recapture_baseline(stats, nprocs)
            }
            (true, false) => self.record_first_run(stats, nprocs),
            (false, _) => self.complete_run(stats, nprocs),
        }
    }

    /// Settings the next run must be launched with.
    pub fn export_settings(&self) -> ControlSetting {
        self.snapshot.next_settings.clone()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn config(&self) -> &StoreConfig {
        &self.snapshot.config
    }

    pub fn baseline(&self) -> Option<&ReferenceBaseline<T>> {
        self.snapshot.baseline.as_ref()
    }

    pub fn runs(&self) -> &[RunRecord<T>] {
        &self.runs
    }

    pub fn transitions(&self) -> &ReplayBuffer<T> {
        &self.transitions
    }

    pub fn network(&self) -> &QNetwork<T> {
        &self.snapshot.network
    }

    pub fn pending(&self) -> Option<&Pending<T>> {
        self.snapshot.pending.as_ref()
    }

    pub fn counters(&self) -> &Counters {
        &self.snapshot.counters
    }

    pub fn generation(&self) -> u64 {
        self.head.generation
    }

    pub fn epoch(&self) -> u32 {
        self.snapshot.epoch
    }

    /// Epsilon that will apply to the action chosen after the next run.
    pub fn next_epsilon(&self) -> f64 {
        self.snapshot
            .config
            .agent
            .exploration
            .epsilon(self.runs.len() as u64 + 1)
    }
}
