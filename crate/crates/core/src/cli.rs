//! Command-line surface: the per-run file protocol (`pre-run` / `post-run`),
//! recommendation, simulation campaigns and store inspection.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::agent::{AgentConfig, ExplorationSchedule};
use crate::ensemble::{self, RecommendationStatus, DEFAULT_MIN_RUNS, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::simulator::{self, CampaignOptions, CampaignResult};
use crate::store::{
    first_run_requested, write_settings, ExperienceStore, PerformanceReport, StoreConfig,
    StoreOptions,
};
use crate::variables::{load_profile, Profile};

type Store = ExperienceStore<f64>;

#[derive(Debug, Parser)]
#[command(name = "cvartune", version, about = "Reinforcement-learning autotuner for MPI control variables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a new experience store.
    Init(InitArgs),
    /// Write the settings for the next run as NAME=VALUE lines.
    PreRun {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest the performance report of a finished run.
    ///
    /// Set AITUNING_FIRST_RUN=1 for the reference run.
    PostRun {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Condense the recorded runs into one configuration.
    Recommend {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_RUNS)]
        min_runs: usize,
        /// Settings file to write [default: <store>/recommended.env]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run tuning campaigns against a synthetic plant.
    Simulate(SimulateArgs),
    /// Print a summary of a store.
    Inspect {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Profile file; the bundled MPICH profile when omitted.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon_start: Option<f64>,
    #[arg(long)]
    pub epsilon_end: Option<f64>,
    #[arg(long)]
    pub epsilon_decay_runs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub replay_interval: Option<u64>,
}

impl InitArgs {
    fn agent_config(&self) -> AgentConfig {
        let mut c = AgentConfig::default();
        let d = ExplorationSchedule::default();
        c.discount = self.gamma.unwrap_or(c.discount);
        c.learning_rate = self.alpha.unwrap_or(c.learning_rate);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.replay_interval = self.replay_interval.unwrap_or(c.replay_interval);
        c.exploration = ExplorationSchedule {
            start: self.epsilon_start.unwrap_or(d.start),
            end: self.epsilon_end.unwrap_or(d.end),
            decay_runs: self.epsilon_decay_runs.unwrap_or(d.decay_runs),
        };
        c
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub plant: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub episodes: usize,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First agent seed; campaigns use consecutive seeds from here.
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep each campaign's store under this directory.
    #[arg(long)]
    pub stores: Option<PathBuf>,
    /// Uniformly random actions throughout (no-learning baseline).
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_RUNS)]
    pub min_runs: usize,
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Init(args) => cmd_init(&args),
        Command::PreRun { store, out } => cmd_pre_run(&store, &out),
        Command::PostRun { store, report } => cmd_post_run(&store, &report, first_run_requested()),
        Command::Recommend {
            store,
            tolerance,
            min_runs,
            out,
        } => cmd_recommend(&store, tolerance, min_runs, out.as_deref()),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Inspect { store } => cmd_inspect(&store),
    }
}

pub fn cmd_init(args: &InitArgs) -> Result<String> {
    let profile = match &args.profile {
        Some(p) => load_profile(p)?,
        None => Profile::mpich(),
    };
    let config = StoreConfig {
        seed: args.seed,
        agent: args.agent_config(),
    };
    let store = Store::init(&args.store, &profile, config, StoreOptions::cli())?;
    Ok(format!(
        "initialized {} ({} controls, {} actions)\n",
        store.dir().display(),
        profile.controls.len(),
        store.actions().len()
    ))
}

pub fn cmd_pre_run(store: &Path, out: &Path) -> Result<String> {
    let store = Store::open_read_only(store)?;
    let settings = store.export_settings();
    write_settings(out, &settings, store.profile())?;
    Ok(format!("wrote {}\n", out.display()))
}

pub fn cmd_post_run(store_dir: &Path, report: &Path, first_run: bool) -> Result<String> {
    let mut store = Store::open(store_dir, StoreOptions::cli())?;
    // parse fully before anything is written
    let report = PerformanceReport::<f64>::load(report, store.profile())?;
    let stats = report.summarize(store.profile());
    let outcome = store.ingest(&stats, report.nprocs, first_run)?;
    let mut msg = String::new();
    if outcome.baseline_recaptured {
        msg.push_str("baseline recaptured\n");
    }
    match outcome.reward {
        Some(r) => writeln!(msg, "run {}: reward {r:.6}", outcome.run_index),
        None => writeln!(msg, "run {}: baseline recorded", outcome.run_index),
    }
    .expect("string write");
    let action = store
        .actions()
        .get(outcome.action)
        .map(|a| a.to_string())
        .unwrap_or_default();
    let _ = writeln!(msg, "next action: {action} (epsilon {:.3})", outcome.epsilon);
    if outcome.replay_updates > 0 {
        let _ = writeln!(msg, "replay: {} updates", outcome.replay_updates);
    }
    msg.push_str("next settings:\n");
    msg.push_str(&outcome.next_settings.to_env_lines(store.profile()));
    Ok(msg)
}

pub fn cmd_recommend(
    store_dir: &Path,
    tolerance: f64,
    min_runs: usize,
    out: Option<&Path>,
) -> Result<String> {
    let store = Store::open_read_only(store_dir)?;
    let baseline = store.baseline().ok_or(Error::MissingBaseline)?;
    let rec = ensemble::recommend(
        store.runs(),
        store.profile(),
        baseline.total_time(store.profile()),
        tolerance,
        min_runs,
    )?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| store_dir.join("recommended.env"));
    write_settings(&out, &rec.settings, store.profile())?;
    if rec.status == RecommendationStatus::NoImprovement {
        log::warn!("no run beat the baseline; defaults written");
    }
    let summary = ensemble::report(store.runs(), store.profile(), &rec);
    Ok(format!("{summary}wrote {}\n", out.display()))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let profile = load_profile(&args.profile)?;
    let plant = simulator::load_plant::<f64>(&args.plant, &profile)?;
    let scratch = match &args.stores {
        Some(_) => None,
        None => Some(tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?),
    };
    let root = args
        .stores
        .clone()
        .unwrap_or_else(|| scratch.as_ref().expect("scratch dir").path().to_path_buf());
    let mut results: Vec<CampaignResult<f64>> = Vec::new();
    for seed in args.first_seed..args.first_seed + args.seeds {
        let mut options = CampaignOptions::new(args.episodes, seed);
        options.tolerance = args.tolerance;
        options.min_runs = args.min_runs;
        if args.random {
            options = options.random_actions();
        }
        let dir = root.join(format!("seed-{seed}"));
        let r = simulator::run_campaign(&plant, &profile, &dir, &options)?;
        info!("seed {seed}: regret {:.4}", r.regret);
        results.push(r);
    }
    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut w = std::io::BufWriter::new(file);
    simulator::write_campaign_csv(&mut w, &profile, &results)?;
    w.flush().map_err(|e| Error::io(&args.out, e))?;

    let mut msg = String::from("seed  max_dist  regret    status\n");
    for r in &results {
        let _ = writeln!(
            msg,
            "{:<5} {:<9} {:<9.4} {:?}",
            r.seed,
            r.max_distance(),
            r.regret,
            r.recommendation.status
        );
    }
    let _ = writeln!(
        msg,
        "median regret {:.4} over {} seeds",
        median(results.iter().map(|r| r.regret).collect()),
        results.len()
    );
    let _ = writeln!(msg, "wrote {}", args.out.display());
    Ok(msg)
}

pub fn cmd_inspect(store_dir: &Path) -> Result<String> {
    if !Store::exists(store_dir) {
        return Ok("uninitialized\n".into());
    }
    let store = Store::open_read_only(store_dir)?;
    let p = store.profile();
    let mut msg = String::new();
    let _ = writeln!(msg, "store:        {}", store_dir.display());
    let _ = writeln!(msg, "generation:   {}", store.generation());
    let _ = writeln!(msg, "epoch:        {}", store.epoch());
    let _ = writeln!(msg, "runs:         {}", store.runs().len());
    let _ = writeln!(msg, "transitions:  {}", store.transitions().len());
    match store.baseline() {
        Some(b) => {
            let _ = writeln!(msg, "baseline:     {:.6} (nprocs {})", b.total_time(p), b.nprocs_ref);
        }
        None => {
            let _ = writeln!(msg, "baseline:     none");
        }
    }
    let _ = writeln!(msg, "next epsilon: {:.3}", store.next_epsilon());
    match store.runs().iter().rev().find_map(|r| r.reward) {
        Some(r) => {
            let _ = writeln!(msg, "last reward:  {r:.6}");
        }
        None => {
            let _ = writeln!(msg, "last reward:  n/a");
        }
    }
    let c = store.counters();
    let _ = writeln!(
        msg,
        "updates:      {} online, {} replay, {} skipped",
        c.online_updates, c.replay_updates, c.skipped_updates
    );
    Ok(msg)
}
