use std::collections::BTreeMap;
use std::path::Path;

use cvartune::store::{ExperienceStore, PerformanceReport, StoreConfig, StoreOptions, Stats};
use cvartune::variables::{ControlKind, ControlSetting, Profile};
use cvartune::Error;
use proptest::prelude::*;

fn stats(profile: &Profile, total: f64) -> Stats<f64> {
    let mut r = PerformanceReport::new(16);
    r.push("total_execution_time", total);
    r.push("flush_time_avg", total / 100.0);
    r.summarize(profile)
}

fn fresh(dir: &Path, seed: u64) -> ExperienceStore<f64> {
    ExperienceStore::init(
        dir,
        &Profile::mpich(),
        StoreConfig::with_seed(seed),
        StoreOptions::simulation(),
    )
    .unwrap()
}

fn drive(store: &mut ExperienceStore<f64>, times: &[f64]) {
    let p = store.profile().clone();
    store.record_first_run(&stats(&p, times[0]), 16).unwrap();
    for &t in &times[1..] {
        store.complete_run(&stats(&p, t), 16).unwrap();
    }
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn times(n: usize) -> Vec<f64> {
    (0..n).map(|i| 100.0 - (i % 7) as f64).collect()
}

#[test]
fn first_run_records_baseline_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = fresh(&dir.path().join("s"), 1);
    let p = store.profile().clone();
    assert_eq!(store.export_settings(), ControlSetting::defaults(&p));
    let out = store.record_first_run(&stats(&p, 120.0), 16).unwrap();
    assert_eq!(out.run_index, 1);
    assert!(out.reward.is_none());
    assert_eq!(store.baseline().unwrap().total_time(&p), 120.0);
    assert_eq!(store.runs()[0].settings, ControlSetting::defaults(&p));
    assert!(store.pending().is_some());
    assert!(matches!(
        store.record_first_run(&stats(&p, 120.0), 16),
        Err(Error::BaselineExists)
    ));
}

#[test]
fn complete_run_without_baseline_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = fresh(&dir.path().join("s"), 1);
    let p = store.profile().clone();
    let err = store.complete_run(&stats(&p, 100.0), 16).unwrap_err();
    assert!(matches!(err, Error::MissingBaseline));
    assert!(err.to_string().contains("AITUNING_FIRST_RUN=1"));
    assert!(store.runs().is_empty());
}

#[test]
fn reward_is_relative_to_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = fresh(&dir.path().join("s"), 2);
    let p = store.profile().clone();
    store.record_first_run(&stats(&p, 100.0), 16).unwrap();
    let out = store.complete_run(&stats(&p, 87.0), 16).unwrap();
    assert!((out.reward.unwrap() - 0.13).abs() < 1e-12);
    let out = store.complete_run(&stats(&p, 150.0), 16).unwrap();
    assert!((out.reward.unwrap() + 0.5).abs() < 1e-12);
}

#[test]
fn reopen_restores_everything() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let mut store = fresh(&path, 3);
    drive(&mut store, &times(30));
    let runs = store.runs().to_vec();
    let net = store.network().clone();
    let next = store.export_settings();
    let pending = store.pending().cloned();
    drop(store);
    let back = ExperienceStore::<f64>::open(&path, StoreOptions::simulation()).unwrap();
    assert_eq!(back.runs(), &runs[..]);
    assert_eq!(back.network(), &net);
    assert_eq!(back.export_settings(), next);
    assert_eq!(back.pending().cloned(), pending);
    assert_eq!(back.transitions().len(), 29);
}

#[test]
fn continuing_after_reopen_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ts = times(25);
    let mut sa = fresh(&a, 9);
    drive(&mut sa, &ts);
    let mut sb = fresh(&b, 9);
    drive(&mut sb, &ts[..10]);
    drop(sb);
    let mut sb = ExperienceStore::<f64>::open(&b, StoreOptions::simulation()).unwrap();
    let p = sb.profile().clone();
    for &t in &ts[10..] {
        sb.complete_run(&stats(&p, t), 16).unwrap();
    }
    assert_eq!(sa.runs(), sb.runs());
    assert_eq!(sa.network(), sb.network());
}

#[test]
fn identical_inputs_give_byte_identical_stores() {
    let dir = tempfile::tempdir().unwrap();
    let ts = times(40);
    for name in ["a", "b"] {
        let mut s = fresh(&dir.path().join(name), 5);
        drive(&mut s, &ts);
    }
    let a = dir_contents(&dir.path().join("a"));
    let b = dir_contents(&dir.path().join("b"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert_eq!(a, b);
}

#[test]
fn failed_run_leaves_store_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let mut store = fresh(&path, 4);
    drive(&mut store, &times(5));
    let before = dir_contents(&path);
    let p = store.profile().clone();
    let mut no_total = PerformanceReport::<f64>::new(16);
    no_total.push("flush_time_avg", 1.0);
    assert!(store.complete_run(&no_total.summarize(&p), 16).is_err());
    assert_eq!(store.runs().len(), 5);
    assert_eq!(dir_contents(&path), before);
    store.complete_run(&stats(&p, 90.0), 16).unwrap();
    assert_eq!(store.runs().len(), 6);
}

#[test]
fn second_writer_is_locked_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let store = fresh(&path, 1);
    assert!(matches!(
        ExperienceStore::<f64>::open(&path, StoreOptions::simulation()),
        Err(Error::Locked(_))
    ));
    // readers never take the lock
    assert!(ExperienceStore::<f64>::open_read_only(&path).is_ok());
    drop(store);
    assert!(ExperienceStore::<f64>::open(&path, StoreOptions::simulation()).is_ok());
}

#[test]
fn init_refuses_existing_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    drop(fresh(&path, 1));
    let err = ExperienceStore::<f64>::init(
        &path,
        &Profile::mpich(),
        StoreConfig::with_seed(1),
        StoreOptions::simulation(),
    )
    .err()
    .unwrap();
    assert!(matches!(err, Error::AlreadyInitialized(_)));
    assert!(matches!(
        ExperienceStore::<f64>::open(&dir.path().join("none"), StoreOptions::simulation()),
        Err(Error::Uninitialized(_))
    ));
}

#[test]
fn tampered_snapshot_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let mut store = fresh(&path, 1);
    drive(&mut store, &times(3));
    drop(store);
    let state = std::fs::read_dir(&path)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("state-"))
        .unwrap();
    let mut bytes = std::fs::read(&state).unwrap();
    let i = bytes.len() / 2;
    bytes[i] ^= 0x01;
    std::fs::write(&state, bytes).unwrap();
    match ExperienceStore::<f64>::open_read_only(&path) {
        Err(Error::Corrupt(msg)) => assert!(msg.contains("hash mismatch")),
        other => panic!("expected corruption, got {:?}", other.err()),
    }
}

#[test]
fn truncated_log_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let mut store = fresh(&path, 1);
    drive(&mut store, &times(4));
    drop(store);
    let log = path.join("transitions.jsonl");
    let len = std::fs::metadata(&log).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&log).unwrap();
    f.set_len(len - 10).unwrap();
    assert!(matches!(
        ExperienceStore::<f64>::open_read_only(&path),
        Err(Error::Corrupt(_))
    ));
}

#[test]
fn uncommitted_tail_is_ignored_then_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let mut store = fresh(&path, 1);
    drive(&mut store, &times(4));
    drop(store);
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path.join("runs-0.jsonl"))
        .unwrap();
    f.write_all(b"{\"run_index\": 99, \"torn").unwrap();
    drop(f);
    let mut store = ExperienceStore::<f64>::open(&path, StoreOptions::simulation()).unwrap();
    assert_eq!(store.runs().len(), 4);
    let p = store.profile().clone();
    store.complete_run(&stats(&p, 95.0), 16).unwrap();
    drop(store);
    let store = ExperienceStore::<f64>::open_read_only(&path).unwrap();
    assert_eq!(store.runs().len(), 5);
    assert_eq!(store.runs()[4].run_index, 5);
}

#[test]
fn recapture_starts_a_new_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let mut store = fresh(&path, 1);
    drive(&mut store, &times(6));
    let transitions = store.transitions().len();
    let p = store.profile().clone();
    let out = store.ingest(&stats(&p, 80.0), 32, true).unwrap();
    assert!(out.baseline_recaptured);
    assert_eq!(out.run_index, 1);
    assert_eq!(store.epoch(), 1);
    assert_eq!(store.runs().len(), 1);
    assert_eq!(store.transitions().len(), transitions);
    assert_eq!(store.baseline().unwrap().total_time(&p), 80.0);
    drop(store);
    let store = ExperienceStore::<f64>::open_read_only(&path).unwrap();
    assert_eq!(store.runs().len(), 1);
    assert!(!path.join("runs-0.jsonl").exists());
}

#[test]
fn f32_store_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let p = Profile::mpich();
    let mut store =
        ExperienceStore::<f32>::init(&path, &p, StoreConfig::with_seed(1), StoreOptions::simulation())
            .unwrap();
    let mut r = PerformanceReport::<f32>::new(8);
    r.push("total_execution_time", 10.0);
    store.record_first_run(&r.summarize(&p), 8).unwrap();
    drop(store);
    assert!(ExperienceStore::<f32>::open_read_only(&path).is_ok());
    // opening with the wrong scalar is refused
    assert!(ExperienceStore::<f64>::open_read_only(&path).is_err());
}

fn one_step_apart(p: &Profile, a: &ControlSetting, b: &ControlSetting) -> bool {
    let mut changed = 0;
    for spec in &p.controls {
        let (x, y) = (a.get(&spec.name).unwrap(), b.get(&spec.name).unwrap());
        if x == y {
            continue;
        }
        changed += 1;
        let ok = match spec.kind {
            ControlKind::Binary => x + y == 1,
            ControlKind::SteppedNumeric => (x - y).abs() == spec.step,
        };
        if !ok {
            return false;
        }
    }
    changed <= 1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectory_invariants(seed in any::<u64>(), ts in prop::collection::vec(50.0f64..200.0, 2..40)) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = fresh(&dir.path().join("s"), seed);
        drive(&mut store, &ts);
        let p = store.profile().clone();
        let runs = store.runs();
        prop_assert_eq!(runs.len(), ts.len());
        prop_assert_eq!(store.transitions().len(), runs.len() - 1);
        for w in runs.windows(2) {
            prop_assert!(one_step_apart(&p, &w[0].settings, &w[1].settings));
            prop_assert!(w[1].settings.validate(&p).is_ok());
        }
        prop_assert!(one_step_apart(&p, &runs.last().unwrap().settings, &store.export_settings()));
        for (i, r) in runs.iter().enumerate() {
            prop_assert_eq!(r.run_index, i as u64 + 1);
        }
        prop_assert!(store.network().is_finite());
    }
}
