use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cvartune");

fn profiles() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("profiles")
}

fn cvartune(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("AITUNING_FIRST_RUN")
        .env_remove("CVARTUNE_FAULT_POINT")
        .output()
        .unwrap()
}

fn first_run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("AITUNING_FIRST_RUN", "1")
        .env_remove("CVARTUNE_FAULT_POINT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_report(path: &Path, total: f64) {
    std::fs::write(
        path,
        format!("nprocs 32\ntotal_execution_time {total}\nflush_time_avg {}\n", total / 50.0),
    )
    .unwrap();
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn init_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("s");
    assert_eq!(code(&cvartune(&["init", "--store", s(&store)])), 0);
    let again = cvartune(&["init", "--store", s(&store)]);
    assert_eq!(code(&again), 2);
    let bad = tmp.path().join("bad.profile");
    std::fs::write(&bad, "{ \"layer\": ").unwrap();
    let o = cvartune(&["init", "--store", s(&tmp.path().join("t")), "--profile", s(&bad)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("parse"));
    assert_eq!(code(&cvartune(&["init"])), 1);
    assert_eq!(code(&cvartune(&["frobnicate"])), 1);
}

#[test]
fn episode_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("s");
    let env = tmp.path().join("next.env");
    let report = tmp.path().join("report.txt");
    assert_eq!(code(&cvartune(&["init", "--store", s(&store), "--seed", "7"])), 0);

    assert_eq!(code(&cvartune(&["pre-run", "--store", s(&store), "--out", s(&env)])), 0);
    let defaults = std::fs::read_to_string(&env).unwrap();
    assert!(defaults.contains("MPIR_CVAR_POLLS_BEFORE_YIELD=1000"));

    write_report(&report, 100.0);
    let o = cvartune(&["post-run", "--store", s(&store), "--report", s(&report)]);
    assert_eq!(code(&o), 2, "baseline required first");
    assert!(stderr(&o).contains("AITUNING_FIRST_RUN=1"));

    let o = first_run(&["post-run", "--store", s(&store), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("baseline recorded"));

    for total in [95.0, 97.0, 99.0] {
        write_report(&report, total);
        let o = cvartune(&["post-run", "--store", s(&store), "--report", s(&report)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("reward"));
        // the settings printed for the next run are what pre-run exports next
        let next = stdout(&o).split("next settings:\n").nth(1).unwrap().to_string();
        assert_eq!(code(&cvartune(&["pre-run", "--store", s(&store), "--out", s(&env)])), 0);
        assert_eq!(std::fs::read_to_string(&env).unwrap(), next);
    }

    let o = cvartune(&["inspect", "--store", s(&store)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("runs:         4"));
    assert!(stdout(&o).contains("baseline:     100.000000"));
}

#[test]
fn malformed_report_leaves_store_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("s");
    let report = tmp.path().join("r.txt");
    assert_eq!(code(&cvartune(&["init", "--store", s(&store)])), 0);
    write_report(&report, 100.0);
    assert_eq!(code(&first_run(&["post-run", "--store", s(&store), "--report", s(&report)])), 0);
    let before = dir_snapshot(&store);
    for bad in ["nprocs 4\ntotal_execution_time abc\n", "total_execution_time 1\n", "nprocs 4\nnope 1\n"] {
        std::fs::write(&report, bad).unwrap();
        let o = cvartune(&["post-run", "--store", s(&store), "--report", s(&report)]);
        assert_eq!(code(&o), 3, "{bad:?}");
        assert_eq!(dir_snapshot(&store), before);
    }
    let o = cvartune(&["post-run", "--store", s(&store), "--report", s(&tmp.path().join("missing"))]);
    assert_ne!(code(&o), 0);
    assert_eq!(dir_snapshot(&store), before);
}

#[test]
fn locked_store_fails_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("s");
    let report = tmp.path().join("r.txt");
    assert_eq!(code(&cvartune(&["init", "--store", s(&store)])), 0);
    write_report(&report, 100.0);
    let _held = cvartune::store::StoreLock::acquire(&store).unwrap();
    let start = std::time::Instant::now();
    let o = first_run(&["post-run", "--store", s(&store), "--report", s(&report)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("locked"));
    assert!(start.elapsed().as_secs() < 5);
}

#[test]
fn recommend_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("s");
    let report = tmp.path().join("r.txt");
    let out = tmp.path().join("rec.env");
    assert_eq!(code(&cvartune(&["init", "--store", s(&store)])), 0);
    write_report(&report, 100.0);
    assert_eq!(code(&first_run(&["post-run", "--store", s(&store), "--report", s(&report)])), 0);
    for _ in 0..9 {
        write_report(&report, 120.0);
        assert_eq!(code(&cvartune(&["post-run", "--store", s(&store), "--report", s(&report)])), 0);
    }
    let o = cvartune(&["recommend", "--store", s(&store), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("insufficient runs"));

    for _ in 0..10 {
        write_report(&report, 120.0);
        assert_eq!(code(&cvartune(&["post-run", "--store", s(&store), "--report", s(&report)])), 0);
    }
    // every run after the baseline is slower: defaults with a warning
    let o = cvartune(&["recommend", "--store", s(&store), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("defaults returned"));
    assert!(stderr(&o).contains("WARN"));
    let rec = std::fs::read_to_string(&out).unwrap();
    assert!(rec.contains("MPIR_CVAR_CH3_EAGER_MAX_MSG_SIZE=131072"));

    let o = cvartune(&["recommend", "--store", s(&store), "--tolerance", "-1", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn inspect_states() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = cvartune(&["inspect", "--store", s(&empty)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "uninitialized");

    let store = tmp.path().join("s");
    assert_eq!(code(&cvartune(&["init", "--store", s(&store)])), 0);
    let state = std::fs::read_dir(&store)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("state-"))
        .unwrap();
    let mut bytes = std::fs::read(&state).unwrap();
    bytes[10] ^= 0x20;
    std::fs::write(&state, bytes).unwrap();
    let o = cvartune(&["inspect", "--store", s(&store)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hash mismatch"));
}

#[test]
fn simulate_writes_deterministic_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let profile = profiles().join("parabola.profile");
    let plant = profiles().join("parabola.plant");
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = tmp.path().join(name);
        let o = cvartune(&[
            "simulate", "--profile", s(&profile), "--plant", s(&plant), "--episodes", "40",
            "--seeds", "3", "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("median regret"));
        csvs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 40);
    assert!(text.starts_with("seed,episode,EAGER_MAX_MSG_SIZE,total_time,reward,action"));

    let o = cvartune(&[
        "simulate", "--profile", s(&profile), "--plant", s(&plant), "--episodes", "5",
        "--seeds", "1", "--out", s(&tmp.path().join("c.csv")),
    ]);
    assert_eq!(code(&o), 1);
}
