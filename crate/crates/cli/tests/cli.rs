//! End-to-end runs of the `ddafl` binary on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddafl::metrics::parse_csv;

const TINY: &[&str] = &[
    "--set",
    "train_episodes=3",
    "--set",
    "test_episodes=1",
    "--set",
    "slots_per_episode=4",
    "--set",
    "minibatch_size=4",
    "--set",
    "replay_capacity=100",
    "--set",
    "shard_size=60",
    "--set",
    "rsu_shard_size=60",
    "--set",
    "test_set_size=100",
];

fn ddafl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddafl"))
        .args(args)
        .args(TINY)
        .arg("--out")
        .arg(out)
        .env_remove("SIM_SEED")
        .output()
        .expect("binary runs")
}

fn single_dir(out: &Path, prefix: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

/// Parses a metrics file and checks the filter never let a breach through.
fn checked_rows(path: &Path) -> Vec<ddafl::metrics::MetricsRow> {
    let rows = parse_csv(&fs::read_to_string(path).unwrap()).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.filter_violations == 0));
    rows
}

#[test]
fn train_then_test_round_trip() {
    let out = tempfile::tempdir().unwrap();
    let train = ddafl(&["train"], out.path());
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let cell = single_dir(out.path(), "ddafl-s1-");
    let manifest = fs::read_to_string(cell.join("checkpoint/manifest.json")).unwrap();
    assert!(manifest.contains("\"episodes\": 3"), "{manifest}");
    assert!(manifest.contains("rng_digest"));
    let train_rows = checked_rows(&cell.join("train.csv"));
    assert!(train_rows.iter().all(|r| r.stage == "train"));

    let ckpt = cell.join("checkpoint");
    let test = ddafl(
        &["test", "--checkpoint", ckpt.to_str().unwrap()],
        out.path(),
    );
    assert!(
        test.status.success(),
        "{}",
        String::from_utf8_lossy(&test.stderr)
    );
    let rows = checked_rows(&cell.join("test.csv"));
    assert!(rows
        .iter()
        .all(|r| r.stage == "test" && r.run_id.starts_with("ddafl-s1-")));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let run = ddafl(&["ablation", "--seed", "9"], dir.path());
        assert!(
            run.status.success(),
            "{}",
            String::from_utf8_lossy(&run.stderr)
        );
    }
    for scheme in ["ddafl-s9-", "ddafl_no_lt-s9-", "ddafl_no_ct-s9-"] {
        let left = fs::read(single_dir(a.path(), scheme).join("metrics.csv")).unwrap();
        let right = fs::read(single_dir(b.path(), scheme).join("metrics.csv")).unwrap();
        assert_eq!(left, right, "{scheme}");
    }
}

#[test]
fn seed_comes_from_environment_unless_flag_given() {
    let out = tempfile::tempdir().unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_ddafl"))
        .args(["baseline", "--scheme", "sync_fl"])
        .args(TINY)
        .arg("--out")
        .arg(out.path())
        .env("SIM_SEED", "42")
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    single_dir(out.path(), "sync_fl-s42-");

    let flagged = Command::new(env!("CARGO_BIN_EXE_ddafl"))
        .args(["baseline", "--scheme", "plain_afl", "--seed", "7"])
        .args(TINY)
        .arg("--out")
        .arg(out.path())
        .env("SIM_SEED", "42")
        .output()
        .unwrap();
    assert!(flagged.status.success());
    single_dir(out.path(), "plain_afl-s7-");
}

#[test]
fn config_file_is_honoured() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("run.cfg");
    fs::write(
        &cfg,
        "# tiny\nseed = 5\nattack = data_flip\nattacked_vehicles = 0\n",
    )
    .unwrap();
    let run = ddafl(
        &[
            "baseline",
            "--scheme",
            "plain_afl",
            "--config",
            cfg.to_str().unwrap(),
        ],
        out.path(),
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let cell = single_dir(out.path(), "plain_afl-s5-");
    let rows = checked_rows(&cell.join("metrics.csv"));
    assert!(rows
        .iter()
        .all(|r| (r.attacked_fraction - 0.2).abs() < 1e-12));
    let saved = fs::read_to_string(cell.join("config.txt")).unwrap();
    assert!(saved.contains("attack = data_flip"), "{saved}");
}

#[test]
fn sweep_writes_both_schemes_per_fraction() {
    let out = tempfile::tempdir().unwrap();
    let run = ddafl(
        &["sweep", "--attack", "class_flip", "--fractions", "0,0.4"],
        out.path(),
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let rows = checked_rows(&single_dir(out.path(), "sweep-class_flip-").join("metrics.csv"));
    for scheme in ["ddafl", "ddafl_no_defense"] {
        for fraction in [0.0, 0.4] {
            assert!(rows
                .iter()
                .any(|r| r.scheme == scheme && (r.attacked_fraction - fraction).abs() < 1e-12));
        }
    }
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let out = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--set", "gamma=1.5"],
        vec!["train", "--set", "no_such_key=1"],
        vec!["baseline", "--scheme", "ddafl"],
        vec!["test", "--checkpoint", "/nonexistent/checkpoint"],
        vec!["train", "--config", "/nonexistent/run.cfg"],
    ] {
        let run = ddafl(&args, out.path());
        assert!(!run.status.success(), "{args:?}");
        let stderr = String::from_utf8_lossy(&run.stderr);
        assert!(stderr.starts_with("ddafl: error:"), "{args:?}: {stderr}");
        assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    }
    let unknown = ddafl(&["train", "--scheme", "fedavg"], out.path());
    assert!(!unknown.status.success());
}
