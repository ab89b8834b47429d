use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn brown_mde(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brown-mde"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const COARSE: &str = "--grid=-1.5,1.5,-1.5,1.5,0.1";

#[test]
fn validate_reports_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let o = brown_mde(&["validate", "--config", "reducible.cfg"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("NotPrimitive"));

    let o = brown_mde(&["validate", "--config", "circular.cfg"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("valid"));
}

#[test]
fn solve_prints_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = brown_mde(&["solve", "--config", "circular.cfg"], dir.path());
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().count(), 1);
    assert!(out.contains("0.6180339887"), "{out}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = brown_mde(&["validate", "--config", "missing.cfg"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config::load"));

    fs::write(dir.path().join("bad.cfg"), "profile = [[1.0]]\nunknown_key = 3\n").unwrap();
    assert_eq!(code(&brown_mde(&["validate", "--config", "bad.cfg"], dir.path())), 2);

    assert_eq!(code(&brown_mde(&["validate"], dir.path())), 2);
    assert_eq!(code(&brown_mde(&["solve", "--config", "circular.cfg", "--grid", "1,2,3"], dir.path())), 2);
    assert_eq!(code(&brown_mde(&["bogus", "--config", "circular.cfg"], dir.path())), 2);
    assert_eq!(
        code(&brown_mde(&["verify", "--config", "circular.cfg", "--only", "12"], dir.path())),
        2
    );
}

#[test]
fn numerical_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // two nodes per axis leave no interior node for the Laplacian
    let o = brown_mde(&["density", "--config", "circular.cfg", "--grid=0,0.1,0,0.1,0.1"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("brown::density_from_L"));
}

#[test]
fn density_reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (out, threads) in runs {
        let o = brown_mde(
            &["density", "--config", "circular.cfg", COARSE, "--out", out, "--threads", threads],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["density.csv", "density.json", "potential.csv", "potential.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(file)).unwrap(), "{file}");
        assert_eq!(a, fs::read(dir.path().join("c").join(file)).unwrap(), "{file}");
    }
    let side: Value = serde_json::from_slice(&fs::read(dir.path().join("a/density.json")).unwrap()).unwrap();
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(side["quantity"], "sigma");
    let mass = side["total_mass"].as_f64().unwrap();
    assert!((mass - 1.0).abs() < 0.02, "{mass}");
}

#[test]
fn overrides_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let hash = |out: &str, extra: &[&str]| {
        let mut args = vec!["sample", "--config", "circular.cfg", "--n", "20", "--out", out];
        args.extend_from_slice(extra);
        assert_eq!(code(&brown_mde(&args, dir.path())), 0);
        let name = fs::read_dir(dir.path().join(out))
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.extension().is_some_and(|e| e == "json"))
            .unwrap();
        let v: Value = serde_json::from_slice(&fs::read(name).unwrap()).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    let base = hash("x", &[]);
    assert_eq!(base, hash("y", &[]), "output dir is not part of the hash");
    assert_ne!(base, hash("z", &["--seed", "9"]));
    assert!(dir.path().join("z/esd_seed9.csv").exists());
}

#[test]
fn sample_and_pseudospec_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = brown_mde(&["sample", "--config", "twopoint.cfg", "--n", "40", "--out", "s"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("s/esd_seed20240602.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("re_lambda,im_lambda"));
    assert_eq!(lines.count(), 40);

    let o = brown_mde(
        &[
            "pseudospec",
            "--config",
            "circular.cfg",
            "--n",
            "30",
            "--grid=-1,1,-1,1,0.25",
            "--eps",
            "0.05,0.2",
            "--out",
            "p",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    for f in ["smin.csv", "smin.json", "pseudospec_0p05.csv", "pseudospec_0p2.csv"] {
        assert!(dir.path().join("p").join(f).exists(), "{f}");
    }
}

#[test]
fn support_writes_distance_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let o = brown_mde(
        &["support", "--config", "circular.cfg", "--grid=-1.5,1.5,-1.5,1.5,0.5", "--out", "d"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["dist0.csv", "dist0.json", "s_eps_0.csv", "s_eps_0p05.csv", "s_eps_0p1.csv"] {
        assert!(dir.path().join("d").join(f).exists(), "{f}");
    }
}

#[test]
fn verify_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = brown_mde(&["verify", "--config", "circular.cfg", "--only", "1,2"], dir.path());
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("criterion 1 PASS") && out.contains("criterion 2 PASS"), "{out}");
    let v: Value = serde_json::from_slice(&fs::read(dir.path().join("out/circular/verify.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
}
