use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agv_core::sim::scenario::CONFIG_KEYS;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn agvsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agvsim"))
        .args(args)
        .env("SIM_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_key_with_units() {
    let dir = tempfile::tempdir().unwrap();
    let o = agvsim(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for (key, unit, _) in CONFIG_KEYS {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(key));
        let line = line.unwrap_or_else(|| panic!("key {key} missing from --help"));
        assert!(line.contains(&format!("[{unit}]")), "{line}");
    }
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let case2 = scenario("case2.toml");
    let mut files = Vec::new();
    for rep in ["a", "b"] {
        let out = dir.path().join(rep);
        let o = agvsim(
            &out,
            &["run", "--scenario", case2.to_str().unwrap(), "--seed", "7"],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let read = |f: &str| std::fs::read(out.join("case2").join(f)).unwrap();
        files.push((read("metrics.csv"), read("run.csv")));
    }
    assert_eq!(files[0], files[1]);
    let metrics = String::from_utf8(files[0].0.clone()).unwrap();
    assert!(metrics.starts_with("e_max,e_mean,e_rmse,"));
}

#[test]
fn compare_prints_three_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let fig3 = scenario("fig3_replica.toml");
    let o = agvsim(
        dir.path(),
        &["compare", "--scenario", fig3.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table =
        std::fs::read_to_string(dir.path().join("fig3_replica/compare/comparison.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let rmse = |s: &str| {
        rows.iter().find(|r| r[0] == s).unwrap()[3]
            .parse::<f64>()
            .unwrap()
    };
    assert!(rmse("MPC+MPC") < rmse("A*+MPC"));
    assert!(rmse("MPC+MPC") < rmse("MPC+PID"));
    assert!(stdout(&o).contains("below both other schemes: yes"));
    for scheme in ["mpc_pid", "astar_mpc", "mpc_mpc"] {
        assert!(dir
            .path()
            .join("fig3_replica/compare")
            .join(scheme)
            .join("run.csv")
            .is_file());
    }
}

#[test]
fn compare_is_identical_with_and_without_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let fig3 = scenario("fig3_replica.toml");
    let par = dir.path().join("par");
    let seq = dir.path().join("seq");
    assert!(
        agvsim(&par, &["compare", "--scenario", fig3.to_str().unwrap()])
            .status
            .success()
    );
    assert!(agvsim(
        &seq,
        &[
            "compare",
            "--scenario",
            fig3.to_str().unwrap(),
            "--sequential"
        ]
    )
    .status
    .success());
    for f in [
        "comparison.csv",
        "mpc_mpc/run.csv",
        "astar_mpc/run.csv",
        "mpc_pid/run.csv",
    ] {
        let a = std::fs::read(par.join("fig3_replica/compare").join(f)).unwrap();
        let b = std::fs::read(seq.join("fig3_replica/compare").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn epsilon_sweep_scales_estimation_error() {
    let dir = tempfile::tempdir().unwrap();
    let case1 = scenario("case1.toml");
    let o = agvsim(
        dir.path(),
        &[
            "sweep",
            "--scenario",
            case1.to_str().unwrap(),
            "--key",
            "reso.epsilon",
            "--values",
            "0.04,0.02",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| l.starts_with("0.0"))
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2, "{text}");
    let ratio_v = rows[0][6] / rows[1][6];
    let ratio_w = rows[0][7] / rows[1][7];
    assert!((1.5..=2.5).contains(&ratio_v), "{ratio_v}");
    assert!(ratio_w > 1.2, "{ratio_w}");
    for v in ["0.04", "0.02"] {
        assert!(dir
            .path()
            .join("case1/sweep-reso.epsilon")
            .join(v)
            .join("metrics.csv")
            .is_file());
    }
}

#[test]
fn plan_writes_trajectory_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let fig3 = scenario("fig3_replica.toml");
    let o = agvsim(dir.path(), &["plan", "--scenario", fig3.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("fig3_replica/trajectory.csv")).unwrap();
    assert!(csv.starts_with("i,x,y,theta,v_ref,w_ref,t\n"));
    assert!(csv.lines().count() > 100);
    assert!(
        std::fs::read_to_string(dir.path().join("fig3_replica/plot.svg"))
            .unwrap()
            .starts_with("<svg")
    );
    assert!(!dir.path().join("fig3_replica/run.csv").exists());
}

#[test]
fn out_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let explicit = dir.path().join("explicit");
    let fig3 = scenario("fig3_replica.toml");
    let o = agvsim(
        &dir.path().join("env"),
        &[
            "plan",
            "--scenario",
            fig3.to_str().unwrap(),
            "--out",
            explicit.to_str().unwrap(),
        ],
    );
    assert!(o.status.success());
    assert!(explicit.join("fig3_replica/trajectory.csv").is_file());
    assert!(!dir.path().join("env").exists());
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = agvsim(dir.path(), &["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.matches("[PASS]").count(), 3, "{text}");
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let case1 = scenario("case1.toml");
    let case1 = case1.to_str().unwrap();

    let o = agvsim(
        dir.path(),
        &["run", "--scenario", case1, "--set", "reso.bogus=1"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("reso.bogus"));

    let o = agvsim(
        dir.path(),
        &[
            "run",
            "--scenario",
            case1,
            "--set",
            "vehicle.mass_multiplier=-1",
        ],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = agvsim(
        dir.path(),
        &[
            "run",
            "--scenario",
            dir.path().join("missing.toml").to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"bad\"\n\n[planner]\nhorizn = 3\n").unwrap();
    let o = agvsim(dir.path(), &["run", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 4") && err.contains("horizn"), "{err}");

    let o = agvsim(dir.path(), &["launch"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let case1 = scenario("case1.toml");
    // the goal sits inside a rack
    let o = agvsim(
        dir.path(),
        &[
            "plan",
            "--scenario",
            case1.to_str().unwrap(),
            "--set",
            "route.goal=[5.0, 5.0]",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("goal"));
}
