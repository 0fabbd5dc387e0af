//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use agv_core::model::VelocityState;
use agv_core::nlp::{cost_and_gradient, solve, InputBounds, SolverOptions, Weights};
use agv_core::par::Execution;
use agv_core::planner::{
    heading_roughness, smooth_path, timestamp_constant_velocity, SmoothingParams,
};
use agv_core::reso::{ChannelGains, ResoChannel};
use agv_core::sim::{self, report, ScenarioConfig};
use agv_core::verify::{
    bfs_path_cost, check_sat_eps, fd_gradient, grid_search_h2, random_grid, random_horizon_problem,
};
use agv_core::world::{densify_path, plan_global_path, GridMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str, overrides: &[&str]) -> ScenarioConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ScenarioConfig::load_with_overrides(&scenario_dir().join(name), &o)
        .expect("shipped scenario loads")
}

fn shipped_scenarios() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn c1_sat_eps() -> Outcome {
    let t = Instant::now();
    let reports: Vec<_> = [0.2, 0.01]
        .iter()
        .map(|&e| (e, check_sat_eps(e, 1_000_000, 1)))
        .collect();
    let el = t.elapsed();
    let pass = reports.iter().all(|(e, r)| r.passes(*e)) && within(el, 5.0);
    let detail = reports
        .iter()
        .map(|(e, r)| {
            format!(
                "eps={e}: odd={:.1e} knot={:.1e} gap={:.4}<= {:.4} slope=[{:.3},{:.3}]",
                r.max_odd_error,
                r.max_knot_jump,
                r.max_sat_gap,
                e / 2.0,
                r.min_slope,
                r.max_slope
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        pass,
        detail: format!("{detail}; {:.2}s", el.as_secs_f64()),
    }
}

/// Scalar loop `eta' = xi(t) + u` regulated to zero; returns the post-transient
/// maximum of `|xi - xi_hat|`.
fn observer_error(eps: f64) -> f64 {
    let dt = 1e-4;
    let gains = ChannelGains {
        observer_gain: 1.0,
        epsilon: eps,
        b0: 1.0,
        feedback: -5.0,
        bound: 10.0,
    };
    let mut ch = ResoChannel::new(gains).unwrap();
    let xi = |t: f64| 0.5 * t.sin();
    let (mut eta, mut u, mut worst) = (0.0, 0.0, 0.0f64);
    let steps = (12.0 / dt) as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let est = ch.observe(eta, u, dt).unwrap();
        if t >= 2.0 {
            worst = worst.max((xi(t) - est).abs());
        }
        u = ch.control(eta, 0.0, 0.0);
        // exact integral of the sinusoid over the step
        eta += 0.5 * ((t).cos() - (t + dt).cos()) + u * dt;
    }
    worst
}

fn c2_reso_order_eps() -> Outcome {
    let t = Instant::now();
    let errs: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&e| observer_error(e))
        .collect();
    let r1 = errs[0] / errs[1];
    let r2 = errs[1] / errs[2];
    let el = t.elapsed();
    let ok = |r: f64| (1.6..=2.4).contains(&r);
    Outcome {
        pass: ok(r1) && ok(r2) && within(el, 5.0),
        detail: format!(
            "max|xi-xi_hat| = {:.3e}, {:.3e}, {:.3e}; ratios {r1:.3}, {r2:.3}; {:.2}s",
            errs[0],
            errs[1],
            errs[2],
            el.as_secs_f64()
        ),
    }
}

/// `eta' = -0.5 eta + 1 + b u` tracking a constant reference with nominal `b0 = 1`.
fn scalar_loop(b: f64) -> (f64, f64) {
    let dt = 1e-3;
    let gains = ChannelGains {
        observer_gain: 1.0,
        epsilon: 0.01,
        b0: 1.0,
        feedback: -5.0,
        bound: 10.0,
    };
    let mut ch = ResoChannel::new(gains).unwrap();
    let reference = 1.0;
    let (mut eta, mut u, mut peak) = (0.0f64, 0.0, 0.0f64);
    for _ in 0..(15.0 / dt) as usize {
        ch.observe(eta, u, dt).unwrap();
        u = ch.control(eta, reference, 0.0);
        // exact solution of the linear drift over the step with u held
        let target = (1.0 + b * u) / 0.5;
        eta = target + (eta - target) * (-0.5 * dt).exp();
        peak = peak.max(eta.abs());
    }
    ((eta - reference).abs(), peak)
}

fn c3_sign_only_gain() -> Outcome {
    let t = Instant::now();
    let res: Vec<(f64, (f64, f64))> = [0.2, 1.0, 5.0]
        .iter()
        .map(|&b| (b, scalar_loop(b)))
        .collect();
    let el = t.elapsed();
    let pass = res
        .iter()
        .all(|(_, (e, peak))| *e <= 0.01 && peak.is_finite() && *peak < 10.0)
        && within(el, 5.0);
    let detail = res
        .iter()
        .map(|(b, (e, p))| format!("b={b}: |e|={e:.2e} peak={p:.3}"))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        pass,
        detail: format!("{detail}; {:.2}s", el.as_secs_f64()),
    }
}

fn c4_case_comparison() -> Outcome {
    let t = Instant::now();
    let run = |name: &str, ctrl: &str| {
        let cfg = load(name, &[&format!("dynamic.controller={ctrl}")]);
        sim::run_scenario(&cfg).expect("case run").metrics
    };
    let (r1, p1) = (run("case1.toml", "reso"), run("case1.toml", "pid"));
    let (r2, p2) = (run("case2.toml", "reso"), run("case2.toml", "pid"));
    let el = t.elapsed();
    let ratio_v = r1.v_rmse / p1.v_rmse;
    let ratio_w = r1.w_rmse / p1.w_rmse;
    let case1 = (0.5..=2.0).contains(&ratio_v) && (0.5..=2.0).contains(&ratio_w);
    let case2 = r2.v_rmse < p2.v_rmse && r2.w_rmse < p2.w_rmse;
    Outcome {
        pass: case1 && case2 && within(el, 60.0),
        detail: format!(
            "case1 RESO/PID ratio v={ratio_v:.3} w={ratio_w:.3}; case2 RESO v={:.4} w={:.5} vs PID v={:.4} w={:.5}; {:.2}s",
            r2.v_rmse,
            r2.w_rmse,
            p2.v_rmse,
            p2.w_rmse,
            el.as_secs_f64()
        ),
    }
}

fn c5_table_ordering() -> Outcome {
    let t = Instant::now();
    let rows = sim::compare_schemes(&load("fig3_replica.toml", &[]), Execution::Parallel)
        .expect("comparison");
    let el = t.elapsed();
    let get = |s: &str| {
        rows.iter()
            .find(|r| r.scheme == s)
            .expect("scheme row")
            .metrics
            .e_rmse
    };
    let (mm, am, mp) = (get("MPC+MPC"), get("A*+MPC"), get("MPC+PID"));
    Outcome {
        pass: mm < am && mm < mp && mm <= 0.05 && within(el, 600.0),
        detail: format!(
            "e_rmse MPC+PID={mp:.4} A*+MPC={am:.4} MPC+MPC={mm:.4} m; {:.2}s",
            el.as_secs_f64()
        ),
    }
}

fn c6_constraints() -> Outcome {
    let mut worst_ref: f64 = f64::NEG_INFINITY;
    let mut worst_cmd: f64 = f64::NEG_INFINITY;
    let mut checked = 0;
    for path in shipped_scenarios() {
        let cfg = ScenarioConfig::load(&path).expect("scenario loads");
        let slope = cfg.vehicle.half_track * 4.0;
        let margin = |u: &VelocityState| u.v.abs() + slope * u.w.abs() - cfg.planner.v_max;
        let out = sim::run_scenario(&cfg).expect("scenario runs");
        for u in &out.plan.planned.inputs {
            worst_ref = worst_ref.max(margin(u));
        }
        for r in out.log.records.iter().filter(|r| r.high) {
            worst_cmd = worst_cmd.max(margin(&r.command).max(-r.command.v));
        }
        checked += 1;
    }
    Outcome {
        pass: checked > 0 && worst_ref <= 1e-9 && worst_cmd <= 1e-9,
        detail: format!(
            "{checked} scenarios; worst excess reference {worst_ref:.2e}, command {worst_cmd:.2e}"
        ),
    }
}

fn c7_nlp_oracle() -> Outcome {
    let t = Instant::now();
    let bounds = InputBounds::new(0.0, 0.4, 0.4, 0.4, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = SolverOptions::default();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..50 {
        let p = random_horizon_problem(&mut rng, 2, &bounds);
        let sol = solve(&p, &p.input_refs, &opts);
        let grid = grid_search_h2(&p, 41, (0.0, 0.4), 0.4, Execution::Parallel);
        let excess = sol.cost - grid.cost - grid.resolution_gap;
        worst_excess = worst_excess.max(excess);
        if excess > 1e-12 || !sol.converged {
            failures += 1;
        }
    }
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let h = rng.random_range(2..=10);
        let p = random_horizon_problem(&mut rng, h, &bounds);
        let u: Vec<VelocityState> = (0..h)
            .map(|_| VelocityState::new(rng.random_range(0.0..0.4), rng.random_range(-0.4..0.4)))
            .collect();
        let (_, g) = cost_and_gradient(&p, &u);
        let fd = fd_gradient(&p, &u, 1e-6);
        let diff: f64 = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(diff / norm.max(1e-12));
    }
    let el = t.elapsed();
    Outcome {
        pass: failures == 0 && worst_rel <= 1e-5 && within(el, 60.0),
        detail: format!(
            "H=2: {failures}/50 above oracle+gap (worst excess {worst_excess:.2e}); gradient worst rel err {worst_rel:.2e}; {:.2}s",
            el.as_secs_f64()
        ),
    }
}

fn c8_smoothing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = SmoothingParams {
        horizon: 20,
        update_horizon: 10,
        weights: Weights::default(),
        v_c: 0.4,
        bounds: InputBounds::new(0.0, 0.4, 0.4, 0.4, 0.0),
        solver: SolverOptions::default(),
    };
    let (mut maps, mut rough_ok, mut end_ok) = (0, 0, 0);
    let mut worst_end: f64 = 0.0;
    let mut lines = Vec::new();
    while maps < 10 {
        let (w, h) = (rng.random_range(12..24), rng.random_range(12..24));
        let mut map = GridMap::empty(w, h, 0.5);
        for iy in 0..h {
            for ix in 0..w {
                map.set_occupied(ix, iy, rng.random_bool(0.2));
            }
        }
        let s = (rng.random_range(0..w), rng.random_range(0..h));
        let g = (rng.random_range(0..w), rng.random_range(0..h));
        if map.is_occupied(s.0, s.1)
            || map.is_occupied(g.0, g.1)
            || s.0.abs_diff(g.0) + s.1.abs_diff(g.1) < 10
        {
            continue;
        }
        let Ok(path) = plan_global_path(&map, map.cell_center(s.0, s.1), map.cell_center(g.0, g.1))
        else {
            continue;
        };
        let timed =
            timestamp_constant_velocity(&densify_path(&path, 0.02), 0.4).expect("timed path");
        let before = heading_roughness(&timed.poses);
        if before == 0.0 {
            // a straight path has nothing to smooth
            continue;
        }
        maps += 1;
        let (out, _) = smooth_path(&timed, &params).expect("smoothing converges");
        let after = heading_roughness(&out);
        let (a, b) = (timed.poses.last().unwrap(), out.last().unwrap());
        let lateral = (-a.theta.sin() * (b.x - a.x) + a.theta.cos() * (b.y - a.y)).abs();
        let start_dev = timed.poses[0].distance_to(&out[0]);
        rough_ok += usize::from(after < before);
        end_ok += usize::from(lateral <= 0.01 && start_dev <= 0.01);
        worst_end = worst_end.max(lateral);
        lines.push(format!("{before:.2}->{after:.3}/{lateral:.3}"));
    }
    Outcome {
        pass: rough_ok == 10 && end_ok == 10,
        detail: format!(
            "roughness reduced {rough_ok}/10, endpoint lateral <= 0.01 m {end_ok}/10 (worst {worst_end:.3} m); roughness/lateral: {}",
            lines.join(" ")
        ),
    }
}

fn c9_astar_vs_bfs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut mismatches, mut with_path) = (0, 0);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let density = rng.random_range(0.0..0.45);
        let mut map = random_grid(&mut rng, w, h, density);
        let s = (rng.random_range(0..w), rng.random_range(0..h));
        let g = (rng.random_range(0..w), rng.random_range(0..h));
        map.set_occupied(s.0, s.1, false);
        map.set_occupied(g.0, g.1, false);
        let astar = plan_global_path(&map, map.cell_center(s.0, s.1), map.cell_center(g.0, g.1))
            .ok()
            .map(|p| p.len() - 1);
        let bfs = bfs_path_cost(&map, s, g);
        with_path += usize::from(bfs.is_some());
        mismatches += usize::from(astar != bfs);
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("200 grids ({with_path} connected), {mismatches} mismatches"),
    }
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let read_all = |d: &std::path::Path| {
        let mut files: Vec<(String, Vec<u8>)> = walk(d)
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(|p| {
                (
                    p.strip_prefix(d).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let noisy = load("noisy.toml", &[]);
    let case2 = load("case2.toml", &["noise.seed=7", "noise.sigma_xy=0.005"]);
    let mut runs = Vec::new();
    for (i, exec) in [Execution::Parallel, Execution::Sequential]
        .into_iter()
        .enumerate()
    {
        let root = dir.path().join(format!("rep{i}"));
        for cfg in [&noisy, &case2] {
            let out = sim::run_scenario(cfg).expect("run");
            sim::write_run_outputs(&root.join(&cfg.name), &out).expect("write run");
        }
        let rows = sim::compare_schemes(&load("fig3_replica.toml", &[]), exec).expect("compare");
        sim::write_comparison_outputs(&root.join("compare"), &rows).expect("write compare");
        runs.push(read_all(&root));
    }
    let files = runs[0].len();
    let same = runs[0] == runs[1] && files > 0;
    let header_ok = runs[0]
        .iter()
        .any(|(n, b)| n.ends_with("run.csv") && b.starts_with(report::RUN_COLUMNS[0].as_bytes()));
    Outcome {
        pass: same && header_ok,
        detail: format!("{files} CSV files compared byte for byte across repeats"),
    }
}

fn walk(d: &std::path::Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(d).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 sat_eps exactness", c1_sat_eps),
        ("2 observer error is O(eps)", c2_reso_order_eps),
        ("3 sign-only gain robustness", c3_sign_only_gain),
        (
            "4 case 1 comparable, case 2 RESO beats PID",
            c4_case_comparison,
        ),
        ("5 scheme ordering on the replica course", c5_table_ordering),
        ("6 velocity constraint satisfaction", c6_constraints),
        ("7 NLP oracle equivalence", c7_nlp_oracle),
        ("8 smoothing roughness and endpoints", c8_smoothing),
        ("9 A* matches BFS", c9_astar_vs_bfs),
        ("10 determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!(
            "[{}] criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
