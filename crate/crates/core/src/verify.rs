//! Independent reference computations used to check the optimized code paths:
//! breadth-first search for grid paths, exhaustive grid search for short-horizon
//! control problems, central finite differences for the cost gradient, and
//! sampled property checks of the smooth saturation.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{propagate_kinematics, Pose, VelocityState};
use crate::nlp::{evaluate_cost, solve, HorizonProblem, InputBounds, SolverOptions, Weights};
use crate::par::{map_range, Execution};
use crate::reso::sat_eps;
use crate::world::{plan_global_path, GridMap};

/// Shortest 4-connected step count between two free cells.
pub fn bfs_path_cost(map: &GridMap, start: (usize, usize), goal: (usize, usize)) -> Option<usize> {
    if map.is_occupied(start.0, start.1) || map.is_occupied(goal.0, goal.1) {
        return None;
    }
    let w = map.width();
    let mut dist = vec![usize::MAX; w * map.height()];
    let mut queue = VecDeque::new();
    dist[start.1 * w + start.0] = 0;
    queue.push_back(start);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * w + x];
        if (x, y) == goal {
            return Some(d);
        }
        for (nx, ny) in map.neighbors(x, y) {
            if dist[ny * w + nx] == usize::MAX {
                dist[ny * w + nx] = d + 1;
                queue.push_back((nx, ny));
            }
        }
    }
    None
}

/// Result of an exhaustive grid search over a two-step horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub cost: f64,
    pub inputs: Vec<VelocityState>,
    /// Largest cost change between the minimizer and its axis neighbours on the grid.
    pub resolution_gap: f64,
}

/// Exhaustive search over an `n x n` lattice of the input box per step, keeping
/// only points inside the feasible set. Only horizon 2 is supported.
pub fn grid_search_h2(
    problem: &HorizonProblem,
    n: usize,
    v_range: (f64, f64),
    w_max: f64,
    exec: Execution,
) -> GridSearch {
    assert_eq!(problem.horizon(), 2, "grid search is limited to two steps");
    assert!(n >= 2);
    let axis_v: Vec<f64> = (0..n)
        .map(|i| v_range.0 + (v_range.1 - v_range.0) * i as f64 / (n - 1) as f64)
        .collect();
    let axis_w: Vec<f64> = (0..n)
        .map(|i| -w_max + 2.0 * w_max * i as f64 / (n - 1) as f64)
        .collect();
    let feasible = |i: usize, j: usize| {
        problem
            .bounds
            .contains(VelocityState::new(axis_v[i], axis_w[j]), 1e-12)
    };

    let costs: Vec<f64> = map_range(n, exec, |a| {
        let mut out = vec![f64::INFINITY; n * n * n];
        for b in 0..n {
            if !feasible(a, b) {
                continue;
            }
            for c in 0..n {
                for d in 0..n {
                    if !feasible(c, d) {
                        continue;
                    }
                    let u = [
                        VelocityState::new(axis_v[a], axis_w[b]),
                        VelocityState::new(axis_v[c], axis_w[d]),
                    ];
                    out[(b * n + c) * n + d] = evaluate_cost(problem, &u);
                }
            }
        }
        out
    })
    .concat();

    let (best, &cost) = costs
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty grid");
    let idx = [
        best / (n * n * n),
        (best / (n * n)) % n,
        (best / n) % n,
        best % n,
    ];
    let flat = |k: [usize; 4]| ((k[0] * n + k[1]) * n + k[2]) * n + k[3];
    let mut gap: f64 = 0.0;
    for axis in 0..4 {
        for step in [-1isize, 1] {
            let mut k = idx;
            let Some(v) = k[axis].checked_add_signed(step).filter(|v| *v < n) else {
                continue;
            };
            k[axis] = v;
            let c = costs[flat(k)];
            if c.is_finite() {
                gap = gap.max((c - cost).abs());
            }
        }
    }
    GridSearch {
        cost,
        inputs: vec![
            VelocityState::new(axis_v[idx[0]], axis_w[idx[1]]),
            VelocityState::new(axis_v[idx[2]], axis_w[idx[3]]),
        ],
        resolution_gap: gap,
    }
}

/// Central finite-difference gradient of the cost over flattened inputs.
pub fn fd_gradient(problem: &HorizonProblem, inputs: &[VelocityState], h: f64) -> Vec<f64> {
    let mut x: Vec<VelocityState> = inputs.to_vec();
    let mut g = Vec::with_capacity(2 * inputs.len());
    for i in 0..inputs.len() {
        for comp in 0..2 {
            let orig = x[i];
            let bump = |u: &mut VelocityState, d: f64| {
                if comp == 0 {
                    u.v += d
                } else {
                    u.w += d
                }
            };
            bump(&mut x[i], h);
            let fp = evaluate_cost(problem, &x);
            x[i] = orig;
            bump(&mut x[i], -h);
            let fm = evaluate_cost(problem, &x);
            x[i] = orig;
            g.push((fp - fm) / (2.0 * h));
        }
    }
    g
}

/// Standard unity saturation.
pub fn sat(l: f64) -> f64 {
    l.signum() * l.abs().min(1.0)
}

/// Worst-case deviations observed while sampling the smooth saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatReport {
    pub max_odd_error: f64,
    pub max_knot_jump: f64,
    pub max_sat_gap: f64,
    pub min_slope: f64,
    pub max_slope: f64,
}

impl SatReport {
    pub fn passes(&self, eps: f64) -> bool {
        self.max_odd_error <= 1e-15
            && self.max_knot_jump <= 1e-12
            && self.max_sat_gap <= eps / 2.0 + 1e-15
            && self.min_slope >= -1e-9
            && self.max_slope <= 1.0 + 1e-9
    }
}

/// Samples `samples` points uniformly on `[-(2 + 2 eps), 2 + 2 eps]` and checks
/// oddness, the distance to `sat`, finite-difference slopes, and continuity
/// across the knots at `+-1` and `+-(1 + eps)`.
pub fn check_sat_eps(eps: f64, samples: usize, seed: u64) -> SatReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 2.0 + 2.0 * eps;
    let h = 1e-7;
    let mut r = SatReport {
        max_odd_error: 0.0,
        max_knot_jump: 0.0,
        max_sat_gap: 0.0,
        min_slope: f64::INFINITY,
        max_slope: f64::NEG_INFINITY,
    };
    for _ in 0..samples {
        let l: f64 = rng.random_range(-span..span);
        let s = sat_eps(l, eps);
        r.max_odd_error = r.max_odd_error.max((s + sat_eps(-l, eps)).abs());
        r.max_sat_gap = r.max_sat_gap.max((s - sat(l)).abs());
        let slope = (sat_eps(l + h, eps) - sat_eps(l - h, eps)) / (2.0 * h);
        r.min_slope = r.min_slope.min(slope);
        r.max_slope = r.max_slope.max(slope);
    }
    for knot in [1.0, 1.0 + eps, -1.0, -(1.0 + eps)] {
        let left = sat_eps(knot - 1e-13, eps);
        let right = sat_eps(knot + 1e-13, eps);
        let at = sat_eps(knot, eps);
        r.max_knot_jump = r
            .max_knot_jump
            .max((left - at).abs())
            .max((right - at).abs());
    }
    r
}

/// Random `h`-step tracking problem: references come from a feasible input
/// sequence started near the initial pose.
pub fn random_horizon_problem(
    rng: &mut impl Rng,
    h: usize,
    bounds: &InputBounds,
) -> HorizonProblem {
    let feasible = |rng: &mut dyn rand::RngCore| loop {
        let u = VelocityState::new(
            rng.random_range(0.0..bounds.v_max()),
            rng.random_range(-bounds.w_max()..bounds.w_max()),
        );
        if bounds.contains(u, 0.0) {
            return u;
        }
    };
    let initial = Pose::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-3.0..3.0),
    );
    let step_durations: Vec<f64> = (0..h).map(|_| rng.random_range(0.05..0.3)).collect();
    let mut z = Pose::new(
        initial.x + rng.random_range(-0.05..0.05),
        initial.y + rng.random_range(-0.05..0.05),
        initial.theta + rng.random_range(-0.1..0.1),
    );
    let mut pose_refs = Vec::with_capacity(h);
    let mut input_refs = Vec::with_capacity(h);
    for dt in &step_durations {
        let u = feasible(rng);
        z = propagate_kinematics(z, u, *dt);
        pose_refs.push(z);
        input_refs.push(u);
    }
    let u_prev = feasible(rng);
    HorizonProblem {
        initial,
        pose_refs,
        input_refs,
        step_durations,
        weights: Weights::default(),
        bounds: bounds.clone(),
        u_prev,
    }
}

/// Random `w x h` occupancy grid with cell probability `density`.
pub fn random_grid(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> GridMap {
    let mut map = GridMap::empty(w, h, 1.0);
    for iy in 0..h {
        for ix in 0..w {
            map.set_occupied(ix, iy, rng.random_bool(density));
        }
    }
    map
}

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Quick versions of the oracle suites: smooth-saturation properties, the
/// two-step solver against grid search, and A* against breadth-first search.
pub fn selftest(seed: u64, exec: Execution) -> Vec<SuiteResult> {
    let mut out = Vec::new();

    let reports: Vec<(f64, SatReport)> = [0.2, 0.01]
        .iter()
        .map(|&e| (e, check_sat_eps(e, 200_000, seed)))
        .collect();
    out.push(SuiteResult {
        name: "sat_eps properties",
        pass: reports.iter().all(|(e, r)| r.passes(*e)),
        detail: reports
            .iter()
            .map(|(e, r)| {
                format!(
                    "eps={e}: gap {:.4}, slope [{:.3}, {:.3}]",
                    r.max_sat_gap, r.min_slope, r.max_slope
                )
            })
            .collect::<Vec<_>>()
            .join("; "),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = InputBounds::new(0.0, 0.4, 0.4, 0.4, 1.0);
    let mut worst = f64::NEG_INFINITY;
    let n = 10;
    let mut bad = 0;
    for _ in 0..n {
        let p = random_horizon_problem(&mut rng, 2, &bounds);
        let sol = solve(&p, &p.input_refs, &SolverOptions::default());
        let grid = grid_search_h2(&p, 31, (0.0, 0.4), 0.4, exec);
        let excess = sol.cost - grid.cost - grid.resolution_gap;
        worst = worst.max(excess);
        bad += usize::from(excess > 1e-12 || !sol.converged);
    }
    out.push(SuiteResult {
        name: "NLP brute-force check",
        pass: bad == 0,
        detail: format!("{bad}/{n} above grid optimum + gap (worst excess {worst:.2e})"),
    });

    let mut mismatches = 0;
    let grids = 100;
    for _ in 0..grids {
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
        mismatches += usize::from(astar != bfs_path_cost(&map, s, g));
    }
    out.push(SuiteResult {
        name: "A* vs BFS path cost",
        pass: mismatches == 0,
        detail: format!("{mismatches}/{grids} mismatches"),
    });
    out
}
