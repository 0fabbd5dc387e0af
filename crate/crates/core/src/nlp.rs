//! Finite-horizon optimal control problems over the unicycle model.
//!
//! Single shooting: the decision variables are the `H` input pairs, states are
//! recovered by rolling out the forward-Euler kinematics from the initial pose.
//! The solver is projected gradient descent with Armijo backtracking and
//! Barzilai-Borwein trial steps; the feasible input set is the box
//! `v_min <= v <= v_max, |w| <= w_max` intersected with the safety diamond
//! `|v| + a |w| <= d`, a convex polygon onto which projection is exact.

use serde::{Deserialize, Serialize};

use crate::model::{angle_diff, propagate_kinematics, Pose, VelocityState};

/// Diagonal weights of the tracking cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// State error weight on (x, y, theta).
    pub q: [f64; 3],
    /// Input error weight on (v, w).
    pub r: [f64; 2],
    /// Input increment weight on (dv, dw).
    pub s: [f64; 2],
}

impl Weights {
    pub fn is_valid(&self) -> bool {
        self.q
            .iter()
            .chain(&self.r)
            .chain(&self.s)
            .all(|w| w.is_finite() && *w > 0.0)
    }

    pub fn scale_state(mut self, factor: f64) -> Self {
        self.q.iter_mut().for_each(|q| *q *= factor);
        self
    }
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q: [1.0, 1.0, 0.01],
            r: [0.5, 0.023],
            s: [0.1, 0.05],
        }
    }
}

/// Admissible input set: a box cut by the diamond `|v| + slope |w| <= limit`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBounds {
    v_min: f64,
    v_max: f64,
    w_max: f64,
    limit: f64,
    slope: f64,
    /// Counter-clockwise vertices of the feasible polygon.
    polygon: Vec<[f64; 2]>,
}

impl InputBounds {
    /// `slope` is `l_w * c_v`, `limit` the wheel-speed bound.
    pub fn new(v_min: f64, v_max: f64, w_max: f64, limit: f64, slope: f64) -> Self {
        assert!(v_min <= v_max && w_max >= 0.0 && limit >= 0.0 && slope >= 0.0);
        let mut poly = vec![
            [v_min, -w_max],
            [v_max, -w_max],
            [v_max, w_max],
            [v_min, w_max],
        ];
        // |v| + slope|w| <= limit as four half-planes a.x <= limit
        for (sv, sw) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            poly = clip_half_plane(&poly, [sv, sw * slope], limit);
        }
        assert!(!poly.is_empty(), "input bounds describe an empty set");
        Self {
            v_min,
            v_max,
            w_max,
            limit,
            slope,
            polygon: poly,
        }
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn contains(&self, u: VelocityState, tol: f64) -> bool {
        u.v >= self.v_min - tol
            && u.v <= self.v_max + tol
            && u.w.abs() <= self.w_max + tol
            && u.v.abs() + self.slope * u.w.abs() <= self.limit + tol
    }

    /// Euclidean projection onto the feasible polygon.
    pub fn project(&self, u: VelocityState) -> VelocityState {
        if self.contains(u, 0.0) {
            return u;
        }
        let p = [u.v, u.w];
        let n = self.polygon.len();
        let mut best = self.polygon[0];
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let a = self.polygon[i];
            let b = self.polygon[(i + 1) % n];
            let q = closest_on_segment(p, a, b);
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        VelocityState::new(
            best[0].clamp(self.v_min, self.v_max),
            best[1].clamp(-self.w_max, self.w_max),
        )
    }
}

fn clip_half_plane(poly: &[[f64; 2]], a: [f64; 2], b: f64) -> Vec<[f64; 2]> {
    let side = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (sp, sq) = (side(&p), side(&q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out.dedup_by(|x, y| (x[0] - y[0]).abs() < 1e-15 && (x[1] - y[1]).abs() < 1e-15);
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return a;
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// One finite-horizon tracking problem.
///
/// `pose_refs[i]` is the reference for the predicted state `z_{i+1}` and
/// `input_refs[i]` the reference for `u_i`; `step_durations[i]` advances
/// `z_i` to `z_{i+1}`. The first increment penalty is taken against `u_prev`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonProblem {
    pub initial: Pose,
    pub pose_refs: Vec<Pose>,
    pub input_refs: Vec<VelocityState>,
    pub step_durations: Vec<f64>,
    pub weights: Weights,
    pub bounds: InputBounds,
    pub u_prev: VelocityState,
}

impl HorizonProblem {
    pub fn horizon(&self) -> usize {
        self.pose_refs.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let h = self.horizon();
        if h == 0 {
            return Err("horizon must be at least one step".into());
        }
        if self.input_refs.len() != h || self.step_durations.len() != h {
            return Err("reference and step-duration lengths must equal the horizon".into());
        }
        if !self
            .step_durations
            .iter()
            .all(|dt| *dt > 0.0 && dt.is_finite())
        {
            return Err("step durations must be positive".into());
        }
        if !self.weights.is_valid() {
            return Err("weights must be positive".into());
        }
        Ok(())
    }

    /// Predicted states `z_1..z_H` under `inputs`.
    pub fn rollout(&self, inputs: &[VelocityState]) -> Vec<Pose> {
        let mut z = self.initial;
        inputs
            .iter()
            .zip(&self.step_durations)
            .map(|(u, dt)| {
                z = propagate_kinematics(z, *u, *dt);
                z
            })
            .collect()
    }
}

/// Tracking cost of an input sequence.
pub fn evaluate_cost(problem: &HorizonProblem, inputs: &[VelocityState]) -> f64 {
    assert_eq!(
        inputs.len(),
        problem.horizon(),
        "input length must equal the horizon"
    );
    let w = &problem.weights;
    let mut cost = 0.0;
    let mut z = problem.initial;
    let mut prev = problem.u_prev;
    for (i, &u) in inputs.iter().enumerate() {
        z = propagate_kinematics(z, u, problem.step_durations[i]);
        let r = problem.pose_refs[i];
        let e = [r.x - z.x, r.y - z.y, angle_diff(r.theta, z.theta)];
        cost += w.q[0] * e[0] * e[0] + w.q[1] * e[1] * e[1] + w.q[2] * e[2] * e[2];
        let ur = problem.input_refs[i];
        let (ev, ew) = (ur.v - u.v, ur.w - u.w);
        let (dv, dw) = (u.v - prev.v, u.w - prev.w);
        cost += w.r[0] * ev * ev + w.r[1] * ew * ew + w.s[0] * dv * dv + w.s[1] * dw * dw;
        prev = u;
    }
    cost
}

/// Cost and its gradient with respect to the flattened inputs `[v0, w0, v1, w1, ...]`,
/// by a backward adjoint sweep through the rollout.
pub fn cost_and_gradient(problem: &HorizonProblem, inputs: &[VelocityState]) -> (f64, Vec<f64>) {
    let h = problem.horizon();
    assert_eq!(inputs.len(), h, "input length must equal the horizon");
    let w = &problem.weights;

    // states z_0..z_H
    let mut states = Vec::with_capacity(h + 1);
    states.push(problem.initial);
    for i in 0..h {
        states.push(propagate_kinematics(
            states[i],
            inputs[i],
            problem.step_durations[i],
        ));
    }

    let mut cost = 0.0;
    let mut grad = vec![0.0; 2 * h];
    let mut prev = problem.u_prev;
    for i in 0..h {
        let u = inputs[i];
        let ur = problem.input_refs[i];
        let (ev, ew) = (ur.v - u.v, ur.w - u.w);
        let (dv, dw) = (u.v - prev.v, u.w - prev.w);
        cost += w.r[0] * ev * ev + w.r[1] * ew * ew + w.s[0] * dv * dv + w.s[1] * dw * dw;
        grad[2 * i] += -2.0 * w.r[0] * ev + 2.0 * w.s[0] * dv;
        grad[2 * i + 1] += -2.0 * w.r[1] * ew + 2.0 * w.s[1] * dw;
        if i > 0 {
            grad[2 * i - 2] -= 2.0 * w.s[0] * dv;
            grad[2 * i - 1] -= 2.0 * w.s[1] * dw;
        }
        prev = u;
    }

    // adjoint lambda_{i} = dJ/dz_i
    let mut lam = [0.0; 3];
    for i in (1..=h).rev() {
        let z = states[i];
        let r = problem.pose_refs[i - 1];
        let e = [r.x - z.x, r.y - z.y, angle_diff(r.theta, z.theta)];
        cost += w.q[0] * e[0] * e[0] + w.q[1] * e[1] * e[1] + w.q[2] * e[2] * e[2];
        lam[0] -= 2.0 * w.q[0] * e[0];
        lam[1] -= 2.0 * w.q[1] * e[1];
        lam[2] -= 2.0 * w.q[2] * e[2];

        // step i-1 maps z_{i-1}, u_{i-1} -> z_i
        let zp = states[i - 1];
        let u = inputs[i - 1];
        let dt = problem.step_durations[i - 1];
        let (s, c) = zp.theta.sin_cos();
        grad[2 * (i - 1)] += (c * lam[0] + s * lam[1]) * dt;
        grad[2 * (i - 1) + 1] += lam[2] * dt;
        lam[2] += (-s * lam[0] + c * lam[1]) * u.v * dt;
    }
    (cost, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the projected-gradient norm drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease coefficient.
    pub armijo_slope: f64,
    /// Step contraction factor during backtracking.
    pub contraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            armijo_slope: 1e-4,
            contraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    /// Predicted states `z*_1..z*_H`.
    pub states: Vec<Pose>,
    /// Optimal inputs `u*_0..u*_{H-1}`.
    pub inputs: Vec<VelocityState>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final projected-gradient norm.
    pub pg_norm: f64,
    /// Cost after every accepted iterate, starting with the projected guess.
    pub cost_trace: Vec<f64>,
}

fn flatten(u: &[VelocityState]) -> Vec<f64> {
    u.iter().flat_map(|u| [u.v, u.w]).collect()
}

fn unflatten(x: &[f64]) -> Vec<VelocityState> {
    x.chunks_exact(2)
        .map(|c| VelocityState::new(c[0], c[1]))
        .collect()
}

fn project_flat(bounds: &InputBounds, x: &mut [f64]) {
    for c in x.chunks_exact_mut(2) {
        let p = bounds.project(VelocityState::new(c[0], c[1]));
        c[0] = p.v;
        c[1] = p.w;
    }
}

fn projected_gradient_norm(bounds: &InputBounds, x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi).collect();
    project_flat(bounds, &mut y);
    x.iter()
        .zip(&y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Locally minimizes the tracking cost from `initial_guess` (projected first).
///
/// When `max_iters` is exhausted, the best iterate is returned with
/// `converged == false`.
pub fn solve(
    problem: &HorizonProblem,
    initial_guess: &[VelocityState],
    opts: &SolverOptions,
) -> HorizonSolution {
    assert_eq!(
        initial_guess.len(),
        problem.horizon(),
        "initial guess length must equal the horizon"
    );
    let bounds = &problem.bounds;
    let mut x = flatten(initial_guess);
    project_flat(bounds, &mut x);
    let (mut f, mut g) = cost_and_gradient(problem, &unflatten(&x));
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut pg = projected_gradient_norm(bounds, &x, &g);

    while iterations < opts.max_iters {
        if pg < opts.tol {
            converged = true;
            break;
        }
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..80 {
            let mut xn: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
            project_flat(bounds, &mut xn);
            let decrease: f64 = g
                .iter()
                .zip(xn.iter().zip(&x))
                .map(|(gi, (a, b))| gi * (a - b))
                .sum();
            let un = unflatten(&xn);
            let fn_ = evaluate_cost(problem, &un);
            if fn_ <= f + opts.armijo_slope * decrease {
                accepted = Some((xn, fn_));
                break;
            }
            alpha *= opts.contraction;
        }
        let Some((xn, fn_)) = accepted else {
            // no representable decrease left along the projected arc
            break;
        };
        iterations += 1;
        let (_, gn) = cost_and_gradient(problem, &unflatten(&xn));
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            (alpha * 4.0).min(1e10)
        };
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
        pg = projected_gradient_norm(bounds, &x, &g);
    }
    if pg < opts.tol {
        converged = true;
    }
    let inputs = unflatten(&x);
    HorizonSolution {
        states: problem.rollout(&inputs),
        inputs,
        cost: f,
        iterations,
        converged,
        pg_norm: pg,
        cost_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn paper_bounds() -> InputBounds {
        InputBounds::new(0.0, 0.4, 0.4, 0.4, 0.25 * 4.0)
    }

    fn random_problem(rng: &mut ChaCha8Rng, h: usize) -> HorizonProblem {
        let mut refs = Vec::new();
        let mut z = Pose::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-3.0..3.0),
        );
        let initial = Pose::new(
            z.x + rng.random_range(-0.1..0.1),
            z.y + rng.random_range(-0.1..0.1),
            z.theta + rng.random_range(-0.5..0.5),
        );
        let mut dts = Vec::new();
        let mut urefs = Vec::new();
        for _ in 0..h {
            let u = VelocityState::new(rng.random_range(0.0..0.4), rng.random_range(-0.4..0.4));
            let dt = rng.random_range(0.02..0.2);
            z = propagate_kinematics(z, u, dt);
            refs.push(Pose::new(
                z.x + rng.random_range(-0.05..0.05),
                z.y + rng.random_range(-0.05..0.05),
                z.theta,
            ));
            dts.push(dt);
            urefs.push(u);
        }
        HorizonProblem {
            initial,
            pose_refs: refs,
            input_refs: urefs,
            step_durations: dts,
            weights: Weights::default(),
            bounds: paper_bounds(),
            u_prev: VelocityState::new(rng.random_range(0.0..0.4), rng.random_range(-0.3..0.3)),
        }
    }

    #[test]
    fn polygon_of_paper_bounds_is_a_triangle() {
        let b = paper_bounds();
        assert_eq!(b.polygon.len(), 3);
        let b = InputBounds::new(0.0, 0.4, 0.4, 0.4, 0.25);
        // box corners at w = +-0.4 survive when slope * w_max < limit
        assert_eq!(b.polygon.len(), 5);
    }

    #[test]
    fn projection_is_feasible_and_idempotent() {
        let b = paper_bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let u = VelocityState::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let p = b.project(u);
            assert!(b.contains(p, 1e-9), "{u:?} -> {p:?}");
            let pp = b.project(p);
            assert!((pp.v - p.v).abs() < 1e-12 && (pp.w - p.w).abs() < 1e-12);
            // variational inequality: (u - p).(q - p) <= 0 for feasible q
            for q in [
                VelocityState::new(0.0, 0.4),
                VelocityState::new(0.0, -0.4),
                VelocityState::new(0.4, 0.0),
            ] {
                let ip = (u.v - p.v) * (q.v - p.v) + (u.w - p.w) * (q.w - p.w);
                assert!(ip <= 1e-12);
            }
        }
    }

    #[test]
    fn single_step_cost_by_hand() {
        let p = HorizonProblem {
            initial: Pose::default(),
            pose_refs: vec![Pose::new(1.0, 0.0, 0.0)],
            input_refs: vec![VelocityState::ZERO],
            step_durations: vec![0.1],
            weights: Weights {
                q: [1.0, 1.0, 0.01],
                r: [0.5, 0.023],
                s: [0.1, 0.05],
            },
            bounds: paper_bounds(),
            u_prev: VelocityState::ZERO,
        };
        assert_eq!(evaluate_cost(&p, &[VelocityState::ZERO]), 1.0);
    }

    #[test]
    fn zero_residual_cost_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = random_problem(&mut rng, 6);
        let u = vec![VelocityState::new(0.3, 0.05); 6];
        p.pose_refs = p.rollout(&u);
        p.input_refs = u.clone();
        p.u_prev = u[0];
        assert_eq!(evaluate_cost(&p, &u), 0.0);
    }

    #[test]
    fn state_cost_is_linear_in_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_problem(&mut rng, 5);
        let u: Vec<_> = p
            .input_refs
            .iter()
            .map(|u| VelocityState::new(u.v * 0.9, u.w))
            .collect();
        let mut zero_q = p.clone();
        zero_q.weights.q = [0.0; 3];
        let base = evaluate_cost(&zero_q, &u);
        let c1 = evaluate_cost(&p, &u) - base;
        let mut p2 = p.clone();
        p2.weights = p.weights.scale_state(2.0);
        let c2 = evaluate_cost(&p2, &u) - base;
        assert!((c2 - 2.0 * c1).abs() < 1e-12 * (1.0 + c1));
    }

    #[test]
    fn gradient_cost_agrees_with_evaluate_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 8);
            let u = p.input_refs.clone();
            let (c, _) = cost_and_gradient(&p, &u);
            assert!((c - evaluate_cost(&p, &u)).abs() < 1e-14 * (1.0 + c));
        }
    }

    #[test]
    fn stationary_guess_is_returned_unchanged() {
        let u = vec![VelocityState::new(0.3, 0.0); 10];
        let mut p = HorizonProblem {
            initial: Pose::new(1.0, 2.0, 0.3),
            pose_refs: vec![],
            input_refs: u.clone(),
            step_durations: vec![0.05; 10],
            weights: Weights::default(),
            bounds: paper_bounds(),
            u_prev: u[0],
        };
        p.pose_refs = p.rollout(&u);
        let sol = solve(&p, &u, &SolverOptions::default());
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.inputs, u);
    }

    #[test]
    fn straight_line_reference_is_tracked_exactly() {
        let vc = 0.4;
        let u = vec![VelocityState::new(vc, 0.0); 20];
        let mut p = HorizonProblem {
            initial: Pose::default(),
            pose_refs: vec![],
            input_refs: u.clone(),
            step_durations: vec![0.05; 20],
            weights: Weights::default(),
            bounds: paper_bounds(),
            u_prev: u[0],
        };
        p.pose_refs = (1..=20)
            .map(|i| Pose::new(0.02 * i as f64, 0.0, 0.0))
            .collect();
        let sol = solve(&p, &u, &SolverOptions::default());
        assert!(sol.converged);
        assert!(sol.cost <= 1e-6);
        for ui in &sol.inputs {
            assert!((ui.v - vc).abs() < 1e-3 && ui.w.abs() < 1e-3);
        }
    }

    #[test]
    fn solver_descends_and_stays_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let opts = SolverOptions::default();
        for _ in 0..50 {
            let p = random_problem(&mut rng, 20);
            let guess: Vec<_> = (0..20)
                .map(|_| {
                    VelocityState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
                .collect();
            let sol = solve(&p, &guess, &opts);
            let projected: Vec<_> = guess.iter().map(|u| p.bounds.project(*u)).collect();
            assert!(sol.cost <= evaluate_cost(&p, &projected) + 1e-12);
            assert!(sol.inputs.iter().all(|u| p.bounds.contains(*u, 1e-9)));
            assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(
                sol.converged,
                "pg {} after {} iters",
                sol.pg_norm, sol.iterations
            );
            // states satisfy the rollout recursion
            let mut z = p.initial;
            for (s, (u, dt)) in sol
                .states
                .iter()
                .zip(sol.inputs.iter().zip(&p.step_durations))
            {
                z = propagate_kinematics(z, *u, *dt);
                assert!(z.distance_to(s) < 1e-10);
            }
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = random_problem(&mut rng, 12);
        let g = p.input_refs.clone();
        let a = solve(&p, &g, &SolverOptions::default());
        let b = solve(&p, &g, &SolverOptions::default());
        assert_eq!(a, b);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_problem(&mut rng, 20);
        let g = vec![VelocityState::ZERO; 20];
        let opts = SolverOptions {
            max_iters: 1,
            ..Default::default()
        };
        let sol = solve(&p, &g, &opts);
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(sol.cost < evaluate_cost(&p, &g));
    }
}
