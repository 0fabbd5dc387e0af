//! Path smoothing by simulated receding-horizon tracking.
//!
//! A tracking MPC is run along the constant-speed timed path. Each window
//! solves an `H`-step problem, keeps the first `H_u` predicted states, and
//! restarts from the last kept state, so consecutive windows overlap by
//! `H - H_u` steps. The final window is truncated to the remaining waypoints.

use crate::model::{angle_diff, Pose, VelocityState};
use crate::nlp::{solve, HorizonProblem, InputBounds, SolverOptions, Weights};

use super::{PlanError, TimedPath};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingParams {
    pub horizon: usize,
    pub update_horizon: usize,
    pub weights: Weights,
    /// Constant reference speed `v_c`; the input reference is `(v_c, 0)`.
    pub v_c: f64,
    pub bounds: InputBounds,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmoothingStats {
    pub windows: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

/// Smooths a timed path; returns exactly as many poses as the input, the first
/// one unchanged.
pub fn smooth_path(
    timed: &TimedPath,
    params: &SmoothingParams,
) -> Result<(Vec<Pose>, SmoothingStats), PlanError> {
    let n = timed.len();
    if n < 2 {
        return Err(PlanError::TooShort { needed: 2, got: n });
    }
    let last = n - 1;
    let (h_full, h_u) = (params.horizon, params.update_horizon);
    if h_u == 0 || h_u > h_full {
        return Err(PlanError::InvalidParams(format!(
            "need 1 <= update horizon ({h_u}) <= horizon ({h_full})"
        )));
    }
    let u_ref = VelocityState::new(params.v_c, 0.0);

    let mut out = Vec::with_capacity(n);
    out.push(timed.poses[0]);
    let mut z0 = timed.poses[0];
    let mut u_prev = u_ref;
    let mut k = 0;
    let mut stats = SmoothingStats::default();
    while k < last {
        let h = h_full.min(last - k);
        let pose_refs: Vec<Pose> = timed.poses[k + 1..=k + h].to_vec();
        let step_durations: Vec<f64> = (k..k + h).map(|i| timed.segment_duration(i)).collect();
        // warm start: inputs that reproduce the reference window
        let guess: Vec<VelocityState> = (k..k + h)
            .map(|i| {
                let (a, b) = (timed.poses[i], timed.poses[i + 1]);
                let dt = timed.segment_duration(i);
                VelocityState::new(a.distance_to(&b) / dt, angle_diff(b.theta, a.theta) / dt)
            })
            .collect();
        let problem = HorizonProblem {
            initial: z0,
            pose_refs,
            input_refs: vec![u_ref; h],
            step_durations,
            weights: params.weights,
            bounds: params.bounds.clone(),
            u_prev,
        };
        let sol = solve(&problem, &guess, &params.solver);
        stats.windows += 1;
        stats.total_iterations += sol.iterations;
        stats.max_iterations = stats.max_iterations.max(sol.iterations);
        if !sol.converged {
            return Err(PlanError::SolverFailure {
                window: stats.windows - 1,
                start: k,
                pg_norm: sol.pg_norm,
            });
        }
        let keep = h_u.min(h);
        out.extend_from_slice(&sol.states[..keep]);
        z0 = sol.states[keep - 1];
        u_prev = sol.inputs[keep - 1];
        k += keep;
    }
    debug_assert_eq!(out.len(), n);
    Ok((out, stats))
}
