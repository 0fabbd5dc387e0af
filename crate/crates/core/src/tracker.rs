//! Kinematic trajectory tracking: receding-horizon MPC and a PID baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{angle_diff, Pose, VelocityState};
use crate::nlp::{solve, HorizonProblem, InputBounds, SolverOptions, Weights};
use crate::planner::ReferenceTrajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("reference trajectory exhausted")]
    EndOfTrajectory,
    #[error("tracking MPC did not converge at t = {t} s (segment {segment}): projected gradient {pg_norm:e}")]
    SolverFailure {
        t: f64,
        segment: usize,
        pg_norm: f64,
    },
}

/// Shortest first-step duration handed to the optimizer.
const MIN_FIRST_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

/// Receding-horizon tracking controller.
#[derive(Debug, Clone)]
pub struct MpcTracker {
    reference: ReferenceTrajectory,
    horizon: usize,
    weights: Weights,
    bounds: InputBounds,
    solver: SolverOptions,
    u_prev: VelocityState,
    warm: Vec<VelocityState>,
    warm_segment: usize,
    pub stats: SolveStats,
}

impl MpcTracker {
    pub fn new(
        reference: ReferenceTrajectory,
        horizon: usize,
        weights: Weights,
        bounds: InputBounds,
        solver: SolverOptions,
    ) -> Self {
        assert!(horizon >= 1 && reference.len() >= 2);
        let u_prev = reference.inputs[0];
        Self {
            reference,
            horizon,
            weights,
            bounds,
            solver,
            u_prev,
            warm: Vec::new(),
            warm_segment: 0,
            stats: SolveStats::default(),
        }
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.reference
    }

    /// Last applied command.
    pub fn u_prev(&self) -> VelocityState {
        self.u_prev
    }

    /// Builds the horizon problem for time `t` and measured pose `z_c`,
    /// together with the warm start. `None` past the end of the reference.
    pub fn build_problem(
        &self,
        t: f64,
        measured: Pose,
    ) -> Option<(usize, HorizonProblem, Vec<VelocityState>)> {
        let r = &self.reference;
        let k = r.segment_at(t)?;
        let h = self.horizon.min(r.len() - 1 - k);
        let mut durations = Vec::with_capacity(h);
        durations.push((r.times[k + 1] - t).max(MIN_FIRST_STEP));
        durations.extend((k + 1..k + h).map(|i| r.segment_duration(i)));
        let input_refs = r.inputs[k..k + h].to_vec();

        let shift = k.saturating_sub(self.warm_segment);
        let mut guess: Vec<VelocityState> = self.warm.iter().skip(shift).take(h).copied().collect();
        guess.extend_from_slice(&input_refs[guess.len()..]);

        let problem = HorizonProblem {
            initial: measured,
            pose_refs: r.poses[k + 1..=k + h].to_vec(),
            input_refs,
            step_durations: durations,
            weights: self.weights,
            bounds: self.bounds.clone(),
            u_prev: self.u_prev,
        };
        Some((k, problem, guess))
    }

    /// Solves at time `t` and returns the first optimal input.
    pub fn step(&mut self, t: f64, measured: Pose) -> Result<VelocityState, TrackError> {
        let Some((k, problem, guess)) = self.build_problem(t, measured) else {
            self.u_prev = VelocityState::ZERO;
            return Err(TrackError::EndOfTrajectory);
        };
        let sol = solve(&problem, &guess, &self.solver);
        self.stats.solves += 1;
        self.stats.total_iterations += sol.iterations;
        self.stats.max_iterations = self.stats.max_iterations.max(sol.iterations);
        if !sol.converged {
            return Err(TrackError::SolverFailure {
                t,
                segment: k,
                pg_norm: sol.pg_norm,
            });
        }
        self.warm = sol.inputs;
        self.warm_segment = k;
        self.u_prev = self.warm[0];
        Ok(self.u_prev)
    }

    /// Regulation onto a fixed `goal` once the reference is exhausted: every
    /// horizon step targets the goal with zero input reference and period `dt`.
    pub fn hold_step(
        &mut self,
        measured: Pose,
        goal: Pose,
        dt: f64,
    ) -> Result<VelocityState, TrackError> {
        let h = self.horizon;
        let problem = HorizonProblem {
            initial: measured,
            pose_refs: vec![goal; h],
            input_refs: vec![VelocityState::ZERO; h],
            step_durations: vec![dt; h],
            weights: self.weights,
            bounds: self.bounds.clone(),
            u_prev: self.u_prev,
        };
        let mut guess: Vec<VelocityState> = self.warm.iter().skip(1).take(h).copied().collect();
        guess.resize(h, VelocityState::ZERO);
        let sol = solve(&problem, &guess, &self.solver);
        self.stats.solves += 1;
        self.stats.total_iterations += sol.iterations;
        self.stats.max_iterations = self.stats.max_iterations.max(sol.iterations);
        if !sol.converged {
            return Err(TrackError::SolverFailure {
                t: f64::NAN,
                segment: self.reference.len() - 1,
                pg_norm: sol.pg_norm,
            });
        }
        self.warm = sol.inputs;
        self.warm_segment = self.reference.len();
        self.u_prev = self.warm[0];
        Ok(self.u_prev)
    }
}

/// Discrete PID with a clamped integral and backward-difference derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePid {
    pub gains: PidGains,
    pub windup: f64,
    integral: f64,
    prev_error: f64,
}

impl DiscretePid {
    pub fn new(gains: PidGains, windup: f64) -> Self {
        Self {
            gains,
            windup,
            integral: 0.0,
            prev_error: 0.0,
        }
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        debug_assert!(dt > 0.0);
        let g = &self.gains;
        self.integral = (self.integral + g.ki * error * dt).clamp(-self.windup, self.windup);
        let d = g.kd * (error - self.prev_error) / dt;
        self.prev_error = error;
        g.kp * error + self.integral + d
    }
}

/// Path-frame errors of a measured pose against a reference pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathErrors {
    /// Distance of the reference ahead of the robot along the reference heading.
    pub along: f64,
    /// Offset of the robot to the left of the reference.
    pub lateral: f64,
    /// Wrapped heading error towards the path, reference minus measured, with a
    /// lateral correction `atan(lateral / lookahead)`.
    pub heading: f64,
}

pub fn path_errors(measured: Pose, reference: Pose, lookahead: f64) -> PathErrors {
    let (s, c) = reference.theta.sin_cos();
    let (dx, dy) = (reference.x - measured.x, reference.y - measured.y);
    let along = c * dx + s * dy;
    let lateral = s * dx - c * dy;
    let heading = angle_diff(
        reference.theta - (lateral / lookahead).atan(),
        measured.theta,
    );
    PathErrors {
        along,
        lateral,
        heading,
    }
}

/// PID tracking controller state for both channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PidTracker {
    pub v_pid: DiscretePid,
    pub w_pid: DiscretePid,
    pub lookahead: f64,
    pub bounds: InputBounds,
}

impl PidTracker {
    pub fn new(v: PidGains, w: PidGains, windup: f64, lookahead: f64, bounds: InputBounds) -> Self {
        Self {
            v_pid: DiscretePid::new(v, windup),
            w_pid: DiscretePid::new(w, windup),
            lookahead,
            bounds,
        }
    }

    /// Feed-forward plus PID corrections, projected onto the admissible set.
    pub fn step(
        &mut self,
        measured: Pose,
        reference: (Pose, VelocityState),
        dt: f64,
    ) -> VelocityState {
        let e = path_errors(measured, reference.0, self.lookahead);
        let v = reference.1.v + self.v_pid.step(e.along, dt);
        let w = reference.1.w + self.w_pid.step(e.heading, dt);
        self.bounds.project(VelocityState::new(v, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{fit_heading_polynomial, plan_reference_velocity, VelocityPlanParams};

    fn bounds() -> InputBounds {
        InputBounds::new(0.0, 0.4, 0.4, 0.4, 1.0)
    }

    fn straight_reference() -> ReferenceTrajectory {
        let path: Vec<Pose> = (0..400)
            .map(|i| Pose::new(0.02 * i as f64, 0.0, 0.0))
            .collect();
        let fit = fit_heading_polynomial(&path, 1.0).unwrap();
        let p = VelocityPlanParams {
            v_max: 0.4,
            half_track: 0.25,
            c_v: 4.0,
            stop_taper: 0.2,
        };
        plan_reference_velocity(&path, &fit, &p).unwrap()
    }

    fn mpc() -> MpcTracker {
        MpcTracker::new(
            straight_reference(),
            20,
            Weights::default(),
            bounds(),
            SolverOptions::default(),
        )
    }

    #[test]
    fn on_reference_returns_feed_forward() {
        let mut m = mpc();
        let u = m.step(0.0, Pose::default()).unwrap();
        assert!((u.v - 0.4).abs() < 1e-3 && u.w.abs() < 1e-3, "{u:?}");
        let (p, _) = m.reference().sample(1.0);
        let u = m.step(1.0, p).unwrap();
        assert!((u.v - 0.4).abs() < 1e-3 && u.w.abs() < 1e-3, "{u:?}");
    }

    #[test]
    fn lateral_offset_steers_back() {
        let mut m = mpc();
        let (p, _) = m.reference().sample(1.0);
        let u = m.step(1.0, Pose::new(p.x, p.y + 0.05, 0.0)).unwrap();
        assert!(u.w < 0.0, "{u:?}");
        let mut m = mpc();
        let u = m.step(1.0, Pose::new(p.x, p.y - 0.05, 0.0)).unwrap();
        assert!(u.w > 0.0, "{u:?}");
    }

    #[test]
    fn past_the_end_is_zero() {
        let mut m = mpc();
        let end = m.reference().duration();
        assert_eq!(
            m.step(end + 1.0, Pose::default()),
            Err(TrackError::EndOfTrajectory)
        );
        assert_eq!(m.u_prev(), VelocityState::ZERO);
    }

    #[test]
    fn first_step_uses_time_to_next_waypoint() {
        let m = mpc();
        let r = m.reference();
        let t = r.times[5] + 0.3 * r.segment_duration(5);
        let (k, prob, guess) = m.build_problem(t, Pose::default()).unwrap();
        assert_eq!(k, 5);
        assert!((prob.step_durations[0] - 0.7 * r.segment_duration(5)).abs() < 1e-12);
        assert_eq!(prob.step_durations[1], r.segment_duration(6));
        assert_eq!(prob.pose_refs[0], r.poses[6]);
        assert_eq!(guess.len(), 20);
        // horizon shrinks at the end
        let t = r.times[r.len() - 4];
        let (_, prob, _) = m.build_problem(t, Pose::default()).unwrap();
        assert_eq!(prob.horizon(), 3);
    }

    #[test]
    fn pid_zero_error_is_feed_forward() {
        let mut p = PidTracker::new(
            PidGains {
                kp: 0.065,
                ki: 0.0,
                kd: 0.13,
            },
            PidGains {
                kp: 0.1,
                ki: 0.05,
                kd: 0.2,
            },
            1.0,
            0.2,
            bounds(),
        );
        let r = (Pose::new(1.0, 2.0, 0.3), VelocityState::new(0.25, 0.1));
        assert_eq!(p.step(r.0, r, 0.05), r.1);
    }

    #[test]
    fn pid_heading_correction_first_step() {
        let g = PidGains {
            kp: 0.1,
            ki: 0.05,
            kd: 0.2,
        };
        let mut p = PidTracker::new(
            PidGains {
                kp: 0.0,
                ki: 0.0,
                kd: 0.0,
            },
            g,
            1.0,
            0.2,
            InputBounds::new(0.0, 10.0, 10.0, 100.0, 0.0),
        );
        let e = 0.01;
        let reference = (Pose::new(0.0, 0.0, e), VelocityState::new(0.2, 0.0));
        let u = p.step(Pose::default(), reference, 0.05);
        let expected = 0.1 * e + 0.05 * e * 0.05 + 0.2 * e / 0.05;
        assert!((u.w - expected).abs() < 1e-15);
    }

    #[test]
    fn pid_saturates_on_the_diamond() {
        let mut p = PidTracker::new(
            PidGains {
                kp: 0.065,
                ki: 0.0,
                kd: 0.13,
            },
            PidGains {
                kp: 0.1,
                ki: 0.05,
                kd: 0.2,
            },
            1.0,
            0.2,
            bounds(),
        );
        let u = p.step(
            Pose::new(-5.0, 0.0, -1.5),
            (Pose::default(), VelocityState::new(0.4, 0.0)),
            0.05,
        );
        assert!((u.v + u.w.abs() - 0.4).abs() < 1e-12, "{u:?}");
    }

    #[test]
    fn path_error_signs() {
        let e = path_errors(Pose::new(0.0, 0.1, 0.0), Pose::new(0.2, 0.0, 0.0), 0.2);
        assert!((e.along - 0.2).abs() < 1e-15);
        assert!((e.lateral - 0.1).abs() < 1e-15);
        assert!(e.heading < 0.0);
    }
}
