//! Reference speed profile along a smoothed path.

use crate::model::{angle_diff, wrap_angle, Pose, VelocityState};

use super::fit::{arc_lengths, HeadingPolyFit};
use super::{PlanError, TimedPath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityPlanParams {
    pub v_max: f64,
    pub half_track: f64,
    /// Safety factor `c_v >= 1` on the turning term.
    pub c_v: f64,
    /// Arc length over which the speed is tapered linearly to zero at the goal.
    pub stop_taper: f64,
}

/// Timed reference with feed-forward velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub poses: Vec<Pose>,
    pub inputs: Vec<VelocityState>,
    pub times: Vec<f64>,
    pub arc: Vec<f64>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn segment_duration(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// Index `k` with `times[k] <= t < times[k + 1]`; `None` once `t` reaches the end.
    pub fn segment_at(&self, t: f64) -> Option<usize> {
        if self.len() < 2 || t >= self.duration() {
            return None;
        }
        let t = t.max(0.0);
        Some(
            self.times
                .partition_point(|&ti| ti <= t)
                .saturating_sub(1)
                .min(self.len() - 2),
        )
    }

    /// Reference pose at time `t` (linear in position and heading within a
    /// segment) and the feed-forward input of that segment. Past the end the
    /// final waypoint with zero input is returned.
    pub fn sample(&self, t: f64) -> (Pose, VelocityState) {
        match self.segment_at(t) {
            None => (
                *self.poses.last().expect("non-empty reference"),
                VelocityState::ZERO,
            ),
            Some(k) => {
                let (a, b) = (self.poses[k], self.poses[k + 1]);
                let f = ((t.max(0.0) - self.times[k]) / self.segment_duration(k)).clamp(0.0, 1.0);
                let pose = Pose {
                    x: a.x + f * (b.x - a.x),
                    y: a.y + f * (b.y - a.y),
                    theta: wrap_angle(a.theta + f * angle_diff(b.theta, a.theta)),
                };
                (pose, self.inputs[k])
            }
        }
    }

    /// Drops the feed-forward information, keeping poses and times.
    pub fn timed_path(&self) -> TimedPath {
        TimedPath {
            poses: self.poses.clone(),
            times: self.times.clone(),
        }
    }
}

/// Speed `v_max / (1 + |l_w c_v dtheta/ds|)` at every waypoint, `w = dtheta/ds * v`,
/// and times accumulated per segment with the segment's start speed.
pub fn plan_reference_velocity(
    path: &[Pose],
    fit: &HeadingPolyFit,
    params: &VelocityPlanParams,
) -> Result<ReferenceTrajectory, PlanError> {
    if !(params.v_max > 0.0) || params.c_v < 1.0 || !(params.half_track > 0.0) {
        return Err(PlanError::InvalidParams(
            "need v_max > 0, half_track > 0, c_v >= 1".into(),
        ));
    }
    if path.len() < 2 {
        return Err(PlanError::TooShort {
            needed: 2,
            got: path.len(),
        });
    }
    let arc = arc_lengths(path);
    let total = *arc.last().unwrap();
    let a = params.half_track * params.c_v;
    let inputs: Vec<VelocityState> = arc
        .iter()
        .map(|&s| {
            let kappa = fit.slope(s);
            let mut v = params.v_max / (1.0 + (a * kappa).abs());
            let remaining = total - s;
            if params.stop_taper > 0.0 && remaining < params.stop_taper {
                v *= (remaining / params.stop_taper).max(0.0);
            }
            VelocityState::new(v, kappa * v)
        })
        .collect();

    let mut times = Vec::with_capacity(path.len());
    times.push(0.0);
    for i in 0..path.len() - 1 {
        let d = arc[i + 1] - arc[i];
        let v = inputs[i].v;
        if d <= 0.0 || v <= 0.0 {
            return Err(PlanError::DegeneratePath { index: i });
        }
        times.push(times[i] + d / v);
    }
    Ok(ReferenceTrajectory {
        poses: path.to_vec(),
        inputs,
        times,
        arc,
    })
}

/// Reference for tracking a timed path directly at constant speed `v_c` with
/// zero angular feed-forward.
pub fn constant_velocity_reference(timed: &TimedPath, v_c: f64) -> ReferenceTrajectory {
    ReferenceTrajectory {
        poses: timed.poses.clone(),
        inputs: vec![VelocityState::new(v_c, 0.0); timed.len()],
        times: timed.times.clone(),
        arc: arc_lengths(&timed.poses),
    }
}
