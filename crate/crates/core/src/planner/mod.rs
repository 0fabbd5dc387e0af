//! Trajectory planning: constant-speed timestamping of the global path,
//! receding-horizon smoothing, heading fit along arc length, and the
//! curvature-limited reference velocity profile.

mod fit;
mod smooth;
mod velocity;

pub use fit::{fit_heading_polynomial, HeadingPolyFit, PolySegment};
pub use smooth::{smooth_path, SmoothingParams, SmoothingStats};
pub use velocity::{
    constant_velocity_reference, plan_reference_velocity, ReferenceTrajectory, VelocityPlanParams,
};

use thiserror::Error;

use crate::model::Pose;
use crate::world::GlobalPath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("consecutive waypoints {index} and {} coincide", index + 1)]
    DegeneratePath { index: usize },
    #[error("path needs at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("heading fit needs at least 4 samples, got {samples}")]
    RankDeficient { samples: usize },
    #[error("smoothing window {window} (waypoint {start}) did not converge: projected gradient {pg_norm:e}")]
    SolverFailure {
        window: usize,
        start: usize,
        pg_norm: f64,
    },
    #[error("invalid planner parameter: {0}")]
    InvalidParams(String),
}

/// Poses with reference times, `times[0] == 0` and strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPath {
    pub poses: Vec<Pose>,
    pub times: Vec<f64>,
}

impl TimedPath {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Duration of segment `i`, from waypoint `i` to `i + 1`.
    pub fn segment_duration(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }
}

/// Heading of every segment, the last waypoint inheriting its predecessor's.
pub fn segment_headings(points: &[crate::world::Waypoint]) -> Vec<f64> {
    let mut out: Vec<f64> = points
        .windows(2)
        .map(|w| (w[1].y - w[0].y).atan2(w[1].x - w[0].x))
        .collect();
    match out.last() {
        Some(&last) => out.push(last),
        None => out.extend(points.iter().map(|_| 0.0)),
    }
    out
}

/// Assigns `dt_k = |r_{k+1} - r_k| / v_c` and cumulative times to a global path.
pub fn timestamp_constant_velocity(path: &GlobalPath, v_c: f64) -> Result<TimedPath, PlanError> {
    if !(v_c > 0.0) {
        return Err(PlanError::InvalidParams("v_c must be positive".into()));
    }
    if path.len() < 2 {
        return Err(PlanError::TooShort {
            needed: 2,
            got: path.len(),
        });
    }
    let headings = segment_headings(&path.points);
    let mut times = Vec::with_capacity(path.len());
    times.push(0.0);
    let mut t = 0.0;
    for (i, w) in path.points.windows(2).enumerate() {
        let d = w[0].distance(&w[1]);
        if d <= 0.0 {
            return Err(PlanError::DegeneratePath { index: i });
        }
        t += d / v_c;
        times.push(t);
    }
    let poses = path
        .points
        .iter()
        .zip(&headings)
        .map(|(p, th)| Pose::new(p.x, p.y, *th))
        .collect();
    Ok(TimedPath { poses, times })
}

/// Sum of squared wrapped heading increments along a pose sequence.
pub fn heading_roughness(poses: &[Pose]) -> f64 {
    poses
        .windows(2)
        .map(|w| crate::model::angle_diff(w[1].theta, w[0].theta).powi(2))
        .sum()
}
