//! Piecewise cubic least-squares fit of heading against arc length.

use nalgebra::{DMatrix, DVector};

use crate::model::{angle_diff, Pose};

use super::PlanError;

/// One cubic piece, `theta(s) = c0 + c1 (s - s0) + c2 (s - s0)^2 + c3 (s - s0)^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySegment {
    /// Start of the covered arc-length interval; the local origin of the cubic.
    pub s_start: f64,
    /// End of the covered interval (start of the next piece, or the path end).
    pub s_end: f64,
    pub coeffs: [f64; 4],
    pub samples: usize,
    pub rmse: f64,
}

impl PolySegment {
    pub fn value(&self, s: f64) -> f64 {
        let x = s - self.s_start;
        let c = &self.coeffs;
        c[0] + x * (c[1] + x * (c[2] + x * c[3]))
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let x = s - self.s_start;
        let c = &self.coeffs;
        c[1] + x * (2.0 * c[2] + x * 3.0 * c[3])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadingPolyFit {
    pub segments: Vec<PolySegment>,
}

impl HeadingPolyFit {
    fn segment_at(&self, s: f64) -> &PolySegment {
        let i = self
            .segments
            .partition_point(|seg| seg.s_start <= s)
            .saturating_sub(1);
        &self.segments[i]
    }

    /// Fitted (unwrapped) heading at arc length `s`.
    pub fn heading(&self, s: f64) -> f64 {
        self.segment_at(s).value(s)
    }

    /// d(theta)/ds at arc length `s`.
    pub fn slope(&self, s: f64) -> f64 {
        self.segment_at(s).derivative(s)
    }
}

/// Cumulative chord length along the poses.
pub fn arc_lengths(path: &[Pose]) -> Vec<f64> {
    let mut s = Vec::with_capacity(path.len());
    let mut acc = 0.0;
    s.push(0.0);
    for w in path.windows(2) {
        acc += w[0].distance_to(&w[1]);
        s.push(acc);
    }
    s
}

/// Headings lifted onto a continuous branch.
pub fn unwrap_headings(path: &[Pose]) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.len());
    let Some(first) = path.first() else {
        return out;
    };
    let mut acc = first.theta;
    out.push(acc);
    for w in path.windows(2) {
        acc += angle_diff(w[1].theta, w[0].theta);
        out.push(acc);
    }
    out
}

/// Fits a cubic to every run of samples spanning at most `segment_len` of arc.
/// A trailing run with fewer than four samples is merged into its predecessor.
pub fn fit_heading_polynomial(
    path: &[Pose],
    segment_len: f64,
) -> Result<HeadingPolyFit, PlanError> {
    if path.len() < 4 {
        return Err(PlanError::RankDeficient {
            samples: path.len(),
        });
    }
    if !(segment_len > 0.0) {
        return Err(PlanError::InvalidParams(
            "segment length must be positive".into(),
        ));
    }
    let s = arc_lengths(path);
    let theta = unwrap_headings(path);
    let total = *s.last().unwrap();
    if !(total > 0.0) {
        return Err(PlanError::InvalidParams("path has zero arc length".into()));
    }

    // sample index ranges [a, b)
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut a = 0;
    while a < s.len() {
        let mut b = a + 1;
        while b < s.len() && s[b] - s[a] <= segment_len {
            b += 1;
        }
        // a piece always gets at least four samples when available
        b = b.max((a + 4).min(s.len()));
        ranges.push((a, b));
        a = b;
    }
    if ranges.len() > 1 && ranges.last().is_some_and(|(a, b)| b - a < 4) {
        let (_, b) = ranges.pop().unwrap();
        ranges.last_mut().unwrap().1 = b;
    }

    let mut segments = Vec::with_capacity(ranges.len());
    for (k, &(a, b)) in ranges.iter().enumerate() {
        let s0 = s[a];
        let span = (s[b - 1] - s0).max(f64::MIN_POSITIVE);
        let m = b - a;
        // scaled abscissa in [0, 1] for conditioning
        let design = DMatrix::from_fn(m, 4, |i, j| ((s[a + i] - s0) / span).powi(j as i32));
        let rhs = DVector::from_iterator(m, theta[a..b].iter().copied());
        let svd = design.clone().svd(true, true);
        let sol = svd
            .solve(&rhs, 1e-12)
            .map_err(|_| PlanError::RankDeficient { samples: m })?;
        if svd.rank(1e-10) < 4 {
            return Err(PlanError::RankDeficient { samples: m });
        }
        let resid = &design * &sol - &rhs;
        let coeffs = [
            sol[0],
            sol[1] / span,
            sol[2] / span.powi(2),
            sol[3] / span.powi(3),
        ];
        let s_end = ranges.get(k + 1).map_or(total, |&(na, _)| s[na]);
        segments.push(PolySegment {
            s_start: s0,
            s_end,
            coeffs,
            samples: m,
            rmse: (resid.norm_squared() / m as f64).sqrt(),
        });
    }
    Ok(HeadingPolyFit { segments })
}
