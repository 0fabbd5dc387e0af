//! Output artifacts: CSV tables with nine significant digits, a text summary
//! and a static SVG figure. Every file is written to a temporary sibling and
//! renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::model::Pose;
use crate::planner::ReferenceTrajectory;

use super::{Metrics, RunLog, SchemeRow};

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed,
/// exponent notation outside `[1e-5, 1e9)`.
pub fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn row(out: &mut String, values: &[f64]) {
    let cells: Vec<String> = values.iter().map(|v| fmt_g9(*v)).collect();
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// `i,x,y,theta,v_ref,w_ref,t`.
pub fn trajectory_csv(r: &ReferenceTrajectory) -> String {
    let mut out = String::from("i,x,y,theta,v_ref,w_ref,t\n");
    for i in 0..r.len() {
        let (p, u) = (r.poses[i], r.inputs[i]);
        out.push_str(&format!("{i},"));
        row(&mut out, &[p.x, p.y, p.theta, u.v, u.w, r.times[i]]);
    }
    out
}

pub const RUN_COLUMNS: &[&str] = &[
    "t",
    "v",
    "w",
    "v_r",
    "w_r",
    "xi_hat_v",
    "xi_hat_w",
    "u_v",
    "u_w",
    "T_r",
    "T_l",
    "x",
    "y",
    "theta",
    "x_meas",
    "y_meas",
    "theta_meas",
    "x_ref",
    "y_ref",
    "xi_v",
    "xi_w",
    "high",
];

pub fn run_csv(log: &RunLog) -> String {
    let mut out = RUN_COLUMNS.join(",");
    out.push('\n');
    for r in &log.records {
        row(
            &mut out,
            &[
                r.t,
                r.vel.v,
                r.vel.w,
                r.command.v,
                r.command.w,
                r.xi_hat.0,
                r.xi_hat.1,
                r.u.0,
                r.u.1,
                r.torques.right,
                r.torques.left,
                r.pose.x,
                r.pose.y,
                r.pose.theta,
                r.measured.x,
                r.measured.y,
                r.measured.theta,
                r.reference.x,
                r.reference.y,
                r.xi.0,
                r.xi.1,
                if r.high { 1.0 } else { 0.0 },
            ],
        );
    }
    out
}

pub fn metrics_csv(m: &Metrics) -> String {
    let fields = m.fields();
    let mut out = fields.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(",");
    out.push('\n');
    row(
        &mut out,
        &fields.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
    );
    out
}

/// Table-I shaped comparison.
pub fn comparison_csv(rows: &[SchemeRow]) -> String {
    let mut out = String::from("scheme,e_max,e_mean,e_rmse\n");
    for r in rows {
        out.push_str(&r.scheme);
        out.push(',');
        row(
            &mut out,
            &[r.metrics.e_max, r.metrics.e_mean, r.metrics.e_rmse],
        );
    }
    out
}

pub fn summary_text(name: &str, m: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {name}");
    let status = if m.goal_reached {
        "goal reached"
    } else if m.timeout {
        "TIMEOUT"
    } else {
        "stopped"
    };
    let _ = writeln!(s, "status: {status} after {} s", fmt_g9(m.duration));
    for (k, v) in m.fields() {
        let _ = writeln!(s, "{k:<22} {}", fmt_g9(v));
    }
    s
}

/// Planned vs. actual XY path, and commanded vs. actual velocities.
pub fn plot_svg(reference: &ReferenceTrajectory, log: Option<&RunLog>) -> String {
    let (w, h, pad) = (800.0, 900.0, 40.0);
    let mut xs: Vec<f64> = reference.poses.iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = reference.poses.iter().map(|p| p.y).collect();
    if let Some(log) = log {
        xs.extend(log.records.iter().map(|r| r.pose.x));
        ys.extend(log.records.iter().map(|r| r.pose.y));
    }
    let (x0, x1) = min_max(&xs);
    let (y0, y1) = min_max(&ys);
    let plot_h = 560.0;
    let scale =
        ((w - 2.0 * pad) / (x1 - x0).max(1e-9)).min((plot_h - 2.0 * pad) / (y1 - y0).max(1e-9));
    let to_px = |p: &Pose| (pad + (p.x - x0) * scale, plot_h - pad - (p.y - y0) * scale);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let poly = |pts: Vec<(f64, f64)>, color: &str, dash: bool| {
        let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let dash = if dash {
            " stroke-dasharray=\"6,4\""
        } else {
            ""
        };
        format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n", d.join(" "))
    };
    s.push_str(&poly(
        reference.poses.iter().map(to_px).collect(),
        "#1f77b4",
        true,
    ));
    s.push_str("<text x=\"40\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">XY path: planned (dashed blue), actual (red)</text>\n");
    if let Some(log) = log {
        s.push_str(&poly(
            log.records.iter().map(|r| to_px(&r.pose)).collect(),
            "#d62728",
            false,
        ));
        // velocity traces
        let (top, height) = (plot_h + 30.0, h - plot_h - 60.0);
        let t_end = log.records.last().map_or(1.0, |r| r.t).max(1e-9);
        let vals: Vec<f64> = log
            .records
            .iter()
            .flat_map(|r| [r.vel.v, r.vel.w, r.command.v, r.command.w])
            .collect();
        let (v0, v1) = min_max(&vals);
        let tx = |t: f64| pad + t / t_end * (w - 2.0 * pad);
        let vy = |v: f64| top + height - (v - v0) / (v1 - v0).max(1e-9) * height;
        let series = |f: &dyn Fn(&super::Record) -> f64| {
            log.records
                .iter()
                .map(|r| (tx(r.t), vy(f(r))))
                .collect::<Vec<_>>()
        };
        s.push_str(&poly(series(&|r| r.command.v), "#1f77b4", true));
        s.push_str(&poly(series(&|r| r.vel.v), "#1f77b4", false));
        s.push_str(&poly(series(&|r| r.command.w), "#2ca02c", true));
        s.push_str(&poly(series(&|r| r.vel.w), "#2ca02c", false));
        let _ = writeln!(
            s,
            "<text x=\"40\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\">v (blue), w (green): command dashed, actual solid; t in [0, {:.1}] s</text>",
            top - 8.0,
            t_end
        );
    }
    s.push_str("</svg>\n");
    s
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        })
}
