//! Deterministic two-rate closed loop: plan once, then track at the high rate
//! and control torques at the low rate while an RK4 plant integrates the truth.

pub mod report;
pub mod scenario;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{velocity_derivative, wheel_speeds, Pose, VelocityState, WheelTorques};
use crate::par::{map_vec, Execution};
use crate::planner::{
    constant_velocity_reference, fit_heading_polynomial, plan_reference_velocity, smooth_path,
    timestamp_constant_velocity, HeadingPolyFit, PlanError, ReferenceTrajectory, SmoothingParams,
    SmoothingStats, TimedPath, VelocityPlanParams,
};
use crate::reso::{
    dynamic_step, pid_dynamic_step, ChannelSample, FilteredPid, ReferenceRate, ResoChannel,
    ResoError,
};
use crate::tracker::{MpcTracker, PidTracker, SolveStats, TrackError};
use crate::world::{densify_path, plan_global_path, GlobalPath, GridMap, Waypoint, WorldError};

pub use scenario::{
    ConfigError, DynamicController, ReferenceSource, ScenarioConfig, TrackingController,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("planning failed: {0}")]
    Map(#[from] WorldError),
    #[error("planning failed: {0}")]
    Planning(#[from] PlanError),
    #[error("scenario `{scenario}`: {source}")]
    Solver {
        scenario: String,
        source: TrackError,
    },
    #[error("dynamic controller: {0}")]
    Reso(#[from] ResoError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Everything the planning stage produces.
#[derive(Debug, Clone)]
pub struct Plan {
    pub global: GlobalPath,
    pub timed: TimedPath,
    pub smoothed: Vec<Pose>,
    pub fit: HeadingPolyFit,
    /// Smoothed path with the speed profile.
    pub planned: ReferenceTrajectory,
    /// Raw A* path at constant speed.
    pub astar: ReferenceTrajectory,
    pub smoothing: SmoothingStats,
}

impl Plan {
    pub fn reference(&self, source: ReferenceSource) -> &ReferenceTrajectory {
        match source {
            ReferenceSource::Planned => &self.planned,
            ReferenceSource::Astar => &self.astar,
        }
    }
}

fn load_map(cfg: &ScenarioConfig) -> Result<GridMap, SimError> {
    Ok(match cfg.map_path() {
        Some(p) => GridMap::load(&p)?,
        None => GridMap::empty(cfg.map.width, cfg.map.height, cfg.map.resolution),
    })
}

/// A* through the route points, densified.
pub fn plan_route(map: &GridMap, cfg: &ScenarioConfig) -> Result<GlobalPath, SimError> {
    let r = &cfg.route;
    let stops: Vec<Waypoint> = std::iter::once(r.start)
        .chain(r.via.iter().copied())
        .chain(std::iter::once(r.goal))
        .map(|[x, y]| Waypoint::new(x, y))
        .collect();
    let mut points: Vec<Waypoint> = Vec::new();
    for leg in stops.windows(2) {
        let p = plan_global_path(map, leg[0], leg[1])?;
        let skip = usize::from(!points.is_empty());
        points.extend(p.points.into_iter().skip(skip));
    }
    Ok(GlobalPath::new(points))
}

/// Global plan, smoothing, heading fit and velocity planning.
pub fn plan_scenario(cfg: &ScenarioConfig) -> Result<Plan, SimError> {
    cfg.validate()?;
    let map = load_map(cfg)?;
    let global = plan_route(&map, cfg)?;
    let dense = densify_path(&global, cfg.map.densify);
    let p = &cfg.planner;
    let timed = timestamp_constant_velocity(&dense, p.v_c)?;
    let sp = SmoothingParams {
        horizon: p.horizon,
        update_horizon: p.update_horizon,
        weights: p.weights(),
        v_c: p.v_c,
        bounds: p.smoothing_bounds(),
        solver: p.solver(),
    };
    let (smoothed, smoothing) = smooth_path(&timed, &sp)?;
    let fit = fit_heading_polynomial(&smoothed, p.fit_segment)?;
    let vp = VelocityPlanParams {
        v_max: p.v_max,
        half_track: cfg.vehicle.half_track,
        c_v: p.c_v,
        stop_taper: p.stop_taper,
    };
    let planned = plan_reference_velocity(&smoothed, &fit, &vp)?;
    let astar = constant_velocity_reference(&timed, p.v_c);
    Ok(Plan {
        global,
        timed,
        smoothed,
        fit,
        planned,
        astar,
        smoothing,
    })
}

/// One low-rate sample of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Record {
    pub t: f64,
    /// Truth pose and velocities at `t`.
    pub pose: Pose,
    pub vel: VelocityState,
    /// Last pose measurement handed to the tracker.
    pub measured: Pose,
    /// Time-indexed reference position at `t`.
    pub reference: Pose,
    /// Held kinematic command `(v_r, w_r)`.
    pub command: VelocityState,
    pub xi_hat: (f64, f64),
    /// True total uncertainty `eta' - b0 u` of both channels.
    pub xi: (f64, f64),
    /// Unsaturated RESO commands.
    pub psi: (f64, f64),
    /// Channel commands applied over `[t, t + dt]`.
    pub u: (f64, f64),
    pub torques: WheelTorques,
    /// True on high-rate ticks.
    pub high: bool,
}

/// Time series of a run plus the context needed to score it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<Record>,
    pub solver: SolveStats,
    pub goal_reached: bool,
    pub timeout: bool,
    pub dynamic: Option<DynamicController>,
    pub v_max: f64,
    pub half_track: f64,
    pub c_v: f64,
    pub bounds: (f64, f64),
    pub transient: f64,
    pub goal: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub e_max: f64,
    pub e_mean: f64,
    pub e_rmse: f64,
    pub v_rmse: f64,
    pub w_rmse: f64,
    /// Fraction of low-rate ticks where a RESO command saturated.
    pub saturation_fraction: f64,
    /// Largest `|psi| / M` seen; above one the bound was too tight.
    pub psi_ratio_max: f64,
    pub solver_solves: usize,
    pub solver_mean_iterations: f64,
    pub solver_max_iterations: usize,
    /// Largest relative excess of a truth wheel speed over `v_max`.
    pub wheel_overshoot: f64,
    /// Post-transient estimation errors `|xi - xi_hat|`.
    pub est_max_v: f64,
    pub est_max_w: f64,
    pub est_rms_v: f64,
    pub est_rms_w: f64,
    /// Commands outside the admissible set (tolerance 1e-9).
    pub constraint_violations: usize,
    pub duration: f64,
    pub final_error: f64,
    pub goal_reached: bool,
    pub timeout: bool,
}

impl Metrics {
    /// Flat `(name, value)` list in a fixed order, used for CSV and summaries.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("e_max", self.e_max),
            ("e_mean", self.e_mean),
            ("e_rmse", self.e_rmse),
            ("v_rmse", self.v_rmse),
            ("w_rmse", self.w_rmse),
            ("saturation_fraction", self.saturation_fraction),
            ("psi_ratio_max", self.psi_ratio_max),
            ("solver_solves", self.solver_solves as f64),
            ("solver_mean_iterations", self.solver_mean_iterations),
            ("solver_max_iterations", self.solver_max_iterations as f64),
            ("wheel_overshoot", self.wheel_overshoot),
            ("est_max_v", self.est_max_v),
            ("est_max_w", self.est_max_w),
            ("est_rms_v", self.est_rms_v),
            ("est_rms_w", self.est_rms_w),
            ("constraint_violations", self.constraint_violations as f64),
            ("duration", self.duration),
            ("final_error", self.final_error),
            ("goal_reached", f64::from(u8::from(self.goal_reached))),
            ("timeout", f64::from(u8::from(self.timeout))),
        ]
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in it {
        s += x * x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

fn max_abs(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |m, x| m.max(x.abs()))
}

/// Scores a log against the reference: position error is the distance from
/// the truth position to the time-indexed reference position, over high-rate
/// samples.
pub fn compute_metrics(log: &RunLog, reference: &ReferenceTrajectory) -> Metrics {
    let errors: Vec<f64> = log
        .records
        .iter()
        .filter(|r| r.high)
        .map(|r| {
            let p = reference.sample(r.t).0;
            (r.pose.x - p.x).hypot(r.pose.y - p.y)
        })
        .collect();
    let n = errors.len().max(1) as f64;
    let e_max = errors.iter().copied().fold(0.0, f64::max);
    let e_mean = errors.iter().sum::<f64>() / n;
    let e_rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();

    let dynamic = log.dynamic.is_some_and(|d| d != DynamicController::None);
    let recs = &log.records;
    let (v_rmse, w_rmse) = if dynamic {
        (
            rms(recs.iter().map(|r| r.vel.v - r.command.v)),
            rms(recs.iter().map(|r| r.vel.w - r.command.w)),
        )
    } else {
        (0.0, 0.0)
    };
    let reso = log.dynamic == Some(DynamicController::Reso);
    let (saturation_fraction, psi_ratio_max) = if reso && !recs.is_empty() {
        let ratio = |r: &Record| (r.psi.0.abs() / log.bounds.0).max(r.psi.1.abs() / log.bounds.1);
        let sat = recs.iter().filter(|r| ratio(r) > 1.0).count();
        (
            sat as f64 / recs.len() as f64,
            recs.iter().map(ratio).fold(0.0, f64::max),
        )
    } else {
        (0.0, 0.0)
    };
    let post: Vec<&Record> = recs.iter().filter(|r| r.t >= log.transient).collect();
    let (est_max_v, est_max_w, est_rms_v, est_rms_w) = if reso {
        (
            max_abs(post.iter().map(|r| r.xi.0 - r.xi_hat.0)),
            max_abs(post.iter().map(|r| r.xi.1 - r.xi_hat.1)),
            rms(post.iter().map(|r| r.xi.0 - r.xi_hat.0)),
            rms(post.iter().map(|r| r.xi.1 - r.xi_hat.1)),
        )
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    let wheel_overshoot = if log.v_max > 0.0 {
        recs.iter()
            .map(|r| {
                let (l, rr) = wheel_speeds(
                    r.vel,
                    &crate::model::DynamicParams {
                        mass: 1.0,
                        inertia: 1.0,
                        half_track: log.half_track,
                        wheel_radius: 1.0,
                        v_max: log.v_max,
                    },
                );
                (l.abs().max(rr.abs()) - log.v_max) / log.v_max
            })
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    let slope = log.half_track * log.c_v;
    let constraint_violations = recs
        .iter()
        .filter(|r| r.high)
        .filter(|r| {
            let u = r.command;
            !(u.v >= -1e-9
                && u.v <= log.v_max + 1e-9
                && u.v.abs() + slope * u.w.abs() <= log.v_max + 1e-9)
        })
        .count();
    let last = recs.last().copied().unwrap_or_default();
    Metrics {
        e_max,
        e_mean,
        e_rmse,
        v_rmse,
        w_rmse,
        saturation_fraction,
        psi_ratio_max,
        solver_solves: log.solver.solves,
        solver_mean_iterations: if log.solver.solves > 0 {
            log.solver.total_iterations as f64 / log.solver.solves as f64
        } else {
            0.0
        },
        solver_max_iterations: log.solver.max_iterations,
        wheel_overshoot,
        est_max_v,
        est_max_w,
        est_rms_v,
        est_rms_w,
        constraint_violations,
        duration: last.t,
        final_error: last.pose.distance_to(&log.goal),
        goal_reached: log.goal_reached,
        timeout: log.timeout,
    }
}

enum Tracker {
    Mpc(Box<MpcTracker>),
    Pid(PidTracker),
}

enum Dynamic {
    Reso { v: ResoChannel, w: ResoChannel },
    Pid { v: FilteredPid, w: FilteredPid },
    None,
}

/// Closed-loop simulation of `cfg` tracking `reference`.
pub fn simulate(cfg: &ScenarioConfig, reference: &ReferenceTrajectory) -> Result<RunLog, SimError> {
    cfg.validate()?;
    let p = &cfg.planner;
    let n = cfg.rates.ratio().expect("validated rate ratio");
    let dt = 1.0 / cfg.rates.low_hz;
    let dt_high = 1.0 / cfg.rates.high_hz;
    let params = cfg.vehicle.params(p.v_max);
    let dist = cfg.disturbance;
    let bounds = p.tracking_bounds(cfg.vehicle.half_track);
    let goal = *reference.poses.last().expect("non-empty reference");
    let t_end = reference.duration();

    let mut tracker = match cfg.tracking.controller {
        TrackingController::Mpc => Tracker::Mpc(Box::new(MpcTracker::new(
            reference.clone(),
            p.horizon,
            p.weights(),
            bounds.clone(),
            p.solver(),
        ))),
        TrackingController::Pid => {
            let t = &cfg.tracking;
            Tracker::Pid(PidTracker::new(
                t.pid_v,
                t.pid_w,
                t.pid_windup,
                t.pid_lookahead,
                bounds.clone(),
            ))
        }
    };
    let mut dynamic = match cfg.dynamic.controller {
        DynamicController::Reso => Dynamic::Reso {
            v: ResoChannel::new(cfg.reso.gains_v())?,
            w: ResoChannel::new(cfg.reso.gains_w())?,
        },
        DynamicController::Pid => Dynamic::Pid {
            v: FilteredPid::new(cfg.dyn_pid),
            w: FilteredPid::new(cfg.dyn_pid),
        },
        DynamicController::None => Dynamic::None,
    };
    let b0 = (cfg.reso.b0_v, cfg.reso.b0_w);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let noise_xy = Normal::new(0.0, cfg.noise.sigma_xy).expect("validated sigma");
    let noise_th = Normal::new(0.0, cfg.noise.sigma_theta).expect("validated sigma");
    let noisy = cfg.noise.sigma_xy > 0.0 || cfg.noise.sigma_theta > 0.0;

    let mut plant = crate::model::PlantState {
        pose: reference.poses[0],
        vel: VelocityState::ZERO,
    };
    let mut command = VelocityState::ZERO;
    let mut measured = plant.pose;
    let mut v_rate = ReferenceRate::new(dt_high, cfg.reso.slew_v);
    let mut w_rate = ReferenceRate::new(dt_high, cfg.reso.slew_w);
    // channel inputs applied over the interval that just ended, and the one
    // computed last tick and not yet applied
    let mut last_applied = (0.0, 0.0);
    let mut queued = (0.0, 0.0);

    let mut log = RunLog {
        records: Vec::new(),
        solver: SolveStats::default(),
        goal_reached: false,
        timeout: false,
        dynamic: Some(cfg.dynamic.controller),
        v_max: p.v_max,
        half_track: cfg.vehicle.half_track,
        c_v: p.c_v,
        bounds: (cfg.reso.bound_v, cfg.reso.bound_w),
        transient: cfg.run.transient,
        goal,
    };
    let steps = (cfg.run.max_duration / dt).round() as usize;
    for i in 0..=steps {
        let t = i as f64 * dt;
        let high = i % n == 0;
        if high {
            measured = plant.pose;
            if noisy {
                measured = Pose::new(
                    measured.x + noise_xy.sample(&mut rng),
                    measured.y + noise_xy.sample(&mut rng),
                    measured.theta + noise_th.sample(&mut rng),
                );
            }
            let done = t >= t_end && plant.pose.distance_to(&goal) < cfg.run.goal_tolerance;
            command = if done {
                VelocityState::ZERO
            } else {
                match &mut tracker {
                    Tracker::Mpc(m) => match m.step(t, measured) {
                        Err(TrackError::EndOfTrajectory) => m.hold_step(measured, goal, dt_high),
                        r => r,
                    }
                    .map_err(|source| SimError::Solver {
                        scenario: cfg.name.clone(),
                        source: with_time(source, t),
                    })?,
                    Tracker::Pid(pid) => pid.step(measured, reference.sample(t), dt_high),
                }
            };
            v_rate.push(command.v);
            w_rate.push(command.w);
            if done {
                log.goal_reached = true;
            }
        }

        // true total uncertainty over the interval that just ended
        let last_torques = crate::reso::torques_from_channels(last_applied.0, last_applied.1);
        let (dv, dw) = velocity_derivative(last_torques, &params, &dist, t);
        let xi = (dv - b0.0 * last_applied.0, dw - b0.1 * last_applied.1);

        let mut rec = Record {
            t,
            pose: plant.pose,
            vel: plant.vel,
            measured,
            reference: reference.sample(t).0,
            command,
            xi,
            high,
            ..Record::default()
        };

        let computed = match &mut dynamic {
            Dynamic::Reso { v, w } => {
                let cmd = dynamic_step(
                    v,
                    w,
                    ChannelSample {
                        measured: plant.vel.v,
                        reference: v_rate.value(),
                        reference_rate: v_rate.rate(),
                        applied: last_applied.0,
                    },
                    ChannelSample {
                        measured: plant.vel.w,
                        reference: w_rate.value(),
                        reference_rate: w_rate.rate(),
                        applied: last_applied.1,
                    },
                    dt,
                )?;
                rec.xi_hat = (v.estimate(), w.estimate());
                rec.psi = (v.last_psi(), w.last_psi());
                Some((cmd.u_v, cmd.u_w))
            }
            Dynamic::Pid { v, w } => {
                let cmd = pid_dynamic_step(
                    v,
                    w,
                    (plant.vel.v, plant.vel.w),
                    (v_rate.value(), w_rate.value()),
                    dt,
                );
                Some((cmd.u_v, cmd.u_w))
            }
            Dynamic::None => None,
        };

        if log.goal_reached {
            log.records.push(rec);
            break;
        }
        match computed {
            Some(next) => {
                let now = if cfg.dynamic.delay == 0 {
                    next
                } else {
                    std::mem::replace(&mut queued, next)
                };
                let torques = crate::reso::torques_from_channels(now.0, now.1);
                rec.u = now;
                rec.torques = torques;
                plant = plant.step_dynamic(torques, &params, &dist, t, dt);
                last_applied = now;
            }
            None => {
                plant = plant.step_kinematic(command, dt);
            }
        }
        log.records.push(rec);
    }
    log.timeout = !log.goal_reached;
    if let Tracker::Mpc(m) = &tracker {
        log.solver = m.stats;
    }
    Ok(log)
}

fn with_time(e: TrackError, t: f64) -> TrackError {
    match e {
        TrackError::SolverFailure {
            segment, pg_norm, ..
        } => TrackError::SolverFailure {
            t,
            segment,
            pg_norm,
        },
        other => other,
    }
}

/// Result of one scenario run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub name: String,
    pub plan: Plan,
    pub reference: ReferenceTrajectory,
    pub log: RunLog,
    pub metrics: Metrics,
}

/// Plans and simulates a scenario. A timeout is not an error; it is flagged
/// in the log and metrics.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    let plan = plan_scenario(cfg)?;
    run_with_plan(cfg, plan)
}

fn run_with_plan(cfg: &ScenarioConfig, plan: Plan) -> Result<RunOutput, SimError> {
    let reference = plan.reference(cfg.tracking.reference).clone();
    let log = simulate(cfg, &reference)?;
    let metrics = compute_metrics(&log, &reference);
    Ok(RunOutput {
        name: cfg.name.clone(),
        plan,
        reference,
        log,
        metrics,
    })
}

/// One row of the scheme comparison.
#[derive(Debug, Clone)]
pub struct SchemeRow {
    pub scheme: String,
    pub metrics: Metrics,
    pub output: RunOutput,
}

/// The three planning/tracking combinations, as `(label, tracking, reference)`.
pub const SCHEMES: [(&str, TrackingController, ReferenceSource); 3] = [
    ("MPC+PID", TrackingController::Pid, ReferenceSource::Planned),
    ("A*+MPC", TrackingController::Mpc, ReferenceSource::Astar),
    ("MPC+MPC", TrackingController::Mpc, ReferenceSource::Planned),
];

/// Runs every scheme on the same plan, map, endpoints and seed.
pub fn compare_schemes(base: &ScenarioConfig, exec: Execution) -> Result<Vec<SchemeRow>, SimError> {
    let plan = plan_scenario(base)?;
    let rows = map_vec(&SCHEMES, exec, |(label, tracking, source)| {
        let mut cfg = base.clone();
        cfg.name = format!("{} [{label}]", base.name);
        cfg.tracking.controller = *tracking;
        cfg.tracking.reference = *source;
        run_with_plan(&cfg, plan.clone()).map(|output| SchemeRow {
            scheme: label.to_string(),
            metrics: output.metrics,
            output,
        })
    });
    rows.into_iter().collect()
}

/// Independent runs, fanned out according to `exec`.
pub fn run_batch(configs: &[ScenarioConfig], exec: Execution) -> Vec<Result<RunOutput, SimError>> {
    map_vec(configs, exec, run_scenario)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the planned trajectory and its figure.
pub fn write_plan_outputs(dir: &Path, reference: &ReferenceTrajectory) -> Result<(), SimError> {
    let p = dir.join("trajectory.csv");
    report::write_atomic(&p, report::trajectory_csv(reference).as_bytes()).map_err(io_err(&p))?;
    let p = dir.join("plot.svg");
    report::write_atomic(&p, report::plot_svg(reference, None).as_bytes()).map_err(io_err(&p))?;
    Ok(())
}

/// Writes `trajectory.csv`, `run.csv`, `metrics.csv`, `summary.txt` and `plot.svg`.
pub fn write_run_outputs(dir: &Path, run: &RunOutput) -> Result<(), SimError> {
    let files = [
        ("trajectory.csv", report::trajectory_csv(&run.reference)),
        ("run.csv", report::run_csv(&run.log)),
        ("metrics.csv", report::metrics_csv(&run.metrics)),
        ("summary.txt", report::summary_text(&run.name, &run.metrics)),
        ("plot.svg", report::plot_svg(&run.reference, Some(&run.log))),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        report::write_atomic(&p, body.as_bytes()).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Writes `comparison.csv` plus per-scheme run directories.
pub fn write_comparison_outputs(dir: &Path, rows: &[SchemeRow]) -> Result<(), SimError> {
    let p = dir.join("comparison.csv");
    report::write_atomic(&p, report::comparison_csv(rows).as_bytes()).map_err(io_err(&p))?;
    for r in rows {
        let slug = r
            .scheme
            .replace('*', "star")
            .replace('+', "_")
            .to_ascii_lowercase();
        write_run_outputs(&dir.join(slug), &r.output)?;
    }
    Ok(())
}
