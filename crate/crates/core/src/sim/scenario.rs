//! Scenario files: TOML with one table per subsystem. Every key has a default,
//! so a scenario only spells out what it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Disturbance, DynamicParams};
use crate::nlp::{InputBounds, SolverOptions, Weights};
use crate::reso::{ChannelGains, FilteredPidGains};
use crate::tracker::PidGains;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{origin}: {msg}")]
    Parse { origin: String, msg: String },
    #[error("unknown config key `{0}` (see --help for the list of keys)")]
    UnknownKey(String),
    #[error("override `{0}` must look like key=value")]
    MalformedOverride(String),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackingController {
    Mpc,
    Pid,
}

/// Which timed path the tracker follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    /// Smoothed path with the curvature-limited speed profile.
    Planned,
    /// Raw densified A* path at constant speed `v_c`.
    Astar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicController {
    Reso,
    Pid,
    /// Kinematic plant: velocities follow the commands exactly.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Map file, relative to the scenario file. Empty means an obstacle-free grid.
    pub file: PathBuf,
    /// Obstacle-free grid size when no file is given (cells).
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub densify: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            file: PathBuf::new(),
            width: 40,
            height: 24,
            resolution: 0.5,
            densify: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteConfig {
    pub start: [f64; 2],
    /// Intermediate waypoints visited in order.
    pub via: Vec<[f64; 2]>,
    pub goal: [f64; 2],
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            start: [1.0, 1.0],
            via: Vec::new(),
            goal: [10.0, 6.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub v_c: f64,
    pub c_v: f64,
    pub horizon: usize,
    pub update_horizon: usize,
    pub q: [f64; 3],
    pub r: [f64; 2],
    pub s: [f64; 2],
    pub v_max: f64,
    pub w_max: f64,
    pub fit_segment: f64,
    pub stop_taper: f64,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let w = Weights::default();
        let s = SolverOptions::default();
        Self {
            v_c: 0.4,
            c_v: 4.0,
            horizon: 20,
            update_horizon: 10,
            q: w.q,
            r: w.r,
            s: w.s,
            v_max: 0.4,
            w_max: 0.4,
            fit_segment: 1.0,
            stop_taper: 0.2,
            solver_tol: s.tol,
            solver_max_iters: s.max_iters,
        }
    }
}

impl PlannerConfig {
    pub fn weights(&self) -> Weights {
        Weights {
            q: self.q,
            r: self.r,
            s: self.s,
        }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver_tol,
            max_iters: self.solver_max_iters,
            ..SolverOptions::default()
        }
    }

    /// Box only: the smoother is a geometric stage.
    pub fn smoothing_bounds(&self) -> InputBounds {
        InputBounds::new(0.0, self.v_max, self.w_max, self.v_max, 0.0)
    }

    /// Box cut by `|v| + l_w c_v |w| <= v_max`.
    pub fn tracking_bounds(&self, half_track: f64) -> InputBounds {
        InputBounds::new(
            0.0,
            self.v_max,
            self.w_max,
            self.v_max,
            half_track * self.c_v,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    pub mass: f64,
    pub inertia: f64,
    pub half_track: f64,
    pub wheel_radius: f64,
    pub mass_multiplier: f64,
    pub inertia_multiplier: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            mass: 30.0,
            inertia: 0.5,
            half_track: 0.25,
            wheel_radius: 0.1,
            mass_multiplier: 1.0,
            inertia_multiplier: 1.0,
        }
    }
}

impl VehicleConfig {
    /// Truth parameters, multipliers applied.
    pub fn params(&self, v_max: f64) -> DynamicParams {
        DynamicParams {
            mass: self.mass * self.mass_multiplier,
            inertia: self.inertia * self.inertia_multiplier,
            half_track: self.half_track,
            wheel_radius: self.wheel_radius,
            v_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub controller: TrackingController,
    pub reference: ReferenceSource,
    pub pid_v: PidGains,
    pub pid_w: PidGains,
    pub pid_windup: f64,
    pub pid_lookahead: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            controller: TrackingController::Mpc,
            reference: ReferenceSource::Planned,
            pid_v: PidGains {
                kp: 0.065,
                ki: 0.0,
                kd: 0.13,
            },
            pid_w: PidGains {
                kp: 0.1,
                ki: 0.05,
                kd: 0.2,
            },
            pid_windup: 1.0,
            pid_lookahead: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicConfig {
    pub controller: DynamicController,
    /// Low-rate samples between computing a command and applying it (0 or 1).
    pub delay: usize,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            controller: DynamicController::Reso,
            delay: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResoConfig {
    pub epsilon: f64,
    pub observer_gain: f64,
    pub b0_v: f64,
    pub b0_w: f64,
    pub k_v: f64,
    pub k_w: f64,
    pub bound_v: f64,
    pub bound_w: f64,
    pub slew_v: f64,
    pub slew_w: f64,
}

impl Default for ResoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            observer_gain: 1.0,
            b0_v: 1.0,
            b0_w: 1.0,
            k_v: -5.0,
            k_w: -5.0,
            bound_v: 10.0,
            bound_w: 10.0,
            slew_v: 2.0,
            slew_w: 2.0,
        }
    }
}

impl ResoConfig {
    pub fn gains_v(&self) -> ChannelGains {
        ChannelGains {
            observer_gain: self.observer_gain,
            epsilon: self.epsilon,
            b0: self.b0_v,
            feedback: self.k_v,
            bound: self.bound_v,
        }
    }

    pub fn gains_w(&self) -> ChannelGains {
        ChannelGains {
            observer_gain: self.observer_gain,
            epsilon: self.epsilon,
            b0: self.b0_w,
            feedback: self.k_w,
            bound: self.bound_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub high_hz: f64,
    pub low_hz: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            high_hz: 20.0,
            low_hz: 100.0,
        }
    }
}

impl RatesConfig {
    /// Low-rate ticks per high-rate tick.
    pub fn ratio(&self) -> Option<usize> {
        let r = self.low_hz / self.high_hz;
        let n = r.round();
        ((r - n).abs() < 1e-9 && n >= 1.0).then_some(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            sigma_xy: 0.0,
            sigma_theta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_duration: f64,
    pub goal_tolerance: f64,
    /// Post-transient window start for estimation-error statistics.
    pub transient: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_duration: 300.0,
            goal_tolerance: 0.05,
            transient: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub map: MapConfig,
    pub route: RouteConfig,
    pub planner: PlannerConfig,
    pub vehicle: VehicleConfig,
    pub disturbance: Disturbance,
    pub tracking: TrackingConfig,
    pub dynamic: DynamicConfig,
    pub reso: ResoConfig,
    pub dyn_pid: FilteredPidGains,
    pub rates: RatesConfig,
    pub noise: NoiseConfig,
    pub run: RunConfig,
    /// Directory that relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Every configurable key with its unit and meaning. Kept in step with the
/// structs above by a unit test.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    ("name", "-", "scenario label"),
    (
        "map.file",
        "path",
        "occupancy map file, relative to the scenario (empty: free grid)",
    ),
    (
        "map.width",
        "cells",
        "free-grid width when no file is given",
    ),
    (
        "map.height",
        "cells",
        "free-grid height when no file is given",
    ),
    (
        "map.resolution",
        "m/cell",
        "free-grid resolution when no file is given",
    ),
    ("map.densify", "m", "waypoint spacing after densification"),
    ("route.start", "[m, m]", "start position"),
    (
        "route.via",
        "list of [m, m]",
        "intermediate waypoints, visited in order",
    ),
    ("route.goal", "[m, m]", "goal position"),
    (
        "planner.v_c",
        "m/s",
        "constant speed used to time the raw path",
    ),
    (
        "planner.c_v",
        "-",
        "safety factor on the turning term, >= 1",
    ),
    ("planner.horizon", "steps", "prediction horizon H"),
    (
        "planner.update_horizon",
        "steps",
        "smoothing update horizon H_u",
    ),
    ("planner.q", "[1/m^2, 1/m^2, 1/rad^2]", "state weights"),
    ("planner.r", "[s^2/m^2, s^2/rad^2]", "input weights"),
    (
        "planner.s",
        "[s^2/m^2, s^2/rad^2]",
        "input-increment weights",
    ),
    ("planner.v_max", "m/s", "maximum wheel / forward speed"),
    ("planner.w_max", "rad/s", "maximum angular speed"),
    (
        "planner.fit_segment",
        "m",
        "arc length per heading-fit piece",
    ),
    (
        "planner.stop_taper",
        "m",
        "arc length of the final speed taper",
    ),
    (
        "planner.solver_tol",
        "-",
        "projected-gradient stopping tolerance",
    ),
    (
        "planner.solver_max_iters",
        "iterations",
        "solver iteration cap",
    ),
    ("vehicle.mass", "kg", "nominal mass M0"),
    ("vehicle.inertia", "kg m^2", "nominal yaw inertia I0"),
    ("vehicle.half_track", "m", "half wheel separation l_w"),
    ("vehicle.wheel_radius", "m", "wheel radius r_w"),
    (
        "vehicle.mass_multiplier",
        "-",
        "truth mass = multiplier * M0",
    ),
    (
        "vehicle.inertia_multiplier",
        "-",
        "truth inertia = multiplier * I0",
    ),
    (
        "disturbance.force.kind",
        "constant|step|sine",
        "external force profile f_e",
    ),
    ("disturbance.force.value", "N", "constant / step level"),
    ("disturbance.force.t0", "s", "step time"),
    ("disturbance.force.amplitude", "N", "sine amplitude"),
    ("disturbance.force.period", "s", "sine period"),
    (
        "disturbance.torque.kind",
        "constant|step|sine",
        "external torque profile tau_e",
    ),
    ("disturbance.torque.value", "N m", "constant / step level"),
    ("disturbance.torque.t0", "s", "step time"),
    ("disturbance.torque.amplitude", "N m", "sine amplitude"),
    ("disturbance.torque.period", "s", "sine period"),
    (
        "tracking.controller",
        "mpc|pid",
        "kinematic tracking controller",
    ),
    ("tracking.reference", "planned|astar", "tracked trajectory"),
    ("tracking.pid_v.kp", "1/s", "along-track P gain"),
    ("tracking.pid_v.ki", "1/s^2", "along-track I gain"),
    ("tracking.pid_v.kd", "-", "along-track D gain"),
    ("tracking.pid_w.kp", "1/s", "heading P gain"),
    ("tracking.pid_w.ki", "1/s^2", "heading I gain"),
    ("tracking.pid_w.kd", "-", "heading D gain"),
    (
        "tracking.pid_windup",
        "m/s | rad/s",
        "integral clamp of the tracking PID",
    ),
    (
        "tracking.pid_lookahead",
        "m",
        "lateral-correction lookahead of the heading error",
    ),
    (
        "dynamic.controller",
        "reso|pid|none",
        "low-level controller; none = kinematic plant",
    ),
    (
        "dynamic.delay",
        "ticks",
        "computation delay of the low-level command (0 or 1)",
    ),
    (
        "reso.epsilon",
        "-",
        "observer bandwidth parameter, 0 < eps < 1",
    ),
    ("reso.observer_gain", "-", "observer gain L"),
    ("reso.b0_v", "1/(kg m)", "nominal gain, linear channel"),
    ("reso.b0_w", "1/(kg m^2)", "nominal gain, angular channel"),
    ("reso.k_v", "1/s", "feedback gain K_v < 0"),
    ("reso.k_w", "1/s", "feedback gain K_w < 0"),
    ("reso.bound_v", "N m", "saturation bound M_v"),
    ("reso.bound_w", "N m", "saturation bound M_w"),
    ("reso.slew_v", "m/s^2", "reference-rate clamp, linear"),
    ("reso.slew_w", "rad/s^2", "reference-rate clamp, angular"),
    ("dyn_pid.kp", "N m s/m", "proportional gain"),
    ("dyn_pid.ki", "N m/m", "integral gain"),
    ("dyn_pid.kd", "N m s^2/m", "derivative gain"),
    ("dyn_pid.kn", "1/s", "derivative filter coefficient"),
    ("dyn_pid.windup", "N m", "integral clamp"),
    ("rates.high_hz", "Hz", "kinematic loop rate"),
    (
        "rates.low_hz",
        "Hz",
        "dynamic loop and plant rate (integer multiple of high_hz)",
    ),
    ("noise.seed", "-", "measurement-noise seed"),
    ("noise.sigma_xy", "m", "position measurement noise std"),
    ("noise.sigma_theta", "rad", "heading measurement noise std"),
    ("run.max_duration", "s", "simulated-time cap"),
    ("run.goal_tolerance", "m", "goal position tolerance"),
    ("run.transient", "s", "start of the estimation-error window"),
];

/// `--help` text block listing every key.
pub fn config_key_help() -> String {
    let width = CONFIG_KEYS
        .iter()
        .map(|(k, _, _)| k.len())
        .max()
        .unwrap_or(0);
    let mut out = String::from("Scenario keys (override with --set key=value):\n");
    for (k, unit, desc) in CONFIG_KEYS {
        out.push_str(&format!("  {k:<width$}  [{unit}] {desc}\n"));
    }
    out
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with_overrides(path, &[])
    }

    /// Loads a scenario and applies `key=value` overrides before validation.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let origin = path.display().to_string();
        let mut cfg = if overrides.is_empty() {
            Self::from_toml(&text, &origin)?
        } else {
            let mut table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                origin: origin.clone(),
                msg: e.to_string(),
            })?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            let merged = toml::to_string(&table).expect("a TOML table serializes");
            Self::from_toml(&merged, &format!("{origin} (with overrides)"))?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies overrides to an in-memory configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let merged = toml::to_string(&table).expect("a TOML table serializes");
        let mut cfg = Self::from_toml(&merged, "overrides")?;
        cfg.base_dir = self.base_dir.clone();
        Ok(cfg)
    }

    pub fn map_path(&self) -> Option<PathBuf> {
        (!self.map.file.as_os_str().is_empty()).then(|| self.base_dir.join(&self.map.file))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| {
            Err(ConfigError::Invalid {
                key: key.into(),
                msg: msg.into(),
            })
        };
        let p = &self.planner;
        if !(p.v_c > 0.0) {
            return bad("planner.v_c", "must be positive");
        }
        if p.c_v < 1.0 {
            return bad("planner.c_v", "must be >= 1");
        }
        if p.horizon == 0 || p.update_horizon == 0 || p.update_horizon > p.horizon {
            return bad(
                "planner.update_horizon",
                "need 1 <= update_horizon <= horizon",
            );
        }
        if !self.planner.weights().is_valid() {
            return bad("planner.q", "all weights must be positive");
        }
        if !(p.v_max > 0.0 && p.w_max > 0.0) {
            return bad("planner.v_max", "velocity bounds must be positive");
        }
        if !(self.map.densify > 0.0) {
            return bad("map.densify", "must be positive");
        }
        let v = &self.vehicle;
        if !(v.mass_multiplier > 0.0 && v.inertia_multiplier > 0.0) {
            return bad("vehicle.mass_multiplier", "multipliers must be positive");
        }
        if !self.vehicle.params(p.v_max).is_valid() {
            return bad("vehicle.mass", "vehicle parameters must be positive");
        }
        if self.rates.ratio().is_none() {
            return bad(
                "rates.low_hz",
                "must be an integer multiple of rates.high_hz",
            );
        }
        if self.dynamic.delay > 1 {
            return bad("dynamic.delay", "must be 0 or 1");
        }
        if let Err(e) = self
            .reso
            .gains_v()
            .validate()
            .and(self.reso.gains_w().validate())
        {
            return bad("reso", &e.to_string());
        }
        if self.noise.sigma_xy < 0.0 || self.noise.sigma_theta < 0.0 {
            return bad("noise.sigma_xy", "must be non-negative");
        }
        if !(self.run.max_duration > 0.0 && self.run.goal_tolerance > 0.0) {
            return bad("run.max_duration", "must be positive");
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // a bare word that does not parse as TOML is taken as a string
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` in `table`, rejecting keys outside [`CONFIG_KEYS`].
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| ConfigError::MalformedOverride(assignment.to_string()))?;
    if key.is_empty() {
        return Err(ConfigError::MalformedOverride(assignment.to_string()));
    }
    if !CONFIG_KEYS.iter().any(|(k, _, _)| *k == key) {
        return Err(ConfigError::UnknownKey(key.to_string()));
    }
    let mut value = parse_value(raw);
    // integers are accepted where floats are expected and vice versa by serde
    // only in one direction; promote integer literals for float-typed keys
    if let toml::Value::Integer(i) = value {
        if !INTEGER_KEYS.contains(&key) {
            value = toml::Value::Float(i as f64);
        }
    }
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Invalid {
            key: key.into(),
            msg: format!("`{part}` is not a table"),
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

const INTEGER_KEYS: &[&str] = &[
    "map.width",
    "map.height",
    "planner.horizon",
    "planner.update_horizon",
    "planner.solver_max_iters",
    "dynamic.delay",
    "noise.seed",
];
