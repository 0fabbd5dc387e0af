//! Differential-drive AGV plant.
//!
//! Kinematics (unicycle pose propagation), torque-driven velocity dynamics with
//! external force/torque disturbances, and the wheel-speed constraint that
//! bounds the admissible (v, w) pairs.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can return exactly TAU for tiny negative inputs
    if r <= -PI {
        r += TAU;
    }
    r
}

/// Shortest signed angle from `from` to `to`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_angle(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Linear and angular velocity pair `(v, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityState {
    pub v: f64,
    pub w: f64,
}

impl VelocityState {
    pub const ZERO: VelocityState = VelocityState { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }
}

/// Physical parameters of the platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicParams {
    /// Mass M in kg.
    pub mass: f64,
    /// Yaw moment of inertia I in kg m^2.
    pub inertia: f64,
    /// Half the wheel separation, l_w in m.
    pub half_track: f64,
    /// Wheel radius r_w in m.
    pub wheel_radius: f64,
    /// Maximal wheel rim speed in m/s.
    pub v_max: f64,
}

impl DynamicParams {
    pub fn is_valid(&self) -> bool {
        [
            self.mass,
            self.inertia,
            self.half_track,
            self.wheel_radius,
            self.v_max,
        ]
        .iter()
        .all(|p| p.is_finite() && *p > 0.0)
    }

    /// Control gain of the linear-velocity channel, 1/(M r_w).
    pub fn gain_v(&self) -> f64 {
        1.0 / (self.mass * self.wheel_radius)
    }

    /// Control gain of the angular-velocity channel, l_w/(2 I r_w).
    pub fn gain_w(&self) -> f64 {
        self.half_track / (2.0 * self.inertia * self.wheel_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelTorques {
    pub right: f64,
    pub left: f64,
}

/// Time profile of a scalar disturbance channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// Zero before `t0`, `value` from `t0` on.
    Step {
        t0: f64,
        value: f64,
    },
    Sine {
        amplitude: f64,
        period: f64,
    },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant { value: 0.0 }
    }
}

impl Profile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Step { t0, value } => {
                if t >= t0 {
                    value
                } else {
                    0.0
                }
            }
            Profile::Sine { amplitude, period } => amplitude * (TAU * t / period).sin(),
        }
    }
}

/// External force f_e (N) and torque tau_e (N m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    #[serde(default)]
    pub force: Profile,
    #[serde(default)]
    pub torque: Profile,
}

impl Disturbance {
    pub fn none() -> Self {
        Self::default()
    }
}

/// One forward-Euler step of the unicycle kinematics.
pub fn propagate_kinematics(pose: Pose, u: VelocityState, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    Pose {
        x: pose.x + u.v * pose.theta.cos() * dt,
        y: pose.y + u.v * pose.theta.sin() * dt,
        theta: wrap_angle(pose.theta + u.w * dt),
    }
}

/// Right-hand side of the velocity dynamics: (dv/dt, dw/dt).
pub fn velocity_derivative(
    torques: WheelTorques,
    params: &DynamicParams,
    dist: &Disturbance,
    t: f64,
) -> (f64, f64) {
    let sum = torques.right + torques.left;
    let diff = torques.right - torques.left;
    let dv = sum / (params.mass * params.wheel_radius) - dist.force.at(t) / params.mass;
    let dw = params.half_track * diff / (2.0 * params.inertia * params.wheel_radius)
        - dist.torque.at(t) / params.inertia;
    (dv, dw)
}

/// One RK4 step of the velocity dynamics with torques held over `dt`.
pub fn propagate_dynamics(
    state: VelocityState,
    torques: WheelTorques,
    params: &DynamicParams,
    dist: &Disturbance,
    t: f64,
    dt: f64,
) -> VelocityState {
    debug_assert!(dt > 0.0);
    // the dynamics do not depend on (v, w), so the stages only differ in time
    let k1 = velocity_derivative(torques, params, dist, t);
    let k2 = velocity_derivative(torques, params, dist, t + 0.5 * dt);
    let k3 = k2;
    let k4 = velocity_derivative(torques, params, dist, t + dt);
    VelocityState {
        v: state.v + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        w: state.w + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    }
}

/// Full five-state truth plant: pose and body velocities, integrated with RK4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub pose: Pose,
    pub vel: VelocityState,
}

impl PlantState {
    /// RK4 step of the complete model with torques held over `dt`.
    pub fn step_dynamic(
        &self,
        torques: WheelTorques,
        params: &DynamicParams,
        dist: &Disturbance,
        t: f64,
        dt: f64,
    ) -> PlantState {
        let f = |s: [f64; 5], t: f64| -> [f64; 5] {
            let (dv, dw) = velocity_derivative(torques, params, dist, t);
            [s[3] * s[2].cos(), s[3] * s[2].sin(), s[4], dv, dw]
        };
        let s0 = [
            self.pose.x,
            self.pose.y,
            self.pose.theta,
            self.vel.v,
            self.vel.w,
        ];
        let s = rk4(f, s0, t, dt);
        PlantState {
            pose: Pose {
                x: s[0],
                y: s[1],
                theta: wrap_angle(s[2]),
            },
            vel: VelocityState { v: s[3], w: s[4] },
        }
    }

    /// RK4 step of the kinematics alone, velocities imposed directly.
    pub fn step_kinematic(&self, u: VelocityState, dt: f64) -> PlantState {
        let f = |s: [f64; 5], _t: f64| -> [f64; 5] {
            [u.v * s[2].cos(), u.v * s[2].sin(), u.w, 0.0, 0.0]
        };
        let s0 = [self.pose.x, self.pose.y, self.pose.theta, u.v, u.w];
        let s = rk4(f, s0, 0.0, dt);
        PlantState {
            pose: Pose {
                x: s[0],
                y: s[1],
                theta: wrap_angle(s[2]),
            },
            vel: u,
        }
    }
}

fn rk4<const N: usize>(
    f: impl Fn([f64; N], f64) -> [f64; N],
    s: [f64; N],
    t: f64,
    dt: f64,
) -> [f64; N] {
    let axpy = |a: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] {
        let mut out = *a;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += h * ki;
        }
        out
    };
    let k1 = f(s, t);
    let k2 = f(axpy(&s, &k1, 0.5 * dt), t + 0.5 * dt);
    let k3 = f(axpy(&s, &k2, 0.5 * dt), t + 0.5 * dt);
    let k4 = f(axpy(&s, &k3, dt), t + dt);
    let mut out = s;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Left and right wheel rim speeds `(v_L, v_R)` for a body velocity.
pub fn wheel_speeds(u: VelocityState, params: &DynamicParams) -> (f64, f64) {
    (u.v - params.half_track * u.w, u.v + params.half_track * u.w)
}

/// Body velocity from wheel rim speeds.
pub fn body_velocity(v_left: f64, v_right: f64, half_track: f64) -> VelocityState {
    VelocityState {
        v: 0.5 * (v_left + v_right),
        w: (v_right - v_left) / (2.0 * half_track),
    }
}

/// Safety-scaled diamond constraint `|v| + l_w c_v |w| <= v_max`.
pub fn check_velocity_constraint(u: VelocityState, params: &DynamicParams, c_v: f64) -> bool {
    debug_assert!(c_v >= 1.0);
    u.v.abs() + params.half_track * c_v * u.w.abs() <= params.v_max + 1e-9
}
