//! Low-level velocity control.
//!
//! Each body-velocity channel (`v` and `w`) is a first-order plant
//! `eta' = f + b u` with unknown drift `f` and a control gain `b` whose sign
//! is the only prior knowledge. A reduced-order extended state observer
//! estimates the lumped uncertainty `f + (b - b0) u`, and the control law
//! cancels it behind a smooth saturation. A filtered-derivative PID is
//! provided as the baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::WheelTorques;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResoError {
    #[error("observer step too stiff: dt*L/eps = {ratio} > 1")]
    StiffnessViolation { ratio: f64 },
    #[error("invalid observer parameters: {0}")]
    InvalidParams(&'static str),
}

/// Smooth unity saturation with a knee of width `eps` (0 < eps < 1).
///
/// Identity on `[0, 1]`, a quadratic blend on `[1, 1 + eps]`, constant
/// `1 + eps/2` beyond, extended as an odd function.
pub fn sat_eps(l: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0 && eps < 1.0);
    let a = l.abs();
    let y = if a <= 1.0 {
        a
    } else if a <= 1.0 + eps {
        a + (a - 1.0) / eps - (a * a - 1.0) / (2.0 * eps)
    } else {
        1.0 + eps / 2.0
    };
    if l < 0.0 {
        -y
    } else {
        y
    }
}

/// Tuning of one observer/controller channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGains {
    /// Observer gain L > 0.
    pub observer_gain: f64,
    /// Singular-perturbation parameter, 0 < eps < 1.
    pub epsilon: f64,
    /// Nominal control gain; only its sign has to be right.
    pub b0: f64,
    /// Error feedback gain K < 0.
    pub feedback: f64,
    /// Saturation bound M_u.
    pub bound: f64,
}

impl ChannelGains {
    pub fn validate(&self) -> Result<(), ResoError> {
        if !(self.observer_gain > 0.0) {
            return Err(ResoError::InvalidParams("observer gain must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ResoError::InvalidParams("epsilon must lie in (0, 1)"));
        }
        if self.b0 == 0.0 || !self.b0.is_finite() {
            return Err(ResoError::InvalidParams("nominal gain must be nonzero"));
        }
        if !(self.feedback < 0.0) {
            return Err(ResoError::InvalidParams("feedback gain must be negative"));
        }
        if !(self.bound > 0.0) {
            return Err(ResoError::InvalidParams(
                "saturation bound must be positive",
            ));
        }
        Ok(())
    }
}

/// One observer channel with its latest uncertainty estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResoChannel {
    pub gains: ChannelGains,
    /// Observer state.
    state: f64,
    /// Measurement used in the last Euler step.
    last_measurement: f64,
    /// Latest estimate of the total uncertainty.
    estimate: f64,
    initialized: bool,
    /// Unsaturated command of the last control evaluation.
    last_psi: f64,
}

impl ResoChannel {
    pub fn new(gains: ChannelGains) -> Result<Self, ResoError> {
        gains.validate()?;
        Ok(Self {
            gains,
            state: 0.0,
            last_measurement: 0.0,
            estimate: 0.0,
            initialized: false,
            last_psi: 0.0,
        })
    }

    /// Starts the observer at the first measurement so the initial estimate is zero.
    pub fn initialize(&mut self, measurement: f64) {
        self.state = measurement;
        self.last_measurement = measurement;
        self.estimate = 0.0;
        self.initialized = true;
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// Unsaturated command `psi` from the most recent [`ResoChannel::control`] call.
    pub fn last_psi(&self) -> f64 {
        self.last_psi
    }

    fn rate(&self) -> f64 {
        self.gains.observer_gain / self.gains.epsilon
    }

    /// Advances the observer over the last sample interval, during which
    /// `applied` was the plant input, and refreshes the estimate from the new
    /// measurement. Returns the estimate.
    pub fn observe(&mut self, measurement: f64, applied: f64, dt: f64) -> Result<f64, ResoError> {
        let ratio = dt * self.rate();
        if ratio > 1.0 + 1e-12 {
            return Err(ResoError::StiffnessViolation { ratio });
        }
        if !self.initialized {
            self.initialize(measurement);
            return Ok(self.estimate);
        }
        // forward Euler over [t - dt, t] from the sample at t - dt
        self.state +=
            dt * (self.rate() * (self.last_measurement - self.state) + self.gains.b0 * applied);
        self.last_measurement = measurement;
        self.estimate = self.rate() * (measurement - self.state);
        Ok(self.estimate)
    }

    /// Saturated disturbance-cancelling command for the current estimate.
    pub fn control(&mut self, measurement: f64, reference: f64, reference_rate: f64) -> f64 {
        let g = &self.gains;
        let psi = (g.feedback * (measurement - reference) - self.estimate + reference_rate) / g.b0;
        self.last_psi = psi;
        g.bound * sat_eps(psi / g.bound, g.epsilon)
    }

    /// True when the last command hit the saturation knee.
    pub fn saturated(&self) -> bool {
        self.last_psi.abs() > self.gains.bound
    }
}

/// Torque sum/difference commands and the wheel torques they map to.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynamicCommand {
    pub u_v: f64,
    pub u_w: f64,
    pub torques: WheelTorques,
}

impl DynamicCommand {
    pub fn from_channels(u_v: f64, u_w: f64) -> Self {
        Self {
            u_v,
            u_w,
            torques: torques_from_channels(u_v, u_w),
        }
    }
}

/// `T_r = (u_v + u_w)/2`, `T_l = (u_v - u_w)/2`.
pub fn torques_from_channels(u_v: f64, u_w: f64) -> WheelTorques {
    WheelTorques {
        right: 0.5 * (u_v + u_w),
        left: 0.5 * (u_v - u_w),
    }
}

/// `u_v = T_r + T_l`, `u_w = T_r - T_l`.
pub fn channels_from_torques(t: WheelTorques) -> (f64, f64) {
    (t.right + t.left, t.right - t.left)
}

/// Measured and reference values for both velocity channels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelSample {
    pub measured: f64,
    pub reference: f64,
    pub reference_rate: f64,
    /// Plant input applied over the last interval.
    pub applied: f64,
}

/// Steps both observers, then evaluates both control laws.
pub fn dynamic_step(
    v_ch: &mut ResoChannel,
    w_ch: &mut ResoChannel,
    v: ChannelSample,
    w: ChannelSample,
    dt: f64,
) -> Result<DynamicCommand, ResoError> {
    v_ch.observe(v.measured, v.applied, dt)?;
    w_ch.observe(w.measured, w.applied, dt)?;
    let u_v = v_ch.control(v.measured, v.reference, v.reference_rate);
    let u_w = w_ch.control(w.measured, w.reference, w.reference_rate);
    Ok(DynamicCommand::from_channels(u_v, u_w))
}

/// Zero-order hold of the high-rate velocity reference with a slew-limited
/// backward-difference rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRate {
    period: f64,
    slew: f64,
    last: Option<f64>,
    value: f64,
    rate: f64,
}

impl ReferenceRate {
    /// `period` is the high-rate sample period, `slew` the rate bound.
    pub fn new(period: f64, slew: f64) -> Self {
        Self {
            period,
            slew,
            last: None,
            value: 0.0,
            rate: 0.0,
        }
    }

    /// Records a new high-rate sample.
    pub fn push(&mut self, sample: f64) {
        if let Some(prev) = self.last {
            self.rate = ((sample - prev) / self.period).clamp(-self.slew, self.slew);
        }
        self.last = Some(sample);
        self.value = sample;
    }

    /// Held reference value.
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Held rate estimate; zero until two samples were seen.
    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// PID gains of the transfer function `kp + ki/s + kd kn s / (s + kn)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilteredPidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub kn: f64,
    /// Integral clamp.
    pub windup: f64,
}

impl Default for FilteredPidGains {
    fn default() -> Self {
        Self {
            kp: 12.74,
            ki: 5.17,
            kd: 0.88,
            kn: 100.04,
            windup: 10.0,
        }
    }
}

/// Backward-Euler realisation of the filtered-derivative PID.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPid {
    pub gains: FilteredPidGains,
    integral: f64,
    derivative: f64,
    prev_error: f64,
}

impl FilteredPid {
    pub fn new(gains: FilteredPidGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            derivative: 0.0,
            prev_error: 0.0,
        }
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let g = &self.gains;
        self.integral = (self.integral + g.ki * error * dt).clamp(-g.windup, g.windup);
        self.derivative =
            (self.derivative + g.kd * g.kn * (error - self.prev_error)) / (1.0 + g.kn * dt);
        self.prev_error = error;
        g.kp * error + self.integral + self.derivative
    }
}

/// PID baseline for both channels, mapped to wheel torques.
pub fn pid_dynamic_step(
    v_pid: &mut FilteredPid,
    w_pid: &mut FilteredPid,
    measured: (f64, f64),
    reference: (f64, f64),
    dt: f64,
) -> DynamicCommand {
    let u_v = v_pid.step(reference.0 - measured.0, dt);
    let u_w = w_pid.step(reference.1 - measured.1, dt);
    DynamicCommand::from_channels(u_v, u_w)
}
