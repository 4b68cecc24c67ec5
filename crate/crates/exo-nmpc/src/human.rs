//! Simulated human: swing-phase reference trajectories and a
//! feedback-linearization surrogate for the human motor control.
//!
//! The reference is a family of modulated sinusoids (per-joint amplitude and
//! frequency both vary slowly), which keeps the motion periodic but never
//! exactly repeating. The "brain" computes inverse dynamics plus a PD term on
//! the tracking error and cancels the strap torque it feels, leaving linear
//! error dynamics ë + K_d ė + K_p e = 0.

use nalgebra::DVector;

use crate::dynamics::{compute_terms, JointState, LimbModel, LinkParams, ModelError};

/// One joint's modulated-sinusoid reference:
/// q(t) = mean + A(t)·sin(θ(t) + φ) with
/// A(t) = A₀(1 + d_A sin(ω_A t)) and θ̇(t) = ω₀(1 + d_ω sin(ω_ω t)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointProfile {
    pub mean: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub amp_mod_depth: f64,
    pub amp_mod_rate: f64,
    pub freq_mod_depth: f64,
    pub freq_mod_rate: f64,
}

impl JointProfile {
    /// Position, velocity, and acceleration at time t (analytic derivatives).
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let a0 = self.amplitude;
        let (da, wa) = (self.amp_mod_depth, self.amp_mod_rate);
        let (dw, ww) = (self.freq_mod_depth, self.freq_mod_rate);
        let w0 = self.frequency;

        let a = a0 * (1.0 + da * (wa * t).sin());
        let a_dot = a0 * da * wa * (wa * t).cos();
        let a_ddot = -a0 * da * wa * wa * (wa * t).sin();

        // θ(t) = ∫₀ᵗ ω₀(1 + d_ω sin(ω_ω u)) du
        let theta = if ww == 0.0 {
            w0 * t
        } else {
            w0 * (t + dw * (1.0 - (ww * t).cos()) / ww)
        };
        let theta_dot = w0 * (1.0 + dw * (ww * t).sin());
        let theta_ddot = w0 * dw * ww * (ww * t).cos();

        let s = (theta + self.phase).sin();
        let c = (theta + self.phase).cos();

        let q = self.mean + a * s;
        let qd = a_dot * s + a * c * theta_dot;
        let qdd = a_ddot * s + 2.0 * a_dot * theta_dot * c - a * theta_dot * theta_dot * s
            + a * theta_ddot * c;
        (q, qd, qdd)
    }

    /// Largest excursion of the base (unmodulated) sinusoid from the mean.
    pub fn base_excursion(&self) -> f64 {
        self.amplitude.abs()
    }
}

/// Per-joint reference trajectory for the whole limb.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProfile {
    joints: Vec<JointProfile>,
}

/// Physiological swing range per joint in the hanging-angle convention:
/// (hip, knee) for 2-DOF, knee only for 1-DOF.
const HIP_RANGE: (f64, f64) = (-0.35, 0.6);
const KNEE_RANGE: (f64, f64) = (0.0, 1.2);

impl TrajectoryProfile {
    pub fn new(joints: Vec<JointProfile>) -> Result<Self, ModelError> {
        if joints.is_empty() || joints.len() > 2 {
            return Err(ModelError::InvalidModel(format!(
                "trajectory must have 1 or 2 joints, got {}",
                joints.len()
            )));
        }
        let profile = Self { joints };
        profile.validate()?;
        Ok(profile)
    }

    /// Checks that the base amplitude of each joint stays inside its
    /// physiological swing range.
    pub fn validate(&self) -> Result<(), ModelError> {
        let ranges: &[(f64, f64)] = if self.joints.len() == 2 {
            &[HIP_RANGE, KNEE_RANGE]
        } else {
            &[KNEE_RANGE]
        };
        for (joint, range) in self.joints.iter().zip(ranges) {
            let lo = joint.mean - joint.base_excursion();
            let hi = joint.mean + joint.base_excursion();
            if lo < range.0 || hi > range.1 {
                return Err(ModelError::InvalidModel(format!(
                    "joint swing [{lo:.3}, {hi:.3}] rad outside physiological range [{}, {}]",
                    range.0, range.1
                )));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joint(&self, index: usize) -> JointProfile {
        self.joints[index]
    }

    /// Default 2-DOF swing profile (hip then knee).
    pub fn default_two_dof() -> Self {
        use std::f64::consts::PI;
        Self::new(vec![
            JointProfile {
                mean: 0.125,
                amplitude: 0.4,
                frequency: PI,
                phase: 0.0,
                amp_mod_depth: 0.2,
                amp_mod_rate: 0.2,
                freq_mod_depth: 0.15,
                freq_mod_rate: 0.2,
            },
            JointProfile {
                mean: 0.6,
                amplitude: 0.5,
                frequency: PI,
                phase: -PI / 2.0,
                amp_mod_depth: 0.2,
                amp_mod_rate: 0.2,
                freq_mod_depth: 0.15,
                freq_mod_rate: 0.2,
            },
        ])
        .expect("default profile is valid")
    }

    /// Default 1-DOF knee profile used for the single-joint test rig.
    pub fn default_one_dof() -> Self {
        use std::f64::consts::PI;
        Self::new(vec![JointProfile {
            mean: 0.6,
            amplitude: 0.5,
            frequency: PI,
            phase: 0.0,
            amp_mod_depth: 0.2,
            amp_mod_rate: 0.2,
            freq_mod_depth: 0.15,
            freq_mod_rate: 0.2,
        }])
        .expect("default profile is valid")
    }
}

/// Desired position, velocity, and acceleration vectors at time t.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
}

/// Evaluates the reference trajectory at time t.
pub fn reference_trajectory(profile: &TrajectoryProfile, t: f64) -> DesiredState {
    assert!(t >= 0.0, "t must be non-negative");
    let dof = profile.dof();
    let mut q = DVector::zeros(dof);
    let mut qd = DVector::zeros(dof);
    let mut qdd = DVector::zeros(dof);
    for (i, joint) in profile.joints.iter().enumerate() {
        let (p, v, a) = joint.eval(t);
        q[i] = p;
        qd[i] = v;
        qdd[i] = a;
    }
    DesiredState { q, qd, qdd }
}

/// Feedback-linearization PD gains (diagonal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanGains {
    /// Position gain, 1/s².
    pub kp: f64,
    /// Velocity gain, 1/s.
    pub kd: f64,
}

impl Default for HumanGains {
    fn default() -> Self {
        // critically damped: kd = 2·sqrt(kp)
        Self { kp: 400.0, kd: 40.0 }
    }
}

/// Inverse-dynamics torque without the strap feed-through:
/// M(q)(q̈_d + K_d(q̇_d − q̇) + K_p(q_d − q)) + C q̇ + G.
///
/// Adding the felt interaction torque to this value (see [`human_torque`])
/// cancels the strap exactly, so the human evolution is independent of the
/// robot; the split lets the simulator exploit that cancellation exactly.
pub fn human_net_torque(
    model: &LimbModel,
    state: &JointState,
    desired: &DesiredState,
    gains: &HumanGains,
) -> DVector<f64> {
    assert_eq!(state.dof(), model.dof(), "state dimension must match model");
    assert_eq!(desired.q.len(), model.dof(), "desired dimension must match model");
    let terms = compute_terms(model, state);
    let accel = &desired.qdd
        + (&desired.qd - &state.qd) * gains.kd
        + (&desired.q - &state.q) * gains.kp;
    &terms.mass * accel + &terms.coriolis * &state.qd + &terms.gravity
}

/// Total torque exerted by the human: inverse dynamics plus exact
/// compensation of the felt interaction torque.
pub fn human_torque(
    model: &LimbModel,
    state: &JointState,
    desired: &DesiredState,
    gains: &HumanGains,
    interaction: &DVector<f64>,
) -> DVector<f64> {
    human_net_torque(model, state, desired, gains) + interaction
}

/// Linearly ramped body mass, clamped to [0, t_end].
pub fn human_mass_at(t: f64, t_end: f64, m_start: f64, m_end: f64) -> f64 {
    let frac = (t / t_end).clamp(0.0, 1.0);
    m_start + frac * (m_end - m_start)
}

/// Anthropometric segment fractions used to derive the human limb model
/// from total body mass and height: mass fractions (thigh 10%, shank+foot
/// 6.1%), segment lengths (0.245·H, 0.246·H), com position (43.3%/43.4% of
/// segment length), and radius of gyration (0.323/0.302 of segment length).
#[derive(Debug, Clone, Copy)]
pub struct Anthropometry {
    pub height: f64,
    pub thigh_mass_fraction: f64,
    pub shank_mass_fraction: f64,
    pub thigh_length_fraction: f64,
    pub shank_length_fraction: f64,
    pub thigh_com_fraction: f64,
    pub shank_com_fraction: f64,
    pub thigh_gyration_fraction: f64,
    pub shank_gyration_fraction: f64,
}

impl Default for Anthropometry {
    fn default() -> Self {
        Self {
            height: 1.75,
            thigh_mass_fraction: 0.100,
            shank_mass_fraction: 0.061,
            thigh_length_fraction: 0.245,
            shank_length_fraction: 0.246,
            thigh_com_fraction: 0.433,
            shank_com_fraction: 0.434,
            thigh_gyration_fraction: 0.323,
            shank_gyration_fraction: 0.302,
        }
    }
}

impl Anthropometry {
    /// Builds the frictionless human limb model for a given body mass.
    pub fn limb_model(&self, body_mass: f64, dof: usize) -> Result<LimbModel, ModelError> {
        let shank = self.segment(
            body_mass * self.shank_mass_fraction,
            self.height * self.shank_length_fraction,
            self.shank_com_fraction,
            self.shank_gyration_fraction,
        )?;
        let links = match dof {
            1 => vec![shank],
            2 => {
                let thigh = self.segment(
                    body_mass * self.thigh_mass_fraction,
                    self.height * self.thigh_length_fraction,
                    self.thigh_com_fraction,
                    self.thigh_gyration_fraction,
                )?;
                vec![thigh, shank]
            }
            _ => {
                return Err(ModelError::InvalidModel(format!("dof must be 1 or 2, got {dof}")));
            }
        };
        LimbModel::new(links, 0.0, 0.0, 0.0, 9.81)
    }

    fn segment(&self, mass: f64, length: f64, com_frac: f64, gyr_frac: f64) -> Result<LinkParams, ModelError> {
        let gyration = gyr_frac * length;
        LinkParams::new(mass, length, com_frac * length, mass * gyration * gyration)
    }
}
