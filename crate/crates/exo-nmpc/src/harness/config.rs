//! Run configuration: runtime structs with defaults, and the TOML config
//! file schema. Every model and control parameter appears in the file under
//! its conventional symbol name; unknown keys are rejected.

use nalgebra::DVector;
use serde::Deserialize;

use crate::dynamics::{LimbModel, LinkParams};
use crate::human::{Anthropometry, HumanGains, JointProfile, TrajectoryProfile};
use crate::interaction::{EstimatorGains, StrapConfig};
use crate::msnmpc::{EkfNoise, MsSettings};
use crate::nmpc::NmpcConfig;
use crate::optimizer::SqpSettings;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Nmpc,
    Msnmpc,
    Both,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "nmpc" => Ok(Self::Nmpc),
            "msnmpc" => Ok(Self::Msnmpc),
            "both" => Ok(Self::Both),
            other => Err(SimError::Config(format!(
                "unknown controller '{other}' (expected nmpc, msnmpc, or both)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Nmpc => "nmpc",
            Self::Msnmpc => "msnmpc",
            Self::Both => "both",
        }
    }
}

/// A mid-run change of the true payload (used to probe that the controller
/// reacts only through the sensors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadStep {
    pub at: f64,
    pub to: f64,
}

/// Which uncertainty channels act on the plant, plus sensor conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyConfig {
    pub link_mass_wobble: bool,
    pub lumped_disturbance: bool,
    pub sensor_noise: bool,
    pub mass_ramp: bool,
    /// Moving-average window for velocity and force channels.
    pub filter_window: usize,
    /// Force sensor saturation, N (symmetric); None = ideal sensor.
    pub force_saturation: Option<f64>,
    pub payload_step: Option<PayloadStep>,
}

impl UncertaintyConfig {
    pub fn all_enabled() -> Self {
        Self {
            link_mass_wobble: true,
            lumped_disturbance: true,
            sensor_noise: true,
            mass_ramp: true,
            filter_window: 5,
            force_saturation: None,
            payload_step: None,
        }
    }

    pub fn all_disabled() -> Self {
        Self {
            link_mass_wobble: false,
            lumped_disturbance: false,
            sensor_noise: false,
            mass_ramp: false,
            filter_window: 5,
            force_saturation: None,
            payload_step: None,
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dof: usize,
    pub duration: f64,
    pub controller: ControllerKind,
    pub true_payload: f64,
    /// Robot model without payload; the true payload is applied to the plant
    /// only, never to the controllers.
    pub robot: LimbModel,
    pub human_mass_start: f64,
    pub human_mass_end: f64,
    pub anthropometry: Anthropometry,
    pub straps: StrapConfig,
    pub estimator_gains: EstimatorGains,
    pub human_gains: HumanGains,
    pub trajectory: TrajectoryProfile,
    pub nmpc: NmpcConfig,
    pub ms: MsSettings,
    pub sqp: SqpSettings,
    pub uncertainty: UncertaintyConfig,
    /// Metrics settle window, s.
    pub settle: f64,
    pub threads: usize,
}

/// Default robot legs: a plausible exoskeleton leg in the same size class as
/// the human segments.
fn default_robot(dof: usize) -> LimbModel {
    let thigh = LinkParams::new(2.5, 0.40, 0.20, 0.035).expect("valid default thigh");
    let shank = LinkParams::new(2.0, 0.40, 0.18, 0.030).expect("valid default shank");
    let links = match dof {
        1 => vec![shank],
        _ => vec![thigh, shank],
    };
    LimbModel::new(links, 0.0, 0.000899, 0.05048, 9.81).expect("valid default robot")
}

impl SimConfig {
    /// Baseline experiment for the given limb dof. The 1-DOF rig fixes the
    /// human mass (no ramp) and uses the single-joint trajectory.
    pub fn default_for_dof(dof: usize) -> Result<Self, SimError> {
        if dof != 1 && dof != 2 {
            return Err(SimError::Config(format!("dof must be 1 or 2, got {dof}")));
        }
        let trajectory = if dof == 2 {
            TrajectoryProfile::default_two_dof()
        } else {
            TrajectoryProfile::default_one_dof()
        };
        let mut uncertainty = UncertaintyConfig::all_enabled();
        let (mass_start, mass_end) = if dof == 2 {
            (60.0, 85.0)
        } else {
            uncertainty.mass_ramp = false;
            (60.0, 60.0)
        };
        Ok(Self {
            dof,
            duration: 30.0,
            controller: ControllerKind::Both,
            true_payload: 2.0,
            robot: default_robot(dof),
            human_mass_start: mass_start,
            human_mass_end: mass_end,
            anthropometry: Anthropometry::default(),
            straps: StrapConfig::default(),
            estimator_gains: EstimatorGains::default(),
            human_gains: HumanGains::default(),
            trajectory,
            nmpc: NmpcConfig::default(),
            ms: MsSettings::default(),
            sqp: SqpSettings::default(),
            uncertainty,
            settle: 2.0,
            threads: 1,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.dof != 1 && self.dof != 2 {
            return fail(format!("dof must be 1 or 2, got {}", self.dof));
        }
        if self.robot.dof() != self.dof {
            return fail("robot model dof does not match run dof".into());
        }
        if self.trajectory.dof() != self.dof {
            return fail("trajectory dof does not match run dof".into());
        }
        self.nmpc.validate().or_else(|e| fail(e))?;
        self.ms.validate().or_else(|e| fail(e))?;
        self.straps.validate().or_else(|e| fail(e))?;
        if self.duration < 10.0 * self.nmpc.dt {
            return fail(format!("duration must be at least 10 steps ({} s)", 10.0 * self.nmpc.dt));
        }
        if self.true_payload < 0.0 {
            return fail(format!("payload must be non-negative, got {}", self.true_payload));
        }
        if self.uncertainty.filter_window == 0 {
            return fail("filter window must be at least 1".into());
        }
        if self.settle < 0.0 || self.settle >= self.duration {
            return fail(format!("settle window {} must lie within the run duration", self.settle));
        }
        if self.threads == 0 {
            return fail("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Human limb model at simulation time t, following the mass ramp when
    /// enabled.
    pub fn human_model_at(&self, t: f64) -> LimbModel {
        let mass = if self.uncertainty.mass_ramp {
            crate::human::human_mass_at(t, self.duration, self.human_mass_start, self.human_mass_end)
        } else {
            self.human_mass_start
        };
        self.anthropometry
            .limb_model(mass, self.dof)
            .expect("anthropometric model is valid for positive mass")
    }

    /// True payload at simulation time t (respects the canary step).
    pub fn payload_at(&self, t: f64) -> f64 {
        match self.uncertainty.payload_step {
            Some(step) if t >= step.at => step.to,
            _ => self.true_payload,
        }
    }

    /// Loads a TOML config file on top of the defaults implied by its
    /// `[run] dof` entry (or 2 when absent).
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| SimError::Config(format!("config parse error: {e}")))?;
        let dof = file.run.as_ref().and_then(|r| r.dof).unwrap_or(2);
        let mut cfg = Self::default_for_dof(dof)?;
        file.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSection {
    mass: Option<f64>,
    length: Option<f64>,
    com: Option<f64>,
    inertia: Option<f64>,
}

impl LinkSection {
    fn apply(&self, link: &mut LinkParams) {
        if let Some(v) = self.mass {
            link.mass = v;
        }
        if let Some(v) = self.length {
            link.length = v;
        }
        if let Some(v) = self.com {
            link.com_distance = v;
        }
        if let Some(v) = self.inertia {
            link.inertia_com = v;
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotSection {
    k_f1: Option<f64>,
    k_f2: Option<f64>,
    thigh: Option<LinkSection>,
    shank: Option<LinkSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointProfileSection {
    mean: Option<f64>,
    #[serde(rename = "A0")]
    amplitude: Option<f64>,
    omega0: Option<f64>,
    phase: Option<f64>,
    d_A: Option<f64>,
    omega_A: Option<f64>,
    d_omega: Option<f64>,
    omega_omega: Option<f64>,
}

impl JointProfileSection {
    fn apply(&self, joint: &mut JointProfile) {
        if let Some(v) = self.mean {
            joint.mean = v;
        }
        if let Some(v) = self.amplitude {
            joint.amplitude = v;
        }
        if let Some(v) = self.omega0 {
            joint.frequency = v;
        }
        if let Some(v) = self.phase {
            joint.phase = v;
        }
        if let Some(v) = self.d_A {
            joint.amp_mod_depth = v;
        }
        if let Some(v) = self.omega_A {
            joint.amp_mod_rate = v;
        }
        if let Some(v) = self.d_omega {
            joint.freq_mod_depth = v;
        }
        if let Some(v) = self.omega_omega {
            joint.freq_mod_rate = v;
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct HumanSection {
    body_mass_start: Option<f64>,
    body_mass_end: Option<f64>,
    height: Option<f64>,
    Kp: Option<f64>,
    Kd: Option<f64>,
    hip: Option<JointProfileSection>,
    knee: Option<JointProfileSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct StrapSection {
    k_s: Option<f64>,
    c_s: Option<f64>,
    L_s1: Option<f64>,
    L_s2: Option<f64>,
    K_1: Option<f64>,
    K_2: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct NmpcSection {
    N_p: Option<usize>,
    N_c: Option<usize>,
    r_d: Option<f64>,
    r_t: Option<f64>,
    dt: Option<f64>,
    T_max: Option<f64>,
    dT_rate_max: Option<f64>,
    sqp_max_iterations: Option<usize>,
    sqp_kkt_tolerance: Option<f64>,
    sqp_step_tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct MsnmpcSection {
    N: Option<usize>,
    c_1: Option<f64>,
    mu_floor: Option<f64>,
    scenario_payloads: Option<Vec<f64>>,
    q_process: Option<[f64; 3]>,
    r_meas: Option<[f64; 2]>,
    p0: Option<f64>,
    p0_disturbance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UncertaintySection {
    link_mass_wobble: Option<bool>,
    lumped_disturbance: Option<bool>,
    sensor_noise: Option<bool>,
    mass_ramp: Option<bool>,
    filter_window: Option<usize>,
    force_saturation: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    dof: Option<usize>,
    duration: Option<f64>,
    controller: Option<String>,
    payload: Option<f64>,
    settle: Option<f64>,
    threads: Option<usize>,
}

/// The on-disk config layout: `[robot]`, `[human]`, `[straps]`, `[nmpc]`,
/// `[msnmpc]`, `[uncertainty]`, `[run]`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    robot: Option<RobotSection>,
    human: Option<HumanSection>,
    straps: Option<StrapSection>,
    nmpc: Option<NmpcSection>,
    msnmpc: Option<MsnmpcSection>,
    uncertainty: Option<UncertaintySection>,
    run: Option<RunSection>,
}

impl ConfigFile {
    fn apply(&self, cfg: &mut SimConfig) -> Result<(), SimError> {
        if let Some(run) = &self.run {
            if let Some(v) = run.duration {
                cfg.duration = v;
            }
            if let Some(c) = &run.controller {
                cfg.controller = ControllerKind::parse(c)?;
            }
            if let Some(v) = run.payload {
                cfg.true_payload = v;
            }
            if let Some(v) = run.settle {
                cfg.settle = v;
            }
            if let Some(v) = run.threads {
                cfg.threads = v;
            }
        }

        if let Some(robot) = &self.robot {
            let mut links: Vec<LinkParams> = cfg.robot.links().to_vec();
            if cfg.dof == 2 {
                if let Some(t) = &robot.thigh {
                    t.apply(&mut links[0]);
                }
                if let Some(s) = &robot.shank {
                    s.apply(&mut links[1]);
                }
            } else if let Some(s) = &robot.shank {
                s.apply(&mut links[0]);
            }
            let viscous = robot.k_f1.unwrap_or(cfg.robot.viscous_friction);
            let coulomb = robot.k_f2.unwrap_or(cfg.robot.coulomb_friction);
            cfg.robot = LimbModel::new(links, 0.0, viscous, coulomb, cfg.robot.gravity)
                .map_err(|e| SimError::Config(e.to_string()))?;
        }

        if let Some(human) = &self.human {
            if let Some(v) = human.body_mass_start {
                cfg.human_mass_start = v;
            }
            if let Some(v) = human.body_mass_end {
                cfg.human_mass_end = v;
            }
            if let Some(v) = human.height {
                cfg.anthropometry.height = v;
            }
            if let Some(v) = human.Kp {
                cfg.human_gains.kp = v;
            }
            if let Some(v) = human.Kd {
                cfg.human_gains.kd = v;
            }
            let mut joints: Vec<JointProfile> = (0..cfg.trajectory.dof())
                .map(|i| cfg.trajectory.joint(i))
                .collect();
            if cfg.dof == 2 {
                if let Some(h) = &human.hip {
                    h.apply(&mut joints[0]);
                }
                if let Some(k) = &human.knee {
                    k.apply(&mut joints[1]);
                }
            } else {
                if human.hip.is_some() {
                    return Err(SimError::Config("1-DOF runs have no hip trajectory".into()));
                }
                if let Some(k) = &human.knee {
                    k.apply(&mut joints[0]);
                }
            }
            cfg.trajectory =
                TrajectoryProfile::new(joints).map_err(|e| SimError::Config(e.to_string()))?;
        }

        if let Some(straps) = &self.straps {
            if let Some(v) = straps.k_s {
                cfg.straps.stiffness = v;
            }
            if let Some(v) = straps.c_s {
                cfg.straps.damping = v;
            }
            if let Some(v) = straps.L_s1 {
                cfg.straps.lever_thigh = v;
            }
            if let Some(v) = straps.L_s2 {
                cfg.straps.lever_shank = v;
            }
            if let Some(v) = straps.K_1 {
                cfg.estimator_gains.position = v;
            }
            if let Some(v) = straps.K_2 {
                cfg.estimator_gains.velocity = v;
            }
        }

        if let Some(nmpc) = &self.nmpc {
            if let Some(v) = nmpc.N_p {
                cfg.nmpc.prediction_horizon = v;
            }
            if let Some(v) = nmpc.N_c {
                cfg.nmpc.control_horizon = v;
            }
            if let Some(v) = nmpc.r_d {
                cfg.nmpc.velocity_weight = v;
            }
            if let Some(v) = nmpc.r_t {
                cfg.nmpc.increment_weight = v;
            }
            if let Some(v) = nmpc.dt {
                cfg.nmpc.dt = v;
            }
            if let Some(v) = nmpc.T_max {
                cfg.nmpc.torque_max = v;
            }
            if let Some(v) = nmpc.dT_rate_max {
                cfg.nmpc.increment_max = v * cfg.nmpc.dt;
            }
            if let Some(v) = nmpc.sqp_max_iterations {
                cfg.sqp.max_iterations = v;
            }
            if let Some(v) = nmpc.sqp_kkt_tolerance {
                cfg.sqp.kkt_tolerance = v;
            }
            if let Some(v) = nmpc.sqp_step_tolerance {
                cfg.sqp.step_tolerance = v;
            }
        }

        if let Some(ms) = &self.msnmpc {
            if let Some(v) = &ms.scenario_payloads {
                cfg.ms.scenario_payloads = v.clone();
            }
            if let Some(n) = ms.N {
                if n != cfg.ms.scenario_payloads.len() {
                    return Err(SimError::Config(format!(
                        "N = {n} does not match the {} scenario payloads",
                        cfg.ms.scenario_payloads.len()
                    )));
                }
            }
            if let Some(v) = ms.c_1 {
                cfg.ms.likelihood_sharpness = v;
            }
            if let Some(v) = ms.mu_floor {
                cfg.ms.probability_floor = v;
            }
            if let Some([p, v, d]) = ms.q_process {
                cfg.ms.ekf_noise.process_position = p;
                cfg.ms.ekf_noise.process_velocity = v;
                cfg.ms.ekf_noise.process_disturbance = d;
            }
            if let Some([p, v]) = ms.r_meas {
                cfg.ms.ekf_noise.measurement_position = p;
                cfg.ms.ekf_noise.measurement_velocity = v;
            }
            if let Some(v) = ms.p0 {
                cfg.ms.ekf_noise.initial_covariance = v;
            }
            if let Some(v) = ms.p0_disturbance {
                cfg.ms.ekf_noise.initial_disturbance_covariance = v;
            }
        }

        if let Some(unc) = &self.uncertainty {
            if let Some(v) = unc.link_mass_wobble {
                cfg.uncertainty.link_mass_wobble = v;
            }
            if let Some(v) = unc.lumped_disturbance {
                cfg.uncertainty.lumped_disturbance = v;
            }
            if let Some(v) = unc.sensor_noise {
                cfg.uncertainty.sensor_noise = v;
            }
            if let Some(v) = unc.mass_ramp {
                cfg.uncertainty.mass_ramp = v;
            }
            if let Some(v) = unc.filter_window {
                cfg.uncertainty.filter_window = v;
            }
            if let Some(v) = unc.force_saturation {
                cfg.uncertainty.force_saturation = Some(v);
            }
        }

        Ok(())
    }
}

/// Initial joint state shared by human and robot: both start on the
/// reference trajectory at t = 0.
pub fn initial_state(cfg: &SimConfig) -> crate::dynamics::JointState {
    let d0 = crate::human::reference_trajectory(&cfg.trajectory, 0.0);
    crate::dynamics::JointState::new(d0.q, d0.qd)
}

/// Zero torque vector sized for the run.
pub fn zero_torque(cfg: &SimConfig) -> DVector<f64> {
    DVector::zeros(cfg.dof)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for dof in [1, 2] {
            let cfg = SimConfig::default_for_dof(dof).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.robot.dof(), dof);
            assert_eq!(cfg.trajectory.dof(), dof);
        }
    }

    #[test]
    fn one_dof_default_has_no_mass_ramp() {
        let cfg = SimConfig::default_for_dof(1).unwrap();
        assert!(!cfg.uncertainty.mass_ramp);
        assert_eq!(cfg.human_mass_start, 60.0);
    }

    #[test]
    fn toml_overrides_apply() {
        let text = r#"
            [straps]
            k_s = 900.0
            K_1 = 0.004

            [nmpc]
            N_p = 4
            N_c = 4
            dT_rate_max = 500.0

            [msnmpc]
            N = 2
            scenario_payloads = [0.0, 2.0]

            [run]
            dof = 2
            duration = 12.0
            controller = "msnmpc"
            payload = 1.5
        "#;
        let cfg = SimConfig::from_toml(text).unwrap();
        assert_eq!(cfg.straps.stiffness, 900.0);
        assert_eq!(cfg.estimator_gains.position, 0.004);
        assert_eq!(cfg.nmpc.prediction_horizon, 4);
        assert_eq!(cfg.nmpc.increment_max, 5.0);
        assert_eq!(cfg.ms.scenario_payloads, vec![0.0, 2.0]);
        assert_eq!(cfg.duration, 12.0);
        assert_eq!(cfg.controller, ControllerKind::Msnmpc);
        assert_eq!(cfg.true_payload, 1.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[nmpc]\nN_q = 3\n";
        assert!(SimConfig::from_toml(text).is_err());
        let text = "[typo_section]\nx = 1\n";
        assert!(SimConfig::from_toml(text).is_err());
    }

    #[test]
    fn scenario_count_mismatch_is_rejected() {
        let text = "[msnmpc]\nN = 4\n";
        assert!(SimConfig::from_toml(text).is_err());
    }

    #[test]
    fn table_defaults_match_expected_values() {
        let cfg = SimConfig::default_for_dof(2).unwrap();
        assert_eq!(cfg.robot.viscous_friction, 0.000899);
        assert_eq!(cfg.robot.coulomb_friction, 0.05048);
        assert_eq!(cfg.straps.stiffness, 937.5);
        assert_eq!(cfg.straps.damping, 93.7);
        assert_eq!(cfg.straps.lever_thigh, 0.28);
        assert_eq!(cfg.straps.lever_shank, 0.16);
        assert_eq!(cfg.estimator_gains.position, 0.005);
        assert_eq!(cfg.estimator_gains.velocity, 0.05);
        assert_eq!(cfg.nmpc.prediction_horizon, 3);
        assert_eq!(cfg.nmpc.control_horizon, 3);
        assert_eq!(cfg.nmpc.velocity_weight, 0.1);
        assert_eq!(cfg.nmpc.increment_weight, 1e-6);
        assert_eq!(cfg.nmpc.dt, 0.01);
        assert_eq!(cfg.nmpc.torque_max, 30.0);
        assert_eq!(cfg.nmpc.increment_max, 10.0);
        assert_eq!(cfg.ms.scenario_payloads, vec![0.0, 1.0, 2.0]);
        assert_eq!(cfg.ms.likelihood_sharpness, 100.0);
        assert_eq!(cfg.ms.probability_floor, 1e-4);
    }
}
