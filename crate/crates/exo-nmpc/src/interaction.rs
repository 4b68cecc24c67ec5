//! Strap coupling between the human leg and the exoskeleton.
//!
//! The two straps (thigh and shank) are modeled as spring-dampers acting on
//! the angular gaps between human and robot joints. The thigh strap force
//! depends on the hip gap only; the shank strap force aggregates hip and
//! knee gaps weighted by the strap lever arms. In 1-DOF mode only the shank
//! strap exists.
//!
//! The robot controller never sees the human state directly; it estimates it
//! from the measured strap forces via fixed gains.

use nalgebra::DVector;

use crate::dynamics::JointState;

/// Strap spring-damper parameters and lever arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrapConfig {
    /// Strap stiffness, N/m.
    pub stiffness: f64,
    /// Strap damping, N·s/m.
    pub damping: f64,
    /// Thigh strap distance from the hip joint, m.
    pub lever_thigh: f64,
    /// Shank strap distance from the knee joint, m.
    pub lever_shank: f64,
}

impl Default for StrapConfig {
    fn default() -> Self {
        Self { stiffness: 937.5, damping: 93.7, lever_thigh: 0.28, lever_shank: 0.16 }
    }
}

impl StrapConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.stiffness > 0.0 && self.damping > 0.0 && self.lever_thigh > 0.0 && self.lever_shank > 0.0 {
            Ok(())
        } else {
            Err("strap parameters must be strictly positive".into())
        }
    }
}

/// Forces transmitted by the thigh and shank straps, N.
/// In 1-DOF mode `thigh` is zero and only `shank` is physical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionForces {
    pub thigh: f64,
    pub shank: f64,
}

impl InteractionForces {
    pub const ZERO: Self = Self { thigh: 0.0, shank: 0.0 };

    pub fn as_vector(&self, dof: usize) -> DVector<f64> {
        match dof {
            1 => DVector::from_element(1, self.shank),
            2 => DVector::from_row_slice(&[self.thigh, self.shank]),
            _ => panic!("dof must be 1 or 2"),
        }
    }
}

/// Diagonal human-state estimator gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorGains {
    /// Position gain, rad/N (diagonal).
    pub position: f64,
    /// Velocity gain, rad/(N·s) (diagonal).
    pub velocity: f64,
}

impl Default for EstimatorGains {
    fn default() -> Self {
        Self { position: 0.005, velocity: 0.05 }
    }
}

/// Strap forces from the angular gaps between human and robot.
///
/// 2-DOF:
///   F_thigh = k_s L_1 Δq_hip + c_s L_1 Δq̇_hip
///   F_shank = k_s (L_1 Δq_hip + L_2 Δq_knee) + c_s (L_1 Δq̇_hip + L_2 Δq̇_knee)
///
/// 1-DOF (pinned shank, single strap at L_2):
///   F_shank = k_s L_2 Δq + c_s L_2 Δq̇
pub fn strap_forces(cfg: &StrapConfig, human: &JointState, robot: &JointState) -> InteractionForces {
    assert_eq!(human.dof(), robot.dof(), "human and robot dof must match");
    let (ks, cs) = (cfg.stiffness, cfg.damping);
    match human.dof() {
        1 => {
            let dq = human.q[0] - robot.q[0];
            let dqd = human.qd[0] - robot.qd[0];
            InteractionForces { thigh: 0.0, shank: ks * cfg.lever_shank * dq + cs * cfg.lever_shank * dqd }
        }
        2 => {
            let dq_hip = human.q[0] - robot.q[0];
            let dq_knee = human.q[1] - robot.q[1];
            let dqd_hip = human.qd[0] - robot.qd[0];
            let dqd_knee = human.qd[1] - robot.qd[1];
            let thigh = ks * cfg.lever_thigh * dq_hip + cs * cfg.lever_thigh * dqd_hip;
            let shank = ks * (cfg.lever_thigh * dq_hip + cfg.lever_shank * dq_knee)
                + cs * (cfg.lever_thigh * dqd_hip + cfg.lever_shank * dqd_knee);
            InteractionForces { thigh, shank }
        }
        _ => panic!("dof must be 1 or 2"),
    }
}

/// Maps strap forces to joint torques through the strap lever arms:
/// T_hip = L_1 F_thigh, T_knee = L_2 F_shank (1-DOF: T = L_2 F_shank).
pub fn interaction_torques(cfg: &StrapConfig, forces: &InteractionForces, dof: usize) -> DVector<f64> {
    match dof {
        1 => DVector::from_element(1, cfg.lever_shank * forces.shank),
        2 => DVector::from_row_slice(&[cfg.lever_thigh * forces.thigh, cfg.lever_shank * forces.shank]),
        _ => panic!("dof must be 1 or 2"),
    }
}

/// Estimates the human joint state from the robot state and measured strap
/// forces: q̂_H = q_R + K_1 F, q̂̇_H = q̇_R + K_2 F.
pub fn estimate_human_state(
    robot: &JointState,
    forces: &InteractionForces,
    gains: &EstimatorGains,
) -> (DVector<f64>, DVector<f64>) {
    let f = forces.as_vector(robot.dof());
    let q_hat = &robot.q + &f * gains.position;
    let qd_hat = &robot.qd + &f * gains.velocity;
    (q_hat, qd_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn state2(q1: f64, q2: f64, qd1: f64, qd2: f64) -> JointState {
        JointState::new(DVector::from_row_slice(&[q1, q2]), DVector::from_row_slice(&[qd1, qd2]))
    }

    #[test]
    fn equal_states_give_zero_forces() {
        let cfg = StrapConfig::default();
        let s = state2(0.3, -0.2, 1.0, 0.5);
        let f = strap_forces(&cfg, &s, &s);
        assert_eq!(f, InteractionForces::ZERO);
    }

    #[test]
    fn hip_gap_only() {
        let cfg = StrapConfig::default();
        let human = state2(0.1, 0.0, 0.0, 0.0);
        let robot = state2(0.0, 0.0, 0.0, 0.0);
        let f = strap_forces(&cfg, &human, &robot);
        assert_abs_diff_eq!(f.thigh, 26.25, epsilon = 1e-12);
        // the shank strap also feels the hip gap through L_1
        assert_abs_diff_eq!(f.shank, 26.25, epsilon = 1e-12);
    }

    #[test]
    fn knee_gap_only() {
        let cfg = StrapConfig::default();
        let human = state2(0.0, 0.05, 0.0, 0.0);
        let robot = state2(0.0, 0.0, 0.0, 0.0);
        let f = strap_forces(&cfg, &human, &robot);
        assert_abs_diff_eq!(f.thigh, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.shank, 7.5, epsilon = 1e-12);
    }

    #[test]
    fn torque_mapping_uses_lever_arms() {
        let cfg = StrapConfig::default();
        let t = interaction_torques(&cfg, &InteractionForces::ZERO, 2);
        assert_eq!(t, DVector::zeros(2));

        let t = interaction_torques(&cfg, &InteractionForces { thigh: 26.25, shank: 0.0 }, 2);
        assert_abs_diff_eq!(t[0], 7.35, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 0.0, epsilon = 1e-12);

        let t = interaction_torques(&cfg, &InteractionForces { thigh: 0.0, shank: 7.5 }, 2);
        assert_abs_diff_eq!(t[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn estimator_returns_robot_state_for_zero_force() {
        let robot = state2(0.2, -0.1, 0.4, 0.0);
        let gains = EstimatorGains::default();
        let (q, qd) = estimate_human_state(&robot, &InteractionForces::ZERO, &gains);
        assert_eq!(q, robot.q);
        assert_eq!(qd, robot.qd);
    }

    #[test]
    fn estimator_offsets_match_gains() {
        let robot = state2(0.0, 0.0, 0.0, 0.0);
        let gains = EstimatorGains::default();

        let (q, _) = estimate_human_state(&robot, &InteractionForces { thigh: 10.0, shank: 0.0 }, &gains);
        assert_abs_diff_eq!(q[0], 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.0, epsilon = 1e-12);

        let (_, qd) = estimate_human_state(&robot, &InteractionForces { thigh: 0.0, shank: -4.0 }, &gains);
        assert_abs_diff_eq!(qd[1], -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(qd[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn one_dof_uses_shank_strap_only() {
        let cfg = StrapConfig::default();
        let human = JointState::new(DVector::from_element(1, 0.05), DVector::from_element(1, 0.1));
        let robot = JointState::zeros(1);
        let f = strap_forces(&cfg, &human, &robot);
        assert_abs_diff_eq!(f.shank, 937.5 * 0.16 * 0.05 + 93.7 * 0.16 * 0.1, epsilon = 1e-12);
        assert_eq!(f.thigh, 0.0);
        let t = interaction_torques(&cfg, &f, 1);
        assert_abs_diff_eq!(t[0], 0.16 * f.shank, epsilon = 1e-12);
    }

    #[test]
    fn hip_channel_exactly_invertible() {
        // With K_1 = diag(1/(k_s L_1), 1/(k_s L_2)) and zero velocity gaps the
        // hip estimate recovers the true human hip angle.
        let cfg = StrapConfig::default();
        let human = state2(0.31, 0.12, 0.0, 0.0);
        let robot = state2(0.27, 0.05, 0.0, 0.0);
        let f = strap_forces(&cfg, &human, &robot);
        let q_hat_hip = robot.q[0] + f.thigh / (cfg.stiffness * cfg.lever_thigh);
        assert_abs_diff_eq!(q_hat_hip, human.q[0], epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn strap_forces_are_linear_in_the_gap(
            dq1 in -0.5f64..0.5, dq2 in -0.5f64..0.5,
            dqd1 in -2.0f64..2.0, dqd2 in -2.0f64..2.0,
        ) {
            let cfg = StrapConfig::default();
            let robot = state2(0.1, -0.2, 0.3, 0.4);
            let human = state2(0.1 + dq1, -0.2 + dq2, 0.3 + dqd1, 0.4 + dqd2);
            let doubled = state2(0.1 + 2.0 * dq1, -0.2 + 2.0 * dq2, 0.3 + 2.0 * dqd1, 0.4 + 2.0 * dqd2);
            let f1 = strap_forces(&cfg, &human, &robot);
            let f2 = strap_forces(&cfg, &doubled, &robot);
            prop_assert!((f2.thigh - 2.0 * f1.thigh).abs() < 1e-9);
            prop_assert!((f2.shank - 2.0 * f1.shank).abs() < 1e-9);
        }

        #[test]
        fn leading_human_gives_positive_forces(
            dq1 in 1e-6f64..0.5, dq2 in 1e-6f64..0.5,
        ) {
            let cfg = StrapConfig::default();
            let robot = state2(0.0, 0.0, 0.0, 0.0);
            let human = state2(dq1, dq2, 0.0, 0.0);
            let f = strap_forces(&cfg, &human, &robot);
            prop_assert!(f.thigh > 0.0);
            prop_assert!(f.shank > 0.0);
        }
    }
}
