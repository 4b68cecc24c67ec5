//! Non-robust nonlinear MPC over torque increments.
//!
//! The decision variable is the sequence of torque increments over the
//! control horizon. States are predicted by RK4 rollouts of the nominal
//! robot model, the cost penalizes position error, velocity error (weight
//! r_d), and increments (weight r_t), and the constraints bound both the
//! cumulative torque and each per-step increment. Each control step solves
//! the problem with SQP, warm-started from the previous plan shifted by one
//! step, and applies the first increment.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{forward_dynamics_robot, rk4_step, JointState, LimbModel};
use crate::optimizer::{LinearInequalities, NlpProblem, SqpResult, SqpSettings, SqpSolver, SqpStatus};

/// Horizon lengths, cost weights, and input limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcConfig {
    /// Prediction horizon N_p, steps.
    pub prediction_horizon: usize,
    /// Control horizon N_c, steps; torque is held constant afterwards.
    pub control_horizon: usize,
    /// Velocity tracking weight r_d.
    pub velocity_weight: f64,
    /// Control increment weight r_t.
    pub increment_weight: f64,
    /// Control time step, s.
    pub dt: f64,
    /// Symmetric torque limit, N·m.
    pub torque_max: f64,
    /// Symmetric per-step increment limit, N·m.
    pub increment_max: f64,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            prediction_horizon: 3,
            control_horizon: 3,
            velocity_weight: 0.1,
            increment_weight: 1e-6,
            dt: 0.01,
            torque_max: 30.0,
            increment_max: 10.0,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.control_horizon < 1 || self.control_horizon > self.prediction_horizon {
            return Err(format!(
                "require 1 <= N_c <= N_p, got N_c = {}, N_p = {}",
                self.control_horizon, self.prediction_horizon
            ));
        }
        if self.velocity_weight < 0.0 || self.increment_weight < 0.0 {
            return Err("cost weights must be non-negative".into());
        }
        if !(self.dt > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.torque_max > 0.0) || !(self.increment_max > 0.0) {
            return Err("torque and increment limits must be positive".into());
        }
        Ok(())
    }
}

/// A sequence of torque increments over the control horizon
/// (row j = increment at step j, one column per joint).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    increments: DMatrix<f64>,
}

impl ControlPlan {
    pub fn zeros(n_ctrl: usize, dof: usize) -> Self {
        Self { increments: DMatrix::zeros(n_ctrl, dof) }
    }

    pub fn from_increments(increments: DMatrix<f64>) -> Self {
        Self { increments }
    }

    pub fn increments(&self) -> &DMatrix<f64> {
        &self.increments
    }

    pub fn n_ctrl(&self) -> usize {
        self.increments.nrows()
    }

    pub fn dof(&self) -> usize {
        self.increments.ncols()
    }

    /// First increment, the one applied by the receding-horizon step.
    pub fn first(&self) -> DVector<f64> {
        self.increments.row(0).transpose()
    }

    /// Receding-horizon warm start: drop the applied first row, append zeros.
    pub fn shifted(&self) -> Self {
        let (n, dof) = (self.n_ctrl(), self.dof());
        let mut out = DMatrix::zeros(n, dof);
        for j in 1..n {
            for i in 0..dof {
                out[(j - 1, i)] = self.increments[(j, i)];
            }
        }
        Self { increments: out }
    }

    /// Projects the plan onto the constraint set for the given previous
    /// torque: per-step increments within ±increment_max and cumulative
    /// torques within ±torque_max. Used to repair warm starts after blending.
    pub fn clamp_feasible(&mut self, t_prev: &DVector<f64>, cfg: &NmpcConfig) {
        let dof = self.dof();
        let mut cum = DVector::<f64>::zeros(dof);
        for j in 0..self.n_ctrl() {
            for i in 0..dof {
                let mut v = self.increments[(j, i)].clamp(-cfg.increment_max, cfg.increment_max);
                let total = t_prev[i] + cum[i] + v;
                if total > cfg.torque_max {
                    v -= total - cfg.torque_max;
                } else if total < -cfg.torque_max {
                    v += -cfg.torque_max - total;
                }
                self.increments[(j, i)] = v;
                cum[i] += v;
            }
        }
    }

    fn to_flat(&self) -> DVector<f64> {
        let (n, dof) = (self.n_ctrl(), self.dof());
        let mut x = DVector::zeros(n * dof);
        for j in 0..n {
            for i in 0..dof {
                x[j * dof + i] = self.increments[(j, i)];
            }
        }
        x
    }

    fn from_flat(x: &DVector<f64>, n_ctrl: usize, dof: usize) -> Self {
        let mut increments = DMatrix::zeros(n_ctrl, dof);
        for j in 0..n_ctrl {
            for i in 0..dof {
                increments[(j, i)] = x[j * dof + i];
            }
        }
        Self { increments }
    }
}

/// Reference states over the prediction horizon (index 0 = step k+1).
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReference {
    pub q: Vec<DVector<f64>>,
    pub qd: Vec<DVector<f64>>,
}

/// Constant-velocity extrapolation of the estimated human state:
/// q_ref(k+j) = q̂_H + j·dt·q̂̇_H, q̇_ref(k+j) = q̂̇_H.
pub fn build_reference(q_h_hat: &DVector<f64>, qd_h_hat: &DVector<f64>, cfg: &NmpcConfig) -> HorizonReference {
    let mut q = Vec::with_capacity(cfg.prediction_horizon);
    let mut qd = Vec::with_capacity(cfg.prediction_horizon);
    for j in 1..=cfg.prediction_horizon {
        q.push(q_h_hat + qd_h_hat * (j as f64 * cfg.dt));
        qd.push(qd_h_hat.clone());
    }
    HorizonReference { q, qd }
}

/// Torque applied during prediction step j (1-based):
/// T(j) = T_prev + Σ_{i ≤ min(j, N_c)} ΔT_i.
fn horizon_torque(t_prev: &DVector<f64>, plan: &ControlPlan, j: usize) -> DVector<f64> {
    let mut t = t_prev.clone();
    for s in 0..j.min(plan.n_ctrl()) {
        for i in 0..plan.dof() {
            t[i] += plan.increments()[(s, i)];
        }
    }
    t
}

/// RK4 rollout of the model over the prediction horizon. The interaction
/// torque is taken as zero and the lumped disturbance estimate is held
/// constant; both are the controller's internal model, not the plant.
pub fn predict_horizon(
    model: &LimbModel,
    state: &JointState,
    t_prev: &DVector<f64>,
    plan: &ControlPlan,
    disturbance: &DVector<f64>,
    cfg: &NmpcConfig,
) -> Result<Vec<JointState>, crate::dynamics::IntegrationError> {
    let dof = model.dof();
    let t_int = DVector::zeros(dof);
    let mut states = Vec::with_capacity(cfg.prediction_horizon);
    let mut x = state.to_vector();
    for j in 1..=cfg.prediction_horizon {
        let torque = horizon_torque(t_prev, plan, j);
        x = rk4_step(
            |_, x| {
                let s = JointState::from_vector(x);
                let qdd = forward_dynamics_robot(model, &s, &torque, &t_int, disturbance);
                let mut dx = DVector::zeros(2 * dof);
                dx.rows_mut(0, dof).copy_from(&s.qd);
                dx.rows_mut(dof, dof).copy_from(&qdd);
                dx
            },
            0.0,
            &x,
            cfg.dt,
        )?;
        states.push(JointState::from_vector(&x));
    }
    Ok(states)
}

/// Stage cost over the horizon:
/// J = Σ_j ‖q̂ − q_ref‖² + r_d Σ_j ‖q̇̂ − q̇_ref‖² + r_t Σ_j ‖ΔT_j‖².
pub fn nmpc_cost(
    predicted: &[JointState],
    reference: &HorizonReference,
    plan: &ControlPlan,
    cfg: &NmpcConfig,
) -> f64 {
    assert_eq!(predicted.len(), reference.q.len(), "prediction/reference length mismatch");
    let mut j_pos = 0.0;
    let mut j_vel = 0.0;
    for (state, (q_ref, qd_ref)) in predicted.iter().zip(reference.q.iter().zip(&reference.qd)) {
        j_pos += (&state.q - q_ref).norm_squared();
        j_vel += (&state.qd - qd_ref).norm_squared();
    }
    let j_inc: f64 = plan.increments().iter().map(|v| v * v).sum();
    j_pos + cfg.velocity_weight * j_vel + cfg.increment_weight * j_inc
}

/// Cost of a candidate plan including the rollout; non-finite rollouts get
/// an infinite sentinel so the merit line search rejects them.
fn rollout_cost(
    model: &LimbModel,
    state: &JointState,
    t_prev: &DVector<f64>,
    plan: &ControlPlan,
    disturbance: &DVector<f64>,
    reference: &HorizonReference,
    cfg: &NmpcConfig,
) -> f64 {
    match predict_horizon(model, state, t_prev, plan, disturbance, cfg) {
        Ok(predicted) => nmpc_cost(&predicted, reference, plan, cfg),
        Err(_) => f64::INFINITY,
    }
}

/// Builds the cumulative torque constraints ±(T_prev + Σ ΔT) ≤ T_max
/// as linear inequalities in the flattened plan.
fn torque_constraints(t_prev: &DVector<f64>, dof: usize, cfg: &NmpcConfig) -> LinearInequalities {
    let n_ctrl = cfg.control_horizon;
    let n = n_ctrl * dof;
    let m = 2 * n_ctrl * dof;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut row = 0;
    for j in 0..n_ctrl {
        for i in 0..dof {
            // +cumulative: Σ_{s<=j} x[s,i] <= T_max - T_prev[i]
            for s in 0..=j {
                a[(row, s * dof + i)] = 1.0;
            }
            b[row] = cfg.torque_max - t_prev[i];
            row += 1;
            // -cumulative: -Σ_{s<=j} x[s,i] <= T_max + T_prev[i]
            for s in 0..=j {
                a[(row, s * dof + i)] = -1.0;
            }
            b[row] = cfg.torque_max + t_prev[i];
            row += 1;
        }
    }
    LinearInequalities { a, b }
}

/// Output of one receding-horizon step.
#[derive(Debug, Clone)]
pub struct NmpcStepResult {
    /// Torque to apply over the next interval.
    pub torque: DVector<f64>,
    /// The optimized plan (kept for the next warm start).
    pub plan: ControlPlan,
    pub sqp: SqpResult,
}

/// One receding-horizon step: build the reference, solve for the increment
/// plan, and apply the first increment. The warm start is the previous plan
/// shifted one step (projected back onto the constraints, which matters when
/// the previously applied torque was a blend across scenario plans).
#[allow(clippy::too_many_arguments)]
pub fn nmpc_step(
    state: &JointState,
    q_h_hat: &DVector<f64>,
    qd_h_hat: &DVector<f64>,
    t_prev: &DVector<f64>,
    model: &LimbModel,
    disturbance: &DVector<f64>,
    cfg: &NmpcConfig,
    solver: &mut SqpSolver,
    warm_start: Option<&ControlPlan>,
) -> NmpcStepResult {
    let dof = model.dof();
    assert!(t_prev.amax() <= cfg.torque_max + 1e-9, "previous torque out of range");
    let reference = build_reference(q_h_hat, qd_h_hat, cfg);

    let mut start = match warm_start {
        Some(prev) => prev.shifted(),
        None => ControlPlan::zeros(cfg.control_horizon, dof),
    };
    start.clamp_feasible(t_prev, cfg);

    let n = cfg.control_horizon * dof;
    let problem = NlpProblem {
        objective: Box::new(|x: &DVector<f64>| {
            let plan = ControlPlan::from_flat(x, cfg.control_horizon, dof);
            rollout_cost(model, state, t_prev, &plan, disturbance, &reference, cfg)
        }),
        gradient: None,
        inequalities: torque_constraints(t_prev, dof, cfg),
        lower: DVector::from_element(n, -cfg.increment_max),
        upper: DVector::from_element(n, cfg.increment_max),
    };

    let result = solver.solve(&problem, &start.to_flat());
    let plan = ControlPlan::from_flat(&result.x, cfg.control_horizon, dof);
    let mut torque = t_prev + plan.first();
    // the solution satisfies the limits already; exact clamp removes dust
    for i in 0..dof {
        torque[i] = torque[i].clamp(-cfg.torque_max, cfg.torque_max);
    }
    NmpcStepResult { torque, plan, sqp: result }
}

/// Stateful non-robust NMPC controller: owns the nominal model, the solver
/// workspace, and the warm-start plan. Prediction uses zero disturbance.
#[derive(Debug, Clone)]
pub struct NmpcController {
    pub model: LimbModel,
    pub cfg: NmpcConfig,
    solver: SqpSolver,
    prev_plan: Option<ControlPlan>,
    /// Solves that ended at the iteration limit (best iterate applied).
    pub warning_count: usize,
}

impl NmpcController {
    pub fn new(model: LimbModel, cfg: NmpcConfig, sqp: SqpSettings) -> Self {
        Self { model, cfg, solver: SqpSolver::new(sqp), prev_plan: None, warning_count: 0 }
    }

    pub fn reset(&mut self) {
        self.prev_plan = None;
    }

    pub fn step(
        &mut self,
        measured: &JointState,
        q_h_hat: &DVector<f64>,
        qd_h_hat: &DVector<f64>,
        t_prev: &DVector<f64>,
    ) -> NmpcStepResult {
        let zero_disturbance = DVector::zeros(self.model.dof());
        let out = nmpc_step(
            measured,
            q_h_hat,
            qd_h_hat,
            t_prev,
            &self.model,
            &zero_disturbance,
            &self.cfg,
            &mut self.solver,
            self.prev_plan.as_ref(),
        );
        if out.sqp.status != SqpStatus::Converged {
            self.warning_count += 1;
        }
        self.prev_plan = Some(out.plan.clone());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{compute_terms, LinkParams};
    use approx::assert_abs_diff_eq;

    fn unit_inertia_model() -> LimbModel {
        // M = m·lc² + I = 1, no gravity, no friction: q̈ = T exactly
        LimbModel::new(vec![LinkParams::new(1.0, 1.0, 1.0, 0.0).unwrap()], 0.0, 0.0, 0.0, 0.0).unwrap()
    }

    fn shank_model() -> LimbModel {
        LimbModel::new(vec![LinkParams::new(2.0, 0.4, 0.18, 0.03).unwrap()], 0.0, 0.0, 0.0, 9.81).unwrap()
    }

    #[test]
    fn reference_extrapolates_at_constant_velocity() {
        let cfg = NmpcConfig::default();
        let q = DVector::from_element(1, 0.1);
        let qd = DVector::from_element(1, 1.0);
        let r = build_reference(&q, &qd, &cfg);
        assert_abs_diff_eq!(r.q[2][0], 0.13, epsilon = 1e-12);
        for j in 0..cfg.prediction_horizon {
            assert_eq!(r.qd[j], qd);
        }

        let still = build_reference(&q, &DVector::zeros(1), &cfg);
        for j in 0..cfg.prediction_horizon {
            assert_eq!(still.q[j], q);
        }
    }

    #[test]
    fn equilibrium_prediction_is_stationary() {
        let model = shank_model();
        let cfg = NmpcConfig::default();
        let state = JointState::new(DVector::from_element(1, 0.4), DVector::zeros(1));
        let g = compute_terms(&model, &state).gravity;
        let plan = ControlPlan::zeros(cfg.control_horizon, 1);
        let zero = DVector::zeros(1);
        let predicted = predict_horizon(&model, &state, &g, &plan, &zero, &cfg).unwrap();
        for s in &predicted {
            assert_abs_diff_eq!(s.q[0], 0.4, epsilon = 1e-12);
            assert_abs_diff_eq!(s.qd[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rollout_matches_manual_stepping() {
        let model = shank_model();
        let cfg = NmpcConfig::default();
        let state = JointState::new(DVector::from_element(1, 0.2), DVector::from_element(1, -0.5));
        let plan = ControlPlan::from_increments(DMatrix::from_row_slice(3, 1, &[1.0, -0.5, 0.25]));
        let t_prev = DVector::from_element(1, 0.3);
        let zero = DVector::zeros(1);
        let predicted = predict_horizon(&model, &state, &t_prev, &plan, &zero, &cfg).unwrap();

        let mut x = state.to_vector();
        let cum = [1.0, 0.5, 0.75];
        for (j, c) in cum.iter().enumerate() {
            let torque = DVector::from_element(1, 0.3 + c);
            x = rk4_step(
                |_, x| {
                    let s = JointState::from_vector(x);
                    let qdd = forward_dynamics_robot(&model, &s, &torque, &zero, &zero);
                    DVector::from_row_slice(&[s.qd[0], qdd[0]])
                },
                0.0,
                &x,
                cfg.dt,
            )
            .unwrap();
            assert_abs_diff_eq!(predicted[j].q[0], x[0], epsilon = 1e-14);
            assert_abs_diff_eq!(predicted[j].qd[0], x[1], epsilon = 1e-14);
        }

        // N_p = N_c: final horizon torque is T_prev plus the full sum
        let t_final = horizon_torque(&t_prev, &plan, 3);
        assert_abs_diff_eq!(t_final[0], 0.3 + 0.75, epsilon = 1e-14);
    }

    #[test]
    fn cost_components_evaluate_directly() {
        let cfg = NmpcConfig { prediction_horizon: 1, control_horizon: 1, ..Default::default() };
        let reference = HorizonReference {
            q: vec![DVector::from_row_slice(&[0.0, 0.0])],
            qd: vec![DVector::from_row_slice(&[0.0, 0.0])],
        };

        // perfect tracking, zero plan
        let predicted = vec![JointState::zeros(2)];
        let plan = ControlPlan::zeros(1, 2);
        assert_eq!(nmpc_cost(&predicted, &reference, &plan, &cfg), 0.0);

        // position error only
        let predicted = vec![JointState::new(DVector::from_row_slice(&[0.1, 0.0]), DVector::zeros(2))];
        assert_abs_diff_eq!(nmpc_cost(&predicted, &reference, &plan, &cfg), 0.01, epsilon = 1e-15);

        // unit increment adds exactly r_t
        let without = nmpc_cost(&predicted, &reference, &ControlPlan::zeros(1, 2), &cfg);
        let plan = ControlPlan::from_increments(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(nmpc_cost(&predicted, &reference, &plan, &cfg), without + 1e-6);
    }

    #[test]
    fn stationary_optimum_keeps_increments_near_zero() {
        let model = shank_model();
        let cfg = NmpcConfig::default();
        let state = JointState::new(DVector::from_element(1, 0.3), DVector::zeros(1));
        let g = compute_terms(&model, &state).gravity;
        let mut solver = SqpSolver::new(SqpSettings::default());
        let out = nmpc_step(
            &state,
            &state.q,
            &DVector::zeros(1),
            &g,
            &model,
            &DVector::zeros(1),
            &cfg,
            &mut solver,
            None,
        );
        assert!(out.plan.first().amax() <= 1e-3, "|ΔT1| = {}", out.plan.first().amax());

        // the returned cost is a global minimum: no grid point beats it
        let reference = build_reference(&state.q, &DVector::zeros(1), &cfg);
        let zero = DVector::zeros(1);
        let j_opt = rollout_cost(&model, &state, &g, &out.plan, &zero, &reference, &cfg);
        let mut j_grid = f64::INFINITY;
        for a in -5..=5 {
            for b in -5..=5 {
                for c in -5..=5 {
                    let plan = ControlPlan::from_increments(DMatrix::from_row_slice(
                        3,
                        1,
                        &[a as f64 * 0.001, b as f64 * 0.001, c as f64 * 0.001],
                    ));
                    j_grid = j_grid.min(rollout_cost(&model, &state, &g, &plan, &zero, &reference, &cfg));
                }
            }
        }
        assert!(j_opt <= j_grid + 1e-12);
    }

    #[test]
    fn torque_limit_binds_exactly() {
        let model = shank_model();
        let cfg = NmpcConfig::default();
        let state = JointState::zeros(1);
        let t_prev = DVector::from_element(1, 25.0);
        // a far-away reference demands more torque than the limit allows
        let mut solver = SqpSolver::new(SqpSettings::default());
        let out = nmpc_step(
            &state,
            &DVector::from_element(1, 3.0),
            &DVector::from_element(1, 10.0),
            &t_prev,
            &model,
            &DVector::zeros(1),
            &cfg,
            &mut solver,
            None,
        );
        assert_abs_diff_eq!(out.torque[0], 30.0, epsilon = 1e-6);
    }

    #[test]
    fn matches_exhaustive_grid_search_on_linear_plant() {
        // unit inertia, no gravity: the rollout is linear in the plan and the
        // cost is a strictly convex quadratic, so the grid optimum brackets
        // the true one
        let model = unit_inertia_model();
        let cfg = NmpcConfig {
            prediction_horizon: 3,
            control_horizon: 3,
            velocity_weight: 0.1,
            increment_weight: 1e-3,
            dt: 0.1,
            torque_max: 30.0,
            increment_max: 0.25,
        };
        let state = JointState::zeros(1);
        let q_target = DVector::from_element(1, 0.2);
        let qd_target = DVector::zeros(1);
        let t_prev = DVector::zeros(1);
        let zero = DVector::zeros(1);

        let mut solver = SqpSolver::new(SqpSettings::default());
        let out = nmpc_step(&state, &q_target, &qd_target, &t_prev, &model, &zero, &cfg, &mut solver, None);

        let reference = build_reference(&q_target, &qd_target, &cfg);
        let j_opt = rollout_cost(&model, &state, &t_prev, &out.plan, &zero, &reference, &cfg);

        let res = 0.01;
        let steps = (cfg.increment_max / res).round() as i64;
        let mut best = (f64::INFINITY, [0.0; 3]);
        for a in -steps..=steps {
            for b in -steps..=steps {
                for c in -steps..=steps {
                    let inc = [a as f64 * res, b as f64 * res, c as f64 * res];
                    let plan = ControlPlan::from_increments(DMatrix::from_row_slice(3, 1, &inc));
                    let j = rollout_cost(&model, &state, &t_prev, &plan, &zero, &reference, &cfg);
                    if j < best.0 {
                        best = (j, inc);
                    }
                }
            }
        }

        assert!(j_opt <= best.0 + 1e-9, "SQP cost {j_opt} worse than grid {}", best.0);
        for i in 0..3 {
            assert!(
                (out.plan.increments()[(i, 0)] - best.1[i]).abs() <= res + 1e-6,
                "increment {i}: sqp {} grid {}",
                out.plan.increments()[(i, 0)],
                best.1[i]
            );
        }
    }

    #[test]
    fn closed_loop_regulation_settles() {
        // perfect model, constant reference: tracking error converges below
        // 1e-3 rad and stays there. The short horizon with the velocity
        // penalty gives a slow approach (time constant several seconds), so
        // start near the equilibrium and give the loop time.
        let model = shank_model();
        let cfg = NmpcConfig::default();
        let mut ctrl = NmpcController::new(model.clone(), cfg, SqpSettings::default());
        let q_star = DVector::from_element(1, 0.35);
        let qd_star = DVector::zeros(1);
        let mut state = JointState::new(DVector::from_element(1, 0.33), DVector::zeros(1));
        let mut t_prev = compute_terms(&model, &state).gravity;
        let zero = DVector::zeros(1);
        let mut worst_tail_error = 0.0_f64;
        let steps = 3500;
        for k in 0..steps {
            let out = ctrl.step(&state, &q_star, &qd_star, &t_prev);
            t_prev = out.torque.clone();
            let x = rk4_step(
                |_, x| {
                    let s = JointState::from_vector(x);
                    let qdd = forward_dynamics_robot(&model, &s, &out.torque, &zero, &zero);
                    DVector::from_row_slice(&[s.qd[0], qdd[0]])
                },
                0.0,
                &state.to_vector(),
                cfg.dt,
            )
            .unwrap();
            state = JointState::from_vector(&x);
            if k >= steps - 500 {
                worst_tail_error = worst_tail_error.max((state.q[0] - q_star[0]).abs());
            }
            assert!(t_prev.amax() <= cfg.torque_max + 1e-9);
        }
        assert!(worst_tail_error <= 1e-3, "tail error {worst_tail_error}");
    }

    #[test]
    fn warm_start_equivalence_at_convergence() {
        let model = shank_model();
        let cfg = NmpcConfig::default();
        let state = JointState::new(DVector::from_element(1, 0.349), DVector::from_element(1, 0.01));
        let g = compute_terms(&model, &state).gravity;
        let q_hat = DVector::from_element(1, 0.35);
        let qd_hat = DVector::zeros(1);
        let zero = DVector::zeros(1);

        let warm_plan = ControlPlan::from_increments(DMatrix::from_row_slice(3, 1, &[0.02, 0.01, 0.0]));
        let mut s1 = SqpSolver::new(SqpSettings::default());
        let with_warm =
            nmpc_step(&state, &q_hat, &qd_hat, &g, &model, &zero, &cfg, &mut s1, Some(&warm_plan));
        let mut s2 = SqpSolver::new(SqpSettings::default());
        let cold = nmpc_step(&state, &q_hat, &qd_hat, &g, &model, &zero, &cfg, &mut s2, None);

        assert!((with_warm.sqp.objective - cold.sqp.objective).abs() <= s1.settings.kkt_tolerance);
    }

    #[test]
    fn plan_projection_restores_feasibility() {
        let cfg = NmpcConfig::default();
        let mut plan = ControlPlan::from_increments(DMatrix::from_row_slice(3, 1, &[12.0, 9.0, -40.0]));
        let t_prev = DVector::from_element(1, 28.0);
        plan.clamp_feasible(&t_prev, &cfg);
        let mut cum = 0.0;
        for j in 0..3 {
            let v = plan.increments()[(j, 0)];
            assert!(v.abs() <= cfg.increment_max + 1e-12);
            cum += v;
            assert!((28.0 + cum).abs() <= cfg.torque_max + 1e-12);
        }
    }
}
