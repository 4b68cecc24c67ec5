//! Multi-stage robust NMPC over a payload scenario bank.
//!
//! Each scenario carries a robot model with one hypothesized payload and an
//! extended Kalman filter that tracks the robot state augmented with a
//! per-joint lumped-disturbance random walk. Scenario probabilities are
//! updated from the EKF innovations and innovation covariances, floored, and
//! renormalized. Every control step solves one independent NMPC problem per
//! scenario (optionally in parallel) and applies the probability-weighted
//! blend of the first increments.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{forward_dynamics_robot, rk4_step, JointState, LimbModel};
use crate::nmpc::{nmpc_step, ControlPlan, NmpcConfig};
use crate::optimizer::{SqpSettings, SqpSolver, SqpStatus};

/// EKF process/measurement noise and initial covariance (diagonal blocks for
/// position, velocity, and the disturbance random walk).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfNoise {
    pub process_position: f64,
    pub process_velocity: f64,
    pub process_disturbance: f64,
    pub measurement_position: f64,
    pub measurement_velocity: f64,
    pub initial_covariance: f64,
    pub initial_disturbance_covariance: f64,
}

impl Default for EkfNoise {
    fn default() -> Self {
        Self {
            process_position: 1e-6,
            process_velocity: 1e-4,
            process_disturbance: 1e-2,
            measurement_position: 1e-6,
            measurement_velocity: 1e-4,
            initial_covariance: 1e-2,
            initial_disturbance_covariance: 1e-2,
        }
    }
}

impl EkfNoise {
    /// Freezes the disturbance channel at zero (no process noise, no initial
    /// uncertainty), which reduces the filter to plain state estimation.
    pub fn without_disturbance_estimation(mut self) -> Self {
        self.process_disturbance = 0.0;
        self.initial_disturbance_covariance = 0.0;
        self
    }
}

/// EKF over the augmented state (q, q̇, D̂) with measured output (q, q̇).
#[derive(Debug, Clone)]
pub struct EkfState {
    /// Augmented state estimate, length 3·dof.
    pub x: DVector<f64>,
    /// Covariance, (3·dof)².
    pub p: DMatrix<f64>,
    process_noise: DMatrix<f64>,
    measurement_noise: DMatrix<f64>,
    /// Times the covariance lost positive definiteness and was floored.
    pub floor_events: usize,
}

const JACOBIAN_STEP: f64 = 1e-6;
const COVARIANCE_FLOOR: f64 = 1e-10;

impl EkfState {
    pub fn new(initial: &JointState, noise: &EkfNoise) -> Self {
        let dof = initial.dof();
        let n = 3 * dof;
        let mut x = DVector::zeros(n);
        x.rows_mut(0, dof).copy_from(&initial.q);
        x.rows_mut(dof, dof).copy_from(&initial.qd);

        let mut q = DMatrix::zeros(n, n);
        let mut p = DMatrix::zeros(n, n);
        for i in 0..dof {
            q[(i, i)] = noise.process_position;
            q[(dof + i, dof + i)] = noise.process_velocity;
            q[(2 * dof + i, 2 * dof + i)] = noise.process_disturbance;
            p[(i, i)] = noise.initial_covariance;
            p[(dof + i, dof + i)] = noise.initial_covariance;
            p[(2 * dof + i, 2 * dof + i)] = noise.initial_disturbance_covariance;
        }
        let mut r = DMatrix::zeros(2 * dof, 2 * dof);
        for i in 0..dof {
            r[(i, i)] = noise.measurement_position;
            r[(dof + i, dof + i)] = noise.measurement_velocity;
        }
        Self { x, p, process_noise: q, measurement_noise: r, floor_events: 0 }
    }

    pub fn dof(&self) -> usize {
        self.x.len() / 3
    }

    /// Current lumped-disturbance estimate, length dof.
    pub fn disturbance(&self) -> DVector<f64> {
        let dof = self.dof();
        self.x.rows(2 * dof, dof).into_owned()
    }

    pub fn estimated_state(&self) -> JointState {
        let dof = self.dof();
        JointState::new(self.x.rows(0, dof).into_owned(), self.x.rows(dof, dof).into_owned())
    }

    /// One predict/update cycle against the measured output y = (q, q̇).
    /// Returns the innovation and the innovation covariance S̄ = H P⁻ Hᵀ + R.
    pub fn step(
        &mut self,
        model: &LimbModel,
        applied_torque: &DVector<f64>,
        y: &DVector<f64>,
        dt: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let dof = self.dof();
        let n = 3 * dof;
        assert_eq!(y.len(), 2 * dof, "measurement dimension must be 2·dof");
        assert_eq!(applied_torque.len(), dof, "torque dimension must be dof");

        // predict through the augmented dynamics (disturbance random walk)
        let predict = |z: &DVector<f64>| -> DVector<f64> {
            rk4_step(
                |_, z| augmented_derivative(model, z, applied_torque),
                0.0,
                z,
                dt,
            )
            .unwrap_or_else(|_| z.clone())
        };
        let x_pred = predict(&self.x);

        // Jacobian of the step map by central finite differences
        let mut jac = DMatrix::zeros(n, n);
        let mut z = self.x.clone();
        for j in 0..n {
            let zj = z[j];
            z[j] = zj + JACOBIAN_STEP;
            let plus = predict(&z);
            z[j] = zj - JACOBIAN_STEP;
            let minus = predict(&z);
            z[j] = zj;
            let col = (plus - minus) / (2.0 * JACOBIAN_STEP);
            jac.column_mut(j).copy_from(&col);
        }

        let mut p_pred = &jac * &self.p * jac.transpose() + &self.process_noise;
        symmetrize(&mut p_pred);

        // measurement model is linear: y = (q, q̇) = H x with H = [I 0]
        let m = 2 * dof;
        let y_pred = x_pred.rows(0, m).into_owned();
        let innovation = y - &y_pred;
        let mut s_bar = p_pred.view((0, 0), (m, m)).into_owned() + &self.measurement_noise;
        symmetrize(&mut s_bar);

        let s_chol = s_bar
            .clone()
            .cholesky()
            .unwrap_or_else(|| floor_spd(&mut s_bar, &mut self.floor_events));
        // K = P⁻ Hᵀ S̄⁻¹, with P⁻ Hᵀ the first m columns of P⁻
        let ph_t = p_pred.view((0, 0), (n, m)).into_owned();
        let gain = s_chol.solve(&ph_t.transpose()).transpose();

        self.x = &x_pred + &gain * &innovation;

        // Joseph form keeps the update symmetric and non-negative
        let mut i_kh = DMatrix::identity(n, n);
        for r in 0..n {
            for c in 0..m {
                i_kh[(r, c)] -= gain[(r, c)];
            }
        }
        let mut p_new = &i_kh * &p_pred * i_kh.transpose()
            + &gain * &self.measurement_noise * gain.transpose();
        symmetrize(&mut p_new);
        if p_new.clone().cholesky().is_none() {
            floor_spd(&mut p_new, &mut self.floor_events);
        }
        self.p = p_new;

        (innovation, s_bar)
    }
}

/// Derivative of the augmented state (q, q̇, d): the disturbance is a random
/// walk (zero drift) entering the robot dynamics as D, with no interaction
/// torque in the controller-side model.
fn augmented_derivative(model: &LimbModel, z: &DVector<f64>, torque: &DVector<f64>) -> DVector<f64> {
    let dof = model.dof();
    let state = JointState::new(z.rows(0, dof).into_owned(), z.rows(dof, dof).into_owned());
    let disturbance = z.rows(2 * dof, dof).into_owned();
    let t_int = DVector::zeros(dof);
    let qdd = forward_dynamics_robot(model, &state, torque, &t_int, &disturbance);
    let mut dz = DVector::zeros(3 * dof);
    dz.rows_mut(0, dof).copy_from(&state.qd);
    dz.rows_mut(dof, dof).copy_from(&qdd);
    dz
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let sym = (&*m + m.transpose()) * 0.5;
    *m = sym;
}

/// Restores symmetric positive definiteness by flooring the eigenvalues,
/// counting the event. Returns a Cholesky factorization of the repaired
/// matrix (which exists by construction).
fn floor_spd(m: &mut DMatrix<f64>, events: &mut usize) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    *events += 1;
    let eig = m.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < COVARIANCE_FLOOR {
            *v = COVARIANCE_FLOOR;
        }
    }
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    *m = repaired;
    symmetrize(m);
    m.clone().cholesky().expect("floored matrix is positive definite")
}

/// Multi-stage settings: the scenario payload grid, the likelihood
/// sharpness c₁, and the probability floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MsSettings {
    pub scenario_payloads: Vec<f64>,
    pub likelihood_sharpness: f64,
    pub probability_floor: f64,
    pub ekf_noise: EkfNoise,
    /// Solve the per-scenario problems on separate threads.
    pub parallel: bool,
}

impl Default for MsSettings {
    fn default() -> Self {
        Self {
            scenario_payloads: vec![0.0, 1.0, 2.0],
            likelihood_sharpness: 100.0,
            probability_floor: 1e-4,
            ekf_noise: EkfNoise::default(),
            parallel: false,
        }
    }
}

impl MsSettings {
    pub fn scenario_count(&self) -> usize {
        self.scenario_payloads.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scenario_payloads.is_empty() {
            return Err("at least one scenario is required".into());
        }
        if !(self.likelihood_sharpness > 0.0) {
            return Err("likelihood sharpness c1 must be positive".into());
        }
        if !(self.probability_floor > 0.0 && self.probability_floor < 1.0) {
            return Err("probability floor must lie in (0, 1)".into());
        }
        Ok(())
    }
}

/// One branch of the scenario tree: a hypothesized payload, its prediction
/// model, its EKF, its probability, and its private warm-start plan.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub payload_hypothesis: f64,
    pub model: LimbModel,
    pub ekf: EkfState,
    pub probability: f64,
    plan: Option<ControlPlan>,
    solver: SqpSolver,
}

impl Scenario {
    pub fn new(
        nominal_model: &LimbModel,
        payload: f64,
        initial: &JointState,
        probability: f64,
        noise: &EkfNoise,
        sqp: SqpSettings,
    ) -> Self {
        Self {
            payload_hypothesis: payload,
            model: nominal_model.with_payload(payload),
            ekf: EkfState::new(initial, noise),
            probability,
            plan: None,
            solver: SqpSolver::new(sqp),
        }
    }
}

/// Scenario probability update from the EKF innovations:
/// each weight is exp(−0.5·c₁·vᵀS̄⁻¹v) / sqrt((2π)^d |c₁·S̄|) times the
/// prior, normalized, floored, and renormalized. Computed in log space so
/// sharp likelihood ratios cannot underflow. Returns the new probabilities
/// and whether the underflow fallback (floored prior) was taken.
pub fn update_probabilities(
    prior: &[f64],
    innovations: &[DVector<f64>],
    innovation_covariances: &[DMatrix<f64>],
    settings: &MsSettings,
) -> (Vec<f64>, bool) {
    let n = prior.len();
    assert_eq!(innovations.len(), n);
    assert_eq!(innovation_covariances.len(), n);
    let c1 = settings.likelihood_sharpness;

    let mut log_w = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        let v = &innovations[i];
        let d = v.len() as f64;
        let mut s = innovation_covariances[i].clone();
        let chol = match s.clone().cholesky() {
            Some(c) => c,
            None => {
                let mut dummy = 0;
                floor_spd(&mut s, &mut dummy)
            }
        };
        let quad = v.dot(&chol.solve(v)).abs();
        let log_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
        let log_norm = 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + d * c1.ln() + log_det);
        let lw = -0.5 * c1 * quad - log_norm + prior[i].ln();
        if lw.is_finite() || lw == f64::NEG_INFINITY {
            log_w[i] = lw;
        }
    }

    let max_lw = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        // every likelihood collapsed: fall back to the floored prior
        let mut mu: Vec<f64> = prior.iter().map(|&p| p.max(settings.probability_floor)).collect();
        let sum: f64 = mu.iter().sum();
        for m in mu.iter_mut() {
            *m /= sum;
        }
        return (mu, true);
    }

    let mut mu: Vec<f64> = log_w.iter().map(|&lw| (lw - max_lw).exp()).collect();
    let sum: f64 = mu.iter().sum();
    for m in mu.iter_mut() {
        *m = (*m / sum).max(settings.probability_floor);
    }
    let sum: f64 = mu.iter().sum();
    for m in mu.iter_mut() {
        *m /= sum;
    }
    (mu, false)
}

/// Probability-weighted blend of per-scenario first increments.
fn blend_increments(mu: &[f64], firsts: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(firsts[0].len());
    for (w, inc) in mu.iter().zip(firsts) {
        out += inc * *w;
    }
    out
}

/// Output of one multi-stage control step.
#[derive(Debug, Clone)]
pub struct MsStepResult {
    pub torque: DVector<f64>,
    pub probabilities: Vec<f64>,
    /// Per-scenario disturbance estimates (length dof each).
    pub disturbances: Vec<DVector<f64>>,
    /// Probability-weighted disturbance estimate.
    pub blended_disturbance: DVector<f64>,
    /// Total SQP iterations across scenario solves.
    pub sqp_iterations: usize,
}

/// Event counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct MsEvents {
    pub underflow_fallbacks: usize,
    pub solver_warnings: usize,
}

/// Multi-stage NMPC controller owning the scenario bank.
#[derive(Debug, Clone)]
pub struct MsNmpcController {
    pub settings: MsSettings,
    pub cfg: NmpcConfig,
    pub scenarios: Vec<Scenario>,
    pub events: MsEvents,
}

impl MsNmpcController {
    /// Builds the scenario bank with uniform prior probabilities.
    pub fn new(
        nominal_model: &LimbModel,
        initial: &JointState,
        settings: MsSettings,
        cfg: NmpcConfig,
        sqp: SqpSettings,
    ) -> Self {
        let n = settings.scenario_count();
        let prior = 1.0 / n as f64;
        let scenarios = settings
            .scenario_payloads
            .iter()
            .map(|&payload| Scenario::new(nominal_model, payload, initial, prior, &settings.ekf_noise, sqp))
            .collect();
        Self { settings, cfg, scenarios, events: MsEvents::default() }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.scenarios.iter().map(|s| s.probability).collect()
    }

    /// Total covariance floor events across scenario EKFs.
    pub fn covariance_floor_events(&self) -> usize {
        self.scenarios.iter().map(|s| s.ekf.floor_events).sum()
    }

    /// One control step: EKF update and probability refresh from the
    /// measured output, N independent NMPC solves (each from its own warm
    /// start and disturbance estimate), and the Eq-style blended increment.
    pub fn step(
        &mut self,
        measured: &JointState,
        q_h_hat: &DVector<f64>,
        qd_h_hat: &DVector<f64>,
        t_prev: &DVector<f64>,
    ) -> MsStepResult {
        let dof = measured.dof();
        let dt = self.cfg.dt;

        // EKF pass: innovation and S̄ per scenario
        let mut y = DVector::zeros(2 * dof);
        y.rows_mut(0, dof).copy_from(&measured.q);
        y.rows_mut(dof, dof).copy_from(&measured.qd);
        let mut innovations = Vec::with_capacity(self.scenarios.len());
        let mut s_bars = Vec::with_capacity(self.scenarios.len());
        for sc in self.scenarios.iter_mut() {
            let (v, s) = sc.ekf.step(&sc.model, t_prev, &y, dt);
            innovations.push(v);
            s_bars.push(s);
        }

        let prior: Vec<f64> = self.scenarios.iter().map(|s| s.probability).collect();
        let (mu, fallback) = update_probabilities(&prior, &innovations, &s_bars, &self.settings);
        if fallback {
            self.events.underflow_fallbacks += 1;
        }
        for (sc, &m) in self.scenarios.iter_mut().zip(&mu) {
            sc.probability = m;
        }

        // independent scenario solves
        let cfg = self.cfg;
        let solve_one = |sc: &mut Scenario| {
            let disturbance = sc.ekf.disturbance();
            let out = nmpc_step(
                measured,
                q_h_hat,
                qd_h_hat,
                t_prev,
                &sc.model,
                &disturbance,
                &cfg,
                &mut sc.solver,
                sc.plan.as_ref(),
            );
            let converged = out.sqp.status == SqpStatus::Converged;
            let iters = out.sqp.iterations;
            sc.plan = Some(out.plan.clone());
            (out.plan.first(), iters, converged)
        };

        let results: Vec<(DVector<f64>, usize, bool)> = if self.settings.parallel && self.scenarios.len() > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .scenarios
                    .iter_mut()
                    .map(|sc| scope.spawn(move || solve_one(sc)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("scenario solve panicked")).collect()
            })
        } else {
            self.scenarios.iter_mut().map(solve_one).collect()
        };

        let firsts: Vec<DVector<f64>> = results.iter().map(|(f, _, _)| f.clone()).collect();
        let sqp_iterations = results.iter().map(|(_, i, _)| i).sum();
        self.events.solver_warnings += results.iter().filter(|(_, _, c)| !c).count();

        // blend of feasible increments is feasible for the box limits;
        // the clamp only scrubs rounding dust
        let blended = blend_increments(&mu, &firsts);
        debug_assert!(blended.amax() <= cfg.increment_max + 1e-9);
        let mut torque = t_prev + &blended;
        for i in 0..dof {
            torque[i] = torque[i].clamp(-cfg.torque_max, cfg.torque_max);
        }

        let disturbances: Vec<DVector<f64>> = self.scenarios.iter().map(|s| s.ekf.disturbance()).collect();
        let mut blended_disturbance = DVector::zeros(dof);
        for (w, d) in mu.iter().zip(&disturbances) {
            blended_disturbance += d * *w;
        }

        MsStepResult { torque, probabilities: mu, disturbances, blended_disturbance, sqp_iterations }
    }
}
