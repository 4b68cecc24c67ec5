//! Rigid-body dynamics of planar 1- and 2-link limbs.
//!
//! Both the human leg and the exoskeleton are modeled as planar pendula
//! hanging from the hip (or, in 1-DOF mode, a shank pinned at the knee).
//! Angles are measured from the downward vertical; the knee angle is
//! relative to the thigh, the conventional manipulator parameterization.
//! The equations of motion are
//!
//! ```text
//!   M(q) q̈ + C(q, q̇) q̇ + G(q) + k_f1 q̇ + k_f2 sign(q̇) + D = T + T_int
//! ```
//!
//! with friction and disturbance terms present only on the robot side.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors from model construction and validation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid link parameters: {0}")]
    InvalidLink(String),
    #[error("limb model inconsistent: {0}")]
    InvalidModel(String),
}

/// Physical parameters of one rigid link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// Link mass, kg.
    pub mass: f64,
    /// Link length, m.
    pub length: f64,
    /// Distance from the proximal pivot to the center of mass, m.
    pub com_distance: f64,
    /// Rotational inertia about the center of mass, kg·m².
    pub inertia_com: f64,
}

impl LinkParams {
    pub fn new(mass: f64, length: f64, com_distance: f64, inertia_com: f64) -> Result<Self, ModelError> {
        let link = Self { mass, length, com_distance, inertia_com };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mass > 0.0) {
            return Err(ModelError::InvalidLink(format!("mass must be > 0, got {}", self.mass)));
        }
        if !(self.length > 0.0) {
            return Err(ModelError::InvalidLink(format!("length must be > 0, got {}", self.length)));
        }
        if !(0.0..=self.length).contains(&self.com_distance) {
            return Err(ModelError::InvalidLink(format!(
                "com_distance must lie in [0, length], got {} (length {})",
                self.com_distance, self.length
            )));
        }
        if !(self.inertia_com >= 0.0) {
            return Err(ModelError::InvalidLink(format!("inertia_com must be >= 0, got {}", self.inertia_com)));
        }
        Ok(())
    }
}

/// A planar limb: one link (shank only) or two links (thigh then shank),
/// an optional payload at the shank midpoint, and joint friction.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbModel {
    links: Vec<LinkParams>,
    /// Point mass carried at the midpoint of the shank link, kg.
    pub payload_mass: f64,
    /// Viscous friction coefficient per joint, N·m·s.
    pub viscous_friction: f64,
    /// Coulomb friction coefficient per joint, N·m.
    pub coulomb_friction: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
}

impl LimbModel {
    pub fn new(
        links: Vec<LinkParams>,
        payload_mass: f64,
        viscous_friction: f64,
        coulomb_friction: f64,
        gravity: f64,
    ) -> Result<Self, ModelError> {
        if links.is_empty() || links.len() > 2 {
            return Err(ModelError::InvalidModel(format!(
                "limb must have 1 or 2 links, got {}",
                links.len()
            )));
        }
        for link in &links {
            link.validate()?;
        }
        if !(payload_mass >= 0.0) {
            return Err(ModelError::InvalidModel(format!("payload_mass must be >= 0, got {payload_mass}")));
        }
        if !(viscous_friction >= 0.0) || !(coulomb_friction >= 0.0) {
            return Err(ModelError::InvalidModel("friction coefficients must be >= 0".into()));
        }
        Ok(Self { links, payload_mass, viscous_friction, coulomb_friction, gravity })
    }

    /// Number of joints (1 or 2).
    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkParams] {
        &self.links
    }

    /// The shank link (the last link regardless of dof).
    pub fn shank(&self) -> &LinkParams {
        self.links.last().expect("limb has at least one link")
    }

    /// Returns a copy with a different payload mass.
    pub fn with_payload(&self, payload_mass: f64) -> Self {
        Self { payload_mass, ..self.clone() }
    }

    /// Returns a copy with the given mass added to every link (the link-mass
    /// wobble uncertainty acts on thigh and shank simultaneously).
    pub fn with_link_mass_offset(&self, dm: f64) -> Self {
        let mut out = self.clone();
        for link in &mut out.links {
            link.mass += dm;
        }
        out
    }

    /// Shank parameters with the payload folded in: combined mass, shifted
    /// center of mass, and parallel-axis inertia about the combined com.
    fn effective_shank(&self) -> LinkParams {
        let shank = *self.shank();
        if self.payload_mass == 0.0 {
            return shank;
        }
        let mp = self.payload_mass;
        let lp = shank.length / 2.0;
        let m = shank.mass + mp;
        let lc = (shank.mass * shank.com_distance + mp * lp) / m;
        let inertia = shank.inertia_com
            + shank.mass * (shank.com_distance - lc).powi(2)
            + mp * (lp - lc).powi(2);
        LinkParams { mass: m, length: shank.length, com_distance: lc, inertia_com: inertia }
    }
}

/// Joint angles and angular velocities of one limb.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        assert_eq!(q.len(), qd.len(), "q and qd dimensions must match");
        Self { q, qd }
    }

    pub fn zeros(dof: usize) -> Self {
        Self { q: DVector::zeros(dof), qd: DVector::zeros(dof) }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// Packs (q, qd) into a single state vector for integration.
    pub fn to_vector(&self) -> DVector<f64> {
        let dof = self.dof();
        let mut x = DVector::zeros(2 * dof);
        x.rows_mut(0, dof).copy_from(&self.q);
        x.rows_mut(dof, dof).copy_from(&self.qd);
        x
    }

    /// Inverse of [`JointState::to_vector`].
    pub fn from_vector(x: &DVector<f64>) -> Self {
        assert!(x.len() % 2 == 0, "state vector length must be even");
        let dof = x.len() / 2;
        Self { q: x.rows(0, dof).into_owned(), qd: x.rows(dof, dof).into_owned() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// Mass matrix, Coriolis matrix, and gravity vector at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub gravity: DVector<f64>,
}

/// Evaluates M(q), C(q, q̇), and G(q) with the payload folded into the
/// shank before evaluation. The Coriolis matrix uses the Christoffel-symbol
/// convention, so Ṁ − 2C is skew-symmetric.
pub fn compute_terms(model: &LimbModel, state: &JointState) -> DynamicsTerms {
    let dof = model.dof();
    assert_eq!(state.dof(), dof, "state dimension must match model dof");

    let g = model.gravity;
    match dof {
        1 => {
            let shank = model.effective_shank();
            let m = shank.mass * shank.com_distance.powi(2) + shank.inertia_com;
            DynamicsTerms {
                mass: DMatrix::from_element(1, 1, m),
                coriolis: DMatrix::zeros(1, 1),
                gravity: DVector::from_element(1, shank.mass * g * shank.com_distance * state.q[0].sin()),
            }
        }
        2 => {
            let thigh = model.links[0];
            let shank = model.effective_shank();
            let (m1, l1, lc1, i1) = (thigh.mass, thigh.length, thigh.com_distance, thigh.inertia_com);
            let (m2, lc2, i2) = (shank.mass, shank.com_distance, shank.inertia_com);
            let (q1, q2) = (state.q[0], state.q[1]);
            let (qd1, qd2) = (state.qd[0], state.qd[1]);

            let c2 = q2.cos();
            let m11 = m1 * lc1 * lc1 + i1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i2;
            let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
            let m22 = m2 * lc2 * lc2 + i2;
            let mass = DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22]);

            let h = m2 * l1 * lc2 * q2.sin();
            let coriolis = DMatrix::from_row_slice(
                2,
                2,
                &[-h * qd2, -h * (qd1 + qd2), h * qd1, 0.0],
            );

            let s1 = q1.sin();
            let s12 = (q1 + q2).sin();
            let gravity = DVector::from_row_slice(&[
                (m1 * lc1 + m2 * l1) * g * s1 + m2 * lc2 * g * s12,
                m2 * lc2 * g * s12,
            ]);

            DynamicsTerms { mass, coriolis, gravity }
        }
        _ => unreachable!("LimbModel is validated to 1 or 2 links"),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Joint accelerations of the robot limb:
/// q̈ = M⁻¹ (T + T_int − C q̇ − G − k_f1 q̇ − k_f2 sign(q̇) − D).
pub fn forward_dynamics_robot(
    model: &LimbModel,
    state: &JointState,
    torque: &DVector<f64>,
    interaction: &DVector<f64>,
    disturbance: &DVector<f64>,
) -> DVector<f64> {
    let dof = model.dof();
    assert_eq!(torque.len(), dof, "torque dimension must match model dof");
    assert_eq!(interaction.len(), dof, "interaction dimension must match model dof");
    assert_eq!(disturbance.len(), dof, "disturbance dimension must match model dof");

    let terms = compute_terms(model, state);
    let mut rhs = torque + interaction - &terms.coriolis * &state.qd - &terms.gravity - disturbance;
    for i in 0..dof {
        rhs[i] -= model.viscous_friction * state.qd[i] + model.coulomb_friction * sign(state.qd[i]);
    }
    solve_mass(&terms.mass, rhs)
}

/// Joint accelerations of the human limb: q̈ = M⁻¹ (T − T_int − C q̇ − G).
/// The human side carries no friction and no disturbance term.
pub fn forward_dynamics_human(
    model: &LimbModel,
    state: &JointState,
    torque: &DVector<f64>,
    interaction: &DVector<f64>,
) -> DVector<f64> {
    let dof = model.dof();
    assert_eq!(torque.len(), dof, "torque dimension must match model dof");
    assert_eq!(interaction.len(), dof, "interaction dimension must match model dof");

    let terms = compute_terms(model, state);
    let rhs = torque - interaction - &terms.coriolis * &state.qd - &terms.gravity;
    solve_mass(&terms.mass, rhs)
}

fn solve_mass(mass: &DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    // M is symmetric positive definite for positive link masses.
    mass.clone()
        .cholesky()
        .expect("mass matrix must be positive definite")
        .solve(&rhs)
}

/// Errors from numerical integration.
#[derive(Debug, Error)]
pub enum IntegrationError {
    #[error("non-finite state after RK4 step at t = {t}")]
    NonFinite { t: f64 },
}

/// One classic fourth-order Runge-Kutta step of ẋ = f(t, x).
pub fn rk4_step<F>(derivative: F, t: f64, state: &DVector<f64>, dt: f64) -> Result<DVector<f64>, IntegrationError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    assert!(dt > 0.0, "dt must be positive");
    let half = dt / 2.0;
    let k1 = derivative(t, state);
    let k2 = derivative(t + half, &(state + &k1 * half));
    let k3 = derivative(t + half, &(state + &k2 * half));
    let k4 = derivative(t + dt, &(state + &k3 * dt));
    let next = state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(IntegrationError::NonFinite { t })
    }
}

/// Total mechanical energy of an unforced limb (kinetic + potential with
/// the potential zero at the hanging configuration). Used by energy audits.
pub fn mechanical_energy(model: &LimbModel, state: &JointState) -> f64 {
    let terms = compute_terms(model, state);
    let kinetic = 0.5 * state.qd.dot(&(&terms.mass * &state.qd));
    let g = model.gravity;
    let potential = match model.dof() {
        1 => {
            let shank = model.effective_shank();
            shank.mass * g * shank.com_distance * (1.0 - state.q[0].cos())
        }
        2 => {
            let thigh = model.links()[0];
            let shank = model.effective_shank();
            let (q1, q2) = (state.q[0], state.q[1]);
            thigh.mass * g * thigh.com_distance * (1.0 - q1.cos())
                + shank.mass
                    * g
                    * (thigh.length * (1.0 - q1.cos()) + shank.com_distance * (1.0 - (q1 + q2).cos()))
        }
        _ => unreachable!(),
    };
    kinetic + potential
}
