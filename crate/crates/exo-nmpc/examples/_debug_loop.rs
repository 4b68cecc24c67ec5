use exo_nmpc::dynamics::{forward_dynamics_robot, rk4_step, JointState, LimbModel, LinkParams};
use exo_nmpc::nmpc::{NmpcConfig, NmpcController};
use exo_nmpc::optimizer::SqpSettings;
use nalgebra::DVector;

fn main() {
    let model =
        LimbModel::new(vec![LinkParams::new(2.0, 0.4, 0.18, 0.03).unwrap()], 0.0, 0.0, 0.0, 9.81).unwrap();
    let cfg = NmpcConfig::default();
    let mut ctrl = NmpcController::new(model.clone(), cfg, SqpSettings::default());
    let q_star = DVector::from_element(1, 0.35);
    let qd_star = DVector::zeros(1);
    let mut state = JointState::zeros(1);
    let mut t_prev = DVector::zeros(1);
    let zero = DVector::zeros(1);
    for k in 0..400 {
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
        if k % 10 == 0 || k > 380 {
            println!(
                "k={k:3} q={:+.4} qd={:+.4} T={:+.4} dT1={:+.4} iters={} kkt={:.2e} status={:?}",
                state.q[0],
                state.qd[0],
                t_prev[0],
                out.plan.first()[0],
                out.sqp.iterations,
                out.sqp.kkt_residual,
                out.sqp.status
            );
        }
    }
}
