//! Per-step run records and CSV export.
//!
//! One row per control step with a fixed column order:
//! `t, qH_*, qdH_*, qR_*, qdR_*, TR_*, F1, F2, qhatH_*, mu_1..mu_N,
//! Dhat_1..Dhat_dof, sqp_iters, step_ms`. 1-DOF runs omit the hip columns
//! (including F1, the thigh strap); non-robust runs carry no scenarios or
//! disturbance filter, so their `mu_*` and `Dhat_*` columns are absent.

use std::io::Write;
use std::path::Path;

use super::SimError;

/// One control step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub q_h: Vec<f64>,
    pub qd_h: Vec<f64>,
    pub q_r: Vec<f64>,
    pub qd_r: Vec<f64>,
    /// Robot torque applied over [t, t+dt].
    pub torque_r: Vec<f64>,
    /// Human torque including the strap feed-through (logged, not exported).
    pub torque_h: Vec<f64>,
    /// Thigh strap force; 0 and unexported for 1-DOF runs.
    pub f_thigh: f64,
    pub f_shank: f64,
    pub q_h_hat: Vec<f64>,
    pub qd_h_hat: Vec<f64>,
    /// Scenario probabilities (empty for the non-robust controller).
    pub mu: Vec<f64>,
    /// Blended per-joint disturbance estimate (empty for non-robust).
    pub d_hat: Vec<f64>,
    pub sqp_iters: usize,
    pub step_ms: f64,
}

/// Counters and extrema accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunEvents {
    /// SQP solves that hit the iteration limit.
    pub solver_warnings: usize,
    /// EKF covariance repairs.
    pub covariance_floors: usize,
    /// Probability updates that fell back to the floored prior.
    pub underflow_fallbacks: usize,
    /// Largest |T| seen, N·m.
    pub max_abs_torque: f64,
    /// Largest per-step |ΔT| seen, N·m.
    pub max_abs_increment: f64,
}

/// Full record of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub dof: usize,
    /// "nmpc" or "msnmpc".
    pub controller: &'static str,
    /// Scenario count (0 for the non-robust controller).
    pub n_scenarios: usize,
    pub rows: Vec<LogRow>,
    pub events: RunEvents,
}

impl SimLog {
    pub fn new(dof: usize, controller: &'static str, n_scenarios: usize) -> Self {
        Self { dof, controller, n_scenarios, rows: Vec::new(), events: RunEvents::default() }
    }

    /// CSV header in the fixed schema order for this run shape.
    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = vec!["t".into()];
        let joints: &[&str] = if self.dof == 2 { &["hip", "knee"] } else { &["knee"] };
        for prefix in ["qH", "qdH", "qR", "qdR", "TR"] {
            for j in joints {
                cols.push(format!("{prefix}_{j}"));
            }
        }
        if self.dof == 2 {
            cols.push("F1".into());
        }
        cols.push("F2".into());
        for j in joints {
            cols.push(format!("qhatH_{j}"));
        }
        for i in 1..=self.n_scenarios {
            cols.push(format!("mu_{i}"));
        }
        if self.n_scenarios > 0 {
            for i in 1..=self.dof {
                cols.push(format!("Dhat_{i}"));
            }
        }
        cols.push("sqp_iters".into());
        cols.push("step_ms".into());
        cols.join(",")
    }

    fn csv_row(&self, row: &LogRow) -> String {
        let mut fields: Vec<String> = vec![format_float(row.t)];
        for vec in [&row.q_h, &row.qd_h, &row.q_r, &row.qd_r, &row.torque_r] {
            for &v in vec.iter() {
                fields.push(format_float(v));
            }
        }
        if self.dof == 2 {
            fields.push(format_float(row.f_thigh));
        }
        fields.push(format_float(row.f_shank));
        for &v in &row.q_h_hat {
            fields.push(format_float(v));
        }
        for &v in &row.mu {
            fields.push(format_float(v));
        }
        if self.n_scenarios > 0 {
            for &v in &row.d_hat {
                fields.push(format_float(v));
            }
        }
        fields.push(row.sqp_iters.to_string());
        fields.push(format_float(row.step_ms));
        fields.join(",")
    }

    /// Writes the run as CSV with the fixed header.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", self.csv_header())?;
        for row in &self.rows {
            writeln!(out, "{}", self.csv_row(row))?;
        }
        Ok(())
    }
}

/// Shortest round-trip decimal form; deterministic for identical bits.
fn format_float(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(dof: usize, n_scenarios: usize) -> LogRow {
        LogRow {
            t: 0.01,
            q_h: vec![0.1; dof],
            qd_h: vec![0.2; dof],
            q_r: vec![0.3; dof],
            qd_r: vec![0.4; dof],
            torque_r: vec![0.5; dof],
            torque_h: vec![0.6; dof],
            f_thigh: 1.5,
            f_shank: 2.5,
            q_h_hat: vec![0.7; dof],
            qd_h_hat: vec![0.8; dof],
            mu: vec![1.0 / n_scenarios.max(1) as f64; n_scenarios],
            d_hat: if n_scenarios > 0 { vec![0.0; dof] } else { vec![] },
            sqp_iters: 7,
            step_ms: 1.25,
        }
    }

    #[test]
    fn two_dof_msnmpc_header_matches_schema() {
        let log = SimLog::new(2, "msnmpc", 3);
        assert_eq!(
            log.csv_header(),
            "t,qH_hip,qH_knee,qdH_hip,qdH_knee,qR_hip,qR_knee,qdR_hip,qdR_knee,\
             TR_hip,TR_knee,F1,F2,qhatH_hip,qhatH_knee,mu_1,mu_2,mu_3,Dhat_1,Dhat_2,sqp_iters,step_ms"
        );
    }

    #[test]
    fn one_dof_omits_hip_columns() {
        let log = SimLog::new(1, "msnmpc", 3);
        assert_eq!(
            log.csv_header(),
            "t,qH_knee,qdH_knee,qR_knee,qdR_knee,TR_knee,F2,qhatH_knee,mu_1,mu_2,mu_3,Dhat_1,sqp_iters,step_ms"
        );
    }

    #[test]
    fn nmpc_runs_have_no_scenario_columns() {
        let log = SimLog::new(2, "nmpc", 0);
        assert_eq!(
            log.csv_header(),
            "t,qH_hip,qH_knee,qdH_hip,qdH_knee,qR_hip,qR_knee,qdR_hip,qdR_knee,\
             TR_hip,TR_knee,F1,F2,qhatH_hip,qhatH_knee,sqp_iters,step_ms"
        );
    }

    #[test]
    fn row_field_count_matches_header() {
        for (dof, n) in [(2, 3), (2, 0), (1, 3), (1, 0)] {
            let mut log = SimLog::new(dof, if n > 0 { "msnmpc" } else { "nmpc" }, n);
            log.rows.push(sample_row(dof, n));
            let header_cols = log.csv_header().split(',').count();
            let row_cols = log.csv_row(&log.rows[0]).split(',').count();
            assert_eq!(header_cols, row_cols, "dof={dof} n={n}");
        }
    }
}
