//! Deterministic uncertainty models and the sensor smoothing filter.
//!
//! All disturbances are fixed sinusoids, so identical configurations replay
//! identical runs; there is no RNG anywhere in the pipeline.

use nalgebra::DVector;
use std::f64::consts::PI;

use super::config::UncertaintyConfig;

/// Evaluated uncertainty inputs at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceInputs {
    /// Mass offset added to every robot link, kg.
    pub link_mass_offset: f64,
    /// Lumped disturbance torque per joint, N·m.
    pub lumped: DVector<f64>,
    /// Additive velocity-sensor noise, rad/s.
    pub velocity_noise: f64,
    /// Additive force-sensor noise, N.
    pub force_noise: f64,
}

/// Evaluates the enabled uncertainty channels at time t:
/// link-mass wobble 0.05·sin(t) + 0.01·sin(100t + π/4),
/// lumped torque 0.1·sin(t) + 0.05·sin(100t + π/2) on every joint,
/// velocity noise 1e-4·sin(100t), force noise 1e-3·sin(100t).
pub fn disturbance_models(t: f64, unc: &UncertaintyConfig, dof: usize) -> DisturbanceInputs {
    let link_mass_offset = if unc.link_mass_wobble {
        0.05 * t.sin() + 0.01 * (100.0 * t + PI / 4.0).sin()
    } else {
        0.0
    };
    let lumped_value = if unc.lumped_disturbance {
        0.1 * t.sin() + 0.05 * (100.0 * t + PI / 2.0).sin()
    } else {
        0.0
    };
    let (velocity_noise, force_noise) = if unc.sensor_noise {
        (1e-4 * (100.0 * t).sin(), 1e-3 * (100.0 * t).sin())
    } else {
        (0.0, 0.0)
    };
    DisturbanceInputs {
        link_mass_offset,
        lumped: DVector::from_element(dof, lumped_value),
        velocity_noise,
        force_noise,
    }
}

/// Mean of the most recent `window` samples; until the window fills it is
/// padded with the first sample, so a constant input passes through exactly.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    buf: Vec<f64>,
    next: usize,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "window must be at least 1");
        Self { window, buf: Vec::new(), next: 0 }
    }

    /// Pushes one sample and returns the filtered value.
    pub fn push(&mut self, value: f64) -> f64 {
        if self.buf.is_empty() {
            self.buf = vec![value; self.window];
        } else {
            self.buf[self.next] = value;
            self.next = (self.next + 1) % self.window;
        }
        self.buf.iter().sum::<f64>() / self.window as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn all_on() -> UncertaintyConfig {
        UncertaintyConfig::all_enabled()
    }

    #[test]
    fn values_at_time_zero() {
        let d = disturbance_models(0.0, &all_on(), 2);
        assert_abs_diff_eq!(d.link_mass_offset, 0.01 * (PI / 4.0).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.link_mass_offset, 0.0070710678, epsilon = 1e-9);
        assert_abs_diff_eq!(d.lumped[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(d.lumped[1], 0.05, epsilon = 1e-15);
        assert_eq!(d.velocity_noise, 0.0);
        assert_eq!(d.force_noise, 0.0);
    }

    #[test]
    fn disabled_flags_zero_everything() {
        let d = disturbance_models(1.234, &UncertaintyConfig::all_disabled(), 2);
        assert_eq!(d.link_mass_offset, 0.0);
        assert_eq!(d.lumped.amax(), 0.0);
        assert_eq!(d.velocity_noise, 0.0);
        assert_eq!(d.force_noise, 0.0);
    }

    #[test]
    fn filter_passes_constants() {
        let mut f = MovingAverage::new(5);
        for _ in 0..10 {
            assert_eq!(f.push(3.25), 3.25);
        }
    }

    #[test]
    fn filter_averages_window() {
        let mut f = MovingAverage::new(5);
        let mut last = 0.0;
        for v in [1.0, 2.0, 3.0, 4.0, 5.0] {
            last = f.push(v);
        }
        assert_abs_diff_eq!(last, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn unit_step_settles_after_window() {
        let mut f = MovingAverage::new(5);
        f.push(0.0);
        let mut outputs = Vec::new();
        for _ in 0..5 {
            outputs.push(f.push(1.0));
        }
        assert!(outputs[3] < 1.0);
        assert_eq!(outputs[4], 1.0);
    }
}
