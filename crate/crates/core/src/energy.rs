//! Positive-power motor energy, cost of transport and torque statistics.

use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;
use thiserror::Error;

use crate::state::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EnergyError {
    #[error("distance travelled is zero; report energy instead of CoT")]
    ZeroDistance,
    #[error("no stance samples")]
    Empty,
    #[error("motor constants must be positive")]
    InvalidMotor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorModel {
    /// Effective torque constant after the gearbox, N*m/A.
    pub torque_constant: f64,
    /// Ohm.
    pub winding_resistance: f64,
}

impl Default for MotorModel {
    fn default() -> Self {
        Self {
            torque_constant: 0.6,
            winding_resistance: 0.17,
        }
    }
}

impl MotorModel {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.torque_constant > 0.0 && self.winding_resistance > 0.0 {
            Ok(())
        } else {
            Err(EnergyError::InvalidMotor)
        }
    }
}

/// `max(tau . qdot, 0) + |tau / K_t|^2 R`. Negative mechanical work is not recovered.
pub fn power_sample(tau: &Vec2, qdot: &Vec2, motor: &MotorModel) -> f64 {
    let mech = tau.dot(qdot).max(0.0);
    let i = tau / motor.torque_constant;
    mech + i.norm_squared() * motor.winding_resistance
}

/// Running totals for one run, integrated by the trapezoid rule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyAccumulator {
    pub total_positive_energy: f64,
    pub distance: f64,
    pub duration: f64,
    /// Stance-sample counts of `|tau|` per joint in 1 N*m bins.
    pub histogram: [Vec<u64>; 2],
    last: Option<(f64, f64, f64)>,
}

impl EnergyAccumulator {
    pub const BIN_WIDTH: f64 = 1.0;

    pub fn new() -> Self {
        Self::default()
    }

    /// Add a sample at time `t` with power `p` and forward CoM position `x`.
    pub fn add(&mut self, t: f64, p: f64, x: f64) {
        if let Some((t0, p0, x0)) = self.last {
            let h = (t - t0).max(0.0);
            self.total_positive_energy += 0.5 * (p0 + p) * h;
            self.duration += h;
            self.distance += (x - x0).abs();
        }
        self.last = Some((t, p, x));
    }

    pub fn add_torque(&mut self, tau: &Vec2) {
        for j in 0..2 {
            let bin = (tau[j].abs() / Self::BIN_WIDTH) as usize;
            let h = &mut self.histogram[j];
            if h.len() <= bin {
                h.resize(bin + 1, 0);
            }
            h[bin] += 1;
        }
    }

    /// Totals of two accumulators; time continuity is not assumed.
    pub fn merge(&self, other: &Self) -> Self {
        let mut histogram = self.histogram.clone();
        for (j, h) in histogram.iter_mut().enumerate() {
            let o = &other.histogram[j];
            if h.len() < o.len() {
                h.resize(o.len(), 0);
            }
            for (a, b) in h.iter_mut().zip(o) {
                *a += b;
            }
        }
        Self {
            total_positive_energy: self.total_positive_energy + other.total_positive_energy,
            distance: self.distance + other.distance,
            duration: self.duration + other.duration,
            histogram,
            last: None,
        }
    }
}

/// `E+ / (m g d)`.
pub fn cost_of_transport(acc: &EnergyAccumulator, mass: f64, g: f64) -> Result<f64, EnergyError> {
    if !(acc.distance > 0.0) {
        return Err(EnergyError::ZeroDistance);
    }
    Ok(acc.total_positive_energy / (mass * g * acc.distance))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueStats {
    pub mean_abs: f64,
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
    pub peak: f64,
    pub std_abs: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Statistics of `|tau|` for each joint over the samples flagged as stance.
pub fn torque_stats<'a, I>(samples: I) -> Result<[TorqueStats; 2], EnergyError>
where
    I: IntoIterator<Item = (&'a Vec2, bool)>,
{
    let mut mags: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (tau, stance) in samples {
        if stance {
            mags[0].push(tau.x.abs());
            mags[1].push(tau.y.abs());
        }
    }
    if mags[0].is_empty() {
        return Err(EnergyError::Empty);
    }
    Ok(mags.map(|mut v| {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        TorqueStats {
            mean_abs: mean,
            lower_quartile: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            upper_quartile: quantile(&v, 0.75),
            peak: v[v.len() - 1],
            std_abs: var.sqrt(),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_motor() -> MotorModel {
        MotorModel {
            torque_constant: 1.0,
            winding_resistance: 0.17,
        }
    }

    #[test]
    fn power_examples() {
        let m = unit_motor();
        assert_eq!(power_sample(&Vec2::zeros(), &Vec2::new(3.0, 1.0), &m), 0.0);
        assert!((power_sample(&Vec2::new(1.0, 0.0), &Vec2::new(-5.0, 0.0), &m) - 0.17).abs() < 1e-15);
        assert!((power_sample(&Vec2::new(2.0, 1.0), &Vec2::new(1.0, 1.0), &m) - 3.85).abs() < 1e-12);
    }

    #[test]
    fn cot_examples() {
        let mut a = EnergyAccumulator::new();
        a.total_positive_energy = 24.525;
        a.distance = 1.0;
        assert!((cost_of_transport(&a, 2.5, 9.81).unwrap() - 1.0).abs() < 1e-12);
        a.total_positive_energy *= 2.0;
        assert!((cost_of_transport(&a, 2.5, 9.81).unwrap() - 2.0).abs() < 1e-12);
        a.distance = 0.0;
        assert_eq!(cost_of_transport(&a, 2.5, 9.81), Err(EnergyError::ZeroDistance));
    }

    #[test]
    fn constant_torque_stats_are_degenerate() {
        let t = Vec2::new(-3.0, 7.5);
        let s = torque_stats(core::iter::repeat((&t, true)).take(50)).unwrap();
        for (st, v) in s.iter().zip([3.0, 7.5]) {
            assert_eq!(st.mean_abs, v);
            assert_eq!(st.peak, v);
            assert_eq!(st.lower_quartile, v);
            assert_eq!(st.upper_quartile, v);
        }
        assert_eq!(torque_stats(core::iter::once((&t, false))), Err(EnergyError::Empty));
    }

    #[test]
    fn trapezoid_and_rectangle_agree_at_one_kilohertz() {
        let m = MotorModel::default();
        let mut acc = EnergyAccumulator::new();
        let mut rect = 0.0;
        let dt = 1e-3;
        for i in 0..=2000 {
            let t = i as f64 * dt;
            let tau = Vec2::new(8.0 * (9.0 * t).sin(), 12.0 * (13.0 * t).cos());
            let qd = Vec2::new(3.0 * (9.0 * t).cos(), -4.0 * (13.0 * t).sin());
            let p = power_sample(&tau, &qd, &m);
            if i < 2000 {
                rect += p * dt;
            }
            acc.add(t, p, 0.5 * t);
        }
        assert!(((acc.total_positive_energy - rect) / rect).abs() < 5e-3);
        assert!((acc.distance - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn power_is_never_negative(t0 in -50.0..50.0f64, t1 in -50.0..50.0f64, q0 in -40.0..40.0f64, q1 in -40.0..40.0f64) {
            prop_assert!(power_sample(&Vec2::new(t0, t1), &Vec2::new(q0, q1), &MotorModel::default()) >= 0.0);
        }

        #[test]
        fn cot_ignores_time_reparameterization(e in 0.1..500.0f64, d in 0.1..20.0f64, stretch in 0.1..10.0f64) {
            let mut a = EnergyAccumulator::new();
            a.total_positive_energy = e;
            a.distance = d;
            a.duration = 1.0;
            let mut b = a.clone();
            b.duration = stretch;
            prop_assert_eq!(cost_of_transport(&a, 2.5, 9.81).unwrap(), cost_of_transport(&b, 2.5, 9.81).unwrap());
        }

        #[test]
        fn accumulator_totals_never_decrease(ps in proptest::collection::vec((0.0..100.0f64, -1.0..1.0f64), 1..50)) {
            let mut a = EnergyAccumulator::new();
            let mut prev = (0.0, 0.0, 0.0);
            for (i, (p, dx)) in ps.iter().enumerate() {
                a.add(i as f64 * 1e-3, *p, *dx);
                let now = (a.total_positive_energy, a.distance, a.duration);
                prop_assert!(now.0 >= prev.0 && now.1 >= prev.1 && now.2 >= prev.2);
                prev = now;
            }
        }
    }
}
