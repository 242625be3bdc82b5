//! Instantaneous NOx emission model and its macroscopic aggregation.
//!
//! The microscopic rate is `max(E0, f1 + f2 v + f3 v² + f4 a + f5 a² + f6 v a)`
//! in g/s with `v` in m/s and `a` in m/s², using one coefficient row for
//! `a >= threshold` and another for harder braking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicsField;
use crate::traffic::TrafficState;
use crate::trajectory::TrajectorySet;
use crate::units::{kmh_to_ms, SECONDS_PER_HOUR};

/// Polynomial coefficients `f1..f6` for one acceleration regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow(pub [f64; 6]);

impl CoefficientRow {
    pub fn polynomial(&self, v: f64, a: f64) -> f64 {
        let f = &self.0;
        f[0] + f[1] * v + f[2] * v * v + f[3] * a + f[4] * a * a + f[5] * v * a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionCoefficients {
    /// Row used when `a >= accel_threshold`.
    pub accelerating: CoefficientRow,
    /// Row used when `a < accel_threshold`.
    pub decelerating: CoefficientRow,
    /// Lower bound on the rate, g/s.
    pub e0: f64,
    /// m/s²
    pub accel_threshold: f64,
}

impl EmissionCoefficients {
    /// NOx coefficients for a petrol passenger car.
    pub fn petrol_car_nox() -> Self {
        Self {
            accelerating: CoefficientRow([6.19e-4, 8e-5, -4.03e-6, -4.13e-4, 3.80e-4, 1.77e-4]),
            decelerating: CoefficientRow([2.17e-4, 0.0, 0.0, 0.0, 0.0, 0.0]),
            e0: 0.0,
            accel_threshold: -0.5,
        }
    }

    /// Looks up a named coefficient table.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "petrol_car_nox" => Ok(Self::petrol_car_nox()),
            other => Err(Error::config(
                "emission.table",
                format!("unknown emission table `{other}`"),
            )),
        }
    }

    pub fn row(&self, a: f64) -> &CoefficientRow {
        if a >= self.accel_threshold {
            &self.accelerating
        } else {
            &self.decelerating
        }
    }
}

/// Emission rate of one vehicle in g/s (`v` in m/s, `a` in m/s²).
pub fn emission_rate_single(v: f64, a: f64, coeffs: &EmissionCoefficients) -> f64 {
    coeffs.e0.max(coeffs.row(a).polynomial(v, a))
}

/// Per-cell emissions on the road grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmissionField {
    /// g/h per cell
    pub rate_per_cell: Vec<f64>,
    /// g/h over the whole road
    pub total: f64,
    /// g/(km³·h): cell rate divided by the box volume.
    pub source_concentration_rate: Vec<f64>,
}

/// Aggregates the microscopic model over the `rho * dx * lanes` vehicles of
/// each cell, all driving at the cell speed and acceleration.
/// `box_volume_km3` turns a rate into a concentration rate.
pub fn emission_field(
    state: &TrafficState,
    kin: &KinematicsField,
    dx_km: f64,
    lanes: f64,
    box_volume_km3: f64,
    coeffs: &EmissionCoefficients,
) -> Result<EmissionField> {
    if state.len() != kin.v.len() || kin.v.len() != kin.a.len() {
        return Err(Error::Length {
            what: "traffic state / kinematics",
            left: state.len(),
            right: kin.v.len().min(kin.a.len()),
        });
    }
    let rate_per_cell: Vec<f64> = state
        .rho
        .iter()
        .zip(kin.v.iter().zip(&kin.a))
        .map(|(&rho, (&v_kmh, &a))| {
            let vehicles = rho * dx_km * lanes;
            vehicles * emission_rate_single(kmh_to_ms(v_kmh), a, coeffs) * SECONDS_PER_HOUR
        })
        .collect();
    let total = rate_per_cell.iter().sum();
    let source_concentration_rate = rate_per_cell.iter().map(|r| r / box_volume_km3).collect();
    Ok(EmissionField {
        rate_per_cell,
        total,
        source_concentration_rate,
    })
}

/// Road total at each time, g/h.
pub fn total_emission_timeseries(fields: &[EmissionField]) -> Vec<f64> {
    fields.iter().map(|f| f.rate_per_cell.iter().sum()).collect()
}

/// Emissions summed over the vehicles recorded at every frame from the first
/// to the last, as `(time_s, g/h)` pairs. Frames without vehicles give zero.
pub fn ground_truth_emissions(traj: &TrajectorySet, coeffs: &EmissionCoefficients) -> Vec<(f64, f64)> {
    let Some((first, last)) = traj.frame_range() else {
        return Vec::new();
    };
    (first..=last)
        .map(|frame| {
            let grams_per_s: f64 = traj
                .at_frame(frame)
                .iter()
                .map(|r| emission_rate_single(r.v_ms.max(0.0), r.a_ms2, coeffs))
                .sum();
            (frame as f64 * crate::trajectory::FRAME_DT_S, grams_per_s * SECONDS_PER_HOUR)
        })
        .collect()
}

/// Least-squares factor through the origin, `r = <e_true, e_mod> / <e_mod, e_mod>`.
pub fn fit_correction_factor(e_true: &[f64], e_mod: &[f64]) -> Result<f64> {
    if e_true.len() != e_mod.len() {
        return Err(Error::Length {
            what: "emission series",
            left: e_true.len(),
            right: e_mod.len(),
        });
    }
    let num: f64 = e_true.iter().zip(e_mod).map(|(t, m)| t * m).sum();
    let den: f64 = e_mod.iter().map(|m| m * m).sum();
    if den == 0.0 {
        return Err(Error::Degenerate("modelled emission series is identically zero".into()));
    }
    Ok(num / den)
}

/// `||e_true - r e_mod||_1 / ||e_true||_1`.
pub fn relative_l1_error(e_true: &[f64], e_mod: &[f64], r: f64) -> Result<f64> {
    if e_true.len() != e_mod.len() {
        return Err(Error::Length {
            what: "emission series",
            left: e_true.len(),
            right: e_mod.len(),
        });
    }
    let den: f64 = e_true.iter().map(|t| t.abs()).sum();
    if den == 0.0 {
        return Err(Error::Degenerate("ground-truth emission series is identically zero".into()));
    }
    let num: f64 = e_true.iter().zip(e_mod).map(|(t, m)| (t - r * m).abs()).sum();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::FluxModel;
    use proptest::prelude::*;

    #[test]
    fn table_point_values() {
        let c = EmissionCoefficients::petrol_car_nox();
        assert_eq!(emission_rate_single(0.0, 0.0, &c), 6.19e-4);
        assert_eq!(emission_rate_single(20.0, -1.0, &c), 2.17e-4);
        let hand: f64 = 6.19e-4 + 8e-5 * 10.0 + (-4.03e-6) * 100.0 + (-4.13e-4) * 1.0 + 3.80e-4 * 1.0 + 1.77e-4 * 10.0;
        assert!((emission_rate_single(10.0, 1.0, &c) - 2.753e-3).abs() <= 1e-15);
        assert!((hand - 2.753e-3).abs() <= 1e-15);
    }

    #[test]
    fn empty_road_emits_nothing() {
        let m = FluxModel::urban_single_lane();
        let state = TrafficState::new(vec![0.0; 5], vec![m.w_r; 5], 0.0).unwrap();
        let kin = KinematicsField {
            v: vec![m.v_max; 5],
            a: vec![0.0; 5],
        };
        let f = emission_field(&state, &kin, 0.03, 1.0, 2.7e-5, &EmissionCoefficients::petrol_car_nox()).unwrap();
        assert!(f.rate_per_cell.iter().all(|&r| r == 0.0));
        assert_eq!(f.total, 0.0);
    }

    #[test]
    fn one_idle_vehicle_emits_f1() {
        let dx = 0.03;
        let state = TrafficState::new(vec![1.0 / dx], vec![0.0], 0.0).unwrap();
        let kin = KinematicsField {
            v: vec![0.0],
            a: vec![0.0],
        };
        let f = emission_field(&state, &kin, dx, 1.0, 1.0, &EmissionCoefficients::petrol_car_nox()).unwrap();
        assert!((f.rate_per_cell[0] - 6.19e-4 * 3600.0).abs() < 1e-15);
    }

    #[test]
    fn scenario_initial_field_is_uniform() {
        // Uniform 52 veh/km at w_r, no acceleration; independent recomputation.
        let m = FluxModel::urban_single_lane();
        let n = 100;
        let dx = 0.03;
        let state = TrafficState::new(vec![52.0; n], vec![m.w_r; n], 0.0).unwrap();
        let kin = crate::kinematics::acceleration_analytic(&state, &m, dx);
        let f = emission_field(&state, &kin, dx, 1.0, dx * dx * dx, &EmissionCoefficients::petrol_car_nox()).unwrap();
        let v_ms = 70.0 * (1.0 - 52.0 / 133.0) / 3.6;
        let per_vehicle = 6.19e-4 + 8e-5 * v_ms - 4.03e-6 * v_ms * v_ms;
        let expected = 52.0 * dx * per_vehicle * 3600.0;
        for r in &f.rate_per_cell {
            assert!((r - expected).abs() <= 1e-12 * expected);
        }
        assert!((f.total - expected * n as f64).abs() <= 1e-12 * f.total);
        assert!((f.source_concentration_rate[0] - expected / 2.7e-5).abs() <= 1e-9 * expected / 2.7e-5);
    }

    #[test]
    fn correction_factor_and_error() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert!((fit_correction_factor(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let half: Vec<f64> = t.iter().map(|x| 0.5 * x).collect();
        assert!((fit_correction_factor(&t, &half).unwrap() - 2.0).abs() < 1e-15);
        assert!(fit_correction_factor(&t, &[0.0; 4]).is_err());
        assert!(relative_l1_error(&t, &half, 2.0).unwrap().abs() < 1e-15);
        assert!((relative_l1_error(&t, &[0.0; 4], 1.3).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_l1_error(&[0.0; 4], &t, 1.0).is_err());
    }

    #[test]
    fn total_series() {
        let field = |rates: Vec<f64>| EmissionField {
            total: rates.iter().sum(),
            source_concentration_rate: rates.clone(),
            rate_per_cell: rates,
        };
        assert_eq!(total_emission_timeseries(&[field(vec![0.0; 3]), field(vec![0.0; 3])]), vec![0.0, 0.0]);
        let single = [field(vec![0.0, 2.5, 0.0]), field(vec![0.0, 4.0, 0.0])];
        assert_eq!(total_emission_timeseries(&single), vec![2.5, 4.0]);
        let a = [field(vec![1.0, 2.0, 3.5])];
        let b = [field(vec![3.5, 1.0, 2.0])];
        assert_eq!(total_emission_timeseries(&a), total_emission_timeseries(&b));
    }

    #[test]
    fn ground_truth_sums_vehicles_per_frame() {
        use crate::trajectory::TrajectoryRecord;
        let rec = |id, frame, v, a| TrajectoryRecord {
            vehicle_id: id,
            frame,
            x_m: 10.0,
            v_ms: v,
            a_ms2: a,
        };
        let c = EmissionCoefficients::petrol_car_nox();
        // Frame 1 is empty; frame 0 has an idle car, frame 2 two moving ones.
        let set = TrajectorySet::new(
            vec![rec(1, 0, 0.0, 0.0), rec(1, 2, 10.0, 1.0), rec(2, 2, 20.0, -1.0)],
            0.0,
            100.0,
            1,
        )
        .unwrap();
        let series = ground_truth_emissions(&set, &c);
        assert_eq!(series.len(), 3);
        assert!((series[0].1 - 6.19e-4 * 3600.0).abs() < 1e-12);
        assert_eq!(series[1], (0.1, 0.0));
        let both = emission_rate_single(10.0, 1.0, &c) + emission_rate_single(20.0, -1.0, &c);
        assert!((series[2].1 - both * 3600.0).abs() < 1e-12);
        let empty = TrajectorySet::new(Vec::new(), 0.0, 1.0, 1).unwrap();
        assert!(ground_truth_emissions(&empty, &c).is_empty());
    }

    proptest! {
        #[test]
        fn regime_row_follows_threshold(v in 0.0f64..40.0, a in -5.0f64..5.0) {
            let c = EmissionCoefficients::petrol_car_nox();
            let e = emission_rate_single(v, a, &c);
            let row = if a >= -0.5 { c.accelerating } else { c.decelerating };
            prop_assert_eq!(e, row.polynomial(v, a).max(0.0));
        }

        #[test]
        fn field_is_homogeneous_in_density(scale in 0.01f64..10.0, rho in 0.0f64..133.0) {
            let state = TrafficState::new(vec![rho; 4], vec![0.0; 4], 0.0).unwrap();
            let scaled = TrafficState::new(vec![rho * scale; 4], vec![0.0; 4], 0.0).unwrap();
            let kin = KinematicsField { v: vec![30.0, 10.0, 0.0, 60.0], a: vec![0.2, -1.0, 0.0, 1.5] };
            let c = EmissionCoefficients::petrol_car_nox();
            let f1 = emission_field(&state, &kin, 0.03, 1.0, 1.0, &c).unwrap();
            let f2 = emission_field(&scaled, &kin, 0.03, 1.0, 1.0, &c).unwrap();
            for (x, y) in f1.rate_per_cell.iter().zip(&f2.rate_per_cell) {
                prop_assert!((x * scale - y).abs() <= 1e-12 * y.abs().max(1e-300));
            }
        }
    }
}
