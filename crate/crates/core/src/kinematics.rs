//! Cell speeds and accelerations derived from a traffic state.

use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::traffic::TrafficState;
use crate::units::{kmh2_to_ms2, s_to_h};

/// Per-cell speed (km/h) and acceleration (m/s²).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KinematicsField {
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

/// Lagrangian acceleration `a = -V_rho * rho * v_x`, with a centered speed
/// gradient inside the road and one-sided differences at the two ends.
pub fn acceleration_analytic(state: &TrafficState, flux: &FluxModel, dx_km: f64) -> KinematicsField {
    let v = state.speeds(flux);
    let n = v.len();
    let mut a = vec![0.0; n];
    if n < 2 {
        return KinematicsField { v, a };
    }
    for i in 0..n {
        let dv_dx = if i == 0 {
            (v[1] - v[0]) / dx_km
        } else if i == n - 1 {
            (v[n - 1] - v[n - 2]) / dx_km
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * dx_km)
        };
        let rho = state.rho[i];
        let a_kmh2 = -flux.velocity_drho(rho, state.w[i]) * rho * dv_dx;
        a[i] = kmh2_to_ms2(a_kmh2);
    }
    KinematicsField { v, a }
}

/// Average cell acceleration from two consecutive speed fields (km/h):
/// a temporal part plus the change seen by vehicles moving to the next cell.
/// The last cell has no downstream neighbour and keeps only the temporal part.
pub fn acceleration_discrete(v_now: &[f64], v_next: &[f64], dt_s: f64, dx_km: f64) -> Result<Vec<f64>> {
    if v_now.len() != v_next.len() {
        return Err(Error::Length {
            what: "speed fields",
            left: v_now.len(),
            right: v_next.len(),
        });
    }
    let dt_h = s_to_h(dt_s);
    let n = v_now.len();
    let a = (0..n)
        .map(|i| {
            let downstream = if i + 1 < n { v_next[i + 1] } else { v_next[i] };
            let temporal = (v_next[i] - v_now[i]) / dt_h;
            let spatial = v_now[i] * (downstream - v_next[i]) / dx_km;
            kmh2_to_ms2(temporal + spatial)
        })
        .collect();
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_state_has_no_acceleration() {
        let m = FluxModel::urban_single_lane();
        let state = TrafficState::new(vec![52.0; 30], vec![m.w_r; 30], 0.0).unwrap();
        let k = acceleration_analytic(&state, &m, 0.03);
        assert!(k.a.iter().all(|&a| a == 0.0));
        assert!(k.v.iter().all(|&v| (v - m.velocity(52.0, m.w_r)).abs() < 1e-12));
    }

    #[test]
    fn linear_free_flow_profile_matches_hand_formula() {
        // Free branch: V = v_max (1 - rho / rho_max), so V_rho = -v_max / rho_max
        // and a linear density ramp gives a linear speed ramp.
        let m = FluxModel::urban_single_lane();
        let dx = 0.03;
        let rho: Vec<f64> = (0..10).map(|i| 18.0 - 1.5 * i as f64).collect();
        let state = TrafficState::new(rho.clone(), vec![m.w_l; 10], 0.0).unwrap();
        let k = acceleration_analytic(&state, &m, dx);
        let dv = m.v_max / m.rho_max * 1.5; // speed gain per cell
        for i in 1..9 {
            // V_rho by an independent central difference of V in rho.
            let h = 1e-4;
            let v_rho = (m.velocity(rho[i] + h, m.w_l) - m.velocity(rho[i] - h, m.w_l)) / (2.0 * h);
            let expected = kmh2_to_ms2(-v_rho * rho[i] * (2.0 * dv) / (2.0 * dx));
            assert!((k.a[i] - expected).abs() <= 1e-6 * expected.abs(), "{i}: {} vs {expected}", k.a[i]);
        }
    }

    #[test]
    fn discrete_acceleration_special_cases() {
        let dx = 0.03;
        let dt = 0.75;
        let same = acceleration_discrete(&[40.0; 8], &[40.0; 8], dt, dx).unwrap();
        assert!(same.iter().all(|&a| a == 0.0));

        let delta = 0.9;
        let up = acceleration_discrete(&[40.0; 8], &[40.0 + delta; 8], dt, dx).unwrap();
        let expected = kmh2_to_ms2(delta / s_to_h(dt));
        for a in up {
            assert!((a - expected).abs() < 1e-12 * expected);
        }
        assert!(acceleration_discrete(&[1.0; 3], &[1.0; 4], dt, dx).is_err());
    }
}
