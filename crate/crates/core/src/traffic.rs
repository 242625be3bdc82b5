//! Two-equation cell transmission (2CTM) Godunov scheme.
//!
//! The conserved variables are the density `rho` and the total property
//! `y = rho * w`. Interface fluxes come from the supply/demand construction
//! applied to the intermediate state of the local Riemann problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::units::s_to_h;

/// Density and property on the road grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    /// veh/km
    pub rho: Vec<f64>,
    /// Total property `rho * w`.
    pub y: Vec<f64>,
    /// Property per vehicle. Kept explicitly so empty cells retain the last
    /// advected value.
    pub w: Vec<f64>,
    pub time_s: f64,
}

impl TrafficState {
    pub fn new(rho: Vec<f64>, w: Vec<f64>, time_s: f64) -> Result<Self> {
        if rho.len() != w.len() {
            return Err(Error::Length {
                what: "rho/w",
                left: rho.len(),
                right: w.len(),
            });
        }
        let y = rho.iter().zip(&w).map(|(r, w)| r * w).collect();
        Ok(Self { rho, y, w, time_s })
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn speeds(&self, flux: &FluxModel) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&self.w)
            .map(|(&r, &w)| flux.velocity(r, w))
            .collect()
    }

    /// Number of vehicles per lane on the road, `sum(rho) * dx`.
    pub fn vehicle_count(&self, dx_km: f64) -> f64 {
        self.rho.iter().sum::<f64>() * dx_km
    }
}

/// Red/green cycle at the downstream end of the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLightPolicy {
    pub cycle_s: f64,
    pub red_s: f64,
    /// Shifts the cycle; with zero offset the light is green from `t = 0`.
    #[serde(default)]
    pub phase_offset_s: f64,
}

impl TrafficLightPolicy {
    pub fn new(cycle_s: f64, red_s: f64) -> Result<Self> {
        let policy = Self {
            cycle_s,
            red_s,
            phase_offset_s: 0.0,
        };
        policy.validate("light")?;
        Ok(policy)
    }

    /// Builds the cycle from its length and the green/red ratio `r = t_g / t_r`.
    pub fn from_ratio(cycle_s: f64, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::config("light.ratio", "green/red ratio must be positive"));
        }
        Self::new(cycle_s, cycle_s / (1.0 + ratio))
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.cycle_s > 0.0) {
            return Err(Error::config(
                format!("{prefix}.cycle_s"),
                "cycle length must be positive",
            ));
        }
        if !(self.red_s > 0.0) {
            return Err(Error::config(
                format!("{prefix}.red_s"),
                "red phase must be positive",
            ));
        }
        if !(self.red_s < self.cycle_s) {
            return Err(Error::config(
                format!("{prefix}.red_s"),
                "red phase must be shorter than cycle",
            ));
        }
        Ok(())
    }

    pub fn green_s(&self) -> f64 {
        self.cycle_s - self.red_s
    }

    /// `t_g / t_r`.
    pub fn ratio(&self) -> f64 {
        self.green_s() / self.red_s
    }

    /// Green occupies the first `t_g` seconds of each cycle, red the rest.
    pub fn is_red(&self, t_s: f64) -> bool {
        let phase = (t_s + self.phase_offset_s).rem_euclid(self.cycle_s);
        phase >= self.green_s()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeftBoundary {
    /// Fixed inflow density; the ghost cell borrows `w` from the first cell.
    Dirichlet { rho: f64 },
    /// Ghost cell copies the first cell.
    Neumann,
    /// No flux through the boundary.
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RightBoundary {
    /// Vehicles leave at the demand of the last cell.
    FreeOutflow,
    /// Ghost cell copies the last cell.
    Neumann,
    Closed,
    /// Zero outflow while red, free outflow while green.
    TrafficLight(TrafficLightPolicy),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPolicy {
    pub left: LeftBoundary,
    pub right: RightBoundary,
}

impl BoundaryPolicy {
    pub fn closed() -> Self {
        Self {
            left: LeftBoundary::Closed,
            right: RightBoundary::Closed,
        }
    }
}

/// Solution of the local Riemann problem at one interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannSolution {
    pub intermediate_rho: f64,
    pub intermediate_w: f64,
    /// veh/h
    pub flux_rho: f64,
    pub flux_y: f64,
}

/// Godunov flux between `left = (rho, w)` and `right = (rho, w)`.
///
/// The intermediate state keeps the left property (1-wave invariant) and
/// the right speed (2-contact invariant). Because `V(0, w) = v_max` for
/// every `w`, the right speed never needs capping.
pub fn riemann_flux(left: (f64, f64), right: (f64, f64), flux: &FluxModel) -> RiemannSolution {
    let (rho_l, w_l) = left;
    let (rho_r, w_r) = right;
    let v_right = flux.velocity(rho_r, w_r);
    if rho_l <= 0.0 {
        return RiemannSolution {
            intermediate_rho: rho_r,
            intermediate_w: w_r,
            flux_rho: 0.0,
            flux_y: 0.0,
        };
    }
    let rho_mid = flux.invert_velocity(v_right, w_l);
    let demand = flux.demand(rho_l, w_l);
    let supply = flux.supply(rho_mid, w_l);
    let f = demand.min(supply);
    RiemannSolution {
        intermediate_rho: rho_mid,
        intermediate_w: w_l,
        flux_rho: f,
        flux_y: w_l * f,
    }
}

/// Largest stable time step `dx / (2 v_max)`, in seconds.
pub fn cfl_bound_s(dx_km: f64, flux: &FluxModel) -> f64 {
    crate::units::h_to_s(dx_km / (2.0 * flux.v_max))
}

/// Interface fluxes `(F^rho, F^y)` for the `n + 1` interfaces of an `n`-cell road.
pub fn interface_fluxes(
    state: &TrafficState,
    bc: &BoundaryPolicy,
    flux: &FluxModel,
) -> (Vec<f64>, Vec<f64>) {
    let n = state.len();
    let mut f_rho = vec![0.0; n + 1];
    let mut f_y = vec![0.0; n + 1];

    match bc.left {
        LeftBoundary::Closed => {}
        LeftBoundary::Dirichlet { rho } => {
            let s = riemann_flux((rho, state.w[0]), (state.rho[0], state.w[0]), flux);
            f_rho[0] = s.flux_rho;
            f_y[0] = s.flux_y;
        }
        LeftBoundary::Neumann => {
            let cell = (state.rho[0], state.w[0]);
            let s = riemann_flux(cell, cell, flux);
            f_rho[0] = s.flux_rho;
            f_y[0] = s.flux_y;
        }
    }

    for i in 1..n {
        let s = riemann_flux(
            (state.rho[i - 1], state.w[i - 1]),
            (state.rho[i], state.w[i]),
            flux,
        );
        f_rho[i] = s.flux_rho;
        f_y[i] = s.flux_y;
    }

    let last = n - 1;
    let open = match bc.right {
        RightBoundary::Closed => false,
        RightBoundary::FreeOutflow => true,
        RightBoundary::TrafficLight(light) => !light.is_red(state.time_s),
        RightBoundary::Neumann => {
            let cell = (state.rho[last], state.w[last]);
            let s = riemann_flux(cell, cell, flux);
            f_rho[n] = s.flux_rho;
            f_y[n] = s.flux_y;
            false
        }
    };
    if open {
        let d = flux.demand(state.rho[last], state.w[last]);
        f_rho[n] = d;
        f_y[n] = state.w[last] * d;
    }
    (f_rho, f_y)
}

/// Advances the state by one conservative 2CTM step of `dt_s` seconds.
pub fn step_2ctm(
    state: &TrafficState,
    bc: &BoundaryPolicy,
    flux: &FluxModel,
    dx_km: f64,
    dt_s: f64,
) -> Result<TrafficState> {
    let bound = cfl_bound_s(dx_km, flux);
    if dt_s > bound * (1.0 + 1e-12) || dt_s <= 0.0 {
        return Err(Error::Cfl {
            dt_s,
            bound_s: bound,
        });
    }
    let n = state.len();
    let ratio = s_to_h(dt_s) / dx_km;
    let (f_rho, f_y) = interface_fluxes(state, bc, flux);

    let mut rho = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = state.rho[i] - ratio * (f_rho[i + 1] - f_rho[i]);
        let mut yi = state.y[i] - ratio * (f_y[i + 1] - f_y[i]);
        // Positivity and the jam bound hold exactly under the CFL condition;
        // only roundoff can push values past them.
        if r < 0.0 {
            r = 0.0;
            yi = 0.0;
        } else if r > flux.rho_max {
            r = flux.rho_max;
        }
        let wi = if r > 0.0 {
            let raw = yi / r;
            let clamped = raw.clamp(flux.w_l, flux.w_r);
            if clamped != raw {
                yi = r * clamped;
            }
            clamped
        } else {
            state.w[i]
        };
        rho.push(r);
        y.push(yi);
        w.push(wi);
    }
    Ok(TrafficState {
        rho,
        y,
        w,
        time_s: state.time_s + dt_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_godunov(f: impl Fn(f64) -> f64, rho_c: f64, ul: f64, ur: f64) -> f64 {
        // Classical scalar Godunov flux for a concave flux with maximum at rho_c.
        if ul <= ur {
            f(ul).min(f(ur))
        } else if ur <= rho_c && rho_c <= ul {
            f(rho_c)
        } else {
            f(ul).max(f(ur))
        }
    }

    #[test]
    fn constant_state_gives_exact_flux() {
        let m = FluxModel::urban_single_lane();
        for rho in [0.0, 5.0, 19.0, 40.0, 66.5, 100.0, 133.0] {
            for w in [m.w_l, 1500.0, m.w_r] {
                let s = riemann_flux((rho, w), (rho, w), &m);
                assert!((s.flux_rho - m.flux(rho, w)).abs() <= 1e-9 * m.flux(rho, w).max(1.0));
            }
        }
    }

    #[test]
    fn left_vacuum_sends_nothing() {
        let m = FluxModel::urban_single_lane();
        let s = riemann_flux((0.0, m.w_r), (60.0, m.w_l), &m);
        assert_eq!(s.flux_rho, 0.0);
        assert_eq!(s.flux_y, 0.0);
    }

    #[test]
    fn free_flow_matches_scalar_greenshields_godunov() {
        // Both states with w = w_r: the flux is a single Greenshields curve.
        let m = FluxModel::urban_single_lane();
        let g = |r: f64| m.upper_envelope(r);
        let grid: Vec<f64> = (0..=40).map(|k| m.rho_max * k as f64 / 40.0).collect();
        for &ul in &grid {
            for &ur in &grid {
                let s = riemann_flux((ul, m.w_r), (ur, m.w_r), &m);
                let expected = scalar_godunov(g, 0.5 * m.rho_max, ul, ur);
                assert!(
                    (s.flux_rho - expected).abs() <= 1e-9 * expected.max(1.0),
                    "ul={ul} ur={ur}: {} vs {expected}",
                    s.flux_rho
                );
            }
        }
    }

    #[test]
    fn intermediate_state_invariants() {
        let m = FluxModel::i80();
        for &(rl, wl, rr, wr) in &[
            (300.0, 8000.0, 500.0, 12_000.0),
            (50.0, 9000.0, 700.0, 7000.0),
            (600.0, m.w_r, 120.0, m.w_l),
        ] {
            let s = riemann_flux((rl, wl), (rr, wr), &m);
            assert_eq!(s.intermediate_w, wl);
            let v_mid = m.velocity(s.intermediate_rho, wl);
            let target = m.velocity(rr, wr).min(m.velocity(0.0, wl));
            assert!((v_mid - target).abs() <= 1e-10 * target.max(1.0));
        }
    }

    #[test]
    fn uniform_state_is_stationary_with_neumann_ends() {
        let m = FluxModel::urban_single_lane();
        let bc = BoundaryPolicy {
            left: LeftBoundary::Neumann,
            right: RightBoundary::Neumann,
        };
        for rho in [0.0, 15.0, 52.0, 120.0] {
            let state = TrafficState::new(vec![rho; 50], vec![1800.0; 50], 0.0).unwrap();
            let next = step_2ctm(&state, &bc, &m, 0.03, 0.7).unwrap();
            for i in 0..50 {
                assert!((next.rho[i] - rho).abs() < 1e-12);
                assert!((next.w[i] - 1800.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn free_outflow_drains_a_congested_end() {
        // Congested last cell: demand is capacity, so the road empties from
        // the exit while a ghost-copy boundary would hold it.
        let m = FluxModel::urban_single_lane();
        let state = TrafficState::new(vec![52.0; 20], vec![m.w_l; 20], 0.0).unwrap();
        let free = BoundaryPolicy {
            left: LeftBoundary::Neumann,
            right: RightBoundary::FreeOutflow,
        };
        let next = step_2ctm(&state, &free, &m, 0.03, 0.7).unwrap();
        assert!(next.rho[19] < 52.0);
        assert!((next.rho[0] - 52.0).abs() < 1e-12);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let m = FluxModel::urban_single_lane();
        let state = TrafficState::new(vec![52.0; 10], vec![m.w_r; 10], 0.0).unwrap();
        let err = step_2ctm(&state, &BoundaryPolicy::closed(), &m, 0.03, 1.5).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
        assert!((cfl_bound_s(0.03, &m) - 0.771_428_571_428_571_4).abs() < 1e-12);
    }

    #[test]
    fn light_phases() {
        let light = TrafficLightPolicy::new(300.0, 120.0).unwrap();
        assert!(!light.is_red(0.0));
        assert!(!light.is_red(179.9));
        assert!(light.is_red(180.0));
        assert!(light.is_red(299.9));
        assert!(!light.is_red(300.0));
        assert!((light.ratio() - 1.5).abs() < 1e-15);
        let from_ratio = TrafficLightPolicy::from_ratio(450.0, 1.5).unwrap();
        assert!((from_ratio.red_s - 180.0).abs() < 1e-12);
        assert!(TrafficLightPolicy::new(300.0, 300.0).is_err());
    }

    proptest! {
        #[test]
        fn density_stays_in_bounds(
            seed in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 30),
            steps in 1usize..200,
            red in proptest::bool::ANY,
        ) {
            let m = FluxModel::urban_single_lane();
            let rho: Vec<f64> = seed.iter().map(|(r, _)| r * m.rho_max).collect();
            let w: Vec<f64> = seed.iter().map(|(_, l)| m.w_l + l * (m.w_r - m.w_l)).collect();
            let mut state = TrafficState::new(rho, w, 0.0).unwrap();
            let right = if red {
                RightBoundary::Closed
            } else {
                RightBoundary::FreeOutflow
            };
            let bc = BoundaryPolicy { left: LeftBoundary::Dirichlet { rho: 52.0 }, right };
            let dt = cfl_bound_s(0.03, &m);
            for _ in 0..steps {
                state = step_2ctm(&state, &bc, &m, 0.03, dt).unwrap();
                for (&r, &wi) in state.rho.iter().zip(&state.w) {
                    prop_assert!((0.0..=m.rho_max).contains(&r));
                    prop_assert!((m.w_l..=m.w_r).contains(&wi));
                }
            }
        }
    }
}
