use proptest::prelude::*;
use roadsmog::flux::FluxModel;
use roadsmog::traffic::{
    cfl_bound_s, step_2ctm, BoundaryPolicy, LeftBoundary, RightBoundary, TrafficLightPolicy, TrafficState,
};

/// Scalar Godunov step for a common `w`, with the flux written out by hand:
/// free branch `rho v_max (1 - rho/rho_max)`, congested branch the blend of
/// the straight chord and that parabola.
fn scalar_step(rho: &[f64], m: &FluxModel, lambda: f64, dx: f64, dt_s: f64) -> Vec<f64> {
    let g = |r: f64| r * m.v_max * (1.0 - r / m.rho_max);
    let q = |r: f64| {
        if r <= m.rho_f {
            g(r)
        } else {
            let chord = g(m.rho_f) * (m.rho_max - r) / (m.rho_max - m.rho_f);
            (1.0 - lambda) * chord + lambda * g(r)
        }
    };
    // The maximum sits at rho_f or at the parabola's vertex, whichever the
    // congested branch reaches first.
    let dq_right_of_rho_f = -(1.0 - lambda) * g(m.rho_f) / (m.rho_max - m.rho_f)
        + lambda * m.v_max * (1.0 - 2.0 * m.rho_f / m.rho_max);
    let rho_c = if dq_right_of_rho_f <= 0.0 {
        m.rho_f
    } else {
        let slope = (1.0 - lambda) * g(m.rho_f) / (m.rho_max - m.rho_f);
        0.5 * m.rho_max * (1.0 - slope / (lambda * m.v_max))
    };
    let demand = |r: f64| if r <= rho_c { q(r) } else { q(rho_c) };
    let supply = |r: f64| if r >= rho_c { q(r) } else { q(rho_c) };
    let n = rho.len();
    let mut f = vec![0.0; n + 1];
    for i in 1..n {
        f[i] = demand(rho[i - 1]).min(supply(rho[i]));
    }
    let ratio = dt_s / 3600.0 / dx;
    (0..n).map(|i| rho[i] - ratio * (f[i + 1] - f[i])).collect()
}

#[test]
fn equal_w_reduces_to_scalar_godunov() {
    for (m, lambda) in [(FluxModel::urban_single_lane(), 0.3), (FluxModel::i80(), 0.8)] {
        let w = m.w_l + lambda * (m.w_r - m.w_l);
        let dx = 0.02;
        let dt = cfl_bound_s(dx, &m);
        let n = 60;
        let mut rho: Vec<f64> = (0..n)
            .map(|i| m.rho_max * (0.5 + 0.45 * (i as f64 * 0.37).sin()))
            .collect();
        let mut state = TrafficState::new(rho.clone(), vec![w; n], 0.0).unwrap();
        for _ in 0..200 {
            state = step_2ctm(&state, &BoundaryPolicy::closed(), &m, dx, dt).unwrap();
            rho = scalar_step(&rho, &m, lambda, dx, dt);
            for (a, b) in state.rho.iter().zip(&rho) {
                assert!((a - b).abs() <= 1e-9 * m.rho_max, "{a} vs {b}");
            }
            assert!(state.w.iter().all(|x| (x - w).abs() <= 1e-9 * w));
        }
    }
}

#[test]
fn red_light_stores_every_arriving_vehicle() {
    let m = FluxModel::urban_single_lane();
    let light = TrafficLightPolicy::new(300.0, 200.0).unwrap();
    let bc = BoundaryPolicy {
        left: LeftBoundary::Dirichlet { rho: 52.0 },
        right: RightBoundary::TrafficLight(light),
    };
    let dx = 0.03;
    let dt = cfl_bound_s(dx, &m);
    let mut state = TrafficState::new(vec![10.0; 50], vec![m.w_r; 50], 101.0).unwrap();
    let mut t = state.time_s;
    while t < 290.0 {
        assert!(light.is_red(t));
        let before = state.vehicle_count(dx);
        let inflow = roadsmog::traffic::interface_fluxes(&state, &bc, &m).0[0];
        state = step_2ctm(&state, &bc, &m, dx, dt).unwrap();
        t = state.time_s;
        let gained = state.vehicle_count(dx) - before;
        assert!((gained - inflow * dt / 3600.0).abs() <= 1e-12 * before.max(1.0));
    }
    // The queue backs up from the stop line at jam density.
    assert!((state.rho[49] - m.rho_max).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closed_road_conserves_vehicles_and_bounds(
        seed in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 5..80),
        i80 in any::<bool>(),
    ) {
        let m = if i80 { FluxModel::i80() } else { FluxModel::urban_single_lane() };
        let rho: Vec<f64> = seed.iter().map(|p| p.0 * m.rho_max).collect();
        let w: Vec<f64> = seed.iter().map(|p| m.w_l + p.1 * (m.w_r - m.w_l)).collect();
        let dx = 0.05;
        let dt = cfl_bound_s(dx, &m);
        let mut state = TrafficState::new(rho, w, 0.0).unwrap();
        let (m0, y0): (f64, f64) = (state.vehicle_count(dx), state.y.iter().sum());
        for _ in 0..300 {
            state = step_2ctm(&state, &BoundaryPolicy::closed(), &m, dx, dt).unwrap();
            prop_assert!(state.rho.iter().all(|r| (0.0..=m.rho_max).contains(r)));
            prop_assert!(state.w.iter().all(|w| (m.w_l..=m.w_r).contains(w)));
        }
        let scale = m0.max(1e-9);
        prop_assert!((state.vehicle_count(dx) - m0).abs() <= 1e-10 * scale);
        let y1: f64 = state.y.iter().sum();
        prop_assert!((y1 - y0).abs() <= 1e-10 * y0.max(1e-9));
    }
}
