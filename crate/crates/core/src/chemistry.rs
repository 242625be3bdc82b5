//! Five-species photochemistry: NO2 photolysis, ozone formation and ozone
//! titration by NO, fed by a traffic NOx source.
//!
//! State order is `[O, O2, O3, NO, NO2]` in molecule/cm³, time in seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rosenbrock::{Rosenbrock23, RosenbrockOptions, StepStats, StiffSystem};
use crate::units::{Species, UnitContext, SECONDS_PER_HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConstants {
    /// NO2 + hν → O + NO
    pub k1_per_s: f64,
    /// O + O2 + O2 → O3 + O2
    pub k2_cm6_per_molecule2_s: f64,
    /// O3 + NO → O2 + NO2
    pub k3_cm3_per_molecule_s: f64,
    /// Mass fraction of emitted NOx released as NO2.
    pub no2_fraction: f64,
}

impl Default for RateConstants {
    fn default() -> Self {
        Self {
            k1_per_s: 0.02,
            k2_cm6_per_molecule2_s: 6.09e-34,
            k3_cm3_per_molecule_s: 1.81e-14,
            no2_fraction: 0.15,
        }
    }
}

impl RateConstants {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, v) in [
            ("k1_per_s", self.k1_per_s),
            ("k2_cm6_per_molecule2_s", self.k2_cm6_per_molecule2_s),
            ("k3_cm3_per_molecule_s", self.k3_cm3_per_molecule_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{prefix}.{name}"), "rate constant must be positive"));
            }
        }
        if !(self.no2_fraction > 0.0 && self.no2_fraction < 1.0) {
            return Err(Error::config(
                format!("{prefix}.no2_fraction"),
                "NO2 fraction must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChemistryConfig {
    #[serde(default = "enabled")]
    pub enabled: bool,
    #[serde(default)]
    pub rates: RateConstants,
    pub o2_molecules_cm3: f64,
    pub rtol: f64,
    pub atol_molecules_cm3: f64,
    /// Seconds of emission loaded into each box as the initial NO/NO2.
    /// Defaults to the effective traffic time step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_emission_window_s: Option<f64>,
}

fn enabled() -> bool {
    true
}

impl Default for ChemistryConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rates: RateConstants::default(),
            o2_molecules_cm3: 5.02e18,
            rtol: 1e-6,
            atol_molecules_cm3: 1.0,
            initial_emission_window_s: None,
        }
    }
}

impl ChemistryConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.rates.validate(&format!("{prefix}.rates"))?;
        if !(self.o2_molecules_cm3 >= 0.0) {
            return Err(Error::config(format!("{prefix}.o2_molecules_cm3"), "must be nonnegative"));
        }
        if !(self.rtol > 0.0) {
            return Err(Error::config(format!("{prefix}.rtol"), "tolerance must be positive"));
        }
        if !(self.atol_molecules_cm3 > 0.0) {
            return Err(Error::config(format!("{prefix}.atol_molecules_cm3"), "tolerance must be positive"));
        }
        if let Some(w) = self.initial_emission_window_s {
            if !(w >= 0.0) {
                return Err(Error::config(
                    format!("{prefix}.initial_emission_window_s"),
                    "window must be nonnegative",
                ));
            }
        }
        Ok(())
    }

    pub fn integrator_options(&self) -> RosenbrockOptions {
        RosenbrockOptions {
            rtol: self.rtol,
            atol: self.atol_molecules_cm3,
            ..Default::default()
        }
    }
}

/// Species concentrations at one location, molecule/cm³.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChemState {
    pub psi: [f64; 5],
    pub time_s: f64,
}

/// Splits a NOx mass source (g/(km³·s)) into NO and NO2 by mass and converts
/// each part with its own molar mass. Returns a per-species source vector in
/// molecule/(cm³·s).
pub fn nox_source_molecules(s_g_per_km3_s: f64, k: &RateConstants, units: &UnitContext) -> [f64; 5] {
    let p = k.no2_fraction;
    let mut out = [0.0; 5];
    out[Species::NO.index()] = units.g_per_km3_to_molecules_per_cm3(Species::NO, (1.0 - p) * s_g_per_km3_s);
    out[Species::NO2.index()] = units.g_per_km3_to_molecules_per_cm3(Species::NO2, p * s_g_per_km3_s);
    out
}

fn rates_unchecked(psi: &[f64; 5], source: &[f64; 5], k: &RateConstants, freeze_o2: bool) -> [f64; 5] {
    let [o, o2, o3, no, no2] = *psi;
    let photolysis = k.k1_per_s * no2;
    let formation = k.k2_cm6_per_molecule2_s * o * o2 * o2;
    let titration = k.k3_cm3_per_molecule_s * o3 * no;
    [
        photolysis - formation + source[0],
        if freeze_o2 { 0.0 } else { titration - formation + source[1] },
        formation - titration + source[2],
        photolysis - titration + source[3],
        titration - photolysis + source[4],
    ]
}

/// Time derivative of the state. `source` is a per-species source vector in
/// molecule/(cm³·s), usually from [`nox_source_molecules`].
pub fn rhs(psi: &[f64; 5], source: &[f64; 5], k: &RateConstants) -> Result<[f64; 5]> {
    for s in Species::ALL {
        let v = psi[s.index()];
        if v < 0.0 {
            return Err(Error::NegativeConcentration {
                species: s.label(),
                value: v,
            });
        }
    }
    Ok(rates_unchecked(psi, source, k, false))
}

fn jacobian_inner(psi: &[f64; 5], k: &RateConstants, freeze_o2: bool) -> [[f64; 5]; 5] {
    let [o, o2, o3, no, _] = *psi;
    let k1 = k.k1_per_s;
    let a = k.k2_cm6_per_molecule2_s * o2 * o2;
    let b = 2.0 * k.k2_cm6_per_molecule2_s * o * o2;
    let c = k.k3_cm3_per_molecule_s * no;
    let d = k.k3_cm3_per_molecule_s * o3;
    let o2_row = if freeze_o2 { [0.0; 5] } else { [-a, -b, c, d, 0.0] };
    [
        [-a, -b, 0.0, 0.0, k1],
        o2_row,
        [a, b, -c, -d, 0.0],
        [0.0, 0.0, -c, -d, k1],
        [0.0, 0.0, c, d, -k1],
    ]
}

/// Analytic Jacobian of [`rhs`] with respect to the state (1/s).
pub fn jacobian(psi: &[f64; 5], k: &RateConstants) -> [[f64; 5]; 5] {
    jacobian_inner(psi, k, false)
}

/// One box with a constant source between breakpoints.
#[derive(Debug, Clone, Copy)]
pub struct BoxChemistry {
    pub rates: RateConstants,
    /// molecule/(cm³·s) per species
    pub source: [f64; 5],
    /// Holds O2 fixed, as in the dispersion runs.
    pub freeze_o2: bool,
}

impl StiffSystem<5> for BoxChemistry {
    fn rhs(&self, y: &[f64; 5]) -> [f64; 5] {
        rates_unchecked(y, &self.source, &self.rates, self.freeze_o2)
    }

    fn jacobian(&self, y: &[f64; 5]) -> [[f64; 5]; 5] {
        jacobian_inner(y, &self.rates, self.freeze_o2)
    }
}

/// Piecewise-constant NOx mass source: `values[n]` (g/(km³·s)) holds on
/// `[breakpoints[n], breakpoints[n + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSource {
    pub breakpoints_s: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseSource {
    pub fn zero(t0: f64, t1: f64) -> Self {
        Self {
            breakpoints_s: vec![t0, t1],
            values: vec![0.0],
        }
    }

    fn check(&self) -> Result<()> {
        if self.breakpoints_s.len() != self.values.len() + 1 {
            return Err(Error::Length {
                what: "source breakpoints / values",
                left: self.breakpoints_s.len(),
                right: self.values.len() + 1,
            });
        }
        Ok(())
    }
}

/// Integrates one box over the source's breakpoints and returns the state at
/// every accepted step (the first entry is the initial state).
pub fn integrate_adaptive(
    psi0: ChemState,
    source: &PiecewiseSource,
    k: &RateConstants,
    units: &UnitContext,
    opts: RosenbrockOptions,
) -> Result<(Vec<ChemState>, StepStats)> {
    source.check()?;
    rhs(&psi0.psi, &[0.0; 5], k)?;
    let mut solver = Rosenbrock23::new(opts);
    let mut y = psi0.psi;
    let mut out = vec![psi0];
    for (n, &s) in source.values.iter().enumerate() {
        let sys = BoxChemistry {
            rates: *k,
            source: nox_source_molecules(s, k, units),
            freeze_o2: false,
        };
        let (t0, t1) = (source.breakpoints_s[n], source.breakpoints_s[n + 1]);
        solver.integrate(&sys, &mut y, t0, t1, |t, psi| out.push(ChemState { psi: *psi, time_s: t }))?;
    }
    Ok((out, solver.stats))
}

/// Result of the per-cell roadside integration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadsideChemistry {
    pub times_s: Vec<f64>,
    /// `states[n][i]`: cell `i` at `times_s[n]`, molecule/cm³.
    pub states: Vec<Vec<[f64; 5]>>,
    /// Per-time sums over cells, g/km³.
    pub totals_g_per_km3: Vec<[f64; 5]>,
    pub stats: StepStats,
}

/// Initial box contents: background O2 plus `window_s` seconds of the cell's
/// NOx source, split into NO and NO2.
pub fn initial_box_state(source_g_per_km3_h: f64, window_s: f64, cfg: &ChemistryConfig, units: &UnitContext) -> [f64; 5] {
    let mass = source_g_per_km3_h / SECONDS_PER_HOUR * window_s;
    let mut psi = nox_source_molecules(mass, &cfg.rates, units);
    psi[Species::O2.index()] = cfg.o2_molecules_cm3;
    psi
}

/// Integrates every road cell independently. `sources[n][i]` is the NOx
/// source of cell `i` (g/(km³·h)) held constant on `[times[n], times[n+1])`;
/// the last sample is only used for the initial condition when `times` has
/// one more entry than the number of intervals.
pub fn run_roadside_chemistry(
    times_s: &[f64],
    sources: &[Vec<f64>],
    psi0: &[[f64; 5]],
    cfg: &ChemistryConfig,
    units: &UnitContext,
) -> Result<RoadsideChemistry> {
    if times_s.is_empty() || sources.len() + 1 < times_s.len() {
        return Err(Error::Length {
            what: "chemistry times / source samples",
            left: times_s.len(),
            right: sources.len(),
        });
    }
    let cells = psi0.len();
    for row in sources {
        if row.len() != cells {
            return Err(Error::Length {
                what: "source cells / initial states",
                left: row.len(),
                right: cells,
            });
        }
    }
    let k = &cfg.rates;
    let opts = cfg.integrator_options();
    let mut states = vec![vec![[0.0; 5]; cells]; times_s.len()];
    let mut stats = StepStats::default();
    for (i, start) in psi0.iter().enumerate() {
        let mut run_cell = || -> Result<StepStats> {
            rhs(start, &[0.0; 5], k)?;
            let mut solver = Rosenbrock23::new(opts);
            let mut y = *start;
            states[0][i] = y;
            for n in 0..times_s.len() - 1 {
                let s = sources[n][i] / SECONDS_PER_HOUR;
                let sys = BoxChemistry {
                    rates: *k,
                    source: nox_source_molecules(s, k, units),
                    freeze_o2: false,
                };
                solver.integrate(&sys, &mut y, times_s[n], times_s[n + 1], |_, _| {})?;
                states[n + 1][i] = y;
            }
            Ok(solver.stats)
        };
        let cell_stats = run_cell().map_err(|e| Error::Cell {
            cell: i,
            source: Box::new(e),
        })?;
        stats.accepted += cell_stats.accepted;
        stats.rejected += cell_stats.rejected;
    }
    let totals_g_per_km3 = states
        .iter()
        .map(|row| {
            let mut tot = [0.0; 5];
            for psi in row {
                let g = units.state_to_g_per_km3(psi);
                for s in 0..5 {
                    tot[s] += g[s];
                }
            }
            tot
        })
        .collect();
    Ok(RoadsideChemistry {
        times_s: times_s.to_vec(),
        states,
        totals_g_per_km3,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> RateConstants {
        RateConstants::default()
    }

    #[test]
    fn pure_oxygen_is_stationary() {
        let d = rhs(&[0.0, 5.02e18, 0.0, 0.0, 0.0], &[0.0; 5], &k()).unwrap();
        assert_eq!(d, [0.0; 5]);
    }

    #[test]
    fn negative_state_is_rejected() {
        assert!(matches!(
            rhs(&[0.0, 1.0, -1.0, 0.0, 0.0], &[0.0; 5], &k()),
            Err(Error::NegativeConcentration { species: "O3", .. })
        ));
    }

    #[test]
    fn source_split_is_by_mass() {
        let u = UnitContext::default();
        let s = nox_source_molecules(100.0, &k(), &u);
        let back_no = u.molecules_per_cm3_to_g_per_km3(Species::NO, s[3]);
        let back_no2 = u.molecules_per_cm3_to_g_per_km3(Species::NO2, s[4]);
        assert!((back_no - 85.0).abs() < 1e-9);
        assert!((back_no2 - 15.0).abs() < 1e-9);
        assert_eq!(&s[..3], &[0.0; 3]);
    }

    #[test]
    fn photostationary_point_is_an_equilibrium() {
        // O from k2 ψ1 ψ2² = k1 ψ5, O3 from k3 ψ3 ψ4 = k1 ψ5.
        let kk = k();
        let (o2, no, no2) = (5.02e18, 3.0e12, 4.0e11);
        let o = kk.k1_per_s * no2 / (kk.k2_cm6_per_molecule2_s * o2 * o2);
        let o3 = kk.k1_per_s * no2 / (kk.k3_cm3_per_molecule_s * no);
        let psi = [o, o2, o3, no, no2];
        let d = rhs(&psi, &[0.0; 5], &kk).unwrap();
        for (i, di) in d.iter().enumerate() {
            assert!(di.abs() <= 1e-9 * kk.k1_per_s * no2, "{i}: {di}");
        }
    }

    proptest! {
        #[test]
        fn nitrogen_and_oxygen_balances(
            o in 0.0f64..1e8, o3 in 0.0f64..1e12, no in 0.0f64..1e13, no2 in 0.0f64..1e13,
            s4 in 0.0f64..1e10, s5 in 0.0f64..1e9,
        ) {
            let psi = [o, 5.02e18, o3, no, no2];
            let src = [0.0, 0.0, 0.0, s4, s5];
            let d = rhs(&psi, &src, &k()).unwrap();
            let scale = k().k1_per_s * no2 + k().k3_cm3_per_molecule_s * o3 * no
                + k().k2_cm6_per_molecule2_s * o * 5.02e18 * 5.02e18 + s4 + s5 + 1.0;
            prop_assert!((d[3] + d[4] - (s4 + s5)).abs() <= 1e-12 * scale);
            let oxygen = d[0] + 2.0 * d[1] + 3.0 * d[2] + d[3] + 2.0 * d[4];
            prop_assert!((oxygen - (s4 + 2.0 * s5)).abs() <= 1e-12 * scale * 4.0);
        }

        #[test]
        fn jacobian_matches_central_differences(
            o in 1e3f64..1e8, o2 in 1e17f64..1e19, o3 in 1e8f64..1e12, no in 1e9f64..1e13, no2 in 1e9f64..1e13,
        ) {
            let psi = [o, o2, o3, no, no2];
            let j = jacobian(&psi, &k());
            // The rates are at most quadratic in each component, so central
            // differences are exact up to rounding for any step; a large step
            // keeps the rounding far below the tolerance.
            for c in 0..5 {
                let h = psi[c] * 0.5;
                let mut up = psi;
                let mut dn = psi;
                up[c] += h;
                dn[c] -= h;
                let fu = rhs(&up, &[0.0; 5], &k()).unwrap();
                let fd = rhs(&dn, &[0.0; 5], &k()).unwrap();
                for r in 0..5 {
                    let fd_val = (fu[r] - fd[r]) / (2.0 * h);
                    prop_assert!((fd_val - j[r][c]).abs() <= 1e-6 * j[r][c].abs(),
                        "J[{}][{}] = {} vs {}", r, c, j[r][c], fd_val);
                }
            }
        }
    }

    #[test]
    fn zero_source_keeps_totals_constant() {
        let u = UnitContext::default();
        let cfg = ChemistryConfig::default();
        let psi0 = vec![[0.0, 5.02e18, 0.0, 0.0, 0.0]; 3];
        let times: Vec<f64> = (0..5).map(|n| n as f64 * 0.75).collect();
        let sources = vec![vec![0.0; 3]; 4];
        let run = run_roadside_chemistry(&times, &sources, &psi0, &cfg, &u).unwrap();
        for tot in &run.totals_g_per_km3 {
            assert_eq!(*tot, run.totals_g_per_km3[0]);
        }
    }

    #[test]
    fn cell_errors_carry_the_index() {
        let u = UnitContext::default();
        let cfg = ChemistryConfig::default();
        let psi0 = vec![[0.0, 5.02e18, 0.0, 0.0, 0.0], [0.0, 5.02e18, -5.0, 0.0, 0.0]];
        let err = run_roadside_chemistry(&[0.0, 1.0], &[vec![0.0, 0.0]], &psi0, &cfg, &u).unwrap_err();
        assert!(matches!(err, Error::Cell { cell: 1, .. }), "{err}");
    }
}
