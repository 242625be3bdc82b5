//! Unit conventions.
//!
//! Traffic quantities live in km, h and vehicles; emission rates come out of
//! the vehicle model in g/s; the photochemistry works in molecule/cm³ because
//! its rate constants are tabulated that way. Every crossing between those
//! systems goes through the helpers here.

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const CM3_PER_KM3: f64 = 1.0e15;
pub const M_PER_KM: f64 = 1000.0;

/// Chemical species tracked by the photochemistry, in state-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    O,
    O2,
    O3,
    NO,
    NO2,
}

impl Species {
    pub const ALL: [Species; 5] = [
        Species::O,
        Species::O2,
        Species::O3,
        Species::NO,
        Species::NO2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Species::O => "O",
            Species::O2 => "O2",
            Species::O3 => "O3",
            Species::NO => "NO",
            Species::NO2 => "NO2",
        }
    }
}

/// Molar masses and Avogadro's number used for every mass/count conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitContext {
    /// g/mol, indexed like [`Species::ALL`].
    pub molar_masses: [f64; 5],
    pub avogadro: f64,
}

impl Default for UnitContext {
    fn default() -> Self {
        Self {
            molar_masses: [16.0, 32.0, 48.0, 30.0, 46.0],
            avogadro: 6.022_140_76e23,
        }
    }
}

impl UnitContext {
    pub fn molar_mass(&self, species: Species) -> f64 {
        self.molar_masses[species.index()]
    }

    /// g/km³ → molecule/cm³.
    pub fn g_per_km3_to_molecules_per_cm3(&self, species: Species, value: f64) -> f64 {
        value / self.molar_mass(species) * self.avogadro / CM3_PER_KM3
    }

    /// molecule/cm³ → g/km³.
    pub fn molecules_per_cm3_to_g_per_km3(&self, species: Species, value: f64) -> f64 {
        value * CM3_PER_KM3 / self.avogadro * self.molar_mass(species)
    }

    pub fn state_to_g_per_km3(&self, psi: &[f64; 5]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for s in Species::ALL {
            out[s.index()] = self.molecules_per_cm3_to_g_per_km3(s, psi[s.index()]);
        }
        out
    }

    pub fn state_to_molecules_per_cm3(&self, psi: &[f64; 5]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for s in Species::ALL {
            out[s.index()] = self.g_per_km3_to_molecules_per_cm3(s, psi[s.index()]);
        }
        out
    }
}

pub fn kmh_to_ms(v: f64) -> f64 {
    v * M_PER_KM / SECONDS_PER_HOUR
}

pub fn ms_to_kmh(v: f64) -> f64 {
    v * SECONDS_PER_HOUR / M_PER_KM
}

/// km/h² → m/s².
pub fn kmh2_to_ms2(a: f64) -> f64 {
    a * M_PER_KM / (SECONDS_PER_HOUR * SECONDS_PER_HOUR)
}

pub fn s_to_h(t: f64) -> f64 {
    t / SECONDS_PER_HOUR
}

pub fn h_to_s(t: f64) -> f64 {
    t * SECONDS_PER_HOUR
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn speed_conversions() {
        assert!((kmh_to_ms(36.0) - 10.0).abs() < 1e-12);
        assert!((ms_to_kmh(10.0) - 36.0).abs() < 1e-12);
        // 1 m/s² = 12960 km/h²
        assert!((kmh2_to_ms2(12_960.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_mole_of_ozone() {
        let u = UnitContext::default();
        // 48 g in 1 km³ is one mole spread over 1e15 cm³.
        let n = u.g_per_km3_to_molecules_per_cm3(Species::O3, 48.0);
        assert!((n - 6.022_140_76e8).abs() / n < 1e-14);
    }

    proptest! {
        #[test]
        fn mass_count_round_trip(value in 1e-6f64..1e12, idx in 0usize..5) {
            let u = UnitContext::default();
            let s = Species::ALL[idx];
            let back = u.molecules_per_cm3_to_g_per_km3(s, u.g_per_km3_to_molecules_per_cm3(s, value));
            prop_assert!(((back - value) / value).abs() <= 1e-12);
        }
    }
}
