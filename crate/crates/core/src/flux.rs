//! Collapsed generalized Aw–Rascle–Zhang flux family.
//!
//! Free flow (`rho <= rho_f`) follows a single Greenshields curve. In
//! congestion the flux is a convex combination of a straight line `f`
//! (joining the free-flow curve at `rho_f` to zero at `rho_max`) and the
//! Greenshields parabola `g`, weighted by the normalized driver property
//! `lambda(w)`.
//!
//! Units: density in veh/km, speed in km/h, flux in veh/h. The property `w`
//! carries flux units; only `lambda(w)` enters the formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibrated parameter set of the flux family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxModel {
    #[serde(rename = "v_max_kmh")]
    pub v_max: f64,
    #[serde(rename = "rho_f_vehkm")]
    pub rho_f: f64,
    #[serde(rename = "rho_max_vehkm")]
    pub rho_max: f64,
    #[serde(rename = "w_l_vehh")]
    pub w_l: f64,
    #[serde(rename = "w_r_vehh")]
    pub w_r: f64,
}

impl FluxModel {
    pub fn new(v_max: f64, rho_f: f64, rho_max: f64, w_l: f64, w_r: f64) -> Result<Self> {
        let model = Self {
            v_max,
            rho_f,
            rho_max,
            w_l,
            w_r,
        };
        model.validate("flux")?;
        Ok(model)
    }

    /// Parameters fitted on the I-80 trajectory data: `w_L = g(rho_f)` and
    /// `w_R = g(rho_max / 2)`.
    pub fn i80() -> Self {
        let (v_max, rho_f, rho_max) = (65.0, 110.0, 800.0);
        let g = |rho: f64| rho * v_max * (1.0 - rho / rho_max);
        Self {
            v_max,
            rho_f,
            rho_max,
            w_l: g(rho_f),
            w_r: g(rho_max / 2.0),
        }
    }

    /// Single-lane urban road used by the traffic-light scenarios.
    pub fn urban_single_lane() -> Self {
        Self {
            v_max: 70.0,
            rho_f: 19.0,
            rho_max: 133.0,
            w_l: 1140.0,
            w_r: 2327.0,
        }
    }

    /// Checks the parameter invariants, reporting `prefix.<field>` on failure.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let all_finite = [self.v_max, self.rho_f, self.rho_max, self.w_l, self.w_r]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::config(prefix, "all parameters must be finite"));
        }
        if self.v_max <= 0.0 {
            return Err(Error::config(
                format!("{prefix}.v_max_kmh"),
                "maximum speed must be positive",
            ));
        }
        if !(self.rho_f > 0.0) {
            return Err(Error::config(
                format!("{prefix}.rho_f_vehkm"),
                "free-flow threshold must be positive",
            ));
        }
        if !(self.rho_f < self.rho_max) {
            return Err(Error::config(
                format!("{prefix}.rho_f_vehkm"),
                "free-flow threshold must be strictly below the maximum density",
            ));
        }
        if !(self.w_l < self.w_r) {
            return Err(Error::config(
                format!("{prefix}.w_l_vehh"),
                "w_l must be strictly below w_r",
            ));
        }
        Ok(())
    }

    /// Lower envelope `f`: the chord from `(rho_f, Q_f(rho_f))` to `(rho_max, 0)`.
    pub fn lower_envelope(&self, rho: f64) -> f64 {
        self.rho_f * self.v_max * (1.0 - rho / self.rho_max)
    }

    /// Upper envelope `g`: the Greenshields parabola.
    pub fn upper_envelope(&self, rho: f64) -> f64 {
        rho * self.v_max * (1.0 - rho / self.rho_max)
    }

    /// Normalized property in `[0, 1]`. Values slightly outside `[w_l, w_r]`
    /// (roundoff from the conservative update) are clamped.
    pub fn lambda(&self, w: f64) -> f64 {
        let l = (w - self.w_l) / (self.w_r - self.w_l);
        if !(0.0..=1.0).contains(&l) {
            log::debug!("lambda({w}) = {l} clamped to [0, 1]");
        }
        l.clamp(0.0, 1.0)
    }

    /// Flux `Q(rho, w)` in veh/h. Caller guarantees `0 <= rho <= rho_max`.
    pub fn flux(&self, rho: f64, w: f64) -> f64 {
        debug_assert!(rho >= 0.0 && rho <= self.rho_max * (1.0 + 1e-12));
        if rho <= self.rho_f {
            self.upper_envelope(rho)
        } else {
            let l = self.lambda(w);
            self.v_max * (1.0 - rho / self.rho_max) * ((1.0 - l) * self.rho_f + l * rho)
        }
    }

    /// Checked variant of [`FluxModel::flux`].
    pub fn try_flux(&self, rho: f64, w: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.flux(rho, w))
    }

    /// Speed `V(rho, w) = Q / rho` in km/h, with the limit `V(0, w) = v_max`.
    pub fn velocity(&self, rho: f64, w: f64) -> f64 {
        if rho <= self.rho_f {
            self.v_max * (1.0 - rho / self.rho_max)
        } else {
            let l = self.lambda(w);
            self.v_max * (1.0 - rho / self.rho_max) * ((1.0 - l) * self.rho_f / rho + l)
        }
    }

    pub fn try_velocity(&self, rho: f64, w: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.velocity(rho, w))
    }

    /// Partial derivative of the speed with respect to density, (km/h)/(veh/km).
    /// At `rho_f` the free-flow branch is used (the speed is only C⁰ there).
    pub fn velocity_drho(&self, rho: f64, w: f64) -> f64 {
        if rho <= self.rho_f {
            -self.v_max / self.rho_max
        } else {
            let l = self.lambda(w);
            let c = (1.0 - l) * self.rho_f;
            -self.v_max / self.rho_max * (c / rho + l)
                - self.v_max * (1.0 - rho / self.rho_max) * c / (rho * rho)
        }
    }

    /// Speed at the free-flow threshold; identical for every `w`.
    pub fn threshold_speed(&self) -> f64 {
        self.v_max * (1.0 - self.rho_f / self.rho_max)
    }

    /// Unique density with `V(rho, w) = v`. Free branch uses the Greenshields
    /// inverse, congested branch the closed-form root of the quadratic
    /// `rho * v = Q_c(rho, w)`.
    pub fn invert_velocity(&self, v: f64, w: f64) -> f64 {
        let v = v.clamp(0.0, self.v_max);
        if v >= self.threshold_speed() {
            return (self.rho_max * (1.0 - v / self.v_max)).max(0.0);
        }
        let l = self.lambda(w);
        let c = (1.0 - l) * self.rho_f;
        let rho = if l == 0.0 {
            // rho (v + v_max c / rho_max) = v_max c
            self.v_max * c / (v + self.v_max * c / self.rho_max)
        } else {
            // a rho² + b rho + k = 0 with a > 0, k <= 0: take the non-negative root.
            let a = self.v_max * l / self.rho_max;
            let b = v - self.v_max * l + self.v_max * c / self.rho_max;
            let k = -self.v_max * c;
            let disc = (b * b - 4.0 * a * k).max(0.0).sqrt();
            if b > 0.0 {
                -2.0 * k / (b + disc)
            } else {
                (-b + disc) / (2.0 * a)
            }
        };
        rho.clamp(self.rho_f, self.rho_max)
    }

    /// Density at which `Q(., w)` is maximal.
    pub fn critical_density(&self, w: f64) -> f64 {
        let free = (0.5 * self.rho_max).min(self.rho_f);
        let l = self.lambda(w);
        if l == 0.0 {
            return self.rho_f;
        }
        let congested = (0.5 * self.rho_max - self.rho_f * (1.0 - l) / (2.0 * l))
            .clamp(self.rho_f, self.rho_max);
        if self.flux(congested, w) > self.flux(free, w) {
            congested
        } else {
            free
        }
    }

    /// Capacity `Q(rho_cr(w), w)`.
    pub fn max_flux(&self, w: f64) -> f64 {
        self.flux(self.critical_density(w), w)
    }

    /// Receiving capacity of a cell.
    pub fn supply(&self, rho: f64, w: f64) -> f64 {
        if rho <= self.critical_density(w) {
            self.max_flux(w)
        } else {
            self.flux(rho, w)
        }
    }

    /// Sending capacity of a cell.
    pub fn demand(&self, rho: f64, w: f64) -> f64 {
        if rho <= self.critical_density(w) {
            self.flux(rho, w)
        } else {
            self.max_flux(w)
        }
    }

    /// `(supply, demand)` evaluated together.
    pub fn supply_demand(&self, rho: f64, w: f64) -> (f64, f64) {
        let rho_cr = self.critical_density(w);
        let q_max = self.flux(rho_cr, w);
        let q = self.flux(rho, w);
        if rho <= rho_cr {
            (q_max, q)
        } else {
            (q, q_max)
        }
    }

    fn check_density(&self, rho: f64) -> Result<()> {
        if !(0.0..=self.rho_max).contains(&rho) {
            return Err(Error::Domain {
                quantity: "rho",
                value: rho,
                domain: format!("[0, {}]", self.rho_max),
            });
        }
        Ok(())
    }
}
