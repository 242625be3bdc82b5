//! Scenario configuration: schema, validation and run metadata.
//!
//! Every physical quantity in the file carries its unit in the key name
//! (`dt_s`, `v_max_kmh`, `rho_vehkm`, ...).

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::chemistry::ChemistryConfig;
use crate::dispersion::DispersionConfig;
use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::traffic::{BoundaryPolicy, LeftBoundary, RightBoundary, TrafficLightPolicy, TrafficState};
use crate::traffic::cfl_bound_s;

/// Uniform 1-D road discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadGrid {
    pub length_km: f64,
    pub cells: usize,
    pub dx_km: f64,
    pub dt_s: f64,
    pub horizon_s: f64,
    #[serde(default = "one_lane")]
    pub lanes: f64,
}

fn one_lane() -> f64 {
    1.0
}

impl RoadGrid {
    pub fn validate(&self) -> Result<()> {
        if self.cells < 3 {
            return Err(Error::config("grid.cells", "at least 3 cells are required"));
        }
        if !(self.length_km > 0.0) {
            return Err(Error::config("grid.length_km", "road length must be positive"));
        }
        if !(self.dx_km > 0.0) {
            return Err(Error::config("grid.dx_km", "cell length must be positive"));
        }
        let covered = self.dx_km * self.cells as f64;
        if ((covered - self.length_km) / self.length_km).abs() > 1e-12 {
            return Err(Error::config(
                "grid.dx_km",
                format!("dx * cells = {covered} km does not match length {} km", self.length_km),
            ));
        }
        if !(self.dt_s > 0.0) {
            return Err(Error::config("grid.dt_s", "time step must be positive"));
        }
        if !(self.horizon_s > 0.0) {
            return Err(Error::config("grid.horizon_s", "horizon must be positive"));
        }
        if !(self.lanes > 0.0) {
            return Err(Error::config("grid.lanes", "lane count must be positive"));
        }
        Ok(())
    }

    /// Cell centres in km.
    pub fn centers_km(&self) -> Vec<f64> {
        (0..self.cells).map(|i| (i as f64 + 0.5) * self.dx_km).collect()
    }

    /// Number of steps needed to reach the horizon; the last one may be shorter.
    pub fn num_steps(&self) -> usize {
        (self.horizon_s / self.dt_s - 1e-9).ceil().max(0.0) as usize
    }
}

/// Initial density: one value for every cell or an explicit per-cell list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensityProfile {
    Constant(f64),
    Cells(Vec<f64>),
}

/// One piece of a piecewise-constant `w` profile, valid for `x <= until_km`.
/// The last piece may omit `until_km` and then extends to the end of the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WSegment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_km: Option<f64>,
    pub value_vehh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    pub rho_vehkm: DensityProfile,
    pub w: Vec<WSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeftBoundaryConfig {
    Dirichlet { rho_vehkm: f64 },
    Neumann,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RightBoundaryConfig {
    FreeOutflow,
    Neumann,
    Closed,
    /// Uses the `[light]` section.
    TrafficLight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub left: LeftBoundaryConfig,
    pub right: RightBoundaryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionConfig {
    pub table: String,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            table: "petrol_car_nox".into(),
        }
    }
}

/// Output cadence for the optional dumps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Traffic state dump cadence; `None` writes every step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_every_s: Option<f64>,
    /// Dispersion snapshot cadence; `None` writes only the final fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: RoadGrid,
    pub flux: FluxModel,
    pub initial: InitialConditions,
    pub boundary: BoundaryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub light: Option<TrafficLightPolicy>,
    #[serde(default)]
    pub emission: EmissionConfig,
    #[serde(default)]
    pub chemistry: ChemistryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<DispersionConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reference urban scenario: 3 km single-lane road, 52 veh/km inflow,
    /// `w_R` on the first two thirds and `w_L` on the rest, free outflow.
    pub fn urban_reference() -> Self {
        let flux = FluxModel::urban_single_lane();
        Self {
            name: "urban-no-light".into(),
            grid: RoadGrid {
                length_km: 3.0,
                cells: 100,
                dx_km: 0.03,
                dt_s: 1.5,
                horizon_s: 1800.0,
                lanes: 1.0,
            },
            flux,
            initial: InitialConditions {
                rho_vehkm: DensityProfile::Constant(52.0),
                w: vec![
                    WSegment {
                        until_km: Some(2.0),
                        value_vehh: flux.w_r,
                    },
                    WSegment {
                        until_km: None,
                        value_vehh: flux.w_l,
                    },
                ],
            },
            boundary: BoundaryConfig {
                left: LeftBoundaryConfig::Dirichlet { rho_vehkm: 52.0 },
                right: RightBoundaryConfig::FreeOutflow,
            },
            light: None,
            emission: EmissionConfig::default(),
            chemistry: ChemistryConfig::default(),
            dispersion: None,
            output: OutputConfig::default(),
        }
    }

    /// Same road with a traffic light at the downstream end.
    pub fn with_light(mut self, light: TrafficLightPolicy) -> Self {
        self.boundary.right = RightBoundaryConfig::TrafficLight;
        self.light = Some(light);
        self
    }
}

/// A configuration whose invariants have been checked, with the effective
/// time step and a record of every adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    pub config: ScenarioConfig,
    pub requested_dt_s: f64,
    pub cfl_bound_s: f64,
    pub dt_clamped: bool,
    pub warnings: Vec<String>,
}

impl ValidatedConfig {
    pub fn grid(&self) -> &RoadGrid {
        &self.config.grid
    }

    pub fn flux(&self) -> &FluxModel {
        &self.config.flux
    }

    pub fn dt_s(&self) -> f64 {
        self.config.grid.dt_s
    }

    pub fn boundary_policy(&self) -> BoundaryPolicy {
        let left = match self.config.boundary.left {
            LeftBoundaryConfig::Dirichlet { rho_vehkm } => LeftBoundary::Dirichlet { rho: rho_vehkm },
            LeftBoundaryConfig::Neumann => LeftBoundary::Neumann,
            LeftBoundaryConfig::Closed => LeftBoundary::Closed,
        };
        let right = match self.config.boundary.right {
            RightBoundaryConfig::FreeOutflow => RightBoundary::FreeOutflow,
            RightBoundaryConfig::Neumann => RightBoundary::Neumann,
            RightBoundaryConfig::Closed => RightBoundary::Closed,
            // Presence of the light section is checked during validation.
            RightBoundaryConfig::TrafficLight => {
                RightBoundary::TrafficLight(self.config.light.expect("validated light section"))
            }
        };
        BoundaryPolicy { left, right }
    }

    pub fn initial_state(&self) -> TrafficState {
        let grid = &self.config.grid;
        let rho = match &self.config.initial.rho_vehkm {
            DensityProfile::Constant(v) => vec![*v; grid.cells],
            DensityProfile::Cells(v) => v.clone(),
        };
        let w = grid
            .centers_km()
            .iter()
            .map(|&x| w_at(&self.config.initial.w, x))
            .collect();
        TrafficState::new(rho, w, 0.0).expect("validated initial profile")
    }

    /// Light policy if the right boundary is a traffic light.
    pub fn light(&self) -> Option<TrafficLightPolicy> {
        match self.config.boundary.right {
            RightBoundaryConfig::TrafficLight => self.config.light,
            _ => None,
        }
    }
}

fn w_at(segments: &[WSegment], x_km: f64) -> f64 {
    segments
        .iter()
        .find(|s| s.until_km.is_none_or(|u| x_km <= u))
        .or(segments.last())
        .map(|s| s.value_vehh)
        .unwrap_or(f64::NAN)
}

/// Checks every invariant and clamps `dt` to the CFL bound when needed.
///
/// A clamped step is `horizon / ceil(horizon / bound)`, so the run still ends
/// exactly at the horizon.
pub fn validate_config(cfg: ScenarioConfig) -> Result<ValidatedConfig> {
    let mut cfg = cfg;
    cfg.grid.validate()?;
    cfg.flux.validate("flux")?;
    let flux = cfg.flux;
    let n = cfg.grid.cells;

    match &cfg.initial.rho_vehkm {
        DensityProfile::Constant(v) => check_density("initial.rho_vehkm", *v, &flux)?,
        DensityProfile::Cells(values) => {
            if values.len() != n {
                return Err(Error::config(
                    "initial.rho_vehkm",
                    format!("expected {n} values, found {}", values.len()),
                ));
            }
            for v in values {
                check_density("initial.rho_vehkm", *v, &flux)?;
            }
        }
    }
    if cfg.initial.w.is_empty() {
        return Err(Error::config("initial.w", "at least one segment is required"));
    }
    for (k, seg) in cfg.initial.w.iter().enumerate() {
        if !(seg.value_vehh >= flux.w_l && seg.value_vehh <= flux.w_r) {
            return Err(Error::config(
                format!("initial.w[{k}].value_vehh"),
                format!("{} lies outside [w_l, w_r] = [{}, {}]", seg.value_vehh, flux.w_l, flux.w_r),
            ));
        }
    }
    if let LeftBoundaryConfig::Dirichlet { rho_vehkm } = cfg.boundary.left {
        check_density("boundary.left.rho_vehkm", rho_vehkm, &flux)?;
    }
    if let Some(light) = &cfg.light {
        light.validate("light")?;
    }
    if cfg.boundary.right == RightBoundaryConfig::TrafficLight && cfg.light.is_none() {
        return Err(Error::config("light", "traffic_light boundary requires a [light] section"));
    }
    crate::emission::EmissionCoefficients::by_name(&cfg.emission.table)?;
    cfg.chemistry.validate("chemistry")?;
    if let Some(d) = &cfg.dispersion {
        d.validate("dispersion")?;
    }
    if let Some(every) = cfg.output.traffic_every_s {
        if !(every > 0.0) {
            return Err(Error::config("output.traffic_every_s", "cadence must be positive"));
        }
    }
    if let Some(every) = cfg.output.snapshot_every_s {
        if !(every > 0.0) {
            return Err(Error::config("output.snapshot_every_s", "cadence must be positive"));
        }
    }

    let bound = cfl_bound_s(cfg.grid.dx_km, &flux);
    let requested = cfg.grid.dt_s;
    let mut warnings = Vec::new();
    let clamped = requested > bound;
    if clamped {
        let steps = (cfg.grid.horizon_s / bound).ceil();
        cfg.grid.dt_s = cfg.grid.horizon_s / steps;
        let msg = format!(
            "grid.dt_s = {requested} s exceeds the CFL bound {bound} s; using {} s",
            cfg.grid.dt_s
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(ValidatedConfig {
        config: cfg,
        requested_dt_s: requested,
        cfl_bound_s: bound,
        dt_clamped: clamped,
        warnings,
    })
}

fn check_density(field: &str, rho: f64, flux: &FluxModel) -> Result<()> {
    if rho >= 0.0 && rho <= flux.rho_max {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("density {rho} lies outside [0, {}]", flux.rho_max),
        ))
    }
}

/// Sidecar describing how a run was actually executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub scenario: String,
    pub crate_version: String,
    pub requested_dt_s: f64,
    pub effective_dt_s: f64,
    pub cfl_bound_s: f64,
    pub dt_clamped: bool,
    /// The pipeline draws no random numbers; kept so the record is explicit.
    pub rng_seeds: Vec<u64>,
    pub disabled_stages: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion_dt_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion_steps: Option<usize>,
}

impl RunMetadata {
    pub fn new(v: &ValidatedConfig, disabled_stages: Vec<String>) -> Self {
        Self {
            scenario: v.config.name.clone(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            requested_dt_s: v.requested_dt_s,
            effective_dt_s: v.dt_s(),
            cfl_bound_s: v.cfl_bound_s,
            dt_clamped: v.dt_clamped,
            rng_seeds: Vec::new(),
            disabled_stages,
            warnings: v.warnings.clone(),
            dispersion_dt_s: None,
            dispersion_steps: None,
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
