//! Two-dimensional reaction–advection–diffusion of the five species.
//!
//! Two set-ups share one solver:
//! * vertical: a road-aligned slice `[0, L] x [0, H]` above the exhaust
//!   height, fed through Dirichlet values for NO and NO2 on the bottom row;
//! * horizontal: a ground-level plane crossed by the road, fed by a line
//!   source on the middle row and transported by a constant wind.
//!
//! Each step is Lie-split: a pointwise stiff chemistry substep, then one
//! implicit-Euler transport solve per species with a banded LU factorized
//! once per run. Fields are cell-centred, `values[j * nx + i]` with `i`
//! along the road. Internally concentrations are molecule/cm³; everything
//! reported is g/km³. O2 is held at its background value.

use serde::{Deserialize, Serialize};

use crate::banded::{BandedLu, BandedMatrix};
use crate::chemistry::{BoxChemistry, ChemistryConfig, RateConstants};
use crate::error::{Error, Result};
use crate::rosenbrock::{Rosenbrock23, RosenbrockOptions};
use crate::units::{Species, UnitContext, M_PER_KM, SECONDS_PER_HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionMode {
    Vertical,
    Horizontal,
}

/// How the vertical bottom-row values are built from the source rate `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryValueMode {
    /// `s * dt` with the dispersion time step.
    #[default]
    Verbatim,
    /// `s * rate_reference_s`, independent of the time step.
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    pub mode: DispersionMode,
    /// Extent along the road.
    pub length_m: f64,
    /// Height above the exhaust (vertical) or transverse extent (horizontal).
    pub width_m: f64,
    pub dx_m: f64,
    pub dy_m: f64,
    /// Thickness of the slab; defaults to `dy_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dz_m: Option<f64>,
    pub mu_km2h: f64,
    /// `(along road, across road)`.
    #[serde(default)]
    pub wind_kmh: [f64; 2],
    /// Defaults to the effective traffic step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    pub horizon_s: f64,
    /// Start of the road segment under the domain; defaults to the last
    /// `length_m` of road.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_start_km: Option<f64>,
    #[serde(default)]
    pub bc_mode: BoundaryValueMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_reference_s: Option<f64>,
    /// Height of the exhaust, i.e. of the bottom edge of a vertical domain.
    #[serde(default = "exhaust_height")]
    pub source_height_m: f64,
    /// Vertical probe height above ground.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_height_m: Option<f64>,
    /// Horizontal probe distance from the road.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_offset_m: Option<f64>,
    #[serde(default = "yes")]
    pub reaction: bool,
}

fn exhaust_height() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl DispersionConfig {
    pub fn vertical_reference() -> Self {
        Self {
            mode: DispersionMode::Vertical,
            length_m: 500.0,
            width_m: 0.5,
            dx_m: 5.0,
            dy_m: 0.02,
            dz_m: None,
            mu_km2h: 1e-8,
            wind_kmh: [0.0, 0.0],
            dt_s: None,
            horizon_s: 4.0 * SECONDS_PER_HOUR,
            segment_start_km: None,
            bc_mode: BoundaryValueMode::Verbatim,
            rate_reference_s: None,
            source_height_m: 0.5,
            probe_height_m: Some(1.0),
            probe_offset_m: None,
            reaction: true,
        }
    }

    pub fn horizontal_reference() -> Self {
        Self {
            mode: DispersionMode::Horizontal,
            length_m: 500.0,
            width_m: 500.0,
            dx_m: 5.0,
            dy_m: 5.0,
            dz_m: None,
            mu_km2h: 1e-8,
            wind_kmh: [-1.0, 0.2],
            dt_s: None,
            horizon_s: 1800.0,
            segment_start_km: None,
            bc_mode: BoundaryValueMode::Verbatim,
            rate_reference_s: None,
            source_height_m: 0.5,
            probe_height_m: None,
            probe_offset_m: Some(50.0),
            reaction: true,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{prefix}.{name}"), "must be positive"))
            }
        };
        positive("length_m", self.length_m)?;
        positive("width_m", self.width_m)?;
        positive("dx_m", self.dx_m)?;
        positive("dy_m", self.dy_m)?;
        positive("mu_km2h", self.mu_km2h)?;
        positive("horizon_s", self.horizon_s)?;
        if let Some(dz) = self.dz_m {
            positive("dz_m", dz)?;
        }
        if let Some(dt) = self.dt_s {
            positive("dt_s", dt)?;
        }
        if self.bc_mode == BoundaryValueMode::Rate {
            match self.rate_reference_s {
                Some(t) => positive("rate_reference_s", t)?,
                None => {
                    return Err(Error::config(
                        format!("{prefix}.rate_reference_s"),
                        "bc_mode = \"rate\" needs a reference time",
                    ))
                }
            }
        }
        if !self.wind_kmh.iter().all(|c| c.is_finite()) {
            return Err(Error::config(format!("{prefix}.wind_kmh"), "must be finite"));
        }
        for (name, extent, step) in [("dx_m", self.length_m, self.dx_m), ("dy_m", self.width_m, self.dy_m)] {
            let n = (extent / step).round();
            if n < 1.0 || ((n * step - extent) / extent).abs() > 1e-9 {
                return Err(Error::config(
                    format!("{prefix}.{name}"),
                    format!("{step} m does not divide the extent {extent} m"),
                ));
            }
        }
        let grid = self.grid();
        self.probe_row(&grid).map_err(|e| match e {
            Error::Config { message, .. } => Error::config(format!("{prefix}.probe"), message),
            other => other,
        })?;
        Ok(())
    }

    pub fn grid(&self) -> DispersionGrid {
        DispersionGrid {
            nx: (self.length_m / self.dx_m).round() as usize,
            ny: (self.width_m / self.dy_m).round() as usize,
            dx_m: self.dx_m,
            dy_m: self.dy_m,
            dz_m: self.dz_m.unwrap_or(self.dy_m),
        }
    }

    /// Row fed by the traffic source.
    pub fn source_row(&self, grid: &DispersionGrid) -> usize {
        match self.mode {
            DispersionMode::Vertical => 0,
            DispersionMode::Horizontal => grid.ny / 2,
        }
    }

    /// Row whose mean is compared between runs.
    pub fn probe_row(&self, grid: &DispersionGrid) -> Result<usize> {
        match self.mode {
            DispersionMode::Vertical => {
                let h = self.probe_height_m.unwrap_or(self.source_height_m + self.width_m);
                let rel = h - self.source_height_m;
                if rel < 0.0 || rel > self.width_m * (1.0 + 1e-12) {
                    return Err(Error::config(
                        "probe_height_m",
                        format!("{h} m lies outside the domain"),
                    ));
                }
                Ok(((rel / grid.dy_m).floor() as usize).min(grid.ny - 1))
            }
            DispersionMode::Horizontal => {
                let offset = self.probe_offset_m.unwrap_or(0.0);
                let row = self.source_row(grid) as f64 + (offset / grid.dy_m).round();
                if row < 0.0 || row >= grid.ny as f64 {
                    return Err(Error::config(
                        "probe_offset_m",
                        format!("{offset} m lies outside the domain"),
                    ));
                }
                Ok(row as usize)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx_m: f64,
    pub dy_m: f64,
    pub dz_m: f64,
}

impl DispersionGrid {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell in km³.
    pub fn cell_volume_km3(&self) -> f64 {
        self.dx_m * self.dy_m * self.dz_m / (M_PER_KM * M_PER_KM * M_PER_KM)
    }

    /// Unknown ordering used by the solver: the shorter direction varies
    /// fastest so the band stays narrow.
    fn y_fast(&self) -> bool {
        self.ny <= self.nx
    }

    fn solver_index(&self, i: usize, j: usize) -> usize {
        if self.y_fast() {
            i * self.ny + j
        } else {
            j * self.nx + i
        }
    }

    fn bandwidth(&self) -> usize {
        if self.y_fast() {
            self.ny
        } else {
            self.nx
        }
    }
}

/// Coefficients of one implicit transport step, in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportSpec {
    /// m²/s
    pub mu: f64,
    /// m/s, `(x, y)`
    pub wind: [f64; 2],
    /// s
    pub dt: f64,
    /// Bottom row held at prescribed values.
    pub dirichlet_bottom: bool,
}

/// Assembles `I - dt (mu Δ - C·∇)` in flux form: centred diffusion,
/// first-order upwind advection, zero-gradient ghost cells on every side
/// (so a uniform field is stationary and, without wind, mass is conserved).
/// With `dirichlet_bottom`, bottom-row equations become identities.
/// Row and column indices follow the solver ordering.
pub fn build_transport_matrix(grid: &DispersionGrid, spec: &TransportSpec) -> BandedMatrix {
    let bw = grid.bandwidth();
    let mut m = BandedMatrix::zeros(grid.len(), bw, bw);
    let (nx, ny) = (grid.nx, grid.ny);
    let rx = spec.dt * spec.mu / (grid.dx_m * grid.dx_m);
    let ry = spec.dt * spec.mu / (grid.dy_m * grid.dy_m);
    let ax = spec.dt / grid.dx_m;
    let ay = spec.dt / grid.dy_m;
    let [cx, cy] = spec.wind;

    for j in 0..ny {
        for i in 0..nx {
            let p = grid.solver_index(i, j);
            m.add(p, p, 1.0);
        }
    }
    // Interior faces couple two cells; `a` is the cell on the low side.
    let mut face = |a: usize, b: usize, r: f64, adv: f64, c: f64| {
        m.add(a, a, r);
        m.add(a, b, -r);
        m.add(b, b, r);
        m.add(b, a, -r);
        // Upwind flux c+ ψ_a + c- ψ_b leaves a and enters b.
        let (cp, cm) = (c.max(0.0), c.min(0.0));
        m.add(a, a, adv * cp);
        m.add(a, b, adv * cm);
        m.add(b, a, -adv * cp);
        m.add(b, b, -adv * cm);
    };
    for j in 0..ny {
        for i in 0..nx.saturating_sub(1) {
            face(grid.solver_index(i, j), grid.solver_index(i + 1, j), rx, ax, cx);
        }
    }
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx {
            face(grid.solver_index(i, j), grid.solver_index(i, j + 1), ry, ay, cy);
        }
    }
    // Boundary faces: the ghost copies the edge cell, so the advective flux
    // is c ψ_edge.
    for j in 0..ny {
        m.add(grid.solver_index(0, j), grid.solver_index(0, j), -ax * cx);
        m.add(grid.solver_index(nx - 1, j), grid.solver_index(nx - 1, j), ax * cx);
    }
    for i in 0..nx {
        m.add(grid.solver_index(i, 0), grid.solver_index(i, 0), -ay * cy);
        m.add(grid.solver_index(i, ny - 1), grid.solver_index(i, ny - 1), ay * cy);
    }
    if spec.dirichlet_bottom {
        for i in 0..nx {
            m.set_identity_row(grid.solver_index(i, 0));
        }
    }
    m
}

/// Factorized transport step for one grid.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    grid: DispersionGrid,
    lu: BandedLu,
}

impl TransportOperator {
    pub fn new(grid: DispersionGrid, spec: &TransportSpec) -> Result<Self> {
        let lu = build_transport_matrix(&grid, spec).factor()?;
        Ok(Self { grid, lu })
    }

    /// Replaces `field` (row-major, `j * nx + i`) by the solution of the
    /// implicit step with `field` as right-hand side.
    pub fn solve(&self, field: &mut [f64], scratch: &mut Vec<f64>) {
        let g = &self.grid;
        if !g.y_fast() {
            self.lu.solve_in_place(field);
            return;
        }
        scratch.resize(g.len(), 0.0);
        for j in 0..g.ny {
            for i in 0..g.nx {
                scratch[g.solver_index(i, j)] = field[j * g.nx + i];
            }
        }
        self.lu.solve_in_place(scratch);
        for j in 0..g.ny {
            for i in 0..g.nx {
                field[j * g.nx + i] = scratch[g.solver_index(i, j)];
            }
        }
    }
}

/// Concentrations on the grid, molecule/cm³, one vector per species.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionState {
    pub fields: [Vec<f64>; 5],
    pub time_s: f64,
    step_hints: Vec<Option<f64>>,
}

impl DispersionState {
    pub fn fields_g_per_km3(&self, units: &UnitContext) -> [Vec<f64>; 5] {
        std::array::from_fn(|s| {
            let sp = Species::ALL[s];
            self.fields[s]
                .iter()
                .map(|&v| units.molecules_per_cm3_to_g_per_km3(sp, v))
                .collect()
        })
    }
}

/// Row mean of one species in g/km³.
pub fn row_mean_g_per_km3(state: &DispersionState, grid: &DispersionGrid, species: Species, row: usize, units: &UnitContext) -> f64 {
    let start = row * grid.nx;
    let f = &state.fields[species.index()][start..start + grid.nx];
    let mean = f.iter().sum::<f64>() / grid.nx as f64;
    units.molecules_per_cm3_to_g_per_km3(species, mean)
}

/// Time stepper for one dispersion configuration.
#[derive(Debug, Clone)]
pub struct DispersionSolver {
    pub config: DispersionConfig,
    pub grid: DispersionGrid,
    pub dt_s: f64,
    pub steps: usize,
    rates: RateConstants,
    o2: f64,
    opts: RosenbrockOptions,
    units: UnitContext,
    neumann: TransportOperator,
    dirichlet: Option<TransportOperator>,
}

impl DispersionSolver {
    /// `default_dt_s` is used when the config has no step; the step is then
    /// shrunk so it divides the horizon.
    pub fn new(config: &DispersionConfig, chem: &ChemistryConfig, default_dt_s: f64) -> Result<Self> {
        config.validate("dispersion")?;
        let grid = config.grid();
        let requested = config.dt_s.unwrap_or(default_dt_s);
        if !(requested > 0.0) {
            return Err(Error::config("dispersion.dt_s", "time step must be positive"));
        }
        let steps = (config.horizon_s / requested - 1e-9).ceil().max(1.0) as usize;
        let dt_s = config.horizon_s / steps as f64;
        let mu = config.mu_km2h * M_PER_KM * M_PER_KM / SECONDS_PER_HOUR;
        let wind = match config.mode {
            DispersionMode::Vertical => [0.0, 0.0],
            DispersionMode::Horizontal => config.wind_kmh.map(|c| c * M_PER_KM / SECONDS_PER_HOUR),
        };
        let spec = TransportSpec {
            mu,
            wind,
            dt: dt_s,
            dirichlet_bottom: false,
        };
        let neumann = TransportOperator::new(grid, &spec)?;
        let dirichlet = match config.mode {
            DispersionMode::Vertical => Some(TransportOperator::new(
                grid,
                &TransportSpec {
                    dirichlet_bottom: true,
                    ..spec
                },
            )?),
            DispersionMode::Horizontal => None,
        };
        Ok(Self {
            config: config.clone(),
            grid,
            dt_s,
            steps,
            rates: chem.rates,
            o2: chem.o2_molecules_cm3,
            opts: chem.integrator_options(),
            units: UnitContext::default(),
            neumann,
            dirichlet,
        })
    }

    /// Empty domain apart from background O2.
    pub fn initial_state(&self) -> DispersionState {
        let n = self.grid.len();
        let mut fields: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
        fields[Species::O2.index()] = vec![self.o2; n];
        DispersionState {
            fields,
            time_s: 0.0,
            step_hints: vec![None; n],
        }
    }

    pub fn units(&self) -> &UnitContext {
        &self.units
    }

    /// Pointwise chemistry over one step with O2 frozen. Cells whose reactive
    /// species are all below the absolute tolerance are left alone.
    pub fn reaction_substep(&self, state: &mut DispersionState) -> Result<()> {
        if !self.config.reaction {
            return Ok(());
        }
        let sys = BoxChemistry {
            rates: self.rates,
            source: [0.0; 5],
            freeze_o2: true,
        };
        let atol = self.opts.atol;
        let t0 = state.time_s;
        let t1 = t0 + self.dt_s;
        let mut solver = Rosenbrock23::new(self.opts);
        for c in 0..self.grid.len() {
            let mut y = [
                state.fields[0][c],
                state.fields[1][c],
                state.fields[2][c],
                state.fields[3][c],
                state.fields[4][c],
            ];
            if y[0] <= atol && y[2] <= atol && y[3] <= atol && y[4] <= atol {
                continue;
            }
            solver.set_step_hint(state.step_hints[c]);
            solver
                .integrate(&sys, &mut y, t0, t1, |_, _| {})
                .map_err(|e| Error::Cell {
                    cell: c,
                    source: Box::new(e),
                })?;
            state.step_hints[c] = solver.step_hint();
            for s in 0..5 {
                state.fields[s][c] = y[s];
            }
        }
        Ok(())
    }

    /// Bottom-row NO and NO2 values (molecule/cm³) for a column source rate
    /// in g/(km³·h).
    fn bottom_values(&self, s_g_per_km3_h: f64) -> (f64, f64) {
        let hold_s = match self.config.bc_mode {
            BoundaryValueMode::Verbatim => self.dt_s,
            BoundaryValueMode::Rate => self.config.rate_reference_s.unwrap_or(self.dt_s),
        };
        let mass = s_g_per_km3_h / SECONDS_PER_HOUR * hold_s;
        let p = self.rates.no2_fraction;
        (
            self.units.g_per_km3_to_molecules_per_cm3(Species::NO, (1.0 - p) * mass),
            self.units.g_per_km3_to_molecules_per_cm3(Species::NO2, p * mass),
        )
    }

    /// Vertical step: chemistry, then diffusion with NO/NO2 pinned on the
    /// bottom row to the values derived from `bottom_source` (g/(km³·h) per
    /// column).
    pub fn step_vertical(&self, state: &mut DispersionState, bottom_source: &[f64]) -> Result<()> {
        self.check_source(bottom_source)?;
        self.reaction_substep(state)?;
        let dirichlet = self
            .dirichlet
            .as_ref()
            .ok_or_else(|| Error::config("dispersion.mode", "vertical step on a horizontal solver"))?;
        let mut scratch = Vec::new();
        for s in [Species::O, Species::O3] {
            self.neumann.solve(&mut state.fields[s.index()], &mut scratch);
        }
        for (i, &s) in bottom_source.iter().enumerate() {
            let (no, no2) = self.bottom_values(s);
            state.fields[Species::NO.index()][i] = no;
            state.fields[Species::NO2.index()][i] = no2;
        }
        for s in [Species::NO, Species::NO2] {
            dirichlet.solve(&mut state.fields[s.index()], &mut scratch);
        }
        clamp_nonnegative(state);
        state.time_s += self.dt_s;
        Ok(())
    }

    /// Horizontal step: chemistry, then advection–diffusion with the line
    /// source (g/(km³·h) per column) added on the source row.
    pub fn step_horizontal(&self, state: &mut DispersionState, line_source: &[f64]) -> Result<()> {
        self.check_source(line_source)?;
        self.reaction_substep(state)?;
        let row = self.config.source_row(&self.grid);
        let p = self.rates.no2_fraction;
        for (i, &s) in line_source.iter().enumerate() {
            let mass = s / SECONDS_PER_HOUR * self.dt_s;
            let c = row * self.grid.nx + i;
            state.fields[Species::NO.index()][c] += self.units.g_per_km3_to_molecules_per_cm3(Species::NO, (1.0 - p) * mass);
            state.fields[Species::NO2.index()][c] += self.units.g_per_km3_to_molecules_per_cm3(Species::NO2, p * mass);
        }
        let mut scratch = Vec::new();
        for s in [Species::O, Species::O3, Species::NO, Species::NO2] {
            self.neumann.solve(&mut state.fields[s.index()], &mut scratch);
        }
        clamp_nonnegative(state);
        state.time_s += self.dt_s;
        Ok(())
    }

    pub fn step(&self, state: &mut DispersionState, source: &[f64]) -> Result<()> {
        match self.config.mode {
            DispersionMode::Vertical => self.step_vertical(state, source),
            DispersionMode::Horizontal => self.step_horizontal(state, source),
        }
    }

    /// Transport only, with every boundary zero-gradient. Used for checks on
    /// the operator itself.
    pub fn transport_only(&self, field: &mut [f64]) {
        let mut scratch = Vec::new();
        self.neumann.solve(field, &mut scratch);
    }

    fn check_source(&self, source: &[f64]) -> Result<()> {
        if source.len() != self.grid.nx {
            return Err(Error::Length {
                what: "dispersion source columns",
                left: source.len(),
                right: self.grid.nx,
            });
        }
        Ok(())
    }
}

/// The implicit solve can leave round-off negatives next to sharp fronts.
fn clamp_nonnegative(state: &mut DispersionState) {
    for f in state.fields.iter_mut() {
        for v in f.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Moves per-cell extensive amounts (e.g. g/h) from one uniform 1-D grid to
/// another by overlap length. Source cell `k` covers
/// `[src_origin + k src_dx, src_origin + (k+1) src_dx]`.
pub fn resample_conservative(
    values: &[f64],
    src_origin: f64,
    src_dx: f64,
    dst_origin: f64,
    dst_dx: f64,
    dst_n: usize,
) -> Result<Vec<f64>> {
    let src_end = src_origin + src_dx * values.len() as f64;
    let dst_end = dst_origin + dst_dx * dst_n as f64;
    let tol = 1e-9 * src_dx.max(dst_dx);
    if dst_origin < src_origin - tol || dst_end > src_end + tol {
        return Err(Error::config(
            "dispersion.segment_start_km",
            format!(
                "dispersion extent [{dst_origin}, {dst_end}] is not covered by the road [{src_origin}, {src_end}]"
            ),
        ));
    }
    let mut out = vec![0.0; dst_n];
    for (k, o) in out.iter_mut().enumerate() {
        let a = dst_origin + k as f64 * dst_dx;
        let b = a + dst_dx;
        let first = (((a - src_origin) / src_dx).floor().max(0.0)) as usize;
        let mut m = first;
        while m < values.len() {
            let ca = src_origin + m as f64 * src_dx;
            let cb = ca + src_dx;
            if ca >= b {
                break;
            }
            let overlap = (b.min(cb) - a.max(ca)).max(0.0);
            *o += values[m] * overlap / src_dx;
            m += 1;
        }
    }
    Ok(out)
}

/// Maps per-cell road emissions (g/h) onto the dispersion columns and
/// divides by the dispersion cell volume, giving g/(km³·h).
pub fn couple_traffic_source(
    rates_g_per_h: &[f64],
    traffic_dx_km: f64,
    segment_start_km: f64,
    grid: &DispersionGrid,
) -> Result<Vec<f64>> {
    let dx_km = grid.dx_m / M_PER_KM;
    let per_column = resample_conservative(rates_g_per_h, 0.0, traffic_dx_km, segment_start_km, dx_km, grid.nx)?;
    let vol = grid.cell_volume_km3();
    Ok(per_column.into_iter().map(|r| r / vol).collect())
}

/// Source samples on the traffic time grid, extended past the traffic
/// horizon by repeating the last full light cycle, or by holding the last
/// sample when there is no light.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSchedule {
    pub dt_s: f64,
    /// `samples[n]` holds on `[n dt, (n+1) dt)`.
    pub samples: Vec<Vec<f64>>,
    pub cycle_s: Option<f64>,
}

impl SourceSchedule {
    pub fn horizon_s(&self) -> f64 {
        self.dt_s * (self.samples.len().saturating_sub(1)) as f64
    }

    /// Time inside the recorded window that plays the role of `t`.
    pub fn mapped_time(&self, t: f64) -> f64 {
        let end = self.horizon_s();
        if t < end {
            return t;
        }
        match self.cycle_s {
            Some(c) if c < end => {
                let k = ((t - end) / c).floor() + 1.0;
                t - k * c
            }
            _ => end,
        }
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let tm = self.mapped_time(t);
        let n = ((tm / self.dt_s) + 1e-9).floor() as usize;
        &self.samples[n.min(self.samples.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time_s: f64,
    pub fields_g_per_km3: [Vec<f64>; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionRun {
    pub grid: DispersionGrid,
    pub probe_row: usize,
    /// `(t_s, mean O3 on the probe row in g/km³)` after every step.
    pub probe_series: Vec<(f64, f64)>,
    pub final_state: DispersionState,
    pub snapshots: Vec<Snapshot>,
}

impl DispersionRun {
    pub fn final_probe_mean(&self) -> f64 {
        self.probe_series.last().map(|p| p.1).unwrap_or(0.0)
    }
}

/// Runs the solver over its horizon. A snapshot is stored every
/// `snapshot_every_s` (and always at the end).
pub fn run_dispersion(solver: &DispersionSolver, schedule: &SourceSchedule, snapshot_every_s: Option<f64>) -> Result<DispersionRun> {
    let probe_row = solver.config.probe_row(&solver.grid)?;
    let units = *solver.units();
    let mut state = solver.initial_state();
    let mut probe_series = Vec::with_capacity(solver.steps + 1);
    probe_series.push((0.0, 0.0));
    let mut snapshots = Vec::new();
    let mut next_snapshot = snapshot_every_s;
    for n in 0..solver.steps {
        let t = n as f64 * solver.dt_s;
        let src = schedule.at(t);
        solver.step(&mut state, src).map_err(|e| e.at_step("dispersion", n))?;
        state.time_s = (n + 1) as f64 * solver.dt_s;
        probe_series.push((
            state.time_s,
            row_mean_g_per_km3(&state, &solver.grid, Species::O3, probe_row, &units),
        ));
        if let (Some(every), Some(due)) = (snapshot_every_s, next_snapshot) {
            if state.time_s + 1e-9 >= due && n + 1 < solver.steps {
                snapshots.push(Snapshot {
                    time_s: state.time_s,
                    fields_g_per_km3: state.fields_g_per_km3(&units),
                });
                next_snapshot = Some(due + every);
            }
        }
    }
    snapshots.push(Snapshot {
        time_s: state.time_s,
        fields_g_per_km3: state.fields_g_per_km3(&units),
    });
    Ok(DispersionRun {
        grid: solver.grid,
        probe_row,
        probe_series,
        final_state: state,
        snapshots,
    })
}

/// Relative change `(M2 - M1) / M1` of the final probe-row ozone mean.
pub fn compare_dispersion(reference: &DispersionRun, other: &DispersionRun) -> Result<f64> {
    if reference.grid != other.grid || reference.probe_row != other.probe_row {
        return Err(Error::Degenerate("dispersion runs do not share a grid and probe row".into()));
    }
    let m1 = reference.final_probe_mean();
    let m2 = other.final_probe_mean();
    if m1 == 0.0 {
        return Err(Error::Degenerate("reference probe mean is zero".into()));
    }
    Ok((m2 - m1) / m1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid(nx: usize, ny: usize) -> DispersionGrid {
        DispersionGrid {
            nx,
            ny,
            dx_m: 2.0,
            dy_m: 1.0,
            dz_m: 1.0,
        }
    }

    fn dense(m: &BandedMatrix) -> Vec<Vec<f64>> {
        let n = m.dim();
        (0..n).map(|i| (0..n).map(|j| m.get(i, j)).collect()).collect()
    }

    #[test]
    fn pure_diffusion_rows_sum_to_one() {
        let g = small_grid(6, 4);
        let m = build_transport_matrix(
            &g,
            &TransportSpec {
                mu: 0.3,
                wind: [0.0, 0.0],
                dt: 2.0,
                dirichlet_bottom: false,
            },
        );
        // I - dt L with L of zero row sum: every row of the matrix sums to one.
        for row in dense(&m) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_field_survives_any_wind() {
        let g = small_grid(7, 5);
        let m = build_transport_matrix(
            &g,
            &TransportSpec {
                mu: 0.1,
                wind: [-0.7, 0.3],
                dt: 1.5,
                dirichlet_bottom: false,
            },
        );
        for row in dense(&m) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn one_row_grid_matches_hand_tridiagonal() {
        let g = DispersionGrid {
            nx: 5,
            ny: 1,
            dx_m: 2.0,
            dy_m: 1.0,
            dz_m: 1.0,
        };
        let (mu, dt) = (0.4, 3.0);
        let m = build_transport_matrix(
            &g,
            &TransportSpec {
                mu,
                wind: [0.0, 0.0],
                dt,
                dirichlet_bottom: false,
            },
        );
        let r = dt * mu / 4.0;
        for i in 0..5usize {
            for j in 0..5 {
                let expected = if i == j {
                    1.0 + if i == 0 || i == 4 { r } else { 2.0 * r }
                } else if i.abs_diff(j) == 1 {
                    -r
                } else {
                    0.0
                };
                assert!((m.get(i, j) - expected).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn resampling_identity_and_coarsening() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(resample_conservative(&v, 0.0, 1.0, 0.0, 1.0, 4).unwrap(), v.to_vec());
        let coarse = resample_conservative(&v, 0.0, 1.0, 0.0, 2.0, 2).unwrap();
        assert_eq!(coarse, vec![3.0, 7.0]);
        let fine = resample_conservative(&v, 0.0, 1.0, 1.0, 0.5, 4).unwrap();
        assert_eq!(fine, vec![1.0, 1.0, 1.5, 1.5]);
        assert!(resample_conservative(&v, 0.0, 1.0, 3.5, 1.0, 2).is_err());
    }

    #[test]
    fn schedule_repeats_last_cycle() {
        let samples: Vec<Vec<f64>> = (0..=10).map(|n| vec![n as f64]).collect();
        let light = SourceSchedule {
            dt_s: 1.0,
            samples: samples.clone(),
            cycle_s: Some(4.0),
        };
        assert_eq!(light.at(3.2), &[3.0]);
        // t = 10 maps to 6, t = 13.5 to 9.5, t = 14 to 6 again.
        assert_eq!(light.at(10.0), &[6.0]);
        assert_eq!(light.at(13.5), &[9.0]);
        assert_eq!(light.at(14.0), &[6.0]);
        let hold = SourceSchedule {
            dt_s: 1.0,
            samples,
            cycle_s: None,
        };
        assert_eq!(hold.at(1234.0), &[10.0]);
    }

    #[test]
    fn probe_rows_for_reference_set_ups() {
        let v = DispersionConfig::vertical_reference();
        let gv = v.grid();
        assert_eq!((gv.nx, gv.ny), (100, 25));
        assert_eq!(v.probe_row(&gv).unwrap(), 24);
        let h = DispersionConfig::horizontal_reference();
        let gh = h.grid();
        assert_eq!((gh.nx, gh.ny), (100, 100));
        assert_eq!(h.source_row(&gh), 50);
        assert_eq!(h.probe_row(&gh).unwrap(), 60);
        let mut bad = h.clone();
        bad.probe_offset_m = Some(400.0);
        assert!(bad.validate("dispersion").is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let mut cfg = DispersionConfig::vertical_reference();
        cfg.length_m = 50.0;
        cfg.horizon_s = 10.0;
        let solver = DispersionSolver::new(&cfg, &ChemistryConfig::default(), 1.0).unwrap();
        let mut st = solver.initial_state();
        for _ in 0..5 {
            solver.step_vertical(&mut st, &vec![0.0; solver.grid.nx]).unwrap();
        }
        for s in [0, 2, 3, 4] {
            assert!(st.fields[s].iter().all(|&v| v == 0.0));
        }
        assert!(st.fields[1].iter().all(|&v| v == 5.02e18));
    }
}
