//! Emission validation against trajectory data: the macroscopic model is
//! initialized from the first recorded frame and run alone; its road total is
//! compared with the sum of per-vehicle emissions at every frame.

use crate::emission::{emission_field, fit_correction_factor, ground_truth_emissions, relative_l1_error, EmissionCoefficients};
use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::kinematics::acceleration_analytic;
use crate::traffic::{cfl_bound_s, step_2ctm, BoundaryPolicy, LeftBoundary, RightBoundary, TrafficState};
use crate::trajectory::{initial_w_from_fields, kde_fields, TrajectorySet, FRAME_DT_S};
use crate::units::M_PER_KM;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    /// Traffic cell length.
    pub dx_m: f64,
    pub kde_bandwidth_m: f64,
    /// Data dropped at each end of the recording.
    pub skip_start_s: f64,
    pub skip_end_s: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            dx_m: 10.0,
            kde_bandwidth_m: 25.0,
            skip_start_s: 60.0,
            skip_end_s: 60.0,
        }
    }
}

/// Ground-truth and modelled road totals on the same frames (g/h).
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionComparison {
    pub times_s: Vec<f64>,
    pub e_true: Vec<f64>,
    pub e_mod: Vec<f64>,
    /// Cells whose initial speed fell outside the flux family.
    pub clamped_cells: usize,
}

impl EmissionComparison {
    pub fn correction_factor(&self) -> Result<f64> {
        fit_correction_factor(&self.e_true, &self.e_mod)
    }

    pub fn error(&self, r: f64) -> Result<f64> {
        relative_l1_error(&self.e_true, &self.e_mod, r)
    }
}

/// Runs the model one frame at a time with Neumann ends, so traffic enters
/// and leaves at the state of the boundary cells.
pub fn compare_with_trajectories(
    traj: &TrajectorySet,
    flux: &FluxModel,
    coeffs: &EmissionCoefficients,
    opts: &ValidationOptions,
) -> Result<EmissionComparison> {
    let data = traj.trimmed(opts.skip_start_s, opts.skip_end_s);
    let (first, last) = data
        .frame_range()
        .ok_or_else(|| Error::Ingest("no records left after trimming".into()))?;
    let length_m = data.road_length_m();
    let nx = ((length_m / opts.dx_m).round() as usize).max(1);
    let dx_km = length_m / nx as f64 / M_PER_KM;
    if FRAME_DT_S > cfl_bound_s(dx_km, flux) {
        return Err(Error::Cfl {
            dt_s: FRAME_DT_S,
            bound_s: cfl_bound_s(dx_km, flux),
        });
    }

    let vehicles: Vec<(f64, f64)> = data
        .at_frame(first)
        .iter()
        .map(|r| (r.x_m - data.road_start_m, r.v_ms))
        .collect();
    let centers: Vec<f64> = (0..nx).map(|i| (i as f64 + 0.5) * dx_km * M_PER_KM).collect();
    let kde = kde_fields(&vehicles, opts.kde_bandwidth_m, (0.0, length_m), &centers, flux.v_max)?;
    let rho: Vec<f64> = kde.rho_vehkm.iter().map(|r| r.min(flux.rho_max)).collect();
    let w0 = initial_w_from_fields(&rho, &kde.v_kmh, flux)?;

    let bc = BoundaryPolicy {
        left: LeftBoundary::Neumann,
        right: RightBoundary::Neumann,
    };
    let box_volume = dx_km * dx_km * dx_km;
    let mut state = TrafficState::new(rho, w0.w, first as f64 * FRAME_DT_S)?;
    let frames = (last - first) as usize + 1;
    let mut e_mod = Vec::with_capacity(frames);
    for n in 0..frames {
        let kin = acceleration_analytic(&state, flux, dx_km);
        // Density is the road total, so the field is evaluated for one lane.
        e_mod.push(emission_field(&state, &kin, dx_km, 1.0, box_volume, coeffs)?.total);
        if n + 1 < frames {
            let t = state.time_s;
            state = step_2ctm(&state, &bc, flux, dx_km, FRAME_DT_S).map_err(|e| e.at_step("validation", n))?;
            state.time_s = t + FRAME_DT_S;
        }
    }
    let truth = ground_truth_emissions(&data, coeffs);
    Ok(EmissionComparison {
        times_s: truth.iter().map(|p| p.0).collect(),
        e_true: truth.iter().map(|p| p.1).collect(),
        e_mod,
        clamped_cells: w0.clamped,
    })
}
