//! Vehicle trajectory ingest, space–time aggregation, kernel density
//! reconstruction of initial fields and flux-model calibration.
//!
//! Positions are in metres along the road, speeds in m/s and accelerations in
//! m/s², as recorded. Aggregated and reconstructed fields use the traffic
//! units (veh/km, km/h, veh/h).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::units::{ms_to_kmh, M_PER_KM};

const FT_TO_M: f64 = 0.3048;

/// Recording interval of the trajectory files.
pub const FRAME_DT_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub vehicle_id: u64,
    pub frame: u64,
    pub x_m: f64,
    pub v_ms: f64,
    pub a_ms2: f64,
}

impl TrajectoryRecord {
    pub fn time_s(&self) -> f64 {
        self.frame as f64 * FRAME_DT_S
    }
}

/// Column layout of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnLayout {
    /// `vehicle_id, frame, x_m, v_ms, a_ms2` in SI units.
    Canonical,
    /// Raw NGSIM columns `Vehicle_ID, Frame_ID, Local_Y, v_Vel, v_Acc` in feet.
    Ngsim,
}

impl ColumnLayout {
    fn names(self) -> [&'static str; 5] {
        match self {
            ColumnLayout::Canonical => ["vehicle_id", "frame", "x_m", "v_ms", "a_ms2"],
            ColumnLayout::Ngsim => ["Vehicle_ID", "Frame_ID", "Local_Y", "v_Vel", "v_Acc"],
        }
    }

    fn length_scale(self) -> f64 {
        match self {
            ColumnLayout::Canonical => 1.0,
            ColumnLayout::Ngsim => FT_TO_M,
        }
    }

    fn detect(headers: &csv::StringRecord) -> Result<Self> {
        for layout in [ColumnLayout::Canonical, ColumnLayout::Ngsim] {
            if layout.names().iter().all(|n| headers.iter().any(|h| h.trim() == *n)) {
                return Ok(layout);
            }
        }
        let missing: Vec<&str> = ColumnLayout::Canonical
            .names()
            .into_iter()
            .filter(|n| !headers.iter().any(|h| h.trim() == *n))
            .collect();
        Err(Error::Ingest(format!("missing columns {missing:?}")))
    }
}

/// Trajectories of every vehicle on a road stretch `[road_start_m, road_end_m]`,
/// sorted by frame and then vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    records: Vec<TrajectoryRecord>,
    pub road_start_m: f64,
    pub road_end_m: f64,
    pub lanes: u32,
}

impl TrajectorySet {
    /// Drops records outside the road and checks that every vehicle has
    /// strictly increasing frames.
    pub fn new(mut records: Vec<TrajectoryRecord>, road_start_m: f64, road_end_m: f64, lanes: u32) -> Result<Self> {
        if !(road_start_m < road_end_m) {
            return Err(Error::Ingest(format!("empty road extent [{road_start_m}, {road_end_m}]")));
        }
        if lanes == 0 {
            return Err(Error::Ingest("lane count must be positive".into()));
        }
        records.retain(|r| r.x_m >= road_start_m && r.x_m <= road_end_m);
        for r in &records {
            if !(r.x_m.is_finite() && r.v_ms.is_finite() && r.a_ms2.is_finite()) {
                return Err(Error::Ingest(format!(
                    "non-finite value for vehicle {} at frame {}",
                    r.vehicle_id, r.frame
                )));
            }
        }
        records.sort_by_key(|r| (r.vehicle_id, r.frame));
        for pair in records.windows(2) {
            if pair[0].vehicle_id == pair[1].vehicle_id && pair[0].frame == pair[1].frame {
                return Err(Error::Ingest(format!(
                    "vehicle {} has two records at frame {}",
                    pair[0].vehicle_id, pair[0].frame
                )));
            }
        }
        records.sort_by_key(|r| (r.frame, r.vehicle_id));
        Ok(Self {
            records,
            road_start_m,
            road_end_m,
            lanes,
        })
    }

    /// Reads a delimited file with a header row in either [`ColumnLayout`].
    pub fn read_csv<R: Read>(reader: R, road_start_m: f64, road_end_m: f64, lanes: u32) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let layout = ColumnLayout::detect(&headers)?;
        let idx: Vec<usize> = layout
            .names()
            .iter()
            .map(|n| headers.iter().position(|h| h == *n).expect("detected column"))
            .collect();
        let scale = layout.length_scale();
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |k: usize| -> Result<&str> {
                row.get(idx[k])
                    .ok_or_else(|| Error::Ingest(format!("row {}: missing field {}", line + 2, layout.names()[k])))
            };
            let int = |k: usize| -> Result<u64> {
                let s = field(k)?;
                s.parse::<u64>()
                    .or_else(|_| s.parse::<f64>().map(|v| v as u64))
                    .map_err(|_| Error::Ingest(format!("row {}: bad {} `{s}`", line + 2, layout.names()[k])))
            };
            let real = |k: usize| -> Result<f64> {
                let s = field(k)?;
                s.parse::<f64>()
                    .map_err(|_| Error::Ingest(format!("row {}: bad {} `{s}`", line + 2, layout.names()[k])))
            };
            records.push(TrajectoryRecord {
                vehicle_id: int(0)?,
                frame: int(1)?,
                x_m: real(2)? * scale,
                v_ms: real(3)? * scale,
                a_ms2: real(4)? * scale,
            });
        }
        Self::new(records, road_start_m, road_end_m, lanes)
    }

    pub fn from_path(path: &Path, road_start_m: f64, road_end_m: f64, lanes: u32) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), road_start_m, road_end_m, lanes)
    }

    /// Writes the canonical layout; the header comes from the field names.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn road_length_m(&self) -> f64 {
        self.road_end_m - self.road_start_m
    }

    /// First and last frame present.
    pub fn frame_range(&self) -> Option<(u64, u64)> {
        Some((self.records.first()?.frame, self.records.last()?.frame))
    }

    /// Keeps frames in `[first + skip_start_s, last - skip_end_s]`.
    pub fn trimmed(&self, skip_start_s: f64, skip_end_s: f64) -> Self {
        let Some((first, last)) = self.frame_range() else {
            return self.clone();
        };
        let lo = first + (skip_start_s / FRAME_DT_S).round() as u64;
        let hi = last.saturating_sub((skip_end_s / FRAME_DT_S).round() as u64);
        Self {
            records: self.records.iter().filter(|r| r.frame >= lo && r.frame <= hi).copied().collect(),
            ..self.clone()
        }
    }

    /// Records grouped by frame, in frame order.
    pub fn frames(&self) -> Vec<(u64, &[TrajectoryRecord])> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.records.len() {
            let f = self.records[start].frame;
            let end = start + self.records[start..].iter().take_while(|r| r.frame == f).count();
            out.push((f, &self.records[start..end]));
            start = end;
        }
        out
    }

    /// Records at one frame (empty if the frame has none).
    pub fn at_frame(&self, frame: u64) -> &[TrajectoryRecord] {
        let lo = self.records.partition_point(|r| r.frame < frame);
        let hi = self.records.partition_point(|r| r.frame <= frame);
        &self.records[lo..hi]
    }
}

/// Traffic state of one space–time cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CellAggregate {
    /// Distinct vehicles seen in the cell.
    pub vehicles: usize,
    /// Vehicle-frame samples in the cell.
    pub samples: usize,
    pub density_vehkm: f64,
    pub speed_kmh: f64,
    pub flow_vehh: f64,
}

/// Aggregates on a regular space–time grid, `cells[n * nx + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub nx: usize,
    pub nt: usize,
    pub dx_m: f64,
    pub dt_s: f64,
    pub cells: Vec<CellAggregate>,
}

impl CellGrid {
    pub fn get(&self, i: usize, n: usize) -> &CellAggregate {
        &self.cells[n * self.nx + i]
    }

    /// Cells that saw at least one vehicle, as `(density, flow)` points.
    pub fn occupied_points(&self) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.vehicles > 0)
            .map(|c| (c.density_vehkm, c.flow_vehh))
            .collect()
    }
}

/// Density is the number of distinct vehicles crossing the cell during its
/// time window divided by the cell length; speed is the mean of the in-cell
/// samples; flow is their product.
pub fn aggregate_cells(traj: &TrajectorySet, cell_dx_m: f64, cell_dt_s: f64) -> Result<CellGrid> {
    if !(cell_dx_m > 0.0 && cell_dt_s > 0.0) {
        return Err(Error::Domain {
            quantity: "aggregation cell size",
            value: cell_dx_m.min(cell_dt_s),
            domain: "(0, inf)".into(),
        });
    }
    let Some((first, last)) = traj.frame_range() else {
        return Ok(CellGrid {
            nx: 0,
            nt: 0,
            dx_m: cell_dx_m,
            dt_s: cell_dt_s,
            cells: Vec::new(),
        });
    };
    let nx = ((traj.road_length_m() / cell_dx_m).ceil() as usize).max(1);
    let t0 = first as f64 * FRAME_DT_S;
    let span = (last - first) as f64 * FRAME_DT_S;
    let nt = ((span / cell_dt_s).floor() as usize + 1).max(1);
    let mut seen: Vec<BTreeMap<u64, ()>> = vec![BTreeMap::new(); nx * nt];
    let mut speed_sum = vec![0.0; nx * nt];
    let mut samples = vec![0usize; nx * nt];
    for r in traj.records() {
        let i = (((r.x_m - traj.road_start_m) / cell_dx_m).floor() as usize).min(nx - 1);
        let n = (((r.time_s() - t0) / cell_dt_s + 1e-9).floor() as usize).min(nt - 1);
        let k = n * nx + i;
        seen[k].insert(r.vehicle_id, ());
        speed_sum[k] += ms_to_kmh(r.v_ms);
        samples[k] += 1;
    }
    let len_km = cell_dx_m / M_PER_KM;
    let cells = (0..nx * nt)
        .map(|k| {
            let vehicles = seen[k].len();
            let density = vehicles as f64 / len_km;
            let speed = if samples[k] > 0 {
                speed_sum[k] / samples[k] as f64
            } else {
                0.0
            };
            CellAggregate {
                vehicles,
                samples: samples[k],
                density_vehkm: density,
                speed_kmh: speed,
                flow_vehh: density * speed,
            }
        })
        .collect();
    Ok(CellGrid {
        nx,
        nt,
        dx_m: cell_dx_m,
        dt_s: cell_dt_s,
        cells,
    })
}

/// Density and speed reconstructed on a set of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeFields {
    pub rho_vehkm: Vec<f64>,
    pub v_kmh: Vec<f64>,
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gaussian kernel with mirror images at both road ends, so mass that would
/// leak past `a` or `b` is folded back in.
pub fn reflected_kernel(x: f64, xi: f64, h: f64, a: f64, b: f64) -> f64 {
    std_normal_pdf((x - xi) / h) + std_normal_pdf((x - (2.0 * a - xi)) / h) + std_normal_pdf((x - (2.0 * b - xi)) / h)
}

/// Parzen window estimate at `points_m` from vehicles at `(x_m, v_ms)`.
/// Where no kernel mass reaches a point the speed defaults to `v_free_kmh`.
pub fn kde_fields(
    vehicles: &[(f64, f64)],
    h_m: f64,
    road_m: (f64, f64),
    points_m: &[f64],
    v_free_kmh: f64,
) -> Result<KdeFields> {
    if !(h_m > 0.0) {
        return Err(Error::Domain {
            quantity: "kernel bandwidth",
            value: h_m,
            domain: "(0, inf) m".into(),
        });
    }
    let (a, b) = road_m;
    let mut rho = Vec::with_capacity(points_m.len());
    let mut v = Vec::with_capacity(points_m.len());
    for &x in points_m {
        let mut mass = 0.0;
        let mut momentum = 0.0;
        for &(xi, vi) in vehicles {
            let k = reflected_kernel(x, xi, h_m, a, b);
            mass += k;
            momentum += vi * k;
        }
        // (1/h) per metre, reported per km.
        rho.push(mass / h_m * M_PER_KM);
        v.push(if mass > 0.0 { ms_to_kmh(momentum / mass) } else { v_free_kmh });
    }
    Ok(KdeFields { rho_vehkm: rho, v_kmh: v })
}

/// Per-cell `w` with `V(rho, w) = v`, plus the number of cells whose target
/// speed lay outside `[V(rho, w_l), V(rho, w_r)]` and were clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct WReconstruction {
    pub w: Vec<f64>,
    pub clamped: usize,
}

/// Solves `V(rho, w) = v` cell by cell. The congested speed is affine in
/// `lambda(w)`, which gives the root in closed form. Free-flow cells (and the
/// jammed limit, where every `w` gives zero speed) take `w_r`.
pub fn initial_w_from_fields(rho_vehkm: &[f64], v_kmh: &[f64], flux: &FluxModel) -> Result<WReconstruction> {
    if rho_vehkm.len() != v_kmh.len() {
        return Err(Error::Length {
            what: "density / speed fields",
            left: rho_vehkm.len(),
            right: v_kmh.len(),
        });
    }
    let mut clamped = 0;
    let w = rho_vehkm
        .iter()
        .zip(v_kmh)
        .map(|(&rho, &v)| {
            if rho <= flux.rho_f || rho >= flux.rho_max {
                return flux.w_r;
            }
            let base = flux.v_max * (1.0 - rho / flux.rho_max);
            let share = flux.rho_f / rho;
            let lambda = (v / base - share) / (1.0 - share);
            if !(0.0..=1.0).contains(&lambda) {
                clamped += 1;
            }
            flux.w_l + lambda.clamp(0.0, 1.0) * (flux.w_r - flux.w_l)
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} cells had speeds outside the flux family and were clamped");
    }
    Ok(WReconstruction { w, clamped })
}

/// Search ranges and acceptance rules for [`calibrate_flux_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationOptions {
    pub v_max_kmh: [f64; 2],
    pub v_max_step_kmh: f64,
    pub rho_f_vehkm: [f64; 2],
    pub rho_f_step_vehkm: f64,
    /// Minimum fraction of points the envelope must cover.
    pub coverage_target: f64,
    /// Relative half-width of the band around the free-flow curve.
    pub free_band: f64,
    /// Replaces `w_l = g(rho_f)` when set.
    pub w_l_override: Option<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            v_max_kmh: [30.0, 130.0],
            v_max_step_kmh: 1.0,
            rho_f_vehkm: [5.0, 300.0],
            rho_f_step_vehkm: 1.0,
            coverage_target: 0.97,
            free_band: 0.10,
            w_l_override: None,
        }
    }
}

/// Outcome of the envelope search.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub flux: FluxModel,
    pub coverage: f64,
    pub points: usize,
    pub target_met: bool,
    pub warnings: Vec<String>,
}

/// Fraction of `(rho, Q)` points explained by the flux family: free-flow
/// points within `band` of the free-flow curve, congested points between the
/// lower chord and the upper parabola.
pub fn envelope_coverage(points: &[(f64, f64)], v_max: f64, rho_f: f64, rho_max: f64, band: f64) -> usize {
    let g = |rho: f64| rho * v_max * (1.0 - rho / rho_max);
    let f = |rho: f64| rho_f * v_max * (1.0 - rho / rho_max);
    points
        .iter()
        .filter(|&&(rho, q)| {
            if rho <= rho_f {
                (q - g(rho)).abs() <= band * g(rho)
            } else {
                rho <= rho_max && q >= f(rho) - 1e-9 && q <= g(rho) + 1e-9
            }
        })
        .count()
}

fn grid_values(range: [f64; 2], step: f64) -> Vec<f64> {
    let n = ((range[1] - range[0]) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| range[0] + k as f64 * step).collect()
}

/// Grid search over `(v_max, rho_f)` with `rho_max = lanes / vehicle_length`.
/// The most points covered wins; ties go to the largest `rho_f` (the
/// tightest envelope), then to the smallest mean free-flow misfit. Then
/// `w_l = g(rho_f)` and `w_r = g(rho_max / 2)`.
pub fn calibrate_flux_model(
    points: &[(f64, f64)],
    lanes: u32,
    vehicle_length_km: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    if points.is_empty() {
        return Err(Error::Degenerate("no aggregate points to calibrate on".into()));
    }
    if !(vehicle_length_km > 0.0) || lanes == 0 {
        return Err(Error::Domain {
            quantity: "lanes / vehicle length",
            value: vehicle_length_km,
            domain: "positive".into(),
        });
    }
    if !(opts.v_max_step_kmh > 0.0 && opts.rho_f_step_vehkm > 0.0) {
        return Err(Error::config("calibration", "grid steps must be positive"));
    }
    let rho_max = lanes as f64 / vehicle_length_km;
    let misfit = |v_max: f64, rho_f: f64| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &(rho, q) in points {
            if rho > 0.0 && rho <= rho_f {
                let g = rho * v_max * (1.0 - rho / rho_max);
                sum += ((q - g) / g).abs();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for rho_f in grid_values(opts.rho_f_vehkm, opts.rho_f_step_vehkm) {
        if rho_f >= rho_max {
            break;
        }
        for v_max in grid_values(opts.v_max_kmh, opts.v_max_step_kmh) {
            let covered = envelope_coverage(points, v_max, rho_f, rho_max, opts.free_band);
            let better = match best {
                None => true,
                Some((c, bf, _, bm)) => {
                    covered > c
                        || (covered == c && rho_f > bf)
                        || (covered == c && rho_f == bf && misfit(v_max, rho_f) < bm)
                }
            };
            if better {
                best = Some((covered, rho_f, v_max, misfit(v_max, rho_f)));
            }
        }
    }
    let (covered, rho_f, v_max, _) =
        best.ok_or_else(|| Error::config("calibration.rho_f_vehkm", "no candidate below the maximum density"))?;
    let coverage = covered as f64 / points.len() as f64;
    let g = |rho: f64| rho * v_max * (1.0 - rho / rho_max);
    let mut warnings = Vec::new();
    let target_met = coverage >= opts.coverage_target;
    if !target_met {
        let msg = format!(
            "best envelope covers {:.2}% of points, below the {:.0}% target",
            100.0 * coverage,
            100.0 * opts.coverage_target
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let flux = FluxModel::new(v_max, rho_f, rho_max, opts.w_l_override.unwrap_or(g(rho_f)), g(rho_max / 2.0))?;
    Ok(Calibration {
        flux,
        coverage,
        points: points.len(),
        target_met,
        warnings,
    })
}

/// Parameters of a single-lane intelligent-driver-model run used to produce
/// synthetic trajectory files.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTraffic {
    pub road_length_m: f64,
    pub duration_s: f64,
    /// Seconds between vehicle insertions at the upstream end.
    pub insertion_headway_s: f64,
    pub desired_speed_ms: f64,
    pub time_gap_s: f64,
    pub min_gap_m: f64,
    pub max_accel_ms2: f64,
    pub comfort_decel_ms2: f64,
    pub vehicle_length_m: f64,
    /// A slow zone `[start_m, end_m]` with its speed limit, switched on for
    /// `active_s = [from, until]`.
    pub slow_zone_m: [f64; 2],
    pub slow_speed_ms: f64,
    pub slow_active_s: [f64; 2],
}

impl Default for SyntheticTraffic {
    fn default() -> Self {
        Self {
            road_length_m: 500.0,
            duration_s: 300.0,
            insertion_headway_s: 2.0,
            desired_speed_ms: 18.0,
            time_gap_s: 1.2,
            min_gap_m: 2.0,
            max_accel_ms2: 1.5,
            comfort_decel_ms2: 2.0,
            vehicle_length_m: 5.0,
            slow_zone_m: [300.0, 360.0],
            slow_speed_ms: 4.0,
            slow_active_s: [60.0, 180.0],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SimVehicle {
    id: u64,
    x: f64,
    v: f64,
    a: f64,
}

impl SyntheticTraffic {
    fn idm_accel(&self, v: f64, gap: f64, dv: f64, v0: f64) -> f64 {
        let s_star = self.min_gap_m
            + (v * self.time_gap_s + v * dv / (2.0 * (self.max_accel_ms2 * self.comfort_decel_ms2).sqrt())).max(0.0);
        let free = 1.0 - (v / v0).powi(4);
        self.max_accel_ms2 * (free - (s_star / gap.max(0.1)).powi(2))
    }

    /// Deterministic run sampled every frame. Vehicles leave the set once
    /// they pass the downstream end.
    pub fn generate(&self) -> Result<TrajectorySet> {
        let frames = (self.duration_s / FRAME_DT_S).round() as u64;
        let insert_every = ((self.insertion_headway_s / FRAME_DT_S).round() as u64).max(1);
        let mut fleet: Vec<SimVehicle> = Vec::new();
        let mut records = Vec::new();
        let mut next_id = 1;
        for frame in 0..=frames {
            let t = frame as f64 * FRAME_DT_S;
            if frame % insert_every == 0 {
                let room = fleet.last().is_none_or(|u| u.x - self.vehicle_length_m > self.min_gap_m + 5.0);
                if room {
                    let v = fleet.last().map_or(self.desired_speed_ms, |u| u.v.min(self.desired_speed_ms));
                    fleet.push(SimVehicle {
                        id: next_id,
                        x: 0.0,
                        v,
                        a: 0.0,
                    });
                    next_id += 1;
                }
            }
            let slow = t >= self.slow_active_s[0] && t < self.slow_active_s[1];
            let accels: Vec<f64> = (0..fleet.len())
                .map(|k| {
                    let me = fleet[k];
                    let v0 = if slow && me.x >= self.slow_zone_m[0] - 30.0 && me.x <= self.slow_zone_m[1] {
                        self.slow_speed_ms
                    } else {
                        self.desired_speed_ms
                    };
                    let (gap, dv) = if k == 0 {
                        (1e6, 0.0)
                    } else {
                        let lead = fleet[k - 1];
                        (lead.x - me.x - self.vehicle_length_m, me.v - lead.v)
                    };
                    self.idm_accel(me.v, gap, dv, v0).max(-9.0)
                })
                .collect();
            for (veh, a) in fleet.iter_mut().zip(&accels) {
                veh.a = *a;
                records.push(TrajectoryRecord {
                    vehicle_id: veh.id,
                    frame,
                    x_m: veh.x,
                    v_ms: veh.v,
                    a_ms2: *a,
                });
            }
            for veh in fleet.iter_mut() {
                let v_next = (veh.v + veh.a * FRAME_DT_S).max(0.0);
                veh.x += 0.5 * (veh.v + v_next) * FRAME_DT_S;
                veh.v = v_next;
            }
            fleet.retain(|u| u.x <= self.road_length_m);
        }
        TrajectorySet::new(records, 0.0, self.road_length_m, 1)
    }
}
