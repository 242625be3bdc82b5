//! Scenario pipeline: traffic, emissions, roadside chemistry and dispersion
//! run in that order, plus the parameter sweeps and run comparisons built on
//! top of it.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::chemistry::{initial_box_state, run_roadside_chemistry, RoadsideChemistry};
use crate::config::{validate_config, RunMetadata, ScenarioConfig, ValidatedConfig};
use crate::dispersion::{
    compare_dispersion, couple_traffic_source, run_dispersion, DispersionRun, DispersionSolver, SourceSchedule,
};
use crate::emission::{emission_field, EmissionCoefficients, EmissionField};
use crate::error::{Error, Result};
use crate::kinematics::{acceleration_analytic, KinematicsField};
use crate::plot::{heatmap, line_chart, Series};
use crate::traffic::{step_2ctm, TrafficLightPolicy, TrafficState};
use crate::units::{Species, UnitContext, M_PER_KM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Traffic,
    Emission,
    Chemistry,
    Dispersion,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Traffic, Stage::Emission, Stage::Chemistry, Stage::Dispersion];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Traffic => "traffic",
            Stage::Emission => "emission",
            Stage::Chemistry => "chemistry",
            Stage::Dispersion => "dispersion",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.label() == s)
            .ok_or_else(|| Error::config("--disable", format!("unknown stage `{s}`")))
    }
}

/// Stages switched off for a run. A stage also stays off when one it depends
/// on is disabled: emissions need traffic, chemistry and dispersion need
/// emissions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageSelection {
    disabled: BTreeSet<Stage>,
}

impl StageSelection {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn without(mut self, stage: Stage) -> Self {
        self.disabled.insert(stage);
        self
    }

    pub fn disabled(&self) -> impl Iterator<Item = Stage> + '_ {
        self.disabled.iter().copied()
    }

    pub fn runs(&self, stage: Stage) -> bool {
        let requires = match stage {
            Stage::Traffic => &[][..],
            Stage::Emission => &[Stage::Traffic][..],
            Stage::Chemistry | Stage::Dispersion => &[Stage::Traffic, Stage::Emission][..],
        };
        !self.disabled.contains(&stage) && requires.iter().all(|s| !self.disabled.contains(s))
    }
}

/// Traffic states at every step, `states[0]` being the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficRun {
    pub dx_km: f64,
    pub states: Vec<TrafficState>,
    pub kinematics: Vec<KinematicsField>,
}

impl TrafficRun {
    pub fn times_s(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time_s).collect()
    }
}

/// Steps the 2CTM scheme to the horizon. Times are `n * dt`, with a shorter
/// final step if `dt` does not divide the horizon.
pub fn simulate_traffic(v: &ValidatedConfig) -> Result<TrafficRun> {
    let grid = v.grid();
    let flux = v.flux();
    let bc = v.boundary_policy();
    let dt = v.dt_s();
    let steps = grid.num_steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut kinematics = Vec::with_capacity(steps + 1);
    let mut state = v.initial_state();
    for n in 0..steps {
        kinematics.push(acceleration_analytic(&state, flux, grid.dx_km));
        let t_next = ((n + 1) as f64 * dt).min(grid.horizon_s);
        let mut next = step_2ctm(&state, &bc, flux, grid.dx_km, t_next - state.time_s).map_err(|e| e.at_step("traffic", n))?;
        next.time_s = t_next;
        states.push(std::mem::replace(&mut state, next));
    }
    kinematics.push(acceleration_analytic(&state, flux, grid.dx_km));
    states.push(state);
    Ok(TrafficRun {
        dx_km: grid.dx_km,
        states,
        kinematics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionRun {
    /// Volume of the roadside box over each cell, `dx³`.
    pub box_volume_km3: f64,
    pub fields: Vec<EmissionField>,
}

impl EmissionRun {
    pub fn totals_g_per_h(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.total).collect()
    }
}

pub fn compute_emissions(v: &ValidatedConfig, traffic: &TrafficRun) -> Result<EmissionRun> {
    let coeffs = EmissionCoefficients::by_name(&v.config.emission.table)?;
    let dx = traffic.dx_km;
    let box_volume_km3 = dx * dx * dx;
    let fields = traffic
        .states
        .iter()
        .zip(&traffic.kinematics)
        .enumerate()
        .map(|(n, (s, k))| {
            emission_field(s, k, dx, v.grid().lanes, box_volume_km3, &coeffs).map_err(|e| e.at_step("emission", n))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmissionRun {
        box_volume_km3,
        fields,
    })
}

/// Per-cell box chemistry fed by the emission source held constant over
/// each traffic step.
pub fn roadside_chemistry(v: &ValidatedConfig, traffic: &TrafficRun, emission: &EmissionRun) -> Result<RoadsideChemistry> {
    let cfg = &v.config.chemistry;
    let units = UnitContext::default();
    let window = cfg.initial_emission_window_s.unwrap_or(v.dt_s());
    let psi0: Vec<[f64; 5]> = emission.fields[0]
        .source_concentration_rate
        .iter()
        .map(|&s| initial_box_state(s, window, cfg, &units))
        .collect();
    let sources: Vec<Vec<f64>> = emission.fields[..emission.fields.len() - 1]
        .iter()
        .map(|f| f.source_concentration_rate.clone())
        .collect();
    run_roadside_chemistry(&traffic.times_s(), &sources, &psi0, cfg, &units)
}

/// Start of the road segment under the dispersion domain.
pub fn dispersion_segment_start_km(v: &ValidatedConfig) -> Result<f64> {
    let d = v
        .config
        .dispersion
        .as_ref()
        .ok_or_else(|| Error::config("dispersion", "section missing"))?;
    let start = d
        .segment_start_km
        .unwrap_or(v.grid().length_km - d.length_m / M_PER_KM);
    if start < -1e-12 || start + d.length_m / M_PER_KM > v.grid().length_km * (1.0 + 1e-12) {
        return Err(Error::config(
            "dispersion.segment_start_km",
            format!("segment [{start}, {}] km is not on the road", start + d.length_m / M_PER_KM),
        ));
    }
    Ok(start.max(0.0))
}

/// Runs the dispersion stage with the emission fields as source.
pub fn disperse(v: &ValidatedConfig, emission: &EmissionRun) -> Result<DispersionRun> {
    let d = v
        .config
        .dispersion
        .as_ref()
        .ok_or_else(|| Error::config("dispersion", "section missing"))?;
    let solver = DispersionSolver::new(d, &v.config.chemistry, v.dt_s())?;
    let start = dispersion_segment_start_km(v)?;
    let samples = emission
        .fields
        .iter()
        .map(|f| couple_traffic_source(&f.rate_per_cell, v.grid().dx_km, start, &solver.grid))
        .collect::<Result<Vec<_>>>()?;
    let schedule = SourceSchedule {
        dt_s: v.dt_s(),
        samples,
        cycle_s: v.light().map(|l| l.cycle_s),
    };
    run_dispersion(&solver, &schedule, v.config.output.snapshot_every_s)
}

/// Everything a run produced. Stages that did not run are `None`.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub validated: ValidatedConfig,
    pub traffic: Option<TrafficRun>,
    pub emission: Option<EmissionRun>,
    pub chemistry: Option<RoadsideChemistry>,
    pub dispersion: Option<DispersionRun>,
    pub metadata: RunMetadata,
}

pub fn run_pipeline(cfg: ScenarioConfig, stages: &StageSelection) -> Result<PipelineResult> {
    let validated = validate_config(cfg).map_err(|e| e.in_stage("config"))?;
    let mut disabled: Vec<String> = stages.disabled().map(|s| s.label().to_string()).collect();
    let has_dispersion = validated.config.dispersion.is_some();
    let chem_enabled = validated.config.chemistry.enabled;
    for (stage, reason) in [
        (Stage::Chemistry, !chem_enabled),
        (Stage::Dispersion, !has_dispersion),
    ] {
        if reason && !disabled.iter().any(|d| d == stage.label()) {
            disabled.push(stage.label().to_string());
        }
    }
    let mut metadata = RunMetadata::new(&validated, disabled);

    let traffic = if stages.runs(Stage::Traffic) {
        log::info!("traffic: {} steps of {} s", validated.grid().num_steps(), validated.dt_s());
        Some(simulate_traffic(&validated).map_err(|e| e.in_stage("traffic"))?)
    } else {
        None
    };
    let emission = match (&traffic, stages.runs(Stage::Emission)) {
        (Some(t), true) => Some(compute_emissions(&validated, t).map_err(|e| e.in_stage("emission"))?),
        _ => None,
    };
    let chemistry = match (&traffic, &emission, stages.runs(Stage::Chemistry) && chem_enabled) {
        (Some(t), Some(e), true) => {
            log::info!("chemistry: {} cells", t.states[0].len());
            Some(roadside_chemistry(&validated, t, e).map_err(|e| e.in_stage("chemistry"))?)
        }
        _ => None,
    };
    let dispersion = match (&emission, stages.runs(Stage::Dispersion) && has_dispersion) {
        (Some(e), true) => {
            let run = disperse(&validated, e).map_err(|e| e.in_stage("dispersion"))?;
            metadata.dispersion_dt_s = run.probe_series.get(1).map(|p| p.0);
            metadata.dispersion_steps = Some(run.probe_series.len() - 1);
            Some(run)
        }
        _ => None,
    };
    Ok(PipelineResult {
        validated,
        traffic,
        emission,
        chemistry,
        dispersion,
        metadata,
    })
}

/// Files written for one run. Paths of stages that did not run are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub traffic: Option<PathBuf>,
    pub emission_series: Option<PathBuf>,
    pub emission_cells: Option<PathBuf>,
    pub chemistry: Option<PathBuf>,
    pub chemistry_totals: Option<PathBuf>,
    pub dispersion_probe: Option<PathBuf>,
    pub dispersion_snapshots: Option<PathBuf>,
    pub metadata: PathBuf,
    pub plots: Vec<PathBuf>,
}

impl RunArtifacts {
    pub fn files(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = [
            &self.traffic,
            &self.emission_series,
            &self.emission_cells,
            &self.chemistry,
            &self.chemistry_totals,
            &self.dispersion_probe,
            &self.dispersion_snapshots,
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
        out.push(&self.metadata);
        out.extend(self.plots.iter().map(PathBuf::as_path));
        out
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Indices of the dumped time levels: every `stride`-th plus the last one.
fn dump_indices(len: usize, dt_s: f64, every_s: Option<f64>) -> Vec<usize> {
    let stride = every_s.map_or(1, |e| ((e / dt_s).round() as usize).max(1));
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if idx.last() != Some(&(len - 1)) && len > 0 {
        idx.push(len - 1);
    }
    idx
}

/// Writes CSVs, the metadata sidecar and SVG plots into `dir`.
pub fn write_artifacts(result: &PipelineResult, dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let v = &result.validated;
    let every = v.config.output.traffic_every_s;
    let mut art = RunArtifacts {
        dir: dir.to_path_buf(),
        metadata: dir.join("metadata.toml"),
        ..Default::default()
    };
    write_text(&art.metadata, &result.metadata.to_toml_string()?)?;

    if let Some(t) = &result.traffic {
        let path = dir.join("traffic.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["t_s", "cell", "x_km", "rho_vehkm", "v_kmh", "w_vehh", "a_ms2"])?;
        let centers = v.grid().centers_km();
        for n in dump_indices(t.states.len(), v.dt_s(), every) {
            let (s, k) = (&t.states[n], &t.kinematics[n]);
            for i in 0..s.len() {
                w.write_record(&[
                    s.time_s.to_string(),
                    i.to_string(),
                    centers[i].to_string(),
                    s.rho[i].to_string(),
                    k.v[i].to_string(),
                    s.w[i].to_string(),
                    k.a[i].to_string(),
                ])?;
            }
        }
        finish(w, &path)?;
        art.traffic = Some(path);
        art.plots.push(traffic_heatmap(t, v, dir)?);
    }

    if let (Some(t), Some(e)) = (&result.traffic, &result.emission) {
        let path = dir.join("emission_total.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["t_s", "total_g_per_h"])?;
        let series: Vec<(f64, f64)> = t.states.iter().zip(&e.fields).map(|(s, f)| (s.time_s, f.total)).collect();
        for (time, total) in &series {
            w.write_record(&[time.to_string(), total.to_string()])?;
        }
        finish(w, &path)?;
        art.emission_series = Some(path);

        let path = dir.join("emission_cells.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["t_s", "cell", "rate_g_per_h", "source_g_per_km3_h"])?;
        for n in dump_indices(e.fields.len(), v.dt_s(), every) {
            let f = &e.fields[n];
            for i in 0..f.rate_per_cell.len() {
                w.write_record(&[
                    t.states[n].time_s.to_string(),
                    i.to_string(),
                    f.rate_per_cell[i].to_string(),
                    f.source_concentration_rate[i].to_string(),
                ])?;
            }
        }
        finish(w, &path)?;
        art.emission_cells = Some(path);

        let svg = dir.join("emission_total.svg");
        write_text(
            &svg,
            &line_chart(
                "Total NOx emission rate",
                "t (s)",
                "g/h",
                &[Series {
                    label: "road total",
                    points: &series,
                }],
            ),
        )?;
        art.plots.push(svg);
    }

    if let Some(c) = &result.chemistry {
        let units = UnitContext::default();
        let header = ["t_s", "cell", "O", "O2", "O3", "NO", "NO2"];
        let path = dir.join("chemistry.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(header)?;
        for n in dump_indices(c.times_s.len(), v.dt_s(), every) {
            for (i, psi) in c.states[n].iter().enumerate() {
                let g = units.state_to_g_per_km3(psi);
                let mut row = vec![c.times_s[n].to_string(), i.to_string()];
                row.extend(g.iter().map(|x| x.to_string()));
                w.write_record(&row)?;
            }
        }
        finish(w, &path)?;
        art.chemistry = Some(path);

        let path = dir.join("chemistry_totals.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["t_s", "O", "O2", "O3", "NO", "NO2"])?;
        for (time, tot) in c.times_s.iter().zip(&c.totals_g_per_km3) {
            let mut row = vec![time.to_string()];
            row.extend(tot.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        finish(w, &path)?;
        art.chemistry_totals = Some(path);

        let o3: Vec<(f64, f64)> = c
            .times_s
            .iter()
            .zip(&c.totals_g_per_km3)
            .map(|(t, tot)| (*t, tot[Species::O3.index()]))
            .collect();
        let svg = dir.join("chemistry_o3_total.svg");
        write_text(
            &svg,
            &line_chart("Road total O3", "t (s)", "g/km³", &[Series { label: "O3", points: &o3 }]),
        )?;
        art.plots.push(svg);
    }

    if let Some(d) = &result.dispersion {
        let path = dir.join("dispersion_probe.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["t_s", "o3_probe_row_mean_g_per_km3"])?;
        for (time, m) in &d.probe_series {
            w.write_record(&[time.to_string(), m.to_string()])?;
        }
        finish(w, &path)?;
        art.dispersion_probe = Some(path);

        let path = dir.join("dispersion_snapshots.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["t_s", "i", "j", "O", "O2", "O3", "NO", "NO2"])?;
        for snap in &d.snapshots {
            for j in 0..d.grid.ny {
                for i in 0..d.grid.nx {
                    let c = j * d.grid.nx + i;
                    let mut row = vec![snap.time_s.to_string(), i.to_string(), j.to_string()];
                    row.extend(snap.fields_g_per_km3.iter().map(|f| f[c].to_string()));
                    w.write_record(&row)?;
                }
            }
        }
        finish(w, &path)?;
        art.dispersion_snapshots = Some(path);

        let last = d.snapshots.last().expect("final snapshot");
        let svg = dir.join("dispersion_o3_final.svg");
        write_text(
            &svg,
            &heatmap(
                "O3 at the end of the run (g/km³)",
                "x (m)",
                "y (m)",
                d.grid.nx,
                d.grid.ny,
                (0.0, d.grid.nx as f64 * d.grid.dx_m),
                (0.0, d.grid.ny as f64 * d.grid.dy_m),
                &last.fields_g_per_km3[Species::O3.index()],
            ),
        )?;
        art.plots.push(svg);
    }
    Ok(art)
}

fn traffic_heatmap(t: &TrafficRun, v: &ValidatedConfig, dir: &Path) -> Result<PathBuf> {
    // Average into at most 200 time bins to keep the file small.
    let nx = t.states[0].len();
    let bins = t.states.len().min(200);
    let mut values = vec![0.0; bins * nx];
    let mut counts = vec![0usize; bins];
    for (n, s) in t.states.iter().enumerate() {
        let b = n * bins / t.states.len();
        counts[b] += 1;
        for i in 0..nx {
            values[b * nx + i] += s.rho[i];
        }
    }
    for b in 0..bins {
        for i in 0..nx {
            values[b * nx + i] /= counts[b].max(1) as f64;
        }
    }
    let svg = dir.join("traffic_density.svg");
    write_text(
        &svg,
        &heatmap(
            "Density (veh/km)",
            "x (km)",
            "t (s)",
            nx,
            bins,
            (0.0, v.grid().length_km),
            (0.0, v.grid().horizon_s),
            &values,
        ),
    )?;
    Ok(svg)
}

/// Largest value of a series.
pub fn peak(series: &[f64]) -> f64 {
    series.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean over the last `cycles` light cycles of a series sampled every
/// `dt_s` from `t = 0`. Falls back to the whole series if it is shorter.
pub fn asymptotic_mean(series: &[f64], dt_s: f64, cycle_s: f64, cycles: usize) -> f64 {
    let window = ((cycles as f64 * cycle_s / dt_s).round() as usize).clamp(1, series.len().max(1));
    let tail = &series[series.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

fn sample_linear(series: &[f64], dt_s: f64, t: f64) -> f64 {
    let x = t / dt_s;
    let k = (x.floor() as usize).min(series.len() - 1);
    if k + 1 >= series.len() {
        return series[series.len() - 1];
    }
    let f = x - k as f64;
    series[k] * (1.0 - f) + series[k + 1] * f
}

/// Relative L1 distance between consecutive full periods of `series`
/// (sampled every `dt_s` from `t = 0`), for periods starting at multiples of
/// `period_s` no earlier than `start_s`.
pub fn cycle_gaps(series: &[f64], dt_s: f64, period_s: f64, start_s: f64) -> Vec<f64> {
    let end = dt_s * (series.len().saturating_sub(1)) as f64;
    let per = ((period_s / dt_s).round() as usize).max(1);
    let mut k = (start_s / period_s - 1e-9).ceil().max(0.0) as usize;
    let mut gaps = Vec::new();
    while (k as f64 + 2.0) * period_s <= end + 1e-9 {
        let a0 = k as f64 * period_s;
        let b0 = a0 + period_s;
        let (mut num, mut den) = (0.0, 0.0);
        for m in 0..per {
            let off = m as f64 * period_s / per as f64;
            let a = sample_linear(series, dt_s, a0 + off);
            let b = sample_linear(series, dt_s, b0 + off);
            num += (a - b).abs();
            den += a.abs();
        }
        gaps.push(if den > 0.0 { num / den } else { 0.0 });
        k += 1;
    }
    gaps
}

/// Sum over all output times of the road totals, per species (g/km³): the
/// total amount of each species over the whole run.
pub fn chemistry_amounts(chem: &RoadsideChemistry) -> [f64; 5] {
    let mut out = [0.0; 5];
    for tot in &chem.totals_g_per_km3 {
        for s in 0..5 {
            out[s] += tot[s];
        }
    }
    out
}

/// One member of a light sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cycle_s: f64,
    pub red_s: f64,
    pub ratio: f64,
    pub peak_g_per_h: f64,
    pub asymptotic_mean_g_per_h: f64,
    /// Species amounts over the run when chemistry ran.
    pub amounts_g_per_km3: Option<[f64; 5]>,
    pub emission_series_g_per_h: Vec<f64>,
}

fn sweep_member(cfg: ScenarioConfig, stages: &StageSelection) -> Result<SweepRow> {
    let light = cfg.light.ok_or_else(|| Error::config("light", "sweep member without a light"))?;
    let result = run_pipeline(cfg, &stages.clone().without(Stage::Dispersion))?;
    let emission = result
        .emission
        .as_ref()
        .ok_or_else(|| Error::config("--disable", "sweeps need the emission stage"))?;
    let series = emission.totals_g_per_h();
    Ok(SweepRow {
        cycle_s: light.cycle_s,
        red_s: light.red_s,
        ratio: light.ratio(),
        peak_g_per_h: peak(&series),
        asymptotic_mean_g_per_h: asymptotic_mean(&series, result.validated.dt_s(), light.cycle_s, 3),
        amounts_g_per_km3: result.chemistry.as_ref().map(chemistry_amounts),
        emission_series_g_per_h: series,
    })
}

/// Runs members concurrently, one thread per member up to the available
/// parallelism. Rows come back in input order.
fn run_sweep(configs: Vec<ScenarioConfig>, stages: &StageSelection) -> Result<Vec<SweepRow>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut rows = Vec::with_capacity(configs.len());
    for chunk in configs.chunks(workers) {
        let results: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .cloned()
                .map(|cfg| scope.spawn(move || sweep_member(cfg, stages)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Degenerate("sweep member panicked".into()))))
                .collect()
        });
        for r in results {
            rows.push(r?);
        }
    }
    Ok(rows)
}

/// Light cycles of different lengths with the same green/red ratio.
pub fn sweep_fixed_ratio(base: &ScenarioConfig, ratio: f64, cycles_s: &[f64], stages: &StageSelection) -> Result<Vec<SweepRow>> {
    if !(ratio > 0.0) {
        return Err(Error::config("ratio", "green/red ratio must be positive"));
    }
    let configs = cycles_s
        .iter()
        .map(|&tc| {
            let light = TrafficLightPolicy::from_ratio(tc, ratio)?;
            let mut cfg = base.clone().with_light(light);
            cfg.name = format!("{}-tc{}", base.name, tc);
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    run_sweep(configs, stages)
}

/// One cycle length with different green/red ratios.
pub fn sweep_fixed_cycle(base: &ScenarioConfig, cycle_s: f64, ratios: &[f64], stages: &StageSelection) -> Result<Vec<SweepRow>> {
    if !(cycle_s > 0.0) {
        return Err(Error::config("cycle_s", "cycle must be positive"));
    }
    let configs = ratios
        .iter()
        .map(|&r| {
            let light = TrafficLightPolicy::from_ratio(cycle_s, r)?;
            let mut cfg = base.clone().with_light(light);
            cfg.name = format!("{}-r{}", base.name, r);
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    run_sweep(configs, stages)
}

/// Species amounts of the base scenario without any light, the reference
/// for amount variations.
pub fn baseline_amounts(base: &ScenarioConfig) -> Result<[f64; 5]> {
    let mut cfg = base.clone();
    if cfg.boundary.right == crate::config::RightBoundaryConfig::TrafficLight {
        cfg.boundary.right = crate::config::RightBoundaryConfig::FreeOutflow;
    }
    cfg.light = None;
    let result = run_pipeline(cfg, &StageSelection::all().without(Stage::Dispersion))?;
    result
        .chemistry
        .as_ref()
        .map(chemistry_amounts)
        .ok_or_else(|| Error::config("chemistry.enabled", "baseline needs the chemistry stage"))
}

/// Writes a sweep table. With a baseline the species columns hold the
/// variation with respect to it, otherwise the raw amounts.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow], baseline: Option<[f64; 5]>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let prefix = if baseline.is_some() { "variation_" } else { "amount_" };
    let mut header = vec![
        "cycle_s".to_string(),
        "red_s".into(),
        "ratio".into(),
        "peak_g_per_h".into(),
        "asymptotic_mean_g_per_h".into(),
    ];
    header.extend(Species::ALL.iter().map(|s| format!("{prefix}{}_g_per_km3", s.label())));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.cycle_s.to_string(),
            r.red_s.to_string(),
            r.ratio.to_string(),
            r.peak_g_per_h.to_string(),
            r.asymptotic_mean_g_per_h.to_string(),
        ];
        for s in 0..5 {
            rec.push(match (r.amounts_g_per_km3, baseline) {
                (Some(a), Some(b)) => (a[s] - b[s]).to_string(),
                (Some(a), None) => a[s].to_string(),
                (None, _) => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Writes `sweep.csv`, the per-member emission series and their plot.
/// `dt_s` is the traffic step shared by the members.
pub fn write_sweep_artifacts(dir: &Path, rows: &[SweepRow], baseline: Option<[f64; 5]>, dt_s: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = dir.join("sweep.csv");
    write_sweep_csv(&table, rows, baseline)?;

    let series_path = dir.join("sweep_emission.csv");
    let mut w = csv_writer(&series_path)?;
    let labels: Vec<String> = rows.iter().map(|r| format!("tc{}_r{}", r.cycle_s, r.ratio)).collect();
    let mut header = vec!["t_s".to_string()];
    header.extend(labels.iter().map(|l| format!("{l}_g_per_h")));
    w.write_record(&header)?;
    let len = rows.iter().map(|r| r.emission_series_g_per_h.len()).max().unwrap_or(0);
    for n in 0..len {
        let mut rec = vec![(n as f64 * dt_s).to_string()];
        rec.extend(
            rows.iter()
                .map(|r| r.emission_series_g_per_h.get(n).map_or(String::new(), |x| x.to_string())),
        );
        w.write_record(&rec)?;
    }
    finish(w, &series_path)?;

    let points: Vec<Vec<(f64, f64)>> = rows
        .iter()
        .map(|r| {
            r.emission_series_g_per_h
                .iter()
                .enumerate()
                .map(|(n, e)| (n as f64 * dt_s, *e))
                .collect()
        })
        .collect();
    let series: Vec<Series> = labels
        .iter()
        .zip(&points)
        .map(|(l, p)| Series { label: l, points: p })
        .collect();
    let svg = dir.join("sweep_emission.svg");
    write_text(&svg, &line_chart("Total NOx emission rate", "t (s)", "g/h", &series))?;
    Ok(vec![table, series_path, svg])
}

/// Probe-row ozone of two scenarios sharing a dispersion grid.
#[derive(Debug, Clone)]
pub struct DispersionComparison {
    pub reference_mean_g_per_km3: f64,
    pub other_mean_g_per_km3: f64,
    /// `(M2 - M1) / M1`
    pub increase: f64,
    pub reference: DispersionRun,
    pub other: DispersionRun,
}

pub fn compare_scenarios(reference: ScenarioConfig, other: ScenarioConfig) -> Result<DispersionComparison> {
    if reference.dispersion.is_none() || other.dispersion.is_none() {
        return Err(Error::config("dispersion", "both scenarios need a [dispersion] section"));
    }
    if reference.dispersion.as_ref().map(|d| d.grid()) != other.dispersion.as_ref().map(|d| d.grid()) {
        return Err(Error::config("dispersion", "scenarios do not share a dispersion grid"));
    }
    let stages = StageSelection::all().without(Stage::Chemistry);
    let run = |cfg: ScenarioConfig| -> Result<DispersionRun> {
        run_pipeline(cfg, &stages)?
            .dispersion
            .ok_or_else(|| Error::config("dispersion", "stage did not run"))
    };
    let (r1, r2) = std::thread::scope(|s| {
        let h = s.spawn(|| run(reference));
        let b = run(other);
        (h.join().unwrap_or_else(|_| Err(Error::Degenerate("comparison run panicked".into()))), b)
    });
    let (r1, r2) = (r1?, r2?);
    let increase = compare_dispersion(&r1, &r2)?;
    Ok(DispersionComparison {
        reference_mean_g_per_km3: r1.final_probe_mean(),
        other_mean_g_per_km3: r2.final_probe_mean(),
        increase,
        reference: r1,
        other: r2,
    })
}

/// Writes the comparison summary, both probe series and their plot.
pub fn write_comparison_artifacts(dir: &Path, cmp: &DispersionComparison) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("comparison.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record(["reference_mean_g_per_km3", "other_mean_g_per_km3", "increase"])?;
    w.write_record(&[
        cmp.reference_mean_g_per_km3.to_string(),
        cmp.other_mean_g_per_km3.to_string(),
        cmp.increase.to_string(),
    ])?;
    finish(w, &summary)?;

    let probe = dir.join("comparison_probe.csv");
    let mut w = csv_writer(&probe)?;
    w.write_record(["t_s", "reference_g_per_km3", "other_g_per_km3"])?;
    for ((t, a), (_, b)) in cmp.reference.probe_series.iter().zip(&cmp.other.probe_series) {
        w.write_record(&[t.to_string(), a.to_string(), b.to_string()])?;
    }
    finish(w, &probe)?;

    let svg = dir.join("comparison_probe.svg");
    write_text(
        &svg,
        &line_chart(
            "Probe-row O3",
            "t (s)",
            "g/km³",
            &[
                Series {
                    label: "reference",
                    points: &cmp.reference.probe_series,
                },
                Series {
                    label: "other",
                    points: &cmp.other.probe_series,
                },
            ],
        ),
    )?;
    Ok(vec![summary, probe, svg])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_dependencies() {
        let s = StageSelection::all().without(Stage::Emission);
        assert!(s.runs(Stage::Traffic));
        assert!(!s.runs(Stage::Chemistry));
        assert!(!s.runs(Stage::Dispersion));
        let s = StageSelection::all().without(Stage::Chemistry);
        assert!(s.runs(Stage::Dispersion));
        assert_eq!("dispersion".parse::<Stage>().unwrap(), Stage::Dispersion);
        assert!("plumbing".parse::<Stage>().is_err());
    }

    #[test]
    fn dump_indices_include_the_end() {
        assert_eq!(dump_indices(5, 1.0, None), vec![0, 1, 2, 3, 4]);
        assert_eq!(dump_indices(5, 1.0, Some(3.0)), vec![0, 3, 4]);
        assert_eq!(dump_indices(7, 1.0, Some(3.0)), vec![0, 3, 6]);
    }

    #[test]
    fn periodic_series_has_no_gap() {
        let dt = 0.5;
        let s: Vec<f64> = (0..2000).map(|n| 2.0 + (n as f64 * dt * std::f64::consts::TAU / 60.0).sin()).collect();
        let gaps = cycle_gaps(&s, dt, 60.0, 100.0);
        assert!(!gaps.is_empty());
        assert!(gaps.iter().all(|g| *g < 1e-9), "{gaps:?}");
        let ramp: Vec<f64> = (0..2000).map(|n| 1.0 + n as f64).collect();
        assert!(cycle_gaps(&ramp, dt, 60.0, 0.0).iter().all(|g| *g > 0.0));
    }

    #[test]
    fn asymptotic_mean_uses_the_tail() {
        let mut s = vec![100.0; 10];
        s.extend(vec![1.0; 30]);
        assert_eq!(asymptotic_mean(&s, 1.0, 10.0, 3), 1.0);
        assert_eq!(asymptotic_mean(&[2.0, 4.0], 1.0, 10.0, 3), 3.0);
        assert_eq!(peak(&s), 100.0);
    }
}
