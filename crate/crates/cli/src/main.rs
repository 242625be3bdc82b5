use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roadsmog::config::{validate_config, ScenarioConfig};
use roadsmog::error::{Error, Result};
use roadsmog::pipeline::{
    baseline_amounts, compare_scenarios, run_pipeline, sweep_fixed_cycle, sweep_fixed_ratio, write_artifacts,
    write_comparison_artifacts, write_sweep_artifacts, Stage, StageSelection,
};
use roadsmog::trajectory::{aggregate_cells, calibrate_flux_model, CalibrationOptions, TrajectorySet};

#[derive(Parser)]
#[command(name = "roadsmog", version, about = "Traffic, NOx emission and ozone scenarios on a single road")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// Directory for CSV, metadata and plot outputs.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Dispersion snapshot cadence in seconds.
    #[arg(long)]
    snapshot_every: Option<f64>,
    /// Skip a stage: traffic, emission, chemistry or dispersion. Repeatable.
    #[arg(long, value_parser = parse_stage)]
    disable: Vec<Stage>,
}

impl RunFlags {
    fn stages(&self) -> StageSelection {
        self.disable.iter().fold(StageSelection::all(), |s, st| s.without(*st))
    }

    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.snapshot_every {
            cfg.output.snapshot_every_s = Some(s);
        }
    }
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario through every enabled stage.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Vary the cycle length at a fixed green/red ratio.
    SweepTc {
        config: PathBuf,
        /// Green/red ratio t_g / t_r.
        #[arg(long, default_value_t = 1.5)]
        ratio: f64,
        /// Cycle lengths in seconds.
        #[arg(long, value_delimiter = ',', default_values_t = [450.0, 300.0, 150.0])]
        cycles: Vec<f64>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Vary the green/red ratio at a fixed cycle length.
    SweepR {
        config: PathBuf,
        /// Cycle length in seconds.
        #[arg(long, default_value_t = 300.0)]
        cycle: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5, 2.0])]
        ratios: Vec<f64>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Final probe-row ozone of two scenarios sharing a dispersion grid.
    CompareDispersion {
        reference: PathBuf,
        other: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Fit the flux family to a trajectory file.
    Calibrate {
        trajectories: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        road_start_m: f64,
        #[arg(long)]
        road_end_m: f64,
        #[arg(long, default_value_t = 1)]
        lanes: u32,
        /// Space per vehicle at jam density.
        #[arg(long, default_value_t = 7.5)]
        vehicle_length_m: f64,
        #[arg(long, default_value_t = 30.0)]
        cell_dx_m: f64,
        #[arg(long, default_value_t = 4.0)]
        cell_dt_s: f64,
        /// Fixes w_L instead of deriving it from the free-flow threshold.
        #[arg(long)]
        w_l: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::from_path(path).map_err(|e| e.in_stage("config"))
}

fn simulate(config: &Path, flags: &RunFlags) -> Result<()> {
    let mut cfg = load(config)?;
    flags.apply(&mut cfg);
    let result = run_pipeline(cfg, &flags.stages())?;
    for w in &result.metadata.warnings {
        log::warn!("{w}");
    }
    let art = write_artifacts(&result, &flags.out_dir).map_err(|e| e.in_stage("output"))?;
    for f in art.files() {
        println!("{}", f.display());
    }
    Ok(())
}

fn sweep(config: &Path, flags: &RunFlags, fixed_ratio: Option<(f64, &[f64])>, fixed_cycle: Option<(f64, &[f64])>) -> Result<()> {
    let cfg = load(config)?;
    let dt = validate_config(cfg.clone()).map_err(|e| e.in_stage("config"))?.dt_s();
    let stages = flags.stages();
    let rows = match (fixed_ratio, fixed_cycle) {
        (Some((r, cycles)), _) => sweep_fixed_ratio(&cfg, r, cycles, &stages)?,
        (_, Some((c, ratios))) => sweep_fixed_cycle(&cfg, c, ratios, &stages)?,
        _ => unreachable!(),
    };
    let baseline = if stages.runs(Stage::Chemistry) && cfg.chemistry.enabled {
        Some(baseline_amounts(&cfg)?)
    } else {
        None
    };
    let files = write_sweep_artifacts(&flags.out_dir, &rows, baseline, dt).map_err(|e| e.in_stage("output"))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn compare(reference: &Path, other: &Path, flags: &RunFlags) -> Result<()> {
    let mut a = load(reference)?;
    let mut b = load(other)?;
    flags.apply(&mut a);
    flags.apply(&mut b);
    let cmp = compare_scenarios(a, b)?;
    println!(
        "M1 = {} g/km3, M2 = {} g/km3, increase = {:.2}%",
        cmp.reference_mean_g_per_km3,
        cmp.other_mean_g_per_km3,
        100.0 * cmp.increase
    );
    for f in write_comparison_artifacts(&flags.out_dir, &cmp).map_err(|e| e.in_stage("output"))? {
        println!("{}", f.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn calibrate(
    path: &Path,
    road: (f64, f64),
    lanes: u32,
    vehicle_length_m: f64,
    cell: (f64, f64),
    w_l: Option<f64>,
    out_dir: &Path,
) -> Result<()> {
    let traj = TrajectorySet::from_path(path, road.0, road.1, lanes).map_err(|e| e.in_stage("ingest"))?;
    let grid = aggregate_cells(&traj, cell.0, cell.1).map_err(|e| e.in_stage("ingest"))?;
    let opts = CalibrationOptions {
        w_l_override: w_l,
        ..Default::default()
    };
    let cal = calibrate_flux_model(&grid.occupied_points(), lanes, vehicle_length_m / 1000.0, &opts)
        .map_err(|e| e.in_stage("calibrate"))?;
    for w in &cal.warnings {
        log::warn!("{w}");
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    #[derive(serde::Serialize)]
    struct Fragment<'a> {
        flux: &'a roadsmog::flux::FluxModel,
    }
    let fragment = toml::to_string(&Fragment { flux: &cal.flux })?;
    let flux_path = out_dir.join("flux.toml");
    fs::write(&flux_path, &fragment).map_err(|e| Error::io(&flux_path, e))?;
    #[derive(serde::Serialize)]
    struct Report<'a> {
        points: usize,
        coverage: f64,
        target_met: bool,
        warnings: &'a [String],
    }
    let report = toml::to_string(&Report {
        points: cal.points,
        coverage: cal.coverage,
        target_met: cal.target_met,
        warnings: &cal.warnings,
    })?;
    let report_path = out_dir.join("calibration_report.toml");
    fs::write(&report_path, &report).map_err(|e| Error::io(&report_path, e))?;
    print!("{fragment}");
    println!("# coverage {:.4} over {} points", cal.coverage, cal.points);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, flags } => simulate(&config, &flags),
        Command::SweepTc {
            config,
            ratio,
            cycles,
            flags,
        } => sweep(&config, &flags, Some((ratio, &cycles)), None),
        Command::SweepR {
            config,
            cycle,
            ratios,
            flags,
        } => sweep(&config, &flags, None, Some((cycle, &ratios))),
        Command::CompareDispersion { reference, other, flags } => compare(&reference, &other, &flags),
        Command::Calibrate {
            trajectories,
            road_start_m,
            road_end_m,
            lanes,
            vehicle_length_m,
            cell_dx_m,
            cell_dt_s,
            w_l,
            out_dir,
        } => calibrate(
            &trajectories,
            (road_start_m, road_end_m),
            lanes,
            vehicle_length_m,
            (cell_dx_m, cell_dt_s),
            w_l,
            &out_dir,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Messages already embed their causes.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
