//! Experiment wiring: trajectory, plant, controller and monitor, plus CSV and
//! summary output.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::basis::filter_and_partition;
use crate::config::{ExperimentConfig, PlantKind};
use crate::controller::{run_tracking, Controller, ControllerMode, TrackingRecord};
use crate::error::{Error, Result};
use crate::lti::{discretize_zoh, truncated_impulse_response};
use crate::plant::{ModelEchoPlant, Plant, SimulatedPlant};
use crate::stability::Verdict;
use crate::trajectory::generate_trajectory;

pub const STEP_HEADER: &str = "step,t,y_d,u,y_true,y_meas,y_hat_pb,y_hat_h,e";
pub const WINDOW_HEADER: &str = "window,spectral_radius,verdict,weight_change_norm";

/// Divergence: some `|u|` above this multiple of the peak `|y_d|`.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryMetrics {
    pub rms_error_total: f64,
    /// NaN when the run ends before warm-up does.
    pub rms_error_post_warmup: f64,
    pub rms_error_post_first_window: f64,
    pub peak_error: f64,
    pub peak_desired: f64,
    pub max_spectral_radius: Option<f64>,
    pub alarm_window: Option<usize>,
    pub divergence_window: Option<usize>,
    pub weight_change_norm_max: f64,
    pub weight_change_norm_mean: f64,
    pub baseline_rms_error_post_warmup: Option<f64>,
    pub steps: usize,
    pub windows: usize,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub record: TrackingRecord<f64>,
    pub summary: SummaryMetrics,
    pub error: Option<Error>,
    pub ts: f64,
}

/// Desired trajectory for the whole run, one window longer than logged.
pub fn desired_trajectory(config: &ExperimentConfig) -> Result<Vec<f64>> {
    let steps = config.batches() * config.basis.batch_length + config.basis.window_length;
    generate_trajectory(&config.trajectory, config.plant.ts, steps)
}

pub fn build_controller(config: &ExperimentConfig) -> Result<Controller<f64>> {
    let physics = discretize_zoh(&config.plant.nominal, config.plant.ts)?;
    let h = truncated_impulse_response(&physics);
    let basis = filter_and_partition(&h, &config.basis, 0)?;
    Controller::new(
        config.controller.clone(),
        basis,
        config.hybrid,
        physics,
        config.plant.delay_batches,
    )?
    .with_schedule(config.schedule.clone())
}

pub fn build_plant(config: &ExperimentConfig) -> Result<Box<dyn Plant<f64>>> {
    Ok(match config.plant_kind {
        PlantKind::Simulated => Box::new(SimulatedPlant::new(config.plant.clone(), config.seed)?),
        PlantKind::ModelEcho => Box::new(ModelEchoPlant::new(
            config.basis.batch_length,
            config.plant.delay_batches,
        )),
    })
}

/// Runs the configured experiment (and the uncompensated baseline when
/// requested). Construction errors are returned; errors during the run stop
/// it and are reported alongside the partial record.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems.join("\n")));
    }
    let y_d = desired_trajectory(config)?;
    let (mut record, error) = run_mode(config, &y_d, config.controller.mode)?;
    let steps = config.steps();
    truncate(&mut record, steps);

    let baseline = if config.baseline {
        let (mut base, _) = run_mode(config, &y_d, ControllerMode::None)?;
        truncate(&mut base, steps);
        let from = warmup_start(config);
        Some(base.rms_error(from, base.len()))
    } else {
        None
    };
    let mut summary = summarize(config, &record, error.as_ref());
    summary.baseline_rms_error_post_warmup = baseline;
    Ok(ExperimentResult {
        record,
        summary,
        error,
        ts: config.plant.ts,
    })
}

fn run_mode(
    config: &ExperimentConfig,
    y_d: &[f64],
    mode: ControllerMode,
) -> Result<(TrackingRecord<f64>, Option<Error>)> {
    let mut cfg = config.clone();
    cfg.controller.mode = mode;
    let mut controller = build_controller(&cfg)?;
    let mut plant = build_plant(&cfg)?;
    let run = run_tracking(&mut controller, plant.as_mut(), y_d, cfg.batches());
    Ok((run.record, run.error))
}

fn truncate(record: &mut TrackingRecord<f64>, steps: usize) {
    for v in [
        &mut record.y_d,
        &mut record.u,
        &mut record.y_true,
        &mut record.y_meas,
        &mut record.y_hat_pb,
        &mut record.y_hat_h,
    ] {
        v.truncate(steps);
    }
}

fn warmup_start(config: &ExperimentConfig) -> usize {
    config.controller.warmup_batches * config.basis.batch_length
}

pub fn summarize(
    config: &ExperimentConfig,
    record: &TrackingRecord<f64>,
    error: Option<&Error>,
) -> SummaryMetrics {
    let n = config.basis.batch_length;
    let len = record.len();
    let peak_desired = record.y_d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let peak_error = (0..len).fold(0.0f64, |a, k| a.max(record.error(k).abs()));
    let radii: Vec<f64> = record
        .windows
        .iter()
        .filter_map(|w| w.spectral_radius)
        .collect();
    let max_spectral_radius = radii.iter().copied().reduce(f64::max);
    let alarm_window = record
        .windows
        .iter()
        .find(|w| w.verdict == Some(Verdict::Alarm))
        .map(|w| w.window);
    let divergence_window = divergence_window(record, n, peak_desired);
    let changes: Vec<f64> = record.windows.iter().map(|w| w.weight_change_norm).collect();
    let weight_change_norm_max = changes.iter().copied().fold(0.0, f64::max);
    let weight_change_norm_mean = if changes.is_empty() {
        0.0
    } else {
        changes.iter().sum::<f64>() / changes.len() as f64
    };
    SummaryMetrics {
        rms_error_total: record.rms_error(0, len),
        rms_error_post_warmup: if warmup_start(config) < len {
            record.rms_error(warmup_start(config), len)
        } else {
            f64::NAN
        },
        rms_error_post_first_window: record.rms_error(config.basis.window_length, len),
        peak_error,
        peak_desired,
        max_spectral_radius,
        alarm_window,
        divergence_window,
        weight_change_norm_max,
        weight_change_norm_mean,
        baseline_rms_error_post_warmup: None,
        steps: len,
        windows: record.windows.len(),
        aborted: error.map(|e| e.to_string()),
    }
}

/// First window whose input exceeds `DIVERGENCE_FACTOR` times the peak
/// desired output.
pub fn divergence_window(
    record: &TrackingRecord<f64>,
    batch_length: usize,
    peak_desired: f64,
) -> Option<usize> {
    let limit = DIVERGENCE_FACTOR * peak_desired;
    record
        .u
        .iter()
        .position(|u| !u.is_finite() || u.abs() > limit)
        .map(|k| k / batch_length)
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn step_csv(record: &TrackingRecord<f64>, ts: f64) -> String {
    let mut out = String::with_capacity(record.len() * 200);
    out.push_str(STEP_HEADER);
    out.push('\n');
    for k in 0..record.len() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{},{},{}",
            fmt_f(k as f64 * ts),
            fmt_f(record.y_d[k]),
            fmt_f(record.u[k]),
            fmt_f(record.y_true[k]),
            fmt_f(record.y_meas[k]),
            fmt_f(record.y_hat_pb[k]),
            fmt_f(record.y_hat_h[k]),
            fmt_f(record.error(k)),
        );
    }
    out
}

pub fn window_csv(record: &TrackingRecord<f64>) -> String {
    let mut out = String::from(WINDOW_HEADER);
    out.push('\n');
    for w in &record.windows {
        let radius = w.spectral_radius.map(fmt_f).unwrap_or_default();
        let verdict = w.verdict.map(|v| v.as_str()).unwrap_or("");
        let _ = writeln!(
            out,
            "{},{radius},{verdict},{}",
            w.window,
            fmt_f(w.weight_change_norm)
        );
    }
    out
}

pub fn summary_text(summary: &SummaryMetrics) -> String {
    let opt_f = |v: Option<f64>| v.map(fmt_f).unwrap_or_else(|| "none".into());
    let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_else(|| "none".into());
    let mut out = String::new();
    let _ = writeln!(out, "rms_error_total = {}", fmt_f(summary.rms_error_total));
    let _ = writeln!(out, "rms_error_post_warmup = {}", fmt_f(summary.rms_error_post_warmup));
    let _ = writeln!(
        out,
        "rms_error_post_first_window = {}",
        fmt_f(summary.rms_error_post_first_window)
    );
    let _ = writeln!(out, "peak_error = {}", fmt_f(summary.peak_error));
    let _ = writeln!(out, "peak_desired = {}", fmt_f(summary.peak_desired));
    let _ = writeln!(out, "max_spectral_radius = {}", opt_f(summary.max_spectral_radius));
    let _ = writeln!(out, "alarm_window = {}", opt_u(summary.alarm_window));
    let _ = writeln!(out, "divergence_window = {}", opt_u(summary.divergence_window));
    let _ = writeln!(out, "weight_change_norm_max = {}", fmt_f(summary.weight_change_norm_max));
    let _ = writeln!(
        out,
        "weight_change_norm_mean = {}",
        fmt_f(summary.weight_change_norm_mean)
    );
    let _ = writeln!(
        out,
        "baseline_rms_error_post_warmup = {}",
        opt_f(summary.baseline_rms_error_post_warmup)
    );
    let _ = writeln!(out, "steps = {}", summary.steps);
    let _ = writeln!(out, "windows = {}", summary.windows);
    let _ = writeln!(
        out,
        "aborted = {}",
        summary.aborted.as_deref().unwrap_or("none").replace('\n', " ")
    );
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| {
        Error::InvalidConfig(format!("cannot create {}: {e}", path.display()))
    })?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))
}

/// Writes `steps.csv`, `windows.csv` and `summary.txt` into `dir`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::InvalidConfig(format!("cannot create output directory {}: {e}", dir.display()))
    })?;
    let files = [
        (dir.join("steps.csv"), step_csv(&result.record, result.ts)),
        (dir.join("windows.csv"), window_csv(&result.record)),
        (dir.join("summary.txt"), summary_text(&result.summary)),
    ];
    let mut written = Vec::new();
    for (path, text) in files {
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}
