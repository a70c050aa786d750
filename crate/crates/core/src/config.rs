//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! plant.den = [1, 242.6, 1.36e5]
//! controller.mode = hybrid
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::basis::BasisConfig;
use crate::controller::{ControllerConfig, ControllerMode, Mitigation, WeightSchedule};
use crate::error::{Error, Result};
use crate::hybrid::HybridConfig;
use crate::lti::ContinuousTransferFunction;
use crate::plant::PlantConfig;
use crate::trajectory::TrajectorySpec;

/// Nominal x-axis model used when `plant.num` / `plant.den` are omitted.
pub const DEFAULT_NUM: [f64; 6] = [-62.48, 5.91e4, 3.82e6, 2.96e9, 1.96e11, 2.29e13];
pub const DEFAULT_DEN: [f64; 7] = [1.0, 242.6, 1.36e5, 1.73e7, 4.22e9, 2.75e11, 2.29e13];

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "duration",
    "output",
    "plant.kind",
    "plant.num",
    "plant.den",
    "plant.ts",
    "plant.cubic_stiffness_gain",
    "plant.amplitude_scale",
    "plant.friction_coefficient",
    "plant.resonance_detune",
    "plant.noise_sigma",
    "plant.delay_batches",
    "basis.degree",
    "basis.knot_spacing",
    "basis.batch_length",
    "basis.window_length",
    "hybrid.q",
    "hybrid.p",
    "hybrid.lambda",
    "hybrid.learning",
    "hybrid.initial_weights",
    "hybrid.error_scale_start",
    "hybrid.error_scale_end",
    "hybrid.error_scale_ramp_start",
    "hybrid.error_scale_ramp_windows",
    "controller.mode",
    "controller.warmup_batches",
    "controller.mitigation",
    "controller.stability_threshold",
    "controller.rcond",
    "controller.monitor",
    "trajectory.kind",
    "trajectory.amplitude",
    "trajectory.speed",
    "trajectory.wavelength",
    "trajectory.ramp_time",
    "trajectory.dwell",
    "trajectory.side_length",
    "trajectory.v_lim",
    "trajectory.a_lim",
    "trajectory.j_lim",
    "trajectory.infill_strokes",
    "trajectory.file",
    "trajectory.sample_interval",
    "summary.baseline",
];

/// Parsed but untyped configuration: key to raw value text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
    base_dir: Option<PathBuf>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(c) => &line[..c],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", i + 1));
                continue;
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                errors.push(format!("line {}: empty key", i + 1));
            } else if !KNOWN_KEYS.contains(&key.as_str()) {
                errors.push(format!("line {}: unknown key `{key}`", i + 1));
            } else if entries.insert(key.clone(), value).is_some() {
                errors.push(format!("line {}: duplicate key `{key}`", i + 1));
            }
        }
        if errors.is_empty() {
            Ok(Self {
                entries,
                base_dir: None,
            })
        } else {
            Err(Error::InvalidConfig(errors.join("\n")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut raw = Self::parse(&text)?;
        raw.base_dir = path.parent().map(Path::to_path_buf);
        Ok(raw)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Overrides one key (used by parameter sweeps).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Builds and validates the typed configuration, reporting every problem
    /// found rather than the first.
    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let mut r = Reader {
            raw: self,
            errors: Vec::new(),
        };
        let cfg = r.build();
        if r.errors.is_empty() {
            let cfg = cfg.expect("no errors recorded");
            let problems = cfg.problems();
            if problems.is_empty() {
                return Ok(cfg);
            }
            return Err(Error::InvalidConfig(problems.join("\n")));
        }
        Err(Error::InvalidConfig(r.errors.join("\n")))
    }
}

struct Reader<'a> {
    raw: &'a RawConfig,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.raw.get(key) {
            None => default,
            Some(v) => match unquote(v).parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                _ => {
                    self.errors.push(format!("`{key}`: expected a finite number, got `{v}`"));
                    default
                }
            },
        }
    }

    fn uint(&mut self, key: &str, default: usize) -> usize {
        match self.raw.get(key) {
            None => default,
            Some(v) => match unquote(v).parse::<usize>() {
                Ok(x) => x,
                Err(_) => {
                    self.errors
                        .push(format!("`{key}`: expected a non-negative integer, got `{v}`"));
                    default
                }
            },
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.raw.get(key).map(unquote) {
            None => default,
            Some("true") => true,
            Some("false") => false,
            Some(v) => {
                self.errors.push(format!("`{key}`: expected true or false, got `{v}`"));
                default
            }
        }
    }

    fn text(&mut self, key: &str) -> Option<String> {
        self.raw.get(key).map(|v| unquote(v).to_string())
    }

    fn array(&mut self, key: &str) -> Option<Vec<f64>> {
        let v = self.raw.get(key)?;
        match parse_array(v) {
            Ok(a) => Some(a),
            Err(e) => {
                self.errors.push(format!("`{key}`: {e}"));
                None
            }
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let p = PathBuf::from(self.text(key)?);
        Some(match (&self.raw.base_dir, p.is_relative()) {
            (Some(dir), true) => dir.join(p),
            _ => p,
        })
    }

    fn choice<E: Copy>(&mut self, key: &str, default: E, options: &[(&str, E)]) -> E {
        let Some(v) = self.text(key) else {
            return default;
        };
        match options.iter().find(|(name, _)| *name == v) {
            Some((_, e)) => *e,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.errors
                    .push(format!("`{key}`: expected one of {}, got `{v}`", names.join(", ")));
                default
            }
        }
    }

    fn build(&mut self) -> Option<ExperimentConfig> {
        let seed = self.uint("seed", 0) as u64;
        let duration = self.float("duration", 10.0);
        let output = self.text("output").map(PathBuf::from);

        let plant_kind = self.choice(
            "plant.kind",
            PlantKind::Simulated,
            &[("simulated", PlantKind::Simulated), ("model-echo", PlantKind::ModelEcho)],
        );
        let num = self.array("plant.num").unwrap_or_else(|| DEFAULT_NUM.to_vec());
        let den = self.array("plant.den").unwrap_or_else(|| DEFAULT_DEN.to_vec());
        let ts = self.float("plant.ts", 0.001);
        let nominal = match ContinuousTransferFunction::new(num, den) {
            Ok(tf) => Some(tf),
            Err(e) => {
                self.errors.push(format!("`plant.num`/`plant.den`: {e}"));
                None
            }
        };

        let degree = self.uint("basis.degree", 5);
        let knot_spacing = self.uint("basis.knot_spacing", 10);
        let batch_length = self.uint("basis.batch_length", 70);
        let window_length = self.uint("basis.window_length", 2 * batch_length);
        let basis = BasisConfig {
            degree,
            knot_spacing,
            batch_length,
            window_length,
        };

        let plant = nominal.map(|nominal| PlantConfig {
            nominal,
            cubic_stiffness_gain: self.float("plant.cubic_stiffness_gain", 0.0),
            amplitude_scale: self.float("plant.amplitude_scale", 1.0),
            friction_coefficient: self.float("plant.friction_coefficient", 0.0),
            resonance_detune: self.float("plant.resonance_detune", 1.0),
            noise_sigma: self.float("plant.noise_sigma", 0.0),
            delay_batches: self.uint("plant.delay_batches", 1),
            ts,
            batch_length,
        });

        let hybrid = HybridConfig {
            q: self.uint("hybrid.q", 4),
            p: self.uint("hybrid.p", 50),
            lambda: self.float("hybrid.lambda", 0.01),
            batch_length,
        };
        let learning = self.boolean("hybrid.learning", true);
        let schedule = WeightSchedule {
            base: self.array("hybrid.initial_weights").map(nalgebra::DVector::from_vec),
            scale_start: self.float("hybrid.error_scale_start", 1.0),
            scale_end: self.float("hybrid.error_scale_end", 1.0),
            ramp_start: self.uint("hybrid.error_scale_ramp_start", 0),
            ramp_windows: self.uint("hybrid.error_scale_ramp_windows", 0),
        };

        let mode = self.choice(
            "controller.mode",
            ControllerMode::Hybrid,
            &[
                ("none", ControllerMode::None),
                ("standard", ControllerMode::Standard),
                ("hybrid", ControllerMode::Hybrid),
            ],
        );
        let mut controller = ControllerConfig::new(mode);
        controller.warmup_batches = self.uint("controller.warmup_batches", 78);
        controller.mitigation = self.choice(
            "controller.mitigation",
            Mitigation::FreezeLearning,
            &[
                ("freeze-learning", Mitigation::FreezeLearning),
                ("revert-standard", Mitigation::RevertStandard),
                ("halt", Mitigation::Halt),
                ("none", Mitigation::None),
            ],
        );
        controller.stability_threshold = self.float("controller.stability_threshold", 0.97);
        controller.rcond = self.float("controller.rcond", 1e-10);
        controller.monitor = self.boolean("controller.monitor", true);
        controller.learning = learning;

        let trajectory = match self.text("trajectory.kind").as_deref().unwrap_or("sine-scan") {
            "sine-scan" => Some(TrajectorySpec::SineScan {
                amplitude: self.float("trajectory.amplitude", 0.5),
                speed: self.float("trajectory.speed", 5.0),
                wavelength: self.float("trajectory.wavelength", 0.5),
                ramp_time: self.float("trajectory.ramp_time", 0.5),
                dwell: self.float("trajectory.dwell", 0.2),
            }),
            "square-loop" => Some(TrajectorySpec::SquareLoop {
                side_length: self.float("trajectory.side_length", 10.0),
                v_lim: self.float("trajectory.v_lim", 60.0),
                a_lim: self.float("trajectory.a_lim", 3.0),
                j_lim: self.float("trajectory.j_lim", 6000.0),
                infill_strokes: self.uint("trajectory.infill_strokes", 0),
                dwell: self.float("trajectory.dwell", 0.2),
            }),
            "custom-samples" => match self.path("trajectory.file") {
                Some(file) => Some(TrajectorySpec::CustomSamples {
                    file,
                    sample_interval: self.float("trajectory.sample_interval", ts),
                }),
                None => {
                    self.errors
                        .push("`trajectory.file` is required for custom-samples".into());
                    None
                }
            },
            other => {
                self.errors.push(format!(
                    "`trajectory.kind`: expected sine-scan, square-loop or custom-samples, got `{other}`"
                ));
                None
            }
        };
        let baseline = self.boolean("summary.baseline", false);

        Some(ExperimentConfig {
            seed,
            duration,
            output,
            plant_kind,
            plant: plant?,
            basis,
            hybrid,
            schedule,
            controller,
            trajectory: trajectory?,
            baseline,
        })
    }
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Parses `[a, b, c]` into numbers.
pub fn parse_array(v: &str) -> std::result::Result<Vec<f64>, String> {
    let v = v.trim();
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got `{v}`"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("`{s}` is not a finite number"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    Simulated,
    /// Measured output equals the controller's hybrid prediction.
    ModelEcho,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub duration: f64,
    pub output: Option<PathBuf>,
    pub plant_kind: PlantKind,
    pub plant: PlantConfig<f64>,
    pub basis: BasisConfig,
    pub hybrid: HybridConfig<f64>,
    pub schedule: WeightSchedule<f64>,
    pub controller: ControllerConfig<f64>,
    pub trajectory: TrajectorySpec,
    pub baseline: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        RawConfig::load(path)?.to_experiment()
    }

    pub fn parse(text: &str) -> Result<Self> {
        RawConfig::parse(text)?.to_experiment()
    }

    /// Number of logged time steps, `round(duration / Ts)`.
    pub fn steps(&self) -> usize {
        (self.duration / self.plant.ts).round() as usize
    }

    /// Number of controller windows needed to cover the duration.
    pub fn batches(&self) -> usize {
        self.steps().div_ceil(self.basis.batch_length.max(1))
    }

    /// Every violated invariant, across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |section: &str, r: Result<()>| {
            if let Err(e) = r {
                for line in e.to_string().lines() {
                    out.push(format!("{section}: {line}"));
                }
            }
        };
        check("plant", self.plant.validate());
        check("basis", self.basis.validate());
        check("hybrid", self.hybrid.validate());
        check("controller", self.controller.validate());
        check("trajectory", self.trajectory.validate());
        if !(self.duration > 0.0) {
            out.push(format!("duration must be positive, got {}", self.duration));
        }
        if self.controller.mode == ControllerMode::Hybrid {
            if self.plant.delay_batches < 1 && self.plant_kind == PlantKind::Simulated {
                out.push("plant: the hybrid controller needs delay_batches >= 1".into());
            }
            let min = self.controller.warmup_batches + 10;
            if self.batches() < min {
                out.push(format!(
                    "duration covers {} windows; hybrid runs need warm-up + 10 = {min}",
                    self.batches()
                ));
            }
        }
        if let Some(w) = &self.schedule.base {
            if w.len() != self.hybrid.feature_len() {
                out.push(format!(
                    "hybrid.initial_weights has {} entries, expected 1 + q + p = {}",
                    w.len(),
                    self.hybrid.feature_len()
                ));
            }
        }
        out
    }
}
