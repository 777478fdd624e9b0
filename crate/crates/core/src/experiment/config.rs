//! Experiment configuration: a JSON key tree with unit-suffixed keys.

use crate::memristor::ChannelSpec;
use crate::reservoir::{RadiusMode, WeightSpec};
use crate::tasks::{MackeyGlassParams, VentilatorSchema};
use crate::circuit::PressureChannelParams;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// A rejected configuration field, addressed by its path in the key tree.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn fail<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.into(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskConfig,
    pub networks: Vec<NetworkConfig>,
    #[serde(default = "ChannelSpec::reference")]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub activation: ActivationKind,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    /// Steady-state conductance of the configured channel.
    #[default]
    Physical,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Train on one series, then teacher-force a fresh series for
    /// `test_warmup_steps` and free-run; score the output `horizon_steps` in.
    MackeyGlass {
        train_steps: usize,
        test_warmup_steps: usize,
        free_run_steps: usize,
        horizon_steps: usize,
    },
    /// Train on `[0, train_steps * delta)`, teacher-force the first
    /// `test_warmup_steps` from a zero state and free-run `free_run_steps`.
    Harmonic {
        stepsize_s: f64,
        train_steps: usize,
        test_warmup_steps: usize,
        free_run_steps: usize,
    },
    VentilatorClassify(VentilatorTask),
    VentilatorPredict(VentilatorTask),
}

impl TaskConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskConfig::MackeyGlass { .. } => "mackey_glass",
            TaskConfig::Harmonic { .. } => "harmonic",
            TaskConfig::VentilatorClassify(_) => "ventilator_classify",
            TaskConfig::VentilatorPredict(_) => "ventilator_predict",
        }
    }

    pub fn stepsize(&self) -> f64 {
        match self {
            TaskConfig::MackeyGlass { .. } => MackeyGlassParams::default().stepsize,
            TaskConfig::Harmonic { stepsize_s, .. } => *stepsize_s,
            TaskConfig::VentilatorClassify(v) | TaskConfig::VentilatorPredict(v) => {
                v.schema.stepsize_s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VentilatorTask {
    /// Recorded data; falls back to the environment, then to synthetic breaths.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default)]
    pub schema: VentilatorSchema,
    #[serde(default)]
    pub pressure_channel: PressureChannelSpec,
    /// Scale from streaming current to input voltage.
    pub input_scale_v_per_na: f64,
    /// Prediction horizon; zero for classification.
    #[serde(default)]
    pub horizon_steps: usize,
    #[serde(default)]
    pub baselines: Vec<BaselineConfig>,
}

/// Linear autoregression on the raw pressure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub label: String,
    pub order: usize,
    /// Use lags `stride, 2 stride, ..` instead of `0..order`.
    #[serde(default)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureChannelSpec {
    pub radius_um: f64,
    pub length_um: f64,
    pub surface_potential_mv: f64,
    pub permittivity_nf_per_m: f64,
    pub viscosity_mpa_s: f64,
}

impl Default for PressureChannelSpec {
    fn default() -> Self {
        Self {
            radius_um: 25.0,
            length_um: 200.0,
            surface_potential_mv: -40.0,
            permittivity_nf_per_m: 0.71,
            viscosity_mpa_s: 1.01,
        }
    }
}

impl PressureChannelSpec {
    pub fn to_params(&self) -> PressureChannelParams {
        PressureChannelParams {
            radius: self.radius_um * 1e-6,
            length: self.length_um * 1e-6,
            surface_potential: self.surface_potential_mv * 1e-3,
            permittivity: self.permittivity_nf_per_m * 1e-9,
            viscosity: self.viscosity_mpa_s * 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub label: String,
    pub reservoir: ReservoirConfig,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirConfig {
    pub nodes: usize,
    #[serde(default = "one")]
    pub inputs: usize,
    #[serde(default = "one")]
    pub outputs: usize,
    pub sparsity: f64,
    pub target_radius: f64,
    pub leak_rate: f64,
    pub stepsize_s: f64,
    /// Shared timescale of an echo state network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timescale_s: Option<f64>,
    /// Mean and spread of band-pass timescales.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timescale_mean_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timescale_std_s: Option<f64>,
    /// Volts per unit of input carried by `W_in`.
    pub input_scale_v: f64,
    #[serde(default = "half")]
    pub sign_flip_fraction: f64,
    #[serde(default)]
    pub radius_mode: RadiusMode,
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

/// Either every node shares `c`, or `c_i` are drawn per node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timescales {
    Fixed(f64),
    BandPass { mean: f64, std_dev: f64 },
}

impl ReservoirConfig {
    pub fn timescales(&self) -> Option<Timescales> {
        match (self.timescale_s, self.timescale_mean_s, self.timescale_std_s) {
            (Some(c), None, None) => Some(Timescales::Fixed(c)),
            (None, Some(mean), Some(std_dev)) => Some(Timescales::BandPass { mean, std_dev }),
            _ => None,
        }
    }

    /// Smallest timescale the configuration can produce.
    pub fn min_timescale(&self) -> Option<f64> {
        match self.timescales()? {
            Timescales::Fixed(c) => Some(c),
            Timescales::BandPass { mean, .. } => Some(mean / 5.0),
        }
    }

    pub fn weight_spec(&self, timescales: Vec<f64>) -> WeightSpec {
        WeightSpec {
            nodes: self.nodes,
            inputs: self.inputs,
            sparsity: self.sparsity,
            target_radius: self.target_radius,
            leak_rate: self.leak_rate,
            stepsize: self.stepsize_s,
            timescales,
            input_scale: self.input_scale_v,
            sign_flip_fraction: self.sign_flip_fraction,
            radius_mode: self.radius_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub washout_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Every per-run seed derives from this one.
    pub master_seed: u64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the output root.
    pub dir: Option<PathBuf>,
    /// Write prediction traces of the first run.
    pub traces: bool,
    /// Steps of the first run to replay on the circuit model (0 disables).
    pub circuit_trace_steps: usize,
    pub circuit_trace_nodes: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            traces: true,
            circuit_trace_steps: 200,
            circuit_trace_nodes: 4,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        fail(path, format!("must be positive and finite, got {v}"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn network(&self, label: &str) -> Option<&NetworkConfig> {
        self.networks.iter().find(|n| n.label == label)
    }

    /// Check every field before anything is computed.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return fail("name", "must not be empty");
        }
        if self.run.runs == 0 {
            return fail("run.runs", "at least one run is required");
        }
        self.channel
            .to_params()
            .map_err(|e| ConfigError {
                path: "channel".into(),
                message: e.to_string(),
            })?;
        let train_len = self.validate_task()?;
        if self.networks.is_empty() {
            return fail("networks", "at least one network is required");
        }
        for (i, net) in self.networks.iter().enumerate() {
            let path = format!("networks[{i}]");
            if net.label.trim().is_empty() {
                return fail(format!("{path}.label"), "must not be empty");
            }
            if self.networks[..i].iter().any(|n| n.label == net.label) {
                return fail(format!("{path}.label"), format!("duplicate label {:?}", net.label));
            }
            self.validate_reservoir(&format!("{path}.reservoir"), &net.reservoir)?;
            let t = &net.training;
            if !(t.lambda.is_finite() && t.lambda >= 0.0) {
                return fail(format!("{path}.training.lambda"), format!("must be >= 0, got {}", t.lambda));
            }
            if t.washout_steps >= train_len {
                return fail(
                    format!("{path}.training.washout_steps"),
                    format!("{} leaves no training rows out of {train_len}", t.washout_steps),
                );
            }
        }
        Ok(())
    }

    /// Returns the number of training rows the task provides.
    fn validate_task(&self) -> Result<usize, ConfigError> {
        match &self.task {
            TaskConfig::MackeyGlass {
                train_steps,
                test_warmup_steps,
                free_run_steps,
                horizon_steps,
            } => {
                let delay = MackeyGlassParams::default().delay_steps;
                if *train_steps <= delay {
                    return fail("task.train_steps", format!("must exceed the delay of {delay} steps"));
                }
                if *test_warmup_steps == 0 {
                    return fail("task.test_warmup_steps", "must be at least 1");
                }
                if horizon_steps >= free_run_steps {
                    return fail(
                        "task.horizon_steps",
                        format!("{horizon_steps} is not inside the {free_run_steps} free-running steps"),
                    );
                }
                Ok(*train_steps)
            }
            TaskConfig::Harmonic {
                stepsize_s,
                train_steps,
                test_warmup_steps,
                free_run_steps,
            } => {
                positive("task.stepsize_s", *stepsize_s)?;
                if *train_steps == 0 {
                    return fail("task.train_steps", "must be at least 1");
                }
                if *test_warmup_steps == 0 || *free_run_steps == 0 {
                    return fail("task", "warm-up and free-running steps must be at least 1");
                }
                Ok(*train_steps)
            }
            TaskConfig::VentilatorClassify(v) | TaskConfig::VentilatorPredict(v) => {
                let predict = matches!(self.task, TaskConfig::VentilatorPredict(_));
                v.schema.validate().map_err(|e| ConfigError {
                    path: "task.schema".into(),
                    message: e.to_string(),
                })?;
                if !(v.input_scale_v_per_na.is_finite() && v.input_scale_v_per_na != 0.0) {
                    return fail("task.input_scale_v_per_na", "must be finite and nonzero");
                }
                let p = &v.pressure_channel;
                for (key, value) in [
                    ("radius_um", p.radius_um),
                    ("length_um", p.length_um),
                    ("permittivity_nf_per_m", p.permittivity_nf_per_m),
                    ("viscosity_mpa_s", p.viscosity_mpa_s),
                ] {
                    positive(&format!("task.pressure_channel.{key}"), value)?;
                }
                if !p.surface_potential_mv.is_finite() {
                    return fail("task.pressure_channel.surface_potential_mv", "must be finite");
                }
                match (predict, v.horizon_steps) {
                    (true, 0) => return fail("task.horizon_steps", "prediction needs a horizon >= 1"),
                    (false, h) if h > 0 => {
                        return fail("task.horizon_steps", "classification takes no horizon")
                    }
                    _ => {}
                }
                if v.horizon_steps >= v.schema.test_steps - v.schema.washout_steps {
                    return fail("task.horizon_steps", "horizon longer than the scored test segment");
                }
                for (i, b) in v.baselines.iter().enumerate() {
                    let path = format!("task.baselines[{i}]");
                    if b.order == 0 {
                        return fail(format!("{path}.order"), "must be at least 1");
                    }
                    if b.stride == Some(0) {
                        return fail(format!("{path}.stride"), "must be at least 1");
                    }
                    let max_lag = match b.stride {
                        Some(stride) => b.order * stride,
                        None => b.order - 1,
                    };
                    if max_lag > v.schema.washout_steps {
                        return fail(format!("{path}.order"), "lags reach back beyond the washout");
                    }
                }
                Ok(v.schema.train_steps)
            }
        }
    }

    fn validate_reservoir(&self, path: &str, r: &ReservoirConfig) -> Result<(), ConfigError> {
        let at = |key: &str| format!("{path}.{key}");
        if r.nodes == 0 {
            return fail(at("nodes"), "must be at least 1");
        }
        if r.inputs != 1 || r.outputs != 1 {
            return fail(at("inputs"), "the bundled tasks take one input and one output");
        }
        if !(0.0..1.0).contains(&r.sparsity) {
            return fail(at("sparsity"), format!("must lie in [0, 1), got {}", r.sparsity));
        }
        positive(&at("target_radius"), r.target_radius)?;
        if !(r.leak_rate > 0.0 && r.leak_rate <= 1.0) {
            return fail(at("leak_rate"), format!("must lie in (0, 1], got {}", r.leak_rate));
        }
        positive(&at("stepsize_s"), r.stepsize_s)?;
        let task_step = self.task.stepsize();
        if (r.stepsize_s - task_step).abs() > 1e-12 * task_step {
            return fail(
                at("stepsize_s"),
                format!("{} s differs from the task's sampling step {task_step} s", r.stepsize_s),
            );
        }
        match r.timescales() {
            None => {
                return fail(
                    at("timescale_s"),
                    "give either timescale_s or both timescale_mean_s and timescale_std_s",
                )
            }
            Some(Timescales::Fixed(c)) => positive(&at("timescale_s"), c)?,
            Some(Timescales::BandPass { mean, std_dev }) => {
                positive(&at("timescale_mean_s"), mean)?;
                if !(std_dev.is_finite() && std_dev >= 0.0) {
                    return fail(at("timescale_std_s"), format!("must be >= 0, got {std_dev}"));
                }
            }
        }
        let c_min = r.min_timescale().unwrap_or(f64::NAN);
        let gain = r.leak_rate * r.stepsize_s / c_min;
        if gain > 1.0 {
            return fail(
                at("stepsize_s"),
                format!("a * delta / c = {gain} exceeds 1 for the smallest timescale {c_min} s"),
            );
        }
        if r.radius_mode == RadiusMode::EspMatrix && r.target_radius <= 1.0 - gain {
            return fail(
                at("target_radius"),
                format!("must exceed the leak contribution {} in esp_matrix mode", 1.0 - gain),
            );
        }
        if !(r.input_scale_v.is_finite() && r.input_scale_v > 0.0) {
            return fail(at("input_scale_v"), format!("must be positive, got {}", r.input_scale_v));
        }
        if !(0.0..=1.0).contains(&r.sign_flip_fraction) {
            return fail(at("sign_flip_fraction"), "must lie in [0, 1]");
        }
        Ok(())
    }
}
