//! Seeded experiment runs: weights, training, evaluation and artifacts.

use super::config::*;
use crate::circuit::{write_trace_csv, Circuit, VoltageMode};
use crate::memristor::{Activation, ActivationProfile, ChannelParams, Tanh};
use crate::readout::{
    accuracy, classify_threshold, nrmse_84, plain_lags, predict_free_running,
    predict_teacher_forced, rmse, subsampled_lags, train_ridge, variance, ArModel,
    DivergenceReport, Feedback, Metrics, ReadoutError, ReadoutModel, RidgeAccumulator,
};
use crate::reservoir::{
    self, esp_check, generate_weights, sample_bpn_timescales, ReservoirError, ReservoirWeights,
};
use crate::seed::{derive_seed, Stream};
use crate::tasks::{
    self, ahead_targets, harmonic, load_ventilator, mackey_glass, pressure_to_input,
    synth_ventilator_splits, LabeledSeries, MackeyGlassParams,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Environment variable naming a recorded ventilator CSV.
pub const VENTILATOR_ENV: &str = "IONTRONIC_VENTILATOR_CSV";

const BLOCK_ROWS: usize = 2048;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{context}: {message}")]
    Runtime { context: String, message: String },
    #[error("diverged at step {step} (value {value})")]
    Diverged { step: usize, value: f64 },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn runtime(context: impl Into<String>) -> impl FnOnce(String) -> ExperimentError {
    let context = context.into();
    move |message| ExperimentError::Runtime { context, message }
}

impl From<ReservoirError> for ExperimentError {
    fn from(e: ReservoirError) -> Self {
        match e {
            ReservoirError::Divergence { step, value, .. } => ExperimentError::Diverged { step, value },
            other => runtime("reservoir")(other.to_string()),
        }
    }
}

impl From<ReadoutError> for ExperimentError {
    fn from(e: ReadoutError) -> Self {
        match e {
            ReadoutError::Reservoir(r) => r.into(),
            other => runtime("readout")(other.to_string()),
        }
    }
}

impl From<tasks::TaskError> for ExperimentError {
    fn from(e: tasks::TaskError) -> Self {
        runtime("task data")(e.to_string())
    }
}

fn artifact(path: &Path) -> impl FnOnce(String) -> ExperimentError + '_ {
    move |message| ExperimentError::Artifact {
        path: path.to_path_buf(),
        message,
    }
}

/// Where a run reads external data and writes artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    /// Ventilator recording used when the config names none.
    pub ventilator_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(Self {
            count: n,
            mean: values.iter().sum::<f64>() / n as f64,
            median,
            min: sorted[0],
            max: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub index: usize,
    pub weights_seed: u64,
    /// Spectral radius of `(delta/c)|W| + (1 - a delta/c) I`.
    pub esp_matrix_radius: f64,
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_at_horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_at_horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<DivergenceReport>,
}

/// Errors pooled over runs: `sqrt(sum err^2 / (sigma^2 T))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub nrmse84: f64,
    pub rmse84: f64,
    pub input_variance: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub label: String,
    pub diverged_runs: usize,
    /// Per-metric statistics over the runs that did not diverge.
    pub summary: BTreeMap<String, Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled: Option<Pooled>,
    pub seeds: Vec<SeedRecord>,
}

impl NetworkReport {
    pub fn stat(&self, metric: &str) -> Option<&Stat> {
        self.summary.get(metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub label: String,
    pub lags: Vec<usize>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub task: String,
    pub data_source: String,
    pub master_seed: u64,
    pub runs: usize,
    pub diverged_runs: usize,
    pub networks: Vec<NetworkReport>,
    #[serde(default)]
    pub baselines: Vec<BaselineReport>,
}

impl RunReport {
    pub fn network(&self, label: &str) -> Option<&NetworkReport> {
        self.networks.iter().find(|n| n.label == label)
    }

    pub fn baseline(&self, label: &str) -> Option<&BaselineReport> {
        self.baselines.iter().find(|b| b.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Ventilator split prepared for the reservoir.
#[derive(Debug, Clone)]
struct VentSplit {
    pressure: Vec<f64>,
    current_na: Vec<f64>,
    input: Vec<f64>,
    target: Vec<f64>,
    washout: usize,
    stepsize: f64,
}

enum TaskData {
    MackeyGlass,
    Harmonic {
        train: LabeledSeries,
        test: LabeledSeries,
    },
    Ventilator {
        train: VentSplit,
        test: VentSplit,
        classify: bool,
    },
}

struct Shared {
    activation: Arc<dyn Activation>,
    channel: ChannelParams,
    data: TaskData,
    data_source: String,
}

/// Artifacts kept from the first run of each network.
struct FirstRun {
    weights: ReservoirWeights,
    readout: ReadoutModel,
    trace: Table,
    circuit_inputs: DMatrix<f64>,
}

struct SeedOutcome {
    record: SeedRecord,
    first: Option<FirstRun>,
}

/// Rows of string cells with a header, written as CSV.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| artifact(path)(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| artifact(path)(e.to_string()))
    }
}

pub fn build_activation(config: &ExperimentConfig) -> Result<(Arc<dyn Activation>, ChannelParams)> {
    let channel = config
        .channel
        .to_params()
        .map_err(|e| runtime("channel")(e.to_string()))?;
    let activation: Arc<dyn Activation> = match config.activation {
        ActivationKind::Tanh => Arc::new(Tanh),
        ActivationKind::Physical => Arc::new(
            ActivationProfile::with_defaults(&channel)
                .map_err(|e| runtime("activation profile")(e.to_string()))?,
        ),
    };
    Ok((activation, channel))
}

/// Reservoir weights of run `index` for `network`.
pub fn build_weights(config: &ExperimentConfig, network: &NetworkConfig, index: usize) -> Result<ReservoirWeights> {
    let r = &network.reservoir;
    let master = config.run.master_seed;
    let context = format!("networks.{}.reservoir", network.label);
    let timescales = match r.timescales() {
        Some(Timescales::Fixed(c)) => vec![c; r.nodes],
        Some(Timescales::BandPass { mean, std_dev }) => sample_bpn_timescales(
            r.nodes,
            mean,
            std_dev,
            derive_seed(master, Stream::Timescales, index as u64),
        )
        .map_err(|e| runtime(context.clone())(e.to_string()))?,
        None => return Err(runtime(context)("no timescale given".into())),
    };
    generate_weights(
        &r.weight_spec(timescales),
        derive_seed(master, Stream::Weights, index as u64),
    )
    .map_err(|e| runtime(context)(e.to_string()))
}

fn column(m: &DMatrix<f64>) -> Vec<f64> {
    m.column(0).iter().copied().collect()
}

fn prepare(config: &ExperimentConfig, options: &RunOptions) -> Result<Shared> {
    let (activation, channel) = build_activation(config)?;
    let (data, data_source) = match &config.task {
        TaskConfig::MackeyGlass { .. } => (TaskData::MackeyGlass, "generated".to_string()),
        TaskConfig::Harmonic {
            stepsize_s,
            train_steps,
            test_warmup_steps,
            free_run_steps,
        } => {
            let washout = config.networks.iter().map(|n| n.training.washout_steps).min().unwrap_or(0);
            let train = harmonic(*train_steps, *stepsize_s, washout)?;
            let test = harmonic(test_warmup_steps + free_run_steps, *stepsize_s, 0)?;
            (TaskData::Harmonic { train, test }, "generated".to_string())
        }
        TaskConfig::VentilatorClassify(v) | TaskConfig::VentilatorPredict(v) => {
            let classify = matches!(config.task, TaskConfig::VentilatorClassify(_));
            let path = v.data_path.clone().or_else(|| options.ventilator_csv.clone());
            let ((train, test), source) = match &path {
                Some(p) => (load_ventilator(p, &v.schema)?, format!("recorded:{}", p.display())),
                None => {
                    log::warn!("no ventilator recording configured; using synthetic breaths");
                    let seed = derive_seed(config.run.master_seed, Stream::Dataset, 0);
                    (synth_ventilator_splits(seed, &v.schema)?, "synthetic".to_string())
                }
            };
            let pressure_channel = v.pressure_channel.to_params();
            let split = |raw: LabeledSeries| -> Result<VentSplit> {
                let raw = if classify { raw } else { ahead_targets(&raw, v.horizon_steps)? };
                let current = pressure_to_input(&raw, &pressure_channel, 1.0);
                let input = pressure_to_input(&raw, &pressure_channel, v.input_scale_v_per_na);
                Ok(VentSplit {
                    pressure: column(&raw.u),
                    current_na: column(&current.u),
                    input: column(&input.u),
                    target: column(&raw.y),
                    washout: v.schema.washout_steps,
                    stepsize: raw.stepsize(),
                })
            };
            (
                TaskData::Ventilator {
                    train: split(train)?,
                    test: split(test)?,
                    classify,
                },
                source,
            )
        }
    };
    Ok(Shared {
        activation,
        channel,
        data,
        data_source,
    })
}

/// Validate, run every network over every seed and write artifacts.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunReport> {
    config.validate()?;
    let shared = prepare(config, options)?;
    let runs = config.run.runs;
    let jobs: Vec<(usize, usize)> = (0..config.networks.len())
        .flat_map(|n| (0..runs).map(move |i| (n, i)))
        .collect();
    let keep_first = options.output_dir.is_some() && config.output.traces;
    let outcomes: Vec<Result<SeedOutcome>> = jobs
        .par_iter()
        .map(|&(n, i)| {
            let network = &config.networks[n];
            run_seed(config, network, i, &shared, keep_first && i == 0).map_err(|e| match e {
                ExperimentError::Runtime { context, message } => ExperimentError::Runtime {
                    context: format!("networks.{} run {i}: {context}", network.label),
                    message,
                },
                other => other,
            })
        })
        .collect();

    let mut networks = Vec::new();
    let mut firsts = Vec::new();
    let mut outcomes = outcomes.into_iter();
    for network in &config.networks {
        let mut seeds = Vec::with_capacity(runs);
        for _ in 0..runs {
            let outcome = outcomes.next().expect("one outcome per job")?;
            if let Some(first) = outcome.first {
                firsts.push((network.label.clone(), first));
            }
            seeds.push(outcome.record);
        }
        networks.push(summarise(&network.label, seeds));
    }
    let baselines = run_baselines(config, &shared)?;
    let report = RunReport {
        name: config.name.clone(),
        task: config.task.kind().to_string(),
        data_source: shared.data_source.clone(),
        master_seed: config.run.master_seed,
        runs,
        diverged_runs: networks.iter().map(|n| n.diverged_runs).sum(),
        networks,
        baselines,
    };
    if let Some(dir) = &options.output_dir {
        write_artifacts(dir, config, &report, &firsts, &shared)?;
    }
    Ok(report)
}

fn summarise(label: &str, seeds: Vec<SeedRecord>) -> NetworkReport {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in seeds.iter().filter(|s| s.diverged.is_none()) {
        let m = &s.metrics;
        for (key, value) in [
            ("nrmse84", m.nrmse84),
            ("rmse84", m.rmse84),
            ("rmse", m.rmse),
            ("accuracy", m.accuracy),
            ("input_variance", m.input_variance),
        ] {
            if let Some(v) = value {
                columns.entry(key.to_string()).or_default().push(v);
            }
        }
    }
    let summary = columns
        .iter()
        .filter_map(|(k, v)| Stat::of(v).map(|s| (k.clone(), s)))
        .collect();
    let points: Vec<(f64, f64, f64)> = seeds
        .iter()
        .filter_map(|s| Some((s.prediction_at_horizon?, s.truth_at_horizon?, s.metrics.input_variance?)))
        .collect();
    let pooled = (!points.is_empty()).then(|| {
        let pred: Vec<f64> = points.iter().map(|p| p.0).collect();
        let truth: Vec<f64> = points.iter().map(|p| p.1).collect();
        let var = points.iter().map(|p| p.2).sum::<f64>() / points.len() as f64;
        Pooled {
            nrmse84: nrmse_84(&pred, &truth, var),
            rmse84: rmse(&pred, &truth),
            input_variance: var,
            runs: points.len(),
        }
    });
    NetworkReport {
        label: label.to_string(),
        diverged_runs: seeds.iter().filter(|s| s.diverged.is_some()).count(),
        summary,
        pooled,
        seeds,
    }
}

fn run_seed(
    config: &ExperimentConfig,
    network: &NetworkConfig,
    index: usize,
    shared: &Shared,
    keep: bool,
) -> Result<SeedOutcome> {
    let weights = build_weights(config, network, index)?;
    let esp = esp_check(&weights)?;
    let mut record = SeedRecord {
        index,
        weights_seed: derive_seed(config.run.master_seed, Stream::Weights, index as u64),
        esp_matrix_radius: esp.spectral_radius_m,
        metrics: Metrics::default(),
        prediction_at_horizon: None,
        truth_at_horizon: None,
        diverged: None,
    };
    let result = match &shared.data {
        TaskData::MackeyGlass => mackey_glass_seed(config, network, index, &weights, shared, &mut record, keep),
        TaskData::Harmonic { train, test } => {
            let TaskConfig::Harmonic { test_warmup_steps, .. } = config.task else {
                unreachable!("harmonic data for another task");
            };
            let protocol = Protocol { warmup: test_warmup_steps, horizon: None };
            free_run_seed(network, &weights, shared, train, test, protocol, &mut record, keep)
        }
        TaskData::Ventilator { train, test, classify } => {
            ventilator_seed(network, &weights, shared, train, test, *classify, &mut record, keep)
        }
    };
    match result {
        Ok(first) => Ok(SeedOutcome {
            first: first.map(|(readout, trace, circuit_inputs)| FirstRun {
                weights,
                readout,
                trace,
                circuit_inputs,
            }),
            record,
        }),
        Err(ExperimentError::Diverged { step, value }) => {
            record.diverged = Some(DivergenceReport { step, value });
            Ok(SeedOutcome { record, first: None })
        }
        Err(e) => Err(e),
    }
}

type FirstParts = Option<(ReadoutModel, Table, DMatrix<f64>)>;

fn mackey_glass_seed(
    config: &ExperimentConfig,
    network: &NetworkConfig,
    index: usize,
    weights: &ReservoirWeights,
    shared: &Shared,
    record: &mut SeedRecord,
    keep: bool,
) -> Result<FirstParts> {
    let TaskConfig::MackeyGlass {
        train_steps,
        test_warmup_steps,
        free_run_steps,
        horizon_steps,
    } = config.task
    else {
        unreachable!("mackey_glass_seed on another task");
    };
    let params = MackeyGlassParams::default();
    let master = config.run.master_seed;
    let washout = network.training.washout_steps;
    let train = mackey_glass(&params, train_steps, derive_seed(master, Stream::TrainSeries, index as u64), washout)?;
    let test = mackey_glass(
        &params,
        test_warmup_steps + free_run_steps,
        derive_seed(master, Stream::TestSeries, index as u64),
        0,
    )?;
    let protocol = Protocol {
        warmup: test_warmup_steps,
        horizon: Some(horizon_steps),
    };
    free_run_seed(network, weights, shared, &train, &test, protocol, record, keep)
}

/// Teacher-forced warm-up length and, for point scores, the free-running step scored.
#[derive(Debug, Clone, Copy)]
struct Protocol {
    warmup: usize,
    horizon: Option<usize>,
}

/// Train on `train`, teacher-force `test` up to the warm-up and free-run the rest.
///
/// Free-running output `k` predicts test input `warmup + k`.
#[allow(clippy::too_many_arguments)]
fn free_run_seed(
    network: &NetworkConfig,
    weights: &ReservoirWeights,
    shared: &Shared,
    train: &LabeledSeries,
    test: &LabeledSeries,
    protocol: Protocol,
    record: &mut SeedRecord,
    keep: bool,
) -> Result<FirstParts> {
    let act = shared.activation.as_ref();
    let washout = network.training.washout_steps;
    let n = weights.nodes();
    let states = reservoir::run(weights, &DVector::zeros(n), &train.u, act)?;
    let model = train_ridge(&states, &train.y, network.training.lambda, washout)?;
    let sigma2 = variance(&column(&train.u));
    record.metrics.input_variance = Some(sigma2);

    let Protocol { warmup, horizon } = protocol;
    let free_steps = test.len() - warmup;
    let u = column(&test.u);
    let (state, forced) = if warmup > 1 {
        let inputs = test.u.rows(0, warmup - 1).into_owned();
        let tf = predict_teacher_forced(&model, weights, &DVector::zeros(n), &inputs, act)?;
        (tf.final_state(), Some(tf.outputs))
    } else {
        (DVector::zeros(n), None)
    };
    let free = predict_free_running(
        &model,
        weights,
        &state,
        &DVector::from_element(1, u[warmup - 1]),
        free_steps,
        act,
        Feedback::Closed,
    )?;
    record.diverged = free.diverged;
    let outputs = column(&free.outputs);
    if free.diverged.is_none() {
        let truth = &u[warmup..warmup + free_steps];
        match horizon {
            Some(h) => {
                record.prediction_at_horizon = Some(outputs[h]);
                record.truth_at_horizon = Some(truth[h]);
                record.metrics.nrmse84 = Some(nrmse_84(&outputs[h..=h], &truth[h..=h], sigma2));
                record.metrics.rmse84 = Some((outputs[h] - truth[h]).abs());
            }
            None => record.metrics.rmse = Some(rmse(&outputs, truth)),
        }
    }
    if !keep {
        return Ok(None);
    }
    let delta = test.stepsize();
    let mut trace = Table::new(&["t", "truth", "prediction", "phase"]);
    if let Some(forced) = forced {
        for k in 0..forced.nrows() {
            trace.push(vec![
                ((k + 1) as f64 * delta).to_string(),
                u[k + 1].to_string(),
                forced[(k, 0)].to_string(),
                "washout".into(),
            ]);
        }
    }
    for (k, y) in outputs.iter().enumerate() {
        trace.push(vec![
            ((warmup + k) as f64 * delta).to_string(),
            u[warmup + k].to_string(),
            y.to_string(),
            "free".into(),
        ]);
    }
    Ok(Some((model, trace, test.u.clone())))
}

/// Reservoir states for `input`, handed out in blocks of rows.
fn drive_blocks(
    weights: &ReservoirWeights,
    input: &[f64],
    act: &dyn Activation,
    mut sink: impl FnMut(usize, &DMatrix<f64>) -> Result<()>,
) -> Result<()> {
    let n = weights.nodes();
    let mut state = DVector::zeros(n);
    let mut buffer: Vec<f64> = Vec::with_capacity(BLOCK_ROWS * n);
    let mut start = 0;
    for (step, &u) in input.iter().enumerate() {
        state = reservoir::step_at(weights, &state, &DVector::from_element(1, u), act, step)?;
        buffer.extend(state.iter());
        if buffer.len() == BLOCK_ROWS * n || step + 1 == input.len() {
            let rows = buffer.len() / n;
            sink(start, &DMatrix::from_row_slice(rows, n, &buffer))?;
            start += rows;
            buffer.clear();
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ventilator_seed(
    network: &NetworkConfig,
    weights: &ReservoirWeights,
    shared: &Shared,
    train: &VentSplit,
    test: &VentSplit,
    classify: bool,
    record: &mut SeedRecord,
    keep: bool,
) -> Result<FirstParts> {
    let act = shared.activation.as_ref();
    let washout = network.training.washout_steps;
    let mut acc = RidgeAccumulator::new(weights.nodes(), 1);
    drive_blocks(weights, &train.input, act, |start, block| {
        let rows = block.nrows();
        let skip = washout.saturating_sub(start).min(rows);
        if skip == rows {
            return Ok(());
        }
        let x = block.rows(skip, rows - skip).into_owned();
        let y = DMatrix::from_fn(rows - skip, 1, |r, _| train.target[start + skip + r]);
        acc.add_rows(&x, &y).map_err(ExperimentError::from)
    })?;
    let model = acc.solve(network.training.lambda)?;
    let mut outputs = Vec::with_capacity(test.input.len());
    drive_blocks(weights, &test.input, act, |_, block| {
        outputs.extend(model.predict(block)?.column(0).iter().copied());
        Ok(())
    })?;
    let scored = test.washout..test.input.len();
    if classify {
        let labels = classify_threshold(&outputs[scored.clone()]);
        let truth: Vec<u8> = test.target[scored].iter().map(|v| u8::from(*v >= 0.5)).collect();
        record.metrics.accuracy = Some(accuracy(&labels, &truth));
    } else {
        record.metrics.rmse = Some(rmse(&outputs[scored.clone()], &test.target[scored]));
    }
    if !keep {
        return Ok(None);
    }
    let mut trace = Table::new(&[
        "t",
        "pressure_mbar",
        "streaming_current_na",
        "input_v",
        "truth",
        "prediction",
    ]);
    for (n, y) in outputs.iter().enumerate() {
        trace.push(vec![
            (n as f64 * test.stepsize).to_string(),
            test.pressure[n].to_string(),
            test.current_na[n].to_string(),
            test.input[n].to_string(),
            test.target[n].to_string(),
            y.to_string(),
        ]);
    }
    let inputs = DMatrix::from_column_slice(test.input.len(), 1, &test.input);
    Ok(Some((model, trace, inputs)))
}

fn run_baselines(config: &ExperimentConfig, shared: &Shared) -> Result<Vec<BaselineReport>> {
    let (TaskConfig::VentilatorClassify(v) | TaskConfig::VentilatorPredict(v)) = &config.task else {
        return Ok(Vec::new());
    };
    let TaskData::Ventilator { train, test, classify } = &shared.data else {
        unreachable!("ventilator task without ventilator data");
    };
    v.baselines
        .par_iter()
        .map(|b| {
            let lags = match b.stride {
                Some(stride) => subsampled_lags(b.order, stride),
                None => plain_lags(b.order),
            };
            let model = ArModel::fit(&train.pressure, &train.target, &lags, train.washout)
                .map_err(|e| runtime(format!("baseline {}", b.label))(e.to_string()))?;
            let predictions = model.predict(&test.pressure);
            let offset = model.max_lag();
            let from = test.washout.max(offset);
            let scored = &predictions[from - offset..];
            let truth = &test.target[from..];
            let mut metrics = Metrics::default();
            if *classify {
                let t: Vec<u8> = truth.iter().map(|v| u8::from(*v >= 0.5)).collect();
                metrics.accuracy = Some(accuracy(&classify_threshold(scored), &t));
            } else {
                metrics.rmse = Some(rmse(scored, truth));
            }
            Ok(BaselineReport {
                label: b.label.clone(),
                lags,
                metrics,
            })
        })
        .collect()
}

fn write_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    report: &RunReport,
    firsts: &[(String, FirstRun)],
    shared: &Shared,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| artifact(dir)(e.to_string()))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| artifact(&path)(e.to_string()))
    };
    write("metrics.json", report.to_json())?;
    write(
        "config.json",
        serde_json::to_string_pretty(config).expect("config serialises"),
    )?;
    for net in &report.networks {
        let mut table = Table::new(&["index", "weights_seed", "esp_matrix_radius", "nrmse84", "rmse84", "rmse", "accuracy", "diverged"]);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &net.seeds {
            table.push(vec![
                s.index.to_string(),
                s.weights_seed.to_string(),
                s.esp_matrix_radius.to_string(),
                opt(s.metrics.nrmse84),
                opt(s.metrics.rmse84),
                opt(s.metrics.rmse),
                opt(s.metrics.accuracy),
                s.diverged.is_some().to_string(),
            ]);
        }
        table.write(&dir.join(format!("seeds_{}.csv", net.label)))?;
    }
    for (label, first) in firsts {
        first.trace.write(&dir.join(format!("trace_{label}.csv")))?;
        write(
            &format!("weights_{label}.json"),
            serde_json::to_string(&first.weights.to_record()).expect("weights serialise"),
        )?;
        write(
            &format!("readout_{label}.json"),
            serde_json::to_string(&first.readout.to_record()).expect("readout serialises"),
        )?;
        let steps = config.output.circuit_trace_steps.min(first.circuit_inputs.nrows());
        if steps > 0 {
            let circuit = Circuit::from_weights(
                &first.weights,
                &shared.channel,
                shared.activation.as_ref(),
                VoltageMode::Measured,
            )
            .map_err(|e| runtime(format!("circuit replay of {label}"))(e.to_string()))?;
            let initial = circuit.equilibrium_state();
            let states = circuit
                .run(&initial, &first.circuit_inputs.rows(0, steps).into_owned())
                .map_err(|e| runtime(format!("circuit replay of {label}"))(e.to_string()))?;
            let nodes: Vec<usize> = (0..config.output.circuit_trace_nodes.min(first.weights.nodes())).collect();
            let path = dir.join(format!("circuit_{label}.csv"));
            let file = fs::File::create(&path).map_err(|e| artifact(&path)(e.to_string()))?;
            write_trace_csv(&initial, &states, &nodes, file).map_err(|e| artifact(&path)(e.to_string()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::preset;
    use crate::readout::DivergenceReport;
    use crate::tasks::VentilatorSchema;

    fn seed(index: usize, rmse: f64, diverged: bool) -> SeedRecord {
        SeedRecord {
            index,
            weights_seed: index as u64,
            esp_matrix_radius: 0.5,
            metrics: Metrics {
                rmse: (!diverged).then_some(rmse),
                ..Metrics::default()
            },
            prediction_at_horizon: None,
            truth_at_horizon: None,
            diverged: diverged.then_some(DivergenceReport {
                step: 3,
                value: f64::INFINITY,
            }),
        }
    }

    #[test]
    fn stat_of_small_samples() {
        assert!(Stat::of(&[]).is_none());
        let s = Stat::of(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!((s.count, s.mean, s.median, s.min, s.max), (4, 4.0, 2.5, 1.0, 10.0));
        assert_eq!(Stat::of(&[5.0, 1.0, 3.0]).unwrap().median, 3.0);
    }

    #[test]
    fn diverged_runs_are_counted_not_averaged() {
        let report = summarise("x", vec![seed(0, 1.0, false), seed(1, 0.0, true), seed(2, 3.0, false)]);
        assert_eq!(report.diverged_runs, 1);
        let s = report.stat("rmse").unwrap();
        assert_eq!((s.count, s.mean), (2, 2.0));
        assert!(report.pooled.is_none());
        let json = serde_json::to_string(&report).unwrap();
        let back: NetworkReport = serde_json::from_str(&json).unwrap();
        assert!(back.seeds[1].diverged.unwrap().value.is_nan());
    }

    #[test]
    fn runs_are_reproducible_and_write_artifacts() {
        let mut config = preset("harmonic12").unwrap();
        config.run.runs = 2;
        let dir = tempfile::tempdir().unwrap();
        let options = RunOptions {
            output_dir: Some(dir.path().to_path_buf()),
            ventilator_csv: None,
        };
        let a = run_experiment(&config, &options).unwrap();
        let b = run_experiment(&config, &RunOptions::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.task, "harmonic");
        for label in ["esn", "bpn"] {
            for stem in ["seeds", "trace", "circuit"] {
                assert!(dir.path().join(format!("{stem}_{label}.csv")).exists(), "{stem}_{label}");
            }
            for stem in ["weights", "readout"] {
                assert!(dir.path().join(format!("{stem}_{label}.json")).exists(), "{stem}_{label}");
            }
        }
        let text = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.runs, 2);
        let saved = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
        assert_eq!(ExperimentConfig::from_json(&saved).unwrap(), config);
        // a different master seed changes the weights
        config.run.master_seed += 1;
        let c = run_experiment(&config, &RunOptions::default()).unwrap();
        assert_ne!(c.networks[0].seeds[0].weights_seed, a.networks[0].seeds[0].weights_seed);
    }

    #[test]
    fn recorded_ventilator_file_is_used() {
        let mut config = preset("vent-classify").unwrap();
        config.run.runs = 1;
        config.output.traces = false;
        let schema = VentilatorSchema {
            train_steps: 600,
            test_steps: 400,
            washout_steps: 100,
            ..VentilatorSchema::default()
        };
        let series = crate::tasks::synth_ventilator(3, 20, schema.stepsize_s, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let mut w = csv::Writer::from_path(&path).unwrap();
        w.write_record(["id", "breath_id", "time_step", "u_in", "u_out", "pressure"]).unwrap();
        for k in 0..series.len() {
            let t = k as f64 * schema.stepsize_s;
            w.write_record(&[
                k.to_string(),
                "1".to_string(),
                t.to_string(),
                "0".to_string(),
                series.y[(k, 0)].to_string(),
                series.u[(k, 0)].to_string(),
            ])
            .unwrap();
        }
        w.flush().unwrap();
        if let TaskConfig::VentilatorClassify(v) = &mut config.task {
            v.schema = schema;
        }
        config.networks[0].training.washout_steps = 100;
        let options = RunOptions {
            output_dir: None,
            ventilator_csv: Some(path.clone()),
        };
        let report = run_experiment(&config, &options).unwrap();
        assert_eq!(report.data_source, format!("recorded:{}", path.display()));
        let accuracy = report.networks[0].stat("accuracy").unwrap().mean;
        assert!((0.0..=1.0).contains(&accuracy));
        assert_eq!(report.baselines.len(), 2);
    }
}
