//! Benchmark signals and ventilator data ingestion.

use crate::circuit::{attach_pressure_input, PressureChannelParams};
use crate::seed;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

/// Step of the ventilator recordings (s).
pub const VENTILATOR_STEPSIZE: f64 = 0.034035;
/// Harmonic task step (s).
pub const HARMONIC_STEPSIZE: f64 = PI / 10.0;
/// Pascal per millibar.
pub const PA_PER_MBAR: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task parameters: {0}")]
    Params(String),
    #[error("ventilator ingestion failed: {reason}{}", format_rows(.rows))]
    Ingestion { reason: String, rows: Vec<usize> },
    #[error("series file {path}: {reason}")]
    Series { path: PathBuf, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_rows(rows: &[usize]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let shown: Vec<String> = rows.iter().take(20).map(|r| r.to_string()).collect();
    let more = if rows.len() > 20 {
        format!(" and {} more", rows.len() - 20)
    } else {
        String::new()
    };
    format!(" (rows {}{more})", shown.join(", "))
}

pub type Result<T> = std::result::Result<T, TaskError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub task: String,
    pub seed: Option<u64>,
    pub stepsize: f64,
    pub washout_steps: usize,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

/// Input and target sequences on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub t: Vec<f64>,
    /// `T x K`.
    pub u: DMatrix<f64>,
    /// `T x L`.
    pub y: DMatrix<f64>,
    pub washout: usize,
    pub metadata: SeriesMetadata,
}

impl LabeledSeries {
    pub fn new(
        task: &str,
        seed: Option<u64>,
        stepsize: f64,
        u: DMatrix<f64>,
        y: DMatrix<f64>,
        washout: usize,
    ) -> Result<Self> {
        let t = (0..u.nrows()).map(|n| n as f64 * stepsize).collect();
        let series = Self {
            t,
            u,
            y,
            washout,
            metadata: SeriesMetadata {
                task: task.to_string(),
                seed,
                stepsize,
                washout_steps: washout,
                parameters: BTreeMap::new(),
            },
        };
        series.validate()?;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn stepsize(&self) -> f64 {
        self.metadata.stepsize
    }

    pub fn with_parameter(mut self, key: &str, value: f64) -> Self {
        self.metadata.parameters.insert(key.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TaskError::Params(m));
        let n = self.t.len();
        if n == 0 {
            return bad("empty series".into());
        }
        if self.u.nrows() != n || self.y.nrows() != n {
            return bad(format!(
                "{n} time stamps, {} inputs, {} targets",
                self.u.nrows(),
                self.y.nrows()
            ));
        }
        if self.washout >= n {
            return bad(format!("washout {} >= length {n}", self.washout));
        }
        let delta = self.metadata.stepsize;
        if !(delta > 0.0 && delta.is_finite()) {
            return bad(format!("stepsize must be positive, got {delta}"));
        }
        for i in 1..n {
            let tol = 1e-12 * self.t[i].abs().max(1.0);
            if (self.t[i] - self.t[i - 1] - delta).abs() > tol {
                return bad(format!("non-uniform time stamps at index {i}"));
            }
        }
        if self.u.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return bad("series contains non-finite values".into());
        }
        Ok(())
    }

    /// Contiguous rows `start..start + len`, with a fresh washout.
    pub fn segment(&self, start: usize, len: usize, washout: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(TaskError::Params(format!(
                "segment {start}..{} beyond length {}",
                start + len,
                self.len()
            )));
        }
        let mut out = LabeledSeries::new(
            &self.metadata.task,
            self.metadata.seed,
            self.stepsize(),
            self.u.rows(start, len).into_owned(),
            self.y.rows(start, len).into_owned(),
            washout,
        )?;
        out.metadata.parameters = self.metadata.parameters.clone();
        Ok(out)
    }

    /// Write `<stem>.csv` with columns `t, u_0.., y_0..` and `<stem>.json` metadata.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        let mut header = vec!["t".to_string()];
        header.extend((0..self.u.ncols()).map(|k| format!("u_{k}")));
        header.extend((0..self.y.ncols()).map(|l| format!("y_{l}")));
        w.write_record(&header)?;
        for n in 0..self.len() {
            let mut row = vec![self.t[n].to_string()];
            row.extend(self.u.row(n).iter().map(|v| v.to_string()));
            row.extend(self.y.row(n).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        let sidecar = File::create(dir.join(format!("{stem}.json")))?;
        serde_json::to_writer_pretty(sidecar, &self.metadata)?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let metadata: SeriesMetadata =
            serde_json::from_reader(BufReader::new(File::open(dir.join(format!("{stem}.json")))?))?;
        let mut r = csv::Reader::from_path(&csv_path)?;
        let header = r.headers()?.clone();
        let fail = |reason: String| TaskError::Series {
            path: csv_path.clone(),
            reason,
        };
        let k = header.iter().filter(|h| h.starts_with("u_")).count();
        let l = header.iter().filter(|h| h.starts_with("y_")).count();
        if header.get(0) != Some("t") || header.len() != 1 + k + l {
            return Err(fail("header must be t, u_*, y_*".into()));
        }
        let (mut t, mut u, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let values: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fail(format!("row {}: {e}", i + 1)))?;
            t.push(values[0]);
            u.extend_from_slice(&values[1..1 + k]);
            y.extend_from_slice(&values[1 + k..]);
        }
        let n = t.len();
        let series = Self {
            t,
            u: DMatrix::from_row_slice(n, k, &u),
            y: DMatrix::from_row_slice(n, l, &y),
            washout: metadata.washout_steps,
            metadata,
        };
        series.validate()?;
        Ok(series)
    }
}

/// Parameters of the delay equation `dP/dt = beta P_d / (theta + P_d^n) - gamma P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MackeyGlassParams {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    pub exponent: f64,
    /// Delay in steps; also the length of the random history.
    pub delay_steps: usize,
    pub stepsize: f64,
}

impl Default for MackeyGlassParams {
    fn default() -> Self {
        Self {
            beta: 0.2,
            theta: 1.0,
            gamma: 0.1,
            exponent: 10.0,
            delay_steps: 17,
            stepsize: 1.0,
        }
    }
}

impl MackeyGlassParams {
    pub fn validate(&self) -> Result<()> {
        if self.delay_steps < 1 {
            return Err(TaskError::Params("delay must be at least one step".into()));
        }
        if !(self.theta > 0.0) || !(self.stepsize > 0.0) {
            return Err(TaskError::Params("theta and stepsize must be positive".into()));
        }
        if ![self.beta, self.gamma, self.exponent].iter().all(|v| v.is_finite()) {
            return Err(TaskError::Params("non-finite rate".into()));
        }
        Ok(())
    }
}

/// Raw Euler trajectory: `history` followed by `steps` new values, where
/// `P[n] = P[n-1] + dt (beta P[n-d] / (theta + P[n-d]^e) - gamma P[n-1])`.
pub fn mackey_glass_raw(params: &MackeyGlassParams, history: &[f64], steps: usize) -> Result<Vec<f64>> {
    params.validate()?;
    let d = params.delay_steps;
    if history.len() != d {
        return Err(TaskError::Params(format!(
            "history holds {} values, delay is {d}",
            history.len()
        )));
    }
    let mut p = Vec::with_capacity(d + steps);
    p.extend_from_slice(history);
    for n in d..d + steps {
        let delayed = p[n - d];
        let drive = params.beta * delayed / (params.theta + delayed.powf(params.exponent));
        p.push(p[n - 1] + params.stepsize * (drive - params.gamma * p[n - 1]));
    }
    Ok(p)
}

/// Mackey-Glass series mapped through `tanh(P - 1)`; the target is the next value.
///
/// The equation is odd in `P`, so a random history may land on the mirrored
/// negative attractor. Such trajectories are negated as a whole, which keeps
/// every draw on the branch that the `tanh(P - 1)` rescaling is meant for.
pub fn mackey_glass(params: &MackeyGlassParams, length: usize, seed: u64, washout: usize) -> Result<LabeledSeries> {
    params.validate()?;
    let d = params.delay_steps;
    if length <= d {
        return Err(TaskError::Params(format!("length {length} must exceed the delay {d}")));
    }
    if params.exponent.fract() != 0.0 {
        log::warn!("non-integer exponent: negative history values give NaN");
    }
    let mut rng = seed::rng(seed);
    let history: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut p = mackey_glass_raw(params, &history, length + 1 - d)?;
    let tail = &p[d..];
    if tail.iter().sum::<f64>() < 0.0 {
        p.iter_mut().for_each(|v| *v = -*v);
    }
    let s: Vec<f64> = p.iter().map(|v| (v - 1.0).tanh()).collect();
    let u = DMatrix::from_column_slice(length, 1, &s[..length]);
    let y = DMatrix::from_column_slice(length, 1, &s[1..]);
    Ok(LabeledSeries::new("mackey_glass", Some(seed), params.stepsize, u, y, washout)?
        .with_parameter("beta", params.beta)
        .with_parameter("theta", params.theta)
        .with_parameter("gamma", params.gamma)
        .with_parameter("exponent", params.exponent)
        .with_parameter("delay_steps", d as f64))
}

pub fn harmonic_value(t: f64) -> f64 {
    t.sin() * (1.2 * t).cos()
}

/// `sin(t) cos(1.2 t)` sampled at `t_n = n delta`; the target is the next sample.
pub fn harmonic(length: usize, stepsize: f64, washout: usize) -> Result<LabeledSeries> {
    if length < 1 {
        return Err(TaskError::Params("harmonic series needs at least one step".into()));
    }
    let u = DMatrix::from_fn(length, 1, |n, _| harmonic_value(n as f64 * stepsize));
    let y = DMatrix::from_fn(length, 1, |n, _| harmonic_value((n + 1) as f64 * stepsize));
    LabeledSeries::new("harmonic", None, stepsize, u, y, washout)
}

/// Column names and split sizes for ventilator recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VentilatorSchema {
    pub breath_column: String,
    pub time_column: String,
    pub pressure_column: String,
    pub valve_column: String,
    pub train_steps: usize,
    pub test_steps: usize,
    pub washout_steps: usize,
    pub stepsize_s: f64,
    pub timestep_tolerance_s: f64,
}

impl Default for VentilatorSchema {
    fn default() -> Self {
        Self {
            breath_column: "breath_id".into(),
            time_column: "time_step".into(),
            pressure_column: "pressure".into(),
            valve_column: "u_out".into(),
            train_steps: 80_000,
            test_steps: 20_000,
            washout_steps: 1000,
            stepsize_s: VENTILATOR_STEPSIZE,
            timestep_tolerance_s: 1e-6,
        }
    }
}

impl VentilatorSchema {
    pub fn validate(&self) -> Result<()> {
        if self.train_steps <= self.washout_steps || self.test_steps <= self.washout_steps {
            return Err(TaskError::Params("each split must be longer than the washout".into()));
        }
        if !(self.stepsize_s > 0.0) || !(self.timestep_tolerance_s >= 0.0) {
            return Err(TaskError::Params("stepsize must be positive, tolerance nonnegative".into()));
        }
        Ok(())
    }
}

fn ventilator_series(
    pressure: &[f64],
    valve: &[f64],
    stepsize: f64,
    washout: usize,
    task: &str,
    seed: Option<u64>,
) -> Result<LabeledSeries> {
    LabeledSeries::new(
        task,
        seed,
        stepsize,
        DMatrix::from_column_slice(pressure.len(), 1, pressure),
        DMatrix::from_column_slice(valve.len(), 1, valve),
        washout,
    )
}

/// Load a ventilator CSV and cut contiguous train and test segments.
///
/// Inputs are pressures (mbar), targets the binary expiratory-valve flag.
/// Time stamps must advance by the configured step within each breath and
/// may restart whenever the breath id changes.
pub fn load_ventilator(path: &Path, schema: &VentilatorSchema) -> Result<(LabeledSeries, LabeledSeries)> {
    schema.validate()?;
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let column = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| TaskError::Ingestion {
            reason: format!("missing column {name:?} in {}", path.display()),
            rows: vec![],
        })
    };
    let (ib, it, ip, iv) = (
        column(&schema.breath_column)?,
        column(&schema.time_column)?,
        column(&schema.pressure_column)?,
        column(&schema.valve_column)?,
    );
    let needed = schema.train_steps + schema.test_steps;
    let mut pressure = Vec::with_capacity(needed);
    let mut valve = Vec::with_capacity(needed);
    let mut offending = Vec::new();
    let mut malformed = Vec::new();
    let mut previous: Option<(String, f64)> = None;
    for (i, rec) in reader.records().enumerate() {
        if pressure.len() == needed {
            break;
        }
        // data rows are numbered from 1 after the header
        let row = i + 1;
        let rec = rec?;
        let parsed = (|| {
            let t: f64 = rec.get(it)?.trim().parse().ok()?;
            let p: f64 = rec.get(ip)?.trim().parse().ok()?;
            let v: f64 = rec.get(iv)?.trim().parse().ok()?;
            (p.is_finite() && (v == 0.0 || v == 1.0)).then_some((t, p, v))
        })();
        let Some((t, p, v)) = parsed else {
            malformed.push(row);
            continue;
        };
        let breath = rec.get(ib).unwrap_or_default().to_string();
        if let Some((prev_breath, prev_t)) = &previous {
            if *prev_breath == breath && (t - prev_t - schema.stepsize_s).abs() > schema.timestep_tolerance_s {
                offending.push(row);
            }
        }
        previous = Some((breath, t));
        pressure.push(p);
        valve.push(v);
    }
    if !malformed.is_empty() {
        return Err(TaskError::Ingestion {
            reason: "unparsable pressure, time or non-binary valve values".into(),
            rows: malformed,
        });
    }
    if !offending.is_empty() {
        return Err(TaskError::Ingestion {
            reason: format!(
                "time step deviates from {} s by more than {} s",
                schema.stepsize_s, schema.timestep_tolerance_s
            ),
            rows: offending,
        });
    }
    if pressure.len() < needed {
        return Err(TaskError::Ingestion {
            reason: format!("{} usable rows, {needed} required", pressure.len()),
            rows: vec![],
        });
    }
    split_ventilator(&pressure, &valve, schema, "ventilator", None)
}

fn split_ventilator(
    pressure: &[f64],
    valve: &[f64],
    schema: &VentilatorSchema,
    task: &str,
    seed: Option<u64>,
) -> Result<(LabeledSeries, LabeledSeries)> {
    let (a, b) = (schema.train_steps, schema.train_steps + schema.test_steps);
    if pressure.len() < b {
        return Err(TaskError::Params(format!("{} steps, {b} required", pressure.len())));
    }
    let train = ventilator_series(&pressure[..a], &valve[..a], schema.stepsize_s, schema.washout_steps, task, seed)?;
    let test = ventilator_series(&pressure[a..b], &valve[a..b], schema.stepsize_s, schema.washout_steps, task, seed)?;
    Ok((train, test))
}

/// Synthetic breaths: a pause at end-expiratory pressure (valve open), a
/// rise and a plateau (valve closed), then exponential decay (valve open).
pub fn synth_ventilator(seed: u64, n_breaths: usize, stepsize: f64, washout: usize) -> Result<LabeledSeries> {
    if n_breaths < 1 {
        return Err(TaskError::Params("need at least one breath".into()));
    }
    let mut rng = seed::rng(seed);
    let mut pressure = Vec::new();
    let mut valve = Vec::new();
    for _ in 0..n_breaths {
        let peep = rng.gen_range(4.0..7.0);
        let peak = peep + rng.gen_range(6.0..18.0);
        let pause = rng.gen_range(3..8);
        let rise = rng.gen_range(6..12);
        let plateau = rng.gen_range(14..24);
        let decay = rng.gen_range(35..50);
        let decay_rate = rng.gen_range(0.08..0.2);
        let mut push = |p: f64, v: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let noisy = p + rng.gen_range(-0.3..0.3);
            pressure.push(noisy.clamp(0.0, 40.0));
            valve.push(v);
        };
        for _ in 0..pause {
            push(peep, 1.0, &mut rng);
        }
        for k in 0..rise {
            push(peep + (peak - peep) * (k + 1) as f64 / rise as f64, 0.0, &mut rng);
        }
        for k in 0..plateau {
            // slight sag across the plateau
            push(peak - 0.05 * k as f64, 0.0, &mut rng);
        }
        let start = peak - 0.05 * plateau as f64;
        for k in 0..decay {
            push(peep + (start - peep) * (-decay_rate * (k + 1) as f64).exp(), 1.0, &mut rng);
        }
    }
    Ok(ventilator_series(&pressure, &valve, stepsize, washout, "ventilator_synthetic", Some(seed))?
        .with_parameter("breaths", n_breaths as f64))
}

/// Synthetic train and test splits with the same sizes as the recorded data.
pub fn synth_ventilator_splits(seed: u64, schema: &VentilatorSchema) -> Result<(LabeledSeries, LabeledSeries)> {
    schema.validate()?;
    let needed = schema.train_steps + schema.test_steps;
    // breaths are at most 93 and at least 59 steps long
    let breaths = needed / 59 + 1;
    let series = synth_ventilator(seed, breaths, schema.stepsize_s, 0)?;
    let pressure: Vec<f64> = series.u.column(0).iter().copied().collect();
    let valve: Vec<f64> = series.y.column(0).iter().copied().collect();
    split_ventilator(&pressure, &valve, schema, "ventilator_synthetic", Some(seed))
}

/// Replace pressure inputs (mbar) by `s_in * I_p` with `I_p` in nA.
pub fn pressure_to_input(
    series: &LabeledSeries,
    channel: &PressureChannelParams,
    input_scale_v_per_na: f64,
) -> LabeledSeries {
    let mut out = series.clone();
    out.u = series
        .u
        .map(|p| input_scale_v_per_na * attach_pressure_input(channel, p * PA_PER_MBAR) * 1e9);
    out.metadata
        .parameters
        .insert("input_scale_v_per_na".into(), input_scale_v_per_na);
    out
}

/// Targets `y(n) = u(n + horizon)`; the last `horizon` steps are dropped.
pub fn ahead_targets(series: &LabeledSeries, horizon: usize) -> Result<LabeledSeries> {
    let n = series.len();
    if horizon >= n {
        return Err(TaskError::Params(format!("horizon {horizon} >= length {n}")));
    }
    let len = n - horizon;
    let mut out = LabeledSeries::new(
        &series.metadata.task,
        series.metadata.seed,
        series.stepsize(),
        series.u.rows(0, len).into_owned(),
        series.u.rows(horizon, len).into_owned(),
        series.washout.min(len - 1),
    )?;
    out.metadata.parameters = series.metadata.parameters.clone();
    out.metadata.parameters.insert("horizon_steps".into(), horizon as f64);
    Ok(out)
}
