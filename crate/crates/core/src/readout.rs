//! Linear readout, inference loops and evaluation metrics.

use crate::matrix_io::{MatrixIoError, MatrixRecord};
use crate::memristor::Activation;
use crate::reservoir::{self, ReservoirError, ReservoirWeights};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Free-running outputs beyond this magnitude count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, thiserror::Error)]
pub enum ReadoutError {
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
    #[error(transparent)]
    Matrix(#[from] MatrixIoError),
}

pub type Result<T> = std::result::Result<T, ReadoutError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    /// `L x N`.
    pub w_out: DMatrix<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRecord {
    pub lambda: f64,
    pub w_out: MatrixRecord,
}

impl ReadoutModel {
    pub fn outputs(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.w_out.ncols()
    }

    /// `y = W_out x` for every row of `states`.
    pub fn predict(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if states.ncols() != self.nodes() {
            return Err(ReadoutError::Config(format!(
                "states have {} columns, readout expects {}",
                states.ncols(),
                self.nodes()
            )));
        }
        Ok(states * self.w_out.transpose())
    }

    pub fn to_record(&self) -> ReadoutRecord {
        ReadoutRecord {
            lambda: self.lambda,
            w_out: (&self.w_out).into(),
        }
    }

    pub fn from_record(record: ReadoutRecord) -> Result<Self> {
        Ok(Self {
            lambda: record.lambda,
            w_out: record.w_out.try_into()?,
        })
    }
}

/// Running sums `X^T X` and `X^T Y`, so long runs need not keep every state.
#[derive(Debug, Clone)]
pub struct RidgeAccumulator {
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
    rows: usize,
}

impl RidgeAccumulator {
    pub fn new(nodes: usize, outputs: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(nodes, nodes),
            xty: DMatrix::zeros(nodes, outputs),
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn add_rows(&mut self, states: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
        if states.nrows() != targets.nrows()
            || states.ncols() != self.xtx.nrows()
            || targets.ncols() != self.xty.ncols()
        {
            return Err(ReadoutError::Config(format!(
                "block {}x{} / {}x{} does not fit an accumulator for {} nodes and {} outputs",
                states.nrows(),
                states.ncols(),
                targets.nrows(),
                targets.ncols(),
                self.xtx.nrows(),
                self.xty.ncols()
            )));
        }
        self.xtx += states.transpose() * states;
        self.xty += states.transpose() * targets;
        self.rows += states.nrows();
        Ok(())
    }

    /// Solve `(X^T X + lambda I) W_out^T = X^T Y` by Cholesky.
    pub fn solve(&self, lambda: f64) -> Result<ReadoutModel> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ReadoutError::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if self.rows == 0 {
            return Err(ReadoutError::Config("no training rows".into()));
        }
        let n = self.xtx.nrows();
        if self.rows <= n {
            log::warn!("ridge fit with {} rows for {n} nodes", self.rows);
        }
        let gram = &self.xtx + DMatrix::identity(n, n) * lambda;
        let singular = || {
            ReadoutError::Numerical(format!(
                "normal equations are singular at lambda = {lambda}; use lambda > 0"
            ))
        };
        let chol = gram.cholesky().ok_or_else(singular)?;
        // a pivot far below the largest diagonal entry means rank deficiency
        let l = chol.l_dirty();
        let diag_max = self.xtx.diagonal().amax().max(lambda);
        let pivot_min = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if pivot_min <= diag_max * 1e-14 {
            return Err(singular());
        }
        let w_t = chol.solve(&self.xty);
        if w_t.iter().any(|v| !v.is_finite()) {
            return Err(singular());
        }
        Ok(ReadoutModel {
            w_out: w_t.transpose(),
            lambda,
        })
    }
}

/// Ridge regression over the rows after `washout`.
pub fn train_ridge(
    states: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    washout: usize,
) -> Result<ReadoutModel> {
    if states.nrows() != targets.nrows() {
        return Err(ReadoutError::Config(format!(
            "{} state rows but {} target rows",
            states.nrows(),
            targets.nrows()
        )));
    }
    if washout >= states.nrows() {
        return Err(ReadoutError::Config(format!(
            "washout {washout} leaves no rows out of {}",
            states.nrows()
        )));
    }
    let rows = states.nrows() - washout;
    let x = states.rows(washout, rows).into_owned();
    let y = targets.rows(washout, rows).into_owned();
    let mut acc = RidgeAccumulator::new(states.ncols(), targets.ncols());
    acc.add_rows(&x, &y)?;
    acc.solve(lambda)
}

/// Outputs along a teacher-forced run, plus the states that produced them.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub states: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
}

impl TeacherForced {
    pub fn final_state(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }
}

pub fn predict_teacher_forced(
    model: &ReadoutModel,
    weights: &ReservoirWeights,
    initial: &DVector<f64>,
    inputs: &DMatrix<f64>,
    activation: &dyn Activation,
) -> Result<TeacherForced> {
    if model.nodes() != weights.nodes() {
        return Err(ReadoutError::Config(format!(
            "readout has {} columns for {} nodes",
            model.nodes(),
            weights.nodes()
        )));
    }
    let states = reservoir::run(weights, initial, inputs, activation)?;
    let outputs = model.predict(&states)?;
    Ok(TeacherForced { states, outputs })
}

/// Where the free-running loop takes its next input from.
#[derive(Debug, Clone, Copy)]
pub enum Feedback<'a> {
    /// The previous output.
    Closed,
    /// Row `k` of the matrix at step `k >= 1`; for checking the loop plumbing.
    Teacher(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub step: usize,
    /// Offending value; non-finite values are written as `null`.
    #[serde(deserialize_with = "nan_if_null")]
    pub value: f64,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone)]
pub struct FreeRun {
    /// One row per completed step; shorter than requested if the run diverged.
    pub outputs: DMatrix<f64>,
    pub final_state: DVector<f64>,
    pub diverged: Option<DivergenceReport>,
}

/// Autonomous generation. Step `k` feeds `seed_input` (k = 0) or the output
/// of step `k - 1`, advances the reservoir and reads out `y(k)`.
pub fn predict_free_running(
    model: &ReadoutModel,
    weights: &ReservoirWeights,
    initial: &DVector<f64>,
    seed_input: &DVector<f64>,
    n_steps: usize,
    activation: &dyn Activation,
    feedback: Feedback<'_>,
) -> Result<FreeRun> {
    if model.outputs() != weights.inputs() {
        return Err(ReadoutError::Config(format!(
            "free running needs as many outputs ({}) as inputs ({})",
            model.outputs(),
            weights.inputs()
        )));
    }
    if model.nodes() != weights.nodes() || seed_input.len() != weights.inputs() {
        return Err(ReadoutError::Config("readout, reservoir and seed input disagree".into()));
    }
    if let Feedback::Teacher(t) = feedback {
        if t.nrows() < n_steps || t.ncols() != weights.inputs() {
            return Err(ReadoutError::Config("teacher signal too short or too wide".into()));
        }
    }
    let mut outputs: Vec<DVector<f64>> = Vec::with_capacity(n_steps);
    let mut state = initial.clone();
    let mut input = seed_input.clone();
    let mut diverged = None;
    for k in 0..n_steps {
        if k > 0 {
            input = match feedback {
                Feedback::Closed => outputs[k - 1].clone(),
                Feedback::Teacher(t) => t.row(k).transpose(),
            };
        }
        state = match reservoir::step(weights, &state, &input, activation) {
            Ok(s) => s,
            Err(ReservoirError::Divergence { value, .. }) => {
                diverged = Some(DivergenceReport { step: k, value });
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let y = &model.w_out * &state;
        if let Some(bad) = y.iter().find(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            diverged = Some(DivergenceReport { step: k, value: *bad });
            break;
        }
        outputs.push(y);
    }
    if let Some(d) = diverged {
        log::warn!("free run diverged at step {} (|y| = {:e})", d.step, d.value.abs());
    }
    let l = model.outputs();
    let rows = outputs.len();
    Ok(FreeRun {
        outputs: DMatrix::from_fn(rows, l, |i, j| outputs[i][j]),
        final_state: state,
        diverged,
    })
}

/// `sqrt(sum (yhat - y)^2 / (sigma^2 T))` over `T` runs.
pub fn nrmse_84(predictions: &[f64], truths: &[f64], variance: f64) -> f64 {
    assert_eq!(predictions.len(), truths.len());
    assert!(variance > 0.0, "variance must be positive");
    let sq: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sq / (variance * predictions.len() as f64)).sqrt()
}

pub fn rmse(predictions: &[f64], truths: &[f64]) -> f64 {
    assert_eq!(predictions.len(), truths.len());
    assert!(!predictions.is_empty());
    let sq: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sq / predictions.len() as f64).sqrt()
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn classify_threshold(outputs: &[f64]) -> Vec<u8> {
    outputs.iter().map(|&y| u8::from(y >= 0.5)).collect()
}

pub fn accuracy(labels: &[u8], truth: &[u8]) -> f64 {
    assert_eq!(labels.len(), truth.len());
    assert!(!labels.is_empty());
    let hits = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nrmse84: Option<f64>,
    /// Root of the mean squared error at step 84; equals `nrmse84 * sigma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse84: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_variance: Option<f64>,
}

/// Linear autoregressive baseline `y(n) = b + sum_l a_l u(n - l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub lags: Vec<usize>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Lags `0..order`.
pub fn plain_lags(order: usize) -> Vec<usize> {
    (0..order).collect()
}

/// Lags `stride, 2*stride, ..., order*stride`.
pub fn subsampled_lags(order: usize, stride: usize) -> Vec<usize> {
    (1..=order).map(|m| m * stride).collect()
}

impl ArModel {
    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }

    /// Least-squares fit over every `n >= max(lags, skip)`.
    pub fn fit(input: &[f64], target: &[f64], lags: &[usize], skip: usize) -> Result<Self> {
        if lags.is_empty() {
            return Err(ReadoutError::Config("autoregression needs at least one lag".into()));
        }
        if input.len() != target.len() {
            return Err(ReadoutError::Config("input and target lengths differ".into()));
        }
        let start = lags.iter().copied().max().unwrap_or(0).max(skip);
        if input.len() <= start + lags.len() {
            return Err(ReadoutError::Config(format!(
                "series of length {} too short for lags up to {start}",
                input.len()
            )));
        }
        let p = lags.len() + 1;
        let mut acc = RidgeAccumulator::new(p, 1);
        const BLOCK: usize = 4096;
        let mut n = start;
        while n < input.len() {
            let rows = BLOCK.min(input.len() - n);
            let x = DMatrix::from_fn(rows, p, |r, c| {
                if c == 0 {
                    1.0
                } else {
                    input[n + r - lags[c - 1]]
                }
            });
            let y = DMatrix::from_fn(rows, 1, |r, _| target[n + r]);
            acc.add_rows(&x, &y)?;
            n += rows;
        }
        let w = acc.solve(0.0).map_err(|e| match e {
            ReadoutError::Numerical(_) => {
                ReadoutError::Numerical("autoregression design matrix is rank deficient".into())
            }
            other => other,
        })?;
        Ok(Self {
            lags: lags.to_vec(),
            intercept: w.w_out[(0, 0)],
            coefficients: (1..p).map(|c| w.w_out[(0, c)]).collect(),
        })
    }

    /// Predictions for `n = max_lag..input.len()`.
    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        (self.max_lag()..input.len())
            .map(|n| {
                self.intercept
                    + self
                        .lags
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(l, a)| a * input[n - l])
                        .sum::<f64>()
            })
            .collect()
    }
}
