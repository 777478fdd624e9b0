//! Leaky-integrator echo state and band-pass reservoirs.
//!
//! The state `x` holds the dimensionless conductances of the network's
//! memristors. One Euler step of width `delta` reads
//!
//! ```text
//! x(n+1) = (1 - a*delta/c) .* x(n) + (delta/c) .* f(W_in u(n) + W x(n))
//! ```
//!
//! with element-wise operations over the timescale vector `c`. An echo state
//! network has all `c_i` equal; a band-pass network draws them per node.

use crate::matrix_io::{MatrixIoError, MatrixRecord};
use crate::memristor::Activation;
use crate::seed;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ReservoirError {
    #[error("invalid reservoir weights: {0}")]
    InvalidWeights(String),
    #[error("cannot construct reservoir: {0}")]
    Construction(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reservoir state diverged at step {step} (node {node} = {value})")]
    Divergence { step: usize, node: usize, value: f64 },
    #[error(transparent)]
    Matrix(#[from] MatrixIoError),
}

pub type Result<T> = std::result::Result<T, ReservoirError>;

/// Which spectral radius the configured target refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    /// Rescale nonnegative `W` so that `rho((delta/c)|W| + (1 - a*delta/c) I)` hits the target,
    /// then flip signs. Guarantees the echo state property.
    #[default]
    EspMatrix,
    /// Flip signs first, then rescale so that `rho(W)` hits the target.
    Weights,
}

/// Parameters for [`generate_weights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub nodes: usize,
    pub inputs: usize,
    /// Fraction of zero entries in `W`.
    pub sparsity: f64,
    pub target_radius: f64,
    pub leak_rate: f64,
    /// Euler stepsize `delta` (s).
    pub stepsize: f64,
    /// Per-node timescales `c_i` (s).
    pub timescales: Vec<f64>,
    /// `s_in`; input weights are drawn in `[-1, 1]` and multiplied by it.
    pub input_scale: f64,
    /// Probability that a nonzero entry of `W` has its sign flipped.
    pub sign_flip_fraction: f64,
    pub radius_mode: RadiusMode,
}

/// Fixed matrices and rates of one reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirWeights {
    /// Recurrent weights, `N x N`.
    pub w: DMatrix<f64>,
    /// Input weights including `s_in`, `N x K`.
    pub w_in: DMatrix<f64>,
    pub leak_rate: f64,
    pub stepsize: f64,
    pub timescales: DVector<f64>,
    pub input_scale: f64,
    pub sparsity: f64,
}

impl ReservoirWeights {
    pub fn new(
        w: DMatrix<f64>,
        w_in: DMatrix<f64>,
        leak_rate: f64,
        stepsize: f64,
        timescales: DVector<f64>,
    ) -> Result<Self> {
        let sparsity = if w.is_empty() {
            0.0
        } else {
            w.iter().filter(|v| **v == 0.0).count() as f64 / w.len() as f64
        };
        let weights = Self {
            w,
            w_in,
            leak_rate,
            stepsize,
            timescales,
            input_scale: 1.0,
            sparsity,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn nodes(&self) -> usize {
        self.w.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w.nrows();
        if n == 0 || self.w.ncols() != n {
            return Err(ReservoirError::InvalidWeights(format!(
                "W must be square and nonempty, got {}x{}",
                self.w.nrows(),
                self.w.ncols()
            )));
        }
        if self.w_in.nrows() != n || self.w_in.ncols() == 0 {
            return Err(ReservoirError::InvalidWeights(format!(
                "W_in must be {n}xK, got {}x{}",
                self.w_in.nrows(),
                self.w_in.ncols()
            )));
        }
        if self.timescales.len() != n {
            return Err(ReservoirError::InvalidWeights(format!(
                "{} timescales for {n} nodes",
                self.timescales.len()
            )));
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            return Err(ReservoirError::InvalidWeights(format!(
                "leak rate must lie in (0, 1], got {}",
                self.leak_rate
            )));
        }
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(ReservoirError::InvalidWeights(format!(
                "stepsize must be positive, got {}",
                self.stepsize
            )));
        }
        for (i, &c) in self.timescales.iter().enumerate() {
            if !(c > 0.0 && c.is_finite()) {
                return Err(ReservoirError::InvalidWeights(format!(
                    "timescale c[{i}] = {c} must be positive"
                )));
            }
            if self.leak_rate * self.stepsize / c > 1.0 {
                return Err(ReservoirError::InvalidWeights(format!(
                    "a*delta/c[{i}] = {} exceeds 1",
                    self.leak_rate * self.stepsize / c
                )));
            }
        }
        if self.w.iter().chain(self.w_in.iter()).any(|v| !v.is_finite()) {
            return Err(ReservoirError::InvalidWeights("non-finite weight".into()));
        }
        Ok(())
    }

    /// `delta / c_i` per node.
    pub fn gain(&self) -> DVector<f64> {
        self.timescales.map(|c| self.stepsize / c)
    }

    /// `1 - a*delta/c_i` per node.
    pub fn retention(&self) -> DVector<f64> {
        self.timescales
            .map(|c| 1.0 - self.leak_rate * self.stepsize / c)
    }

    /// Voltage `W_in u + W x` across every memristor.
    pub fn node_voltages(&self, state: &DVector<f64>, input: &DVector<f64>) -> DVector<f64> {
        &self.w_in * input + &self.w * state
    }

    pub fn to_record(&self) -> WeightsRecord {
        WeightsRecord {
            leak_rate: self.leak_rate,
            stepsize: self.stepsize,
            input_scale: self.input_scale,
            sparsity: self.sparsity,
            timescales: self.timescales.iter().copied().collect(),
            w: MatrixRecord::from(&self.w),
            w_in: MatrixRecord::from(&self.w_in),
        }
    }

    pub fn from_record(record: WeightsRecord) -> Result<Self> {
        let weights = Self {
            w: record.w.try_into()?,
            w_in: record.w_in.try_into()?,
            leak_rate: record.leak_rate,
            stepsize: record.stepsize,
            timescales: DVector::from_vec(record.timescales),
            input_scale: record.input_scale,
            sparsity: record.sparsity,
        };
        weights.validate()?;
        Ok(weights)
    }
}

/// Serialized layout of [`ReservoirWeights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsRecord {
    pub leak_rate: f64,
    pub stepsize: f64,
    pub input_scale: f64,
    pub sparsity: f64,
    pub timescales: Vec<f64>,
    pub w: MatrixRecord,
    pub w_in: MatrixRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EspReport {
    pub spectral_radius_m: f64,
    pub satisfied: bool,
}

/// Largest eigenvalue modulus of a square matrix (real Schur decomposition).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .schur()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Rescale a nonnegative `W` so that `rho((delta/c)W + (1 - a*delta/c) I) = target`.
///
/// For nonnegative `W` the Perron root is real, so the shift by the identity
/// adds exactly `1 - a*delta/c` to `(delta/c) rho(W)`.
pub fn rescale_for_esp(
    w: &DMatrix<f64>,
    leak_rate: f64,
    stepsize: f64,
    timescale: f64,
    target: f64,
) -> Result<DMatrix<f64>> {
    if w.iter().any(|v| *v < 0.0) {
        return Err(ReservoirError::Construction(
            "ESP rescaling needs a nonnegative matrix".into(),
        ));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(ReservoirError::Construction(
            "W is all zero after sparsification".into(),
        ));
    }
    let gain = stepsize / timescale;
    let identity = 1.0 - leak_rate * gain;
    if target <= identity {
        return Err(ReservoirError::Construction(format!(
            "target radius {target} is not above the identity contribution 1 - a*delta/c = {identity}"
        )));
    }
    let rho = spectral_radius(w);
    if rho <= f64::EPSILON {
        return Err(ReservoirError::Construction(
            "W is nilpotent (zero spectral radius)".into(),
        ));
    }
    Ok(w * ((target - identity) / (gain * rho)))
}

/// Random reservoir following the nonnegative-rescale-then-flip construction.
pub fn generate_weights(spec: &WeightSpec, seed: u64) -> Result<ReservoirWeights> {
    let n = spec.nodes;
    if n == 0 || spec.inputs == 0 {
        return Err(ReservoirError::Construction(
            "need at least one node and one input".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.sparsity) {
        return Err(ReservoirError::Construction(format!(
            "sparsity must lie in [0, 1), got {}",
            spec.sparsity
        )));
    }
    if !(spec.target_radius > 0.0 && spec.target_radius < 1.0) {
        return Err(ReservoirError::Construction(format!(
            "target radius must lie in (0, 1), got {}",
            spec.target_radius
        )));
    }
    if !(0.0..=1.0).contains(&spec.sign_flip_fraction) {
        return Err(ReservoirError::Construction(format!(
            "sign flip fraction must lie in [0, 1], got {}",
            spec.sign_flip_fraction
        )));
    }
    if spec.timescales.len() != n {
        return Err(ReservoirError::Dimension(format!(
            "{} timescales for {n} nodes",
            spec.timescales.len()
        )));
    }
    let c_min = spec.timescales.iter().copied().fold(f64::INFINITY, f64::min);
    if !(c_min > 0.0) {
        return Err(ReservoirError::Construction(
            "timescales must be positive".into(),
        ));
    }

    let mut rng = seed::rng(seed);
    let nonzero = ((1.0 - spec.sparsity) * (n * n) as f64).round() as usize;
    let mut w = DMatrix::zeros(n, n);
    for flat in index::sample(&mut rng, n * n, nonzero).into_iter() {
        w[(flat / n, flat % n)] = rng.gen::<f64>();
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(ReservoirError::Construction(
            "W is all zero after sparsification".into(),
        ));
    }

    let flip = |w: &mut DMatrix<f64>, rng: &mut rand_chacha::ChaCha8Rng| {
        for v in w.iter_mut() {
            if *v != 0.0 && rng.gen::<f64>() < spec.sign_flip_fraction {
                *v = -*v;
            }
        }
    };
    let w = match spec.radius_mode {
        RadiusMode::EspMatrix => {
            let mut w = rescale_for_esp(
                &w,
                spec.leak_rate,
                spec.stepsize,
                c_min,
                spec.target_radius,
            )?;
            flip(&mut w, &mut rng);
            w
        }
        RadiusMode::Weights => {
            flip(&mut w, &mut rng);
            let rho = spectral_radius(&w);
            if rho <= 1e-12 {
                return Err(ReservoirError::Construction(
                    "signed W has zero spectral radius".into(),
                ));
            }
            w * (spec.target_radius / rho)
        }
    };

    let w_in = DMatrix::from_fn(n, spec.inputs, |_, _| {
        rng.gen_range(-1.0..=1.0) * spec.input_scale
    });
    let weights = ReservoirWeights {
        w,
        w_in,
        leak_rate: spec.leak_rate,
        stepsize: spec.stepsize,
        timescales: DVector::from_column_slice(&spec.timescales),
        input_scale: spec.input_scale,
        sparsity: spec.sparsity,
    };
    weights.validate()?;
    Ok(weights)
}

/// `rho(M)` for `M = diag(delta/c)|W| + diag(1 - a*delta/c)`, by power iteration.
pub fn esp_check(weights: &ReservoirWeights) -> Result<EspReport> {
    const MAX_ITERATIONS: usize = 100_000;
    let n = weights.nodes();
    let gain = weights.gain();
    let retention = weights.retention();
    // Power iteration on M + I: the Perron root of a nonnegative matrix is the
    // only eigenvalue on the spectral circle after the unit shift, so periodic
    // patterns in |W| cannot stall convergence.
    let mut shifted = DMatrix::from_fn(n, n, |i, j| gain[i] * weights.w[(i, j)].abs());
    for i in 0..n {
        shifted[(i, i)] += retention[i] + 1.0;
    }
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = f64::NAN;
    for _ in 0..MAX_ITERATIONS {
        let y = &shifted * &x;
        let norm = y.norm();
        if !norm.is_finite() {
            return Err(ReservoirError::Numerical(
                "power iteration overflowed".into(),
            ));
        }
        let next = norm;
        x = y / norm;
        if (next - estimate).abs() <= 1e-14 * next {
            let rho = next - 1.0;
            return Ok(EspReport {
                spectral_radius_m: rho,
                satisfied: rho < 1.0,
            });
        }
        estimate = next;
    }
    Err(ReservoirError::Numerical(format!(
        "power iteration did not converge in {MAX_ITERATIONS} iterations"
    )))
}

/// One Euler step of the leaky-integrator dynamics.
pub fn step(
    weights: &ReservoirWeights,
    state: &DVector<f64>,
    input: &DVector<f64>,
    activation: &dyn Activation,
) -> Result<DVector<f64>> {
    step_at(weights, state, input, activation, 0)
}

pub(crate) fn step_at(
    weights: &ReservoirWeights,
    state: &DVector<f64>,
    input: &DVector<f64>,
    activation: &dyn Activation,
    step_index: usize,
) -> Result<DVector<f64>> {
    check_dims(weights, state, input)?;
    let voltages = weights.node_voltages(state, input);
    let mut next = DVector::zeros(state.len());
    for i in 0..state.len() {
        let c = weights.timescales[i];
        let gain = weights.stepsize / c;
        let retention = 1.0 - weights.leak_rate * gain;
        let value = retention * state[i] + gain * activation.activate(voltages[i]);
        if !value.is_finite() {
            return Err(ReservoirError::Divergence {
                step: step_index,
                node: i,
                value,
            });
        }
        next[i] = value;
    }
    Ok(next)
}

fn check_dims(weights: &ReservoirWeights, state: &DVector<f64>, input: &DVector<f64>) -> Result<()> {
    if state.len() != weights.nodes() {
        return Err(ReservoirError::Dimension(format!(
            "state has {} entries for {} nodes",
            state.len(),
            weights.nodes()
        )));
    }
    if input.len() != weights.inputs() {
        return Err(ReservoirError::Dimension(format!(
            "input has {} entries, W_in expects {}",
            input.len(),
            weights.inputs()
        )));
    }
    if input.iter().any(|u| !u.is_finite()) {
        return Err(ReservoirError::Dimension("input is not finite".into()));
    }
    Ok(())
}

/// Drive the reservoir with `inputs` (one row per step).
///
/// Row `n` of the returned history is the state after consuming input row `n`.
pub fn run(
    weights: &ReservoirWeights,
    initial: &DVector<f64>,
    inputs: &DMatrix<f64>,
    activation: &dyn Activation,
) -> Result<DMatrix<f64>> {
    if inputs.nrows() == 0 {
        return Err(ReservoirError::Dimension("no inputs".into()));
    }
    let mut history = DMatrix::zeros(inputs.nrows(), weights.nodes());
    let mut state = initial.clone();
    for n in 0..inputs.nrows() {
        let u = inputs.row(n).transpose();
        state = step_at(weights, &state, &u, activation, n)?;
        history.set_row(n, &state.transpose());
    }
    Ok(history)
}

/// Band-pass timescales `c_i = max(mu/5, C_i)` with `C_i ~ N(mu, sigma^2)`.
pub fn sample_bpn_timescales(nodes: usize, mean: f64, std_dev: f64, seed: u64) -> Result<Vec<f64>> {
    if !(mean > 0.0) || !(std_dev >= 0.0) {
        return Err(ReservoirError::Construction(format!(
            "timescale distribution needs mean > 0 and std >= 0, got ({mean}, {std_dev})"
        )));
    }
    let normal = Normal::new(mean, std_dev)
        .map_err(|e| ReservoirError::Construction(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let floor = mean / 5.0;
    Ok((0..nodes)
        .map(|_| normal.sample(&mut rng).max(floor))
        .collect())
}
