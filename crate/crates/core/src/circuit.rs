//! Physical memristor circuit.
//!
//! Every node is a memristor in parallel with an ohmic resistor whose
//! conductance equals the memristor's equilibrium conductance `g_0`. The
//! terminals convert the measured currents of neighbouring pairs into the
//! next tip and base voltages:
//!
//! ```text
//! V_t,i = sum_{W_ij > 0}  W_ij  (I_j / I_j0 - 1) / a + sum_{W_in,ij > 0}  W_in,ij  u_j
//! V_b,i = sum_{W_ij < 0} |W_ij| (I_j / I_j0 - 1) / a + sum_{W_in,ij < 0} |W_in,ij| u_j
//! ```
//!
//! Since `I_j / I_j0 = g_j / g_j0`, the voltage `V_t - V_b` equals
//! `W x + W_in u` with `x = (g - g_0) / (a g_0)`, and the Euler-integrated
//! conductances reproduce the leaky-integrator reservoir with `c = a * tau`.

use crate::memristor::{
    length_from_timescale, Activation, ChannelParams, ConductanceState, MemristorError,
};
use crate::reservoir::ReservoirWeights;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Below this |V| (volts) the current ratio `I / I_0` is `0/0`-like and the
/// measured mode falls back to the conductance ratio.
pub const CURRENT_GUARD: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CircuitError {
    #[error("circuit input out of domain: {0}")]
    Domain(String),
    #[error("circuit configuration: {0}")]
    Config(String),
    #[error("memristor {node} at step {step}: {source}")]
    Memristor {
        node: usize,
        step: usize,
        #[source]
        source: MemristorError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CircuitError>;

/// How the terminals obtain `I_j / I_j0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VoltageMode {
    /// Conductance ratio `g_j / g_j0` read from the simulation state.
    #[default]
    Exact,
    /// Ratio of the memristor and resistor currents under the voltage
    /// currently applied; falls back to `Exact` when `|V_j| < CURRENT_GUARD`.
    Measured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitState {
    /// Memristor conductances (S).
    pub g: DVector<f64>,
    /// Voltage across each memristor during the last step (V).
    pub v: DVector<f64>,
    /// Memristor currents during the last step, `g * V` with the conductance before the update (A).
    pub i: DVector<f64>,
    /// Parallel resistor currents during the last step, `g_0 * V` (A).
    pub i0: DVector<f64>,
    pub v_tip: DVector<f64>,
    pub v_base: DVector<f64>,
}

impl CircuitState {
    pub fn equilibrium(g0: &DVector<f64>) -> Self {
        let n = g0.len();
        Self {
            g: g0.clone(),
            v: DVector::zeros(n),
            i: DVector::zeros(n),
            i0: DVector::zeros(n),
            v_tip: DVector::zeros(n),
            v_base: DVector::zeros(n),
        }
    }
}

/// Terminal voltages `(V_t, V_b)` from the local current-to-voltage rule.
///
/// `applied` is the voltage currently across every memristor; it is only
/// consulted in [`VoltageMode::Measured`].
pub fn terminal_voltages(
    g: &DVector<f64>,
    g0: &DVector<f64>,
    weights: &ReservoirWeights,
    input: &DVector<f64>,
    mode: VoltageMode,
    applied: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = weights.nodes();
    if g.len() != n || g0.len() != n || input.len() != weights.inputs() {
        return Err(CircuitError::Config(format!(
            "expected {n} conductances and {} inputs",
            weights.inputs()
        )));
    }
    if g.iter().chain(g0.iter()).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CircuitError::Domain("conductances must be positive".into()));
    }
    if input.iter().any(|u| !u.is_finite()) {
        return Err(CircuitError::Domain("input is not finite".into()));
    }
    let a = weights.leak_rate;
    let ratio: Vec<f64> = (0..n)
        .map(|j| {
            let exact = g[j] / g0[j];
            let relative = match (mode, applied) {
                (VoltageMode::Measured, Some(v)) if v[j].abs() >= CURRENT_GUARD => {
                    let current = g[j] * v[j];
                    let reference = g0[j] * v[j];
                    current / reference
                }
                _ => exact,
            };
            (relative - 1.0) / a
        })
        .collect();

    let mut v_tip = DVector::zeros(n);
    let mut v_base = DVector::zeros(n);
    for i in 0..n {
        let (mut tip, mut base) = (0.0, 0.0);
        for j in 0..n {
            let w = weights.w[(i, j)];
            if w > 0.0 {
                tip += w * ratio[j];
            } else if w < 0.0 {
                base += -w * ratio[j];
            }
        }
        for k in 0..input.len() {
            let w = weights.w_in[(i, k)];
            if w > 0.0 {
                tip += w * input[k];
            } else if w < 0.0 {
                base += -w * input[k];
            }
        }
        v_tip[i] = tip;
        v_base[i] = base;
    }
    Ok((v_tip, v_base))
}

/// A network of memristor/resistor pairs wired according to `weights`.
pub struct Circuit<'a> {
    weights: &'a ReservoirWeights,
    channels: Vec<ChannelParams>,
    g0: DVector<f64>,
    activation: &'a dyn Activation,
    mode: VoltageMode,
}

impl<'a> Circuit<'a> {
    /// Builds one channel per node from `template`, choosing each length so
    /// that `a * tau_i` equals the reservoir timescale `c_i`.
    ///
    /// `activation` is the dimensionless steady-state conductance, which does
    /// not depend on the channel length.
    pub fn from_weights(
        weights: &'a ReservoirWeights,
        template: &ChannelParams,
        activation: &'a dyn Activation,
        mode: VoltageMode,
    ) -> Result<Self> {
        let channels = weights
            .timescales
            .iter()
            .enumerate()
            .map(|(node, &c)| {
                let tau = c / weights.leak_rate;
                template
                    .with_length(length_from_timescale(tau, template.diffusion))
                    .map_err(|source| CircuitError::Memristor {
                        node,
                        step: 0,
                        source,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, channels, activation, mode)
    }

    pub fn new(
        weights: &'a ReservoirWeights,
        channels: Vec<ChannelParams>,
        activation: &'a dyn Activation,
        mode: VoltageMode,
    ) -> Result<Self> {
        if channels.len() != weights.nodes() {
            return Err(CircuitError::Config(format!(
                "{} channels for {} nodes",
                channels.len(),
                weights.nodes()
            )));
        }
        let coarse = channels
            .iter()
            .filter(|c| weights.stepsize > 0.5 * c.timescale())
            .count();
        if coarse > 0 {
            log::warn!(
                "stepsize {} s exceeds half the memory time of {coarse} channel(s)",
                weights.stepsize
            );
        }
        let g0 = DVector::from_iterator(
            channels.len(),
            channels.iter().map(ChannelParams::equilibrium_conductance),
        );
        Ok(Self {
            weights,
            channels,
            g0,
            activation,
            mode,
        })
    }

    pub fn channels(&self) -> &[ChannelParams] {
        &self.channels
    }

    pub fn equilibrium_conductances(&self) -> &DVector<f64> {
        &self.g0
    }

    pub fn memory_times(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(ChannelParams::timescale),
        )
    }

    pub fn equilibrium_state(&self) -> CircuitState {
        CircuitState::equilibrium(&self.g0)
    }

    /// Circuit state whose dimensionless conductances equal `x`.
    pub fn state_from_dimensionless(&self, x: &DVector<f64>) -> CircuitState {
        let mut state = self.equilibrium_state();
        let a = self.weights.leak_rate;
        state.g = self.g0.component_mul(&x.map(|v| 1.0 + a * v));
        state
    }

    /// `(g - g_0) / (a g_0)` per node.
    pub fn dimensionless(&self, state: &CircuitState) -> DVector<f64> {
        let a = self.weights.leak_rate;
        (&state.g - &self.g0).component_div(&self.g0) / a
    }

    /// Update terminal voltages, then Euler-advance every conductance.
    pub fn step(&self, state: &CircuitState, input: &DVector<f64>, step: usize) -> Result<CircuitState> {
        let (v_tip, v_base) = terminal_voltages(
            &state.g,
            &self.g0,
            self.weights,
            input,
            self.mode,
            Some(&state.v),
        )?;
        let v = &v_tip - &v_base;
        let i = state.g.component_mul(&v);
        let i0 = self.g0.component_mul(&v);
        let mut g = DVector::zeros(state.g.len());
        for (node, channel) in self.channels.iter().enumerate() {
            let memristor = ConductanceState {
                g: state.g[node],
                g0: self.g0[node],
                tau: channel.timescale(),
            };
            g[node] = memristor
                .step(v[node], self.weights.stepsize, self.activation)
                .map_err(|source| CircuitError::Memristor { node, step, source })?
                .g;
        }
        Ok(CircuitState {
            g,
            v,
            i,
            i0,
            v_tip,
            v_base,
        })
    }

    /// Run over input rows, returning every post-step state.
    pub fn run(&self, initial: &CircuitState, inputs: &DMatrix<f64>) -> Result<Vec<CircuitState>> {
        let mut states = Vec::with_capacity(inputs.nrows());
        let mut state = initial.clone();
        for n in 0..inputs.nrows() {
            state = self.step(&state, &inputs.row(n).transpose(), n)?;
            states.push(state.clone());
        }
        Ok(states)
    }
}

/// Write `(step, node, voltage_v, conductance_s, current_a)` rows for the
/// selected nodes. The conductance is the one the current flowed through.
pub fn write_trace_csv(
    initial: &CircuitState,
    states: &[CircuitState],
    nodes: &[usize],
    out: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "node", "voltage_v", "conductance_s", "current_a"])?;
    let mut previous = initial;
    for (step, state) in states.iter().enumerate() {
        for &node in nodes {
            if node >= state.g.len() {
                return Err(CircuitError::Config(format!("no node {node} in trace")));
            }
            w.write_record([
                step.to_string(),
                node.to_string(),
                state.v[node].to_string(),
                previous.g[node].to_string(),
                state.i[node].to_string(),
            ])?;
        }
        previous = state;
    }
    w.flush()?;
    Ok(())
}

/// Cylindrical channel converting a pressure drop into a streaming current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureChannelParams {
    /// Radius (m).
    pub radius: f64,
    /// Length (m).
    pub length: f64,
    /// Surface potential (V).
    pub surface_potential: f64,
    /// Electric permittivity (F/m).
    pub permittivity: f64,
    /// Shear viscosity (Pa s).
    pub viscosity: f64,
}

impl PressureChannelParams {
    /// 25 um radius, 200 um long, -40 mV, water.
    pub fn reference() -> Self {
        Self {
            radius: 25e-6,
            length: 200e-6,
            surface_potential: -40e-3,
            permittivity: 0.71e-9,
            viscosity: 1.01e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("radius", self.radius),
            ("length", self.length),
            ("permittivity", self.permittivity),
            ("viscosity", self.viscosity),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CircuitError::Config(format!(
                    "pressure channel {name} must be positive, got {v}"
                )));
            }
        }
        if !self.surface_potential.is_finite() {
            return Err(CircuitError::Config("surface potential must be finite".into()));
        }
        Ok(())
    }
}

impl Default for PressureChannelParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Streaming current `I_p = pi R^2 (eps psi_0 / eta) dp / L` (A) for a pressure drop in Pa.
pub fn attach_pressure_input(channel: &PressureChannelParams, pressure_drop: f64) -> f64 {
    PI * channel.radius * channel.radius * channel.permittivity * channel.surface_potential
        / channel.viscosity
        * pressure_drop
        / channel.length
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memristor::{ActivationProfile, Tanh};
    use crate::reservoir::{self, generate_weights, RadiusMode, WeightSpec};

    fn weights(n: usize, seed: u64) -> ReservoirWeights {
        generate_weights(
            &WeightSpec {
                nodes: n,
                inputs: 2,
                sparsity: 0.3,
                target_radius: 0.9,
                leak_rate: 0.8,
                stepsize: 0.5,
                timescales: vec![1.5; n],
                input_scale: 0.6,
                sign_flip_fraction: 0.5,
                radius_mode: RadiusMode::EspMatrix,
            },
            seed,
        )
        .unwrap()
    }

    fn g0(n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| 1e-13 * (1.0 + i as f64))
    }

    #[test]
    fn equilibrium_gives_zero_voltage() {
        let w = weights(5, 1);
        let g0 = g0(5);
        let (t, b) =
            terminal_voltages(&g0, &g0, &w, &DVector::zeros(2), VoltageMode::Exact, None).unwrap();
        assert!(t.iter().chain(b.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn voltage_difference_is_matrix_product() {
        let w = weights(6, 2);
        let g0 = g0(6);
        let x = DVector::from_fn(6, |i, _| (i as f64 - 2.5) * 0.3);
        let g = g0.component_mul(&x.map(|v| 1.0 + w.leak_rate * v));
        let u = DVector::from_vec(vec![0.4, -0.9]);
        let (t, b) = terminal_voltages(&g, &g0, &w, &u, VoltageMode::Exact, None).unwrap();
        let oracle = &w.w * &x + &w.w_in * &u;
        assert!((&t - &b - oracle).amax() < 1e-12);
        assert!(t.iter().chain(b.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn single_positive_weight_contributes_its_value() {
        let mut w = weights(3, 3);
        w.w.fill(0.0);
        w.w_in.fill(0.0);
        w.w[(0, 2)] = 0.37;
        let g0 = g0(3);
        let mut g = g0.clone();
        g[2] = g0[2] * (1.0 + w.leak_rate);
        let (t, b) =
            terminal_voltages(&g, &g0, &w, &DVector::zeros(2), VoltageMode::Exact, None).unwrap();
        assert!((t[0] - 0.37).abs() < 1e-15);
        assert_eq!(b[0], 0.0);

        // flipping the sign moves the contribution to the base terminal
        w.w[(0, 2)] = -0.37;
        let (t2, b2) =
            terminal_voltages(&g, &g0, &w, &DVector::zeros(2), VoltageMode::Exact, None).unwrap();
        assert_eq!(t2[0], 0.0);
        assert!((b2[0] - 0.37).abs() < 1e-15);
        assert!(((t2[0] - b2[0]) + (t[0] - b[0])).abs() < 1e-15);
    }

    #[test]
    fn measured_mode_matches_exact_mode() {
        let w = weights(8, 4);
        let g0 = g0(8);
        let g = DVector::from_fn(8, |i, _| g0[i] * (1.0 + 0.1 * (i as f64).sin()));
        let u = DVector::from_vec(vec![0.2, 0.1]);
        let applied = DVector::from_fn(8, |i, _| 0.05 + 0.1 * i as f64);
        let exact = terminal_voltages(&g, &g0, &w, &u, VoltageMode::Exact, None).unwrap();
        let measured =
            terminal_voltages(&g, &g0, &w, &u, VoltageMode::Measured, Some(&applied)).unwrap();
        assert!((&exact.0 - &measured.0).amax() < 1e-12);
        assert!((&exact.1 - &measured.1).amax() < 1e-12);

        // below the guard the fallback is the exact ratio, bit for bit
        let tiny = DVector::from_element(8, 1e-12);
        let fallback =
            terminal_voltages(&g, &g0, &w, &u, VoltageMode::Measured, Some(&tiny)).unwrap();
        assert_eq!(fallback, exact);
        let none = terminal_voltages(&g, &g0, &w, &u, VoltageMode::Measured, None).unwrap();
        assert_eq!(none, exact);
    }

    #[test]
    fn bad_inputs_rejected() {
        let w = weights(3, 5);
        let g0 = g0(3);
        let nan = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(
            terminal_voltages(&g0, &g0, &w, &nan, VoltageMode::Exact, None),
            Err(CircuitError::Domain(_))
        ));
        let neg = -g0.clone();
        assert!(terminal_voltages(&neg, &g0, &w, &DVector::zeros(2), VoltageMode::Exact, None).is_err());
    }

    #[test]
    fn equilibrium_is_stationary() {
        let w = weights(4, 6);
        let template = ChannelParams::reference(100e-6);
        let profile = ActivationProfile::with_defaults(&template).unwrap();
        let circuit = Circuit::from_weights(&w, &template, &profile, VoltageMode::Exact).unwrap();
        let mut state = circuit.equilibrium_state();
        for n in 0..50 {
            state = circuit.step(&state, &DVector::zeros(2), n).unwrap();
        }
        assert_eq!(&state.g, circuit.equilibrium_conductances());
    }

    #[test]
    fn channel_lengths_realise_timescales() {
        let w = weights(4, 7);
        let template = ChannelParams::reference(100e-6);
        let circuit = Circuit::from_weights(&w, &template, &Tanh, VoltageMode::Exact).unwrap();
        for tau in circuit.memory_times().iter() {
            assert!((w.leak_rate * tau - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn short_trajectory_matches_reservoir() {
        let w = weights(5, 8);
        let template = ChannelParams::reference(100e-6);
        let circuit = Circuit::from_weights(&w, &template, &Tanh, VoltageMode::Measured).unwrap();
        let inputs = DMatrix::from_fn(200, 2, |n, k| ((n * (k + 3)) as f64 * 0.21).sin());
        let states = circuit.run(&circuit.equilibrium_state(), &inputs).unwrap();
        let history = reservoir::run(&w, &DVector::zeros(5), &inputs, &Tanh).unwrap();
        for (n, s) in states.iter().enumerate() {
            let x = circuit.dimensionless(s);
            assert!((x - history.row(n).transpose()).amax() < 1e-10);
            assert_eq!(s.i, {
                let previous = if n == 0 { circuit.equilibrium_state() } else { states[n - 1].clone() };
                previous.g.component_mul(&s.v)
            });
            assert_eq!(s.i0, circuit.equilibrium_conductances().component_mul(&s.v));
            assert_eq!(s.v, &s.v_tip - &s.v_base);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let w = weights(3, 9);
        let template = ChannelParams::reference(100e-6);
        let circuit = Circuit::from_weights(&w, &template, &Tanh, VoltageMode::Exact).unwrap();
        let inputs = DMatrix::from_element(4, 2, 0.3);
        let init = circuit.equilibrium_state();
        let states = circuit.run(&init, &inputs).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&init, &states, &[0, 2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,node,voltage_v,conductance_s,current_a");
        assert_eq!(lines.len(), 1 + 4 * 2);
        assert!(write_trace_csv(&init, &states, &[5], Vec::new()).is_err());
    }

    #[test]
    fn streaming_current() {
        let ch = PressureChannelParams::reference();
        assert_eq!(attach_pressure_input(&ch, 0.0), 0.0);
        // 10 mbar = 1000 Pa
        let i = attach_pressure_input(&ch, 1000.0);
        assert!((i.abs() - 0.2761e-9).abs() < 1e-13, "{i}");
        assert!(i < 0.0);
        assert!(attach_pressure_input(&ch, -1000.0) > 0.0);
        assert_eq!(attach_pressure_input(&ch, 2000.0), 2.0 * i);
    }
}
