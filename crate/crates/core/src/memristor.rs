//! Conical-channel volatile memristor physics.
//!
//! A conical microfluidic channel filled with a dilute 1:1 electrolyte has a
//! steady-state conductance `g_inf(V)` that depends sigmoidally on the applied
//! voltage, and relaxes towards it with a single timescale `tau = L^2 / 12D`.
//! The dimensionless deviation `(g_inf(V) - g_0) / g_0` plays the role of the
//! activation function of a leaky-integrator reservoir node.
//!
//! All quantities are stored in SI units. [`ChannelSpec`] accepts the usual
//! laboratory units (nm, mM, mV, um^2/ms) and converts once.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Avogadro constant (1/mol).
pub const AVOGADRO: f64 = 6.022_140_76e23;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Simpson panels used by [`ChannelParams::steady_conductance`].
pub const DEFAULT_PANELS: usize = 1024;
/// Below this `|Pe * R_t / R_b|` the ratio is taken as exactly one.
///
/// The activation has unit slope at the origin, so the jump at the switch is
/// about `1.5e-10` in the ratio; the quadrature is still well conditioned here.
pub const SMALL_PECLET: f64 = 1e-9;
/// Largest exponent argument accepted before reporting a domain error.
pub const MAX_EXPONENT: f64 = 700.0;
/// Largest accepted |V| in volts.
pub const MAX_VOLTAGE: f64 = 10.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MemristorError {
    #[error("invalid channel parameter: {0}")]
    InvalidParams(String),
    #[error("conductance evaluation out of domain at V = {voltage} V (Pe = {peclet}): {reason}")]
    Domain {
        voltage: f64,
        peclet: f64,
        reason: String,
    },
    #[error("activation profile: {0}")]
    Profile(String),
    #[error("conductance integration failed: {0}")]
    Integration(String),
}

pub type Result<T> = std::result::Result<T, MemristorError>;

/// How the channel is wired between the two terminals of its node.
///
/// The conductance formula is written for the voltage of the tip reservoir
/// relative to the base reservoir. For a negatively charged cone that voltage
/// *lowers* the conductance, so the network mounts the channel reversed: the
/// node voltage `V = V_t - V_b` is applied base-to-tip and positive node
/// voltages raise the conductance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mounting {
    /// Node voltage equals the tip-minus-base channel voltage.
    Forward,
    /// Node voltage equals the base-minus-tip channel voltage.
    #[default]
    Reversed,
}

impl Mounting {
    fn sign(self) -> f64 {
        match self {
            Mounting::Forward => 1.0,
            Mounting::Reversed => -1.0,
        }
    }
}

/// Geometry and electrolyte of one conical channel, in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Base radius `R_b` (m).
    pub base_radius: f64,
    /// Tip radius `R_t` (m).
    pub tip_radius: f64,
    /// Channel length `L` (m).
    pub length: f64,
    /// Surface charge number density `sigma` (1/m^2); the charge density is `e*sigma`.
    pub surface_charge: f64,
    /// Surface potential `psi_0` (V).
    pub surface_potential: f64,
    /// Bulk salt number density `rho_b` (1/m^3).
    pub bulk_concentration: f64,
    /// Ionic diffusion coefficient `D` (m^2/s).
    pub diffusion: f64,
    /// Shear viscosity `eta` (Pa s).
    pub viscosity: f64,
    /// Electric permittivity `epsilon` (F/m).
    pub permittivity: f64,
    /// Thermal energy `k_B T` (J).
    pub thermal_energy: f64,
    pub mounting: Mounting,
}

/// Channel description in laboratory units, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub base_radius_nm: f64,
    pub tip_radius_nm: f64,
    /// Only used when the channel length is not derived from a timescale.
    #[serde(default = "ChannelSpec::default_length")]
    pub length_um: f64,
    pub surface_charge_e_per_nm2: f64,
    pub surface_potential_mv: f64,
    pub concentration_mm: f64,
    pub diffusion_um2_per_ms: f64,
    pub viscosity_mpa_s: f64,
    pub permittivity_nf_per_m: f64,
    pub temperature_k: f64,
    #[serde(default)]
    pub mounting: Mounting,
}

impl ChannelSpec {
    fn default_length() -> f64 {
        169.0
    }

    /// The 200 nm / 50 nm cone in 0.1 mM salt used throughout the experiments.
    pub fn reference() -> Self {
        Self {
            base_radius_nm: 200.0,
            tip_radius_nm: 50.0,
            length_um: 169.0,
            surface_charge_e_per_nm2: -0.0015,
            surface_potential_mv: -10.0,
            concentration_mm: 0.1,
            diffusion_um2_per_ms: 1.0,
            viscosity_mpa_s: 1.01,
            permittivity_nf_per_m: 0.71,
            temperature_k: 293.15,
            mounting: Mounting::Reversed,
        }
    }

    pub fn to_params(&self) -> Result<ChannelParams> {
        let params = ChannelParams {
            base_radius: self.base_radius_nm * 1e-9,
            tip_radius: self.tip_radius_nm * 1e-9,
            length: self.length_um * 1e-6,
            surface_charge: self.surface_charge_e_per_nm2 * 1e18,
            surface_potential: self.surface_potential_mv * 1e-3,
            bulk_concentration: self.concentration_mm * AVOGADRO,
            diffusion: self.diffusion_um2_per_ms * 1e-9,
            viscosity: self.viscosity_mpa_s * 1e-3,
            permittivity: self.permittivity_nf_per_m * 1e-9,
            thermal_energy: BOLTZMANN * self.temperature_k,
            mounting: self.mounting,
        };
        params.validate()?;
        Ok(params)
    }
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self::reference()
    }
}

impl ChannelParams {
    /// Reference cone with the given length in metres.
    pub fn reference(length: f64) -> Self {
        let mut params = ChannelSpec::reference()
            .to_params()
            .expect("reference channel is valid");
        params.length = length;
        params
    }

    pub fn with_length(mut self, length: f64) -> Result<Self> {
        self.length = length;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tip_radius", self.tip_radius),
            ("length", self.length),
            ("bulk_concentration", self.bulk_concentration),
            ("diffusion", self.diffusion),
            ("viscosity", self.viscosity),
            ("permittivity", self.permittivity),
            ("thermal_energy", self.thermal_energy),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(MemristorError::InvalidParams(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if !(self.base_radius.is_finite() && self.base_radius > self.tip_radius) {
            return Err(MemristorError::InvalidParams(format!(
                "base radius {} m must exceed tip radius {} m",
                self.base_radius, self.tip_radius
            )));
        }
        if !self.surface_charge.is_finite() || !self.surface_potential.is_finite() {
            return Err(MemristorError::InvalidParams(
                "surface charge and potential must be finite".into(),
            ));
        }
        if self.surface_potential == 0.0 {
            return Err(MemristorError::InvalidParams(
                "surface potential must be nonzero".into(),
            ));
        }
        if self.length < 10.0 * self.base_radius {
            log::warn!(
                "channel length {} m is not much longer than its base radius {} m",
                self.length,
                self.base_radius
            );
        }
        Ok(())
    }

    pub fn radius_difference(&self) -> f64 {
        self.base_radius - self.tip_radius
    }

    /// Electro-osmotic volumetric flow `Q(V)` (m^3/s) for a tip-minus-base
    /// channel voltage.
    pub fn flow_rate(&self, channel_voltage: f64) -> f64 {
        -PI * self.tip_radius * self.base_radius * self.permittivity * self.surface_potential
            * channel_voltage
            / (self.viscosity * self.length)
    }

    /// Peclet number at the narrow end for a tip-minus-base channel voltage.
    pub fn peclet(&self, channel_voltage: f64) -> f64 {
        self.flow_rate(channel_voltage) * self.length
            / (self.diffusion * PI * self.tip_radius * self.tip_radius)
    }

    /// Equilibrium conductance `g_0 = g_inf(0)` in siemens.
    pub fn equilibrium_conductance(&self) -> f64 {
        let e = ELEMENTARY_CHARGE;
        (PI * self.tip_radius * self.base_radius / self.length)
            * (2.0 * self.bulk_concentration * e * e * self.diffusion / self.thermal_energy)
    }

    /// Prefactor `Delta g` of the concentration-polarisation integral.
    pub fn conductance_amplitude(&self) -> f64 {
        -ELEMENTARY_CHARGE
            * self.radius_difference()
            * self.viscosity
            * self.surface_charge
            * self.diffusion
            / (self.bulk_concentration
                * self.base_radius
                * self.tip_radius
                * self.permittivity
                * self.surface_potential
                * self.thermal_energy)
    }

    /// Relaxation time `tau = L^2 / 12D` of this channel.
    pub fn timescale(&self) -> f64 {
        timescale_from_length(self.length, self.diffusion)
    }

    /// Channel voltage seen by the conductance formula for a node voltage.
    pub fn channel_voltage(&self, node_voltage: f64) -> f64 {
        self.mounting.sign() * node_voltage
    }

    /// `g_inf(V) / g_0` for node voltage `V`, by composite Simpson quadrature.
    pub fn steady_conductance(&self, voltage: f64) -> Result<f64> {
        self.steady_conductance_with_panels(voltage, DEFAULT_PANELS)
    }

    pub fn steady_conductance_with_panels(&self, voltage: f64, panels: usize) -> Result<f64> {
        if !voltage.is_finite() || voltage.abs() > MAX_VOLTAGE {
            return Err(MemristorError::Domain {
                voltage,
                peclet: f64::NAN,
                reason: format!("|V| must not exceed {MAX_VOLTAGE} V"),
            });
        }
        let pe = self.peclet(self.channel_voltage(voltage));
        let ratio = self.tip_radius / self.base_radius;
        let tip_exponent = pe * ratio;
        if tip_exponent.abs() < SMALL_PECLET {
            return Ok(1.0);
        }
        if tip_exponent.abs() > MAX_EXPONENT {
            return Err(MemristorError::Domain {
                voltage,
                peclet: pe,
                reason: format!("exponent {tip_exponent} exceeds {MAX_EXPONENT}"),
            });
        }
        let integrand = PolarisationIntegrand::new(self, pe);
        let integral = simpson(|s| integrand.eval(s), panels.max(2));
        let value = 1.0 + self.conductance_amplitude() * integral;
        if !value.is_finite() || value <= 0.0 {
            return Err(MemristorError::Domain {
                voltage,
                peclet: pe,
                reason: format!("non-physical conductance ratio {value}"),
            });
        }
        Ok(value)
    }

    /// Dimensionless activation `(g_inf(V) - g_0) / g_0`.
    pub fn dimensionless_activation(&self, voltage: f64) -> Result<f64> {
        Ok(self.steady_conductance(voltage)? - 1.0)
    }
}

/// Bracket of the conductance integral as a function of `s = x / L`.
///
/// Exposed so the quadrature can be cross-checked with an independent rule.
#[derive(Debug, Clone, Copy)]
pub struct PolarisationIntegrand {
    tip_over_base: f64,
    relative_taper: f64,
    peclet: f64,
    denominator: f64,
}

impl PolarisationIntegrand {
    pub fn new(params: &ChannelParams, peclet: f64) -> Self {
        let tip_over_base = params.tip_radius / params.base_radius;
        Self {
            tip_over_base,
            relative_taper: params.radius_difference() / params.base_radius,
            peclet,
            denominator: (peclet * tip_over_base).exp_m1(),
        }
    }

    /// Bracket value at `s = x / L` in `[0, 1]`.
    pub fn eval(&self, s: f64) -> f64 {
        // R(x) / R_b
        let radius = 1.0 - s * self.relative_taper;
        let geometric = s * self.tip_over_base / radius;
        let exponent = self.peclet * geometric * self.tip_over_base;
        geometric - exponent.exp_m1() / self.denominator
    }
}

fn simpson(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
    let n = if panels % 2 == 0 { panels } else { panels + 1 };
    let h = 1.0 / n as f64;
    let mut sum = f(0.0) + f(1.0);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * f(i as f64 * h);
    }
    sum * h / 3.0
}

/// Memory time `tau = L^2 / 12D` (s) of a channel of length `L` (m).
pub fn timescale_from_length(length: f64, diffusion: f64) -> f64 {
    length * length / (12.0 * diffusion)
}

/// Channel length (m) that realises the memory time `tau` (s).
pub fn length_from_timescale(timescale: f64, diffusion: f64) -> f64 {
    (12.0 * diffusion * timescale).sqrt()
}

/// Dimensionless activation `f(V)` of a reservoir node.
pub trait Activation: Send + Sync {
    fn activate(&self, voltage: f64) -> f64;
}

/// `tanh`, the textbook echo state network activation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tanh;

impl Activation for Tanh {
    fn activate(&self, voltage: f64) -> f64 {
        voltage.tanh()
    }
}

/// Identity activation; makes the network linear.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Activation for Identity {
    fn activate(&self, voltage: f64) -> f64 {
        voltage
    }
}

/// Direct quadrature of the channel activation; NaN outside the valid domain.
#[derive(Debug, Clone, Copy)]
pub struct DirectActivation(pub ChannelParams);

impl Activation for DirectActivation {
    fn activate(&self, voltage: f64) -> f64 {
        self.0.dimensionless_activation(voltage).unwrap_or(f64::NAN)
    }
}

/// Tabulated channel activation with piecewise-linear interpolation.
///
/// Voltages outside the tabulated interval fall back to direct quadrature.
#[derive(Debug, Clone)]
pub struct ActivationProfile {
    params: ChannelParams,
    v_min: f64,
    spacing: f64,
    values: Vec<f64>,
}

impl ActivationProfile {
    pub const DEFAULT_RANGE: (f64, f64) = (-1.5, 1.5);
    pub const DEFAULT_POINTS: usize = 3001;

    pub fn build(params: &ChannelParams, v_min: f64, v_max: f64, n_points: usize) -> Result<Self> {
        if !(v_min < 0.0 && 0.0 < v_max) {
            return Err(MemristorError::Profile(format!(
                "interval [{v_min}, {v_max}] must contain zero in its interior"
            )));
        }
        if n_points < 64 {
            return Err(MemristorError::Profile(format!(
                "at least 64 grid points required, got {n_points}"
            )));
        }
        let spacing = (v_max - v_min) / (n_points - 1) as f64;
        let values = (0..n_points)
            .map(|i| params.dimensionless_activation(v_min + i as f64 * spacing))
            .collect::<Result<Vec<_>>>()?;
        if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(MemristorError::Profile(format!(
                "tabulated activation decreases between {} V and {} V",
                v_min + i as f64 * spacing,
                v_min + (i + 1) as f64 * spacing
            )));
        }
        Ok(Self {
            params: *params,
            v_min,
            spacing,
            values,
        })
    }

    pub fn with_defaults(params: &ChannelParams) -> Result<Self> {
        let (lo, hi) = Self::DEFAULT_RANGE;
        Self::build(params, lo, hi, Self::DEFAULT_POINTS)
    }

    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| self.node(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn range(&self) -> (f64, f64) {
        (self.v_min, self.node(self.values.len() - 1))
    }

    fn node(&self, i: usize) -> f64 {
        self.v_min + i as f64 * self.spacing
    }

    pub fn eval(&self, voltage: f64) -> f64 {
        let pos = (voltage - self.v_min) / self.spacing;
        let last = self.values.len() - 1;
        if !(pos >= 0.0 && pos <= last as f64) {
            return self
                .params
                .dimensionless_activation(voltage)
                .unwrap_or(f64::NAN);
        }
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            return self.values[nearest as usize];
        }
        let i = (pos.floor() as usize).min(last - 1);
        let frac = pos - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

impl Activation for ActivationProfile {
    fn activate(&self, voltage: f64) -> f64 {
        self.eval(voltage)
    }
}

/// Dimensional conductance of one memristor together with its relaxation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductanceState {
    /// Conductance `g` (S).
    pub g: f64,
    /// Equilibrium conductance `g_0` (S).
    pub g0: f64,
    /// Memory time `tau` (s).
    pub tau: f64,
}

impl ConductanceState {
    pub fn at_equilibrium(params: &ChannelParams) -> Self {
        Self {
            g: params.equilibrium_conductance(),
            g0: params.equilibrium_conductance(),
            tau: params.timescale(),
        }
    }

    /// One explicit Euler step of `dg/dt = (g_inf(V) - g) / tau`.
    pub fn step(&self, voltage: f64, dt: f64, activation: &dyn Activation) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(MemristorError::Integration(format!(
                "stepsize must be positive, got {dt}"
            )));
        }
        if dt > self.tau {
            return Err(MemristorError::Integration(format!(
                "stepsize {dt} s exceeds the memory time {} s",
                self.tau
            )));
        }
        if dt > 0.5 * self.tau {
            log::debug!("stepsize {dt} s is more than half the memory time {} s", self.tau);
        }
        let g_inf = self.g0 * (1.0 + activation.activate(voltage));
        let g = self.g + dt * (g_inf - self.g) / self.tau;
        if !(g.is_finite() && g > 0.0) {
            return Err(MemristorError::Integration(format!(
                "conductance became {g} S at V = {voltage} V"
            )));
        }
        Ok(Self { g, ..*self })
    }
}
