//! The memristor circuit and the leaky-integrator reservoir produce the same
//! trajectory when driven by the same input.

use iontronic_rc::circuit::{Circuit, VoltageMode};
use iontronic_rc::memristor::{Activation, ActivationProfile, ChannelParams, Tanh};
use iontronic_rc::reservoir::{self, generate_weights, sample_bpn_timescales, RadiusMode, WeightSpec};
use iontronic_rc::seed::{derive_seed, rng, Stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const STEPS: usize = 1000;

struct Case {
    seed: u64,
    nodes: usize,
    band_pass: bool,
    mode: VoltageMode,
}

fn cases() -> Vec<Case> {
    (0..20)
        .map(|i| Case {
            seed: 100 + i as u64,
            nodes: [1, 4, 12][i % 3],
            band_pass: i % 2 == 1,
            mode: if i % 4 < 2 { VoltageMode::Exact } else { VoltageMode::Measured },
        })
        .collect()
}

fn weights(case: &Case) -> reservoir::ReservoirWeights {
    let stepsize = 0.1 * std::f64::consts::PI;
    let timescales = if case.band_pass {
        sample_bpn_timescales(case.nodes, 2.79, 9.9, derive_seed(case.seed, Stream::Timescales, 0)).unwrap()
    } else {
        vec![1.87; case.nodes]
    };
    let spec = WeightSpec {
        nodes: case.nodes,
        inputs: 1,
        sparsity: if case.nodes == 1 { 0.0 } else { 0.5 },
        target_radius: 0.8,
        leak_rate: 0.8,
        stepsize,
        timescales,
        input_scale: 0.3,
        sign_flip_fraction: 0.5,
        radius_mode: RadiusMode::Weights,
    };
    generate_weights(&spec, derive_seed(case.seed, Stream::Weights, 0)).unwrap()
}

fn inputs(seed: u64) -> DMatrix<f64> {
    let mut r = rng(derive_seed(seed, Stream::TestSeries, 0));
    DMatrix::from_fn(STEPS, 1, |n, _| {
        let t = n as f64 * 0.1 * std::f64::consts::PI;
        0.5 * (0.2 * t).sin() + 0.3 * (2.2 * t).sin() + r.gen_range(-0.2..0.2)
    })
}

#[test]
fn twenty_seeded_circuits_match_their_reservoirs() {
    let template = ChannelParams::reference(169e-6);
    let physical = ActivationProfile::with_defaults(&template).unwrap();
    for case in cases() {
        let w = weights(&case);
        let activations: [&dyn Activation; 2] = [&Tanh, &physical];
        for act in activations {
            let circuit = Circuit::from_weights(&w, &template, act, case.mode).unwrap();
            let u = inputs(case.seed);
            let states = circuit.run(&circuit.equilibrium_state(), &u).unwrap();
            let history = reservoir::run(&w, &DVector::zeros(case.nodes), &u, act).unwrap();
            let worst = states
                .iter()
                .enumerate()
                .map(|(n, s)| (circuit.dimensionless(s) - history.row(n).transpose()).amax())
                .fold(0.0, f64::max);
            assert!(
                worst <= 1e-10,
                "seed {} nodes {} band_pass {} {:?}: max deviation {worst:e}",
                case.seed,
                case.nodes,
                case.band_pass,
                case.mode
            );
        }
    }
}

#[test]
fn started_off_equilibrium_the_match_still_holds() {
    let template = ChannelParams::reference(169e-6);
    let case = Case {
        seed: 7,
        nodes: 12,
        band_pass: true,
        mode: VoltageMode::Measured,
    };
    let w = weights(&case);
    let x0 = DVector::from_fn(12, |i, _| 0.1 * (i as f64 - 6.0));
    let circuit = Circuit::from_weights(&w, &template, &Tanh, case.mode).unwrap();
    let u = inputs(case.seed);
    let states = circuit.run(&circuit.state_from_dimensionless(&x0), &u).unwrap();
    let history = reservoir::run(&w, &x0, &u, &Tanh).unwrap();
    let last = circuit.dimensionless(states.last().unwrap()) - history.row(STEPS - 1).transpose();
    assert!(last.amax() <= 1e-10);
}
