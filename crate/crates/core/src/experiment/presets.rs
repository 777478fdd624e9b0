//! Bundled experiment configurations.

use super::config::*;
use crate::memristor::ChannelSpec;
use crate::reservoir::RadiusMode;
use crate::tasks::{VentilatorSchema, HARMONIC_STEPSIZE, VENTILATOR_STEPSIZE};

pub const PRESET_NAMES: [&str; 4] = ["mg400", "harmonic12", "vent-classify", "vent-predict"];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    match name {
        "mg400" => Some(mg400()),
        "harmonic12" => Some(harmonic12()),
        "vent-classify" => Some(vent_classify()),
        "vent-predict" => Some(vent_predict()),
        _ => None,
    }
}

fn base(name: &str, task: TaskConfig, networks: Vec<NetworkConfig>, runs: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        task,
        networks,
        channel: ChannelSpec::reference(),
        activation: ActivationKind::Physical,
        run: RunConfig {
            master_seed: 2024,
            runs,
        },
        output: OutputConfig::default(),
    }
}

pub fn mg400() -> ExperimentConfig {
    let esn = NetworkConfig {
        label: "esn".into(),
        reservoir: ReservoirConfig {
            nodes: 400,
            inputs: 1,
            outputs: 1,
            sparsity: 0.75,
            target_radius: 0.95,
            leak_rate: 0.95,
            stepsize_s: 1.0,
            timescale_s: Some(2.27),
            timescale_mean_s: None,
            timescale_std_s: None,
            input_scale_v: 0.45,
            sign_flip_fraction: 0.5,
            radius_mode: RadiusMode::Weights,
        },
        training: TrainingConfig {
            lambda: 1e-8,
            washout_steps: 100,
        },
    };
    base(
        "mg400",
        TaskConfig::MackeyGlass {
            train_steps: 3000,
            test_warmup_steps: 1000,
            free_run_steps: 100,
            horizon_steps: 84,
        },
        vec![esn],
        20,
    )
}

pub fn harmonic12() -> ExperimentConfig {
    let esn = NetworkConfig {
        label: "esn".into(),
        reservoir: ReservoirConfig {
            nodes: 12,
            inputs: 1,
            outputs: 1,
            sparsity: 0.67,
            target_radius: 0.32,
            leak_rate: 0.44,
            stepsize_s: HARMONIC_STEPSIZE,
            timescale_s: Some(1.87),
            timescale_mean_s: None,
            timescale_std_s: None,
            input_scale_v: 0.26,
            sign_flip_fraction: 0.5,
            radius_mode: RadiusMode::Weights,
        },
        training: TrainingConfig {
            lambda: 4e-5,
            washout_steps: 100,
        },
    };
    let bpn = NetworkConfig {
        label: "bpn".into(),
        reservoir: ReservoirConfig {
            nodes: 12,
            inputs: 1,
            outputs: 1,
            sparsity: 0.35,
            target_radius: 0.76,
            leak_rate: 0.86,
            stepsize_s: HARMONIC_STEPSIZE,
            timescale_s: None,
            timescale_mean_s: Some(2.79),
            timescale_std_s: Some(9.9),
            input_scale_v: 0.21,
            sign_flip_fraction: 0.5,
            radius_mode: RadiusMode::Weights,
        },
        training: TrainingConfig {
            lambda: 1e-6,
            washout_steps: 100,
        },
    };
    base(
        "harmonic12",
        TaskConfig::Harmonic {
            stepsize_s: HARMONIC_STEPSIZE,
            train_steps: 800,
            test_warmup_steps: 200,
            free_run_steps: 200,
        },
        vec![esn, bpn],
        100,
    )
}

fn vent_network(nodes: usize) -> NetworkConfig {
    NetworkConfig {
        label: "bpn".into(),
        reservoir: ReservoirConfig {
            nodes,
            inputs: 1,
            outputs: 1,
            sparsity: 0.017,
            target_radius: 0.9,
            leak_rate: 0.98,
            stepsize_s: VENTILATOR_STEPSIZE,
            timescale_s: None,
            timescale_mean_s: Some(0.27),
            timescale_std_s: Some(1.89),
            // the streaming current already carries the input scaling
            input_scale_v: 1.0,
            sign_flip_fraction: 0.5,
            radius_mode: RadiusMode::Weights,
        },
        training: TrainingConfig {
            lambda: 1.69e-6,
            washout_steps: 1000,
        },
    }
}

fn vent_task(horizon_steps: usize, baselines: Vec<BaselineConfig>) -> VentilatorTask {
    VentilatorTask {
        data_path: None,
        schema: VentilatorSchema::default(),
        pressure_channel: PressureChannelSpec::default(),
        input_scale_v_per_na: 0.11,
        horizon_steps,
        baselines,
    }
}

pub fn vent_classify() -> ExperimentConfig {
    let baselines = vec![
        BaselineConfig {
            label: "ar7".into(),
            order: 7,
            stride: None,
        },
        BaselineConfig {
            label: "ar7_stride8".into(),
            order: 7,
            stride: Some(8),
        },
    ];
    base(
        "vent-classify",
        TaskConfig::VentilatorClassify(vent_task(0, baselines)),
        vec![vent_network(7)],
        20,
    )
}

pub fn vent_predict() -> ExperimentConfig {
    let baselines = vec![BaselineConfig {
        label: "ar200".into(),
        order: 200,
        stride: None,
    }];
    base(
        "vent-predict",
        TaskConfig::VentilatorPredict(vent_task(3, baselines)),
        vec![vent_network(200)],
        20,
    )
}
