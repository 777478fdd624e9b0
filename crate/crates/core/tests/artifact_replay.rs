//! Saved weights and readout are enough to reproduce a run's predictions.

use iontronic_rc::experiment::{preset, run_experiment, RunOptions};
use iontronic_rc::memristor::{ActivationProfile, ChannelSpec};
use iontronic_rc::readout::{
    predict_free_running, predict_teacher_forced, Feedback, ReadoutModel, ReadoutRecord,
};
use iontronic_rc::reservoir::{ReservoirWeights, WeightsRecord};
use iontronic_rc::tasks::{harmonic, HARMONIC_STEPSIZE};
use nalgebra::DVector;
use std::path::Path;

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn harmonic_free_run_replays_from_artifacts() {
    let mut config = preset("harmonic12").unwrap();
    config.run.runs = 1;
    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions {
        output_dir: Some(dir.path().to_path_buf()),
        ventilator_csv: None,
    };
    let report = run_experiment(&config, &options).unwrap();

    let activation = ActivationProfile::with_defaults(&ChannelSpec::reference().to_params().unwrap()).unwrap();
    let test = harmonic(200 + 200, HARMONIC_STEPSIZE, 0).unwrap();
    for net in &report.networks {
        if net.diverged_runs > 0 {
            continue;
        }
        let weights =
            ReservoirWeights::from_record(load::<WeightsRecord>(&dir.path().join(format!("weights_{}.json", net.label))))
                .unwrap();
        let model =
            ReadoutModel::from_record(load::<ReadoutRecord>(&dir.path().join(format!("readout_{}.json", net.label))))
                .unwrap();
        let zero = DVector::zeros(weights.nodes());
        let forced = predict_teacher_forced(&model, &weights, &zero, &test.u.rows(0, 199).into_owned(), &activation)
            .unwrap();
        let free = predict_free_running(
            &model,
            &weights,
            &forced.final_state(),
            &DVector::from_element(1, test.u[(199, 0)]),
            200,
            &activation,
            Feedback::Closed,
        )
        .unwrap();

        let mut reader = csv::Reader::from_path(dir.path().join(format!("trace_{}.csv", net.label))).unwrap();
        let saved: Vec<f64> = reader
            .records()
            .map(|r| r.unwrap())
            .filter(|r| &r[3] == "free")
            .map(|r| r[2].parse().unwrap())
            .collect();
        assert_eq!(saved.len(), 200);
        for (k, y) in saved.iter().enumerate() {
            assert_eq!(*y, free.outputs[(k, 0)], "{} step {k}", net.label);
        }
        let squared: f64 = saved
            .iter()
            .enumerate()
            .map(|(k, y)| (y - test.u[(200 + k, 0)]).powi(2))
            .sum();
        let rmse = (squared / 200.0).sqrt();
        let reported = net.seeds[0].metrics.rmse.unwrap();
        assert!((rmse - reported).abs() <= 1e-12 * reported.max(1.0));
    }
}
