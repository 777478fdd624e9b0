//! Seeded uniform random search over configuration values.
//!
//! Parameters are addressed by JSON pointers into the serialised config,
//! e.g. `/networks/0/reservoir/sparsity`. Trial `i` draws its values from a
//! generator seeded by `(seed, i)` alone.

use super::config::ExperimentConfig;
use super::run::{run_experiment, ExperimentError, RunOptions, RunReport, Table};
use crate::seed::{derive_seed, rng, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub parameters: Vec<SearchParam>,
    pub objective: Objective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParam {
    pub pointer: String,
    pub low: f64,
    pub high: f64,
    /// Sample uniformly in `ln` space.
    #[serde(default)]
    pub log: bool,
    /// Round to the nearest integer.
    #[serde(default)]
    pub integer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub network: String,
    /// Key of the network summary, e.g. `rmse`, `nrmse84` or `accuracy`.
    pub metric: String,
    #[serde(default)]
    pub statistic: Statistic,
    #[serde(default)]
    pub direction: Direction,
}

impl Objective {
    pub fn evaluate(&self, report: &RunReport) -> Option<f64> {
        let stat = report.network(&self.network)?.stat(&self.metric)?;
        Some(match self.statistic {
            Statistic::Mean => stat.mean,
            Statistic::Median => stat.median,
        })
        .filter(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: BTreeMap<String, f64>,
    pub objective: Option<f64>,
    pub diverged_runs: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub objective: Objective,
    pub trials: Vec<TrialRecord>,
    /// Trial indices, best first; failed trials last.
    pub ranking: Vec<usize>,
}

impl SweepReport {
    pub fn best(&self) -> Option<&TrialRecord> {
        self.ranking
            .first()
            .map(|&i| &self.trials[i])
            .filter(|t| t.objective.is_some())
    }
}

impl SearchSpace {
    pub fn validate(&self, config: &ExperimentConfig) -> Result<(), ExperimentError> {
        let bad = |path: String, message: String| {
            Err(ExperimentError::Config(super::config::ConfigError { path, message }))
        };
        if self.parameters.is_empty() {
            return bad("parameters".into(), "search space is empty".into());
        }
        if config.network(&self.objective.network).is_none() {
            return bad(
                "objective.network".into(),
                format!("no network labelled {:?}", self.objective.network),
            );
        }
        let tree = serde_json::to_value(config).expect("config serialises");
        for (i, p) in self.parameters.iter().enumerate() {
            let path = format!("parameters[{i}]");
            if !(p.low.is_finite() && p.high.is_finite() && p.low <= p.high) {
                return bad(path, format!("bounds [{}, {}] are not an interval", p.low, p.high));
            }
            if p.log && p.low <= 0.0 {
                return bad(path, "log sampling needs positive bounds".into());
            }
            match tree.pointer(&p.pointer) {
                Some(Value::Number(_)) | Some(Value::Null) => {}
                Some(_) => return bad(path, format!("{} is not a number", p.pointer)),
                None => {
                    // optional fields absent from the serialised tree may still be set
                    let parent = p.pointer.rsplit_once('/').map(|(head, _)| head).unwrap_or("");
                    if !matches!(tree.pointer(parent), Some(Value::Object(_))) {
                        return bad(path, format!("{} does not address a config field", p.pointer));
                    }
                }
            }
        }
        Ok(())
    }

    /// Values of trial `trial`, in parameter order.
    pub fn sample(&self, seed: u64, trial: usize) -> Vec<f64> {
        let mut rng = rng(derive_seed(seed, Stream::SweepTrial, trial as u64));
        self.parameters
            .iter()
            .map(|p| {
                let u: f64 = rng.gen();
                let v = if p.low == p.high {
                    p.low
                } else if p.log {
                    (p.low.ln() + u * (p.high.ln() - p.low.ln())).exp()
                } else {
                    p.low + u * (p.high - p.low)
                };
                if p.integer {
                    v.round()
                } else {
                    v
                }
            })
            .collect()
    }

    /// `config` with the sampled values written in.
    pub fn apply(&self, config: &ExperimentConfig, values: &[f64]) -> Result<ExperimentConfig, ExperimentError> {
        let mut tree = serde_json::to_value(config).expect("config serialises");
        for (p, &v) in self.parameters.iter().zip(values) {
            let number = if p.integer {
                Value::from(v as i64)
            } else {
                Value::from(v)
            };
            match tree.pointer_mut(&p.pointer) {
                Some(slot) => *slot = number,
                None => {
                    let (parent, key) = p.pointer.rsplit_once('/').unwrap_or(("", &p.pointer));
                    match tree.pointer_mut(parent) {
                        Some(Value::Object(map)) => {
                            map.insert(key.to_string(), number);
                        }
                        _ => {
                            return Err(ExperimentError::Runtime {
                                context: "sweep".into(),
                                message: format!("cannot set {}", p.pointer),
                            })
                        }
                    }
                }
            }
        }
        let sampled: ExperimentConfig = serde_json::from_value(tree).map_err(|e| ExperimentError::Runtime {
            context: "sweep".into(),
            message: e.to_string(),
        })?;
        sampled.validate()?;
        Ok(sampled)
    }
}

/// Run `n_trials` sampled configurations; failed trials are recorded, not fatal.
pub fn sweep(
    config: &ExperimentConfig,
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    options: &RunOptions,
) -> Result<SweepReport, ExperimentError> {
    config.validate()?;
    space.validate(config)?;
    if n_trials == 0 {
        return Err(ExperimentError::Config(super::config::ConfigError {
            path: "trials".into(),
            message: "at least one trial is required".into(),
        }));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let values = space.sample(seed, trial);
        let params = space
            .parameters
            .iter()
            .zip(&values)
            .map(|(p, v)| (p.pointer.clone(), *v))
            .collect();
        let trial_options = RunOptions {
            output_dir: options
                .output_dir
                .as_ref()
                .map(|d| d.join(format!("trial_{trial:04}"))),
            ventilator_csv: options.ventilator_csv.clone(),
        };
        let outcome = space
            .apply(config, &values)
            .and_then(|c| run_experiment(&c, &trial_options));
        let record = match outcome {
            Ok(report) => TrialRecord {
                trial,
                params,
                objective: space.objective.evaluate(&report),
                diverged_runs: Some(report.diverged_runs),
                error: None,
            },
            Err(e) => {
                log::warn!("trial {trial} failed: {e}");
                TrialRecord {
                    trial,
                    params,
                    objective: None,
                    diverged_runs: None,
                    error: Some(e.to_string()),
                }
            }
        };
        trials.push(record);
    }
    let mut ranking: Vec<usize> = (0..trials.len()).collect();
    let direction = space.objective.direction;
    ranking.sort_by(|&a, &b| {
        let key = |i: usize| trials[i].objective;
        match (key(a), key(b)) {
            (Some(x), Some(y)) => {
                let ord = x.total_cmp(&y);
                let ord = if direction == Direction::Maximize { ord.reverse() } else { ord };
                ord.then(a.cmp(&b))
            }
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.cmp(&b),
        }
    });
    let report = SweepReport {
        seed,
        objective: space.objective.clone(),
        trials,
        ranking,
    };
    if let Some(dir) = &options.output_dir {
        write_sweep(dir, space, &report)?;
    }
    Ok(report)
}

fn write_sweep(dir: &Path, space: &SearchSpace, report: &SweepReport) -> Result<(), ExperimentError> {
    let artifact = |e: std::io::Error| ExperimentError::Artifact {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(artifact)?;
    std::fs::write(
        dir.join("sweep.json"),
        serde_json::to_string_pretty(report).expect("sweep report serialises"),
    )
    .map_err(artifact)?;
    let mut header = vec!["rank".to_string(), "trial".to_string(), "objective".to_string()];
    header.extend(space.parameters.iter().map(|p| p.pointer.clone()));
    header.push("error".into());
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for (rank, &i) in report.ranking.iter().enumerate() {
        let t = &report.trials[i];
        let mut row = vec![
            rank.to_string(),
            t.trial.to_string(),
            t.objective.map(|v| v.to_string()).unwrap_or_default(),
        ];
        row.extend(space.parameters.iter().map(|p| t.params[&p.pointer].to_string()));
        row.push(t.error.clone().unwrap_or_default());
        table.rows.push(row);
    }
    table.write(&dir.join("trials.csv"))
}
