//! Columnar CSV for plotting, derived from run artifacts.

use super::config::ExperimentConfig;
use super::run::{ExperimentError, RunReport, Table};
use crate::memristor::{ChannelParams, ChannelSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    /// Mackey-Glass truth and prediction through warm-up and free running.
    Fig2a,
    /// Harmonic truth with every network's prediction.
    Fig2b,
    /// Pressure and streaming current.
    Fig3a,
    /// Valve classification (top) or pressure prediction (bottom).
    Fig3b,
    /// Normalised steady-state conductance next to `tanh`.
    Activation,
}

impl FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig2a" => Ok(Figure::Fig2a),
            "fig2b" => Ok(Figure::Fig2b),
            "fig3a" => Ok(Figure::Fig3a),
            "fig3b" => Ok(Figure::Fig3b),
            "activation" => Ok(Figure::Activation),
            other => Err(format!(
                "unknown figure {other:?}; expected fig2a, fig2b, fig3a, fig3b or activation"
            )),
        }
    }
}

fn missing(path: &Path, what: &str) -> ExperimentError {
    ExperimentError::Artifact {
        path: path.to_path_buf(),
        message: format!("missing {what}; run the matching experiment with traces enabled first"),
    }
}

fn read_table(path: &Path) -> Result<Table, ExperimentError> {
    if !path.exists() {
        return Err(missing(path, "trace"));
    }
    let fail = |e: csv::Error| ExperimentError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(fail)?;
    let header = r.headers().map_err(fail)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    Ok(Table { header, rows })
}

fn read_report(run_dir: &Path) -> Result<RunReport, ExperimentError> {
    let path = run_dir.join("metrics.json");
    let text = std::fs::read_to_string(&path).map_err(|_| missing(&path, "metrics report"))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Artifact {
        path,
        message: e.to_string(),
    })
}

fn columns(table: &Table, names: &[&str], path: &Path) -> Result<Vec<usize>, ExperimentError> {
    names
        .iter()
        .map(|n| {
            table.header.iter().position(|h| h == n).ok_or_else(|| ExperimentError::Artifact {
                path: path.to_path_buf(),
                message: format!("trace has no column {n:?}"),
            })
        })
        .collect()
}

fn project(table: &Table, cols: &[usize], header: &[&str]) -> Table {
    Table {
        header: header.iter().map(|h| h.to_string()).collect(),
        rows: table
            .rows
            .iter()
            .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
            .collect(),
    }
}

fn expect_task(report: &RunReport, tasks: &[&str], run_dir: &Path) -> Result<(), ExperimentError> {
    if tasks.contains(&report.task.as_str()) {
        Ok(())
    } else {
        Err(ExperimentError::Artifact {
            path: run_dir.to_path_buf(),
            message: format!("run is a {} experiment; this figure needs {}", report.task, tasks.join(" or ")),
        })
    }
}

/// `(V, g_inf / g_0 - 1, tanh V)` on a uniform voltage grid.
pub fn activation_table(
    channel: &ChannelParams,
    v_min: f64,
    v_max: f64,
    points: usize,
) -> Result<Table, ExperimentError> {
    if !(v_min < v_max) || points < 2 {
        return Err(ExperimentError::Runtime {
            context: "activation".into(),
            message: "need v_min < v_max and at least two points".into(),
        });
    }
    let mut table = Table {
        header: vec!["voltage_v".into(), "g_inf_normalised".into(), "tanh".into()],
        rows: Vec::with_capacity(points),
    };
    for i in 0..points {
        let v = v_min + (v_max - v_min) * i as f64 / (points - 1) as f64;
        let g = channel
            .dimensionless_activation(v)
            .map_err(|e| ExperimentError::Runtime {
                context: "activation".into(),
                message: e.to_string(),
            })?;
        table.rows.push(vec![v.to_string(), g.to_string(), v.tanh().to_string()]);
    }
    Ok(table)
}

/// Write the CSV files for `which` into `out_dir`, returning their paths.
pub fn emit_plotdata(run_dir: &Path, which: Figure, out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::Artifact {
        path: out_dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut written = Vec::new();
    let mut emit = |name: &str, table: Table| -> Result<(), ExperimentError> {
        let path = out_dir.join(name);
        table.write(&path)?;
        written.push(path);
        Ok(())
    };
    if which == Figure::Activation {
        let config_path = run_dir.join("config.json");
        let spec = match std::fs::read_to_string(&config_path) {
            Ok(text) => {
                serde_json::from_str::<ExperimentConfig>(&text)
                    .map_err(|e| ExperimentError::Artifact {
                        path: config_path.clone(),
                        message: e.to_string(),
                    })?
                    .channel
            }
            Err(_) => ChannelSpec::reference(),
        };
        let channel = spec.to_params().map_err(|e| ExperimentError::Runtime {
            context: "channel".into(),
            message: e.to_string(),
        })?;
        emit("activation.csv", activation_table(&channel, -6.0, 6.0, 241)?)?;
        return Ok(written);
    }
    let report = read_report(run_dir)?;
    let first = report.networks.first().map(|n| n.label.clone()).unwrap_or_default();
    let trace_path = |label: &str| run_dir.join(format!("trace_{label}.csv"));
    match which {
        Figure::Fig2a => {
            expect_task(&report, &["mackey_glass"], run_dir)?;
            let path = trace_path(&first);
            let trace = read_table(&path)?;
            let cols = columns(&trace, &["t", "truth", "prediction", "phase"], &path)?;
            emit("fig2a.csv", project(&trace, &cols, &["t", "truth", "prediction", "phase"]))?;
        }
        Figure::Fig2b => {
            expect_task(&report, &["harmonic"], run_dir)?;
            let mut header = vec!["t".to_string(), "truth".to_string()];
            let mut traces = Vec::new();
            for net in &report.networks {
                let path = trace_path(&net.label);
                let trace = read_table(&path)?;
                let cols = columns(&trace, &["t", "truth", "prediction", "phase"], &path)?;
                header.push(format!("prediction_{}", net.label));
                traces.push(project(&trace, &cols, &["t", "truth", "prediction", "phase"]));
            }
            header.push("phase".into());
            // a diverged free run is shorter; the longest trace sets the time axis
            let longest = traces.iter().max_by_key(|t| t.rows.len()).cloned().unwrap_or_default();
            let rows = longest
                .rows
                .iter()
                .enumerate()
                .map(|(i, base)| {
                    let mut row = vec![base[0].clone(), base[1].clone()];
                    row.extend(traces.iter().map(|t| t.rows.get(i).map(|r| r[2].clone()).unwrap_or_default()));
                    row.push(base[3].clone());
                    row
                })
                .collect();
            emit("fig2b.csv", Table { header, rows })?;
        }
        Figure::Fig3a => {
            expect_task(&report, &["ventilator_classify", "ventilator_predict"], run_dir)?;
            let path = trace_path(&first);
            let trace = read_table(&path)?;
            let names = ["t", "pressure_mbar", "streaming_current_na"];
            let cols = columns(&trace, &names, &path)?;
            emit("fig3a.csv", project(&trace, &cols, &names))?;
        }
        Figure::Fig3b => {
            expect_task(&report, &["ventilator_classify", "ventilator_predict"], run_dir)?;
            let path = trace_path(&first);
            let trace = read_table(&path)?;
            if report.task == "ventilator_classify" {
                let cols = columns(&trace, &["t", "pressure_mbar", "truth", "prediction"], &path)?;
                let rows = trace
                    .rows
                    .iter()
                    .map(|r| {
                        let y: f64 = r[cols[3]].parse().unwrap_or(f64::NAN);
                        vec![
                            r[cols[0]].clone(),
                            r[cols[1]].clone(),
                            r[cols[2]].clone(),
                            u8::from(y >= 0.5).to_string(),
                            r[cols[3]].clone(),
                        ]
                    })
                    .collect();
                let header = ["t", "pressure_mbar", "valve_truth", "valve_prediction", "readout"];
                emit(
                    "fig3b_top.csv",
                    Table {
                        header: header.iter().map(|h| h.to_string()).collect(),
                        rows,
                    },
                )?;
            } else {
                let cols = columns(&trace, &["t", "truth", "prediction"], &path)?;
                emit(
                    "fig3b_bottom.csv",
                    project(&trace, &cols, &["t", "truth_mbar", "prediction_mbar"]),
                )?;
            }
        }
        Figure::Activation => unreachable!("handled above"),
    }
    Ok(written)
}
