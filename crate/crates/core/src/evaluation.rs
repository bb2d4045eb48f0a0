//! Comparison of trained networks against the closed-form solutions.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::forward_rows;
use crate::network::{InputEncoding, NetworkParams};
use crate::par::{self, Execution, KahanSum};
use crate::physics::{PhysicsError, ProblemSpec};
use crate::sampling::SampleSet;
use crate::training::{Scenario, TrainConfig, TrainError, TrainRecord, TrainState, Trainer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fields differ in length: {0} vs {1}")]
    Misaligned(usize, usize),
    #[error("empty field")]
    Empty,
    #[error("exact field has zero norm; relative error undefined")]
    ZeroNorm,
    #[error("grid needs at least 2 points per axis, got {0}×{1}")]
    Grid(usize, usize),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Tensor-product grid over `[0,1]²` including the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub nx: usize,
    pub ny: usize,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { nx: 101, ny: 101 }
    }
}

impl EvalGrid {
    pub fn new(nx: usize, ny: usize) -> Result<Self, EvalError> {
        if nx < 2 || ny < 2 {
            return Err(EvalError::Grid(nx, ny));
        }
        Ok(Self { nx, ny })
    }

    pub fn xs(&self) -> Vec<f64> {
        axis(self.nx)
    }

    /// Points in row-major order, y outer and x inner.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let xs = axis(self.nx);
        axis(self.ny)
            .into_iter()
            .flat_map(|y| xs.iter().map(move |&x| (x, y)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn axis(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Relative mean square error `Σ(pred − exact)² / Σ exact²`.
pub fn rmse(pred: &[f64], exact: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != exact.len() {
        return Err(EvalError::Misaligned(pred.len(), exact.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let num: KahanSum = pred.iter().zip(exact).map(|(p, e)| (p - e) * (p - e)).collect();
    let den: KahanSum = exact.iter().map(|e| e * e).collect();
    if den.value() == 0.0 {
        return Err(EvalError::ZeroNorm);
    }
    Ok(num.value() / den.value())
}

/// A model that can be queried at `(x, y, k)`.
pub trait Predictor: Sync {
    fn predict(&self, points: &[(f64, f64)], k: f64, exec: Execution) -> Vec<f64>;
}

/// Trained network together with the way it consumes `k`.
#[derive(Debug, Clone)]
pub struct NetworkModel<'a> {
    pub params: &'a NetworkParams,
    pub encoding: InputEncoding,
}

impl Predictor for NetworkModel<'_> {
    fn predict(&self, points: &[(f64, f64)], k: f64, exec: Execution) -> Vec<f64> {
        let mut buf = [0.0; 3];
        let rows: Vec<f64> = points
            .iter()
            .flat_map(|&(x, y)| self.encoding.encode(x, y, k, &mut buf).to_vec())
            .collect();
        forward_rows(self.params, &rows, exec)
    }
}

/// The closed-form solution posing as a model.
#[derive(Debug, Clone, Copy)]
pub struct ExactModel(pub ProblemSpec);

impl Predictor for ExactModel {
    fn predict(&self, points: &[(f64, f64)], k: f64, _exec: Execution) -> Vec<f64> {
        points
            .iter()
            .map(|&(x, y)| self.0.exact(k, x, y).expect("exact solution defined"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutPoint {
    pub x: f64,
    pub u_pred: f64,
    pub u_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: f64,
    pub rmse: f64,
    pub max_abs_error: f64,
    /// Grid point where the absolute error peaks.
    pub max_error_at: (f64, f64),
    pub cut_y: f64,
    pub cut: Vec<CutPoint>,
    /// `k` lies outside the training range.
    pub extrapolation: bool,
    #[serde(default)]
    pub label: String,
}

/// Per-point prediction and error over the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorField {
    pub points: Vec<(f64, f64)>,
    pub pred: Vec<f64>,
    pub exact: Vec<f64>,
}

impl ErrorField {
    /// CSV columns `x, y, u_pred, u_exact, abs_error`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "u_pred", "u_exact", "abs_error"])?;
        for ((&(x, y), p), e) in self.points.iter().zip(&self.pred).zip(&self.exact) {
            w.write_record([
                x.to_string(),
                y.to_string(),
                p.to_string(),
                e.to_string(),
                (p - e).abs().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub grid: EvalGrid,
    pub cut_y: f64,
    /// Range of k used in training; evaluation outside it is flagged.
    pub train_range: (f64, f64),
    pub exec: Execution,
}

/// Full-field prediction, RMSE, max error, and the fixed-y cut line.
pub fn evaluate(
    model: &dyn Predictor,
    spec: &ProblemSpec,
    k: f64,
    opts: &EvalOptions,
) -> Result<(EvalReport, ErrorField), EvalError> {
    let points = opts.grid.points();
    let exact = points
        .iter()
        .map(|&(x, y)| spec.exact(k, x, y))
        .collect::<Result<Vec<_>, _>>()?;
    let pred = model.predict(&points, k, opts.exec);
    let value = rmse(&pred, &exact)?;
    let (mut max_abs_error, mut max_error_at) = (0.0, points[0]);
    for ((p, e), &at) in pred.iter().zip(&exact).zip(&points) {
        let err = (p - e).abs();
        if err > max_abs_error {
            max_abs_error = err;
            max_error_at = at;
        }
    }
    let xs = opts.grid.xs();
    let cut_points: Vec<(f64, f64)> = xs.iter().map(|&x| (x, opts.cut_y)).collect();
    let cut_pred = model.predict(&cut_points, k, opts.exec);
    let cut = xs
        .iter()
        .zip(cut_pred)
        .map(|(&x, u_pred)| {
            Ok(CutPoint {
                x,
                u_pred,
                u_exact: spec.exact(k, x, opts.cut_y)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let (lo, hi) = opts.train_range;
    let report = EvalReport {
        k,
        rmse: value,
        max_abs_error,
        max_error_at,
        cut_y: opts.cut_y,
        cut,
        extrapolation: k < lo || k > hi,
        label: String::new(),
    };
    Ok((report, ErrorField { points, pred, exact }))
}

/// Cut CSV columns `x, u_pred, u_exact`.
pub fn write_cut_csv<W: Write>(report: &EvalReport, writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "u_pred", "u_exact"])?;
    for c in &report.cut {
        w.write_record([c.x.to_string(), c.u_pred.to_string(), c.u_exact.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep CSV columns `k, rmse, max_abs_error, extrapolation_flag`, with a
/// leading `label` column when any report carries one.
pub fn write_sweep_csv<W: Write>(reports: &[EvalReport], writer: W) -> Result<(), EvalError> {
    let labelled = reports.iter().any(|r| !r.label.is_empty());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["k", "rmse", "max_abs_error", "extrapolation_flag"];
    if labelled {
        header.insert(0, "label");
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.k.to_string(),
            r.rmse.to_string(),
            r.max_abs_error.to_string(),
            u8::from(r.extrapolation).to_string(),
        ];
        if labelled {
            row.insert(0, r.label.clone());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Python/matplotlib script that renders the sweep on log-log axes and the
/// cut-line overlays, reading only the CSV files next to it.
pub fn plot_script(sweep_csv: &str, cut_csvs: &[(f64, String)]) -> String {
    let cuts = cut_csvs
        .iter()
        .map(|(k, path)| format!("    ({k:e}, \"{path}\"),"))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        r#"#!/usr/bin/env python3
# Generated by blpinn. Reads the CSV files in this directory only.
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
SWEEP = "{sweep_csv}"
CUTS = [
{cuts}
]


def rows(name):
    with open(os.path.join(HERE, name)) as f:
        return list(csv.DictReader(f))


if os.path.exists(os.path.join(HERE, SWEEP)):
    data = rows(SWEEP)
    fig, ax = plt.subplots()
    groups = {{}}
    for r in data:
        groups.setdefault(r.get("label", ""), []).append(r)
    for label, rs in groups.items():
        rs.sort(key=lambda r: float(r["k"]))
        ax.loglog([float(r["k"]) for r in rs], [float(r["rmse"]) for r in rs], "o-", label=label or None)
    ax.set_xlabel("k")
    ax.set_ylabel("relative mean square error")
    if len(groups) > 1:
        ax.legend()
    fig.savefig(os.path.join(HERE, "sweep.png"), dpi=150)

if CUTS:
    fig, ax = plt.subplots()
    for k, name in CUTS:
        rs = rows(name)
        xs = [float(r["x"]) for r in rs]
        line, = ax.plot(xs, [float(r["u_exact"]) for r in rs], "-", label=f"exact k={{k:g}}")
        ax.plot(xs, [float(r["u_pred"]) for r in rs], ":", color=line.get_color(), label=f"PINN k={{k:g}}")
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    ax.legend(fontsize="small")
    fig.savefig(os.path.join(HERE, "cuts.png"), dpi=150)
"#
    )
}

/// One training run and its evaluations.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub record: TrainRecord,
    /// Final parameters and optimizer state.
    pub state: TrainState,
    pub samples: SampleSet,
    pub evaluations: Vec<(EvalReport, ErrorField)>,
}

impl SweepRun {
    pub fn reports(&self) -> impl Iterator<Item = &EvalReport> {
        self.evaluations.iter().map(|(r, _)| r)
    }
}

/// Trains once and evaluates the result at every k in `ks`.
pub fn train_and_evaluate(
    config: &TrainConfig,
    spec: &ProblemSpec,
    ks: &[f64],
    grid: EvalGrid,
    cut_y: f64,
) -> Result<SweepRun, EvalError> {
    let mut trainer = Trainer::new(config.clone(), *spec)?;
    let mut record = trainer.empty_record();
    trainer.run(0, config.optimizer.epochs, &mut record, |_, _| {});
    let model = NetworkModel {
        params: &trainer.state.params,
        encoding: config.scenario.input_encoding(),
    };
    let opts = EvalOptions {
        grid,
        cut_y,
        train_range: config.scenario.k_range(),
        exec: config.execution,
    };
    let evaluations = ks
        .iter()
        .map(|&k| evaluate(&model, spec, k, &opts))
        .collect::<Result<_, _>>()?;
    Ok(SweepRun {
        record,
        samples: trainer.samples().clone(),
        state: trainer.state,
        evaluations,
    })
}

/// RMSE-versus-k study. A fixed-k configuration is retrained once per
/// evaluation k (runs spread over `pool`); a parametric one is trained once
/// and evaluated at every k.
pub fn sweep(
    config: &TrainConfig,
    spec: &ProblemSpec,
    ks: &[f64],
    grid: EvalGrid,
    cut_y: f64,
    pool: Execution,
) -> Result<Vec<SweepRun>, EvalError> {
    match config.scenario {
        Scenario::Fixed { .. } => par::map(pool, ks, |&k| {
            let mut cfg = config.clone();
            cfg.scenario = Scenario::Fixed { k };
            train_and_evaluate(&cfg, spec, &[k], grid, cut_y)
        })
        .into_iter()
        .collect(),
        Scenario::Parametric { .. } => Ok(vec![train_and_evaluate(config, spec, ks, grid, cut_y)?]),
    }
}
