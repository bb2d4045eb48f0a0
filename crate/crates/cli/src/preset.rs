//! The four named studies: {reaction, advection} × {fixed k, parametric k}.

use blpinn::evaluation::EvalGrid;
use blpinn::sampling::KDistribution;
use blpinn::training::{Engine, KInput, NetworkConfig, OptimizerConfig, SamplingConfig, Scenario, TrainConfig};
use blpinn::{Execution, LossWeights, ProblemSpec};

use crate::config::{EvalPlan, RunConfig};
use crate::error::CliError;

pub const NAMES: [&str; 4] = ["reaction-s1", "reaction-s2", "advection-s1", "advection-s2"];

pub const DEFAULT_SEED: u64 = 0;

/// Evaluation coefficients for parametric presets: the training range at
/// half-decade spacing plus one point beyond each end.
fn parametric_eval_ks(k_min: f64) -> Vec<f64> {
    let lo = k_min.log10().round() as i32;
    let mut ks = vec![10f64.powi(lo - 1)];
    for i in 0..=(2 * -lo) {
        ks.push(10f64.powf(lo as f64 + 0.5 * i as f64));
    }
    ks.push(1.2);
    ks
}

pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    let (problem, weights, k_min) = match name {
        "reaction-s1" | "reaction-s2" => (ProblemSpec::reaction(), LossWeights::REACTION, 1e-4),
        "advection-s1" | "advection-s2" => (ProblemSpec::advection(), LossWeights::ADVECTION, 1e-3),
        _ => {
            return Err(CliError::Config(vec![format!(
                "unknown preset `{name}` (expected one of {})",
                NAMES.join(", ")
            )]))
        }
    };
    let parametric = name.ends_with("-s2");
    let scenario = if parametric {
        Scenario::Parametric {
            k_min,
            k_max: 1.0,
            n_k: 20,
            distribution: KDistribution::LogUniform,
            k_input: KInput::LogScaled,
        }
    } else {
        Scenario::Fixed { k: 1.0 }
    };
    Ok(RunConfig {
        preset: Some(name.to_string()),
        problem,
        train: TrainConfig {
            seed: DEFAULT_SEED,
            scenario,
            sampling: SamplingConfig {
                n_bd: 200,
                n_bn: 200,
                n_r: 1000,
            },
            weights,
            network: NetworkConfig::default(),
            optimizer: OptimizerConfig::default(),
            engine: Engine::Batched,
            execution: Execution::default(),
        },
        eval: EvalPlan {
            grid: EvalGrid::default(),
            cut_y: 0.5,
            ks: if parametric {
                parametric_eval_ks(k_min)
            } else {
                Vec::new()
            },
        },
    })
}
