//! Full-batch Adam training of the PINN loss.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Gradient, Tape};
use crate::kernel::BatchedLoss;
use crate::loss::{tape_value_and_grad, KPairing, LossBreakdown, LossData, LossError, LossWeights};
use crate::network::{InputEncoding, NetworkError, NetworkParams, NetworkShape};
use crate::par::Execution;
use crate::physics::ProblemSpec;
use crate::sampling::{sample_boundary, sample_interior, sample_k, KDistribution, SampleSet, SamplingError};

pub const RECORD_FORMAT: &str = "blpinn-train-record/1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("non-finite gradient entry {index} ({value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("parameter and optimizer lengths differ: {params} vs {state}")]
    Misaligned { params: usize, state: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KInput {
    /// `log10 k` rescaled to `[-1, 1]` over the training range.
    LogScaled,
    /// Raw `k`.
    Raw,
}

/// Fixed coefficient (inputs `(x, y)`) or parametric in k (inputs `(x, y, k)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Scenario {
    Fixed {
        k: f64,
    },
    Parametric {
        k_min: f64,
        k_max: f64,
        n_k: usize,
        distribution: KDistribution,
        k_input: KInput,
    },
}

impl Scenario {
    pub fn number(&self) -> u8 {
        match self {
            Scenario::Fixed { .. } => 1,
            Scenario::Parametric { .. } => 2,
        }
    }

    pub fn input_encoding(&self) -> InputEncoding {
        match *self {
            Scenario::Fixed { .. } => InputEncoding::Spatial,
            Scenario::Parametric {
                k_min,
                k_max,
                k_input: KInput::LogScaled,
                ..
            } => InputEncoding::LogK { k_min, k_max },
            Scenario::Parametric {
                k_input: KInput::Raw, ..
            } => InputEncoding::RawK,
        }
    }

    /// The coefficient range seen during training.
    pub fn k_range(&self) -> (f64, f64) {
        match *self {
            Scenario::Fixed { k } => (k, k),
            Scenario::Parametric { k_min, k_max, .. } => (k_min, k_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_bd: usize,
    pub n_bn: usize,
    pub n_r: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Layer-wise batched kernel.
    #[default]
    Batched,
    /// Scalar reverse-mode tape; slow, for cross-checking.
    Tape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate is multiplied by `decay_rate^(epoch / decay_steps)` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<f64>,
    #[serde(default = "default_decay_steps")]
    pub decay_steps: usize,
    /// Residual points per step; full batch when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<usize>,
}

fn default_decay_steps() -> usize {
    1000
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            epochs: 20_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_rate: None,
            decay_steps: default_decay_steps(),
            minibatch: None,
        }
    }
}

impl OptimizerConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.decay_rate {
            Some(rate) => self.learning_rate * rate.powf(epoch as f64 / self.decay_steps as f64),
            None => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub sampling: SamplingConfig,
    pub weights: LossWeights,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub execution: Execution,
}

impl TrainConfig {
    /// Every violated invariant, each naming the constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.scenario {
            Scenario::Fixed { k } => {
                if !(k > 0.0 && k.is_finite()) {
                    v.push(format!("k_fixed > 0 (got {k})"));
                }
            }
            Scenario::Parametric { k_min, k_max, n_k, .. } => {
                if !(k_min > 0.0 && k_min < k_max && k_max.is_finite()) {
                    v.push(format!("0 < k_min < k_max (got {k_min}, {k_max})"));
                }
                if n_k < 1 {
                    v.push("n_k >= 1 (got 0)".into());
                }
            }
        }
        let s = self.sampling;
        if s.n_bd < 2 {
            v.push(format!("n_bd >= 2 (got {})", s.n_bd));
        }
        if s.n_bn < 2 {
            v.push(format!("n_bn >= 2 (got {})", s.n_bn));
        }
        if s.n_r < 1 {
            v.push("n_r >= 1 (got 0)".into());
        }
        v.extend(self.weights.violations());
        if self.network.hidden_layers < 1 {
            v.push("hidden_layers >= 1".into());
        }
        if self.network.hidden_width < 1 {
            v.push("hidden_width >= 1".into());
        }
        let o = &self.optimizer;
        if o.epochs < 1 {
            v.push("epochs >= 1 (got 0)".into());
        }
        if !(o.learning_rate > 0.0 && o.learning_rate < 1.0) {
            v.push(format!("learning_rate in (0, 1) (got {})", o.learning_rate));
        }
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                v.push(format!("{name} in (0, 1) (got {b})"));
            }
        }
        if !(o.eps > 0.0 && o.eps.is_finite()) {
            v.push(format!("eps > 0 (got {})", o.eps));
        }
        if let Some(rate) = o.decay_rate {
            if !(rate > 0.0 && rate <= 1.0) {
                v.push(format!("decay_rate in (0, 1] (got {rate})"));
            }
        }
        if o.decay_steps < 1 {
            v.push("decay_steps >= 1".into());
        }
        if o.minibatch == Some(0) {
            v.push("minibatch >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(v))
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input_dim: self.scenario.input_encoding().input_dim(),
            hidden_layers: self.network.hidden_layers,
            hidden_width: self.network.hidden_width,
        }
    }

    /// Draws the training points for this configuration.
    pub fn samples(&self) -> Result<SampleSet, TrainError> {
        let (dirichlet, neumann) = sample_boundary(self.sampling.n_bd, self.sampling.n_bn, self.seed)?;
        let k_values = match self.scenario {
            Scenario::Fixed { .. } => Vec::new(),
            Scenario::Parametric {
                k_min,
                k_max,
                n_k,
                distribution,
                ..
            } => sample_k(n_k, (k_min, k_max), distribution, self.seed)?,
        };
        Ok(SampleSet {
            collocation: sample_interior(self.sampling.n_r, self.seed)?,
            dirichlet,
            neumann,
            k_values,
        })
    }

    pub fn pairing(&self, samples: &SampleSet) -> KPairing {
        match self.scenario {
            Scenario::Fixed { k } => KPairing::fixed(k),
            s @ Scenario::Parametric { .. } => KPairing::parametric(samples.k_values.clone(), s.input_encoding()),
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    params: &mut [f64],
    grad: &Gradient,
    state: &mut AdamState,
    learning_rate: f64,
    config: &OptimizerConfig,
) -> Result<(), TrainError> {
    if params.len() != grad.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(TrainError::Misaligned {
            params: params.len(),
            state: state.m.len().min(grad.len()),
        });
    }
    if let Some((index, &value)) = grad.entries.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { index, value });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(&grad.entries)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed { epoch: usize, reason: String },
}

/// Outcome of a training run.
///
/// Wall-clock timings are kept apart from the serialized record so that the
/// record itself is a pure function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub format: String,
    pub config: TrainConfig,
    pub problem: ProblemSpec,
    pub status: RunStatus,
    pub history: Vec<LossBreakdown>,
    pub final_params: Vec<f64>,
    #[serde(skip)]
    pub elapsed_ms: Vec<f64>,
}

impl TrainRecord {
    pub fn params(&self) -> Result<NetworkParams, NetworkError> {
        NetworkParams::from_values(self.config.shape(), self.config.seed, self.final_params.clone())
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.history.first().map(|b| b.total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|b| b.total)
    }

    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed { .. })
    }

    /// Training log CSV: `epoch, phi_bd, phi_bn, phi_r, total, elapsed_ms`.
    pub fn write_log<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "phi_bd", "phi_bn", "phi_r", "total", "elapsed_ms"])?;
        for (i, b) in self.history.iter().enumerate() {
            let elapsed = self.elapsed_ms.get(i).copied().unwrap_or(0.0);
            w.write_record([
                i.to_string(),
                b.phi_bd.to_string(),
                b.phi_bn.to_string(),
                b.phi_r.to_string(),
                b.total.to_string(),
                format!("{elapsed:.3}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameters plus optimizer state; everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: NetworkParams,
    pub adam: AdamState,
}

/// Stepwise training driver.
pub struct Trainer {
    config: TrainConfig,
    problem: ProblemSpec,
    samples: SampleSet,
    pairing: KPairing,
    batched: BatchedLoss,
    tape: Tape,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig, problem: ProblemSpec) -> Result<Self, TrainError> {
        let mut violations = config.violations();
        violations.extend(problem.violations());
        if !violations.is_empty() {
            return Err(TrainError::Config(violations));
        }
        let samples = config.samples()?;
        let params = NetworkParams::init(config.shape(), config.seed)?;
        Self::with_state(
            config,
            problem,
            samples,
            TrainState {
                adam: AdamState::new(params.len()),
                params,
            },
        )
    }

    /// Resumes from a saved state with the given training points.
    pub fn with_state(
        config: TrainConfig,
        problem: ProblemSpec,
        samples: SampleSet,
        state: TrainState,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let pairing = config.pairing(&samples);
        let batched = BatchedLoss::new(&LossData {
            spec: problem,
            samples: &samples,
            pairing: pairing.clone(),
        })?;
        if state.params.shape() != config.shape() || state.adam.m.len() != state.params.len() {
            return Err(TrainError::Misaligned {
                params: state.params.len(),
                state: state.adam.m.len(),
            });
        }
        Ok(Self {
            config,
            problem,
            samples,
            pairing,
            batched,
            tape: Tape::new(),
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    fn minibatch(&self, epoch: usize, size: usize) -> SampleSet {
        let n = self.samples.collocation.len();
        let size = size.min(n);
        let start = (epoch * size) % n;
        let collocation = (0..size).map(|i| self.samples.collocation[(start + i) % n]).collect();
        SampleSet {
            collocation,
            ..self.samples.clone()
        }
    }

    /// Loss at the current parameters and its gradient.
    pub fn value_and_grad(&mut self, epoch: usize) -> Result<(LossBreakdown, Gradient), TrainError> {
        let weights = self.config.weights;
        let exec = self.config.execution;
        let params = &self.state.params;
        Ok(match (self.config.optimizer.minibatch, self.config.engine) {
            (None, Engine::Batched) => self.batched.value_and_grad(params, &weights, exec)?,
            (mb, engine) => {
                let subset;
                let samples = match mb {
                    Some(size) => {
                        subset = self.minibatch(epoch, size);
                        &subset
                    }
                    None => &self.samples,
                };
                let data = LossData {
                    spec: self.problem,
                    samples,
                    pairing: self.pairing.clone(),
                };
                match engine {
                    Engine::Batched => BatchedLoss::new(&data)?.value_and_grad(params, &weights, exec)?,
                    Engine::Tape => tape_value_and_grad(&mut self.tape, params, &data, &weights)?,
                }
            }
        })
    }

    /// Evaluates the loss, then applies one Adam update. Returns the pre-update loss.
    pub fn step(&mut self, epoch: usize) -> Result<LossBreakdown, StepFailure> {
        let (loss, grad) = self.value_and_grad(epoch).map_err(|e| StepFailure {
            loss: None,
            reason: e.to_string(),
        })?;
        if !loss.is_finite() {
            return Err(StepFailure {
                loss: Some(loss),
                reason: format!("non-finite loss {loss:?}"),
            });
        }
        let lr = self.config.optimizer.learning_rate_at(epoch);
        adam_step(
            &mut self.state.params.values,
            &grad,
            &mut self.state.adam,
            lr,
            &self.config.optimizer,
        )
        .map_err(|e| StepFailure {
            loss: Some(loss),
            reason: e.to_string(),
        })?;
        Ok(loss)
    }

    /// Runs epochs `start..end`, appending to `record`.
    pub fn run(&mut self, start: usize, end: usize, record: &mut TrainRecord, mut observe: impl FnMut(usize, &LossBreakdown)) {
        let clock = Instant::now();
        for epoch in start..end {
            match self.step(epoch) {
                Ok(loss) => {
                    record.history.push(loss);
                    record.elapsed_ms.push(clock.elapsed().as_secs_f64() * 1e3);
                    observe(epoch, &loss);
                }
                Err(fail) => {
                    if let Some(loss) = fail.loss {
                        record.history.push(loss);
                        record.elapsed_ms.push(clock.elapsed().as_secs_f64() * 1e3);
                    }
                    record.status = RunStatus::Failed {
                        epoch,
                        reason: fail.reason,
                    };
                    break;
                }
            }
        }
        record.final_params = self.state.params.values.clone();
    }

    pub fn empty_record(&self) -> TrainRecord {
        TrainRecord {
            format: RECORD_FORMAT.into(),
            config: self.config.clone(),
            problem: self.problem,
            status: RunStatus::Completed,
            history: Vec::new(),
            final_params: self.state.params.values.clone(),
            elapsed_ms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepFailure {
    pub loss: Option<LossBreakdown>,
    pub reason: String,
}

/// Initialise, sample, and run every epoch.
pub fn train(config: &TrainConfig, problem: &ProblemSpec) -> Result<TrainRecord, TrainError> {
    train_observed(config, problem, |_, _| {})
}

pub fn train_observed(
    config: &TrainConfig,
    problem: &ProblemSpec,
    observe: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainRecord, TrainError> {
    let mut trainer = Trainer::new(config.clone(), *problem)?;
    let mut record = trainer.empty_record();
    trainer.run(0, config.optimizer.epochs, &mut record, observe);
    Ok(record)
}

/// Moving average with the given window.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(scenario: Scenario, epochs: usize) -> TrainConfig {
        TrainConfig {
            seed: 3,
            scenario,
            sampling: SamplingConfig {
                n_bd: 10,
                n_bn: 10,
                n_r: 30,
            },
            weights: LossWeights::REACTION,
            network: NetworkConfig {
                hidden_layers: 2,
                hidden_width: 8,
            },
            optimizer: OptimizerConfig {
                epochs,
                ..Default::default()
            },
            engine: Engine::Batched,
            execution: Execution::Sequential,
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.5, -1.0];
        let mut st = AdamState {
            m: vec![0.2, 0.1],
            v: vec![0.01, 0.04],
            t: 3,
        };
        adam_step(&mut p, &Gradient::zeros(2), &mut st, 0.1, &OptimizerConfig::default()).unwrap();
        assert_eq!(st.m, vec![0.9 * 0.2, 0.9 * 0.1]);
        assert!(st.v[0] < 0.01 && st.v[1] < 0.04);
        // zero gradient with nonzero momentum still moves; fresh state does not
        let mut q = vec![0.5, -1.0];
        let mut fresh = AdamState::new(2);
        adam_step(&mut q, &Gradient::zeros(2), &mut fresh, 0.1, &OptimizerConfig::default()).unwrap();
        assert_eq!(q, vec![0.5, -1.0]);
        assert_eq!(fresh.m, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_quadratic_converges() {
        let cfg = OptimizerConfig::default();
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        for _ in 0..200 {
            let g = Gradient {
                entries: vec![2.0 * p[0]],
            };
            adam_step(&mut p, &g, &mut st, 0.1, &cfg).unwrap();
        }
        assert!(p[0].abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn first_step_is_about_learning_rate() {
        let cfg = OptimizerConfig::default();
        for g in [1e-3, 0.7, -250.0] {
            let mut p = vec![0.0];
            let mut st = AdamState::new(1);
            adam_step(&mut p, &Gradient { entries: vec![g] }, &mut st, 0.01, &cfg).unwrap();
            assert!(p[0].abs() >= 0.9 * 0.01 && p[0].abs() <= 0.01);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        let err = adam_step(
            &mut p,
            &Gradient {
                entries: vec![0.0, f64::NAN],
            },
            &mut st,
            0.1,
            &OptimizerConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { index: 1, .. }));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn violations_name_constraints() {
        let mut cfg = small_config(Scenario::Fixed { k: -1.0 }, 0);
        cfg.optimizer.learning_rate = 2.0;
        let v = cfg.violations();
        assert!(v.iter().any(|s| s.starts_with("k_fixed > 0")));
        assert!(v.iter().any(|s| s.starts_with("learning_rate in (0, 1)")));
        assert!(v.iter().any(|s| s.starts_with("epochs >= 1")));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn one_epoch_gives_one_history_entry() {
        let rec = train(&small_config(Scenario::Fixed { k: 1.0 }, 1), &ProblemSpec::reaction()).unwrap();
        assert_eq!(rec.history.len(), 1);
        assert_eq!(rec.status, RunStatus::Completed);
        assert!(train(&small_config(Scenario::Fixed { k: 1.0 }, 0), &ProblemSpec::reaction()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let scenario = Scenario::Parametric {
            k_min: 1e-3,
            k_max: 1.0,
            n_k: 3,
            distribution: KDistribution::LogUniform,
            k_input: KInput::LogScaled,
        };
        let mut cfg = small_config(scenario, 20);
        let a = train(&cfg, &ProblemSpec::advection()).unwrap();
        cfg.execution = Execution::Parallel;
        let b = train(&cfg, &ProblemSpec::advection()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_params, b.final_params);
        cfg.execution = Execution::Sequential;
        let c = train(&cfg, &ProblemSpec::advection()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
        assert!(a.final_loss().unwrap() < a.initial_loss().unwrap());
    }

    #[test]
    fn tape_engine_follows_batched_engine() {
        let mut cfg = small_config(Scenario::Fixed { k: 0.1 }, 5);
        let a = train(&cfg, &ProblemSpec::reaction()).unwrap();
        cfg.engine = Engine::Tape;
        let b = train(&cfg, &ProblemSpec::reaction()).unwrap();
        for (x, y) in a.final_params.iter().zip(&b.final_params) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = small_config(Scenario::Fixed { k: 0.5 }, 6);
        let full = train(&cfg, &ProblemSpec::reaction()).unwrap();
        let mut first = Trainer::new(cfg.clone(), ProblemSpec::reaction()).unwrap();
        let mut rec = first.empty_record();
        first.run(0, 5, &mut rec, |_, _| {});
        let state = first.state.clone();
        let mut resumed = Trainer::with_state(cfg, ProblemSpec::reaction(), first.samples().clone(), state).unwrap();
        resumed.run(5, 6, &mut rec, |_, _| {});
        assert_eq!(rec.final_params, full.final_params);
        assert_eq!(rec.history, full.history);
    }

    #[test]
    fn nan_loss_marks_record_failed() {
        let mut cfg = small_config(Scenario::Fixed { k: 1.0 }, 10);
        cfg.weights = LossWeights {
            c1: f64::MAX,
            c2: f64::MAX,
            c3: f64::MAX,
        };
        let mut trainer = Trainer::new(cfg, ProblemSpec::reaction()).unwrap();
        for v in trainer.state.params.values.iter_mut() {
            *v *= 1e200;
        }
        let mut rec = trainer.empty_record();
        trainer.run(0, 10, &mut rec, |_, _| {});
        assert!(matches!(rec.status, RunStatus::Failed { epoch: 0, .. }));
    }

    #[test]
    fn minibatch_rotates_through_points() {
        let mut cfg = small_config(Scenario::Fixed { k: 1.0 }, 4);
        cfg.optimizer.minibatch = Some(7);
        let rec = train(&cfg, &ProblemSpec::reaction()).unwrap();
        assert_eq!(rec.history.len(), 4);
        assert_eq!(rec.status, RunStatus::Completed);
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(smoothed(&[1.0], 2).is_empty());
    }
}
