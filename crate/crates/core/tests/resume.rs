use blpinn::checkpoint::Checkpoint;
use blpinn::sampling::KDistribution;
use blpinn::training::{
    train, Engine, KInput, NetworkConfig, OptimizerConfig, SamplingConfig, Scenario, TrainConfig, Trainer,
};
use blpinn::{Execution, LossWeights, ProblemSpec};

fn config(scenario: Scenario, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed: 11,
        scenario,
        sampling: SamplingConfig {
            n_bd: 12,
            n_bn: 12,
            n_r: 40,
        },
        weights: LossWeights::REACTION,
        network: NetworkConfig {
            hidden_layers: 2,
            hidden_width: 10,
        },
        optimizer: OptimizerConfig {
            epochs,
            learning_rate: 5e-3,
            decay_rate: Some(0.5),
            decay_steps: 7,
            ..Default::default()
        },
        engine: Engine::Batched,
        execution: Execution::Parallel,
    }
}

fn resume_matches(scenario: Scenario) {
    let (split, total) = (9, 20);
    let cfg = config(scenario, total);
    let spec = ProblemSpec::reaction();
    let straight = train(&cfg, &spec).unwrap();

    let mut first = Trainer::new(cfg.clone(), spec).unwrap();
    let mut record = first.empty_record();
    first.run(0, split, &mut record, |_, _| {});
    let mut bytes = Vec::new();
    Checkpoint::from_state(&first.state, cfg.scenario.input_encoding())
        .write(&mut bytes)
        .unwrap();

    let loaded = Checkpoint::read(bytes.as_slice()).unwrap();
    assert_eq!(loaded.encoding, cfg.scenario.input_encoding());
    let samples = cfg.samples().unwrap();
    let mut second = Trainer::with_state(cfg.clone(), spec, samples, loaded.into_state()).unwrap();
    second.run(split, total, &mut record, |_, _| {});

    assert_eq!(record.history, straight.history);
    assert_eq!(record.final_params, straight.final_params);
}

#[test]
fn checkpoint_resume_is_exact_for_fixed_k() {
    resume_matches(Scenario::Fixed { k: 0.05 });
}

#[test]
fn checkpoint_resume_is_exact_for_parametric_k() {
    resume_matches(Scenario::Parametric {
        k_min: 1e-3,
        k_max: 1.0,
        n_k: 3,
        distribution: KDistribution::LogUniform,
        k_input: KInput::LogScaled,
    });
}

#[test]
fn dropping_optimizer_state_changes_the_continuation() {
    let cfg = config(Scenario::Fixed { k: 0.05 }, 12);
    let spec = ProblemSpec::reaction();
    let straight = train(&cfg, &spec).unwrap();
    let mut first = Trainer::new(cfg.clone(), spec).unwrap();
    let mut record = first.empty_record();
    first.run(0, 6, &mut record, |_, _| {});
    let mut c = Checkpoint::from_state(&first.state, cfg.scenario.input_encoding());
    c.adam = None;
    let mut second = Trainer::with_state(cfg.clone(), spec, cfg.samples().unwrap(), c.into_state()).unwrap();
    second.run(6, 12, &mut record, |_, _| {});
    assert_ne!(record.final_params, straight.final_params);
}
