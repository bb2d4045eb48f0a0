use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blpinn::sampling::KDistribution;
use blpinn::training::{smoothed, train, KInput, Scenario};
use blpinn::LossWeights;
use blpinn_cli::preset::{preset, NAMES};
use blpinn_cli::{CliError, RunConfig};

fn blpinn(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blpinn"))
        .args(args)
        .env("BLPINN_OUTPUT_ROOT", root)
        .output()
        .expect("spawn blpinn")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dirs(root: &Path, label: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(root.join(label))
        .map(|rd| rd.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

const TINY: [&str; 8] = [
    "--set",
    "optimizer.epochs=4",
    "--set",
    "sampling.n_r=30",
    "--set",
    "eval.grid.nx=11",
    "--set",
    "eval.grid.ny=6",
];

#[test]
fn presets_match_golden_files() {
    for name in NAMES {
        let golden = fs::read_to_string(format!("{}/tests/golden/{name}.toml", env!("CARGO_MANIFEST_DIR"))).unwrap();
        assert_eq!(preset(name).unwrap().to_toml(), golden, "{name} drifted");
        assert_eq!(RunConfig::from_toml(&golden).unwrap(), preset(name).unwrap());
    }
}

#[test]
fn presets_encode_the_reference_studies() {
    for name in NAMES {
        let p = preset(name).unwrap();
        let t = &p.train;
        assert_eq!((t.sampling.n_bd, t.sampling.n_bn, t.sampling.n_r), (200, 200, 1000));
        assert_eq!((t.network.hidden_layers, t.network.hidden_width), (4, 24));
        let reaction = name.starts_with("reaction");
        assert_eq!(t.weights, if reaction { LossWeights::REACTION } else { LossWeights::ADVECTION });
        assert_eq!((p.problem.sigma, p.problem.a, p.problem.forcing), if reaction { (1.0, 0.0, 1.0) } else { (0.0, 1.0, 1.0) });
        match t.scenario {
            Scenario::Fixed { k } => {
                assert!(name.ends_with("s1"));
                assert_eq!(k, 1.0);
            }
            Scenario::Parametric {
                k_min,
                k_max,
                n_k,
                distribution,
                k_input,
            } => {
                assert!(name.ends_with("s2"));
                assert_eq!((k_min, k_max, n_k), (if reaction { 1e-4 } else { 1e-3 }, 1.0, 20));
                assert_eq!(distribution, KDistribution::LogUniform);
                assert_eq!(k_input, KInput::LogScaled);
            }
        }
    }
    assert_eq!(LossWeights::REACTION, LossWeights { c1: 2.0, c2: 1.0, c3: 0.01 });
    assert_eq!(LossWeights::ADVECTION, LossWeights { c1: 1.0, c2: 1.2, c3: 1.0 });
}

#[test]
fn overrides_use_dotted_paths() {
    let base = preset("reaction-s1").unwrap();
    let c = base
        .with_overrides(&[
            "train.optimizer.epochs=7".into(),
            "weights.c3=0.4".into(),
            "eval.cut_y=0.25".into(),
            "scenario.k=0.01".into(),
        ])
        .unwrap();
    assert_eq!(c.train.optimizer.epochs, 7);
    assert_eq!(c.train.weights.c3, 0.4);
    assert_eq!(c.eval.cut_y, 0.25);
    assert_eq!(c.train.scenario, Scenario::Fixed { k: 0.01 });
    assert_ne!(c.hash(), base.hash());
    assert_eq!(c.label(), "reaction-s1");
    let anon = RunConfig { preset: None, ..c };
    assert!(anon.label().starts_with("cfg-") && anon.label().len() == 16);
}

#[test]
fn override_errors_are_all_reported() {
    let err = preset("reaction-s1")
        .unwrap()
        .with_overrides(&["optimizer.epoch=3".into(), "weights".into(), "sampling.n_r=many".into()])
        .unwrap_err();
    let CliError::Config(items) = err else { panic!("expected config error") };
    assert_eq!(items.len(), 1, "{items:?}");
    assert!(items[0].contains("path=value"));

    let err = preset("reaction-s1")
        .unwrap()
        .with_overrides(&["optimizer.epoch=3".into(), "eval.colour=1".into()])
        .unwrap_err();
    let CliError::Config(items) = err else { panic!("expected config error") };
    assert_eq!(items, ["unknown field `eval.colour`", "unknown field `train.optimizer.epoch`"]);
}

#[test]
fn validate_names_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = preset("reaction-s1")
        .unwrap()
        .to_toml()
        .replace("k = 1.0", "k = -1.0")
        .replace("learning_rate = 0.001", "learning_rate = 2.0");
    fs::write(&path, text).unwrap();
    let o = blpinn(&["validate", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("k_fixed > 0"), "{e}");
    assert!(e.contains("learning_rate in (0, 1)"), "{e}");

    let good = dir.path().join("good.toml");
    fs::write(&good, preset("advection-s2").unwrap().to_toml()).unwrap();
    let o = blpinn(&["validate", good.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = blpinn(&["validate", dir.path().join("absent.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(run_dirs(dir.path(), "reaction-s1").is_empty());
}

#[test]
fn train_writes_artifacts_and_replays() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--preset", "advection-s1"];
    args.extend(TINY);
    let o = blpinn(&args, root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dirs = run_dirs(root.path(), "advection-s1");
    assert_eq!(dirs.len(), 1);
    let dir = &dirs[0];
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-0"));
    for f in [
        "config.toml",
        "manifest.json",
        "samples.csv",
        "train_log.csv",
        "record.json",
        "checkpoint.bin",
        "field_k=1e0.csv",
        "cut_k=1e0.csv",
        "sweep.csv",
        "reports.json",
        "plot.py",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,phi_bd,phi_bn,phi_r,total,elapsed_ms");
    assert_eq!(log.lines().count(), 5);
    let field = fs::read_to_string(dir.join("field_k=1e0.csv")).unwrap();
    assert_eq!(field.lines().next().unwrap(), "x,y,u_pred,u_exact,abs_error");
    assert_eq!(field.lines().count(), 1 + 11 * 6);

    let echoed = RunConfig::load(&dir.join("config.toml")).unwrap();
    assert_eq!(echoed.train.optimizer.epochs, 4);

    let o = blpinn(&["replay", dir.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", stderr(&o));

    // Extra outputs are ignored; altered ones are reported.
    let o = blpinn(&["eval", dir.to_str().unwrap(), "--k", "0.5,1"], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = fs::read_to_string(dir.join("eval/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    let o = blpinn(&["replay", dir.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let cut = dir.join("cut_k=1e0.csv");
    let mut text = fs::read_to_string(&cut).unwrap();
    text.push_str("0,0,0\n");
    fs::write(&cut, text).unwrap();
    let o = blpinn(&["replay", dir.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("cut_k=1e0.csv differs"));
}

#[test]
fn eval_reproduces_training_reports() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["preset", "reaction-s2", "--set", "scenario.n_k=2", "--set", "eval.ks=[1e-5, 0.01, 1.2]"];
    args.extend(TINY);
    let o = blpinn(&args, root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = &run_dirs(root.path(), "reaction-s2")[0];
    let o = blpinn(&["eval", dir.to_str().unwrap(), "--out", root.path().join("ev").to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.join("reports.json")).unwrap(),
        fs::read(root.path().join("ev/reports.json")).unwrap()
    );
    let sweep = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let flags: Vec<&str> = sweep.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(flags, ["1", "0", "1"]);
}

#[test]
fn fixed_k_sweep_trains_once_per_k() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--preset", "reaction-s1", "--k", "1,0.1,1e-3"];
    args.extend(TINY);
    let o = blpinn(&args, root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = &run_dirs(root.path(), "reaction-s1")[0];
    for k in ["1e0", "1e-1", "1e-3"] {
        let sub = dir.join(format!("k={k}"));
        let cfg = RunConfig::load(&sub.join("config.toml")).unwrap();
        assert_eq!(cfg.train.scenario, Scenario::Fixed { k: k.parse().unwrap() });
        assert!(sub.join("checkpoint.bin").is_file());
    }
    let sweep = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next().unwrap(), "k,rmse,max_abs_error,extrapolation_flag");
    assert_eq!(sweep.lines().count(), 4);
    let plot = fs::read_to_string(dir.join("plot.py")).unwrap();
    assert!(plot.contains("k=1e-3/cut_k=1e-3.csv"));
    let o = blpinn(&["replay", dir.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn vary_sweep_labels_rows() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--preset", "reaction-s1", "--vary", "weights.c3=0.01,0.2,0.4"];
    args.extend(TINY);
    let o = blpinn(&args, root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = &run_dirs(root.path(), "reaction-s1")[0];
    let sweep = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let labels: Vec<&str> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["weights.c3=0.01", "weights.c3=0.2", "weights.c3=0.4"]);
    let cfg = RunConfig::load(&dir.join("weights.c3=0.2/config.toml")).unwrap();
    assert_eq!(cfg.train.weights.c3, 0.2);
}

#[test]
fn bad_sweep_input_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    for args in [
        vec!["sweep", "--preset", "reaction-s1", "--k", "1,-2"],
        vec!["sweep", "--preset", "reaction-s1", "--vary", "weights.c3"],
        vec!["sweep", "--preset", "reaction-s1", "--vary", "weights.c3=0.1,-1"],
        vec!["train", "--preset", "reaction-s9"],
    ] {
        let o = blpinn(&args, root.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert!(run_dirs(root.path(), "reaction-s1").is_empty());
}

#[test]
fn overflowing_loss_aborts_with_code_3() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--preset", "reaction-s1", "--set", "problem.forcing=1e300"];
    args.extend(TINY);
    let o = blpinn(&args, root.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let dir = &run_dirs(root.path(), "reaction-s1")[0];
    let record = fs::read_to_string(dir.join("record.json")).unwrap();
    assert!(record.contains("\"failed\""), "{record}");
}

#[test]
fn preset_list_and_show() {
    let root = tempfile::tempdir().unwrap();
    let o = blpinn(&["preset", "--list"], root.path());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().collect::<Vec<_>>(), NAMES);
    let o = blpinn(&["preset", "advection-s2", "--show"], root.path());
    let shown = RunConfig::from_toml(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(shown, preset("advection-s2").unwrap());
}

/// First and last 50-epoch moving averages over 200 full-batch epochs.
#[test]
fn smoothed_loss_decreases_for_every_preset() {
    for name in NAMES {
        let p = preset(name).unwrap();
        let mut cfg = p.train.clone();
        cfg.optimizer.epochs = 200;
        let record = train(&cfg, &p.problem).unwrap();
        let totals: Vec<f64> = record.history.iter().map(|b| b.total).collect();
        let s = smoothed(&totals, 50);
        assert!(s.last().unwrap() <= s.first().unwrap(), "{name}: {} -> {}", s[0], s.last().unwrap());
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn overridden_configs_round_trip_through_toml(
        name_idx in 0usize..4,
        seed in 0..=i64::MAX as u64,
        epochs in 1usize..100_000,
        c3 in 1e-6f64..10.0,
        lr in 1e-6f64..0.5,
        cut_y in 0.0f64..=1.0,
    ) {
        let base = preset(NAMES[name_idx]).unwrap();
        let c = base
            .with_overrides(&[
                format!("seed={seed}"),
                format!("optimizer.epochs={epochs}"),
                format!("weights.c3={c3:e}"),
                format!("train.optimizer.learning_rate={lr:e}"),
                format!("eval.cut_y={cut_y:e}"),
            ])
            .unwrap();
        proptest::prop_assert_eq!(c.train.seed, seed);
        proptest::prop_assert_eq!(c.train.weights.c3, c3);
        proptest::prop_assert_eq!(c.train.optimizer.learning_rate, lr);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        proptest::prop_assert_eq!(&back, &c);
        proptest::prop_assert_eq!(back.hash(), c.hash());
        proptest::prop_assert!(c.violations().is_empty());
    }

    #[test]
    fn seeds_beyond_toml_range_are_violations(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let mut c = preset("reaction-s1").unwrap();
        c.train.seed = seed;
        let v = c.violations();
        proptest::prop_assert!(v.len() == 1 && v[0].starts_with("train.seed at most"), "{v:?}");
    }
}
