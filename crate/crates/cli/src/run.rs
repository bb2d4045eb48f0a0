//! Run directories, artifact writing, and replay.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use blpinn::checkpoint::Checkpoint;
use blpinn::evaluation::{
    evaluate, plot_script, train_and_evaluate, write_cut_csv, write_sweep_csv, EvalOptions, EvalReport, ErrorField,
    NetworkModel, SweepRun,
};
use blpinn::par;
use blpinn::training::{RunStatus, Scenario};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "BLPINN_OUTPUT_ROOT";
pub const MANIFEST_FORMAT: &str = "blpinn-run/1";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// How a run directory was produced; `replay` re-executes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    Train,
    Sweep {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        ks: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vary: Option<Vary>,
    },
}

/// One config path and the values it takes across a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vary {
    pub path: String,
    pub values: Vec<String>,
}

impl Vary {
    /// Parses `path=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let (path, values) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(vec![format!("--vary `{spec}` is not of the form path=v1,v2,...")]))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if path.trim().is_empty() || values.iter().any(String::is_empty) {
            return Err(CliError::Config(vec![format!("--vary `{spec}` has an empty path or value")]));
        }
        Ok(Self {
            path: path.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    #[serde(flatten)]
    command: Command,
}

/// Creates `<root>/<label>/<timestamp>-<seed>`, adding a numeric suffix if taken.
pub fn create_run_dir(root: &Path, config: &RunConfig) -> Result<PathBuf, CliError> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    let base = root.join(config.label());
    let mut dir = base.join(format!("{stamp}-{}", config.train.seed));
    let mut n = 2;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{}-{n}", config.train.seed));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

/// File-name form of a coefficient, e.g. `1e-3`.
pub fn k_tag(k: f64) -> String {
    format!("{k:e}")
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-=".contains(c) { c } else { '_' })
        .collect()
}

/// Field, cut, report, sweep, and plot files for a list of evaluations.
fn write_evaluations(dir: &Path, evaluations: &[(EvalReport, ErrorField)]) -> Result<(), CliError> {
    let mut cuts = Vec::new();
    for (report, field) in evaluations {
        let tag = k_tag(report.k);
        let path = dir.join(format!("field_k={tag}.csv"));
        field.write_csv(create_file(&path)?).map_err(|e| csv_err(&path, e))?;
        let name = format!("cut_k={tag}.csv");
        let path = dir.join(&name);
        write_cut_csv(report, create_file(&path)?).map_err(|e| csv_err(&path, e))?;
        cuts.push((report.k, name));
    }
    let reports: Vec<EvalReport> = evaluations.iter().map(|(r, _)| r.clone()).collect();
    write_reports(dir, &reports)?;
    write_text(&dir.join("plot.py"), &plot_script("sweep.csv", &cuts))
}

fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<(), CliError> {
    let path = dir.join("sweep.csv");
    write_sweep_csv(reports, create_file(&path)?).map_err(|e| csv_err(&path, e))?;
    let path = dir.join("reports.json");
    write_text(&path, &serde_json::to_string_pretty(reports).expect("reports serialize"))
}

/// Config echo, training points, log, record, checkpoint, and evaluations.
fn write_run(dir: &Path, config: &RunConfig, run: &SweepRun) -> Result<(), CliError> {
    write_text(&dir.join("config.toml"), &config.to_toml())?;
    let path = dir.join("samples.csv");
    run.samples
        .write_csv(create_file(&path)?)
        .map_err(|e| csv_err(&path, e))?;
    let path = dir.join("train_log.csv");
    run.record
        .write_log(create_file(&path)?)
        .map_err(|e| csv_err(&path, e))?;
    write_text(
        &dir.join("record.json"),
        &serde_json::to_string_pretty(&run.record).expect("record serializes"),
    )?;
    let path = dir.join("checkpoint.bin");
    Checkpoint::from_state(&run.state, config.train.scenario.input_encoding())
        .save(&path)
        .map_err(|e| csv_err(&path, e))?;
    write_evaluations(dir, &run.evaluations)
}

fn write_manifest(dir: &Path, command: &Command) -> Result<(), CliError> {
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        command: command.clone(),
    };
    write_text(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
}

fn failure(run: &SweepRun) -> Option<String> {
    match &run.record.status {
        RunStatus::Completed => None,
        RunStatus::Failed { epoch, reason } => Some(format!("epoch {epoch}: {reason}")),
    }
}

/// Summary of a finished command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub reports: Vec<EvalReport>,
}

/// Trains once, evaluates the plan, and writes every artifact into `dir`.
pub fn train(config: &RunConfig, dir: &Path) -> Result<Outcome, CliError> {
    config.validate()?;
    let run = train_and_evaluate(
        &config.train,
        &config.problem,
        &config.eval_ks(),
        config.eval.grid,
        config.eval.cut_y,
    )?;
    write_manifest(dir, &Command::Train)?;
    write_run(dir, config, &run)?;
    if let Some(reason) = failure(&run) {
        return Err(CliError::NonFinite(reason));
    }
    Ok(Outcome {
        dir: dir.to_path_buf(),
        reports: run.reports().cloned().collect(),
    })
}

struct Job {
    name: String,
    label: String,
    config: RunConfig,
    ks: Vec<f64>,
}

fn jobs(base: &RunConfig, ks: &[f64], vary: Option<&Vary>) -> Result<Vec<Job>, CliError> {
    let variants = match vary {
        None => vec![(String::new(), base.clone())],
        Some(v) => {
            let mut out = Vec::new();
            let mut errors = Vec::new();
            for value in &v.values {
                let assignment = format!("{}={value}", v.path);
                match base.with_overrides(std::slice::from_ref(&assignment)) {
                    Ok(c) => out.push((assignment, c)),
                    Err(CliError::Config(e)) => errors.extend(e),
                    Err(e) => return Err(e),
                }
            }
            if !errors.is_empty() {
                return Err(CliError::Config(errors));
            }
            out
        }
    };
    let mut jobs = Vec::new();
    for (label, config) in variants {
        config.validate()?;
        match (config.train.scenario, ks.is_empty()) {
            (Scenario::Fixed { .. }, false) => {
                for &k in ks {
                    let mut c = config.clone();
                    c.train.scenario = Scenario::Fixed { k };
                    c.eval.ks = vec![k];
                    let mut name = format!("k={}", k_tag(k));
                    if !label.is_empty() {
                        name = format!("{}_{name}", sanitize(&label));
                    }
                    jobs.push(Job {
                        name,
                        label: label.clone(),
                        config: c,
                        ks: vec![k],
                    });
                }
            }
            _ => {
                let ks = if ks.is_empty() { config.eval_ks() } else { ks.to_vec() };
                let name = if label.is_empty() {
                    "run".to_string()
                } else {
                    sanitize(&label)
                };
                jobs.push(Job {
                    name,
                    label: label.clone(),
                    config,
                    ks,
                });
            }
        }
    }
    Ok(jobs)
}

/// Independent trainings (one per k for fixed-k configs, one per `vary`
/// value) run over a worker pool; each lands in its own subdirectory and the
/// combined table in `dir/sweep.csv`.
pub fn sweep(config: &RunConfig, ks: &[f64], vary: Option<&Vary>, dir: &Path) -> Result<Outcome, CliError> {
    config.validate()?;
    if let Some(&k) = ks.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
        return Err(CliError::Config(vec![format!("--k values > 0 (got {k})")]));
    }
    let jobs = jobs(config, ks, vary)?;
    let results = par::map(config.train.execution, &jobs, |job| {
        train_and_evaluate(
            &job.config.train,
            &job.config.problem,
            &job.ks,
            job.config.eval.grid,
            job.config.eval.cut_y,
        )
    });
    write_manifest(
        dir,
        &Command::Sweep {
            ks: ks.to_vec(),
            vary: vary.cloned(),
        },
    )?;
    write_text(&dir.join("config.toml"), &config.to_toml())?;
    let mut all = Vec::new();
    let mut failures = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let mut run = result?;
        for (report, _) in &mut run.evaluations {
            report.label = job.label.clone();
        }
        let sub = dir.join(&job.name);
        fs::create_dir_all(&sub).map_err(|e| CliError::io(&sub, e))?;
        write_run(&sub, &job.config, &run)?;
        if let Some(reason) = failure(&run) {
            failures.push(format!("{}: {reason}", job.name));
        }
        all.extend(run.evaluations);
    }
    write_summary(dir, &all, &jobs)?;
    if !failures.is_empty() {
        return Err(CliError::NonFinite(failures.join("; ")));
    }
    Ok(Outcome {
        dir: dir.to_path_buf(),
        reports: all.into_iter().map(|(r, _)| r).collect(),
    })
}

/// Top-level sweep table and a plot script pointing at each run's cut CSV.
fn write_summary(dir: &Path, all: &[(EvalReport, ErrorField)], jobs: &[Job]) -> Result<(), CliError> {
    let reports: Vec<EvalReport> = all.iter().map(|(r, _)| r.clone()).collect();
    write_reports(dir, &reports)?;
    let cuts: Vec<(f64, String)> = jobs
        .iter()
        .flat_map(|job| {
            job.ks
                .iter()
                .map(move |&k| (k, format!("{}/cut_k={}.csv", job.name, k_tag(k))))
        })
        .collect();
    write_text(&dir.join("plot.py"), &plot_script("sweep.csv", &cuts))
}

/// Re-evaluates the checkpoint of a finished train run.
pub fn eval(run_dir: &Path, ks: &[f64], out: &Path) -> Result<Outcome, CliError> {
    let config = RunConfig::load(&run_dir.join("config.toml"))?;
    let path = run_dir.join("checkpoint.bin");
    let checkpoint = Checkpoint::load(&path).map_err(|e| match e {
        blpinn::checkpoint::CheckpointError::Io(source) => CliError::io(&path, source),
        other => CliError::Other(format!("{}: {other}", path.display())),
    })?;
    let ks = if ks.is_empty() { config.eval_ks() } else { ks.to_vec() };
    if ks.is_empty() || ks.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(CliError::Config(vec![format!("evaluation ks nonempty and > 0 (got {ks:?})")]));
    }
    let model = NetworkModel {
        params: &checkpoint.params,
        encoding: checkpoint.encoding,
    };
    let opts = EvalOptions {
        grid: config.eval.grid,
        cut_y: config.eval.cut_y,
        train_range: config.train.scenario.k_range(),
        exec: config.train.execution,
    };
    let evaluations = ks
        .iter()
        .map(|&k| evaluate(&model, &config.problem, k, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_evaluations(out, &evaluations)?;
    Ok(Outcome {
        dir: out.to_path_buf(),
        reports: evaluations.into_iter().map(|(r, _)| r).collect(),
    })
}

/// Executes whatever produced a run directory into `dir`.
fn execute(command: &Command, config: &RunConfig, dir: &Path) -> Result<Outcome, CliError> {
    match command {
        Command::Train => train(config, dir),
        Command::Sweep { ks, vary } => sweep(config, ks, vary.as_ref(), dir),
    }
}

fn read_manifest(run_dir: &Path) -> Result<Command, CliError> {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CliError::Config(vec![format!(
            "{}: unsupported format {}",
            path.display(),
            manifest.format
        )]));
    }
    Ok(manifest.command)
}

fn relative_files(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Drops the wall-clock column of a training log.
fn mask_elapsed(log: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(log);
    let mut out = String::new();
    for line in text.lines() {
        let kept = line.rsplit_once(',').map_or(line, |(head, _)| head);
        out.push_str(kept);
        out.push('\n');
    }
    out.into_bytes()
}

/// Re-runs `run_dir` from its config echo and manifest into a scratch
/// directory and compares every artifact byte for byte (training logs with
/// the wall-clock column masked). Outputs that were not part of the original
/// run, such as `eval` results or rendered plots, are ignored.
pub fn replay(run_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let command = read_manifest(run_dir)?;
    let config = RunConfig::load(&run_dir.join("config.toml"))?;
    let scratch = tempfile::tempdir().map_err(|e| CliError::io(Path::new("<tempdir>"), e))?;
    match execute(&command, &config, scratch.path()) {
        Ok(_) | Err(CliError::NonFinite(_)) => {}
        Err(e) => return Err(e),
    }
    let fresh = relative_files(scratch.path())?;
    let original = relative_files(run_dir)?;
    let mut mismatches = Vec::new();
    for rel in &fresh {
        if !original.contains(rel) {
            mismatches.push(format!("{} missing from the original run", rel.display()));
            continue;
        }
        let a = fs::read(run_dir.join(rel)).map_err(|e| CliError::io(&run_dir.join(rel), e))?;
        let b = fs::read(scratch.path().join(rel)).map_err(|e| CliError::io(rel, e))?;
        let same = if rel.file_name().is_some_and(|n| n == "train_log.csv") {
            mask_elapsed(&a) == mask_elapsed(&b)
        } else {
            a == b
        };
        if !same {
            mismatches.push(format!("{} differs", rel.display()));
        }
    }
    if mismatches.is_empty() {
        Ok(fresh)
    } else {
        Err(CliError::ReplayMismatch(mismatches))
    }
}
