//! Subcommand implementations. Every file a command writes lands under the
//! experiment's `out` directory.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gradlex::analysis::{activation_profile, compare_profiles, evaluate, EvalReport};
use gradlex::checkpoint::Checkpoint;
use gradlex::data::Dataset;
use gradlex::evolution::{RunConfig, Trainer};
use gradlex::selection::Strategy;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentSpec};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.lxgd";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments: exit code 2.
    Config(ConfigError),
    /// Anything that went wrong while running: exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<gradlex::Error> for CliError {
    fn from(e: gradlex::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Reads the config file (if any), applies `key = value` overrides in order
/// and validates the result.
pub fn load_spec(config: Option<&Path>, overrides: &[(&str, String)]) -> CliResult<ExperimentSpec> {
    let mut spec = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ConfigError {
                key: None,
                line: None,
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            ExperimentSpec::parse(&text)?
        }
        None => ExperimentSpec::default(),
    };
    for (key, value) in overrides {
        spec.set(key, value)?;
    }
    spec.validate()?;
    Ok(spec)
}

fn prepare_out(spec: &ExperimentSpec) -> CliResult<()> {
    fs::create_dir_all(&spec.out)
        .with_context(|| format!("cannot create {}", spec.out.display()))?;
    fs::write(spec.out.join(CONFIG_FILE), spec.render())?;
    Ok(())
}

fn load_data(spec: &ExperimentSpec) -> CliResult<(Dataset, Dataset)> {
    let (train, test) = spec.data.load()?;
    log::info!(
        "train {} samples {:?}, test {} samples, {} classes",
        train.len(),
        train.sample_shape(),
        test.len(),
        train.num_classes()
    );
    Ok((train, test))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| anyhow!(e))?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Trains one run into `dir`: metrics, checkpoint and test evaluation.
pub fn train_run(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    dir: &Path,
    resume: Option<&Path>,
) -> CliResult<EvalReport> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let trainer = Trainer::new(cfg, train)?;
    let (parent, start) = match resume {
        Some(path) => trainer.resume_parent(&Checkpoint::load(path)?)?,
        None => (trainer.initial_parent()?, 0),
    };
    let metrics_path = dir.join(METRICS_FILE);
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .with_context(|| format!("cannot open {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(file);
    let outcome = trainer.run(parent, start, |record| {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(metrics, "{line}").and_then(|_| metrics.flush())?;
        Ok(())
    })?;
    outcome.checkpoint().save(dir.join(CHECKPOINT_FILE))?;
    let report = evaluate(&outcome.parent.model, test)?;
    write_json(&dir.join(EVAL_FILE), &report)?;
    Ok(report)
}

pub fn cmd_train(spec: &ExperimentSpec, resume: Option<&Path>) -> CliResult<()> {
    prepare_out(spec)?;
    let (train, test) = load_data(spec)?;
    let cfg = spec.primary_run();
    let report = train_run(&cfg, &train, &test, &spec.out, resume)?;
    println!(
        "{} p={} seed={} generations={}: test accuracy {:.2}% ({}/{})",
        cfg.strategy,
        cfg.effective_population(),
        cfg.seed,
        cfg.generations,
        report.accuracy * 100.0,
        report.correct,
        report.count
    );
    Ok(())
}

/// Accuracy statistics over replicate seeds, in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub population: usize,
    pub generations: u64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SummaryRow {
    pub fn new(strategy: Strategy, population: usize, generations: u64, accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() < 2 {
            log::warn!("{strategy} p={population}: one replicate, reporting std 0");
            0.0
        } else {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self {
            strategy,
            population,
            generations,
            accuracies,
            mean,
            std,
        }
    }
}

fn write_summaries(spec: &ExperimentSpec, rows: &[SummaryRow]) -> CliResult<()> {
    let mut runs = String::from("strategy,population,generations,seed,test_accuracy\n");
    let mut csv = String::from("strategy,population,generations,runs,mean_accuracy,std_accuracy\n");
    let mut text = format!(
        "{:<14} {:>4} {:>11} {:>4} {:>8} {:>7}\n",
        "strategy", "p", "generations", "runs", "acc.", "std"
    );
    for r in rows {
        for (seed, acc) in spec.seeds.iter().zip(&r.accuracies) {
            let _ = writeln!(runs, "{},{},{},{seed},{acc:?}", r.strategy, r.population, r.generations);
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{:?},{:?}",
            r.strategy,
            r.population,
            r.generations,
            r.accuracies.len(),
            r.mean,
            r.std
        );
        let _ = writeln!(
            text,
            "{:<14} {:>4} {:>11} {:>4} {:>8.2} {:>7.2}",
            r.strategy.as_str(),
            r.population,
            r.generations,
            r.accuracies.len(),
            r.mean,
            r.std
        );
    }
    fs::write(spec.out.join("runs.csv"), runs)?;
    fs::write(spec.out.join("summary.csv"), csv)?;
    fs::write(spec.out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn replicate(
    spec: &ExperimentSpec,
    strategy: Strategy,
    population: usize,
    train: &Dataset,
    test: &Dataset,
    dir: &Path,
) -> CliResult<SummaryRow> {
    let mut accs = Vec::new();
    let mut generations = 0;
    let mut effective = population;
    for &seed in &spec.seeds {
        let cfg = spec.run_config(strategy, population, seed);
        generations = cfg.generations;
        effective = cfg.effective_population();
        let report = train_run(&cfg, train, test, &dir.join(format!("seed-{seed}")), None)?;
        log::info!(
            "{strategy} p={effective} seed {seed}: {:.2}%",
            report.accuracy * 100.0
        );
        accs.push(report.accuracy * 100.0);
    }
    Ok(SummaryRow::new(strategy, effective, generations, accs))
}

pub fn cmd_compare(spec: &ExperimentSpec) -> CliResult<Vec<SummaryRow>> {
    prepare_out(spec)?;
    let (train, test) = load_data(spec)?;
    let mut rows = Vec::new();
    for &strategy in &spec.strategies {
        let dir = spec.out.join(strategy.as_str());
        rows.push(replicate(spec, strategy, spec.population, &train, &test, &dir)?);
    }
    write_summaries(spec, &rows)?;
    Ok(rows)
}

pub fn cmd_sweep(spec: &ExperimentSpec) -> CliResult<Vec<SummaryRow>> {
    prepare_out(spec)?;
    let (train, test) = load_data(spec)?;
    let mut rows = Vec::new();
    for &p in &spec.sizes {
        let dir = spec.out.join(format!("p-{p}"));
        rows.push(replicate(spec, spec.strategy, p, &train, &test, &dir)?);
    }
    write_summaries(spec, &rows)?;
    Ok(rows)
}

#[derive(Serialize)]
struct ProfileFile<'a> {
    checkpoint: String,
    summary: gradlex::analysis::ProfileSummary,
    histogram: &'a gradlex::analysis::Histogram,
}

pub fn cmd_profile(
    spec: &ExperimentSpec,
    checkpoints: &[PathBuf],
    layer: Option<usize>,
) -> CliResult<()> {
    if checkpoints.is_empty() || checkpoints.len() > 2 {
        return Err(ConfigError {
            key: None,
            line: None,
            message: "profile takes one or two --checkpoint paths".into(),
        }
        .into());
    }
    prepare_out(spec)?;
    let (_, test) = load_data(spec)?;
    let mut profiles = Vec::new();
    for (i, path) in checkpoints.iter().enumerate() {
        let ck = Checkpoint::load(path)?;
        let index = match layer {
            Some(l) => l,
            None => ck.model.final_conv_block().ok_or_else(|| {
                anyhow!(
                    "{}: model has no convolutional block; pass --layer",
                    path.display()
                )
            })?,
        };
        let profile = activation_profile(&ck.model, index, &test, spec.profile_samples, spec.bins)
            .with_context(|| path.display().to_string())?;
        let stem = format!("profile-{}", i + 1);
        let csv_path = spec.out.join(format!("{stem}.csv"));
        profile.write_csv(
            File::create(&csv_path).with_context(|| format!("cannot create {}", csv_path.display()))?,
        )?;
        let summary = profile.summary();
        println!(
            "{}: layer {} [{} x {}], zero fraction {:.4}, normalized entropy {:.4}",
            path.display(),
            summary.layer,
            summary.samples,
            summary.channels,
            summary.zero_fraction,
            summary.normalized_entropy
        );
        write_json(
            &spec.out.join(format!("{stem}.json")),
            &ProfileFile {
                checkpoint: path.display().to_string(),
                summary,
                histogram: &profile.histogram,
            },
        )?;
        profiles.push(profile);
    }
    if let [a, b] = profiles.as_slice() {
        let cmp = compare_profiles(a, b)?;
        println!(
            "difference (second - first): zero fraction {:+.4}, normalized entropy {:+.4}",
            cmp.zero_fraction_diff, cmp.normalized_entropy_diff
        );
        write_json(&spec.out.join("comparison.json"), &cmp)?;
    }
    Ok(())
}

pub fn cmd_eval(spec: &ExperimentSpec, checkpoint: &Path) -> CliResult<EvalReport> {
    prepare_out(spec)?;
    let (_, test) = load_data(spec)?;
    let ck = Checkpoint::load(checkpoint)?;
    let report = evaluate(&ck.model, &test)?;
    write_json(&spec.out.join(EVAL_FILE), &report)?;
    println!(
        "{}: accuracy {:.2}% ({}/{}) on {}",
        checkpoint.display(),
        report.accuracy * 100.0,
        report.correct,
        report.count,
        report.split
    );
    Ok(report)
}
