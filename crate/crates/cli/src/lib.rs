//! Command implementations behind the `tfbhtmm` binary.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 validation.

pub mod args;
mod output;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use tfbhtmm::checkpoint::{Checkpoint, CheckpointError};
use tfbhtmm::gibbs::SweepRecord;
use tfbhtmm::math::argmax;
use tfbhtmm::model::ModelError;
use tfbhtmm::tasks::{
    class_training_set, classify, eval_classification, eval_labelling, synthetic_split,
    train_model, ClassifierBundle, EvalReport, ModelKind, SyntheticParams, Task, TaskError,
    TrainedModel,
};
use tfbhtmm::trees::TreeError;
use tfbhtmm::{parse_corpus, HyperParams, TreeCorpus};

use args::{Cli, Command, EvalArgs, GenerateArgs, PredictArgs, TrainArgs};
pub use output::{aggregate, Aggregate};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn invalid(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|agg| print!("{}", agg.to_table())),
        Command::Classify(a) => cmd_classify(&a),
        Command::Label(a) => cmd_label(&a),
    }
}

/// Everything needed to repeat a run.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticParams>,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    fn new(command: &'static str, output: &Path) -> Self {
        Self {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            output: output.to_path_buf(),
            task: None,
            model: None,
            hyper: None,
            generator: None,
            seeds: Vec::new(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_atomic(path, &text)
}

pub fn load_corpus(path: &Path) -> Result<TreeCorpus, CliError> {
    let corpus = parse_corpus(&read_text(path)?).map_err(|e: TreeError| invalid(path, e))?;
    corpus.validate().map_err(|e| invalid(path, e))?;
    Ok(corpus)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let triple = |v: &[f64]| [v[0], v[1], v[2]];
    let params = SyntheticParams {
        count_per_type: a.count_per_type as usize,
        occupation: [triple(&a.left), triple(&a.symmetric), triple(&a.right)],
        max_depth: a.max_depth,
        min_nodes: a.min_nodes,
        symmetric_tolerance: a.symmetric_tolerance,
        test_fraction: a.test_fraction,
    };
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let (train, test) = synthetic_split(&params, a.seed)?;
    write_atomic(&a.out_dir.join("train.trees"), &train.to_text())?;
    write_atomic(&a.out_dir.join("test.trees"), &test.to_text())?;
    let mut cfg = RunConfig::new("generate", &a.out_dir);
    cfg.generator = Some(params);
    cfg.seeds = vec![a.seed];
    write_json(&a.out_dir.join("generate.meta.json"), &cfg)?;
    eprintln!(
        "wrote {} training and {} test trees to {}",
        train.len(),
        test.len(),
        a.out_dir.display()
    );
    Ok(())
}

/// Trains the checkpoints of one run: one per class, or a single labeller.
pub fn train_run(
    corpus: &TreeCorpus,
    hyper: &HyperParams,
    task: Task,
    kind: ModelKind,
) -> Result<Vec<(Checkpoint, Vec<SweepRecord>)>, CliError> {
    hyper.validate()?;
    match task {
        Task::Label => {
            let run = train_model(corpus, hyper, kind)?;
            let log = run.log.clone();
            Ok(vec![(Checkpoint::from_run(task, None, hyper, run), log)])
        }
        Task::Classify => {
            if corpus.class_labels.is_none() {
                return Err(CliError::Validation(
                    "classification needs a corpus with class labels".into(),
                ));
            }
            (0..corpus.class_count())
                .into_par_iter()
                .map(|c| {
                    let (subset, h) = class_training_set(corpus, hyper, c)?;
                    let run = train_model(&subset, &h, kind)?;
                    let log = run.log.clone();
                    Ok((Checkpoint::from_run(task, Some(c), &h, run), log))
                })
                .collect()
        }
    }
}

fn checkpoint_name(ck: &Checkpoint) -> String {
    match ck.class {
        Some(c) => format!("class-{c}"),
        None => "model".to_string(),
    }
}

fn log_text(log: &[SweepRecord]) -> String {
    let mut out = String::from(SweepRecord::TSV_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    out
}

pub fn cmd_train(a: &TrainArgs) -> Result<Vec<PathBuf>, CliError> {
    let corpus = load_corpus(&a.corpus)?;
    let task = Task::from(a.task);
    let kind = ModelKind::from(a.model);
    let hyper = a.hyper.build(task, corpus.arity, corpus.alphabet);
    let trained = pool(a.jobs)?.install(|| train_run(&corpus, &hyper, task, kind))?;
    let mut paths = Vec::new();
    for (ck, log) in &trained {
        let name = checkpoint_name(ck);
        let path = a.out_dir.join(format!("{name}.json"));
        write_atomic(&path, &(ck.to_json() + "\n"))?;
        write_atomic(&a.out_dir.join(format!("{name}.log.tsv")), &log_text(log))?;
        paths.push(path);
    }
    let mut cfg = RunConfig::new("train", &a.out_dir);
    cfg.inputs = vec![a.corpus.clone()];
    cfg.task = Some(task);
    cfg.model = Some(kind);
    cfg.seeds = vec![hyper.seed];
    cfg.hyper = Some(hyper);
    write_json(&a.out_dir.join("train.meta.json"), &cfg)?;
    eprintln!("wrote {} checkpoint(s) to {}", paths.len(), a.out_dir.display());
    Ok(paths)
}

/// Loads every checkpoint of a directory written by `train`, in class order.
pub fn load_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>, CliError> {
    let single = dir.join("model.json");
    if single.exists() {
        let ck = Checkpoint::from_json(&read_text(&single)?).map_err(|e| invalid(&single, e))?;
        return Ok(vec![ck]);
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("class-") && name.ends_with(".json") {
            let ck: Checkpoint = Checkpoint::from_json(&read_text(&path)?)
                .map_err(|e: CheckpointError| invalid(&path, e))?;
            found.push(ck);
        }
    }
    if found.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no checkpoints found",
            dir.display()
        )));
    }
    found.sort_by_key(|ck| ck.class);
    for (i, ck) in found.iter().enumerate() {
        if ck.class != Some(i) {
            return Err(CliError::Validation(format!(
                "{}: class checkpoints are not numbered 0..{}",
                dir.display(),
                found.len()
            )));
        }
    }
    Ok(found)
}

fn check_model_dims(model: &TrainedModel, corpus: &TreeCorpus, path: &Path) -> Result<(), CliError> {
    let (_, l, m) = model.dims();
    if corpus.arity != l || corpus.alphabet != m {
        return Err(invalid(
            path,
            format!(
                "corpus has L={} M={} but the model expects L={l} M={m}",
                corpus.arity, corpus.alphabet
            ),
        ));
    }
    Ok(())
}

fn evaluate(
    task: Task,
    checkpoints: &[Checkpoint],
    test: &TreeCorpus,
    test_path: &Path,
) -> Result<EvalReport, CliError> {
    for ck in checkpoints {
        if ck.task != task {
            return Err(CliError::Validation(format!(
                "checkpoint was trained for {} but {task} was requested",
                ck.task
            )));
        }
        check_model_dims(&ck.model, test, test_path)?;
    }
    let report = match task {
        Task::Label => eval_labelling(test, &checkpoints[0].model)?,
        Task::Classify => {
            let bundle = ClassifierBundle::new(
                checkpoints[0].hyper.clone(),
                checkpoints.iter().map(|c| c.model.clone()).collect(),
            )?;
            eval_classification(test, &bundle)?
        }
    };
    let ck = &checkpoints[0];
    Ok(report
        .with_metadata("model", ck.kind())
        .with_metadata("states", ck.hyper.states)
        .with_metadata("iterations", ck.iteration))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Aggregate, CliError> {
    let task = Task::from(a.task);
    let test = load_corpus(&a.test)?;
    let mut cfg = RunConfig::new("eval", &a.out_dir);
    cfg.task = Some(task);
    cfg.inputs = vec![a.test.clone()];
    let runs: Vec<(u64, Vec<Checkpoint>)> = if let Some(train_path) = &a.train {
        let corpus = load_corpus(train_path)?;
        let kind = ModelKind::from(a.model);
        let base = a.hyper.build(task, corpus.arity, corpus.alphabet);
        base.validate()?;
        let seeds: Vec<u64> = (0..a.runs).map(|r| base.seed.wrapping_add(r)).collect();
        cfg.inputs.push(train_path.clone());
        cfg.model = Some(kind);
        cfg.hyper = Some(base.clone());
        pool(a.jobs)?.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let h = base.clone().with_seed(seed);
                    let cks = train_run(&corpus, &h, task, kind)?;
                    Ok((seed, cks.into_iter().map(|(c, _)| c).collect()))
                })
                .collect::<Result<Vec<_>, CliError>>()
        })?
    } else {
        cfg.inputs.extend(a.models.iter().cloned());
        a.models
            .iter()
            .map(|dir| {
                let cks = load_checkpoints(dir)?;
                Ok((cks[0].hyper.seed, cks))
            })
            .collect::<Result<Vec<_>, CliError>>()?
    };
    cfg.seeds = runs.iter().map(|(s, _)| *s).collect();
    let reports = runs
        .iter()
        .enumerate()
        .map(|(i, (seed, cks))| {
            Ok(evaluate(task, cks, &test, &a.test)?
                .with_metadata("run", i)
                .with_metadata("seed", seed))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    for (i, r) in reports.iter().enumerate() {
        write_atomic(&a.out_dir.join(format!("confusion-run{i}.csv")), &r.confusion_csv())?;
    }
    let agg = aggregate(task, reports);
    write_json(&a.out_dir.join("report.json"), &agg)?;
    let table = agg.to_table();
    write_atomic(&a.out_dir.join("report.txt"), &table)?;
    write_json(&a.out_dir.join("eval.meta.json"), &cfg)?;
    Ok(agg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_atomic(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_classify(a: &PredictArgs) -> Result<(), CliError> {
    let cks = load_checkpoints(&a.models)?;
    if cks[0].task != Task::Classify {
        return Err(invalid(&a.models, "not a classification model directory"));
    }
    let corpus = load_corpus(&a.input)?;
    check_model_dims(&cks[0].model, &corpus, &a.input)?;
    let bundle = ClassifierBundle::new(
        cks[0].hyper.clone(),
        cks.into_iter().map(|c| c.model).collect(),
    )?;
    let k = bundle.class_count();
    let mut text = String::from("tree\tpredicted");
    for c in 0..k {
        text.push_str(&format!("\tp_{c}"));
    }
    text.push('\n');
    for (i, tree) in corpus.trees.iter().enumerate() {
        let (class, dist) = classify(tree, &bundle);
        text.push_str(&format!("{i}\t{class}"));
        for p in dist {
            text.push_str(&format!("\t{p:.6}"));
        }
        text.push('\n');
    }
    emit(&a.out, &text)
}

/// Writes the input corpus back with every label replaced by its prediction.
pub fn cmd_label(a: &PredictArgs) -> Result<(), CliError> {
    let cks = load_checkpoints(&a.models)?;
    if cks[0].task != Task::Label {
        return Err(invalid(&a.models, "not a labelling model directory"));
    }
    let mut corpus = load_corpus(&a.input)?;
    let model = &cks[0].model;
    check_model_dims(model, &corpus, &a.input)?;
    corpus.trees = corpus
        .trees
        .iter()
        .map(|t| {
            let labels: Vec<usize> = model
                .label_marginals(&t.shape())
                .iter()
                .map(|d| argmax(d))
                .collect();
            t.with_labels(&labels)
        })
        .collect();
    emit(&a.out, &corpus.to_text())
}
