//! Experimental protocols: per-class likelihood classification, structure to
//! label prediction, their metrics, and the synthetic ternary-tree corpus.
//!
//! Entropies are natural-log Shannon entropies multiplied by 100, so a uniform
//! distribution over `K` outcomes scores `100 ln K`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gibbs::{train, GibbsError, SweepRecord};
use crate::inference::{marginal_log_likelihood, node_label_marginals};
use crate::math::{argmax, entropy, softmax};
use crate::model::{HyperParams, SpModelParams, TfModelParams};
use crate::sp::{sp_marginal_log_likelihood, sp_node_label_marginals, sp_train};
use crate::trees::{LabelledTree, TreeCorpus, TreeSpec};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tf,
    Sp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Tf => "tf",
            ModelKind::Sp => "sp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tf" => Ok(ModelKind::Tf),
            "sp" => Ok(ModelKind::Sp),
            other => Err(format!("unknown model kind '{other}' (expected tf or sp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Label,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::Label => "label",
        })
    }
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum TrainedModel {
    Tf(TfModelParams),
    Sp(SpModelParams),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Tf(_) => ModelKind::Tf,
            TrainedModel::Sp(_) => ModelKind::Sp,
        }
    }

    /// `(C, L, M)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            TrainedModel::Tf(p) => (p.states, p.arity, p.alphabet),
            TrainedModel::Sp(p) => (p.states, p.arity, p.alphabet),
        }
    }

    pub fn log_likelihood(&self, tree: &LabelledTree) -> f64 {
        match self {
            TrainedModel::Tf(p) => marginal_log_likelihood(tree, p),
            TrainedModel::Sp(p) => sp_marginal_log_likelihood(tree, p),
        }
    }

    /// Per-node label distributions for a bare structure.
    pub fn label_marginals(&self, structure: &LabelledTree) -> Vec<Vec<f64>> {
        match self {
            TrainedModel::Tf(p) => node_label_marginals(structure, p),
            TrainedModel::Sp(p) => sp_node_label_marginals(structure, p),
        }
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: TrainedModel,
    pub log: Vec<SweepRecord>,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
}

pub fn train_model(
    corpus: &TreeCorpus,
    hyper: &HyperParams,
    kind: ModelKind,
) -> Result<TrainedRun, TaskError> {
    Ok(match kind {
        ModelKind::Tf => {
            let chain = train(corpus, hyper)?;
            TrainedRun {
                model: TrainedModel::Tf(chain.params),
                log: chain.log,
                iteration: chain.iteration,
                rng: chain.rng,
            }
        }
        ModelKind::Sp => {
            let chain = sp_train(corpus, hyper)?;
            TrainedRun {
                model: TrainedModel::Sp(chain.params),
                log: chain.log,
                iteration: chain.iteration,
                rng: chain.rng,
            }
        }
    })
}

/// Independent seed for stream `stream` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng.random()
}

/// One model per class, all sharing `C`, `L`, `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBundle {
    pub hyper: HyperParams,
    pub models: Vec<TrainedModel>,
}

impl ClassifierBundle {
    pub fn new(hyper: HyperParams, models: Vec<TrainedModel>) -> Result<Self, TaskError> {
        if models.is_empty() {
            return Err(TaskError::Config("classifier needs at least one class".into()));
        }
        let dims = models[0].dims();
        if models.iter().any(|m| m.dims() != dims) {
            return Err(TaskError::Config(
                "class models disagree on C, L or M".into(),
            ));
        }
        Ok(Self { hyper, models })
    }

    pub fn class_count(&self) -> usize {
        self.models.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.models[0].dims()
    }
}

/// Training partition of `class`, with its derived hyper-parameters.
pub fn class_training_set(
    corpus: &TreeCorpus,
    hyper: &HyperParams,
    class: usize,
) -> Result<(TreeCorpus, HyperParams), TaskError> {
    let subset = corpus.class_subset(class);
    if subset.is_empty() {
        return Err(TaskError::Config(format!("class {class} has no training trees")));
    }
    let mut h = hyper.clone();
    h.seed = derive_seed(hyper.seed, class as u64);
    Ok((subset, h))
}

/// Trains one model per class, serially.
pub fn train_classifier(
    corpus: &TreeCorpus,
    hyper: &HyperParams,
    kind: ModelKind,
) -> Result<ClassifierBundle, TaskError> {
    if corpus.class_labels.is_none() {
        return Err(TaskError::Config("corpus has no class labels".into()));
    }
    let k = corpus.class_count();
    let models = (0..k)
        .map(|c| {
            let (subset, h) = class_training_set(corpus, hyper, c)?;
            Ok(train_model(&subset, &h, kind)?.model)
        })
        .collect::<Result<Vec<_>, TaskError>>()?;
    ClassifierBundle::new(hyper.clone(), models)
}

/// Argmax (ties to the lowest index) and the uniform-prior class posterior.
pub fn class_posterior(log_likelihoods: &[f64]) -> (usize, Vec<f64>) {
    (argmax(log_likelihoods), softmax(log_likelihoods))
}

pub fn classify(tree: &LabelledTree, bundle: &ClassifierBundle) -> (usize, Vec<f64>) {
    let ll: Vec<f64> = bundle.models.iter().map(|m| m.log_likelihood(tree)).collect();
    class_posterior(&ll)
}

/// Accuracy and entropy for one true category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: usize,
    pub support: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// Percentage of correct predictions.
    pub accuracy: f64,
    /// Mean entropy of the predicted distributions, natural log, times 100.
    pub entropy: f64,
    pub total: u64,
    pub breakdown: Vec<CategoryStats>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    /// Builds a report from predictions alone; `dists[i]` is the predicted
    /// distribution of item `i`.
    pub fn from_predictions(
        task: Task,
        categories: usize,
        truth: &[usize],
        predicted: &[usize],
        dists: &[Vec<f64>],
    ) -> Self {
        assert_eq!(truth.len(), predicted.len());
        assert_eq!(truth.len(), dists.len());
        let mut confusion = vec![vec![0u64; categories]; categories];
        let mut ent_sum = vec![0.0; categories];
        let mut total_ent = 0.0;
        for ((&t, &p), d) in truth.iter().zip(predicted).zip(dists) {
            confusion[t][p] += 1;
            let h = 100.0 * entropy(d);
            ent_sum[t] += h;
            total_ent += h;
        }
        let total = truth.len() as u64;
        let correct: u64 = (0..categories).map(|c| confusion[c][c]).sum();
        let breakdown = (0..categories)
            .map(|c| {
                let support: u64 = confusion[c].iter().sum();
                CategoryStats {
                    category: c,
                    support,
                    correct: confusion[c][c],
                    accuracy: pct(confusion[c][c], support),
                    entropy: if support == 0 { 0.0 } else { ent_sum[c] / support as f64 },
                }
            })
            .collect();
        Self {
            task,
            accuracy: pct(correct, total),
            entropy: if total == 0 { 0.0 } else { total_ent / total as f64 },
            total,
            breakdown,
            confusion,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("truth");
        for c in 0..k {
            let _ = write!(out, ",pred_{c}");
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let head = match self.task {
            Task::Classify => "class",
            Task::Label => "label",
        };
        let mut out = format!("{head:>8} {:>8} {:>10} {:>10}\n", "support", "accuracy", "entropy");
        for s in &self.breakdown {
            let _ = writeln!(
                out,
                "{:>8} {:>8} {:>10.2} {:>10.2}",
                s.category, s.support, s.accuracy, s.entropy
            );
        }
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>10.2} {:>10.2}",
            "all", self.total, self.accuracy, self.entropy
        );
        out
    }
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn check_dims(corpus: &TreeCorpus, arity: usize, alphabet: usize) -> Result<(), TaskError> {
    if corpus.arity != arity || corpus.alphabet != alphabet {
        return Err(TaskError::Config(format!(
            "test corpus has L={} M={}, model expects L={arity} M={alphabet}",
            corpus.arity, corpus.alphabet
        )));
    }
    Ok(())
}

pub fn eval_classification(
    test: &TreeCorpus,
    bundle: &ClassifierBundle,
) -> Result<EvalReport, TaskError> {
    let (_, l, m) = bundle.dims();
    check_dims(test, l, m)?;
    let truth = test
        .class_labels
        .clone()
        .ok_or_else(|| TaskError::Config("test corpus has no class labels".into()))?;
    let k = bundle.class_count();
    if let Some(&bad) = truth.iter().find(|&&c| c >= k) {
        return Err(TaskError::Config(format!(
            "test class {bad} unknown to a {k}-class bundle"
        )));
    }
    let (predicted, dists): (Vec<_>, Vec<_>) =
        test.trees.iter().map(|t| classify(t, bundle)).unzip();
    Ok(EvalReport::from_predictions(Task::Classify, k, &truth, &predicted, &dists))
}

pub fn eval_labelling(test: &TreeCorpus, model: &TrainedModel) -> Result<EvalReport, TaskError> {
    let (_, l, m) = model.dims();
    check_dims(test, l, m)?;
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    let mut dists = Vec::new();
    for tree in &test.trees {
        for (u, d) in model.label_marginals(&tree.shape()).into_iter().enumerate() {
            truth.push(tree.label(u));
            predicted.push(argmax(&d));
            dists.push(d);
        }
    }
    Ok(EvalReport::from_predictions(Task::Label, m, &truth, &predicted, &dists))
}

/// Accuracy (percent) of always predicting the most frequent training label.
pub fn majority_label_accuracy(train: &TreeCorpus, test: &TreeCorpus) -> f64 {
    let mut counts = vec![0u64; train.alphabet.max(test.alphabet)];
    for t in &train.trees {
        for u in 0..t.len() {
            counts[t.label(u)] += 1;
        }
    }
    let best = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i);
    let (mut hit, mut total) = (0u64, 0u64);
    for t in &test.trees {
        for u in 0..t.len() {
            total += 1;
            hit += u64::from(t.label(u) == best);
        }
    }
    pct(hit, total)
}

/// Generator settings for the ternary-tree corpus. Class 0 is
/// left-asymmetric, 1 symmetric, 2 right-asymmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub count_per_type: usize,
    /// Per-position child occupation probabilities, one triple per type.
    pub occupation: [[f64; 3]; 3],
    /// Maximum number of levels, root included.
    pub max_depth: usize,
    pub min_nodes: usize,
    /// Largest allowed `|n_1 - n_3|` for symmetric trees.
    pub symmetric_tolerance: usize,
    pub test_fraction: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            count_per_type: 260,
            occupation: [[0.8, 0.5, 0.2], [0.5, 0.5, 0.5], [0.2, 0.5, 0.8]],
            max_depth: 6,
            min_nodes: 3,
            symmetric_tolerance: 1,
            test_fraction: 3.0 / 13.0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.count_per_type == 0 {
            return Err(TaskError::Config("count per type must be at least 1".into()));
        }
        if self.max_depth < 2 || self.min_nodes > 3usize.pow(self.max_depth as u32) {
            return Err(TaskError::Config("depth cap too small for the minimum size".into()));
        }
        if !self.occupation.iter().flatten().all(|p| (0.0..=1.0).contains(p)) {
            return Err(TaskError::Config("occupation probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(TaskError::Config("test fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn grow<R: Rng + ?Sized>(p: &[f64; 3], depth: usize, max_depth: usize, rng: &mut R) -> TreeSpec {
    let children: Vec<Option<TreeSpec>> = if depth + 1 >= max_depth {
        vec![None, None, None]
    } else {
        p.iter()
            .map(|&pl| (rng.random::<f64>() < pl).then(|| grow(p, depth + 1, max_depth, rng)))
            .collect()
    };
    let label = children.iter().flatten().count();
    TreeSpec::node(label, children)
}

/// Node count at child positions 1 and 3.
pub fn side_counts(tree: &LabelledTree) -> (usize, usize) {
    let mut n = (0, 0);
    for node in tree.nodes() {
        match node.position {
            Some(0) => n.0 += 1,
            Some(2) => n.1 += 1,
            _ => {}
        }
    }
    n
}

fn accepts(kind: usize, tree: &LabelledTree, params: &SyntheticParams) -> bool {
    if tree.len() < params.min_nodes {
        return false;
    }
    let (n1, n3) = side_counts(tree);
    match kind {
        0 => n1 > n3,
        2 => n3 > n1,
        _ => n1.abs_diff(n3) <= params.symmetric_tolerance,
    }
}

/// Draws `count_per_type` accepted trees of each type. `L=3`, `M=4`; each
/// label is the node's child count and the class label is the type.
pub fn generate_synthetic<R: Rng + ?Sized>(
    params: &SyntheticParams,
    rng: &mut R,
) -> Result<TreeCorpus, TaskError> {
    params.validate()?;
    let mut corpus = TreeCorpus::new(3, 4);
    corpus.classes = Some(3);
    let mut classes = Vec::new();
    for kind in 0..3 {
        for _ in 0..params.count_per_type {
            let tree = loop {
                let spec = grow(&params.occupation[kind], 0, params.max_depth, rng);
                let t = LabelledTree::from_spec(&spec, 3, 4).expect("generated tree is valid");
                if accepts(kind, &t, params) {
                    break t;
                }
            };
            corpus.trees.push(tree);
            classes.push(kind);
        }
    }
    corpus.class_labels = Some(classes);
    Ok(corpus)
}

/// Per-class random split; each class sends `round(n * test_fraction)` trees
/// to the test side. Without class labels the corpus is one stratum.
pub fn stratified_split<R: Rng + ?Sized>(
    corpus: &TreeCorpus,
    test_fraction: f64,
    rng: &mut R,
) -> (TreeCorpus, TreeCorpus) {
    let labels = corpus
        .class_labels
        .clone()
        .unwrap_or_else(|| vec![0; corpus.len()]);
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        strata.entry(c).or_default().push(i);
    }
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for idx in strata.values_mut() {
        idx.shuffle(rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| TreeCorpus {
        trees: idx.iter().map(|&i| corpus.trees[i].clone()).collect(),
        class_labels: corpus
            .class_labels
            .as_ref()
            .map(|c| idx.iter().map(|&i| c[i]).collect()),
        ..corpus.clone()
    };
    (pick(&train_idx), pick(&test_idx))
}

/// Seeded generation followed by the stratified split: `(train, test)`.
pub fn synthetic_split(
    params: &SyntheticParams,
    seed: u64,
) -> Result<(TreeCorpus, TreeCorpus), TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = generate_synthetic(params, &mut rng)?;
    Ok(stratified_split(&corpus, params.test_fraction, &mut rng))
}
