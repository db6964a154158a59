//! Annealed Metropolis-within-Gibbs learning for TF-BHTMM.
//!
//! One sweep runs three steps:
//!
//! 1. a latent-state proposal per tree, accepted or rejected independently;
//! 2. one split/merge move on the size vector `k` (stochastic search for
//!    variable selection), accepted on the collapsed marginal likelihood;
//! 3. conjugate Dirichlet draws of `pi`, `b`, the occupied core rows, and the
//!    base measure `lambda0` through a Bernoulli cascade on the table counts.
//!
//! Every acceptance ratio is raised to `1/T(m)` where
//! `T(m) = max(T0^(1 - m/m0), 1)`.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{
    child_states, complete_log_likelihood, marginal_log_likelihood, sample_latents,
    LatentAssignment,
};
use crate::math::{ln_multivariate_beta, sample_categorical, sample_dirichlet};
use crate::model::{
    init_params, size_prior_log, HardClustering, HyperParams, LatentProposal, LatentRule,
    ModelError, TfModelParams,
};
use crate::trees::{LabelledTree, TreeCorpus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GibbsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub t0: f64,
    pub m0: usize,
}

impl AnnealingSchedule {
    pub fn from_hyper(h: &HyperParams) -> Self {
        Self { t0: h.t0, m0: h.m0 }
    }
}

/// `max(T0^(1 - m/m0), 1)`.
pub fn temperature(m: usize, sched: &AnnealingSchedule) -> f64 {
    sched
        .t0
        .powf(1.0 - m as f64 / sched.m0 as f64)
        .max(1.0)
}

/// Counts per parent hidden state, keyed by a tuple.
pub type TupleCounts = BTreeMap<Vec<usize>, Vec<u64>>;

/// Count tables driving every conjugate update.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SufficientStats {
    /// `n^l(c)`: leaves at position `l` in state `c`.
    pub leaf_counts: Vec<Vec<u64>>,
    /// `n_j(d)`: nodes in state `j` emitting label `d`.
    pub emission_counts: Vec<Vec<u64>>,
    /// Parent-state counts keyed by the tuple of extended child states.
    /// Cluster-tuple counts for any clustering are derived from these.
    pub joint_counts: TupleCounts,
}

impl SufficientStats {
    pub fn new(states: usize, arity: usize, alphabet: usize) -> Self {
        Self {
            leaf_counts: vec![vec![0; states]; arity],
            emission_counts: vec![vec![0; alphabet]; states],
            joint_counts: TupleCounts::new(),
        }
    }

    pub fn from_latents(
        trees: &[LabelledTree],
        latents: &[LatentAssignment],
        states: usize,
        arity: usize,
        alphabet: usize,
    ) -> Self {
        let mut s = Self::new(states, arity, alphabet);
        for (t, lat) in trees.iter().zip(latents) {
            s.add_tree(t, &lat.q);
        }
        s
    }

    pub fn add_tree(&mut self, tree: &LabelledTree, q: &[usize]) {
        let bottom = self.emission_counts.len();
        for u in 0..tree.len() {
            self.emission_counts[q[u]][tree.label(u)] += 1;
            if tree.is_leaf(u) {
                self.leaf_counts[tree.prior_position(u)][q[u]] += 1;
            } else {
                let key = child_states(tree, u, q, bottom);
                self.joint_counts
                    .entry(key)
                    .or_insert_with(|| vec![0; bottom])[q[u]] += 1;
            }
        }
    }

    /// `n_{i_u}(j)` under `clustering`; only occupied tuples appear.
    pub fn tuple_counts(&self, clustering: &HardClustering) -> TupleCounts {
        let mut out = TupleCounts::new();
        for (children, counts) in &self.joint_counts {
            let entry = out
                .entry(clustering.tuple_of(children))
                .or_insert_with(|| vec![0; counts.len()]);
            for (e, c) in entry.iter_mut().zip(counts) {
                *e += c;
            }
        }
        out
    }

    pub fn node_count(&self) -> u64 {
        self.emission_counts.iter().flatten().sum()
    }
}

/// `log L(k) = sum over tuples of log B(alpha*lambda0 + n) - log B(alpha*lambda0)`.
pub fn marginal_likelihood_k(
    counts: &TupleCounts,
    alpha: f64,
    lambda0: &[f64],
) -> Result<f64, GibbsError> {
    let prior: Vec<f64> = lambda0.iter().map(|&w| alpha * w).collect();
    if let Some(bad) = prior.iter().find(|&&a| !(a > 0.0)) {
        return Err(GibbsError::Domain(format!(
            "alpha * lambda0 has non-positive component {bad}"
        )));
    }
    let base = ln_multivariate_beta(&prior);
    let mut total = 0.0;
    let mut post = vec![0.0; prior.len()];
    for n in counts.values() {
        if n.iter().all(|&c| c == 0) {
            continue;
        }
        for ((p, a), &c) in post.iter_mut().zip(&prior).zip(n) {
            *p = a + c as f64;
        }
        total += ln_multivariate_beta(&post) - base;
    }
    Ok(total)
}

/// Ancestral proposal from the generative model (labels ignored).
pub fn propose_latents<R: Rng + ?Sized>(
    tree: &LabelledTree,
    params: &mut TfModelParams,
    rng: &mut R,
) -> LatentAssignment {
    sample_latents(tree, params, rng)
}

/// Emission-weighted proposal. Leaves draw `Q' ∝ pi^l(j) b_j(x)`; internal
/// nodes draw `Q' ∝ lambda_z(j) b_j(x)` with `z` the current cluster tuple,
/// then take `z'` from the clustering of the proposed children.
pub fn propose_latents_guided<R: Rng + ?Sized>(
    tree: &LabelledTree,
    current: &LatentAssignment,
    params: &mut TfModelParams,
    rng: &mut R,
) -> LatentAssignment {
    let n = tree.len();
    let c = params.states;
    let mut q = vec![0usize; n];
    let mut w = vec![0.0; c];
    for u in tree.bottom_up_order() {
        let x = tree.label(u);
        let prior: Vec<f64> = if tree.is_leaf(u) {
            params.pi[tree.prior_position(u)].clone()
        } else {
            params.core_row_or_draw(&current.z[u], rng).to_vec()
        };
        for j in 0..c {
            w[j] = prior[j] * params.emission[j][x];
        }
        q[u] = if w.iter().sum::<f64>() > 0.0 {
            sample_categorical(&w, rng)
        } else {
            sample_categorical(&prior, rng)
        };
    }
    let proposed = LatentAssignment::from_states(tree, q, &params.clustering);
    for z in proposed.z.iter().filter(|z| !z.is_empty()) {
        params.core_row_or_draw(z, rng);
    }
    proposed
}

/// `log g(to | from)` for the given proposal kind.
pub fn proposal_log_density(
    tree: &LabelledTree,
    from: &LatentAssignment,
    to: &LatentAssignment,
    params: &TfModelParams,
    kind: LatentProposal,
) -> f64 {
    let c = params.states;
    let mut total = 0.0;
    for u in 0..tree.len() {
        let x = tree.label(u);
        let j = to.q[u];
        let prior: &[f64] = if tree.is_leaf(u) {
            &params.pi[tree.prior_position(u)]
        } else {
            match kind {
                LatentProposal::Prior => params.core_row(&to.z[u]),
                LatentProposal::Guided => params.core_row(&from.z[u]),
            }
        };
        total += match kind {
            LatentProposal::Prior => prior[j].ln(),
            LatentProposal::Guided => {
                let z: f64 = (0..c).map(|i| prior[i] * params.emission[i][x]).sum();
                (prior[j] * params.emission[j][x] / z).ln()
            }
        };
    }
    total
}

/// Tempered acceptance from separate numerator and denominator log terms.
fn tempered(num: f64, den: f64, temperature: f64) -> f64 {
    if num == f64::NEG_INFINITY {
        return 0.0;
    }
    if den == f64::NEG_INFINITY {
        return 1.0;
    }
    let r = (num - den) / temperature;
    if r >= 0.0 {
        1.0
    } else {
        r.exp()
    }
}

/// Acceptance probability for a latent proposal.
///
/// With [`LatentRule::AsPrinted`] the ratio is
/// `Π λ_z'(Q') / Π λ_z(Q) · Π λ_z'(Q) / Π λ_z(Q')` over internal nodes,
/// where `λ_z(j)` is the core row at node `u`'s `z` tuple evaluated at `j`.
pub fn latent_acceptance(
    tree: &LabelledTree,
    current: &LatentAssignment,
    proposed: &LatentAssignment,
    params: &TfModelParams,
    temperature: f64,
    rule: LatentRule,
    proposal: LatentProposal,
) -> f64 {
    let (num, den) = match rule {
        LatentRule::AsPrinted | LatentRule::CoreRatio => {
            let mut new_new = 0.0;
            let mut old_old = 0.0;
            let mut new_old = 0.0;
            let mut old_new = 0.0;
            for u in (0..tree.len()).filter(|&u| !tree.is_leaf(u)) {
                let row_new = params.core_row(&proposed.z[u]);
                let row_old = params.core_row(&current.z[u]);
                new_new += row_new[proposed.q[u]].ln();
                old_old += row_old[current.q[u]].ln();
                new_old += row_new[current.q[u]].ln();
                old_new += row_old[proposed.q[u]].ln();
            }
            if rule == LatentRule::AsPrinted {
                (new_new + new_old, old_old + old_new)
            } else {
                (new_new, old_old)
            }
        }
        LatentRule::Exact => (
            complete_log_likelihood(tree, proposed, params)
                + proposal_log_density(tree, proposed, current, params, proposal),
            complete_log_likelihood(tree, current, params)
                + proposal_log_density(tree, current, proposed, params, proposal),
        ),
    };
    tempered(num, den, temperature)
}

/// One split/merge move on the size vector, repaired to keep the number of
/// positions with `k_l != 1` inside `[L_min, L_max]`.
pub fn propose_size_move<R: Rng + ?Sized>(
    clustering: &HardClustering,
    hyper: &HyperParams,
    rng: &mut R,
) -> HardClustering {
    let arity = clustering.arity();
    let kmax = clustering.extended_size();
    let mut next = clustering.clone();
    let l = rng.random_range(0..arity);
    let mut increase = rng.random::<bool>();
    if next.k(l) == 1 {
        increase = true;
    }
    if next.k(l) == kmax {
        increase = false;
    }
    if increase {
        next.split(l, rng);
    } else {
        next.merge(l, rng);
    }

    if next.active_count() > hyper.l_max {
        let others: Vec<usize> = (0..arity).filter(|&p| p != l && next.k(p) > 1).collect();
        if let Some(&p) = others.choose(rng) {
            next.merge(p, rng);
        }
        if next.active_count() > hyper.l_max {
            // Undo the increase at `l`; any forced decrease elsewhere stays.
            let mut rolled = next.clone();
            rolled_back(&mut rolled, clustering, l);
            next = rolled;
        }
    }
    if next.active_count() < hyper.l_min {
        let singles: Vec<usize> = (0..arity).filter(|&p| next.k(p) == 1).collect();
        if let Some(&p) = singles.choose(rng) {
            next.split(p, rng);
        }
    }
    next
}

fn rolled_back(next: &mut HardClustering, original: &HardClustering, l: usize) {
    let mut assign: Vec<Vec<usize>> = (0..next.arity()).map(|p| next.assignment(p).to_vec()).collect();
    assign[l] = original.assignment(l).to_vec();
    *next = HardClustering::from_assignments(next.states(), assign)
        .expect("rollback keeps a valid assignment");
}

/// `min{[L(k')/L(k) · Π p(k'_l)/Π p(k_l)]^(1/T), 1}`.
pub fn size_acceptance(
    old: &HardClustering,
    new: &HardClustering,
    stats: &SufficientStats,
    hyper: &HyperParams,
    lambda0: &[f64],
    temperature: f64,
) -> Result<f64, GibbsError> {
    let log_prior = |h: &HardClustering| -> f64 {
        h.sizes().iter().map(|&k| size_prior_log(k, hyper.phi)).sum()
    };
    let num = marginal_likelihood_k(&stats.tuple_counts(new), hyper.alpha, lambda0)?
        + log_prior(new);
    let den = marginal_likelihood_k(&stats.tuple_counts(old), hyper.alpha, lambda0)?
        + log_prior(old);
    Ok(tempered(num, den, temperature))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampledParams {
    pub pi: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    pub core: BTreeMap<Vec<usize>, Vec<f64>>,
}

/// Posterior draws `pi^l ~ Dir(gamma + n^l)`, `b_j ~ Dir(beta + n_j)` and
/// `lambda_i ~ Dir(alpha*lambda0 + n_i)` for every occupied tuple.
pub fn resample_parameters<R: Rng + ?Sized>(
    stats: &SufficientStats,
    tuple_counts: &TupleCounts,
    hyper: &HyperParams,
    lambda0: &[f64],
    rng: &mut R,
) -> ResampledParams {
    let post = |prior: f64, n: &[u64]| -> Vec<f64> { n.iter().map(|&c| prior + c as f64).collect() };
    let pi = stats
        .leaf_counts
        .iter()
        .map(|n| sample_dirichlet(&post(hyper.gamma, n), rng))
        .collect();
    let emission = stats
        .emission_counts
        .iter()
        .map(|n| sample_dirichlet(&post(hyper.beta, n), rng))
        .collect();
    let mut core = BTreeMap::new();
    for (tuple, n) in tuple_counts {
        if n.iter().all(|&c| c == 0) {
            continue;
        }
        let alpha: Vec<f64> = lambda0
            .iter()
            .zip(n)
            .map(|(&w, &c)| hyper.alpha * w + c as f64)
            .collect();
        core.insert(tuple.clone(), sample_dirichlet(&alpha, rng));
    }
    ResampledParams { pi, emission, core }
}

/// Auxiliary table counts `m_0(c)` from the Bernoulli cascade: for every
/// tuple and state, `n` trials with success probability
/// `alpha*lambda0(c) / (p - 1 + alpha*lambda0(c))`, `p = 1..n`.
pub fn lambda0_table_counts<R: Rng + ?Sized>(
    tuple_counts: &TupleCounts,
    alpha: f64,
    lambda0: &[f64],
    rng: &mut R,
) -> Vec<u64> {
    let mut m0 = vec![0u64; lambda0.len()];
    for n in tuple_counts.values() {
        for (c, &count) in n.iter().enumerate() {
            let a = alpha * lambda0[c];
            for p in 1..=count {
                let prob = a / ((p - 1) as f64 + a);
                if rng.random::<f64>() < prob {
                    m0[c] += 1;
                }
            }
        }
    }
    m0
}

/// `lambda0 ~ Dir(alpha0/C + m_0(1), ..., alpha0/C + m_0(C))`.
pub fn resample_lambda0<R: Rng + ?Sized>(
    tuple_counts: &TupleCounts,
    alpha: f64,
    alpha0: f64,
    lambda0: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let c = lambda0.len();
    let m0 = lambda0_table_counts(tuple_counts, alpha, lambda0, rng);
    let conc: Vec<f64> = m0.iter().map(|&m| alpha0 / c as f64 + m as f64).collect();
    sample_dirichlet(&conc, rng)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub iteration: usize,
    pub temperature: f64,
    pub log_likelihood: f64,
    pub latent_acceptance_rate: f64,
    pub size_accepted: bool,
    pub k: Vec<usize>,
}

impl SweepRecord {
    pub const TSV_HEADER: &'static str =
        "iteration\ttemperature\tlog_likelihood\tlatent_acceptance\tsize_accepted\tk";

    pub fn to_tsv(&self) -> String {
        let k: Vec<String> = self.k.iter().map(usize::to_string).collect();
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.iteration,
            self.temperature,
            self.log_likelihood,
            self.latent_acceptance_rate,
            u8::from(self.size_accepted),
            k.join(",")
        )
    }
}

/// Full state of one sampler chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub hyper: HyperParams,
    pub params: TfModelParams,
    pub latents: Vec<LatentAssignment>,
    pub stats: SufficientStats,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub latent_accepted: u64,
    pub latent_proposed: u64,
    pub size_accepted: u64,
    pub size_proposed: u64,
    pub log: Vec<SweepRecord>,
}

pub(crate) fn check_corpus(corpus: &TreeCorpus, hyper: &HyperParams) -> Result<(), GibbsError> {
    hyper.validate()?;
    if corpus.arity != hyper.arity || corpus.alphabet != hyper.alphabet {
        return Err(GibbsError::Config(format!(
            "corpus has L={} M={} but hyper-parameters say L={} M={}",
            corpus.arity, corpus.alphabet, hyper.arity, hyper.alphabet
        )));
    }
    if corpus.is_empty() {
        return Err(GibbsError::Config("empty training corpus".into()));
    }
    corpus
        .validate()
        .map_err(|e| GibbsError::Config(e.to_string()))
}

impl ChainState {
    /// Initial parameters and ancestral latent states for every tree.
    pub fn init(corpus: &TreeCorpus, hyper: &HyperParams) -> Result<Self, GibbsError> {
        check_corpus(corpus, hyper)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut params = init_params(hyper, &mut rng)?;
        let latents: Vec<_> = corpus
            .trees
            .iter()
            .map(|t| sample_latents(t, &mut params, &mut rng))
            .collect();
        let stats = SufficientStats::from_latents(
            &corpus.trees,
            &latents,
            hyper.states,
            hyper.arity,
            hyper.alphabet,
        );
        Ok(Self {
            hyper: hyper.clone(),
            params,
            latents,
            stats,
            iteration: 0,
            rng,
            latent_accepted: 0,
            latent_proposed: 0,
            size_accepted: 0,
            size_proposed: 0,
            log: Vec::new(),
        })
    }

    /// Runs one full sweep of the three sampler steps.
    pub fn sweep(&mut self, corpus: &TreeCorpus) -> Result<&SweepRecord, GibbsError> {
        let hyper = &self.hyper;
        let t = temperature(self.iteration, &AnnealingSchedule::from_hyper(hyper));
        let rng = &mut self.rng;
        let params = &mut self.params;

        // Step 1: latent states.
        let mut accepted = 0u64;
        for (tree, current) in corpus.trees.iter().zip(self.latents.iter_mut()) {
            let proposed = match hyper.proposal {
                LatentProposal::Prior => propose_latents(tree, params, rng),
                LatentProposal::Guided => propose_latents_guided(tree, current, params, rng),
            };
            let a = latent_acceptance(tree, current, &proposed, params, t, hyper.rule, hyper.proposal);
            if rng.random::<f64>() < a {
                *current = proposed;
                accepted += 1;
            }
        }
        self.latent_accepted += accepted;
        self.latent_proposed += corpus.len() as u64;
        self.stats = SufficientStats::from_latents(
            &corpus.trees,
            &self.latents,
            hyper.states,
            hyper.arity,
            hyper.alphabet,
        );

        // Step 2: size vector and mode matrices.
        let candidate = propose_size_move(&params.clustering, hyper, rng);
        let a = size_acceptance(&params.clustering, &candidate, &self.stats, hyper, &params.lambda0, t)?;
        let size_ok = rng.random::<f64>() < a;
        self.size_proposed += 1;
        if size_ok {
            self.size_accepted += 1;
            params.clustering = candidate;
            for (tree, lat) in corpus.trees.iter().zip(self.latents.iter_mut()) {
                lat.refresh_z(tree, &params.clustering);
            }
        }

        // Step 3: parameters.
        let counts = self.stats.tuple_counts(&params.clustering);
        let fresh = resample_parameters(&self.stats, &counts, hyper, &params.lambda0, rng);
        params.pi = fresh.pi;
        params.emission = fresh.emission;
        params.core = fresh.core;
        params.lambda0 = resample_lambda0(&counts, hyper.alpha, hyper.alpha0, &params.lambda0, rng);

        let log_likelihood = corpus
            .trees
            .iter()
            .map(|t| marginal_log_likelihood(t, params))
            .sum();
        self.log.push(SweepRecord {
            iteration: self.iteration,
            temperature: t,
            log_likelihood,
            latent_acceptance_rate: accepted as f64 / corpus.len() as f64,
            size_accepted: size_ok,
            k: params.clustering.sizes().to_vec(),
        });
        self.iteration += 1;
        debug_assert_eq!(
            self.stats,
            SufficientStats::from_latents(
                &corpus.trees,
                &self.latents,
                self.hyper.states,
                self.hyper.arity,
                self.hyper.alphabet
            )
        );
        Ok(self.log.last().unwrap())
    }

    /// Sum of complete log-likelihoods of the current latent states.
    pub fn complete_log_likelihood(&self, corpus: &TreeCorpus) -> f64 {
        let terms: Vec<f64> = corpus
            .trees
            .iter()
            .zip(&self.latents)
            .map(|(t, l)| complete_log_likelihood(t, l, &self.params))
            .collect();
        terms.iter().sum()
    }
}

/// Runs the full sampler and returns the final chain state.
pub fn train(corpus: &TreeCorpus, hyper: &HyperParams) -> Result<ChainState, GibbsError> {
    let mut chain = ChainState::init(corpus, hyper)?;
    for _ in 0..hyper.iterations {
        chain.sweep(corpus)?;
    }
    Ok(chain)
}
