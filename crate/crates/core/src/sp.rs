//! Switching-parent baseline.
//!
//! The transition is a convex combination of per-position elementary
//! matrices: `P(Q_u = j | children) = sum_l P(S_u = l) A^l[j_l][j]`. Training
//! mirrors [`crate::gibbs`]: joint `(Q, S)` proposals accepted with a tempered
//! Metropolis-Hastings ratio, then conjugate Dirichlet draws of every table.
//! Switch weights and elementary rows use flat `Dirichlet(1)` priors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gibbs::{check_corpus, temperature, AnnealingSchedule, GibbsError, SweepRecord};
use crate::inference::{child_states, mix_emissions};
use crate::math::{log_sum_exp, sample_categorical, sample_dirichlet};
use crate::model::{init_sp_params, HyperParams, LatentProposal, SpModelParams};
use crate::trees::{LabelledTree, TreeCorpus};

/// Hidden states and, for internal nodes, the selected parent slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpLatentAssignment {
    pub q: Vec<usize>,
    /// `None` for leaves.
    pub s: Vec<Option<usize>>,
}

/// Mixed transition row for a tuple of extended child states.
pub fn sp_transition(params: &SpModelParams, child_states: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; params.states];
    for (l, (&w, &j)) in params.switch.iter().zip(child_states).enumerate() {
        for (o, a) in out.iter_mut().zip(&params.elementary[l][j]) {
            *o += w * a;
        }
    }
    out
}

pub fn sp_complete_log_likelihood(
    tree: &LabelledTree,
    latent: &SpLatentAssignment,
    params: &SpModelParams,
) -> f64 {
    let bottom = params.states;
    let mut total = 0.0;
    for u in 0..tree.len() {
        let j = latent.q[u];
        total += params.emission[j][tree.label(u)].ln();
        if tree.is_leaf(u) {
            total += params.pi[tree.prior_position(u)][j].ln();
        } else {
            let s = latent.s[u].expect("internal node without switch");
            let js = tree.child(u, s).map_or(bottom, |c| latent.q[c]);
            total += params.switch[s].ln() + params.elementary[s][js][j].ln();
        }
    }
    total
}

/// `log P(x)` by an upward pass over normalised child tables.
pub fn sp_marginal_log_likelihood(tree: &LabelledTree, params: &SpModelParams) -> f64 {
    let c = params.states;
    // log_z[u] = log P(x_subtree(u)); post[u] = P(Q_u | x_subtree(u)).
    let mut log_z = vec![0.0; tree.len()];
    let mut post: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    for u in tree.bottom_up_order() {
        let x = tree.label(u);
        let mut log_beta = vec![0.0; c];
        if tree.is_leaf(u) {
            let pi = &params.pi[tree.prior_position(u)];
            for j in 0..c {
                log_beta[j] = pi[j].ln() + params.emission[j][x].ln();
            }
        } else {
            let mut mixed = vec![0.0; c];
            let mut offset = 0.0;
            for l in 0..tree.arity() {
                let w = params.switch[l];
                match tree.child(u, l) {
                    Some(ch) => {
                        offset += log_z[ch];
                        for (jl, &p) in post[ch].iter().enumerate() {
                            for (m, a) in mixed.iter_mut().zip(&params.elementary[l][jl]) {
                                *m += w * p * a;
                            }
                        }
                    }
                    None => {
                        for (m, a) in mixed.iter_mut().zip(&params.elementary[l][c]) {
                            *m += w * a;
                        }
                    }
                }
            }
            for j in 0..c {
                log_beta[j] = offset + mixed[j].ln() + params.emission[j][x].ln();
            }
        }
        log_z[u] = log_sum_exp(&log_beta);
        post[u] = log_beta.iter().map(|b| (b - log_z[u]).exp()).collect();
    }
    log_z[tree.root()]
}

/// Prior marginals `P(Q_u = j)` for a bare structure.
pub fn sp_node_state_marginals(structure: &LabelledTree, params: &SpModelParams) -> Vec<Vec<f64>> {
    let c = params.states;
    let mut marg = vec![Vec::new(); structure.len()];
    for u in structure.bottom_up_order() {
        if structure.is_leaf(u) {
            marg[u] = params.pi[structure.prior_position(u)].clone();
            continue;
        }
        let mut acc = vec![0.0; c];
        for l in 0..structure.arity() {
            let w = params.switch[l];
            let child = match structure.child(u, l) {
                Some(ch) => marg[ch].clone(),
                None => {
                    let mut e = vec![0.0; c + 1];
                    e[c] = 1.0;
                    e
                }
            };
            for (jl, &p) in child.iter().enumerate() {
                for (a, e) in acc.iter_mut().zip(&params.elementary[l][jl]) {
                    *a += w * p * e;
                }
            }
        }
        marg[u] = acc;
    }
    marg
}

pub fn sp_node_label_marginals(structure: &LabelledTree, params: &SpModelParams) -> Vec<Vec<f64>> {
    sp_node_state_marginals(structure, params)
        .iter()
        .map(|p| mix_emissions(p, &params.emission))
        .collect()
}

/// Proposes `(Q, S)` bottom-up. With [`LatentProposal::Guided`] each node's
/// draw is weighted by the emission of its observed label.
pub fn sp_propose<R: Rng + ?Sized>(
    tree: &LabelledTree,
    params: &SpModelParams,
    kind: LatentProposal,
    rng: &mut R,
) -> SpLatentAssignment {
    let c = params.states;
    let n = tree.len();
    let mut q = vec![0usize; n];
    let mut s = vec![None; n];
    for u in tree.bottom_up_order() {
        let x = tree.label(u);
        let tilt = |j: usize| match kind {
            LatentProposal::Prior => 1.0,
            LatentProposal::Guided => params.emission[j][x],
        };
        if tree.is_leaf(u) {
            let pi = &params.pi[tree.prior_position(u)];
            let w: Vec<f64> = (0..c).map(|j| pi[j] * tilt(j)).collect();
            q[u] = pick(&w, pi, rng);
        } else {
            let kids = child_states(tree, u, &q, c);
            let w: Vec<f64> = (0..tree.arity())
                .flat_map(|l| {
                    let row = &params.elementary[l][kids[l]];
                    let sw = params.switch[l];
                    (0..c).map(move |j| sw * row[j])
                })
                .enumerate()
                .map(|(idx, p)| p * tilt(idx % c))
                .collect();
            let prior: Vec<f64> = (0..tree.arity())
                .flat_map(|l| {
                    let row = &params.elementary[l][kids[l]];
                    let sw = params.switch[l];
                    (0..c).map(move |j| sw * row[j])
                })
                .collect();
            let idx = pick(&w, &prior, rng);
            s[u] = Some(idx / c);
            q[u] = idx % c;
        }
    }
    SpLatentAssignment { q, s }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], fallback: &[f64], rng: &mut R) -> usize {
    if weights.iter().sum::<f64>() > 0.0 {
        sample_categorical(weights, rng)
    } else {
        sample_categorical(fallback, rng)
    }
}

/// `log g(latent)` of [`sp_propose`]; the proposal ignores the current state.
pub fn sp_proposal_log_density(
    tree: &LabelledTree,
    latent: &SpLatentAssignment,
    params: &SpModelParams,
    kind: LatentProposal,
) -> f64 {
    let c = params.states;
    let mut total = 0.0;
    for u in 0..tree.len() {
        let x = tree.label(u);
        let j = latent.q[u];
        let (numer, norm) = if tree.is_leaf(u) {
            let pi = &params.pi[tree.prior_position(u)];
            match kind {
                LatentProposal::Prior => (pi[j], 1.0),
                LatentProposal::Guided => (
                    pi[j] * params.emission[j][x],
                    (0..c).map(|i| pi[i] * params.emission[i][x]).sum(),
                ),
            }
        } else {
            let kids = child_states(tree, u, &latent.q, c);
            let s = latent.s[u].expect("internal node without switch");
            let joint = params.switch[s] * params.elementary[s][kids[s]][j];
            match kind {
                LatentProposal::Prior => (joint, 1.0),
                LatentProposal::Guided => {
                    let mixed = sp_transition(params, &kids);
                    (
                        joint * params.emission[j][x],
                        (0..c).map(|i| mixed[i] * params.emission[i][x]).sum(),
                    )
                }
            }
        };
        total += numer.ln() - norm.ln();
    }
    total
}

/// Tempered Metropolis-Hastings acceptance of a proposed `(Q, S)`.
pub fn sp_acceptance(
    tree: &LabelledTree,
    current: &SpLatentAssignment,
    proposed: &SpLatentAssignment,
    params: &SpModelParams,
    temperature: f64,
    kind: LatentProposal,
) -> f64 {
    let num = sp_complete_log_likelihood(tree, proposed, params)
        + sp_proposal_log_density(tree, current, params, kind);
    let den = sp_complete_log_likelihood(tree, current, params)
        + sp_proposal_log_density(tree, proposed, params, kind);
    if num == f64::NEG_INFINITY {
        return 0.0;
    }
    if den == f64::NEG_INFINITY {
        return 1.0;
    }
    ((num - den) / temperature).min(0.0).exp()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpStats {
    pub leaf_counts: Vec<Vec<u64>>,
    pub emission_counts: Vec<Vec<u64>>,
    pub switch_counts: Vec<u64>,
    /// `[l][extended child state][parent state]`.
    pub elementary_counts: Vec<Vec<Vec<u64>>>,
}

impl SpStats {
    pub fn from_latents(
        trees: &[LabelledTree],
        latents: &[SpLatentAssignment],
        hyper: &HyperParams,
    ) -> Self {
        let (c, l, m) = (hyper.states, hyper.arity, hyper.alphabet);
        let mut st = Self {
            leaf_counts: vec![vec![0; c]; l],
            emission_counts: vec![vec![0; m]; c],
            switch_counts: vec![0; l],
            elementary_counts: vec![vec![vec![0; c]; c + 1]; l],
        };
        for (tree, lat) in trees.iter().zip(latents) {
            for u in 0..tree.len() {
                let j = lat.q[u];
                st.emission_counts[j][tree.label(u)] += 1;
                if tree.is_leaf(u) {
                    st.leaf_counts[tree.prior_position(u)][j] += 1;
                } else {
                    let s = lat.s[u].unwrap();
                    let js = tree.child(u, s).map_or(c, |ch| lat.q[ch]);
                    st.switch_counts[s] += 1;
                    st.elementary_counts[s][js][j] += 1;
                }
            }
        }
        st
    }
}

fn dirichlet_post<R: Rng + ?Sized>(prior: f64, n: &[u64], rng: &mut R) -> Vec<f64> {
    let a: Vec<f64> = n.iter().map(|&c| prior + c as f64).collect();
    sample_dirichlet(&a, rng)
}

pub fn sp_resample_parameters<R: Rng + ?Sized>(
    stats: &SpStats,
    hyper: &HyperParams,
    rng: &mut R,
) -> SpModelParams {
    SpModelParams {
        states: hyper.states,
        arity: hyper.arity,
        alphabet: hyper.alphabet,
        pi: stats
            .leaf_counts
            .iter()
            .map(|n| dirichlet_post(hyper.gamma, n, rng))
            .collect(),
        emission: stats
            .emission_counts
            .iter()
            .map(|n| dirichlet_post(hyper.beta, n, rng))
            .collect(),
        switch: dirichlet_post(1.0, &stats.switch_counts, rng),
        elementary: stats
            .elementary_counts
            .iter()
            .map(|rows| rows.iter().map(|n| dirichlet_post(1.0, n, rng)).collect())
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct SpChainState {
    pub hyper: HyperParams,
    pub params: SpModelParams,
    pub latents: Vec<SpLatentAssignment>,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub log: Vec<SweepRecord>,
}

impl SpChainState {
    pub fn init(corpus: &TreeCorpus, hyper: &HyperParams) -> Result<Self, GibbsError> {
        check_corpus(corpus, hyper)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let params = init_sp_params(hyper, &mut rng)?;
        let latents = corpus
            .trees
            .iter()
            .map(|t| sp_propose(t, &params, LatentProposal::Prior, &mut rng))
            .collect();
        Ok(Self {
            hyper: hyper.clone(),
            params,
            latents,
            iteration: 0,
            rng,
            log: Vec::new(),
        })
    }

    pub fn sweep(&mut self, corpus: &TreeCorpus) -> &SweepRecord {
        let t = temperature(self.iteration, &AnnealingSchedule::from_hyper(&self.hyper));
        let kind = self.hyper.proposal;
        let mut accepted = 0usize;
        for (tree, current) in corpus.trees.iter().zip(self.latents.iter_mut()) {
            let proposed = sp_propose(tree, &self.params, kind, &mut self.rng);
            let a = sp_acceptance(tree, current, &proposed, &self.params, t, kind);
            if self.rng.random::<f64>() < a {
                *current = proposed;
                accepted += 1;
            }
        }
        let stats = SpStats::from_latents(&corpus.trees, &self.latents, &self.hyper);
        self.params = sp_resample_parameters(&stats, &self.hyper, &mut self.rng);
        let ll = corpus
            .trees
            .iter()
            .map(|tree| sp_marginal_log_likelihood(tree, &self.params))
            .sum();
        self.log.push(SweepRecord {
            iteration: self.iteration,
            temperature: t,
            log_likelihood: ll,
            latent_acceptance_rate: accepted as f64 / corpus.len() as f64,
            size_accepted: false,
            k: Vec::new(),
        });
        self.iteration += 1;
        self.log.last().unwrap()
    }
}

/// Trains the baseline for `hyper.iterations` sweeps from `hyper.seed`.
pub fn sp_train(corpus: &TreeCorpus, hyper: &HyperParams) -> Result<SpChainState, GibbsError> {
    let mut chain = SpChainState::init(corpus, hyper)?;
    for _ in 0..hyper.iterations {
        chain.sweep(corpus);
    }
    Ok(chain)
}
