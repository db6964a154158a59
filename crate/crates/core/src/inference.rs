//! Exact likelihoods and marginals for a fixed TF-BHTMM.
//!
//! All accumulation happens in natural-log space. The marginal likelihood is an
//! upward pass: child tables are first collapsed onto their clusters, then
//! combined through the core tensor, so the cost per node is
//! `O(C * prod_l k_l)` at worst and only occupied cluster combinations are
//! visited.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{log_add, log_sum_exp, sample_categorical};
use crate::model::{HardClustering, TfModelParams};
use crate::trees::{LabelledTree, NodeId};

/// Hidden states `q` for every node and cluster slots `z` for every child
/// position of every internal node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentAssignment {
    pub q: Vec<usize>,
    /// `z[u]` has `L` entries for internal nodes and is empty for leaves.
    pub z: Vec<Vec<usize>>,
}

impl LatentAssignment {
    /// Builds the assignment whose `z` slots agree with the hard clustering of
    /// the children's states.
    pub fn from_states(tree: &LabelledTree, q: Vec<usize>, clustering: &HardClustering) -> Self {
        let z = (0..tree.len())
            .map(|u| {
                if tree.is_leaf(u) {
                    Vec::new()
                } else {
                    clustering.tuple_of(&child_states(tree, u, &q, clustering.bottom()))
                }
            })
            .collect();
        Self { q, z }
    }

    /// Recomputes `z` after the clustering changed.
    pub fn refresh_z(&mut self, tree: &LabelledTree, clustering: &HardClustering) {
        for u in 0..tree.len() {
            if !tree.is_leaf(u) {
                self.z[u] = clustering.tuple_of(&child_states(tree, u, &self.q, clustering.bottom()));
            }
        }
    }
}

/// Extended states of `u`'s children; absent slots map to `bottom`.
pub fn child_states(tree: &LabelledTree, u: NodeId, q: &[usize], bottom: usize) -> Vec<usize> {
    tree.node(u)
        .children
        .iter()
        .map(|c| c.map_or(bottom, |c| q[c]))
        .collect()
}

/// `log P(x, Q, z)`. Returns negative infinity when some `z` slot disagrees
/// with the clustering of its child state.
pub fn complete_log_likelihood(
    tree: &LabelledTree,
    latent: &LatentAssignment,
    params: &TfModelParams,
) -> f64 {
    let h = &params.clustering;
    let mut total = 0.0;
    for u in 0..tree.len() {
        let j = latent.q[u];
        let emit = params.emission[j][tree.label(u)].ln();
        if tree.is_leaf(u) {
            total += params.pi[tree.prior_position(u)][j].ln() + emit;
        } else {
            let kids = child_states(tree, u, &latent.q, h.bottom());
            for (l, &jl) in kids.iter().enumerate() {
                if h.cluster(l, jl) != latent.z[u][l] {
                    return f64::NEG_INFINITY;
                }
            }
            total += params.core_row(&latent.z[u])[j].ln() + emit;
        }
    }
    total
}

/// Calls `f` for every tuple drawn from the per-position candidate lists.
pub(crate) fn for_each_tuple(lists: &[Vec<usize>], mut f: impl FnMut(&[usize])) {
    if lists.iter().any(Vec::is_empty) {
        return;
    }
    let mut idx = vec![0usize; lists.len()];
    let mut tuple: Vec<usize> = lists.iter().map(|l| l[0]).collect();
    loop {
        f(&tuple);
        let mut p = lists.len();
        loop {
            if p == 0 {
                return;
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < lists[p].len() {
                tuple[p] = lists[p][idx[p]];
                break;
            }
            idx[p] = 0;
            tuple[p] = lists[p][0];
        }
    }
}

/// Per-node upward tables `log P(x_subtree(u), Q_u = j)`.
pub fn upward_log_tables(tree: &LabelledTree, params: &TfModelParams) -> Vec<Vec<f64>> {
    let c = params.states;
    let h = &params.clustering;
    let log_b: Vec<Vec<f64>> = params
        .emission
        .iter()
        .map(|r| r.iter().map(|p| p.ln()).collect())
        .collect();
    let mut beta = vec![Vec::new(); tree.len()];
    for u in tree.bottom_up_order() {
        let x = tree.label(u);
        if tree.is_leaf(u) {
            let pi = &params.pi[tree.prior_position(u)];
            beta[u] = (0..c).map(|j| pi[j].ln() + log_b[j][x]).collect();
            continue;
        }
        // Cluster tables per position, and the clusters with non-zero mass.
        let mut gamma = Vec::with_capacity(tree.arity());
        let mut support = Vec::with_capacity(tree.arity());
        for l in 0..tree.arity() {
            let mut g = vec![f64::NEG_INFINITY; h.k(l)];
            match tree.child(u, l) {
                Some(ch) => {
                    for j in 0..c {
                        let i = h.cluster(l, j);
                        g[i] = log_add(g[i], beta[ch][j]);
                    }
                }
                None => g[h.cluster(l, h.bottom())] = 0.0,
            }
            support.push(
                (0..g.len())
                    .filter(|&i| g[i] > f64::NEG_INFINITY)
                    .collect::<Vec<_>>(),
            );
            gamma.push(g);
        }
        let mut acc = vec![f64::NEG_INFINITY; c];
        for_each_tuple(&support, |tuple| {
            let w: f64 = tuple.iter().enumerate().map(|(l, &i)| gamma[l][i]).sum();
            let row = params.core_row(tuple);
            for j in 0..c {
                acc[j] = log_add(acc[j], w + row[j].ln());
            }
        });
        beta[u] = (0..c).map(|j| log_b[j][x] + acc[j]).collect();
    }
    beta
}

/// `log P(x)`, summing over every hidden configuration.
pub fn marginal_log_likelihood(tree: &LabelledTree, params: &TfModelParams) -> f64 {
    let beta = upward_log_tables(tree, params);
    log_sum_exp(&beta[tree.root()])
}

/// Prior marginals `P(Q_u = j)` for a bare tree structure.
pub fn node_state_marginals(structure: &LabelledTree, params: &TfModelParams) -> Vec<Vec<f64>> {
    let c = params.states;
    let h = &params.clustering;
    let mut marg = vec![Vec::new(); structure.len()];
    for u in structure.bottom_up_order() {
        if structure.is_leaf(u) {
            marg[u] = params.pi[structure.prior_position(u)].clone();
            continue;
        }
        let mut pz = Vec::with_capacity(structure.arity());
        let mut support = Vec::with_capacity(structure.arity());
        for l in 0..structure.arity() {
            let mut p = vec![0.0; h.k(l)];
            match structure.child(u, l) {
                Some(ch) => {
                    for j in 0..c {
                        p[h.cluster(l, j)] += marg[ch][j];
                    }
                }
                None => p[h.cluster(l, h.bottom())] = 1.0,
            }
            support.push((0..p.len()).filter(|&i| p[i] > 0.0).collect::<Vec<_>>());
            pz.push(p);
        }
        let mut acc = vec![0.0; c];
        for_each_tuple(&support, |tuple| {
            let w: f64 = tuple.iter().enumerate().map(|(l, &i)| pz[l][i]).product();
            for (a, r) in acc.iter_mut().zip(params.core_row(tuple)) {
                *a += w * r;
            }
        });
        marg[u] = acc;
    }
    marg
}

/// Per-node label distributions for a bare structure (labels are ignored).
pub fn node_label_marginals(structure: &LabelledTree, params: &TfModelParams) -> Vec<Vec<f64>> {
    node_state_marginals(structure, params)
        .iter()
        .map(|pq| mix_emissions(pq, &params.emission))
        .collect()
}

/// `sum_j p(j) * b_j(.)`.
pub fn mix_emissions(state_probs: &[f64], emission: &[Vec<f64>]) -> Vec<f64> {
    let m = emission[0].len();
    let mut out = vec![0.0; m];
    for (p, row) in state_probs.iter().zip(emission) {
        for (o, b) in out.iter_mut().zip(row) {
            *o += p * b;
        }
    }
    out
}

/// Draws hidden states bottom-up from the generative model: leaves from the
/// positional prior, internal nodes from the core row at their children's
/// cluster tuple (drawn lazily if missing).
pub fn sample_latents<R: Rng + ?Sized>(
    structure: &LabelledTree,
    params: &mut TfModelParams,
    rng: &mut R,
) -> LatentAssignment {
    let n = structure.len();
    let mut q = vec![0usize; n];
    let mut z = vec![Vec::new(); n];
    for u in structure.bottom_up_order() {
        if structure.is_leaf(u) {
            q[u] = sample_categorical(&params.pi[structure.prior_position(u)], rng);
        } else {
            let kids = child_states(structure, u, &q, params.clustering.bottom());
            let tuple = params.clustering.tuple_of(&kids);
            q[u] = sample_categorical(params.core_row_or_draw(&tuple, rng), rng);
            z[u] = tuple;
        }
    }
    LatentAssignment { q, z }
}

/// Ancestral sample of hidden states and labels for a structure.
pub fn ancestral_sample<R: Rng + ?Sized>(
    structure: &LabelledTree,
    params: &mut TfModelParams,
    rng: &mut R,
) -> (LatentAssignment, Vec<usize>) {
    let latent = sample_latents(structure, params, rng);
    let labels = latent
        .q
        .iter()
        .map(|&j| sample_categorical(&params.emission[j], rng))
        .collect();
    (latent, labels)
}
