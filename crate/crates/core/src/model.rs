//! Model parameters, hyper-parameters and the hard-clustering mode matrices.
//!
//! Child states live in an extended alphabet of size `C + 1`: indices
//! `0..C` are hidden states and index `C` is the bottom state standing in for
//! an absent child. Every position `l` maps each extended state to one of
//! `k_l` clusters; the core tensor is indexed by one cluster per position.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::sample_dirichlet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid hyper-parameters: {0}")]
    InvalidHyper(String),
    #[error("invalid clustering: {0}")]
    InvalidClustering(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// How step 1 of the sampler proposes new hidden states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LatentProposal {
    /// Plain ancestral draw from the generative model, ignoring labels.
    Prior,
    /// Each node's draw is weighted by the emission of its observed label;
    /// internal nodes condition on the current cluster tuple of their children.
    #[default]
    Guided,
}

/// Acceptance ratio used for the latent-state proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LatentRule {
    /// `[Π λ_z'(Q') / Π λ_z(Q) · Π λ_z'(Q) / Π λ_z(Q')]^(1/T)`, internal nodes only.
    #[default]
    AsPrinted,
    /// `[Π λ_z'(Q') / Π λ_z(Q)]^(1/T)`.
    CoreRatio,
    /// Full Metropolis-Hastings ratio of the complete likelihood and the
    /// proposal density, tempered by `1/T`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Hidden-state count `C`.
    pub states: usize,
    /// Maximum out-degree `L`.
    pub arity: usize,
    /// Label alphabet size `M`.
    pub alphabet: usize,
    /// Decay of the size prior `exp(-phi * k)`.
    pub phi: f64,
    pub l_min: usize,
    pub l_max: usize,
    /// Concentration of the core-tensor rows around `lambda0`.
    pub alpha: f64,
    /// Concentration of the base measure `lambda0`.
    pub alpha0: f64,
    /// Leaf-prior concentration.
    pub gamma: f64,
    /// Emission concentration.
    pub beta: f64,
    /// Initial annealing temperature.
    pub t0: f64,
    /// Iteration at which the temperature reaches one.
    pub m0: usize,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub proposal: LatentProposal,
    #[serde(default)]
    pub rule: LatentRule,
}

impl HyperParams {
    /// Defaults: phi = 2, L_min = 1, L_max = min(5, L), alpha = alpha0 = C,
    /// flat gamma = beta = 1, T0 = 10, 100 iterations with m0 = 50.
    pub fn new(states: usize, arity: usize, alphabet: usize) -> Self {
        let iterations = 100;
        Self {
            states,
            arity,
            alphabet,
            phi: 2.0,
            l_min: 1,
            l_max: arity.min(5),
            alpha: states as f64,
            alpha0: states as f64,
            gamma: 1.0,
            beta: 1.0,
            t0: 10.0,
            m0: (iterations / 2).max(1),
            iterations,
            seed: 0,
            proposal: LatentProposal::default(),
            rule: LatentRule::default(),
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self.m0 = (iterations / 2).max(1);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidHyper(m));
        if self.states == 0 || self.arity == 0 || self.alphabet == 0 {
            return bad("C, L and M must all be >= 1".into());
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return bad(format!("phi must be positive, got {}", self.phi));
        }
        if !(1 <= self.l_min && self.l_min <= self.l_max && self.l_max <= self.arity) {
            return bad(format!(
                "need 1 <= L_min ({}) <= L_max ({}) <= L ({})",
                self.l_min, self.l_max, self.arity
            ));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("alpha0", self.alpha0),
            ("gamma", self.gamma),
            ("beta", self.beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.t0 >= 1.0 && self.t0.is_finite()) {
            return bad(format!("T0 must be >= 1, got {}", self.t0));
        }
        if self.m0 == 0 {
            return bad("m0 must be >= 1".into());
        }
        Ok(())
    }
}

/// Unnormalised log prior `-phi * k` of a position's cluster count.
pub fn size_prior_log(k: usize, phi: f64) -> f64 {
    -phi * k as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageCost {
    /// `C^(L+1)` entries of the explicit transition tensor.
    pub explicit: u128,
    /// Set when `explicit` did not fit and was clamped to `u128::MAX`.
    pub explicit_saturated: bool,
    /// `C * prod(k_l)` core entries plus `sum((C+1) * k_l)` mode entries.
    pub factored: u128,
}

pub fn storage_cost(states: usize, arity: usize, k: &[usize]) -> StorageCost {
    let c = states as u128;
    let explicit = u32::try_from(arity + 1)
        .ok()
        .and_then(|e| c.checked_pow(e));
    let core = k
        .iter()
        .try_fold(c, |acc, &kl| acc.checked_mul(kl as u128))
        .unwrap_or(u128::MAX);
    let modes: u128 = k.iter().map(|&kl| (c + 1) * kl as u128).sum();
    StorageCost {
        explicit: explicit.unwrap_or(u128::MAX),
        explicit_saturated: explicit.is_none(),
        factored: core.saturating_add(modes),
    }
}

/// Deterministic assignment of extended child states to clusters, per position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardClustering {
    states: usize,
    /// `assign[l][j]` is the cluster of extended state `j` at position `l`.
    assign: Vec<Vec<usize>>,
    sizes: Vec<usize>,
}

impl HardClustering {
    /// Every position has a single cluster (`k_l = 1`).
    pub fn trivial(states: usize, arity: usize) -> Self {
        Self {
            states,
            assign: vec![vec![0; states + 1]; arity],
            sizes: vec![1; arity],
        }
    }

    /// Every extended state in its own cluster (`k_l = C + 1`).
    pub fn identity(states: usize, arity: usize) -> Self {
        Self {
            states,
            assign: vec![(0..=states).collect(); arity],
            sizes: vec![states + 1; arity],
        }
    }

    /// Builds a clustering from raw per-position assignments, relabelling
    /// clusters canonically.
    pub fn from_assignments(states: usize, assign: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        if assign.is_empty() {
            return Err(ModelError::InvalidClustering("no positions".into()));
        }
        let mut out = Self {
            states,
            sizes: vec![0; assign.len()],
            assign,
        };
        for l in 0..out.assign.len() {
            if out.assign[l].len() != states + 1 {
                return Err(ModelError::InvalidClustering(format!(
                    "position {l} assigns {} states, expected {}",
                    out.assign[l].len(),
                    states + 1
                )));
            }
            out.canonicalise(l);
        }
        Ok(out)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn arity(&self) -> usize {
        self.assign.len()
    }

    /// Index of the bottom state in the extended alphabet.
    pub fn bottom(&self) -> usize {
        self.states
    }

    pub fn extended_size(&self) -> usize {
        self.states + 1
    }

    pub fn k(&self, l: usize) -> usize {
        self.sizes[l]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn assignment(&self, l: usize) -> &[usize] {
        &self.assign[l]
    }

    #[inline]
    pub fn cluster(&self, l: usize, ext_state: usize) -> usize {
        self.assign[l][ext_state]
    }

    /// Cluster tuple for a tuple of extended child states.
    pub fn tuple_of(&self, child_states: &[usize]) -> Vec<usize> {
        child_states
            .iter()
            .enumerate()
            .map(|(l, &j)| self.assign[l][j])
            .collect()
    }

    pub fn members(&self, l: usize, cluster: usize) -> Vec<usize> {
        (0..=self.states)
            .filter(|&j| self.assign[l][j] == cluster)
            .collect()
    }

    /// Number of positions with more than one cluster.
    pub fn active_count(&self) -> usize {
        self.sizes.iter().filter(|&&k| k != 1).count()
    }

    /// One-hot mode matrix of position `l`, shape `(C + 1) x k_l`.
    pub fn mode_matrix(&self, l: usize) -> Vec<Vec<f64>> {
        (0..=self.states)
            .map(|j| {
                let mut row = vec![0.0; self.sizes[l]];
                row[self.assign[l][j]] = 1.0;
                row
            })
            .collect()
    }

    /// Every cluster tuple, in lexicographic order.
    pub fn all_tuples(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for &k in &self.sizes {
            out = out
                .into_iter()
                .flat_map(|t| {
                    (0..k).map(move |i| {
                        let mut t = t.clone();
                        t.push(i);
                        t
                    })
                })
                .collect();
        }
        out
    }

    /// Renumbers clusters of position `l` in order of their smallest member.
    pub fn canonicalise(&mut self, l: usize) {
        let mut map: Vec<Option<usize>> = vec![None; self.states + 2];
        let mut next = 0;
        for j in 0..=self.states {
            let c = self.assign[l][j];
            if c >= map.len() {
                map.resize(c + 1, None);
            }
            let id = *map[c].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            self.assign[l][j] = id;
        }
        self.sizes[l] = next;
    }

    /// Splits a random splittable cluster of position `l` in two.
    ///
    /// Members move to the new cluster with probability 1/2 each; after 100
    /// draws that leave one side empty, a single uniformly chosen member moves.
    pub fn split<R: Rng + ?Sized>(&mut self, l: usize, rng: &mut R) {
        let candidates: Vec<usize> = (0..self.sizes[l])
            .filter(|&i| self.members(l, i).len() >= 2)
            .collect();
        let &target = candidates
            .choose(rng)
            .expect("split requires a cluster with at least two states");
        let members = self.members(l, target);
        let fresh = self.sizes[l];
        let mut moved = None;
        for _ in 0..100 {
            let mask: Vec<bool> = members.iter().map(|_| rng.random::<bool>()).collect();
            let n = mask.iter().filter(|&&b| b).count();
            if n > 0 && n < members.len() {
                moved = Some(mask);
                break;
            }
        }
        match moved {
            Some(mask) => {
                for (&j, m) in members.iter().zip(mask) {
                    if m {
                        self.assign[l][j] = fresh;
                    }
                }
            }
            None => {
                let &j = members.choose(rng).unwrap();
                self.assign[l][j] = fresh;
            }
        }
        self.canonicalise(l);
    }

    /// Merges two distinct uniformly chosen clusters of position `l`.
    pub fn merge<R: Rng + ?Sized>(&mut self, l: usize, rng: &mut R) {
        assert!(self.sizes[l] >= 2, "merge requires at least two clusters");
        let mut ids: Vec<usize> = (0..self.sizes[l]).collect();
        ids.shuffle(rng);
        let (keep, gone) = (ids[0], ids[1]);
        for j in 0..=self.states {
            if self.assign[l][j] == gone {
                self.assign[l][j] = keep;
            }
        }
        self.canonicalise(l);
    }

    /// Checks one-hot rows, non-empty clusters and the active-position window.
    pub fn check(&self, l_min: usize, l_max: usize) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::InvalidClustering(m));
        for (l, row) in self.assign.iter().enumerate() {
            if row.len() != self.states + 1 {
                return err(format!("position {l} has {} rows", row.len()));
            }
            let k = self.sizes[l];
            if k == 0 || k > self.states + 1 {
                return err(format!("position {l} has k = {k}"));
            }
            let mut used = vec![false; k];
            for &c in row {
                if c >= k {
                    return err(format!("position {l} maps to cluster {c} >= k = {k}"));
                }
                used[c] = true;
            }
            if let Some(i) = used.iter().position(|u| !u) {
                return err(format!("position {l} cluster {i} is empty"));
            }
        }
        let active = self.active_count();
        if active < l_min || active > l_max {
            return err(format!(
                "{active} active positions outside [{l_min}, {l_max}]"
            ));
        }
        Ok(())
    }
}

/// Sparse core tensor keyed by cluster tuple.
pub type CoreTensor = BTreeMap<Vec<usize>, Vec<f64>>;

/// Parameters of a TF-BHTMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfModelParams {
    pub states: usize,
    pub arity: usize,
    pub alphabet: usize,
    /// Leaf prior per position, `L x C`.
    pub pi: Vec<Vec<f64>>,
    /// Emission rows, `C x M`.
    pub emission: Vec<Vec<f64>>,
    #[serde(with = "core_serde")]
    pub core: CoreTensor,
    /// Base measure of the core rows.
    pub lambda0: Vec<f64>,
    /// Concentration used for lazily drawn core rows.
    pub alpha: f64,
    pub clustering: HardClustering,
}

impl TfModelParams {
    /// Core row at `tuple`, or the base measure `lambda0` (the prior mean of an
    /// undrawn row) when the row has not been materialised.
    pub fn core_row(&self, tuple: &[usize]) -> &[f64] {
        self.core
            .get(tuple)
            .map(Vec::as_slice)
            .unwrap_or(&self.lambda0)
    }

    /// Core row at `tuple`, drawing it from `Dirichlet(alpha * lambda0)` on
    /// first access.
    pub fn core_row_or_draw<R: Rng + ?Sized>(&mut self, tuple: &[usize], rng: &mut R) -> &[f64] {
        if !self.core.contains_key(tuple) {
            let conc = self.core_concentration();
            let row = sample_dirichlet(&conc, rng);
            self.core.insert(tuple.to_vec(), row);
        }
        &self.core[tuple]
    }

    pub fn core_concentration(&self) -> Vec<f64> {
        self.lambda0.iter().map(|&w| self.alpha * w).collect()
    }

    /// Transition distribution `P(Q_u | Q_ch_1..Q_ch_L)` for extended child
    /// states; with one-hot mode matrices the Tucker sum collapses to one row.
    pub fn reconstruct_transition(&self, child_states: &[usize]) -> Vec<f64> {
        self.core_row(&self.clustering.tuple_of(child_states)).to_vec()
    }

    /// Like [`Self::reconstruct_transition`] but draws a missing core row.
    pub fn reconstruct_transition_or_draw<R: Rng + ?Sized>(
        &mut self,
        child_states: &[usize],
        rng: &mut R,
    ) -> Vec<f64> {
        let tuple = self.clustering.tuple_of(child_states);
        self.core_row_or_draw(&tuple, rng).to_vec()
    }

    /// Draws every missing core row reachable under the current clustering.
    pub fn materialise_all<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for t in self.clustering.all_tuples() {
            self.core_row_or_draw(&t, rng);
        }
    }

    pub fn storage_cost(&self) -> StorageCost {
        storage_cost(self.states, self.arity, self.clustering.sizes())
    }

    /// Verifies every stored row is a simplex within `tol`.
    pub fn check_simplexes(&self, tol: f64) -> Result<(), ModelError> {
        let rows = self
            .pi
            .iter()
            .chain(&self.emission)
            .chain(self.core.values())
            .chain(std::iter::once(&self.lambda0));
        for row in rows {
            check_simplex(row, tol)?;
        }
        Ok(())
    }
}

pub fn check_simplex(row: &[f64], tol: f64) -> Result<(), ModelError> {
    if row.iter().any(|&x| !(x >= 0.0)) {
        return Err(ModelError::Domain(format!("negative or NaN entry in {row:?}")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(ModelError::Domain(format!("row sums to {s}")));
    }
    Ok(())
}

/// Initial parameters: flat Dirichlet draws, `k_l = 1` everywhere except at
/// `L_min` random positions which get a random two-way split.
pub fn init_params<R: Rng + ?Sized>(
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<TfModelParams, ModelError> {
    hyper.validate()?;
    let (c, l, m) = (hyper.states, hyper.arity, hyper.alphabet);
    let pi = (0..l).map(|_| sample_dirichlet(&vec![hyper.gamma; c], rng)).collect();
    let emission = (0..c)
        .map(|_| sample_dirichlet(&vec![hyper.beta; m], rng))
        .collect();
    let lambda0 = sample_dirichlet(&vec![hyper.alpha0 / c as f64; c], rng);
    let mut clustering = HardClustering::trivial(c, l);
    let mut positions: Vec<usize> = (0..l).collect();
    positions.shuffle(rng);
    for &p in &positions[..hyper.l_min] {
        clustering.split(p, rng);
    }
    Ok(TfModelParams {
        states: c,
        arity: l,
        alphabet: m,
        pi,
        emission,
        core: CoreTensor::new(),
        lambda0,
        alpha: hyper.alpha,
        clustering,
    })
}

/// Parameters of the switching-parent baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpModelParams {
    pub states: usize,
    pub arity: usize,
    pub alphabet: usize,
    pub pi: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    /// `P(S_u = l)`, shared by every internal node.
    pub switch: Vec<f64>,
    /// Per position, `(C + 1) x C`; row `C` is the bottom state.
    pub elementary: Vec<Vec<Vec<f64>>>,
}

impl SpModelParams {
    pub fn check_simplexes(&self, tol: f64) -> Result<(), ModelError> {
        check_simplex(&self.switch, tol)?;
        for row in self
            .pi
            .iter()
            .chain(&self.emission)
            .chain(self.elementary.iter().flatten())
        {
            check_simplex(row, tol)?;
        }
        Ok(())
    }
}

/// Flat-prior initial draws for the switching-parent model.
pub fn init_sp_params<R: Rng + ?Sized>(
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<SpModelParams, ModelError> {
    hyper.validate()?;
    let (c, l, m) = (hyper.states, hyper.arity, hyper.alphabet);
    Ok(SpModelParams {
        states: c,
        arity: l,
        alphabet: m,
        pi: (0..l).map(|_| sample_dirichlet(&vec![hyper.gamma; c], rng)).collect(),
        emission: (0..c)
            .map(|_| sample_dirichlet(&vec![hyper.beta; m], rng))
            .collect(),
        switch: sample_dirichlet(&vec![1.0; l], rng),
        elementary: (0..l)
            .map(|_| (0..=c).map(|_| sample_dirichlet(&vec![1.0; c], rng)).collect())
            .collect(),
    })
}

mod core_serde {
    use super::CoreTensor;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Cell {
        tuple: Vec<usize>,
        row: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(core: &CoreTensor, s: S) -> Result<S::Ok, S::Error> {
        let cells: Vec<Cell> = core
            .iter()
            .map(|(t, r)| Cell {
                tuple: t.clone(),
                row: r.clone(),
            })
            .collect();
        cells.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CoreTensor, D::Error> {
        let cells = Vec::<Cell>::deserialize(d)?;
        Ok(cells.into_iter().map(|c| (c.tuple, c.row)).collect())
    }
}
