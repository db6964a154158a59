//! Brute-force oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use tfbhtmm::math::sample_dirichlet;
use tfbhtmm::model::{init_params, init_sp_params};
use tfbhtmm::sp::SpLatentAssignment;
use tfbhtmm::trees::TreeSpec;
use tfbhtmm::{HardClustering, HyperParams, LabelledTree, SpModelParams, TfModelParams};

/// Random positional tree with at most `max_nodes` nodes.
pub fn random_tree<R: Rng>(rng: &mut R, max_nodes: usize, arity: usize, alphabet: usize) -> LabelledTree {
    let target = rng.random_range(1..=max_nodes);
    let mut budget = target - 1;
    fn grow<R: Rng>(rng: &mut R, budget: &mut usize, arity: usize, alphabet: usize) -> TreeSpec {
        let mut children = Vec::with_capacity(arity);
        for _ in 0..arity {
            if *budget > 0 && rng.random::<f64>() < 0.6 {
                *budget -= 1;
                children.push(Some(grow(rng, budget, arity, alphabet)));
            } else {
                children.push(None);
            }
        }
        TreeSpec::node(rng.random_range(0..alphabet), children)
    }
    let spec = grow(rng, &mut budget, arity, alphabet);
    LabelledTree::from_spec(&spec, arity, alphabet).unwrap()
}

/// Random hard clustering with arbitrary cluster counts per position.
pub fn random_clustering<R: Rng>(rng: &mut R, states: usize, arity: usize) -> HardClustering {
    let ext = states + 1;
    let assign = (0..arity)
        .map(|_| {
            let k = rng.random_range(1..=ext);
            let mut order: Vec<usize> = (0..ext).collect();
            order.shuffle(rng);
            let mut a = vec![0; ext];
            for (i, &s) in order.iter().enumerate() {
                a[s] = if i < k { i } else { rng.random_range(0..k) };
            }
            a
        })
        .collect();
    HardClustering::from_assignments(states, assign).unwrap()
}

/// Random TF parameters with every reachable core row drawn.
pub fn random_tf<R: Rng>(rng: &mut R, c: usize, l: usize, m: usize) -> TfModelParams {
    let hyper = HyperParams::new(c, l, m);
    let mut p = init_params(&hyper, rng).unwrap();
    p.clustering = random_clustering(rng, c, l);
    p.core.clear();
    // Spread-out core rows so oracle mismatches are not hidden by near-uniform tables.
    for t in p.clustering.all_tuples() {
        p.core.insert(t, sample_dirichlet(&vec![0.7; c], rng));
    }
    p
}

pub fn random_sp<R: Rng>(rng: &mut R, c: usize, l: usize, m: usize) -> SpModelParams {
    init_sp_params(&HyperParams::new(c, l, m), rng).unwrap()
}

/// Calls `f` on every vector in `[0, base)^len`.
pub fn for_each_assignment(len: usize, base: usize, mut f: impl FnMut(&[usize])) {
    let mut v = vec![0usize; len];
    loop {
        f(&v);
        let mut i = 0;
        loop {
            if i == len {
                return;
            }
            v[i] += 1;
            if v[i] < base {
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

fn kids(tree: &LabelledTree, u: usize, q: &[usize], bottom: usize) -> Vec<usize> {
    (0..tree.arity())
        .map(|l| tree.child(u, l).map_or(bottom, |c| q[c]))
        .collect()
}

/// Transition probability from the full Tucker sum
/// `sum_z prod_l kappa_l[j_l][z_l] * lambda_z(j)` over every core tuple.
pub fn tucker_transition(p: &TfModelParams, child_states: &[usize], j: usize) -> f64 {
    let kappa: Vec<Vec<Vec<f64>>> = (0..p.arity).map(|l| p.clustering.mode_matrix(l)).collect();
    p.clustering
        .all_tuples()
        .iter()
        .map(|z| {
            let w: f64 = z
                .iter()
                .enumerate()
                .map(|(l, &zl)| kappa[l][child_states[l]][zl])
                .product();
            w * p.core_row(z)[j]
        })
        .sum()
}

/// `P(x, q)` as a linear-space product of factors.
pub fn tf_joint(tree: &LabelledTree, q: &[usize], p: &TfModelParams) -> f64 {
    let mut prod = 1.0;
    for u in 0..tree.len() {
        prod *= p.emission[q[u]][tree.label(u)];
        prod *= if tree.is_leaf(u) {
            p.pi[tree.prior_position(u)][q[u]]
        } else {
            tucker_transition(p, &kids(tree, u, q, p.states), q[u])
        };
    }
    prod
}

pub fn tf_enumerate(tree: &LabelledTree, p: &TfModelParams) -> f64 {
    let mut total = 0.0;
    for_each_assignment(tree.len(), p.states, |q| total += tf_joint(tree, q, p));
    total.ln()
}

/// `P(x, q, s)` for the switching-parent model.
pub fn sp_joint(tree: &LabelledTree, lat: &SpLatentAssignment, p: &SpModelParams) -> f64 {
    let mut prod = 1.0;
    for u in 0..tree.len() {
        let j = lat.q[u];
        prod *= p.emission[j][tree.label(u)];
        if tree.is_leaf(u) {
            prod *= p.pi[tree.prior_position(u)][j];
        } else {
            let s = lat.s[u].unwrap();
            let js = tree.child(u, s).map_or(p.states, |c| lat.q[c]);
            prod *= p.switch[s] * p.elementary[s][js][j];
        }
    }
    prod
}

pub fn sp_enumerate(tree: &LabelledTree, p: &SpModelParams) -> f64 {
    let internal: Vec<usize> = (0..tree.len()).filter(|&u| !tree.is_leaf(u)).collect();
    let mut total = 0.0;
    for_each_assignment(tree.len(), p.states, |q| {
        for_each_assignment(internal.len(), p.arity, |s| {
            let mut sv = vec![None; tree.len()];
            for (&u, &su) in internal.iter().zip(s) {
                sv[u] = Some(su);
            }
            let lat = SpLatentAssignment { q: q.to_vec(), s: sv };
            total += sp_joint(tree, &lat, p);
        });
    });
    total.ln()
}
