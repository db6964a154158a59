//! Acceptance suite: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use clap::Parser;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tfbhtmm::gibbs::{
    lambda0_table_counts, latent_acceptance, propose_latents, propose_latents_guided,
    propose_size_move, resample_lambda0, size_acceptance, ChainState, SufficientStats, TupleCounts,
};
use tfbhtmm::inference::{complete_log_likelihood, sample_latents, LatentAssignment};
use tfbhtmm::math::entropy;
use tfbhtmm::model::{LatentProposal, LatentRule};
use tfbhtmm::sp::{sp_acceptance, sp_complete_log_likelihood, sp_propose};
use tfbhtmm::tasks::{
    class_posterior, eval_classification, majority_label_accuracy, train_classifier, ModelKind,
};
use tfbhtmm::trees::parse_corpus;
use tfbhtmm::{
    marginal_log_likelihood, sp_marginal_log_likelihood, HardClustering, HyperParams, TreeCorpus,
};
use tfbhtmm_cli::args::{Cli, Command as CliCommand};
use tfbhtmm_cli::{cmd_eval, load_corpus, Aggregate};

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Outcome {
    let mut worst_marg: f64 = 0.0;
    let mut worst_complete: f64 = 0.0;
    for i in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let c = 1 + (i % 3) as usize;
        let tree = random_tree(&mut rng, 6, 2, 3);
        let tf = random_tf(&mut rng, c, 2, 3);
        let sp = random_sp(&mut rng, c, 2, 3);
        worst_marg = worst_marg
            .max((marginal_log_likelihood(&tree, &tf) - tf_enumerate(&tree, &tf)).abs())
            .max((sp_marginal_log_likelihood(&tree, &sp) - sp_enumerate(&tree, &sp)).abs());
        let q: Vec<usize> = (0..tree.len()).map(|_| rng.random_range(0..c)).collect();
        let lat = LatentAssignment::from_states(&tree, q.clone(), &tf.clustering);
        let sp_lat = sp_propose(&tree, &sp, LatentProposal::Prior, &mut rng);
        worst_complete = worst_complete
            .max((complete_log_likelihood(&tree, &lat, &tf) - tf_joint(&tree, &q, &tf).ln()).abs())
            .max((sp_complete_log_likelihood(&tree, &sp_lat, &sp) - sp_joint(&tree, &sp_lat, &sp).ln()).abs());
    }
    outcome(
        worst_marg < 1e-9 && worst_complete < 1e-12,
        format!("200 trees, max marginal error {worst_marg:.2e} (tol 1e-9), max complete error {worst_complete:.2e} (tol 1e-12)"),
    )
}

fn criterion_2() -> Outcome {
    let mut identity_dev: f64 = 0.0;
    let mut trivial_dev: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let c = 1 + (i % 3) as usize;
        let l = 1 + (i % 3) as usize;
        let states = HardClustering::identity(c, l).all_tuples();
        let mut p = random_tf(&mut rng, c, l, 2);
        p.clustering = HardClustering::identity(c, l);
        p.core.clear();
        p.materialise_all(&mut rng);
        for t in &states {
            let row = p.reconstruct_transition(t);
            for (a, b) in row.iter().zip(&p.core[t]) {
                identity_dev = identity_dev.max((a - b).abs());
            }
        }
        p.clustering = HardClustering::trivial(c, l);
        p.core.clear();
        p.materialise_all(&mut rng);
        let rows: Vec<Vec<f64>> = states.iter().map(|t| p.reconstruct_transition(t)).collect();
        for a in &rows {
            for b in &rows {
                for (x, y) in a.iter().zip(b) {
                    trivial_dev = trivial_dev.max((x - y).abs());
                }
            }
        }
    }
    outcome(
        identity_dev == 0.0 && trivial_dev == 0.0,
        format!("identity clustering max deviation {identity_dev:e}, k=1 pairwise deviation {trivial_dev:e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = 0usize;
    let configs = [(3, 3, 1, 3), (4, 4, 2, 3), (2, 5, 1, 5), (5, 2, 2, 2), (10, 3, 1, 3)];
    for &(c, l, lmin, lmax) in &configs {
        let mut hyper = HyperParams::new(c, l, 2);
        hyper.l_min = lmin;
        hyper.l_max = lmax;
        let mut h = HardClustering::trivial(c, l);
        for p in 0..lmin {
            h.split(p, &mut rng);
        }
        for _ in 0..20_000 {
            h = propose_size_move(&h, &hyper, &mut rng);
            let one_hot = (0..l).all(|p| {
                h.mode_matrix(p).iter().all(|r| r.iter().filter(|&&x| x == 1.0).count() == 1)
            });
            if h.check(lmin, lmax).is_err() || !one_hot {
                violations += 1;
            }
        }
    }

    let mut bad_range = 0usize;
    let mut bad_identity = 0usize;
    let corpus = parse_corpus("L=2 M=3\n(2 (0) (1 (0) (2)))\n(1 _ (0))\n(0 (1) _)\n").unwrap();
    for i in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let t = 1.0 + (i % 10) as f64;
        let tree = random_tree(&mut rng, 7, 2, 3);
        let mut p = random_tf(&mut rng, 3, 2, 3);
        let cur = propose_latents(&tree, &mut p, &mut rng);
        let prop = propose_latents_guided(&tree, &cur, &mut p, &mut rng);
        for rule in [LatentRule::AsPrinted, LatentRule::CoreRatio, LatentRule::Exact] {
            let a = latent_acceptance(&tree, &cur, &prop, &p, t, rule, LatentProposal::Guided);
            bad_range += usize::from(!(0.0..=1.0).contains(&a));
            bad_identity +=
                usize::from(latent_acceptance(&tree, &cur, &cur, &p, t, rule, LatentProposal::Guided) != 1.0);
        }
        let sp = random_sp(&mut rng, 3, 2, 3);
        let x = sp_propose(&tree, &sp, LatentProposal::Guided, &mut rng);
        let y = sp_propose(&tree, &sp, LatentProposal::Guided, &mut rng);
        bad_range += usize::from(!(0.0..=1.0).contains(&sp_acceptance(&tree, &x, &y, &sp, t, LatentProposal::Guided)));
        bad_identity += usize::from(sp_acceptance(&tree, &x, &x, &sp, t, LatentProposal::Guided) != 1.0);

        let lat: Vec<_> = corpus.trees.iter().map(|tr| sample_latents(tr, &mut p, &mut rng)).collect();
        let stats = SufficientStats::from_latents(&corpus.trees, &lat, 3, 2, 3);
        let hyper = HyperParams::new(3, 2, 3);
        let new = propose_size_move(&p.clustering, &hyper, &mut rng);
        let a = size_acceptance(&p.clustering, &new, &stats, &hyper, &p.lambda0, t).unwrap();
        bad_range += usize::from(!(0.0..=1.0).contains(&a));
        let same = size_acceptance(&p.clustering, &p.clustering, &stats, &hyper, &p.lambda0, t).unwrap();
        bad_identity += usize::from(same != 1.0);
    }
    outcome(
        violations == 0 && bad_range == 0 && bad_identity == 0,
        format!("100000 size moves, {violations} invariant violations; acceptance out of range {bad_range}, identical proposal != 1 {bad_identity}"),
    )
}

fn criterion_4() -> Outcome {
    // Single-node corpus, label 0, M=2, beta=1: posterior mean 2/3.
    let corpus = parse_corpus("L=1 M=2\n(0)\n").unwrap();
    let hyper = HyperParams::new(2, 1, 2).with_iterations(100).with_seed(4);
    let mut chain = ChainState::init(&corpus, &hyper).unwrap();
    for _ in 0..hyper.m0 {
        chain.sweep(&corpus).unwrap();
    }
    let mut mean = 0.0;
    for _ in 0..500 {
        chain.sweep(&corpus).unwrap();
        mean += chain.params.emission[chain.latents[0].q[0]][0] / 500.0;
    }
    let emission_ok = (mean - 2.0 / 3.0).abs() < 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let empty = TupleCounts::new();
    let (c, alpha0) = (4usize, 4.0);
    let n = 10_000;
    let (mut m1, mut m2) = (vec![0.0; c], vec![0.0; c]);
    for _ in 0..n {
        let l = resample_lambda0(&empty, 4.0, alpha0, &[0.1, 0.2, 0.3, 0.4], &mut rng);
        for i in 0..c {
            m1[i] += l[i] / n as f64;
            m2[i] += l[i] * l[i] / n as f64;
        }
    }
    let a = alpha0 / c as f64;
    let prior_mean = a / alpha0;
    let prior_var = prior_mean * (1.0 - prior_mean) / (alpha0 + 1.0);
    let moment_err = (0..c)
        .map(|i| (m1[i] - prior_mean).abs().max((m2[i] - m1[i] * m1[i] - prior_var).abs()))
        .fold(0.0, f64::max);

    let mut counts = TupleCounts::new();
    counts.insert(vec![0], vec![3]);
    let runs = 100_000;
    let cascade: u64 = (0..runs)
        .map(|_| lambda0_table_counts(&counts, 1.0, &[1.0], &mut rng)[0])
        .sum();
    let cascade_mean = cascade as f64 / runs as f64;
    let cascade_ok = (cascade_mean - 11.0 / 6.0).abs() < 0.02;
    outcome(
        emission_ok && moment_err < 0.02 && cascade_ok,
        format!("emission mean {mean:.4} (target 0.6667 +/- 0.05); lambda0 moment error {moment_err:.4} (tol 0.02); cascade mean {cascade_mean:.4} (target 1.8333 +/- 0.02)"),
    )
}

fn eval_cli(args: &[&str]) -> Aggregate {
    let cli = Cli::try_parse_from(std::iter::once("tfbhtmm").chain(args.iter().copied())).unwrap();
    match cli.command {
        CliCommand::Eval(a) => cmd_eval(&a).unwrap(),
        _ => unreachable!(),
    }
}

fn criterion_5(work: &Path) -> Outcome {
    let data = work.join("synthetic");
    let status = Command::new(env!("CARGO_BIN_EXE_tfbhtmm"))
        .args(["generate", "--out-dir", data.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let train = data.join("train.trees");
    let test = data.join("test.trees");
    let run = |kind: &str| {
        eval_cli(&[
            "eval", "--task", "label", "--model", kind,
            "--train", train.to_str().unwrap(), "--test", test.to_str().unwrap(),
            "--runs", "5", "--states", "10", "--iterations", "100", "--phi", "2",
            "--l-min", "1", "--l-max", "3",
            "--out-dir", work.join(format!("bench-{kind}")).to_str().unwrap(),
        ])
    };
    let tf = run("tf");
    let sp = run("sp");
    let best_l0 = tf.reports.iter().map(|r| r.breakdown[0].accuracy).fold(0.0, f64::max);
    let min_gap = tf
        .reports
        .iter()
        .zip(&sp.reports)
        .map(|(a, b)| a.accuracy - b.accuracy)
        .fold(f64::INFINITY, f64::min);
    let majority = majority_label_accuracy(&load_corpus(&train).unwrap(), &load_corpus(&test).unwrap());
    let a = best_l0 >= 90.0;
    let b = min_gap >= 10.0;
    let c = tf.entropy.mean < sp.entropy.mean;
    let fallback = a && tf.accuracy.mean - majority >= 20.0;
    let pass = (a && b && c) || fallback;
    outcome(
        pass,
        format!(
            "(a) TF best label-0 accuracy {best_l0:.2} {}; (b) min seed-matched gap {min_gap:.2} pts {} (TF {:.2} vs SP {:.2}); (c) entropy TF {:.2} vs SP {:.2} {}; majority baseline {majority:.2}{}",
            if a { "ok" } else { "FAIL" },
            if b { "ok" } else { "FAIL" },
            tf.accuracy.mean,
            sp.accuracy.mean,
            tf.entropy.mean,
            sp.entropy.mean,
            if c { "ok" } else { "FAIL" },
            if pass && !(a && b && c) { " (passed via baseline fallback)" } else { "" },
        ),
    )
}

fn separable(per_class: usize, rng: &mut ChaCha8Rng) -> TreeCorpus {
    let mut c = TreeCorpus::new(2, 4);
    c.classes = Some(2);
    let mut labels = Vec::new();
    for class in 0..2 {
        for _ in 0..per_class {
            let t = random_tree(rng, 6, 2, 2);
            let shifted: Vec<usize> = t.labels().iter().map(|x| x + 2 * class).collect();
            c.trees.push(t.with_labels(&shifted));
            labels.push(class);
        }
    }
    c.class_labels = Some(labels);
    c
}

fn criterion_6() -> Outcome {
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let train = separable(50, &mut rng);
        let test = separable(50, &mut rng);
        let hyper = HyperParams::new(2, 2, 4).with_iterations(100).with_seed(seed);
        let bundle = train_classifier(&train, &hyper, ModelKind::Tf).unwrap();
        accs.push(eval_classification(&test, &bundle).unwrap().accuracy);
    }
    let worst = accs.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(worst > 90.0, format!("separable two-class corpus, 5 seeds, accuracies {accs:.1?} (need > 90)"))
}

fn digest_dir(dir: &Path) -> String {
    let mut names: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_str().unwrap().ends_with(".meta.json"))
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap().to_str().unwrap().as_bytes());
        h.update(fs::read(&p).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn criterion_7(work: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_tfbhtmm");
    let mut digests = Vec::new();
    for (round, jobs) in [(0, "1"), (1, "4")] {
        let root = work.join(format!("det{round}"));
        let s = |p: &str| root.join(p).to_str().unwrap().to_string();
        let steps: Vec<Vec<String>> = vec![
            vec!["generate".into(), "--out-dir".into(), s("data"), "--count-per-type".into(), "40".into(), "--seed".into(), "5".into()],
            vec!["train".into(), "--corpus".into(), s("data/train.trees"), "--out-dir".into(), s("tf"), "--task".into(), "classify".into(), "--states".into(), "4".into(), "--iterations".into(), "30".into(), "--jobs".into(), jobs.into()],
            vec!["train".into(), "--corpus".into(), s("data/train.trees"), "--out-dir".into(), s("sp"), "--task".into(), "label".into(), "--model".into(), "sp".into(), "--states".into(), "4".into(), "--iterations".into(), "30".into()],
            vec!["eval".into(), "--test".into(), s("data/test.trees"), "--task".into(), "classify".into(), "--models".into(), s("tf"), "--out-dir".into(), s("report-tf")],
            vec!["eval".into(), "--test".into(), s("data/test.trees"), "--task".into(), "label".into(), "--train".into(), s("data/train.trees"), "--runs".into(), "2".into(), "--states".into(), "4".into(), "--iterations".into(), "30".into(), "--jobs".into(), jobs.into(), "--out-dir".into(), s("report-label")],
        ];
        for args in steps {
            let out = Command::new(bin).args(&args).output().unwrap();
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        }
        digests.push(
            ["data", "tf", "sp", "report-tf", "report-label"]
                .iter()
                .map(|d| digest_dir(&root.join(d)))
                .collect::<Vec<_>>(),
        );
    }
    let same = digests[0] == digests[1];
    outcome(
        same,
        format!("corpus, checkpoints and reports hashed over two runs (1 vs 4 workers): {}", if same { "identical" } else { "DIFFERENT" }),
    )
}

fn criterion_8() -> Outcome {
    let (_, d) = class_posterior(&[-12.0; 18]);
    let h = 100.0 * entropy(&d);
    outcome((h - 289.0).abs() <= 0.5, format!("uniform K=18 entropy {h:.3} (target 289.0 +/- 0.5)"))
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let criteria: Vec<Check> = vec![
        ("oracle equivalence of likelihoods", Box::new(criterion_1)),
        ("Tucker exactness", Box::new(criterion_2)),
        ("sampler invariants", Box::new(criterion_3)),
        ("conjugate-update correctness", Box::new(criterion_4)),
        ("synthetic labelling benchmark", Box::new(|| criterion_5(work.path()))),
        ("separable two-class classification", Box::new(criterion_6)),
        ("determinism", Box::new(|| criterion_7(work.path()))),
        ("entropy convention", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} [{}] {name}: {} ({:.1}s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
