mod common;

use common::random_tree;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfbhtmm::trees::{parse_corpus, parse_tree};
use tfbhtmm::TreeCorpus;

proptest! {
    #[test]
    fn sexpr_round_trip(seed in any::<u64>(), l in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, 15, l, 5);
        let text = t.to_sexpr();
        let back = parse_tree(&text, l, 5).unwrap();
        prop_assert_eq!(back.to_sexpr(), text);
        prop_assert_eq!(back.labels(), t.labels());
        for u in 0..t.len() {
            prop_assert_eq!(&back.node(u).children, &t.node(u).children);
        }
    }

    #[test]
    fn bottom_up_order_is_child_first_permutation(seed in any::<u64>(), l in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, 20, l, 3);
        let order = t.bottom_up_order();
        let mut pos = vec![usize::MAX; t.len()];
        for (i, &u) in order.iter().enumerate() {
            prop_assert_eq!(pos[u], usize::MAX);
            pos[u] = i;
        }
        prop_assert!(pos.iter().all(|&p| p < t.len()));
        for u in 0..t.len() {
            if let Some(p) = t.node(u).parent {
                prop_assert!(pos[p] > pos[u]);
            }
        }
        prop_assert_eq!(*order.last().unwrap(), t.root());
        let leaves = t.leaves();
        for u in 0..t.len() {
            prop_assert_eq!(leaves.contains(&u), t.node(u).children.iter().all(Option::is_none));
        }
    }

    #[test]
    fn corpus_round_trip(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = TreeCorpus::new(3, 4);
        c.classes = Some(2);
        c.symbols.insert(0, "doc".into());
        c.trees = (0..n).map(|_| random_tree(&mut rng, 10, 3, 4)).collect();
        c.class_labels = Some((0..n).map(|i| i % 2).collect());
        let text = c.to_text();
        let back = parse_corpus(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.class_labels, c.class_labels);
    }
}

#[test]
fn chain_bottom_up() {
    let t = parse_tree("(0 (1 (2)))", 1, 3).unwrap();
    assert_eq!(t.bottom_up_order(), vec![2, 1, 0]);
}
