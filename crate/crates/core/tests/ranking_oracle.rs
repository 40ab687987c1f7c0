use std::collections::BTreeMap;

use macro_router_core::eval::load_fixtures;
use macro_router_core::matcher::{cosine, rank, two_level_select, Category};
use macro_router_core::pipeline::{PipelineConfig, Snapshot};
use macro_router_core::registry::MacroId;
use macro_router_core::vectorizer::DocumentVector;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

/// Dense brute-force cosine over a fixed term count.
fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).min(1.0)
    }
}

fn to_sparse(dense: &[f64]) -> DocumentVector {
    DocumentVector::from_weights(
        dense
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (format!("t{i:02}"), *w)),
    )
}

fn corpus() -> impl Strategy<Value = (usize, Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=50).prop_flat_map(|terms| {
        let vec = prop::collection::vec(prop_oneof![2 => Just(0.0), 1 => 0.001f64..5.0], terms);
        (Just(terms), prop::collection::vec(vec.clone(), 1..=200), vec)
    })
}

#[test]
fn rank_equals_brute_force_on_random_corpora() {
    let mut runner = TestRunner::new(Config {
        cases: 100,
        ..Config::default()
    });
    runner
        .run(&corpus(), |(_, docs, q)| {
            let index: Vec<_> = docs
                .iter()
                .enumerate()
                .map(|(i, d)| (MacroId(i as u64), to_sparse(d)))
                .collect();
            let got = rank(&to_sparse(&q), &index);
            let mut expected: Vec<(usize, f64)> =
                docs.iter().enumerate().map(|(i, d)| (i, brute_cosine(&q, d))).collect();
            expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            prop_assert_eq!(got.len(), expected.len());
            for (g, (i, s)) in got.iter().zip(&expected) {
                prop_assert!((g.score - s).abs() <= 1e-9);
                // Near-equal scores may legitimately swap under rounding.
                if g.id.0 as usize != *i {
                    prop_assert!((brute_cosine(&q, &docs[g.id.0 as usize]) - s).abs() <= 1e-9);
                }
            }
            Ok(())
        })
        .unwrap();
}

#[test]
fn two_level_agrees_with_flat_on_fixture_utterances() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let (reg, utts) = load_fixtures(dir).unwrap();
    let snap = Snapshot::build(&reg, &PipelineConfig::default());
    let index = snap.index();
    // Each use case is its own category here. Names are prefixed with the
    // zero-padded id so that the category tie-break orders like the id one.
    let mut groups: BTreeMap<String, Vec<(MacroId, DocumentVector)>> = BTreeMap::new();
    for (id, v) in &index {
        let rec = reg.get(*id).unwrap();
        groups
            .entry(format!("{:03}-{}", id.0, rec.use_case))
            .or_default()
            .push((*id, v.clone()));
    }
    let cats: Vec<Category> = groups.into_iter().map(|(n, m)| Category::new(n, m).unwrap()).collect();
    for u in &utts {
        let q = snap.vectorize(&u.text);
        let flat = rank(&q, &index).remove(0);
        let (_, top) = two_level_select(&q, &cats).unwrap();
        assert_eq!(top.id, flat.id, "{}", u.text);
        assert!((top.score - flat.score).abs() < 1e-12);
        assert!((cosine(&q, &index[flat.id.0 as usize - 1].1) - flat.score).abs() < 1e-12);
    }
}
