use macro_router_core::eval::{
    calibrate_theta, evaluate, load_fixtures, run_eval, Label, LabeledUtterance, OUT_OF_SCOPE_FLOOR,
};
use macro_router_core::matcher::cosine;
use macro_router_core::pipeline::StopwordSetting;
use macro_router_core::registry::{MacroId, Registry};
use macro_router_core::vectorizer::{Tokenizer, Vocabulary};

fn fixtures() -> (Registry, Vec<LabeledUtterance>) {
    load_fixtures(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures")).unwrap()
}

fn label_of(utts: &[LabeledUtterance], text: &str) -> Label {
    utts.iter().find(|u| u.text == text).unwrap().label
}

#[test]
fn fixture_counts_and_labels() {
    let (reg, utts) = fixtures();
    assert_eq!(reg.len(), 15);
    assert_eq!(utts.len(), 100);
    let trip = reg.by_name("PLAN_TRIP").unwrap().id;
    assert_eq!(
        label_of(
            &utts,
            "Find a beach resort in Thailand for under $100 per night in July."
        ),
        Label::Macro(trip)
    );
    assert_eq!(
        label_of(&utts, "Translate 'Thank you very much' into German."),
        Label::OutOfScope
    );
    assert_eq!(utts.iter().filter(|u| u.label == Label::OutOfScope).count(), 8);
    assert_eq!(utts.iter().filter(|u| u.disputed).count(), 2);
}

/// Accuracy recomputed with nothing but a fitted vocabulary, `cosine` and
/// an argmax loop.
#[test]
fn harness_accuracy_matches_independent_argmax() {
    let (reg, utts) = fixtures();
    let docs = reg.corpus_documents();
    let texts: Vec<&str> = docs.iter().map(|(_, d)| d.as_str()).collect();
    let vocab = Vocabulary::fit(&texts, Tokenizer::english()).unwrap();
    let vectors: Vec<(MacroId, _)> = docs.iter().map(|(id, d)| (*id, vocab.transform(d))).collect();
    let mut correct = 0;
    let mut total = 0;
    for u in utts.iter().filter(|u| !u.disputed) {
        let Label::Macro(want) = u.label else { continue };
        total += 1;
        let q = vocab.transform(&u.text);
        let mut best = (vectors[0].0, -1.0);
        for (id, v) in &vectors {
            let s = cosine(&q, v);
            if s > best.1 {
                best = (*id, s);
            }
        }
        if best.0 == want {
            correct += 1;
        }
    }
    let report = run_eval(&reg, &utts, 0.0, &StopwordSetting::Enabled(true));
    assert_eq!(report.in_scope_total, total);
    assert_eq!(report.top1_correct, correct);
}

#[test]
fn default_run_is_locked() {
    let (reg, utts) = fixtures();
    let (report, err) = evaluate(&reg, &utts, &StopwordSetting::Enabled(true));
    assert!(err.is_none());
    assert_eq!(report.theta, 0.01);
    assert_eq!((report.top1_correct, report.in_scope_total), (41, 90));
    assert_eq!(report.in_scope_correct, 37);
    assert_eq!((report.out_of_scope_nomatch, report.out_of_scope_total), (8, 8));
    assert_eq!(report.disputed_excluded, 2);
    assert!(report.out_of_scope_nomatch_rate >= OUT_OF_SCOPE_FLOOR);
    let sum: usize = report.confusion.iter().flatten().sum();
    assert_eq!(sum, 98);
}

#[test]
fn evaluation_is_deterministic() {
    let (reg, utts) = fixtures();
    let a = evaluate(&reg, &utts, &StopwordSetting::Enabled(true)).0;
    let b = evaluate(&reg, &utts, &StopwordSetting::Enabled(true)).0;
    assert_eq!(a, b);
    assert_eq!(
        calibrate_theta(&reg, &utts, &StopwordSetting::Enabled(true)).unwrap(),
        a.theta
    );
}

#[test]
fn theta_one_rejects_everything() {
    let (reg, utts) = fixtures();
    let report = run_eval(&reg, &utts, 1.0, &StopwordSetting::Enabled(true));
    assert_eq!(report.out_of_scope_nomatch_rate, 1.0);
    assert_eq!(report.in_scope_correct, 0);
    assert!(report.results.iter().all(|r| r.predicted == Label::OutOfScope));
}

#[test]
fn row_texts_self_match() {
    let (reg, _) = fixtures();
    let utts: Vec<LabeledUtterance> = reg
        .macros()
        .iter()
        .map(|m| LabeledUtterance {
            text: m.corpus_text(),
            label: Label::Macro(m.id),
            disputed: false,
        })
        .collect();
    let report = run_eval(&reg, &utts, 0.5, &StopwordSetting::Enabled(true));
    assert_eq!(report.in_scope_correct, 15);
    assert!(report.results.iter().all(|r| (r.score - 1.0).abs() < 1e-9));
}
