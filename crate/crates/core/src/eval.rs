//! Batch evaluation of routing accuracy over a labeled utterance set, and
//! threshold calibration.
//!
//! Fixture directory layout: `macros.json` (registry file) and
//! `utterances.jsonl`, one `{"text": ..., "label": ..., "disputed": bool}`
//! object per line. Labels are macro names or `OutOfScope`. Disputed items
//! are scored but left out of every rate.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{PipelineConfig, Snapshot, StopwordSetting};
use crate::registry::{MacroId, Registry, RegistryError};

pub const OUT_OF_SCOPE: &str = "OutOfScope";
/// Minimum share of out-of-scope utterances that must fall below θ.
pub const OUT_OF_SCOPE_FLOOR: f64 = 0.75;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fixture error in {file}: {message}")]
    Fixture { file: String, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("no threshold keeps {floor} of out-of-scope utterances unmatched; best unconstrained θ = {best:.2}")]
    Infeasible { floor: f64, best: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Macro(MacroId),
    OutOfScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub text: String,
    pub label: Label,
    #[serde(default)]
    pub disputed: bool,
}

#[derive(Debug, Deserialize)]
struct UtteranceLine {
    text: String,
    label: String,
    #[serde(default)]
    disputed: bool,
}

pub fn parse_utterances(text: &str, registry: &Registry) -> Result<Vec<LabeledUtterance>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| EvalError::Fixture {
            file: "utterances.jsonl".into(),
            message: format!("line {}: {message}", n + 1),
        };
        let raw: UtteranceLine = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let label = if raw.label == OUT_OF_SCOPE {
            Label::OutOfScope
        } else {
            let record = registry
                .by_name(&raw.label)
                .ok_or_else(|| fail(format!("unknown label `{}`", raw.label)))?;
            Label::Macro(record.id)
        };
        out.push(LabeledUtterance {
            text: raw.text,
            label,
            disputed: raw.disputed,
        });
    }
    Ok(out)
}

pub fn load_fixtures(dir: impl AsRef<Path>) -> Result<(Registry, Vec<LabeledUtterance>), EvalError> {
    let dir = dir.as_ref();
    let registry = Registry::load(dir.join("macros.json"))?;
    let path = dir.join("utterances.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| EvalError::Fixture {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    let utterances = parse_utterances(&text, &registry)?;
    Ok((registry, utterances))
}

/// Top candidate for one utterance under pure cosine scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub text: String,
    pub label: Label,
    pub disputed: bool,
    pub top_id: Option<MacroId>,
    pub top_score: f64,
}

/// Pure-cosine snapshot: α = 1 removes the feedback term entirely.
fn cosine_snapshot(registry: &Registry, stopwords: &StopwordSetting) -> Snapshot {
    let config = PipelineConfig {
        alpha: 1.0,
        theta: 0.0,
        stopwords: stopwords.clone(),
        ..PipelineConfig::default()
    };
    Snapshot::build(registry, &config)
}

pub fn score_utterances(
    registry: &Registry,
    utterances: &[LabeledUtterance],
    stopwords: &StopwordSetting,
) -> Vec<ScoredUtterance> {
    let snapshot = cosine_snapshot(registry, stopwords);
    utterances
        .iter()
        .map(|u| {
            let top = snapshot.rank(&u.text).into_iter().next();
            ScoredUtterance {
                text: u.text.clone(),
                label: u.label,
                disputed: u.disputed,
                top_id: top.as_ref().map(|t| t.id),
                top_score: top.map(|t| t.score).unwrap_or(0.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub text: String,
    pub label: Label,
    pub predicted: Label,
    pub top_id: Option<MacroId>,
    pub score: f64,
    pub disputed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub theta: f64,
    /// Matched at θ and correct, over in-scope utterances.
    pub in_scope_accuracy: f64,
    /// Argmax correct regardless of θ, over in-scope utterances.
    pub top1_accuracy: f64,
    pub in_scope_total: usize,
    pub in_scope_correct: usize,
    pub top1_correct: usize,
    pub out_of_scope_total: usize,
    pub out_of_scope_nomatch: usize,
    pub out_of_scope_nomatch_rate: f64,
    pub disputed_excluded: usize,
    /// Row/column labels of `confusion`: macro names in id order, then `OutOfScope`.
    pub classes: Vec<String>,
    /// `confusion[true][predicted]`; a NoMatch counts as predicted `OutOfScope`.
    pub confusion: Vec<Vec<usize>>,
    pub results: Vec<UtteranceResult>,
}

fn ratio(n: usize, d: usize, empty: f64) -> f64 {
    if d == 0 {
        empty
    } else {
        n as f64 / d as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    in_total: usize,
    in_correct: usize,
    top1: usize,
    oos_total: usize,
    oos_nomatch: usize,
}

impl Counts {
    fn oos_rate(&self) -> f64 {
        ratio(self.oos_nomatch, self.oos_total, 1.0)
    }
}

fn count(scored: &[ScoredUtterance], theta: f64) -> Counts {
    let mut c = Counts::default();
    for s in scored.iter().filter(|s| !s.disputed) {
        let matched = s.top_id.is_some() && s.top_score >= theta;
        match s.label {
            Label::Macro(id) => {
                c.in_total += 1;
                if s.top_id == Some(id) {
                    c.top1 += 1;
                    if matched {
                        c.in_correct += 1;
                    }
                }
            }
            Label::OutOfScope => {
                c.oos_total += 1;
                if !matched {
                    c.oos_nomatch += 1;
                }
            }
        }
    }
    c
}

pub fn summarize(registry: &Registry, scored: &[ScoredUtterance], theta: f64) -> EvalReport {
    let c = count(scored, theta);
    let mut classes: Vec<String> = registry.macros().iter().map(|m| m.macro_name.clone()).collect();
    classes.push(OUT_OF_SCOPE.to_string());
    let class_of = |label: Label| match label {
        Label::Macro(id) => registry
            .macros()
            .iter()
            .position(|m| m.id == id)
            .unwrap_or(classes.len() - 1),
        Label::OutOfScope => classes.len() - 1,
    };
    let mut confusion = vec![vec![0; classes.len()]; classes.len()];
    let mut results = Vec::with_capacity(scored.len());
    for s in scored {
        let predicted = match s.top_id {
            Some(id) if s.top_score >= theta => Label::Macro(id),
            _ => Label::OutOfScope,
        };
        if !s.disputed {
            confusion[class_of(s.label)][class_of(predicted)] += 1;
        }
        results.push(UtteranceResult {
            text: s.text.clone(),
            label: s.label,
            predicted,
            top_id: s.top_id,
            score: s.top_score,
            disputed: s.disputed,
        });
    }
    EvalReport {
        theta,
        in_scope_accuracy: ratio(c.in_correct, c.in_total, 0.0),
        top1_accuracy: ratio(c.top1, c.in_total, 0.0),
        in_scope_total: c.in_total,
        in_scope_correct: c.in_correct,
        top1_correct: c.top1,
        out_of_scope_total: c.oos_total,
        out_of_scope_nomatch: c.oos_nomatch,
        out_of_scope_nomatch_rate: c.oos_rate(),
        disputed_excluded: scored.iter().filter(|s| s.disputed).count(),
        classes,
        confusion,
        results,
    }
}

/// Route every utterance with pure cosine at threshold `theta`.
pub fn run_eval(
    registry: &Registry,
    utterances: &[LabeledUtterance],
    theta: f64,
    stopwords: &StopwordSetting,
) -> EvalReport {
    summarize(registry, &score_utterances(registry, utterances, stopwords), theta)
}

/// The θ grid 0.00, 0.01, ..., 1.00.
pub fn theta_grid() -> impl Iterator<Item = f64> {
    (0..=100).map(|k| k as f64 / 100.0)
}

/// Pick θ maximizing in-scope accuracy subject to the out-of-scope floor.
/// Ties prefer more out-of-scope rejections, then the smaller θ.
pub fn calibrate_scored(scored: &[ScoredUtterance]) -> Result<f64, EvalError> {
    let better = |a: &Counts, b: &Counts| (a.in_correct, a.oos_nomatch) > (b.in_correct, b.oos_nomatch);
    let mut best_feasible: Option<(f64, Counts)> = None;
    let mut best_any: Option<(f64, Counts)> = None;
    for theta in theta_grid() {
        let c = count(scored, theta);
        if best_any.as_ref().is_none_or(|(_, b)| better(&c, b)) {
            best_any = Some((theta, c));
        }
        if c.oos_rate() >= OUT_OF_SCOPE_FLOOR && best_feasible.as_ref().is_none_or(|(_, b)| better(&c, b)) {
            best_feasible = Some((theta, c));
        }
    }
    match best_feasible {
        Some((theta, _)) => Ok(theta),
        None => Err(EvalError::Infeasible {
            floor: OUT_OF_SCOPE_FLOOR,
            best: best_any.map(|(t, _)| t).unwrap_or(0.0),
        }),
    }
}

pub fn calibrate_theta(
    registry: &Registry,
    utterances: &[LabeledUtterance],
    stopwords: &StopwordSetting,
) -> Result<f64, EvalError> {
    calibrate_scored(&score_utterances(registry, utterances, stopwords))
}

/// Calibrate θ, then report at the chosen θ. An infeasible calibration
/// reports at the best unconstrained θ and returns the error alongside.
pub fn evaluate(
    registry: &Registry,
    utterances: &[LabeledUtterance],
    stopwords: &StopwordSetting,
) -> (EvalReport, Option<EvalError>) {
    let scored = score_utterances(registry, utterances, stopwords);
    match calibrate_scored(&scored) {
        Ok(theta) => (summarize(registry, &scored, theta), None),
        Err(e) => {
            let theta = match &e {
                EvalError::Infeasible { best, .. } => *best,
                _ => 0.0,
            };
            (summarize(registry, &scored, theta), Some(e))
        }
    }
}

impl EvalReport {
    pub fn to_table(&self, registry: &Registry) -> String {
        let name = |l: Label| match l {
            Label::Macro(id) => registry
                .get(id)
                .map(|m| m.macro_name.clone())
                .unwrap_or_else(|| format!("#{id}")),
            Label::OutOfScope => OUT_OF_SCOPE.to_string(),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<6} {:<32} {:<32} text",
            "ok", "score", "label", "predicted"
        );
        for r in &self.results {
            let mark = if r.disputed {
                "?"
            } else if r.label == r.predicted {
                "+"
            } else {
                "-"
            };
            let _ = writeln!(
                out,
                "{:<4} {:<6.3} {:<32} {:<32} {}",
                mark,
                r.score,
                name(r.label),
                name(r.predicted),
                r.text
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "theta                     {:.2}", self.theta);
        let _ = writeln!(
            out,
            "top-1 accuracy            {:.4} ({}/{})",
            self.top1_accuracy, self.top1_correct, self.in_scope_total
        );
        let _ = writeln!(
            out,
            "in-scope accuracy @theta  {:.4} ({}/{})",
            self.in_scope_accuracy, self.in_scope_correct, self.in_scope_total
        );
        let _ = writeln!(
            out,
            "out-of-scope no-match     {:.4} ({}/{})",
            self.out_of_scope_nomatch_rate, self.out_of_scope_nomatch, self.out_of_scope_total
        );
        let _ = writeln!(out, "disputed (excluded)       {}", self.disputed_excluded);
        out
    }
}
