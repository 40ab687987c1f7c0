//! Cosine scoring, ranking and the two-level category → macro selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::MacroId;
use crate::slots::{Binding, SlotError};
use crate::vectorizer::DocumentVector;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatcherError {
    #[error("no categories to select from")]
    EmptyCatalog,
    #[error("category `{0}` has no members")]
    EmptyCategory(String),
}

/// `a·b / (‖a‖‖b‖)`, or 0 when either side is empty.
///
/// With non-negative weights the result lies in `[0, 1]`; it is clamped there
/// to absorb rounding above 1.
pub fn cosine(a: &DocumentVector, b: &DocumentVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub id: MacroId,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Sort `(id, score)` pairs by descending score, ties by ascending id, and
/// assign ranks.
pub fn order_scores(mut scored: Vec<(MacroId, f64)>) -> Vec<MatchResult> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (id, score))| MatchResult { id, score, rank: i + 1 })
        .collect()
}

/// Score every index entry against the query.
pub fn rank(query: &DocumentVector, index: &[(MacroId, DocumentVector)]) -> Vec<MatchResult> {
    order_scores(index.iter().map(|(id, v)| (*id, cosine(query, v))).collect())
}

#[derive(Debug, Clone)]
pub struct Category {
    name: String,
    members: Vec<(MacroId, DocumentVector)>,
    centroid: DocumentVector,
}

impl Category {
    /// Centroid is the normalized mean of the member vectors.
    pub fn new(name: impl Into<String>, members: Vec<(MacroId, DocumentVector)>) -> Result<Self, MatcherError> {
        let name = name.into();
        if members.is_empty() {
            return Err(MatcherError::EmptyCategory(name));
        }
        let sum = members.iter().fold(DocumentVector::new(), |acc, (_, v)| acc.add(v));
        let centroid = sum.scaled(1.0 / members.len() as f64).normalized();
        Ok(Self {
            name,
            members,
            centroid,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn member_ids(&self) -> Vec<MacroId> {
        self.members.iter().map(|(id, _)| *id).collect()
    }

    pub fn centroid(&self) -> &DocumentVector {
        &self.centroid
    }
}

/// Pick the category whose centroid is closest to the query (ties: smallest
/// name), then the best member inside it.
pub fn two_level_select(
    query: &DocumentVector,
    categories: &[Category],
) -> Result<(String, MatchResult), MatcherError> {
    let best = categories
        .iter()
        .map(|c| (c, cosine(query, &c.centroid)))
        .max_by(|(ca, sa), (cb, sb)| sa.total_cmp(sb).then_with(|| cb.name.cmp(&ca.name)))
        .ok_or(MatcherError::EmptyCatalog)?
        .0;
    let top = rank(query, &best.members)
        .into_iter()
        .next()
        .ok_or_else(|| MatcherError::EmptyCategory(best.name.clone()))?;
    Ok((best.name.clone(), top))
}

/// Result of routing one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum RouteDecision {
    Matched {
        id: MacroId,
        macro_name: String,
        score: f64,
        bindings: Vec<Binding>,
        /// Set when parameters could not be bound; the caller should ask the
        /// user for the missing value instead of executing.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot_error: Option<SlotError>,
    },
    NoMatch {
        best_id: Option<MacroId>,
        best_score: f64,
    },
    NeedsTraining,
}

impl RouteDecision {
    pub fn matched_id(&self) -> Option<MacroId> {
        match self {
            RouteDecision::Matched { id, .. } => Some(*id),
            _ => None,
        }
    }
}
