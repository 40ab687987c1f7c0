//! Utility filter for candidate API calls.
//!
//! A candidate call is kept only when injecting its text `z` at position `i`
//! lowers the weighted negative log-likelihood of the following tokens:
//!
//! ```text
//! L_i(z) = -Σ_{j=i}^{i+n-1} w_{j-i} · ln p(x_j | z, x_0 .. x_{j-1})
//! gain   = L_i(∅) - L_i(z)
//! ```
//!
//! The window is clipped to the end of the sequence and the weights are
//! renormalized to sum to 1 over whatever part of the window remains.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CallFilterError {
    #[error("oracle failure: {0}")]
    OracleFailure(String),
    #[error("position {position} outside sequence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("invalid loss parameters: {0}")]
    InvalidParams(String),
}

/// Next-token probabilities `p(next | context, preceding)`, each in `(0, 1]`.
pub trait TokenProbabilityOracle {
    fn probability(&self, preceding: &[String], next: &str, context: Option<&str>) -> Result<f64, CallFilterError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w_k = max(0, 1 - step·k)`.
    Linear { step: f64 },
    /// Explicit weights for offsets 0, 1, ...; offsets past the end weigh 0.
    Explicit { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub window: usize,
    pub weights: WeightScheme,
    pub tau: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            window: 5,
            weights: WeightScheme::Linear { step: 0.2 },
            tau: 0.5,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), CallFilterError> {
        let bad = |m: &str| Err(CallFilterError::InvalidParams(m.to_string()));
        if self.window == 0 {
            return bad("window must be positive");
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad("tau must be a non-negative number");
        }
        match &self.weights {
            WeightScheme::Linear { step } => {
                if !(step.is_finite() && *step > 0.0) {
                    return bad("linear step must be positive");
                }
            }
            WeightScheme::Explicit { weights } => {
                if weights.first().is_none_or(|w| !(w.is_finite() && *w > 0.0)) {
                    return bad("first weight must be positive");
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return bad("weights must be non-negative");
                }
                for pair in weights.windows(2) {
                    if pair[0] > 0.0 && pair[1] >= pair[0] {
                        return bad("weights must strictly decrease until they reach zero");
                    }
                    if pair[0] == 0.0 && pair[1] != 0.0 {
                        return bad("weights must stay zero once they reach zero");
                    }
                }
            }
        }
        Ok(())
    }

    fn raw_weight(&self, k: usize) -> f64 {
        match &self.weights {
            WeightScheme::Linear { step } => (1.0 - step * k as f64).max(0.0),
            WeightScheme::Explicit { weights } => weights.get(k).copied().unwrap_or(0.0),
        }
    }

    /// Weights for a window of `len` offsets, summing to 1.
    pub fn window_weights(&self, len: usize) -> Result<Vec<f64>, CallFilterError> {
        self.validate()?;
        let raw: Vec<f64> = (0..len).map(|k| self.raw_weight(k)).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(CallFilterError::InvalidParams("window weights sum to zero".into()));
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCall {
    pub position: usize,
    /// Call plus response text injected before `position`.
    pub context: String,
}

impl CandidateCall {
    pub fn new(position: usize, context: impl Into<String>) -> Self {
        Self {
            position,
            context: context.into(),
        }
    }
}

/// Weighted negative log-likelihood of the window starting at `position`,
/// with `context` injected (`""` means no call).
pub fn weighted_loss(
    tokens: &[String],
    position: usize,
    context: &str,
    oracle: &dyn TokenProbabilityOracle,
    params: &LossParams,
) -> Result<f64, CallFilterError> {
    if position >= tokens.len() {
        return Err(CallFilterError::PositionOutOfRange {
            position,
            len: tokens.len(),
        });
    }
    let end = (position + params.window).min(tokens.len());
    let weights = params.window_weights(end - position)?;
    let ctx = (!context.is_empty()).then_some(context);
    let mut loss = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let j = position + k;
        let p = oracle.probability(&tokens[..j], &tokens[j], ctx)?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(CallFilterError::OracleFailure(format!(
                "probability {p} for `{}` outside (0, 1]",
                tokens[j]
            )));
        }
        loss -= w * p.ln();
    }
    Ok(loss)
}

/// Reduction in loss from injecting the candidate's context.
pub fn utility_gain(
    tokens: &[String],
    candidate: &CandidateCall,
    oracle: &dyn TokenProbabilityOracle,
    params: &LossParams,
) -> Result<f64, CallFilterError> {
    let without = weighted_loss(tokens, candidate.position, "", oracle, params)?;
    let with = weighted_loss(tokens, candidate.position, &candidate.context, oracle, params)?;
    Ok(without - with)
}

/// Candidates whose gain reaches `params.tau`, in input order.
pub fn filter_calls(
    tokens: &[String],
    candidates: &[CandidateCall],
    oracle: &dyn TokenProbabilityOracle,
    params: &LossParams,
) -> Result<Vec<CandidateCall>, CallFilterError> {
    let mut kept = Vec::new();
    for c in candidates {
        if utility_gain(tokens, c, oracle, params)? >= params.tau {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}

/// Deterministic lookup-table oracle over a toy vocabulary.
///
/// Lookup order: `(context, token)` entry when a context is injected, then the
/// per-token entry, then the default.
#[derive(Debug, Clone)]
pub struct TableOracle {
    default: f64,
    by_token: HashMap<String, f64>,
    by_context: HashMap<(String, String), f64>,
}

impl TableOracle {
    pub fn new(default: f64) -> Self {
        Self {
            default,
            by_token: HashMap::new(),
            by_context: HashMap::new(),
        }
    }

    pub fn token(mut self, token: impl Into<String>, p: f64) -> Self {
        self.by_token.insert(token.into(), p);
        self
    }

    pub fn with_context(mut self, context: impl Into<String>, token: impl Into<String>, p: f64) -> Self {
        self.by_context.insert((context.into(), token.into()), p);
        self
    }
}

impl TokenProbabilityOracle for TableOracle {
    fn probability(&self, _preceding: &[String], next: &str, context: Option<&str>) -> Result<f64, CallFilterError> {
        if let Some(z) = context {
            if let Some(p) = self.by_context.get(&(z.to_string(), next.to_string())) {
                return Ok(*p);
            }
        }
        Ok(self.by_token.get(next).copied().unwrap_or(self.default))
    }
}
