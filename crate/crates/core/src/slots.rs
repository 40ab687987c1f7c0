//! Parameter binding from the raw utterance.
//!
//! Each macro carries one [`SlotSpec`] per parameter. A spec's template is
//! literal anchor text around exactly one `{capture}` region, e.g.
//! `"order {X} from the closest market"`. Matching is done on the
//! case-folded utterance: the leading anchor's first occurrence wins, and the
//! capture then extends to the last occurrence of the trailing anchor, so the
//! captured span is maximal. Anchors only match on word boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{ParamKind, ParamSpec};
use crate::template;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotFallback {
    /// Take whatever is left of the utterance once every other slot's anchors
    /// and captures are removed.
    Remainder,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub param: String,
    pub template: String,
    #[serde(default)]
    pub fallback: SlotFallback,
}

impl SlotSpec {
    pub fn new(param: impl Into<String>, template: impl Into<String>) -> Self {
        Self {
            param: param.into(),
            template: template.into(),
            fallback: SlotFallback::None,
        }
    }

    pub fn remainder(param: impl Into<String>, template: impl Into<String>) -> Self {
        Self {
            param: param.into(),
            template: template.into(),
            fallback: SlotFallback::Remainder,
        }
    }

    /// Split the template into lowercased (leading, trailing) anchors.
    pub fn anchors(&self) -> Result<(String, String), SlotError> {
        let found = template::scan(&self.template);
        let [capture] = found.as_slice() else {
            return Err(SlotError::BadTemplate {
                param: self.param.clone(),
                reason: format!("expected exactly one capture, found {}", found.len()),
            });
        };
        let lead = self.template[..capture.span.start].trim().to_lowercase();
        let trail = self.template[capture.span.end..].trim().to_lowercase();
        if lead.is_empty() && trail.is_empty() && self.fallback != SlotFallback::Remainder {
            return Err(SlotError::BadTemplate {
                param: self.param.clone(),
                reason: "anchors are empty and fallback is not remainder".into(),
            });
        }
        Ok((lead, trail))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BindingValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for BindingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BindingValue::Number(n) => write!(f, "{n}"),
            BindingValue::Text(s) => f.write_str(s),
        }
    }
}

impl BindingValue {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            BindingValue::Number(n) => serde_json::Number::from_f64(*n)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            BindingValue::Text(s) => serde_json::Value::String(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub param: String,
    pub value: BindingValue,
}

impl Binding {
    pub fn text(param: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            param: param.into(),
            value: BindingValue::Text(value.into()),
        }
    }

    pub fn number(param: impl Into<String>, value: f64) -> Self {
        Self {
            param: param.into(),
            value: BindingValue::Number(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotError {
    #[error("missing value for parameter `{param}`")]
    MissingSlot { param: String },
    #[error("parameter `{param}` expects a number, got `{raw}`")]
    TypeMismatch { param: String, raw: String },
    #[error("bad slot template for `{param}`: {reason}")]
    BadTemplate { param: String, reason: String },
}

fn boundary_before(text: &str, at: usize, anchor: &str) -> bool {
    match anchor.chars().next() {
        Some(c) if c.is_alphanumeric() => text[..at].chars().next_back().is_none_or(|p| !p.is_alphanumeric()),
        _ => true,
    }
}

fn boundary_after(text: &str, end: usize, anchor: &str) -> bool {
    match anchor.chars().next_back() {
        Some(c) if c.is_alphanumeric() => text[end..].chars().next().is_none_or(|n| !n.is_alphanumeric()),
        _ => true,
    }
}

fn on_boundaries(text: &str, at: usize, anchor: &str) -> bool {
    boundary_before(text, at, anchor) && boundary_after(text, at + anchor.len(), anchor)
}

/// First word-bounded occurrence of `anchor` at or after `from`.
fn find_first(text: &str, anchor: &str, from: usize) -> Option<usize> {
    text[from..]
        .match_indices(anchor)
        .map(|(i, _)| from + i)
        .find(|&at| on_boundaries(text, at, anchor))
}

/// Last word-bounded occurrence of `anchor` starting at or after `from`.
fn find_last(text: &str, anchor: &str, from: usize) -> Option<usize> {
    text[from..]
        .match_indices(anchor)
        .map(|(i, _)| from + i)
        .filter(|&at| on_boundaries(text, at, anchor))
        .last()
}

fn clean_capture(raw: &str) -> &str {
    raw.trim().trim_end_matches(['.', ',', '!', '?', ';', ':']).trim()
}

struct Located {
    /// Span of anchors plus capture, in the folded utterance.
    whole: Range<usize>,
    value: String,
}

fn locate(folded: &str, lead: &str, trail: &str) -> Option<Located> {
    let (start, capture_start) = if lead.is_empty() {
        (0, 0)
    } else {
        let at = find_first(folded, lead, 0)?;
        (at, at + lead.len())
    };
    let (capture_end, end) = if trail.is_empty() {
        (folded.len(), folded.len())
    } else {
        let at = find_last(folded, trail, capture_start)?;
        (at, at + trail.len())
    };
    let value = clean_capture(&folded[capture_start..capture_end]);
    if value.is_empty() {
        return None;
    }
    Some(Located {
        whole: start..end,
        value: value.to_string(),
    })
}

/// Bind each spec's parameter from the utterance.
///
/// Returns the raw captured text per parameter (case-folded). Fails with
/// `MissingSlot` for the first spec, in spec order, that cannot be filled.
pub fn extract(utterance: &str, specs: &[SlotSpec]) -> Result<BTreeMap<String, String>, SlotError> {
    let folded = utterance.to_lowercase();
    let mut located: Vec<Option<Located>> = Vec::with_capacity(specs.len());
    for spec in specs {
        let (lead, trail) = spec.anchors()?;
        let hit = if lead.is_empty() && trail.is_empty() {
            None
        } else {
            locate(&folded, &lead, &trail)
        };
        if hit.is_none() && spec.fallback != SlotFallback::Remainder {
            return Err(SlotError::MissingSlot {
                param: spec.param.clone(),
            });
        }
        located.push(hit);
    }

    let mut out = BTreeMap::new();
    for (spec, hit) in specs.iter().zip(&located) {
        let value = match hit {
            Some(l) => l.value.clone(),
            None => {
                let rest = remainder(&folded, located.iter().flatten().map(|l| l.whole.clone()));
                if rest.is_empty() {
                    return Err(SlotError::MissingSlot {
                        param: spec.param.clone(),
                    });
                }
                rest
            }
        };
        out.insert(spec.param.clone(), value);
    }
    Ok(out)
}

fn remainder(folded: &str, spans: impl Iterator<Item = Range<usize>>) -> String {
    let mut keep = vec![true; folded.len()];
    for span in spans {
        keep[span].iter_mut().for_each(|k| *k = false);
    }
    let mut out = String::new();
    for (i, c) in folded.char_indices() {
        out.push(if keep[i] { c } else { ' ' });
    }
    let joined = out.split_whitespace().collect::<Vec<_>>().join(" ");
    clean_capture(&joined).to_string()
}

fn is_decimal(raw: &str) -> bool {
    let s = raw.strip_prefix(['-', '+']).unwrap_or(raw);
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    match frac {
        None => !int.is_empty() && digits(int),
        Some(f) => (!int.is_empty() || !f.is_empty()) && digits(int) && digits(f),
    }
}

/// Type-check raw captures against the declared parameters, in parameter
/// order.
pub fn validate(raw: &BTreeMap<String, String>, params: &[ParamSpec]) -> Result<Vec<Binding>, SlotError> {
    params
        .iter()
        .map(|p| {
            let text = raw
                .get(&p.name)
                .ok_or_else(|| SlotError::MissingSlot { param: p.name.clone() })?;
            let value = match p.kind {
                ParamKind::Text => BindingValue::Text(text.clone()),
                ParamKind::Number => {
                    let trimmed = text.trim();
                    if !is_decimal(trimmed) {
                        return Err(SlotError::TypeMismatch {
                            param: p.name.clone(),
                            raw: text.clone(),
                        });
                    }
                    BindingValue::Number(trimmed.parse().map_err(|_| SlotError::TypeMismatch {
                        param: p.name.clone(),
                        raw: text.clone(),
                    })?)
                }
            };
            Ok(Binding {
                param: p.name.clone(),
                value,
            })
        })
        .collect()
}
