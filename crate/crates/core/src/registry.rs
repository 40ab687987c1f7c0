//! The local macro database: records, validation, feedback counters and the
//! JSON file format.
//!
//! File layout: `{"version":1,"next_id":N,"macros":[...]}` with each macro
//! carrying the [`MacroRecord`] fields under snake_case keys.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slots::SlotSpec;
use crate::template;

pub const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MacroId(pub u64);

impl fmt::Display for MacroId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Text,
    Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default)]
    pub description: String,
}

impl ParamSpec {
    pub fn text(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Text,
            description: description.into(),
        }
    }

    pub fn number(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Number,
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    Put,
    Delete,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
            HttpMethod::Put => "PUT",
            HttpMethod::Delete => "DELETE",
        }
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HttpMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Ok(HttpMethod::Get),
            "POST" => Ok(HttpMethod::Post),
            "PUT" => Ok(HttpMethod::Put),
            "DELETE" => Ok(HttpMethod::Delete),
            other => Err(format!("unsupported method `{other}`")),
        }
    }
}

/// Names a value in a call's JSON response so later calls can use it as a
/// `{bind_name}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputBinding {
    pub bind_name: String,
    /// Dot-separated path into the response body; numeric segments index arrays.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCallTemplate {
    pub method: HttpMethod,
    pub url_template: String,
    #[serde(default)]
    pub header_templates: BTreeMap<String, String>,
    #[serde(default)]
    pub body_template: Option<serde_json::Value>,
    #[serde(default)]
    pub output_bindings: Vec<OutputBinding>,
}

impl ApiCallTemplate {
    pub fn new(method: HttpMethod, url_template: impl Into<String>) -> Self {
        Self {
            method,
            url_template: url_template.into(),
            header_templates: BTreeMap::new(),
            body_template: None,
            output_bindings: Vec::new(),
        }
    }

    pub fn with_body(mut self, body: serde_json::Value) -> Self {
        self.body_template = Some(body);
        self
    }

    pub fn bind(mut self, bind_name: impl Into<String>, path: impl Into<String>) -> Self {
        self.output_bindings.push(OutputBinding {
            bind_name: bind_name.into(),
            path: path.into(),
        });
        self
    }

    /// Every placeholder referenced by the URL, headers and body.
    pub fn placeholder_names(&self) -> Vec<String> {
        let mut out: Vec<String> = template::names(&self.url_template)
            .into_iter()
            .map(str::to_owned)
            .collect();
        for (k, v) in &self.header_templates {
            out.extend(template::names(k).into_iter().map(str::to_owned));
            out.extend(template::names(v).into_iter().map(str::to_owned));
        }
        if let Some(body) = &self.body_template {
            out.extend(template::json_names(body));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackStats {
    pub successes: u64,
    pub attempts: u64,
}

impl FeedbackStats {
    /// Laplace-smoothed success rate, 0.5 with no history.
    pub fn smoothed_rate(&self) -> f64 {
        (self.successes as f64 + 1.0) / (self.attempts as f64 + 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

impl std::str::FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success" => Ok(Outcome::Success),
            "failure" => Ok(Outcome::Failure),
            other => Err(format!("outcome must be success or failure, got `{other}`")),
        }
    }
}

/// A macro before the registry has assigned it an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewMacro {
    pub use_case: String,
    pub scenario_description: String,
    pub macro_name: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub call_templates: Vec<ApiCallTemplate>,
    #[serde(default)]
    pub slot_specs: Vec<SlotSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRecord {
    pub id: MacroId,
    pub use_case: String,
    pub scenario_description: String,
    pub macro_name: String,
    pub params: Vec<ParamSpec>,
    pub call_templates: Vec<ApiCallTemplate>,
    pub slot_specs: Vec<SlotSpec>,
    pub stats: FeedbackStats,
    pub created_at: String,
}

impl MacroRecord {
    /// Matching text: title, description and the de-underscored macro name.
    pub fn corpus_text(&self) -> String {
        format!(
            "{} {} {}",
            self.use_case,
            self.scenario_description,
            self.macro_name.replace('_', " ")
        )
    }

    /// `NAME(a, b)` signature as shown in listings.
    pub fn signature(&self) -> String {
        let params: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        format!("{}({})", self.macro_name, params.join(", "))
    }

    fn as_new(&self) -> NewMacro {
        NewMacro {
            use_case: self.use_case.clone(),
            scenario_description: self.scenario_description.clone(),
            macro_name: self.macro_name.clone(),
            params: self.params.clone(),
            call_templates: self.call_templates.clone(),
            slot_specs: self.slot_specs.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("macro name `{0}` already exists")]
    DuplicateName(String),
    #[error("invalid template in `{macro_name}`: {reason}")]
    InvalidTemplate { macro_name: String, reason: String },
    #[error("unknown macro id {0}")]
    UnknownId(MacroId),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    version: u32,
    next_id: u64,
    macros: Vec<MacroRecord>,
}

/// The macro database. Ids are handed out in increasing order and never
/// reused. `revision` bumps on every change to the matching corpus.
#[derive(Debug, Clone)]
pub struct Registry {
    next_id: u64,
    macros: Vec<MacroRecord>,
    revision: u64,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for Registry {
    fn eq(&self, other: &Self) -> bool {
        self.next_id == other.next_id && self.macros == other.macros
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn invalid(macro_name: &str, reason: impl Into<String>) -> RegistryError {
    RegistryError::InvalidTemplate {
        macro_name: macro_name.to_string(),
        reason: reason.into(),
    }
}

/// Checks every structural invariant of a macro that does not involve the
/// rest of the registry.
pub fn validate_macro(m: &NewMacro) -> Result<(), RegistryError> {
    let name = m.macro_name.as_str();
    if name.trim().is_empty() || name.chars().any(char::is_whitespace) {
        return Err(invalid(name, "macro_name must be a non-empty identifier"));
    }

    let mut known: HashSet<&str> = HashSet::new();
    for p in &m.params {
        if !is_identifier(&p.name) {
            return Err(invalid(name, format!("param name `{}` is not an identifier", p.name)));
        }
        if !known.insert(&p.name) {
            return Err(invalid(name, format!("duplicate param `{}`", p.name)));
        }
    }

    for (index, call) in m.call_templates.iter().enumerate() {
        for placeholder in call.placeholder_names() {
            if !known.contains(placeholder.as_str()) {
                return Err(invalid(
                    name,
                    format!("call {index} uses unbound placeholder `{{{placeholder}}}`"),
                ));
            }
        }
        let probe = template::substitute(&call.url_template, |_| Some("x".to_string()));
        match url::Url::parse(&probe) {
            Ok(u) if u.has_host() => {}
            _ => {
                return Err(invalid(
                    name,
                    format!("call {index} url `{}` is not an absolute URL", call.url_template),
                ))
            }
        }
        for out in &call.output_bindings {
            if !is_identifier(&out.bind_name) {
                return Err(invalid(
                    name,
                    format!("bind name `{}` is not an identifier", out.bind_name),
                ));
            }
            if out.path.is_empty() || out.path.split('.').any(str::is_empty) {
                return Err(invalid(
                    name,
                    format!("bind `{}` has an empty path segment", out.bind_name),
                ));
            }
            if !known.insert(&out.bind_name) {
                return Err(invalid(
                    name,
                    format!("call {index} rebinds existing name `{}`", out.bind_name),
                ));
            }
        }
    }

    let params: HashSet<&str> = m.params.iter().map(|p| p.name.as_str()).collect();
    let mut slotted = HashSet::new();
    for spec in &m.slot_specs {
        if !params.contains(spec.param.as_str()) {
            return Err(invalid(
                name,
                format!("slot spec for undeclared param `{}`", spec.param),
            ));
        }
        if !slotted.insert(spec.param.as_str()) {
            return Err(invalid(name, format!("two slot specs for `{}`", spec.param)));
        }
        spec.anchors().map_err(|e| invalid(name, e.to_string()))?;
    }
    Ok(())
}

impl Registry {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            macros: Vec::new(),
            revision: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.macros.len()
    }

    pub fn is_empty(&self) -> bool {
        self.macros.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn next_id(&self) -> MacroId {
        MacroId(self.next_id)
    }

    /// Records in id order.
    pub fn macros(&self) -> &[MacroRecord] {
        &self.macros
    }

    pub fn get(&self, id: MacroId) -> Option<&MacroRecord> {
        self.macros
            .binary_search_by_key(&id, |m| m.id)
            .ok()
            .map(|i| &self.macros[i])
    }

    pub fn by_name(&self, macro_name: &str) -> Option<&MacroRecord> {
        self.macros.iter().find(|m| m.macro_name == macro_name)
    }

    pub fn add_macro(&mut self, m: NewMacro) -> Result<MacroId, RegistryError> {
        if self.by_name(&m.macro_name).is_some() {
            return Err(RegistryError::DuplicateName(m.macro_name));
        }
        validate_macro(&m)?;
        let id = MacroId(self.next_id);
        self.next_id += 1;
        self.macros.push(MacroRecord {
            id,
            use_case: m.use_case,
            scenario_description: m.scenario_description,
            macro_name: m.macro_name,
            params: m.params,
            call_templates: m.call_templates,
            slot_specs: m.slot_specs,
            stats: FeedbackStats::default(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        });
        self.revision += 1;
        Ok(id)
    }

    pub fn remove_macro(&mut self, id: MacroId) -> Result<MacroRecord, RegistryError> {
        let index = self
            .macros
            .binary_search_by_key(&id, |m| m.id)
            .map_err(|_| RegistryError::UnknownId(id))?;
        self.revision += 1;
        Ok(self.macros.remove(index))
    }

    /// `(id, text)` per record in id order; call templates never contribute.
    pub fn corpus_documents(&self) -> Vec<(MacroId, String)> {
        self.macros.iter().map(|m| (m.id, m.corpus_text())).collect()
    }

    pub fn record_feedback(&mut self, id: MacroId, outcome: Outcome) -> Result<FeedbackStats, RegistryError> {
        let index = self
            .macros
            .binary_search_by_key(&id, |m| m.id)
            .map_err(|_| RegistryError::UnknownId(id))?;
        let stats = &mut self.macros[index].stats;
        stats.attempts += 1;
        if outcome == Outcome::Success {
            stats.successes += 1;
        }
        Ok(*stats)
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            version: FILE_VERSION,
            next_id: self.next_id,
            macros: self.macros.clone(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: RegistryFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            RegistryError::Schema {
                path: if path == "." { "$".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        Self::from_file(file)
    }

    fn from_file(file: RegistryFile) -> Result<Self, RegistryError> {
        let schema = |path: String, message: String| RegistryError::Schema { path, message };
        if file.version != FILE_VERSION {
            return Err(schema(
                "version".into(),
                format!("unsupported version {}, expected {FILE_VERSION}", file.version),
            ));
        }
        let mut names = HashSet::new();
        let mut prev: Option<MacroId> = None;
        for (i, m) in file.macros.iter().enumerate() {
            let at = |field: &str| format!("macros[{i}].{field}");
            if prev.is_some_and(|p| m.id <= p) {
                return Err(schema(at("id"), "ids must be strictly increasing".into()));
            }
            if m.id.0 == 0 || m.id.0 >= file.next_id {
                return Err(schema(at("id"), format!("id {} outside 1..next_id", m.id)));
            }
            prev = Some(m.id);
            if m.stats.successes > m.stats.attempts {
                return Err(schema(
                    at("stats"),
                    format!("successes {} exceed attempts {}", m.stats.successes, m.stats.attempts),
                ));
            }
            if chrono::DateTime::parse_from_rfc3339(&m.created_at).is_err() {
                return Err(schema(at("created_at"), "not an ISO-8601 timestamp".into()));
            }
            if !names.insert(m.macro_name.as_str()) {
                return Err(schema(at("macro_name"), format!("duplicate name `{}`", m.macro_name)));
            }
            validate_macro(&m.as_new()).map_err(|e| schema(at("call_templates"), e.to_string()))?;
        }
        Ok(Self {
            next_id: file.next_id,
            macros: file.macros,
            revision: 0,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Writes via a sibling temp file and rename so readers never see a
    /// partial document.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegistryError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}
