//! The routing pipeline: vectorize → score against every macro → threshold →
//! bind slots → build and run the call plan → record feedback. Also holds the
//! training session used to add new macros.
//!
//! Routing and execution read an immutable [`Snapshot`]; every registry
//! mutation goes through [`Engine`], which refits the vocabulary and swaps in
//! a new snapshot.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call_filter::LossParams;
use crate::executor::{self, ApiCallPlan, ExecutionResult, Transport};
use crate::matcher::{self, MatchResult, RouteDecision};
use crate::registry::{FeedbackStats, MacroId, MacroRecord, NewMacro, Outcome, Registry, RegistryError};
use crate::slots;
use crate::vectorizer::{DocumentVector, Tokenizer, Vocabulary};

pub const DEFAULT_THETA: f64 = 0.30;
pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("training description is empty")]
    EmptyDescription,
    #[error("illegal transition: cannot {action} from state {from}")]
    IllegalTransition { from: TrainingState, action: &'static str },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// `true`/`false` toggles the bundled list; an array replaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StopwordSetting {
    Enabled(bool),
    Custom(Vec<String>),
}

impl Default for StopwordSetting {
    fn default() -> Self {
        StopwordSetting::Enabled(true)
    }
}

impl StopwordSetting {
    pub fn tokenizer(&self) -> Tokenizer {
        match self {
            StopwordSetting::Enabled(true) => Tokenizer::english(),
            StopwordSetting::Enabled(false) => Tokenizer::without_stopwords(),
            StopwordSetting::Custom(words) => Tokenizer::with_stopwords(words),
        }
    }
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_tau() -> f64 {
    LossParams::default().tau
}
fn default_registry_path() -> PathBuf {
    PathBuf::from("macros.json")
}
fn default_port() -> u16 {
    DEFAULT_PORT
}

/// Config file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub stopwords: StopwordSetting,
    #[serde(default = "default_registry_path")]
    pub registry_path: PathBuf,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Simulator fixture used instead of live HTTP when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            alpha: DEFAULT_ALPHA,
            tau: default_tau(),
            stopwords: StopwordSetting::default(),
            registry_path: default_registry_path(),
            port: DEFAULT_PORT,
            simulator: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.theta) {
            return Err(PipelineError::Config(format!("theta {} outside [0, 1]", self.theta)));
        }
        if !unit(self.alpha) {
            return Err(PipelineError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        self.loss_params()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            tau: self.tau,
            ..LossParams::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths inside the file are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.registry_path.is_relative() {
                cfg.registry_path = dir.join(&cfg.registry_path);
            }
            if let Some(sim) = cfg.simulator.as_mut().filter(|s| s.is_relative()) {
                *sim = dir.join(&*sim);
            }
        }
        Ok(cfg)
    }
}

/// `α·cosine + (1 − α)·(s + 1)/(n + 2)`.
pub fn blended_score(cosine: f64, stats: FeedbackStats, alpha: f64) -> f64 {
    alpha * cosine + (1.0 - alpha) * stats.smoothed_rate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    User,
    Environment,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub macro_id: MacroId,
    pub outcome: Outcome,
    pub source: FeedbackSource,
    pub timestamp: String,
}

impl FeedbackEvent {
    pub fn now(macro_id: MacroId, outcome: Outcome, source: FeedbackSource) -> Self {
        Self {
            macro_id,
            outcome,
            source,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }
}

/// One row of the ranked list returned with every routing decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub id: MacroId,
    pub macro_name: String,
    pub cosine: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub decision: RouteDecision,
    pub ranked: Vec<RankedCandidate>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HandleOutcome {
    Executed {
        decision: RouteDecision,
        plan: ApiCallPlan,
        result: ExecutionResult,
        feedback: FeedbackEvent,
    },
    DryRun {
        decision: RouteDecision,
        plan: ApiCallPlan,
    },
    /// Matched, but parameters are missing or malformed.
    NeedsInput {
        decision: RouteDecision,
        reason: String,
    },
    NeedsTraining {
        decision: RouteDecision,
    },
}

#[derive(Debug, Clone)]
struct Indexed {
    record: MacroRecord,
    vector: DocumentVector,
}

/// Immutable view of the registry with its fitted vocabulary.
#[derive(Debug, Clone)]
pub struct Snapshot {
    revision: u64,
    vocab: Option<Vocabulary>,
    entries: Vec<Indexed>,
    theta: f64,
    alpha: f64,
}

impl Snapshot {
    pub fn build(registry: &Registry, config: &PipelineConfig) -> Self {
        let corpus: Vec<String> = registry.macros().iter().map(MacroRecord::corpus_text).collect();
        let vocab = Vocabulary::fit(&corpus, config.stopwords.tokenizer()).ok();
        let entries = registry
            .macros()
            .iter()
            .zip(&corpus)
            .map(|(record, text)| Indexed {
                record: record.clone(),
                vector: vocab.as_ref().map(|v| v.transform(text)).unwrap_or_default(),
            })
            .collect();
        Self {
            revision: registry.revision(),
            vocab,
            entries,
            theta: config.theta,
            alpha: config.alpha,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    pub fn vectorize(&self, text: &str) -> DocumentVector {
        self.vocab.as_ref().map(|v| v.transform(text)).unwrap_or_default()
    }

    /// `(id, vector)` per macro in id order.
    pub fn index(&self) -> Vec<(MacroId, DocumentVector)> {
        self.entries.iter().map(|e| (e.record.id, e.vector.clone())).collect()
    }

    pub fn record(&self, id: MacroId) -> Option<&MacroRecord> {
        self.entries.iter().map(|e| &e.record).find(|r| r.id == id)
    }

    /// Score every macro. An utterance with no known terms scores 0
    /// everywhere, feedback included.
    pub fn rank(&self, utterance: &str) -> Vec<RankedCandidate> {
        let query = self.vectorize(utterance);
        let scored: Vec<(MacroId, f64)> = self
            .entries
            .iter()
            .map(|e| {
                let s = if query.is_empty() {
                    0.0
                } else {
                    blended_score(matcher::cosine(&query, &e.vector), e.record.stats, self.alpha)
                };
                (e.record.id, s)
            })
            .collect();
        matcher::order_scores(scored)
            .into_iter()
            .map(|m| {
                let entry = self
                    .entries
                    .iter()
                    .find(|e| e.record.id == m.id)
                    .expect("ranked id indexed");
                RankedCandidate {
                    rank: m.rank,
                    id: m.id,
                    macro_name: entry.record.macro_name.clone(),
                    cosine: matcher::cosine(&query, &entry.vector),
                    score: m.score,
                }
            })
            .collect()
    }

    pub fn route(&self, utterance: &str) -> RouteOutcome {
        let ranked = self.rank(utterance);
        let decision = match ranked.first() {
            Some(top) if top.score >= self.theta => {
                let record = self.record(top.id).expect("ranked id indexed");
                let bound =
                    slots::extract(utterance, &record.slot_specs).and_then(|raw| slots::validate(&raw, &record.params));
                let (bindings, slot_error) = match bound {
                    Ok(b) => (b, None),
                    Err(e) => (Vec::new(), Some(e)),
                };
                RouteDecision::Matched {
                    id: top.id,
                    macro_name: top.macro_name.clone(),
                    score: top.score,
                    bindings,
                    slot_error,
                }
            }
            Some(top) => RouteDecision::NoMatch {
                best_id: Some(top.id),
                best_score: top.score,
            },
            None => RouteDecision::NoMatch {
                best_id: None,
                best_score: 0.0,
            },
        };
        RouteOutcome {
            decision,
            ranked,
            theta: self.theta,
        }
    }

    /// Top-`k` macros by plain cosine against a task description.
    pub fn propose(&self, description: &str, k: usize) -> Vec<MatchResult> {
        let mut out = matcher::rank(&self.vectorize(description), &self.index());
        out.truncate(k);
        out
    }

    /// Route, bind and build the plan; with a transport also execute it.
    /// Feedback from an execution is returned, not applied.
    pub fn run(&self, utterance: &str, transport: Option<&dyn Transport>) -> HandleOutcome {
        let decision = self.route(utterance).decision;
        let (id, bindings) = match &decision {
            RouteDecision::Matched {
                slot_error: Some(e), ..
            } => {
                let reason = e.to_string();
                return HandleOutcome::NeedsInput { decision, reason };
            }
            RouteDecision::Matched { id, bindings, .. } => (*id, bindings.clone()),
            _ => return HandleOutcome::NeedsTraining { decision },
        };
        let record = self.record(id).expect("matched id indexed");
        let plan = match executor::instantiate(&record.call_templates, &bindings) {
            Ok(p) => p,
            Err(e) => {
                return HandleOutcome::NeedsInput {
                    decision,
                    reason: e.to_string(),
                }
            }
        };
        let Some(transport) = transport else {
            return HandleOutcome::DryRun { decision, plan };
        };
        let result = executor::execute(&plan, transport);
        let outcome = if result.succeeded {
            Outcome::Success
        } else {
            Outcome::Failure
        };
        HandleOutcome::Executed {
            decision,
            plan,
            result,
            feedback: FeedbackEvent::now(id, outcome, FeedbackSource::Environment),
        }
    }
}

/// Owner of the registry. All mutations pass through here.
#[derive(Debug)]
pub struct Engine {
    registry: Registry,
    config: PipelineConfig,
    snapshot: Arc<Snapshot>,
    events: Vec<FeedbackEvent>,
}

impl Engine {
    pub fn new(registry: Registry, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let snapshot = Arc::new(Snapshot::build(&registry, &config));
        Ok(Self {
            registry,
            config,
            snapshot,
            events: Vec::new(),
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot)
    }

    pub fn events(&self) -> &[FeedbackEvent] {
        &self.events
    }

    fn refresh(&mut self) {
        self.snapshot = Arc::new(Snapshot::build(&self.registry, &self.config));
    }

    pub fn set_theta(&mut self, theta: f64) -> Result<(), PipelineError> {
        let mut config = self.config.clone();
        config.theta = theta;
        config.validate()?;
        self.config = config;
        self.refresh();
        Ok(())
    }

    pub fn route(&self, utterance: &str) -> RouteOutcome {
        self.snapshot.route(utterance)
    }

    pub fn add_macro(&mut self, m: NewMacro) -> Result<MacroId, PipelineError> {
        let id = self.registry.add_macro(m)?;
        self.refresh();
        Ok(id)
    }

    pub fn remove_macro(&mut self, id: MacroId) -> Result<MacroRecord, PipelineError> {
        let removed = self.registry.remove_macro(id)?;
        self.refresh();
        Ok(removed)
    }

    pub fn apply_feedback(&mut self, event: FeedbackEvent) -> Result<FeedbackStats, PipelineError> {
        let stats = self.registry.record_feedback(event.macro_id, event.outcome)?;
        self.events.push(event);
        self.refresh();
        Ok(stats)
    }

    pub fn record_feedback(
        &mut self,
        id: MacroId,
        outcome: Outcome,
        source: FeedbackSource,
    ) -> Result<FeedbackStats, PipelineError> {
        self.apply_feedback(FeedbackEvent::now(id, outcome, source))
    }

    /// Route and execute; an execution appends an environment feedback event.
    /// `None` transport is a dry run.
    pub fn handle(&mut self, utterance: &str, transport: Option<&dyn Transport>) -> HandleOutcome {
        let outcome = self.snapshot.run(utterance, transport);
        if let HandleOutcome::Executed { feedback, .. } = &outcome {
            self.apply_feedback(feedback.clone())
                .expect("executed macro exists in the registry");
        }
        outcome
    }

    pub fn commit_training(&mut self, session: &mut TrainingSession) -> Result<MacroId, PipelineError> {
        let draft = match (&session.state, &session.draft) {
            (TrainingState::Drafting, Some(d)) => d.clone(),
            _ => {
                return Err(PipelineError::IllegalTransition {
                    from: session.state,
                    action: "commit",
                })
            }
        };
        let id = self.add_macro(draft)?;
        session.state = TrainingState::Committed;
        session.macro_id = Some(id);
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingState {
    Described,
    Proposed,
    Drafting,
    Committed,
}

impl fmt::Display for TrainingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrainingState::Described => "described",
            TrainingState::Proposed => "proposed",
            TrainingState::Drafting => "drafting",
            TrainingState::Committed => "committed",
        };
        f.write_str(s)
    }
}

/// Described → Proposed → (accept an existing macro | Drafting → Committed).
/// Drafting may be re-entered to edit the draft before committing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSession {
    pub state: TrainingState,
    pub description: String,
    pub proposals: Vec<MatchResult>,
    pub draft: Option<NewMacro>,
    /// Committed or accepted macro.
    pub macro_id: Option<MacroId>,
}

impl TrainingSession {
    pub fn new(description: &str) -> Result<Self, PipelineError> {
        let description = description.trim();
        if description.is_empty() {
            return Err(PipelineError::EmptyDescription);
        }
        Ok(Self {
            state: TrainingState::Described,
            description: description.to_string(),
            proposals: Vec::new(),
            draft: None,
            macro_id: None,
        })
    }

    fn illegal(&self, action: &'static str) -> PipelineError {
        PipelineError::IllegalTransition {
            from: self.state,
            action,
        }
    }

    pub fn propose(&mut self, snapshot: &Snapshot, k: usize) -> Result<&[MatchResult], PipelineError> {
        if !matches!(self.state, TrainingState::Described | TrainingState::Proposed) {
            return Err(self.illegal("propose"));
        }
        self.proposals = snapshot.propose(&self.description, k);
        self.state = TrainingState::Proposed;
        Ok(&self.proposals)
    }

    /// Reuse one of the proposed macros instead of defining a new one.
    pub fn accept_existing(&mut self, id: MacroId) -> Result<(), PipelineError> {
        if self.state != TrainingState::Proposed || !self.proposals.iter().any(|p| p.id == id) {
            return Err(self.illegal("accept"));
        }
        self.macro_id = Some(id);
        self.state = TrainingState::Committed;
        Ok(())
    }

    pub fn draft(&mut self, draft: NewMacro) -> Result<(), PipelineError> {
        if !matches!(self.state, TrainingState::Proposed | TrainingState::Drafting) {
            return Err(self.illegal("draft"));
        }
        self.draft = Some(draft);
        self.state = TrainingState::Drafting;
        Ok(())
    }
}

/// Start a session and fill it with the top-`k` existing macros.
pub fn training_propose(description: &str, snapshot: &Snapshot, k: usize) -> Result<TrainingSession, PipelineError> {
    let mut session = TrainingSession::new(description)?;
    session.propose(snapshot, k)?;
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{ApiCallTemplate, HttpMethod, ParamSpec};
    use crate::slots::SlotSpec;

    fn engine() -> Engine {
        let mut r = Registry::new();
        r.add_macro(NewMacro {
            use_case: "Personal Finance Management".into(),
            scenario_description: "Track and compare spending on specific categories over time.".into(),
            macro_name: "TRACK_AND_COMPARE_SPENDING".into(),
            params: vec![ParamSpec::text("category", ""), ParamSpec::text("dates", "")],
            call_templates: vec![ApiCallTemplate::new(
                HttpMethod::Get,
                "http://api.local/finance/spending?category={category}&dates={dates}",
            )],
            slot_specs: vec![
                SlotSpec::new("category", "on {category} in"),
                SlotSpec::new("dates", "in {dates}"),
            ],
        })
        .unwrap();
        r.add_macro(NewMacro {
            use_case: "Smart Home Automation".into(),
            scenario_description: "Adjust home devices based on environmental conditions.".into(),
            macro_name: "ADJUST_THERMOSTAT_IF_COLD".into(),
            params: vec![ParamSpec::number("tempThreshold", "")],
            call_templates: vec![ApiCallTemplate::new(
                HttpMethod::Post,
                "http://api.local/home/thermostat/adjust",
            )],
            slot_specs: vec![SlotSpec::new("tempThreshold", "below {tempThreshold} degrees")],
        })
        .unwrap();
        Engine::new(r, PipelineConfig::default()).unwrap()
    }

    #[test]
    fn blend_examples() {
        let zero = FeedbackStats::default();
        assert_eq!(blended_score(0.37, zero, 1.0), 0.37);
        assert!((blended_score(0.6, zero, 0.8) - 0.58).abs() < 1e-12);
        let good = FeedbackStats {
            successes: 9,
            attempts: 10,
        };
        let bad = FeedbackStats {
            successes: 0,
            attempts: 10,
        };
        assert!(blended_score(0.5, good, 0.8) > blended_score(0.5, bad, 0.8));
    }

    #[test]
    fn empty_utterance_is_no_match_at_zero() {
        let e = engine();
        match e.route("").decision {
            RouteDecision::NoMatch { best_score, best_id } => {
                assert_eq!(best_score, 0.0);
                assert_eq!(best_id, Some(MacroId(1)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_registry_routes_nowhere() {
        let e = Engine::new(Registry::new(), PipelineConfig::default()).unwrap();
        assert_eq!(
            e.route("anything").decision,
            RouteDecision::NoMatch {
                best_id: None,
                best_score: 0.0
            }
        );
    }

    #[test]
    fn matched_decision_carries_bindings() {
        let e = engine();
        match e.route("Compare my spending on groceries in March").decision {
            RouteDecision::Matched {
                id,
                bindings,
                slot_error,
                ..
            } => {
                assert_eq!(id, MacroId(1));
                assert_eq!(slot_error, None);
                assert_eq!(
                    bindings,
                    vec![
                        slots::Binding::text("category", "groceries"),
                        slots::Binding::text("dates", "march")
                    ]
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_slot_surfaces_on_match() {
        let e = engine();
        let out = e.route("track spending");
        assert!(matches!(
            out.decision,
            RouteDecision::Matched {
                slot_error: Some(slots::SlotError::MissingSlot { .. }),
                ..
            }
        ));
    }

    #[test]
    fn config_ranges_checked() {
        let bad = PipelineConfig {
            theta: 1.5,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            alpha: -0.1,
            ..PipelineConfig::default()
        };
        assert!(Engine::new(Registry::new(), bad).is_err());
        let cfg = PipelineConfig::from_json(r#"{"theta":0.2,"stopwords":["the"]}"#).unwrap();
        assert_eq!(cfg.theta, 0.2);
        assert_eq!(cfg.alpha, DEFAULT_ALPHA);
        assert_eq!(cfg.stopwords, StopwordSetting::Custom(vec!["the".into()]));
    }

    #[test]
    fn session_transitions() {
        let mut e = engine();
        assert!(matches!(
            TrainingSession::new("  "),
            Err(PipelineError::EmptyDescription)
        ));
        let mut s = TrainingSession::new("order groceries").unwrap();
        assert!(matches!(
            s.draft(NewMacro {
                use_case: "x".into(),
                scenario_description: "y".into(),
                macro_name: "Z".into(),
                params: vec![],
                call_templates: vec![],
                slot_specs: vec![],
            }),
            Err(PipelineError::IllegalTransition { .. })
        ));
        assert!(matches!(
            e.commit_training(&mut s),
            Err(PipelineError::IllegalTransition { .. })
        ));
        s.propose(&e.snapshot(), 1).unwrap();
        assert_eq!(s.state, TrainingState::Proposed);
        assert!(s.accept_existing(MacroId(42)).is_err());
    }
}
