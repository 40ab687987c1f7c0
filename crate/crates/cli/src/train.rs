//! Line-oriented training session: describe, review proposals, then either
//! reuse a macro or type in a new one.

use std::io::{BufRead, Write};
use std::path::Path;

use macro_router_core::pipeline::{Engine, TrainingSession};
use macro_router_core::registry::{ApiCallTemplate, HttpMethod, MacroId, NewMacro, ParamKind, ParamSpec};
use macro_router_core::slots::{SlotFallback, SlotSpec};
use thiserror::Error;

use crate::error::ApiError;
use crate::service::DEFAULT_PROPOSALS;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training cancelled")]
    Cancelled,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Rejected(#[from] ApiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainResult {
    Reused(MacroId),
    Committed(MacroId),
}

struct Prompt<R, W> {
    input: R,
    out: W,
}

impl<R: BufRead, W: Write> Prompt<R, W> {
    /// Trimmed answer; end of input cancels the session.
    fn ask(&mut self, question: &str) -> Result<String, TrainError> {
        write!(self.out, "{question}> ")?;
        self.out.flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            writeln!(self.out)?;
            return Err(TrainError::Cancelled);
        }
        Ok(line.trim().to_string())
    }

    fn yes(&mut self, question: &str) -> Result<bool, TrainError> {
        Ok(matches!(
            self.ask(&format!("{question} [y/N]"))?.to_lowercase().as_str(),
            "y" | "yes"
        ))
    }

    fn say(&mut self, text: impl std::fmt::Display) -> Result<(), TrainError> {
        writeln!(self.out, "{text}")?;
        Ok(())
    }
}

/// Run one session against `engine`. The caller persists the registry.
pub fn run(engine: &mut Engine, input: impl BufRead, out: impl Write) -> Result<TrainResult, TrainError> {
    let mut p = Prompt { input, out };
    let description = p.ask("describe the task")?;
    let mut session = TrainingSession::new(&description).map_err(ApiError::from)?;
    let snapshot = engine.snapshot();
    session.propose(&snapshot, DEFAULT_PROPOSALS).map_err(ApiError::from)?;

    if session.proposals.is_empty() {
        p.say("no existing macros")?;
    } else {
        p.say("closest existing macros:")?;
        for prop in &session.proposals {
            let rec = snapshot.record(prop.id).expect("proposal is indexed");
            p.say(format_args!(
                "  #{} {} [{}] {:.3}",
                prop.id, rec.macro_name, rec.use_case, prop.score
            ))?;
        }
        loop {
            let choice = p.ask("id to reuse, blank to define a new macro")?;
            if choice.is_empty() {
                break;
            }
            match choice.trim_start_matches('#').parse::<u64>() {
                Ok(id) if session.accept_existing(MacroId(id)).is_ok() => {
                    p.say(format_args!("reusing #{id}"))?;
                    return Ok(TrainResult::Reused(MacroId(id)));
                }
                _ => p.say("not one of the proposals")?,
            }
        }
    }

    let draft = loop {
        let file = p.ask("draft file, blank to type it in")?;
        if file.is_empty() {
            break type_draft(&mut p, &description)?;
        }
        match read_draft(Path::new(&file)) {
            Ok(d) => break d,
            Err(e) => p.say(format_args!("error: {e}"))?,
        }
    };
    p.say(serde_json::to_string_pretty(&draft).expect("draft serializes"))?;
    if !p.yes("commit")? {
        return Err(TrainError::Cancelled);
    }
    session.draft(draft).map_err(ApiError::from)?;
    let id = engine.commit_training(&mut session).map_err(ApiError::from)?;
    p.say(format_args!("committed #{id}"))?;
    Ok(TrainResult::Committed(id))
}

fn read_draft(path: &Path) -> Result<NewMacro, ApiError> {
    let text = std::fs::read_to_string(path).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))?;
    crate::error::parse_body(text.as_bytes())
}

fn type_draft<R: BufRead, W: Write>(p: &mut Prompt<R, W>, description: &str) -> Result<NewMacro, TrainError> {
    let use_case = p.ask("use case")?;
    let scenario = p.ask(&format!("scenario [{description}]"))?;
    let scenario_description = if scenario.is_empty() {
        description.to_string()
    } else {
        scenario
    };
    let macro_name = p.ask("macro name")?;

    let mut params = Vec::new();
    loop {
        let answer = p.ask("parameter as name or name:number, blank to finish")?;
        if answer.is_empty() {
            break;
        }
        let (name, kind) = match answer.split_once(':') {
            Some((n, "number")) => (n.trim(), ParamKind::Number),
            Some((n, "text")) => (n.trim(), ParamKind::Text),
            Some(_) => {
                p.say("kind must be text or number")?;
                continue;
            }
            None => (answer.as_str(), ParamKind::Text),
        };
        let description = p.ask(&format!("description of {name}"))?;
        params.push(ParamSpec {
            name: name.to_string(),
            kind,
            description,
        });
    }

    let mut slot_specs = Vec::new();
    for param in &params {
        let template = p.ask(&format!(
            "slot template for {}, e.g. `to {{{}}} by`",
            param.name, param.name
        ))?;
        let fallback = if p.yes("use the rest of the utterance when the anchors are missing")? {
            SlotFallback::Remainder
        } else {
            SlotFallback::None
        };
        slot_specs.push(SlotSpec {
            param: param.name.clone(),
            template,
            fallback,
        });
    }

    let mut call_templates = Vec::new();
    loop {
        let line = p.ask("call as METHOD URL, blank to finish")?;
        if line.is_empty() {
            break;
        }
        let Some((method, url)) = line.split_once(char::is_whitespace) else {
            p.say("expected METHOD URL")?;
            continue;
        };
        let Ok(method) = method.parse::<HttpMethod>() else {
            p.say("method must be GET, POST, PUT or DELETE")?;
            continue;
        };
        let mut call = ApiCallTemplate::new(method, url.trim());
        loop {
            let body = p.ask("JSON body, blank for none")?;
            if body.is_empty() {
                break;
            }
            match serde_json::from_str(&body) {
                Ok(v) => {
                    call = call.with_body(v);
                    break;
                }
                Err(e) => p.say(format_args!("invalid JSON: {e}"))?,
            }
        }
        let outputs = p.ask("outputs as name=path, comma separated, blank for none")?;
        for pair in outputs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match pair.split_once('=') {
                Some((name, path)) => call = call.bind(name.trim(), path.trim()),
                None => p.say(format_args!("skipping `{pair}`: expected name=path"))?,
            }
        }
        call_templates.push(call);
    }

    Ok(NewMacro {
        use_case,
        scenario_description,
        macro_name,
        params,
        call_templates,
        slot_specs,
    })
}
