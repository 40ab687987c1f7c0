//! Plain-text output for the CLI.

use std::fmt::Write as _;

use macro_router_core::executor::{ApiCallPlan, ExecutionResult};
use macro_router_core::matcher::RouteDecision;
use macro_router_core::pipeline::{HandleOutcome, RouteOutcome, Snapshot};
use macro_router_core::registry::Registry;

fn label(snapshot: &Snapshot, id: macro_router_core::registry::MacroId) -> String {
    match snapshot.record(id) {
        Some(r) => format!("#{} {} [{}]", id, r.macro_name, r.use_case),
        None => format!("#{id}"),
    }
}

pub fn decision(d: &RouteDecision, snapshot: &Snapshot) -> String {
    match d {
        RouteDecision::Matched {
            id,
            score,
            bindings,
            slot_error,
            ..
        } => {
            let mut s = format!("matched {} score {score:.3}", label(snapshot, *id));
            for b in bindings {
                let _ = write!(s, "\n  {} = {}", b.param, b.value);
            }
            if let Some(e) = slot_error {
                let _ = write!(s, "\n  needs input: {e}");
            }
            s
        }
        RouteDecision::NoMatch { best_id, best_score } => match best_id {
            Some(id) => format!(
                "no match (best {} at {best_score:.3} is below threshold); describe it with `train`",
                label(snapshot, *id)
            ),
            None => "no match; describe it with `train`".to_string(),
        },
        RouteDecision::NeedsTraining => "registry is empty; add a macro with `train`".to_string(),
    }
}

/// Ranked candidates with a marker where scores fall below θ.
pub fn route(outcome: &RouteOutcome, snapshot: &Snapshot) -> String {
    let mut out = String::new();
    let mut marked = false;
    for c in &outcome.ranked {
        if !marked && c.score < outcome.theta {
            let _ = writeln!(out, "  ---- theta {:.2} ----", outcome.theta);
            marked = true;
        }
        let _ = writeln!(
            out,
            "  {:>2}. {:<36} cos {:.3}  score {:.3}",
            c.rank,
            format!("#{} {}", c.id, c.macro_name),
            c.cosine,
            c.score
        );
    }
    if !marked {
        let _ = writeln!(out, "  ---- theta {:.2} ----", outcome.theta);
    }
    let _ = writeln!(out, "decision: {}", decision(&outcome.decision, snapshot));
    out
}

pub fn plan(plan: &ApiCallPlan) -> String {
    let mut out = String::new();
    for (i, c) in plan.calls.iter().enumerate() {
        let _ = writeln!(out, "  {}. {} {}", i + 1, c.method.as_str(), c.url);
        if let Some(body) = &c.body {
            let _ = writeln!(out, "     body {body}");
        }
        for b in &c.output_bindings {
            let _ = writeln!(out, "     {} <- {}", b.bind_name, b.path);
        }
    }
    out
}

pub fn execution(result: &ExecutionResult) -> String {
    let mut out = String::new();
    for (i, c) in result.per_call.iter().enumerate() {
        let status = c.status_code.map_or("-".to_string(), |s| s.to_string());
        let _ = writeln!(out, "  {}. {} {} -> {status}", i + 1, c.method.as_str(), c.url);
        if let Some(e) = &c.error {
            let _ = writeln!(out, "     error: {e}");
        }
    }
    let _ = writeln!(
        out,
        "{}",
        if result.succeeded {
            "all calls succeeded".to_string()
        } else {
            format!("halted at call {}", result.halted_at.map_or(0, |i| i + 1))
        }
    );
    out
}

pub fn handle(outcome: &HandleOutcome, snapshot: &Snapshot) -> String {
    match outcome {
        HandleOutcome::Executed {
            decision: d, result, ..
        } => {
            format!("{}\n{}", decision(d, snapshot), execution(result))
        }
        HandleOutcome::DryRun { decision: d, plan: p } => {
            format!("{}\ndry run, nothing sent:\n{}", decision(d, snapshot), plan(p))
        }
        HandleOutcome::NeedsInput { decision: d, reason } => {
            format!("{}\ncannot execute: {reason}\n", decision(d, snapshot))
        }
        HandleOutcome::NeedsTraining { decision: d } => format!("{}\n", decision(d, snapshot)),
    }
}

pub fn macros(registry: &Registry) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<32} {:<36} {:>9}", "id", "macro", "use case", "ok/tries");
    for m in registry.macros() {
        let _ = writeln!(
            out,
            "{:>4}  {:<32} {:<36} {:>9}",
            m.id.0,
            m.macro_name,
            m.use_case,
            format!("{}/{}", m.stats.successes, m.stats.attempts)
        );
    }
    out
}
