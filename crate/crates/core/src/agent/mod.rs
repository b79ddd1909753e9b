//! Planning loop around a black-box action generator.
//!
//! Instructions go out in a fixed text template, generations come back as
//! `<ACT> device : setting </ACT>` spans, and the estimator filters what
//! the generator proposes before anything is executed.

mod generator;
mod session;

pub use generator::{
    ActionGenerator, HttpGenerator, HttpGeneratorConfig, MockGenerator, MockGeneratorConfig,
};
pub use session::{
    generate_all_at_once, run_plan, run_session, DoneReason, PlanSession, SelectedBy, Selection,
    SelectionPolicy, SessionStatus, StepOutcome, StepRecord, DEFAULT_MAX_STEPS,
};

use crate::dataset::{Action, Context};
use crate::{Error, Result};

const INST_HEAD: &str = "[INST] You are a home assistant, and you receive a command ";
const INST_TAIL: &str = "Please deploy your next action: [/INST]";
const PARA: &str = ". \n\n";
const DEPLOYED: &str = "You deployed ";
const ACT_OPEN: &str = "<ACT>";
const ACT_CLOSE: &str = "</ACT>";

/// `<ACT> device : setting </ACT>`.
pub fn markup(action: &Action) -> String {
    format!("{ACT_OPEN} {} {ACT_CLOSE}", action.render())
}

/// Renders the generator instruction for the current context.
pub fn format_instruction(ctx: &Context) -> Result<String> {
    if ctx.prompt.trim().is_empty() {
        return Err(Error::Config("instruction needs a non-empty prompt".into()));
    }
    let mut out = String::with_capacity(128);
    out.push_str(INST_HEAD);
    out.push_str(&ctx.prompt);
    out.push_str(PARA);
    if !ctx.history.is_empty() {
        out.push_str(DEPLOYED);
        let acts: Vec<String> = ctx.history.iter().map(markup).collect();
        out.push_str(&acts.join(", "));
        out.push_str(PARA);
    }
    out.push_str(INST_TAIL);
    Ok(out)
}

/// Inverse of [`format_instruction`] for well-formed input.
pub fn parse_instruction(instruction: &str) -> Option<Context> {
    let body = instruction
        .strip_prefix(INST_HEAD)?
        .strip_suffix(INST_TAIL)?;
    let end = body.find(PARA)?;
    let prompt = &body[..end];
    let rest = &body[end + PARA.len()..];
    let history = if rest.is_empty() {
        Vec::new()
    } else {
        let list = rest.strip_prefix(DEPLOYED)?.strip_suffix(PARA)?;
        parse_actions(list).actions
    };
    Context::with_history(prompt, history).ok()
}

/// Actions recovered from one generation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedActions {
    pub actions: Vec<Action>,
    /// Spans without a `:` separator, or an unterminated trailing span.
    pub malformed: usize,
}

/// Extracts `<ACT>` spans in order. Duplicates are kept.
pub fn parse_actions(generation: &str) -> ParsedActions {
    let mut out = ParsedActions::default();
    let mut rest = generation;
    while let Some(open) = rest.find(ACT_OPEN) {
        let after = &rest[open + ACT_OPEN.len()..];
        let Some(close) = after.find(ACT_CLOSE) else {
            out.malformed += 1;
            break;
        };
        let inner = &after[..close];
        rest = &after[close + ACT_CLOSE.len()..];
        match inner.split_once(':').map(|(d, s)| Action::new(d, s)) {
            Some(Ok(a)) => out.actions.push(a),
            _ => out.malformed += 1,
        }
    }
    if out.malformed > 0 {
        log::warn!("dropped {} malformed action span(s)", out.malformed);
    }
    out
}

/// One generator call for `ctx`, parsed and deduplicated against the
/// history and within itself.
pub fn generate_candidates(generator: &dyn ActionGenerator, ctx: &Context) -> Result<Vec<Action>> {
    let text = generator.generate(&format_instruction(ctx)?)?;
    let mut out: Vec<Action> = Vec::new();
    for a in parse_actions(&text).actions {
        if !ctx.history.contains(&a) && !out.contains(&a) {
            out.push(a);
        }
    }
    Ok(out)
}
