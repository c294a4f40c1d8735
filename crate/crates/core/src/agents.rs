//! Document-author agents: what an agent may observe, output cleaning and
//! truncation, scripted baselines, and the LLM-backed pipeline.

use std::sync::{Arc, LazyLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::llm::{CallContext, ChatBackend, ChatRequest, LlmError};
use crate::model::{Document, LlmParams, Query, RoundRecord, ScriptedKind};
use crate::prompts::{build_clean_prompt, build_prompt, PromptBundle, PromptSettings, PromptTemplates};
use crate::text::{tokenize, IdfTable};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("empty generation")]
    EmptyGeneration,
    #[error("player {player_id}, round {round}: {source}")]
    Llm {
        player_id: String,
        round: u32,
        source: LlmError,
    },
}

/// Everything one player may observe before writing its round-`round_number`
/// document: past rounds only, each with its ranking.
#[derive(Debug, Clone)]
pub struct GameView {
    pub query: Query,
    pub player_id: String,
    pub own_current_doc: Document,
    /// Rounds `0..round_number`, oldest first.
    pub history: Arc<[RoundRecord]>,
    pub round_number: u32,
    /// Seed of the stream scoped to (game, round, player).
    pub rng_seed: u64,
}

impl GameView {
    pub fn rng_stream(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

static HEADER_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*#{1,6}(\s.*)?$").unwrap());
static BOLD_TITLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\*\*[^*]+\*\*:?\s*$").unwrap());
static PREFIX_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(\*\*)?((sure|certainly|of course|okay|ok)\b[^\n]*|(here is|here's|below is)\b[^\n]*|(the\s+)?(modified|revised|updated|new|improved|edited|rewritten|final)\s+(document|text|version)\b[^\n]*):\s*(\*\*)?\s*$",
    )
    .unwrap()
});
static INLINE_PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(\*\*)?((here is|here's|below is)\b[^:\n]{0,80}|(the\s+)?(modified|revised|updated|new|improved|edited|rewritten|final)\s+(document|text|version)(\s+is)?):\s*(\*\*)?\s*(?P<rest>\S.*)$",
    )
    .unwrap()
});
/// Short line ending in a colon: probably a prefix the rules did not cover.
static RESIDUAL_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\S+\s+){0,11}\S+:\s*$").unwrap());

fn strip_known_prefixes(raw: &str) -> String {
    let mut lines: Vec<&str> = raw.lines().collect();
    let mut first_rest: Option<String> = None;
    loop {
        let Some(first) = lines.first() else { break };
        if first.trim().is_empty()
            || HEADER_LINE.is_match(first)
            || BOLD_TITLE.is_match(first)
            || PREFIX_LINE.is_match(first)
        {
            lines.remove(0);
            continue;
        }
        if let Some(c) = INLINE_PREFIX.captures(first) {
            first_rest = Some(c["rest"].to_string());
        }
        break;
    }
    let mut out = String::new();
    if let Some(rest) = first_rest {
        out.push_str(&rest);
        lines.remove(0);
        if !lines.is_empty() {
            out.push('\n');
        }
    }
    out.push_str(&lines.join("\n"));
    out.trim().to_string()
}

fn has_residual_prefix(text: &str) -> bool {
    text.lines().next().is_some_and(|l| RESIDUAL_PREFIX.is_match(l))
}

/// Removes headers and introductory prefixes. Known patterns are stripped
/// by rule; if the first line still looks like a prefix and a `cleaner` is
/// given, the cleaner is asked to fix it and the rules run again.
pub fn clean_generated_text(
    raw: &str,
    cleaner: Option<&dyn Fn(&str) -> Result<String, AgentError>>,
) -> Result<String, AgentError> {
    let mut text = strip_known_prefixes(raw);
    if has_residual_prefix(&text) {
        if let Some(clean) = cleaner {
            text = strip_known_prefixes(&clean(&text)?);
        }
    }
    if tokenize(&text).is_empty() {
        return Err(AgentError::EmptyGeneration);
    }
    Ok(text)
}

/// First `limit` tokens joined by single spaces. Text within the limit is
/// returned unchanged, spacing and case included.
pub fn truncate_tokens(text: &str, limit: usize) -> String {
    let tokens = tokenize(text);
    if tokens.len() <= limit {
        return text.to_string();
    }
    tokens.tokens()[..limit].join(" ")
}

/// Text written by a rule-based agent.
pub fn scripted_agent_step(kind: ScriptedKind, view: &GameView, idf: Option<&IdfTable>) -> String {
    let own = &view.own_current_doc.text;
    match kind {
        ScriptedKind::Noop => own.clone(),
        ScriptedKind::Copycat => {
            if view.round_number <= 1 {
                return own.clone();
            }
            view.history
                .last()
                .and_then(RoundRecord::winner)
                .map_or_else(|| own.clone(), |d| d.text.clone())
        }
        ScriptedKind::TermInjector => {
            let present = tokenize(own);
            let present = present.distinct();
            let query = tokenize(&view.query.text);
            let rarest = query
                .distinct()
                .into_iter()
                .filter(|t| !present.contains(t))
                .min_by_key(|t| (idf.map_or(0, |i| i.df(t)), t.to_string()));
            match rarest {
                Some(term) if own.trim().is_empty() => term.to_string(),
                Some(term) => format!("{own} {term}"),
                None => own.clone(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub text: String,
    /// Set when every attempt failed and the previous document was kept.
    pub fallback: bool,
    pub attempts: u32,
    pub prompt: Option<PromptBundle>,
}

/// Model and call settings of one LLM agent.
#[derive(Clone, Copy)]
pub struct LlmAgent<'a> {
    pub model: &'a str,
    pub prompt: PromptSettings<'a>,
    pub params: &'a LlmParams,
    pub max_output_tokens: u32,
    pub templates: &'a PromptTemplates,
}

/// Builds prompts, calls the model, cleans and truncates. Retryable
/// failures and empty generations are retried `params.retries` times with
/// exponential backoff.
pub fn llm_agent_step(
    view: &GameView,
    agent: LlmAgent<'_>,
    llm: &dyn ChatBackend,
) -> Result<AgentOutput, AgentError> {
    let bundle = build_prompt(view, agent.prompt, agent.templates);
    let request = ChatRequest {
        model: agent.model.to_string(),
        system: bundle.system_prompt.clone(),
        user: bundle.user_prompt.clone(),
        temperature: agent.params.temperature,
        top_p: agent.params.top_p,
        max_output_tokens: agent.max_output_tokens,
    };
    let ctx = CallContext {
        query_id: view.query.id.clone(),
        round: view.round_number,
        player_id: view.player_id.clone(),
        current_document: view.own_current_doc.text.clone(),
    };
    let cleaner = |text: &str| -> Result<String, AgentError> {
        let req = ChatRequest {
            system: String::new(),
            user: build_clean_prompt(text, agent.templates),
            ..request.clone()
        };
        llm.chat(&req, &ctx).map_err(|source| AgentError::Llm {
            player_id: view.player_id.clone(),
            round: view.round_number,
            source,
        })
    };

    let max_attempts = agent.params.retries + 1;
    let mut last_error = AgentError::EmptyGeneration;
    for attempt in 0..max_attempts {
        if attempt > 0 && agent.params.backoff_ms > 0 {
            let delay = agent.params.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
        let outcome = llm
            .chat(&request, &ctx)
            .map_err(|source| AgentError::Llm {
                player_id: view.player_id.clone(),
                round: view.round_number,
                source,
            })
            .and_then(|raw| clean_generated_text(&raw, Some(&cleaner)));
        match outcome {
            Ok(text) => {
                return Ok(AgentOutput {
                    text: truncate_tokens(&text, agent.prompt.token_limit as usize),
                    fallback: false,
                    attempts: attempt + 1,
                    prompt: Some(bundle),
                })
            }
            Err(e) => {
                let retry = match &e {
                    AgentError::EmptyGeneration => true,
                    AgentError::Llm { source, .. } => source.is_retryable(),
                };
                last_error = e;
                if !retry {
                    break;
                }
            }
        }
    }
    if agent.params.fallback_to_noop {
        log::warn!(
            "player {} round {}: falling back to previous document ({last_error})",
            view.player_id,
            view.round_number
        );
        Ok(AgentOutput {
            text: view.own_current_doc.text.clone(),
            fallback: true,
            attempts: max_attempts,
            prompt: Some(bundle),
        })
    } else {
        Err(last_error)
    }
}
