//! Prompt templates and the builders for the instructional (system) part and
//! the listwise / pairwise feedback (user) part.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::index::sample;

use crate::agents::GameView;
use crate::model::{ContextKind, Document, Player, PromptVariant, Query, RoundRecord};

pub const TEMPLATE_VERSION: &str = "v1";

/// Rule added to the system prompt by the no-copy variant.
pub const NO_COPY_CLAUSE: &str = "Do not copy content from the documents of other participants. Copying text from other documents, in whole or in part, is not allowed.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub system_no_copy: String,
    pub clean: String,
    pub listwise: String,
    pub listwise_previous: String,
    pub pairwise: String,
    pub pair_entry: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: include_str!("../resources/prompts/system.txt").into(),
            system_no_copy: include_str!("../resources/prompts/system_no_copy.txt").into(),
            clean: include_str!("../resources/prompts/clean.txt").into(),
            listwise: include_str!("../resources/prompts/listwise.txt").into(),
            listwise_previous: include_str!("../resources/prompts/listwise_previous.txt").into(),
            pairwise: include_str!("../resources/prompts/pairwise.txt").into(),
            pair_entry: include_str!("../resources/prompts/pair_entry.txt").into(),
        }
    }
}

impl PromptTemplates {
    /// Bundled templates with any `<name>.txt` found in `dir` replacing the
    /// corresponding default.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("system", &mut t.system),
            ("system_no_copy", &mut t.system_no_copy),
            ("clean", &mut t.clean),
            ("listwise", &mut t.listwise),
            ("listwise_previous", &mut t.listwise_previous),
            ("pairwise", &mut t.pairwise),
            ("pair_entry", &mut t.pair_entry),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{name}` placeholders in one pass, so placeholder-like text
/// inside substituted values is left alone. Unknown placeholders are kept.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if after[..close]
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_')
                    && close > 0 =>
            {
                let name = &after[..close];
                match vars.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub user_prompt: String,
}

pub fn build_system_prompt(
    player: &Player,
    query: &Query,
    own_doc: &Document,
    variant: PromptVariant,
    token_limit: u32,
    templates: &PromptTemplates,
) -> String {
    let template = if variant.no_copy_clause {
        &templates.system_no_copy
    } else {
        &templates.system
    };
    let persona = player.persona.trim();
    // Drop the persona line entirely when the player has none.
    let template: String = if persona.is_empty() {
        template
            .split_inclusive('\n')
            .filter(|l| !l.contains("{persona}"))
            .collect()
    } else {
        template.clone()
    };
    let vars = BTreeMap::from([
        ("persona", persona.to_string()),
        ("query", query.text.clone()),
        ("current_document", own_doc.text.clone()),
        ("token_limit", token_limit.to_string()),
    ]);
    render(&template, &vars)
}

fn ranked_list(round: &RoundRecord, skip: Option<&str>, mark: Option<&str>) -> String {
    round
        .ranked_documents()
        .into_iter()
        .filter(|(e, _)| Some(e.player_id.as_str()) != skip)
        .map(|(e, d)| {
            let own = if Some(e.player_id.as_str()) == mark {
                " (your document)"
            } else {
                ""
            };
            format!("{}. {}{}\n", e.rank, d.text.trim(), own)
        })
        .collect()
}

/// Feedback from the last two ranked rounds. The most recent one leaves out
/// the agent's own document; the one before lists every document. With a
/// single past round only the first section is emitted.
pub fn build_listwise_user_prompt(view: &GameView, templates: &PromptTemplates) -> String {
    let n = view.history.len();
    let latest = view.history.last();
    let ranked_t = latest
        .map(|r| ranked_list(r, Some(&view.player_id), None))
        .unwrap_or_default();
    let previous_section = if n >= 2 {
        let vars = BTreeMap::from([(
            "ranked_list_t_minus_1",
            ranked_list(&view.history[n - 2], None, Some(&view.player_id)),
        )]);
        render(&templates.listwise_previous, &vars)
    } else {
        String::new()
    };
    let vars = BTreeMap::from([
        ("ranked_list_t", ranked_t),
        ("previous_section", previous_section),
        ("query", view.query.text.clone()),
    ]);
    render(&templates.listwise, &vars)
}

/// One sampled pair: round number and (rank, player id) of both documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPair {
    pub round: u32,
    pub a: (u32, String),
    pub b: (u32, String),
}

/// Samples one pair of distinct documents from each of the last three
/// rounds, oldest round first, using the view's rng stream.
pub fn sample_pairs(view: &GameView, include_own: bool) -> Vec<SampledPair> {
    let mut rng = view.rng_stream();
    let start = view.history.len().saturating_sub(3);
    view.history[start..]
        .iter()
        .filter_map(|round| {
            let candidates: Vec<_> = round
                .ranked_documents()
                .into_iter()
                .filter(|(e, _)| include_own || e.player_id != view.player_id)
                .collect();
            if candidates.len() < 2 {
                return None;
            }
            let picked = sample(&mut rng, candidates.len(), 2);
            let (ea, _) = candidates[picked.index(0)];
            let (eb, _) = candidates[picked.index(1)];
            Some(SampledPair {
                round: round.round,
                a: (ea.rank, ea.player_id.clone()),
                b: (eb.rank, eb.player_id.clone()),
            })
        })
        .collect()
}

pub fn build_pairwise_user_prompt(
    view: &GameView,
    include_own: bool,
    templates: &PromptTemplates,
) -> String {
    let pairs: String = sample_pairs(view, include_own)
        .into_iter()
        .map(|p| {
            let round = view
                .history
                .iter()
                .find(|r| r.round == p.round)
                .expect("pair sampled from history");
            let text = |player: &str| {
                round
                    .document(player)
                    .map(|d| d.text.trim().to_string())
                    .unwrap_or_default()
            };
            let vars = BTreeMap::from([
                ("round", p.round.to_string()),
                ("rank_a", p.a.0.to_string()),
                ("doc_a", text(&p.a.1)),
                ("rank_b", p.b.0.to_string()),
                ("doc_b", text(&p.b.1)),
            ]);
            render(&templates.pair_entry, &vars)
        })
        .collect();
    let vars = BTreeMap::from([("pairs", pairs), ("query", view.query.text.clone())]);
    render(&templates.pairwise, &vars)
}

/// Settings of one agent that shape its prompts.
#[derive(Debug, Clone, Copy)]
pub struct PromptSettings<'a> {
    pub player: &'a Player,
    pub variant: PromptVariant,
    pub token_limit: u32,
    pub pairwise_include_own: bool,
}

pub fn build_listwise_prompt(
    view: &GameView,
    settings: PromptSettings<'_>,
    templates: &PromptTemplates,
) -> PromptBundle {
    PromptBundle {
        system_prompt: build_system_prompt(
            settings.player,
            &view.query,
            &view.own_current_doc,
            settings.variant,
            settings.token_limit,
            templates,
        ),
        user_prompt: build_listwise_user_prompt(view, templates),
    }
}

pub fn build_pairwise_prompt(
    view: &GameView,
    settings: PromptSettings<'_>,
    templates: &PromptTemplates,
) -> PromptBundle {
    PromptBundle {
        system_prompt: build_system_prompt(
            settings.player,
            &view.query,
            &view.own_current_doc,
            settings.variant,
            settings.token_limit,
            templates,
        ),
        user_prompt: build_pairwise_user_prompt(view, settings.pairwise_include_own, templates),
    }
}

pub fn build_prompt(
    view: &GameView,
    settings: PromptSettings<'_>,
    templates: &PromptTemplates,
) -> PromptBundle {
    match settings.variant.kind {
        ContextKind::Listwise => build_listwise_prompt(view, settings, templates),
        ContextKind::Pairwise => build_pairwise_prompt(view, settings, templates),
    }
}

pub fn build_clean_prompt(raw: &str, templates: &PromptTemplates) -> String {
    render(&templates.clean, &BTreeMap::from([("text", raw.to_string())]))
}
