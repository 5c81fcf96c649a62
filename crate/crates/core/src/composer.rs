//! Knowledge-enhanced scene captions.
//!
//! A scene caption is parsed, each entity is matched against the character
//! vocabulary, and the result is serialized as
//! `[style, events, description_1, ..., description_N]` with a record of
//! which flattened tokens belong to which character.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CharacterGraph, CharacterNode};
use crate::parser::{Relation, SceneParser};

pub const DEFAULT_MATCH_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ComposeError {
    #[error("character graph is empty")]
    EmptyGraph,
    #[error("graph style is not set")]
    MissingStyle,
    #[error("no character matches `{label}` (best score {best:.3} below floor {floor})")]
    NoMatch { label: String, best: f64, floor: f64 },
}

/// Similarity between a coarse entity label and a vocabulary character.
pub trait SimilarityProvider {
    /// Score in `[0, 1]`; exactly `1.0` when `label` equals an alias.
    fn score(&self, label: &str, character: &CharacterNode) -> f64;
}

impl<F: Fn(&str, &CharacterNode) -> f64> SimilarityProvider for F {
    fn score(&self, label: &str, character: &CharacterNode) -> f64 {
        self(label, character)
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    let inter = a.iter().filter(|w| b.contains(w)).count();
    let union = a.len() + b.iter().filter(|w| !a.contains(w)).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Token-overlap similarity. The label's word set is compared against each
/// alias (the display name counts as an alias); attribute words only count
/// when the label mentions them, so long attribute lists are not penalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalSimilarity;

impl SimilarityProvider for LexicalSimilarity {
    fn score(&self, label: &str, character: &CharacterNode) -> f64 {
        let label_words = words(label);
        if label_words.is_empty() {
            return 0.0;
        }
        let name = character.display_name.to_lowercase();
        let aliases: Vec<&str> = character.aliases.iter().map(String::as_str).chain(std::iter::once(name.as_str())).collect();
        if aliases.iter().any(|a| words(a) == label_words) {
            return 1.0;
        }
        let attribute_hits: Vec<String> = character
            .attributes
            .iter()
            .flat_map(|a| words(a))
            .filter(|w| label_words.contains(w))
            .collect();
        aliases
            .iter()
            .map(|alias| {
                let mut set = words(alias);
                for w in &attribute_hits {
                    if !set.contains(w) {
                        set.push(w.clone());
                    }
                }
                jaccard(&label_words, &set)
            })
            .fold(0.0, f64::max)
    }
}

/// Cosine similarity mapped to `[0, 1]` via `(1 + cos) / 2` when both the
/// label and the character have embeddings; lexical otherwise.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSimilarity {
    pub label_embeddings: HashMap<String, Vec<f64>>,
    pub fallback: LexicalSimilarity,
}

impl SimilarityProvider for EmbeddingSimilarity {
    fn score(&self, label: &str, character: &CharacterNode) -> f64 {
        let name = character.display_name.to_lowercase();
        let is_alias = character.aliases.iter().any(|a| a == label) || name == label;
        match (self.label_embeddings.get(label), &character.embedding) {
            (Some(a), Some(b)) if !is_alias && a.len() == b.len() => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.5
                } else {
                    ((1.0 + dot / (na * nb)) / 2.0).clamp(0.0, 1.0)
                }
            }
            _ => self.fallback.score(label, character),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterMatch {
    pub character_id: String,
    pub score: f64,
}

/// Argmax of `sim` over the graph, ties broken by ascending id. Scores
/// below `floor` are rejected.
pub fn match_character_with_floor(
    coarse_label: &str,
    graph: &CharacterGraph,
    sim: &dyn SimilarityProvider,
    floor: f64,
) -> Result<CharacterMatch, ComposeError> {
    let mut ids: Vec<&CharacterNode> = graph.characters().collect();
    if ids.is_empty() {
        return Err(ComposeError::EmptyGraph);
    }
    ids.sort_by(|a, b| a.id.cmp(&b.id));
    let mut best: Option<CharacterMatch> = None;
    for node in ids {
        let score = sim.score(coarse_label, node);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(CharacterMatch { character_id: node.id.clone(), score });
        }
    }
    let best = best.expect("non-empty graph");
    if best.score < floor || best.score.is_nan() {
        return Err(ComposeError::NoMatch { label: coarse_label.to_string(), best: best.score, floor });
    }
    Ok(best)
}

pub fn match_character(
    coarse_label: &str,
    graph: &CharacterGraph,
    sim: &dyn SimilarityProvider,
) -> Result<CharacterMatch, ComposeError> {
    match_character_with_floor(coarse_label, graph, sim, DEFAULT_MATCH_FLOOR)
}

fn indefinite_article(next_word: &str) -> &'static str {
    match next_word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Appearance description for one character.
///
/// Single-word attributes precede the class noun (`"Petty, a female
/// penguin"`); phrase attributes follow joined by `with`, then `and`.
/// Without a class noun every attribute follows the name the same way
/// (`"Loopy with pink"`). No attributes yields the bare display name.
pub fn compose_character_description(character: &CharacterNode) -> String {
    let name = character.display_name.as_str();
    if character.attributes.is_empty() {
        return name.to_string();
    }
    let mut out = String::from(name);
    let trailing: Vec<&str> = match character.class_noun() {
        Some(class) => {
            let class_words = words(class);
            let (adjectives, phrases): (Vec<&String>, Vec<&String>) =
                character.attributes.iter().partition(|a| !a.contains(' '));
            let adjectives: Vec<&str> = adjectives
                .into_iter()
                .map(String::as_str)
                .filter(|a| !class_words.iter().any(|w| w == a))
                .collect();
            let noun_phrase = adjectives.iter().copied().chain(std::iter::once(class)).collect::<Vec<_>>().join(" ");
            out.push_str(", ");
            out.push_str(indefinite_article(&noun_phrase));
            out.push(' ');
            out.push_str(&noun_phrase);
            phrases.into_iter().map(String::as_str).collect()
        }
        None => character.attributes.iter().map(String::as_str).collect(),
    };
    for (i, attr) in trailing.iter().enumerate() {
        out.push_str(if i == 0 { " with " } else { " and " });
        out.push_str(attr);
    }
    out
}

/// How an entity of the scene graph is rendered in the event text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Participant {
    pub name: String,
    pub character_id: Option<String>,
}

impl Participant {
    pub fn character(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self { name: name.into(), character_id: Some(id.into()) }
    }

    pub fn raw(name: impl Into<String>) -> Self {
        Self { name: name.into(), character_id: None }
    }

    fn key(&self) -> String {
        match &self.character_id {
            Some(id) => format!("char:{id}"),
            None => format!("raw:{}", self.name),
        }
    }
}

fn join_names(names: &[&str]) -> String {
    match names {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Event text. Relations with identical predicate and object are merged
/// into one clause whose subjects are joined by `and` and followed by
/// `together`; an object equal to a subject is dropped.
pub fn compose_event_description(relations: &[Relation], participants: &[Participant]) -> String {
    struct Clause {
        predicate: String,
        object: Option<usize>,
        subjects: Vec<usize>,
    }
    let key_of = |idx: usize| participants.get(idx).map(Participant::key);
    let mut clauses: Vec<Clause> = Vec::new();
    for rel in relations {
        if rel.subject >= participants.len() {
            continue;
        }
        let object = rel.object.filter(|&o| o < participants.len());
        let object_key = object.and_then(key_of);
        let existing = clauses
            .iter_mut()
            .find(|c| c.predicate == rel.predicate && c.object.and_then(key_of) == object_key);
        let clause = match existing {
            Some(c) => c,
            None => {
                clauses.push(Clause { predicate: rel.predicate.clone(), object, subjects: Vec::new() });
                clauses.last_mut().expect("just pushed")
            }
        };
        let subject_key = key_of(rel.subject);
        if !clause.subjects.iter().any(|&s| key_of(s) == subject_key) {
            clause.subjects.push(rel.subject);
        }
    }
    let rendered: Vec<String> = clauses
        .iter()
        .map(|c| {
            let names: Vec<&str> = c.subjects.iter().map(|&s| participants[s].name.as_str()).collect();
            let mut text = join_names(&names);
            let (verb, rest) = match c.predicate.split_once(' ') {
                Some((v, r)) => (v, Some(r)),
                None => (c.predicate.as_str(), None),
            };
            text.push(' ');
            text.push_str(verb);
            if let Some(o) = c.object {
                let ok = key_of(o);
                if !c.subjects.iter().any(|&s| key_of(s) == ok) {
                    text.push(' ');
                    text.push_str(&participants[o].name);
                }
            }
            if let Some(rest) = rest {
                text.push(' ');
                text.push_str(rest);
            }
            if c.subjects.len() > 1 {
                text.push_str(" together");
            }
            text
        })
        .collect();
    rendered.join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterDescription {
    pub id: String,
    pub description: String,
}

/// Half-open token range `[start_token, end_token)` of the flattened caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start_token: usize,
    pub end_token: usize,
    pub character_id: Option<String>,
}

/// The enhanced scene caption: style, events, then per-character
/// descriptions in order of first mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneCaption {
    pub style: String,
    pub event_text: String,
    pub character_descriptions: Vec<CharacterDescription>,
    pub token_ownership: Vec<TokenSpan>,
}

pub const PART_SEPARATOR: &str = ", ";

impl SceneCaption {
    fn assemble(style: String, event_text: String, character_descriptions: Vec<CharacterDescription>) -> Self {
        let mut ownership = Vec::new();
        let mut cursor = 0;
        let mut push = |text: &str, owner: Option<String>| {
            let n = text.split_whitespace().count();
            if n > 0 {
                ownership.push(TokenSpan { start_token: cursor, end_token: cursor + n, character_id: owner });
                cursor += n;
            }
        };
        push(&style, None);
        push(&event_text, None);
        for d in &character_descriptions {
            push(&d.description, Some(d.id.clone()));
        }
        Self { style, event_text, character_descriptions, token_ownership: ownership }
    }

    /// Non-empty parts in order `[style, events, descriptions...]`.
    pub fn parts(&self) -> Vec<&str> {
        std::iter::once(self.style.as_str())
            .chain(std::iter::once(self.event_text.as_str()))
            .chain(self.character_descriptions.iter().map(|d| d.description.as_str()))
            .filter(|p| !p.trim().is_empty())
            .collect()
    }

    pub fn flat_caption(&self) -> String {
        self.parts().join(PART_SEPARATOR)
    }

    /// Whitespace tokens of the flattened caption; ownership spans index
    /// into this list.
    pub fn tokens(&self) -> Vec<String> {
        self.flat_caption().split_whitespace().map(str::to_string).collect()
    }

    pub fn token_count(&self) -> usize {
        self.token_ownership.last().map_or(0, |s| s.end_token)
    }

    /// Token range owned by `character_id`.
    pub fn span_of(&self, character_id: &str) -> Option<std::ops::Range<usize>> {
        self.token_ownership
            .iter()
            .find(|s| s.character_id.as_deref() == Some(character_id))
            .map(|s| s.start_token..s.end_token)
    }

    pub fn character_ids(&self) -> Vec<&str> {
        self.character_descriptions.iter().map(|d| d.id.as_str()).collect()
    }

    /// Output document with keys `style`, `event_text`, `characters`,
    /// `flat_caption`, `ownership`.
    pub fn to_document(&self) -> serde_json::Value {
        serde_json::json!({
            "style": self.style,
            "event_text": self.event_text,
            "characters": self.character_descriptions,
            "flat_caption": self.flat_caption(),
            "ownership": self.token_ownership,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeWarning {
    pub entity: String,
    pub error: ComposeError,
}

/// Scene captioning with a configurable parser and match floor.
#[derive(Debug, Clone)]
pub struct CaptionComposer {
    pub parser: SceneParser,
    pub match_floor: f64,
}

impl Default for CaptionComposer {
    fn default() -> Self {
        Self { parser: SceneParser::default(), match_floor: DEFAULT_MATCH_FLOOR }
    }
}

impl CaptionComposer {
    pub fn new(parser: SceneParser) -> Self {
        Self { parser, match_floor: DEFAULT_MATCH_FLOOR }
    }

    pub fn compose(
        &self,
        scene_text: &str,
        graph: &CharacterGraph,
        sim: &dyn SimilarityProvider,
    ) -> Result<(SceneCaption, Vec<ComposeWarning>), ComposeError> {
        if graph.style().trim().is_empty() {
            return Err(ComposeError::MissingStyle);
        }
        let style = graph.style().to_string();
        let scene = self.parser.parse(scene_text);
        let mut warnings = Vec::new();
        let mut participants = Vec::with_capacity(scene.entities.len());
        let mut matched: Vec<String> = Vec::new();
        for entity in &scene.entities {
            let label = entity.label();
            match match_character_with_floor(&label, graph, sim, self.match_floor) {
                Ok(m) => {
                    let node = graph.character(&m.character_id).expect("matched id exists");
                    participants.push(Participant::character(&m.character_id, &node.display_name));
                    if !matched.contains(&m.character_id) {
                        matched.push(m.character_id);
                    }
                }
                Err(error) => {
                    participants.push(Participant::raw(label));
                    warnings.push(ComposeWarning { entity: entity.head.clone(), error });
                }
            }
        }
        if matched.is_empty() {
            let raw = scene_text.trim().to_string();
            return Ok((SceneCaption::assemble(style, raw, Vec::new()), warnings));
        }
        let event_text = if scene.relations.is_empty() {
            self.persisted_events(graph, &matched)
        } else {
            compose_event_description(&scene.relations, &participants)
        };
        let descriptions = matched
            .iter()
            .map(|id| CharacterDescription {
                id: id.clone(),
                description: compose_character_description(graph.character(id).expect("matched id exists")),
            })
            .collect();
        Ok((SceneCaption::assemble(style, event_text, descriptions), warnings))
    }

    /// Stored graph events among the matched characters, used only when the
    /// scene text carries no relations of its own.
    fn persisted_events(&self, graph: &CharacterGraph, matched: &[String]) -> String {
        let mut participants: Vec<Participant> = Vec::new();
        let index = |participants: &mut Vec<Participant>, id: &str| -> usize {
            if let Some(i) = participants.iter().position(|p| p.character_id.as_deref() == Some(id)) {
                return i;
            }
            let name = graph.character(id).map(|c| c.display_name.clone()).unwrap_or_else(|| id.to_string());
            participants.push(Participant::character(id, name));
            participants.len() - 1
        };
        let mut relations = Vec::new();
        for edge in graph.events() {
            if matched.contains(&edge.subject_id) && matched.contains(&edge.object_id) {
                let subject = index(&mut participants, &edge.subject_id);
                let object = index(&mut participants, &edge.object_id);
                relations.push(Relation { subject, predicate: edge.relation.clone(), object: Some(object) });
            }
        }
        compose_event_description(&relations, &participants)
    }
}

/// Composes with the built-in lexicon and the default match floor.
pub fn compose_scene_caption(
    scene_text: &str,
    graph: &CharacterGraph,
    sim: &dyn SimilarityProvider,
) -> Result<(SceneCaption, Vec<ComposeWarning>), ComposeError> {
    CaptionComposer::default().compose(scene_text, graph, sim)
}
