//! Deterministic scene-graph parser for short declarative captions.
//!
//! Captions are tokenized, tagged with a [`Lexicon`] (falling back to
//! suffix morphology), chunked into `ADJ* NOUN` entities and scanned for
//! the clause pattern
//!
//! ```text
//! Entity [and Entity]* copula? VERB_GERUND Entity? (PREP NP)*
//! ```
//!
//! `with NP` / `wearing NP` following an entity become modifiers of that
//! entity. Anything that does not fit is skipped.

mod lexicon;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{Lexicon, LexiconError, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub index: usize,
    pub kind: TokenKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Head noun, possibly a listed compound such as `"polar bear"`.
    pub head: String,
    pub modifiers: Vec<String>,
    /// Token range covering adjectives and head (determiners excluded).
    pub span: Range<usize>,
}

impl Entity {
    /// Modifiers and head as one phrase, e.g. `"purple penguin"`.
    pub fn label(&self) -> String {
        let adjectives = self.modifiers.iter().filter(|m| !m.contains(' '));
        adjectives.map(String::as_str).chain(std::iter::once(self.head.as_str())).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: usize,
    pub predicate: String,
    pub object: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneGraph {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub source_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParserError {
    #[error("caption is ambiguous: {count} entities match `{head}`")]
    Ambiguous { head: String, count: usize },
}

/// Parser bound to a lexicon. Cheap to share across threads.
#[derive(Debug, Clone, Default)]
pub struct SceneParser {
    lexicon: Lexicon,
}

/// Tokenizes with the built-in lexicon.
pub fn tokenize(text: &str) -> Vec<Token> {
    SceneParser::default().tokenize(text)
}

/// Parses with the built-in lexicon.
pub fn parse_scene_graph(text: &str) -> SceneGraph {
    SceneParser::default().parse(text)
}

struct NounPhrase {
    span: Range<usize>,
    adjectives: Vec<String>,
    head: String,
}

impl NounPhrase {
    fn text(&self) -> String {
        let mut parts = self.adjectives.clone();
        parts.push(self.head.clone());
        parts.join(" ")
    }
}

/// Splits `text` into lowercase words. Apostrophes are dropped (with a
/// trailing possessive `'s`), hyphens survive only between word characters,
/// all other punctuation separates words. The flag is whether the surface
/// form was capitalized.
fn split_words(text: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    for chunk in text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\'' || c == '’')) {
        let chunk = chunk.trim_end_matches(['\'', '’']);
        let chunk = chunk.strip_suffix("'s").or_else(|| chunk.strip_suffix("’s")).unwrap_or(chunk);
        let cleaned: String = chunk.chars().filter(|c| *c != '\'' && *c != '’').collect();
        let cleaned = cleaned.trim_matches('-');
        if cleaned.is_empty() {
            continue;
        }
        // Collapse runs of hyphens and split on any that survived trimming badly.
        for piece in cleaned.split("--").filter(|p| !p.is_empty()) {
            let piece = piece.trim_matches('-');
            if piece.is_empty() {
                continue;
            }
            let capitalized = piece.chars().next().is_some_and(char::is_uppercase);
            out.push((piece.to_lowercase(), capitalized));
        }
    }
    out
}

impl SceneParser {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        split_words(text)
            .into_iter()
            .enumerate()
            .map(|(index, (word, capitalized))| {
                let kind = self.lexicon.classify(&word, capitalized);
                Token { text: word, index, kind }
            })
            .collect()
    }

    pub fn parse(&self, text: &str) -> SceneGraph {
        let tokens = self.tokenize(text);
        let mut state = ParseState { tokens: &tokens, lexicon: &self.lexicon, entities: Vec::new(), relations: Vec::new() };
        state.run();
        SceneGraph { entities: state.entities, relations: state.relations, source_text: text.to_string() }
    }
}

struct ParseState<'a> {
    tokens: &'a [Token],
    lexicon: &'a Lexicon,
    entities: Vec<Entity>,
    relations: Vec<Relation>,
}

impl ParseState<'_> {
    fn kind(&self, pos: usize) -> Option<TokenKind> {
        self.tokens.get(pos).map(|t| t.kind)
    }

    fn text(&self, pos: usize) -> Option<&str> {
        self.tokens.get(pos).map(|t| t.text.as_str())
    }

    /// `DET* ADJ* (COMPOUND | NOUN)` starting at `pos`.
    fn noun_phrase(&self, pos: usize) -> Option<NounPhrase> {
        let mut cur = pos;
        while self.kind(cur) == Some(TokenKind::Determiner) {
            cur += 1;
        }
        let start = cur;
        let mut adjectives = Vec::new();
        loop {
            let rest: Vec<&str> = self.tokens[cur.min(self.tokens.len())..].iter().map(|t| t.text.as_str()).collect();
            if let Some(len) = self.lexicon.compound_prefix_len(&rest) {
                let head = rest[..len].join(" ");
                return Some(NounPhrase { span: start..cur + len, adjectives, head });
            }
            match self.kind(cur)? {
                TokenKind::Adjective => {
                    adjectives.push(self.tokens[cur].text.clone());
                    cur += 1;
                }
                TokenKind::Noun => {
                    let head = self.tokens[cur].text.clone();
                    return Some(NounPhrase { span: start..cur + 1, adjectives, head });
                }
                _ => return None,
            }
        }
    }

    fn push_entity(&mut self, np: NounPhrase) -> usize {
        self.entities.push(Entity { head: np.head, modifiers: np.adjectives, span: np.span });
        self.entities.len() - 1
    }

    fn add_modifier(&mut self, entity: usize, modifier: String) {
        let mods = &mut self.entities[entity].modifiers;
        if !mods.contains(&modifier) {
            mods.push(modifier);
        }
    }

    /// Next token after a noun phrase begins a clause continuation.
    fn starts_predicate(&self, pos: usize) -> bool {
        matches!(self.kind(pos), Some(TokenKind::Copula | TokenKind::VerbGerund))
            && self.text(pos) != Some("wearing")
    }

    fn singular_copula(&self, pos: usize) -> bool {
        matches!(self.text(pos), Some("is" | "was"))
    }

    /// Attaches `with NP (and NP)*` / `wearing NP (and NP)*` to every entity
    /// in `targets`. Returns the position after the consumed tokens.
    fn attach_phrases(&mut self, mut pos: usize, targets: &[usize]) -> usize {
        while matches!(self.text(pos), Some("with" | "wearing")) {
            let Some(np) = self.noun_phrase(pos + 1) else { break };
            pos = np.span.end;
            let text = np.text();
            for &t in targets {
                self.add_modifier(t, text.clone());
            }
            // "and NP" continues the attribute list unless NP is itself a
            // coordinated subject ("... with a hat and a bear are skiing").
            // A singular copula keeps it in the list ("... and blue overalls
            // is holding").
            while self.kind(pos) == Some(TokenKind::Conjunction) && self.text(pos) == Some("and") {
                let Some(next) = self.noun_phrase(pos + 1) else { break };
                if self.starts_predicate(next.span.end) && !self.singular_copula(next.span.end) {
                    break;
                }
                pos = next.span.end;
                let text = next.text();
                for &t in targets {
                    self.add_modifier(t, text.clone());
                }
            }
        }
        pos
    }

    /// Predicative adjectives after a copula: `X is pink and round`.
    fn attach_predicative(&mut self, mut pos: usize, targets: &[usize]) -> Option<usize> {
        let mut adjectives = Vec::new();
        loop {
            match self.kind(pos) {
                Some(TokenKind::Adjective) => {
                    if self.noun_phrase(pos).is_some() {
                        break;
                    }
                    adjectives.push(self.tokens[pos].text.clone());
                    pos += 1;
                }
                Some(TokenKind::Conjunction) if !adjectives.is_empty() && self.kind(pos + 1) == Some(TokenKind::Adjective) => {
                    pos += 1;
                }
                _ => break,
            }
        }
        if adjectives.is_empty() {
            return None;
        }
        for adj in adjectives {
            for &t in targets {
                self.add_modifier(t, adj.clone());
            }
        }
        Some(pos)
    }

    /// `VERB_GERUND NP? (PREP NP)*` at `pos`. Returns predicate text, the
    /// direct object entity and the end position.
    fn predicate(&mut self, pos: usize) -> (String, Option<usize>, usize) {
        let mut words = vec![self.tokens[pos].text.clone()];
        let mut cur = pos + 1;
        let mut object = None;
        if let Some(np) = self.noun_phrase(cur) {
            cur = np.span.end;
            let idx = self.push_entity(np);
            cur = self.attach_phrases(cur, &[idx]);
            object = Some(idx);
        }
        while self.kind(cur) == Some(TokenKind::Preposition) {
            let Some(np) = self.noun_phrase(cur + 1) else { break };
            words.push(self.tokens[cur].text.clone());
            words.push(np.text());
            cur = np.span.end;
        }
        (words.join(" "), object, cur)
    }

    fn run(&mut self) {
        let mut pos = 0;
        while pos < self.tokens.len() {
            let Some(np) = self.noun_phrase(pos) else {
                pos += 1;
                continue;
            };
            pos = np.span.end;
            let first = self.push_entity(np);
            pos = self.attach_phrases(pos, &[first]);
            let mut subjects = vec![first];
            while self.kind(pos) == Some(TokenKind::Conjunction) {
                let Some(next) = self.noun_phrase(pos + 1) else { break };
                pos = next.span.end;
                let idx = self.push_entity(next);
                pos = self.attach_phrases(pos, &[idx]);
                subjects.push(idx);
            }
            if self.kind(pos) == Some(TokenKind::Copula) {
                pos += 1;
                if self.text(pos) == Some("wearing") {
                    pos = self.attach_phrases(pos, &subjects);
                    continue;
                }
                if let Some(end) = self.attach_predicative(pos, &subjects) {
                    pos = end;
                    continue;
                }
            }
            if self.kind(pos) == Some(TokenKind::VerbGerund) {
                let (predicate, object, end) = self.predicate(pos);
                for &subject in &subjects {
                    self.relations.push(Relation { subject, predicate: predicate.clone(), object });
                }
                pos = end;
            }
        }
    }
}

impl SceneGraph {
    /// Index of the unique entity naming `head`. Exact head matches win over
    /// compound containment (`"bear"` inside `"polar bear"`).
    pub fn find_entity(&self, head: &str) -> Result<Option<usize>, ParserError> {
        let query: Vec<String> = head.split_whitespace().map(str::to_lowercase).collect();
        if query.is_empty() {
            return Ok(None);
        }
        let exact: Vec<usize> = self
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.head.split_whitespace().eq(query.iter().map(String::as_str)))
            .map(|(i, _)| i)
            .collect();
        let candidates = if exact.is_empty() {
            self.entities
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    let words: Vec<&str> = e.head.split_whitespace().collect();
                    words.windows(query.len()).any(|w| w.iter().copied().eq(query.iter().map(String::as_str)))
                })
                .map(|(i, _)| i)
                .collect()
        } else {
            exact
        };
        match candidates.len() {
            0 => Ok(None),
            1 => Ok(Some(candidates[0])),
            count => Err(ParserError::Ambiguous { head: head.to_string(), count }),
        }
    }
}

/// Attribute strings of the entity whose head names `head`; empty when no
/// entity matches.
pub fn extract_character_map(scene_graph: &SceneGraph, head: &str) -> Result<Vec<String>, ParserError> {
    Ok(scene_graph
        .find_entity(head)?
        .map(|i| scene_graph.entities[i].modifiers.clone())
        .unwrap_or_default())
}
