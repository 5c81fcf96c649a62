//! Character graph: the story-world knowledge base of characters, their
//! appearance attributes, the events between them and the shared style.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::{ParserError, SceneParser};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate character id `{0}`")]
    DuplicateId(String),
    #[error("unknown character id `{0}`")]
    UnknownId(String),
    #[error("invalid document at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("malformed document at `{path}`: {source}")]
    Malformed {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterNode {
    pub id: String,
    pub display_name: String,
    pub aliases: Vec<String>,
    pub frontal_caption: String,
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl CharacterNode {
    /// Class noun used when describing the character: the first alias that
    /// is not just the lowercased display name.
    pub fn class_noun(&self) -> Option<&str> {
        let name = self.display_name.to_lowercase();
        self.aliases.iter().map(String::as_str).find(|a| *a != name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEdge {
    pub subject_id: String,
    pub object_id: String,
    pub relation: String,
}

/// Input record for vocabulary construction. The caption is produced
/// upstream (a captioning model looking at a frontal image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularyEntry {
    pub id: String,
    pub display_name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub frontal_caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Non-fatal problem found while building the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildWarning {
    pub character_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CharacterGraph {
    style: String,
    characters: IndexMap<String, CharacterNode>,
    events: Vec<EventEdge>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    style: String,
    characters: Vec<CharacterNode>,
    events: Vec<EventEdge>,
}

fn dedup_preserving_order(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

impl CharacterGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the character vocabulary: each frontal caption is parsed and
    /// the modifiers of the entity naming the character become its
    /// attributes. Candidate heads are tried in order: aliases, then the
    /// display name.
    pub fn build_vocabulary(
        entries: impl IntoIterator<Item = VocabularyEntry>,
        parser: &SceneParser,
    ) -> Result<(Self, Vec<BuildWarning>), GraphError> {
        let mut graph = Self::new();
        let mut warnings = Vec::new();
        for entry in entries {
            if graph.characters.contains_key(&entry.id) {
                return Err(GraphError::DuplicateId(entry.id));
            }
            let aliases = dedup_preserving_order(entry.aliases.iter().map(|a| a.trim().to_lowercase()));
            let scene = parser.parse(&entry.frontal_caption);
            let mut attributes = None;
            let candidates = aliases.iter().cloned().chain(std::iter::once(entry.display_name.to_lowercase()));
            for head in candidates {
                match scene.find_entity(&head) {
                    Ok(Some(idx)) => {
                        attributes = Some(scene.entities[idx].modifiers.clone());
                        break;
                    }
                    Ok(None) => {}
                    Err(ParserError::Ambiguous { count, .. }) => warnings.push(BuildWarning {
                        character_id: entry.id.clone(),
                        message: format!("caption is ambiguous for `{head}` ({count} entities)"),
                    }),
                }
            }
            let attributes = attributes.unwrap_or_else(|| {
                warnings.push(BuildWarning {
                    character_id: entry.id.clone(),
                    message: "no entity in the frontal caption matches the character".into(),
                });
                Vec::new()
            });
            let node = CharacterNode {
                id: entry.id.clone(),
                display_name: entry.display_name,
                aliases,
                frontal_caption: entry.frontal_caption,
                attributes: dedup_preserving_order(attributes),
                embedding: entry.embedding,
            };
            graph.characters.insert(entry.id, node);
        }
        Ok((graph, warnings))
    }

    pub fn style(&self) -> &str {
        &self.style
    }

    pub fn set_style(&mut self, style: impl Into<String>) {
        self.style = style.into();
    }

    pub fn with_style(mut self, style: impl Into<String>) -> Self {
        self.set_style(style);
        self
    }

    pub fn len(&self) -> usize {
        self.characters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }

    pub fn character(&self, id: &str) -> Option<&CharacterNode> {
        self.characters.get(id)
    }

    /// Characters in insertion order.
    pub fn characters(&self) -> impl Iterator<Item = &CharacterNode> {
        self.characters.values()
    }

    pub fn events(&self) -> &[EventEdge] {
        &self.events
    }

    pub fn insert_character(&mut self, node: CharacterNode) -> Result<(), GraphError> {
        if self.characters.contains_key(&node.id) {
            return Err(GraphError::DuplicateId(node.id));
        }
        let mut node = node;
        node.aliases = dedup_preserving_order(node.aliases.iter().map(|a| a.to_lowercase()));
        node.attributes = dedup_preserving_order(node.attributes);
        self.characters.insert(node.id.clone(), node);
        Ok(())
    }

    /// Records an event; `subject_id == object_id` is a self-event.
    pub fn add_event(&mut self, subject_id: &str, object_id: &str, relation: impl Into<String>) -> Result<(), GraphError> {
        for id in [subject_id, object_id] {
            if !self.characters.contains_key(id) {
                return Err(GraphError::UnknownId(id.to_string()));
            }
        }
        self.events.push(EventEdge {
            subject_id: subject_id.to_string(),
            object_id: object_id.to_string(),
            relation: relation.into(),
        });
        Ok(())
    }

    /// Pretty JSON document with keys `style`, `characters`, `events`.
    pub fn to_json(&self) -> String {
        let doc = GraphDocument {
            style: self.style.clone(),
            characters: self.characters.values().cloned().collect(),
            events: self.events.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("graph document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: GraphDocument = serde_path_to_error::deserialize(de).map_err(|err| GraphError::Malformed {
            path: err.path().to_string(),
            source: err.into_inner(),
        })?;
        let mut graph = Self { style: doc.style, characters: IndexMap::new(), events: Vec::new() };
        for (i, node) in doc.characters.into_iter().enumerate() {
            if let Some(j) = node.aliases.iter().position(|a| *a != a.to_lowercase()) {
                return Err(GraphError::Invalid {
                    path: format!("characters[{i}].aliases[{j}]"),
                    message: "aliases must be lowercase".into(),
                });
            }
            if graph.characters.contains_key(&node.id) {
                return Err(GraphError::Invalid {
                    path: format!("characters[{i}].id"),
                    message: format!("duplicate id `{}`", node.id),
                });
            }
            graph.characters.insert(node.id.clone(), node);
        }
        for (i, edge) in doc.events.into_iter().enumerate() {
            for (field, id) in [("subject_id", &edge.subject_id), ("object_id", &edge.object_id)] {
                if !graph.characters.contains_key(id) {
                    return Err(GraphError::Invalid {
                        path: format!("events[{i}].{field}"),
                        message: format!("unknown character id `{id}`"),
                    });
                }
            }
            graph.events.push(edge);
        }
        Ok(graph)
    }

    pub fn save(&self, destination: impl AsRef<Path>) -> Result<(), GraphError> {
        let path = destination.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|source| GraphError::Io { path: path.display().to_string(), source })
    }

    pub fn load(source: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = source.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// True when every event references existing characters.
    pub fn is_consistent(&self) -> bool {
        self.events
            .iter()
            .all(|e| self.characters.contains_key(&e.subject_id) && self.characters.contains_key(&e.object_id))
    }
}

pub fn save_graph(graph: &CharacterGraph, destination: impl AsRef<Path>) -> Result<(), GraphError> {
    graph.save(destination)
}

pub fn load_graph(source: impl AsRef<Path>) -> Result<CharacterGraph, GraphError> {
    CharacterGraph::load(source)
}
