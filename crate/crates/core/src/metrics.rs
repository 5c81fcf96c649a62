//! Multi-character consistency metrics.
//!
//! Generated frames are represented by embedding vectors of detected
//! character crops, computed out of process. Each sample is assigned to the
//! most similar graph character if the similarity clears the classifier's
//! threshold; a frame's detected set is the union of those assignments.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CharacterGraph;
use crate::Scalar;

/// Default classifier threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("frame has no required characters")]
    EmptyRequired,
    #[error("no frames to evaluate")]
    NoFrames,
    #[error("no character in the graph carries an embedding")]
    NoEmbeddings,
    #[error("embedding of `{character_id}` has length {found}, sample has length {expected}")]
    DimensionMismatch { character_id: String, expected: usize, found: usize },
    #[error("{path}: unknown character id `{id}`")]
    UnknownCharacter { path: String, id: String },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameResult {
    pub required_ids: BTreeSet<String>,
    pub detected_ids: BTreeSet<String>,
}

impl FrameResult {
    pub fn new<I, J, S, U>(required: I, detected: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = U>,
        S: Into<String>,
        U: Into<String>,
    {
        Self {
            required_ids: required.into_iter().map(Into::into).collect(),
            detected_ids: detected.into_iter().map(Into::into).collect(),
        }
    }

    /// All required characters were detected.
    pub fn is_complete(&self) -> bool {
        self.required_ids.is_subset(&self.detected_ids)
    }
}

/// `|required ∩ detected| / |required|`.
pub fn character_f1(frame: &FrameResult) -> Result<f64, MetricsError> {
    if frame.required_ids.is_empty() {
        return Err(MetricsError::EmptyRequired);
    }
    let hits = frame.required_ids.intersection(&frame.detected_ids).count();
    Ok(hits as f64 / frame.required_ids.len() as f64)
}

/// Per-frame Character-F1 averaged over frames.
pub fn mean_character_f1(frames: &[FrameResult]) -> Result<f64, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::NoFrames);
    }
    let total = frames.iter().map(character_f1).sum::<Result<f64, _>>()?;
    Ok(total / frames.len() as f64)
}

/// Fraction of frames whose required set is fully detected.
pub fn frame_accuracy(frames: &[FrameResult]) -> Result<f64, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::NoFrames);
    }
    let complete = frames.iter().filter(|f| f.is_complete()).count();
    Ok(complete as f64 / frames.len() as f64)
}

pub trait ClassifierProvider<T: Scalar> {
    fn similarity(&self, sample: &[T], character: &[T]) -> T;

    fn threshold(&self) -> T {
        T::lit(DEFAULT_THRESHOLD)
    }
}

/// Cosine similarity with a fixed threshold. Zero vectors have similarity 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineClassifier<T> {
    pub threshold: T,
}

impl<T: Scalar> Default for CosineClassifier<T> {
    fn default() -> Self {
        Self { threshold: T::lit(DEFAULT_THRESHOLD) }
    }
}

pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(x, y)| *x * *y).sum();
    let na = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let nb = b.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    dot / (na * nb)
}

impl<T: Scalar> ClassifierProvider<T> for CosineClassifier<T> {
    fn similarity(&self, sample: &[T], character: &[T]) -> T {
        cosine(sample, character)
    }

    fn threshold(&self) -> T {
        self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification<T> {
    pub character_id: String,
    pub similarity: T,
}

/// Most similar embedded character, if its similarity exceeds the
/// provider's threshold. Ties go to the smallest id; NaN similarities never
/// win.
pub fn classify<T: Scalar, P: ClassifierProvider<T> + ?Sized>(
    sample: &[T],
    graph: &CharacterGraph,
    provider: &P,
) -> Result<Option<Classification<T>>, MetricsError> {
    let mut candidates: Vec<(&str, Vec<T>)> = graph
        .characters()
        .filter_map(|c| c.embedding.as_ref().map(|e| (c.id.as_str(), e.iter().map(|v| T::lit(*v)).collect())))
        .collect();
    if candidates.is_empty() {
        return Err(MetricsError::NoEmbeddings);
    }
    candidates.sort_by(|a, b| a.0.cmp(b.0));
    let mut best: Option<Classification<T>> = None;
    for (id, embedding) in &candidates {
        if embedding.len() != sample.len() {
            return Err(MetricsError::DimensionMismatch {
                character_id: (*id).to_string(),
                expected: sample.len(),
                found: embedding.len(),
            });
        }
        let s = provider.similarity(sample, embedding);
        if s.is_nan() {
            continue;
        }
        if best.as_ref().is_none_or(|b| s > b.similarity) {
            best = Some(Classification { character_id: (*id).to_string(), similarity: s });
        }
    }
    Ok(best.filter(|b| b.similarity > provider.threshold()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub embedding: Vec<f64>,
}

/// One generated frame in a results manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub scene_id: String,
    pub required_ids: Vec<String>,
    #[serde(default)]
    pub samples: Vec<ManifestSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dino_i: Option<f64>,
}

/// Parses a manifest (a JSON array of frames), reporting the failing field
/// path on error.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestFrame>, MetricsError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| MetricsError::Malformed {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub scene_id: String,
    pub required_ids: BTreeSet<String>,
    pub detected_ids: BTreeSet<String>,
    pub character_f1: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameReport>,
    pub mean_character_f1: f64,
    pub frame_accuracy: f64,
    pub clip_t: Option<f64>,
    pub clip_i: Option<f64>,
    pub dino_i: Option<f64>,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Classifies every sample and aggregates the metrics over all frames.
pub fn evaluate_manifest<T: Scalar, P: ClassifierProvider<T> + ?Sized>(
    frames: &[ManifestFrame],
    graph: &CharacterGraph,
    provider: &P,
) -> Result<EvalReport, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::NoFrames);
    }
    let mut results = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        for (j, id) in frame.required_ids.iter().enumerate() {
            if graph.character(id).is_none() {
                return Err(MetricsError::UnknownCharacter { path: format!("[{i}].required_ids[{j}]"), id: id.clone() });
            }
        }
        let mut detected = BTreeSet::new();
        for sample in &frame.samples {
            let embedding: Vec<T> = sample.embedding.iter().map(|v| T::lit(*v)).collect();
            if let Some(hit) = classify(&embedding, graph, provider)? {
                detected.insert(hit.character_id);
            }
        }
        let result = FrameResult { required_ids: frame.required_ids.iter().cloned().collect(), detected_ids: detected };
        let f1 = character_f1(&result).map_err(|_| MetricsError::Malformed {
            path: format!("[{i}].required_ids"),
            message: "must name at least one character".into(),
        })?;
        reports.push(FrameReport {
            scene_id: frame.scene_id.clone(),
            required_ids: result.required_ids.clone(),
            detected_ids: result.detected_ids.clone(),
            character_f1: f1,
            complete: result.is_complete(),
        });
        results.push(result);
    }
    Ok(EvalReport {
        frames: reports,
        mean_character_f1: mean_character_f1(&results)?,
        frame_accuracy: frame_accuracy(&results)?,
        clip_t: mean_present(frames.iter().map(|f| f.clip_t)),
        clip_i: mean_present(frames.iter().map(|f| f.clip_i)),
        dino_i: mean_present(frames.iter().map(|f| f.dino_i)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CharacterNode;

    fn node(id: &str, embedding: Option<Vec<f64>>) -> CharacterNode {
        CharacterNode {
            id: id.into(),
            display_name: id.into(),
            aliases: vec![],
            frontal_caption: String::new(),
            attributes: vec![],
            embedding,
        }
    }

    fn graph() -> CharacterGraph {
        let mut g = CharacterGraph::default();
        g.insert_character(node("a", Some(vec![1.0, 0.0]))).unwrap();
        g.insert_character(node("b", Some(vec![0.0, 1.0]))).unwrap();
        g.insert_character(node("c", None)).unwrap();
        g
    }

    #[test]
    fn f1_examples() {
        assert_eq!(character_f1(&FrameResult::new(["a", "b", "c"], ["a", "b"])).unwrap(), 2.0 / 3.0);
        assert_eq!(character_f1(&FrameResult::new(["a"], ["a"])).unwrap(), 1.0);
        assert_eq!(character_f1(&FrameResult::new(["a"], ["b"])).unwrap(), 0.0);
        assert_eq!(character_f1(&FrameResult::new(Vec::<String>::new(), ["b"])), Err(MetricsError::EmptyRequired));
    }

    #[test]
    fn frame_accuracy_examples() {
        let frames = vec![
            FrameResult::new(["a"], ["a"]),
            FrameResult::new(["a", "b"], ["a", "b", "c"]),
            FrameResult::new(["a", "b"], ["a"]),
            FrameResult::new(["c"], Vec::<String>::new()),
        ];
        assert_eq!(frame_accuracy(&frames).unwrap(), 0.5);
        assert_eq!(frame_accuracy(&frames[..2]).unwrap(), 1.0);
        assert_eq!(frame_accuracy(&[]), Err(MetricsError::NoFrames));
        assert_eq!(mean_character_f1(&frames).unwrap(), (1.0 + 1.0 + 0.5 + 0.0) / 4.0);
    }

    #[test]
    fn classify_rules() {
        let g = graph();
        let c = CosineClassifier::<f64>::default();
        let hit = classify(&[2.0, 0.0], &g, &c).unwrap().unwrap();
        assert_eq!((hit.character_id.as_str(), hit.similarity), ("a", 1.0));
        assert_eq!(classify(&[1.0, 1.0], &g, &CosineClassifier { threshold: 0.9 }).unwrap(), None);
        let tie = classify(&[1.0, 1.0], &g, &c).unwrap().unwrap();
        assert_eq!(tie.character_id, "a");
        assert_eq!(classify(&[-1.0, -1.0], &g, &c).unwrap(), None);
        assert!(matches!(classify(&[1.0], &g, &c), Err(MetricsError::DimensionMismatch { .. })));
        let mut empty = CharacterGraph::default();
        empty.insert_character(node("z", None)).unwrap();
        assert_eq!(classify(&[1.0], &empty, &c), Err(MetricsError::NoEmbeddings));
    }

    #[test]
    fn manifest_evaluation() {
        let text = r#"[
            {"scene_id": "s1", "required_ids": ["a"], "samples": [{"embedding": [1, 0]}], "clip_t": 30},
            {"scene_id": "s2", "required_ids": ["a", "b"], "samples": [{"embedding": [0, 1]}], "clip_t": 40},
            {"scene_id": "s3", "required_ids": ["b"], "samples": [{"embedding": [0.1, 1]}, {"embedding": [1, 0]}]},
            {"scene_id": "s4", "required_ids": ["a"], "samples": []}
        ]"#;
        let frames = parse_manifest(text).unwrap();
        let report = evaluate_manifest(&frames, &graph(), &CosineClassifier::<f64>::default()).unwrap();
        assert_eq!(report.frame_accuracy, 0.5);
        assert_eq!(report.mean_character_f1, (1.0 + 0.5 + 1.0 + 0.0) / 4.0);
        assert_eq!(report.clip_t, Some(35.0));
        assert_eq!(report.dino_i, None);
    }

    #[test]
    fn manifest_errors_carry_paths() {
        let err = parse_manifest(r#"[{"scene_id": "s", "required_ids": ["a"], "samples": [{"embedding": ["x"]}]}]"#).unwrap_err();
        match err {
            MetricsError::Malformed { path, .. } => assert_eq!(path, "[0].samples[0].embedding[0]"),
            other => panic!("{other:?}"),
        }
        let frames = parse_manifest(r#"[{"scene_id": "s", "required_ids": ["zz"]}]"#).unwrap();
        let err = evaluate_manifest(&frames, &graph(), &CosineClassifier::<f64>::default()).unwrap_err();
        assert_eq!(err, MetricsError::UnknownCharacter { path: "[0].required_ids[0]".into(), id: "zz".into() });
    }
}
