use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GuidanceError;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Pre-softmax scores.
    Logits,
    /// Row-normalized attention map.
    Probabilities,
}

/// Cross-attention scores, one row per latent pixel (row-major over the
/// grid) and one column per caption token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AttentionTensor<T> {
    scores: Array2<T>,
    kind: AttentionKind,
}

/// Numerically stable softmax over each row. A row whose entries are all
/// `-inf` becomes uniform.
pub fn softmax_rows<T: Scalar>(scores: &Array2<T>) -> Array2<T> {
    let mut out = scores.clone();
    let cols = T::from_count(scores.ncols().max(1));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            row.fill(T::one() / cols);
            continue;
        }
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl<T: Scalar> AttentionTensor<T> {
    pub fn logits(scores: Array2<T>) -> Self {
        Self { scores, kind: AttentionKind::Logits }
    }

    /// Wraps a normalized map; every row must sum to 1 within `1e-6`.
    pub fn probabilities(scores: Array2<T>) -> Result<Self, GuidanceError> {
        let tol = T::lit(1e-6);
        for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tol || row.iter().any(|v| *v < T::zero()) {
                return Err(GuidanceError::InvalidConfig(format!("attention row {i} is not a distribution (sum {sum})")));
            }
        }
        Ok(Self { scores, kind: AttentionKind::Probabilities })
    }

    pub(crate) fn from_parts(scores: Array2<T>, kind: AttentionKind) -> Self {
        Self { scores, kind }
    }

    pub fn scores(&self) -> &Array2<T> {
        &self.scores
    }

    pub fn kind(&self) -> AttentionKind {
        self.kind
    }

    pub fn pixels(&self) -> usize {
        self.scores.nrows()
    }

    pub fn tokens(&self) -> usize {
        self.scores.ncols()
    }

    /// The attention map: softmax of logits, or the map itself.
    pub fn normalized(&self) -> Self {
        match self.kind {
            AttentionKind::Logits => Self { scores: softmax_rows(&self.scores), kind: AttentionKind::Probabilities },
            AttentionKind::Probabilities => self.clone(),
        }
    }

    /// Largest `|row sum - 1|` of the normalized map.
    pub fn max_row_deviation(&self) -> T {
        self.normalized()
            .scores
            .axis_iter(Axis(0))
            .map(|row| (row.iter().copied().sum::<T>() - T::one()).abs())
            .fold(T::zero(), T::max)
    }
}

/// Single cross-attention layer with seeded projections:
/// `softmax((X W_q)(C W_k)ᵀ / √d) · (C W_v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ToyCrossAttention<T> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
}

pub struct ToyAttentionOutput<T> {
    pub logits: AttentionTensor<T>,
    pub map: AttentionTensor<T>,
    /// `map · V`, one row per pixel.
    pub features: Array2<T>,
}

/// `rows × cols` matrix of uniform draws in `[-scale, scale)`.
pub fn random_matrix<T: Scalar>(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.gen_range(-scale..scale)))
}

impl<T: Scalar> ToyCrossAttention<T> {
    /// Projections `d_in × d` drawn from ChaCha8 seeded with `seed`, in the
    /// order `W_q`, `W_k`, `W_v`, uniform in `±1/√d_in`.
    pub fn from_seed(d_in: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_in.max(1) as f64).sqrt();
        let w_q = random_matrix(d_in, d, scale, &mut rng);
        let w_k = random_matrix(d_in, d, scale, &mut rng);
        let w_v = random_matrix(d_in, d, scale, &mut rng);
        Self { w_q, w_k, w_v }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w_q.ncols()
    }

    /// `image`: pixels × d_in, `text`: tokens × d_in.
    pub fn forward(&self, image: &Array2<T>, text: &Array2<T>) -> Result<ToyAttentionOutput<T>, GuidanceError> {
        for (context, m) in [("image features", image), ("text features", text)] {
            if m.ncols() != self.input_dim() {
                return Err(GuidanceError::DimensionMismatch { context, expected: self.input_dim(), found: m.ncols() });
            }
        }
        if text.nrows() == 0 {
            return Err(GuidanceError::DimensionMismatch { context: "token count", expected: 1, found: 0 });
        }
        let q = image.dot(&self.w_q);
        let k = text.dot(&self.w_k);
        let v = text.dot(&self.w_v);
        let scale = T::one() / T::from_count(self.latent_dim()).sqrt();
        let logits = q.dot(&k.t()) * scale;
        let map = softmax_rows(&logits);
        let features = map.dot(&v);
        Ok(ToyAttentionOutput {
            logits: AttentionTensor::logits(logits),
            map: AttentionTensor::from_parts(map, AttentionKind::Probabilities),
            features,
        })
    }
}

/// Runs the toy layer with projections from `seed`.
pub fn toy_cross_attention<T: Scalar>(
    image: &Array2<T>,
    text: &Array2<T>,
    latent_dim: usize,
    seed: u64,
) -> Result<ToyAttentionOutput<T>, GuidanceError> {
    ToyCrossAttention::from_seed(image.ncols(), latent_dim, seed).forward(image, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_token_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let image: Array2<f64> = random_matrix(9, 4, 1.0, &mut rng);
        let text: Array2<f64> = random_matrix(1, 4, 1.0, &mut rng);
        let out = toy_cross_attention(&image, &text, 8, 0).unwrap();
        assert!(out.map.scores().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_keys_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let image: Array2<f64> = random_matrix(5, 4, 1.0, &mut rng);
        let row: Array2<f64> = random_matrix(1, 4, 1.0, &mut rng);
        let text = Array2::from_shape_fn((3, 4), |(_, j)| row[[0, j]]);
        let out = toy_cross_attention(&image, &text, 6, 0).unwrap();
        assert!(out.map.scores().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(out.map.max_row_deviation() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let layer = ToyCrossAttention::<f64>::from_seed(4, 8, 0);
        assert!(layer.forward(&Array2::zeros((3, 4)), &Array2::zeros((2, 5))).is_err());
        assert!(layer.forward(&Array2::zeros((3, 4)), &Array2::zeros((0, 4))).is_err());
    }

    #[test]
    fn softmax_handles_extremes() {
        let s = softmax_rows(&array![[1000.0_f64, 0.0], [f64::NEG_INFINITY, f64::NEG_INFINITY], [f64::NEG_INFINITY, 0.0]]);
        assert_eq!(s.row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(s.row(1).to_vec(), vec![0.5, 0.5]);
        assert_eq!(s.row(2).to_vec(), vec![0.0, 1.0]);
        assert!(AttentionTensor::probabilities(array![[0.5_f64, 0.6]]).is_err());
        assert!(AttentionTensor::probabilities(array![[0.4_f64, 0.6]]).is_ok());
    }
}
