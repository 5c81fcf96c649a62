//! Deterministic stand-in features for text and image inputs.
//!
//! Without a text encoder, a character description is embedded as a signed
//! hashed bag of words; toy tokens and latent pixels get seeded random
//! vectors.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Scalar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const IMAGE_STREAM: u64 = 0x696d_6167_6500_0000;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Signed hashed bag of lowercase words, L2-normalized. Empty text gives the
/// zero vector.
pub fn text_feature<T: Scalar>(text: &str, dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); dim];
    if dim == 0 {
        return out;
    }
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let h = fnv1a(word.to_lowercase().as_bytes());
        let slot = (h % dim as u64) as usize;
        if h >> 63 == 0 {
            out[slot] += T::one();
        } else {
            out[slot] -= T::one();
        }
    }
    let norm = out.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if norm > T::zero() {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Uniform `[-1, 1)` vector seeded by the token text and `seed`.
pub fn token_embedding<T: Scalar>(token: &str, dim: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.to_lowercase().as_bytes()) ^ seed);
    (0..dim).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect()
}

/// One row per token.
pub fn token_matrix<T: Scalar, S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> Array2<T> {
    let mut out = Array2::zeros((tokens.len(), dim));
    for (i, token) in tokens.iter().enumerate() {
        for (j, v) in token_embedding::<T>(token.as_ref(), dim, seed).into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// Uniform `[-1, 1)` latent features, one row per pixel.
pub fn image_features<T: Scalar>(pixels: usize, dim: usize, seed: u64) -> Array2<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ IMAGE_STREAM);
    Array2::from_shape_simple_fn((pixels, dim), || T::lit(rng.gen_range(-1.0..1.0)))
}
