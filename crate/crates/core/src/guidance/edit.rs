use std::ops::Range;

use ndarray::{Array2, Axis};

use super::attention::{softmax_rows, AttentionKind, AttentionTensor};
use super::prior::Mask;
use super::{GuidanceConfig, GuidanceError, GuidanceMode};
use crate::Scalar;

/// `s(t) = α (ln(t + 1) + 1)`.
pub fn guidance_scale<T: Scalar>(t: i64, alpha: T) -> Result<T, GuidanceError> {
    if t < 0 {
        return Err(GuidanceError::NegativeTimestep(t));
    }
    Ok(alpha * (T::lit(t as f64).ln_1p() + T::one()))
}

/// One character's edit: its mask and the caption tokens it owns.
#[derive(Debug, Clone)]
pub struct RegionEdit<'a, T> {
    pub mask: &'a Mask<T>,
    pub tokens: Range<usize>,
}

fn check_edit<T: Scalar>(attn: &AttentionTensor<T>, edit: &RegionEdit<'_, T>) -> Result<(), GuidanceError> {
    if edit.mask.pixels() != attn.pixels() {
        return Err(GuidanceError::DimensionMismatch {
            context: "mask pixels vs attention rows",
            expected: attn.pixels(),
            found: edit.mask.pixels(),
        });
    }
    if edit.tokens.start > edit.tokens.end || edit.tokens.end > attn.tokens() {
        return Err(GuidanceError::DimensionMismatch {
            context: "owned token range vs attention columns",
            expected: attn.tokens(),
            found: edit.tokens.end,
        });
    }
    Ok(())
}

/// Adds `+s` inside each mask's β-region and `-s` outside it, on the owned
/// token columns only.
///
/// In [`GuidanceMode::Logit`] the result holds edited logits (softmax them
/// with [`AttentionTensor::normalized`]); a normalized input is first mapped
/// to logits with `ln`. In [`GuidanceMode::PostSoftmaxRenorm`] the edit is
/// applied to the map, negatives are clamped to zero and rows renormalized;
/// a row that clamps to all zeros becomes uniform.
pub fn apply_guidance_with_scale<T: Scalar>(
    attn: &AttentionTensor<T>,
    edits: &[RegionEdit<'_, T>],
    scale: T,
    beta_fraction: T,
    mode: GuidanceMode,
) -> Result<AttentionTensor<T>, GuidanceError> {
    for edit in edits {
        check_edit(attn, edit)?;
    }
    if !scale.is_finite() {
        return Err(GuidanceError::NonFinite(format!("guidance scale {scale}")));
    }
    if scale == T::zero() {
        return Ok(attn.clone());
    }
    let mut scores = match (mode, attn.kind()) {
        (GuidanceMode::Logit, AttentionKind::Logits) => attn.scores().clone(),
        (GuidanceMode::Logit, AttentionKind::Probabilities) => attn.scores().mapv(|v| v.ln()),
        (GuidanceMode::PostSoftmaxRenorm, AttentionKind::Logits) => softmax_rows(attn.scores()),
        (GuidanceMode::PostSoftmaxRenorm, AttentionKind::Probabilities) => attn.scores().clone(),
    };
    for edit in edits {
        add_region(&mut scores, edit, scale, beta_fraction);
    }
    match mode {
        GuidanceMode::Logit => Ok(AttentionTensor::from_parts(scores, AttentionKind::Logits)),
        GuidanceMode::PostSoftmaxRenorm => {
            renormalize(&mut scores);
            Ok(AttentionTensor::from_parts(scores, AttentionKind::Probabilities))
        }
    }
}

fn add_region<T: Scalar>(scores: &mut Array2<T>, edit: &RegionEdit<'_, T>, scale: T, beta_fraction: T) {
    let region = edit.mask.region(beta_fraction);
    for (pixel, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let delta = if region[pixel] { scale } else { -scale };
        for token in edit.tokens.clone() {
            row[token] += delta;
        }
    }
}

fn renormalize<T: Scalar>(scores: &mut Array2<T>) {
    let uniform = T::one() / T::from_count(scores.ncols().max(1));
    for mut row in scores.axis_iter_mut(Axis(0)) {
        row.mapv_inplace(|v| v.max(T::zero()));
        let sum: T = row.iter().copied().sum();
        if sum > T::zero() {
            row.mapv_inplace(|v| v / sum);
        } else {
            row.fill(uniform);
        }
    }
}

/// Single-character guidance at timestep `t` with the configured `α`,
/// `beta_fraction` and mode.
pub fn apply_guidance<T: Scalar>(
    attn: &AttentionTensor<T>,
    mask: &Mask<T>,
    tokens: Range<usize>,
    t: i64,
    config: &GuidanceConfig<T>,
) -> Result<AttentionTensor<T>, GuidanceError> {
    if attn.pixels() != config.grid.pixels() {
        return Err(GuidanceError::DimensionMismatch {
            context: "attention rows vs grid",
            expected: config.grid.pixels(),
            found: attn.pixels(),
        });
    }
    let scale = guidance_scale(t, config.alpha)?;
    apply_guidance_with_scale(attn, &[RegionEdit { mask, tokens }], scale, config.beta_fraction, config.mode)
}

/// Summed attention of `token` over the pixels in `region` (row-major),
/// taken on the normalized map.
pub fn in_region_mass<T: Scalar>(attn: &AttentionTensor<T>, token: usize, region: &[bool]) -> Result<T, GuidanceError> {
    if region.len() != attn.pixels() {
        return Err(GuidanceError::DimensionMismatch {
            context: "region vs attention rows",
            expected: attn.pixels(),
            found: region.len(),
        });
    }
    if token >= attn.tokens() {
        return Err(GuidanceError::IndexOutOfRange { index: token, count: attn.tokens() });
    }
    let map = attn.normalized();
    Ok(map
        .scores()
        .column(token)
        .iter()
        .zip(region)
        .filter(|(_, inside)| **inside)
        .map(|(v, _)| *v)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn half_mask() -> Mask<f64> {
        Mask::from_array(array![[1.0, 1.0], [0.1, 0.1]])
    }

    #[test]
    fn scale_schedule() {
        assert_eq!(guidance_scale(0, 2.5_f64).unwrap(), 2.5);
        assert!((guidance_scale(99, 2.5_f64).unwrap() - 14.0129).abs() < 1e-3);
        assert!((guidance_scale(999, 1.0_f64).unwrap() - 7.9078).abs() < 1e-3);
        assert_eq!(guidance_scale(-1, 1.0_f64), Err(GuidanceError::NegativeTimestep(-1)));
    }

    #[test]
    fn zero_scale_is_identity() {
        let attn = AttentionTensor::logits(array![[0.3, -0.2], [1.0, 0.5], [0.0, 0.0], [2.0, -1.0]]);
        let mask = half_mask();
        let out = apply_guidance_with_scale(&attn, &[RegionEdit { mask: &mask, tokens: 0..1 }], 0.0, 0.85, GuidanceMode::Logit).unwrap();
        assert_eq!(out, attn);
    }

    #[test]
    fn logit_edit_values() {
        let attn = AttentionTensor::logits(Array2::<f64>::zeros((4, 3)));
        let mask = half_mask();
        let out = apply_guidance_with_scale(&attn, &[RegionEdit { mask: &mask, tokens: 1..2 }], 2.0, 0.85, GuidanceMode::Logit).unwrap();
        assert_eq!(out.scores().column(1).to_vec(), vec![2.0, 2.0, -2.0, -2.0]);
        assert_eq!(out.scores().column(0).to_vec(), vec![0.0; 4]);
        assert_eq!(out.scores().column(2).to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn post_softmax_mode_stays_normalized() {
        let attn = AttentionTensor::logits(array![[0.3, -0.2, 0.1], [1.0, 0.5, 0.0], [0.0, 0.0, 0.0], [2.0, -1.0, 0.4]]);
        let mask = half_mask();
        for s in [0.01, 1.0, 14.0] {
            let out = apply_guidance_with_scale(&attn, &[RegionEdit { mask: &mask, tokens: 0..2 }], s, 0.85, GuidanceMode::PostSoftmaxRenorm).unwrap();
            assert_eq!(out.kind(), AttentionKind::Probabilities);
            assert!(out.max_row_deviation() < 1e-12);
            assert!(out.scores().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn all_tokens_clamped_row_is_uniform() {
        let attn = AttentionTensor::probabilities(array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let mask = Mask::from_array(array![[1.0, 0.0]]);
        let out = apply_guidance_with_scale(&attn, &[RegionEdit { mask: &mask, tokens: 0..2 }], 3.0, 0.85, GuidanceMode::PostSoftmaxRenorm).unwrap();
        assert_eq!(out.scores().row(1).to_vec(), vec![0.5, 0.5]);
        assert_eq!(out.scores().row(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn dimension_errors() {
        let attn = AttentionTensor::logits(Array2::<f64>::zeros((4, 3)));
        let mask = half_mask();
        assert!(apply_guidance_with_scale(&attn, &[RegionEdit { mask: &mask, tokens: 2..4 }], 1.0, 0.85, GuidanceMode::Logit).is_err());
        let small = Mask::from_array(array![[1.0]]);
        assert!(apply_guidance_with_scale(&attn, &[RegionEdit { mask: &small, tokens: 0..1 }], 1.0, 0.85, GuidanceMode::Logit).is_err());
        let config = GuidanceConfig::<f64>::default();
        assert!(apply_guidance(&attn, &mask, 0..1, 0, &config).is_err());
        assert!(in_region_mass(&attn, 3, &[true; 4]).is_err());
        assert!(in_region_mass(&attn, 0, &[true; 3]).is_err());
    }

    #[test]
    fn mass_increases_half_region() {
        let attn = AttentionTensor::logits(array![[0.3, -0.2], [1.0, 0.5], [0.0, 0.7], [2.0, -1.0]]);
        let mask = half_mask();
        let region = mask.region(0.85);
        let before = in_region_mass(&attn, 0, &region).unwrap();
        let out = apply_guidance_with_scale(&attn, &[RegionEdit { mask: &mask, tokens: 0..1 }], 1.0, 0.85, GuidanceMode::Logit).unwrap();
        assert!(in_region_mass(&out, 0, &region).unwrap() > before);
    }
}
