use std::ops::Range;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::attention::{random_matrix, AttentionTensor, ToyCrossAttention};
use super::edit::{apply_guidance_with_scale, guidance_scale, in_region_mass, RegionEdit};
use super::encoder::EncoderWeights;
use super::features::{image_features, text_feature, token_matrix};
use super::prior::{CoordinateBox, Mask, PositionPrior};
use super::{GuidanceConfig, GuidanceError, GuidanceMode};
use crate::composer::SceneCaption;
use crate::Scalar;

/// Feature width of the toy attention inputs.
pub const TOY_INPUT_DIM: usize = 16;
/// Projection width `d` of the toy attention layer.
pub const TOY_LATENT_DIM: usize = 8;
/// Timesteps reported by [`toy_guidance_report`].
pub const REPORT_TIMESTEPS: [i64; 3] = [0, 499, 999];

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterGuidance<T> {
    pub character_id: String,
    pub index: usize,
    pub initial: PositionPrior<T>,
    pub prior: PositionPrior<T>,
    pub mask: Mask<T>,
    pub tokens: Range<usize>,
}

/// Priors, encoder refinement and masks for every character of a caption,
/// in caption order.
pub fn plan_scene<T: Scalar>(
    caption: &SceneCaption,
    config: &GuidanceConfig<T>,
    encoder: &EncoderWeights<T>,
) -> Result<Vec<CharacterGuidance<T>>, GuidanceError> {
    config.validate()?;
    let count = caption.character_descriptions.len();
    let mut plan = Vec::with_capacity(count);
    for (index, character) in caption.character_descriptions.iter().enumerate() {
        let initial = PositionPrior::initial(index, count)?;
        let feature = text_feature::<T>(&character.description, encoder.input_dim());
        let prior = initial.enhance(&encoder.forward(&feature)?)?;
        let mask = prior.evaluate(config.grid.height, config.grid.width, &config.extent)?;
        let tokens = caption.span_of(&character.id).ok_or_else(|| {
            GuidanceError::InvalidConfig(format!("caption has no token span for `{}`", character.id))
        })?;
        plan.push(CharacterGuidance { character_id: character.id.clone(), index, initial, prior, mask, tokens });
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassRow {
    pub timestep: i64,
    pub scale: f64,
    pub character_id: String,
    pub token_index: usize,
    pub token: String,
    pub mass_before: f64,
    pub mass_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassReport {
    pub mode: GuidanceMode,
    pub alpha: f64,
    pub beta_fraction: f64,
    pub seed: u64,
    pub rows: Vec<MassRow>,
}

impl MassReport {
    /// Tab-separated table with a header line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("timestep\tscale\tcharacter\ttoken_index\ttoken\tmass_before\tmass_after\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\t{}\t{:.6}\t{:.6}\n",
                r.timestep, r.scale, r.character_id, r.token_index, r.token, r.mass_before, r.mass_after
            ));
        }
        out
    }
}

/// Runs the seeded toy attention layer on the caption's tokens and reports
/// every owned token's in-region mass before and after guidance at
/// `timesteps`.
pub fn toy_guidance_report<T: Scalar>(
    caption: &SceneCaption,
    plan: &[CharacterGuidance<T>],
    config: &GuidanceConfig<T>,
    timesteps: &[i64],
    seed: u64,
) -> Result<MassReport, GuidanceError> {
    let tokens = caption.tokens();
    let text = token_matrix::<T, _>(&tokens, TOY_INPUT_DIM, seed);
    let image = image_features::<T>(config.grid.pixels(), TOY_INPUT_DIM, seed);
    let layer = ToyCrossAttention::from_seed(TOY_INPUT_DIM, TOY_LATENT_DIM, seed);
    let logits = layer.forward(&image, &text)?.logits;
    let edits: Vec<RegionEdit<'_, T>> = plan.iter().map(|c| RegionEdit { mask: &c.mask, tokens: c.tokens.clone() }).collect();

    let mut rows = Vec::new();
    for &t in timesteps {
        let scale = guidance_scale(t, config.alpha)?;
        let edited = apply_guidance_with_scale(&logits, &edits, scale, config.beta_fraction, config.mode)?;
        for c in plan {
            let region = c.mask.region(config.beta_fraction);
            for token in c.tokens.clone() {
                rows.push(MassRow {
                    timestep: t,
                    scale: scale.as_f64(),
                    character_id: c.character_id.clone(),
                    token_index: token,
                    token: tokens[token].clone(),
                    mass_before: in_region_mass(&logits, token, &region)?.as_f64(),
                    mass_after: in_region_mass(&edited, token, &region)?.as_f64(),
                });
            }
        }
    }
    Ok(MassReport {
        mode: config.mode,
        alpha: config.alpha.as_f64(),
        beta_fraction: config.beta_fraction.as_f64(),
        seed,
        rows,
    })
}

/// Synthetic attention problem: random features through the toy layer,
/// `characters` evenly placed priors, and token ownership laid out as one
/// unowned leading block followed by one equal block per character.
#[derive(Debug, Clone)]
pub struct ToyHarness<T> {
    pub height: usize,
    pub width: usize,
    pub logits: AttentionTensor<T>,
    pub masks: Vec<Mask<T>>,
    pub spans: Vec<Range<usize>>,
}

impl<T: Scalar> ToyHarness<T> {
    pub fn new(seed: u64, height: usize, width: usize, tokens: usize, characters: usize) -> Result<Self, GuidanceError> {
        if characters == 0 || tokens < characters + 1 {
            return Err(GuidanceError::InvalidConfig(format!(
                "toy harness needs at least one unowned token: {tokens} tokens for {characters} characters"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image: Array2<T> = random_matrix(height * width, TOY_INPUT_DIM, 1.0, &mut rng);
        let text: Array2<T> = random_matrix(tokens, TOY_INPUT_DIM, 1.0, &mut rng);
        let layer = ToyCrossAttention::from_seed(TOY_INPUT_DIM, TOY_LATENT_DIM, seed);
        let logits = layer.forward(&image, &text)?.logits;

        let extent = CoordinateBox::default();
        let block = tokens / (characters + 1);
        let lead = tokens - block * characters;
        let mut masks = Vec::with_capacity(characters);
        let mut spans = Vec::with_capacity(characters);
        for j in 0..characters {
            masks.push(PositionPrior::initial(j, characters)?.evaluate(height, width, &extent)?);
            spans.push(lead + j * block..lead + (j + 1) * block);
        }
        Ok(Self { height, width, logits, masks, spans })
    }

    pub fn edits(&self) -> Vec<RegionEdit<'_, T>> {
        self.masks.iter().zip(&self.spans).map(|(mask, tokens)| RegionEdit { mask, tokens: tokens.clone() }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harness_layout() {
        let h = ToyHarness::<f64>::new(0, 16, 16, 12, 3).unwrap();
        assert_eq!(h.spans, vec![3..6, 6..9, 9..12]);
        assert_eq!(h.logits.pixels(), 256);
        assert_eq!(h.logits.tokens(), 12);
        assert!(ToyHarness::<f64>::new(0, 4, 4, 3, 3).is_err());
        let h = ToyHarness::<f64>::new(0, 4, 4, 4, 3).unwrap();
        assert_eq!(h.spans, vec![1..2, 2..3, 3..4]);
    }

    #[test]
    fn harness_is_seeded() {
        let a = ToyHarness::<f64>::new(7, 8, 8, 6, 2).unwrap();
        let b = ToyHarness::<f64>::new(7, 8, 8, 6, 2).unwrap();
        let c = ToyHarness::<f64>::new(8, 8, 8, 6, 2).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_ne!(a.logits, c.logits);
    }

    #[test]
    fn logit_mass_grows_with_scale() {
        let h = ToyHarness::<f64>::new(0, 16, 16, 12, 3).unwrap();
        for (mask, span) in h.masks.iter().zip(&h.spans) {
            let region = mask.region(0.85);
            let mut last = in_region_mass(&h.logits, span.start, &region).unwrap();
            for s in [0.5, 1.0, 2.5, 14.0] {
                let out = apply_guidance_with_scale(&h.logits, &h.edits(), s, 0.85, GuidanceMode::Logit).unwrap();
                let mass = in_region_mass(&out, span.start, &region).unwrap();
                assert!(mass > last);
                last = mass;
            }
        }
    }
}
