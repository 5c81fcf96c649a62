//! Knowledge encoder: a small tanh MLP mapping a character's text feature
//! to a mean offset and a covariance scale, with hand-written backprop.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GuidanceError;
use crate::Scalar;

/// Refinement predicted for one character. `gamma` is always positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EncoderOutput<T> {
    pub delta_x: T,
    pub delta_y: T,
    pub gamma: T,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn identity() -> Self {
        Self { delta_x: T::zero(), delta_y: T::zero(), gamma: T::one() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseLayer<T> {
    /// `outputs × inputs`
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weights: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Weights of the encoder. Hidden layers use `tanh`; the 3-wide output
/// layer is linear and its third component goes through `exp` to give γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "RawWeights<T>")]
pub struct EncoderWeights<T> {
    layers: Vec<DenseLayer<T>>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct RawWeights<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> TryFrom<RawWeights<T>> for EncoderWeights<T> {
    type Error = GuidanceError;

    fn try_from(raw: RawWeights<T>) -> Result<Self, Self::Error> {
        Self::from_layers(raw.layers)
    }
}

/// Supervised target for one character feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSample<T> {
    pub feature: Vec<T>,
    pub target: EncoderOutput<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T> {
    pub weights: EncoderWeights<T>,
    /// Loss before each step, followed by the final loss.
    pub losses: Vec<T>,
}

fn check_sizes(sizes: &[usize]) -> Result<(), GuidanceError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(GuidanceError::InvalidConfig(format!("invalid layer sizes {sizes:?}")));
    }
    if *sizes.last().expect("non-empty") != 3 {
        return Err(GuidanceError::DimensionMismatch { context: "encoder output width", expected: 3, found: sizes[sizes.len() - 1] });
    }
    Ok(())
}

impl<T: Scalar> EncoderWeights<T> {
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self, GuidanceError> {
        let Some(last) = layers.last() else {
            return Err(GuidanceError::InvalidConfig("encoder needs at least one layer".into()));
        };
        if last.outputs() != 3 {
            return Err(GuidanceError::DimensionMismatch { context: "encoder output width", expected: 3, found: last.outputs() });
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(GuidanceError::DimensionMismatch { context: "layer bias", expected: layer.outputs(), found: layer.bias.len() });
            }
            if i > 0 && layers[i - 1].outputs() != layer.inputs() {
                return Err(GuidanceError::DimensionMismatch { context: "layer chaining", expected: layers[i - 1].outputs(), found: layer.inputs() });
            }
        }
        Ok(Self { layers })
    }

    /// All-zero network for layer widths `sizes` (input first, 3 last).
    pub fn zeros(sizes: &[usize]) -> Result<Self, GuidanceError> {
        check_sizes(sizes)?;
        Ok(Self { layers: sizes.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect() })
    }

    /// Glorot-uniform weights and zero biases from a seeded ChaCha8 stream.
    pub fn random(sizes: &[usize], seed: u64) -> Result<Self, GuidanceError> {
        let mut w = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut w.layers {
            let limit = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            layer.weights.mapv_inplace(|_| T::lit(rng.gen_range(-limit..limit)));
        }
        Ok(w)
    }

    /// Random hidden layers with a zero output layer, so the untrained
    /// encoder predicts the identity refinement `(0, 0, 1)`.
    pub fn identity_head(sizes: &[usize], seed: u64) -> Result<Self, GuidanceError> {
        let mut w = Self::random(sizes, seed)?;
        let last = w.layers.last_mut().expect("at least one layer");
        last.weights.fill(T::zero());
        last.bias.fill(T::zero());
        Ok(w)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(DenseLayer::outputs)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, weights row-major then bias.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[T]) -> Result<(), GuidanceError> {
        if params.len() != self.parameter_count() {
            return Err(GuidanceError::DimensionMismatch { context: "parameter vector", expected: self.parameter_count(), found: params.len() });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn check_input(&self, feature: &[T]) -> Result<(), GuidanceError> {
        if feature.len() != self.input_dim() {
            return Err(GuidanceError::DimensionMismatch { context: "encoder input", expected: self.input_dim(), found: feature.len() });
        }
        Ok(())
    }

    /// Layer activations, input first; the last entry is the raw output.
    fn activations(&self, feature: &[T]) -> Vec<Array1<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(Array1::from(feature.to_vec()));
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.weights.dot(acts.last().expect("input pushed")) + &layer.bias;
            acts.push(if i == last { z } else { z.mapv(T::tanh) });
        }
        acts
    }

    pub fn forward(&self, feature: &[T]) -> Result<EncoderOutput<T>, GuidanceError> {
        self.check_input(feature)?;
        let acts = self.activations(feature);
        let raw = acts.last().expect("output");
        Ok(EncoderOutput { delta_x: raw[0], delta_y: raw[1], gamma: raw[2].exp() })
    }

    /// Adds the gradient of `0.5·|out - target|²` for one sample into
    /// `grad` (same shape as `self`) and returns that sample's loss.
    fn accumulate(&self, sample: &FitSample<T>, grad: &mut Self, weight: T) -> T {
        let acts = self.activations(&sample.feature);
        let raw = acts.last().expect("output");
        let gamma = raw[2].exp();
        let err = [raw[0] - sample.target.delta_x, raw[1] - sample.target.delta_y, gamma - sample.target.gamma];
        let loss = T::lit(0.5) * err.iter().map(|e| *e * *e).sum::<T>();
        // d loss / d raw; the γ channel passes through exp.
        let mut delta = Array1::from(vec![err[0], err[1], err[2] * gamma]) * weight;
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let g = &mut grad.layers[i];
            g.weights += &outer(delta.view(), input.view());
            g.bias += &delta;
            if i > 0 {
                let back = self.layers[i].weights.t().dot(&delta);
                // input = tanh(z) ⇒ dz = back · (1 - input²)
                delta = back * input.mapv(|a| T::one() - a * a);
            }
        }
        loss * weight
    }

    /// Mean loss over `samples` and its gradient.
    pub fn loss_and_gradient(&self, samples: &[FitSample<T>]) -> Result<(T, Self), GuidanceError> {
        if samples.is_empty() {
            return Err(GuidanceError::InvalidConfig("at least one sample is required".into()));
        }
        let mut grad = Self::zeros(&self.layer_sizes())?;
        let weight = T::one() / T::from_count(samples.len());
        let mut loss = T::zero();
        for s in samples {
            self.check_input(&s.feature)?;
            loss += self.accumulate(s, &mut grad, weight);
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, samples: &[FitSample<T>]) -> Result<T, GuidanceError> {
        if samples.is_empty() {
            return Err(GuidanceError::InvalidConfig("at least one sample is required".into()));
        }
        let mut total = T::zero();
        for s in samples {
            let out = self.forward(&s.feature)?;
            let e = [out.delta_x - s.target.delta_x, out.delta_y - s.target.delta_y, out.gamma - s.target.gamma];
            total += T::lit(0.5) * e.iter().map(|v| *v * *v).sum::<T>();
        }
        Ok(total / T::from_count(samples.len()))
    }

    /// Full-batch gradient descent on the mean squared error.
    pub fn fit(&self, samples: &[FitSample<T>], steps: usize, learning_rate: T) -> Result<FitReport<T>, GuidanceError> {
        if samples.is_empty() {
            return Err(GuidanceError::InvalidConfig("at least one sample is required".into()));
        }
        if !(learning_rate > T::zero()) {
            return Err(GuidanceError::InvalidConfig(format!("learning rate must be > 0, got {learning_rate}")));
        }
        let mut weights = self.clone();
        let mut losses = Vec::with_capacity(steps + 1);
        for step in 0..=steps {
            let (loss, grad) = weights.loss_and_gradient(samples)?;
            if !loss.is_finite() {
                return Err(GuidanceError::NonFinite(format!("loss is {loss} at step {step}")));
            }
            losses.push(loss);
            if step == steps {
                break;
            }
            for (layer, g) in weights.layers.iter_mut().zip(&grad.layers) {
                layer.weights.scaled_add(-learning_rate, &g.weights);
                layer.bias.scaled_add(-learning_rate, &g.bias);
            }
        }
        Ok(FitReport { weights, losses })
    }
}

fn outer<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> Array2<T> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

pub fn knowledge_encoder_forward<T: Scalar>(feature: &[T], weights: &EncoderWeights<T>) -> Result<EncoderOutput<T>, GuidanceError> {
    weights.forward(feature)
}

pub fn fit_encoder_supervised<T: Scalar>(
    samples: &[FitSample<T>],
    initial: &EncoderWeights<T>,
    steps: usize,
    learning_rate: T,
) -> Result<FitReport<T>, GuidanceError> {
    initial.fit(samples, steps, learning_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_identity() {
        let w = EncoderWeights::<f64>::zeros(&[4, 5, 3]).unwrap();
        assert_eq!(w.forward(&[0.3, -1.0, 2.0, 0.0]).unwrap(), EncoderOutput::identity());
        let w = EncoderWeights::<f64>::identity_head(&[4, 5, 5, 3], 9).unwrap();
        assert_eq!(w.forward(&[0.3, -1.0, 2.0, 0.0]).unwrap(), EncoderOutput::identity());
    }

    #[test]
    fn dimension_errors() {
        let w = EncoderWeights::<f64>::random(&[4, 3], 0).unwrap();
        assert!(matches!(w.forward(&[1.0]), Err(GuidanceError::DimensionMismatch { .. })));
        assert!(EncoderWeights::<f64>::zeros(&[4, 2]).is_err());
        assert!(EncoderWeights::<f64>::zeros(&[3]).is_err());
        let bad = vec![DenseLayer { weights: Array2::<f64>::zeros((5, 4)), bias: Array1::zeros(5) }, DenseLayer { weights: Array2::zeros((3, 6)), bias: Array1::zeros(3) }];
        assert!(EncoderWeights::from_layers(bad).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = EncoderWeights::<f64>::random(&[8, 16, 3], 0).unwrap();
        let b = EncoderWeights::<f64>::random(&[8, 16, 3], 0).unwrap();
        let c = EncoderWeights::<f64>::random(&[8, 16, 3], 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut d = a.clone();
        d.set_parameters(&c.parameters()).unwrap();
        assert_eq!(d, c);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let w = EncoderWeights::<f64>::random(&[2, 3], 0).unwrap();
        assert!(w.fit(&[], 10, 0.1).is_err());
        let s = vec![FitSample { feature: vec![1.0, 2.0], target: EncoderOutput::identity() }];
        assert!(w.fit(&s, 10, 0.0).is_err());
        let huge = vec![FitSample { feature: vec![1e300, 1e300], target: EncoderOutput::identity() }];
        assert!(matches!(w.fit(&huge, 10, 1.0), Err(GuidanceError::NonFinite(_))));
    }
}
