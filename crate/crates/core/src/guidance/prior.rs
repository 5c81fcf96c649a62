use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EncoderOutput, GuidanceError};
use crate::Scalar;

/// Axis-aligned box of prior coordinates that the pixel grid covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct CoordinateBox<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
}

impl<T: Scalar> Default for CoordinateBox<T> {
    /// `[-1.5, 1.5]²`, wide enough that priors centred at `x = ±1` are not
    /// clipped by the image border.
    fn default() -> Self {
        Self::square(T::lit(1.5))
    }
}

impl<T: Scalar> CoordinateBox<T> {
    pub fn square(half: T) -> Self {
        Self { x_min: -half, x_max: half, y_min: -half, y_max: half }
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        if self.x_max > self.x_min && self.y_max > self.y_min {
            Ok(())
        } else {
            Err(GuidanceError::InvalidConfig("extent must have x_max > x_min and y_max > y_min".into()))
        }
    }

    /// Prior coordinate of the centre of pixel `(row, col)` on an
    /// `height × width` grid. Row 0 maps to `y_min`.
    pub fn pixel_center(&self, row: usize, col: usize, height: usize, width: usize) -> (T, T) {
        let half = T::lit(0.5);
        let x = self.x_min + (T::from_count(col) + half) * (self.x_max - self.x_min) / T::from_count(width);
        let y = self.y_min + (T::from_count(row) + half) * (self.y_max - self.y_min) / T::from_count(height);
        (x, y)
    }
}

/// 2-D Gaussian with a symmetric positive-definite covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PositionPrior<T> {
    mean: [T; 2],
    cov: [[T; 2]; 2],
}

impl<T: Scalar> PositionPrior<T> {
    pub fn new(mean: [T; 2], cov: [[T; 2]; 2]) -> Result<Self, GuidanceError> {
        let [[a, b], [c, d]] = cov;
        if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(GuidanceError::NonFinite("position prior parameters".into()));
        }
        if b != c {
            return Err(GuidanceError::NotPositiveDefinite(format!("off-diagonal entries differ ({b} vs {c})")));
        }
        // Sylvester's criterion for 2x2.
        if !(a > T::zero() && a * d - b * c > T::zero()) {
            return Err(GuidanceError::NotPositiveDefinite(format!("[[{a}, {b}], [{c}, {d}]]")));
        }
        Ok(Self { mean, cov })
    }

    /// Unit covariance centred at `(mean_x, mean_y)`.
    pub fn isotropic(mean_x: T, mean_y: T) -> Self {
        Self { mean: [mean_x, mean_y], cov: [[T::one(), T::zero()], [T::zero(), T::one()]] }
    }

    /// Initial prior for character `index` of `count`: characters are spread
    /// evenly over `x ∈ [-1, 1]` with `μ_y = 0` and identity covariance; a
    /// single character is centred.
    pub fn initial(index: usize, count: usize) -> Result<Self, GuidanceError> {
        if index >= count {
            return Err(GuidanceError::IndexOutOfRange { index, count });
        }
        let mean_x = if count == 1 {
            T::zero()
        } else {
            -T::one() + T::from_count(index) * T::lit(2.0) / T::from_count(count - 1)
        };
        Ok(Self::isotropic(mean_x, T::zero()))
    }

    pub fn mean(&self) -> [T; 2] {
        self.mean
    }

    pub fn cov(&self) -> [[T; 2]; 2] {
        self.cov
    }

    pub fn determinant(&self) -> T {
        let [[a, b], [c, d]] = self.cov;
        a * d - b * c
    }

    pub fn density(&self, x: T, y: T) -> T {
        let [[a, b], [c, d]] = self.cov;
        let det = self.determinant();
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        // (dx, dy) Σ⁻¹ (dx, dy)ᵀ with Σ⁻¹ = [[d, -b], [-c, a]] / det
        let quad = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det;
        let norm = T::one() / (T::lit(2.0) * T::PI() * det.sqrt());
        norm * (-T::lit(0.5) * quad).exp()
    }

    /// Density at every pixel centre of a `height × width` grid.
    pub fn evaluate(&self, height: usize, width: usize, extent: &CoordinateBox<T>) -> Result<Mask<T>, GuidanceError> {
        if height == 0 || width == 0 {
            return Err(GuidanceError::InvalidConfig("grid dimensions must be >= 1".into()));
        }
        extent.validate()?;
        let values = Array2::from_shape_fn((height, width), |(row, col)| {
            let (x, y) = extent.pixel_center(row, col, height, width);
            self.density(x, y)
        });
        Ok(Mask { values })
    }

    /// Shifts the mean by the encoder offsets and scales the covariance by
    /// `gamma`. `self` is left untouched.
    pub fn enhance(&self, deltas: &EncoderOutput<T>) -> Result<Self, GuidanceError> {
        if !(deltas.gamma > T::zero()) {
            return Err(GuidanceError::NonPositiveScale(deltas.gamma.as_f64()));
        }
        let mean = [self.mean[0] + deltas.delta_x, self.mean[1] + deltas.delta_y];
        let cov = self.cov.map(|row| row.map(|v| v * deltas.gamma));
        Self::new(mean, cov)
    }
}

/// Discretized prior over the latent grid, row-major `height × width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mask<T> {
    values: Array2<T>,
}

impl<T: Scalar> Mask<T> {
    pub fn from_array(values: Array2<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn pixels(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[[row, col]]
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Row and column of the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_value = T::neg_infinity();
        for ((row, col), &v) in self.values.indexed_iter() {
            if v > best_value {
                best_value = v;
                best = (row, col);
            }
        }
        best
    }

    /// `β = beta_fraction · max(mask)`.
    pub fn threshold(&self, beta_fraction: T) -> T {
        beta_fraction * self.max()
    }

    /// Row-major flags of pixels at or above `beta_fraction · max`.
    pub fn region(&self, beta_fraction: T) -> Vec<bool> {
        let beta = self.threshold(beta_fraction);
        self.values.iter().map(|&v| v >= beta).collect()
    }

    /// One row per line, space-separated, row-major.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GuidanceError> {
        let mut rows: Vec<Vec<T>> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map(T::lit)
                        .map_err(|e| GuidanceError::InvalidConfig(format!("mask line {}: {e}", i + 1)))
                })
                .collect::<Result<Vec<T>, _>>()?;
            rows.push(row);
        }
        let width = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(GuidanceError::DimensionMismatch { context: "mask row width", expected: width, found: bad.len() });
        }
        let height = rows.len();
        let flat: Vec<T> = rows.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((height, width), flat).expect("rectangular rows");
        Ok(Self { values })
    }

    /// 8-bit grayscale rendering scaled so the maximum maps to 255.
    pub fn to_gray_image(&self) -> image::GrayImage {
        let max = self.max();
        let scale = if max > T::zero() { T::lit(255.0) / max } else { T::zero() };
        image::GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            let v = (self.values[[y as usize, x as usize]] * scale).round();
            image::Luma([v.to_u8().unwrap_or(0)])
        })
    }
}

pub fn init_position_prior<T: Scalar>(index: usize, count: usize) -> Result<PositionPrior<T>, GuidanceError> {
    PositionPrior::initial(index, count)
}
