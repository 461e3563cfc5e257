use crate::error::{Result, RhaError};
use crate::numerics::Matrix;

/// Default stand-in for unobserved entries: the mid-range pixel value.
pub const DEFAULT_FILL: f64 = 0.5;

/// Observation indicator Ω (1 = observed, 0 = missing).
///
/// `fill` is the value an unobserved entry holds when it is fed to the
/// network. Training substitutes it for every Ω=0 input, so nothing the
/// caller stores at a missing position can leak into the loss or gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    indicator: Matrix,
    fill: f64,
}

impl Mask {
    pub fn new(indicator: Matrix, fill: f64) -> Result<Self> {
        if let Some(bad) = indicator.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(RhaError::param(format!(
                "mask entries must be 0 or 1, found {bad}"
            )));
        }
        if !fill.is_finite() {
            return Err(RhaError::param("mask fill value must be finite"));
        }
        Ok(Self { indicator, fill })
    }

    pub fn all_observed(rows: usize, cols: usize) -> Self {
        Self {
            indicator: Matrix::ones(rows, cols),
            fill: DEFAULT_FILL,
        }
    }

    pub fn none_observed(rows: usize, cols: usize) -> Self {
        Self {
            indicator: Matrix::zeros(rows, cols),
            fill: DEFAULT_FILL,
        }
    }

    pub fn indicator(&self) -> &Matrix {
        &self.indicator
    }

    pub fn into_indicator(self) -> Matrix {
        self.indicator
    }

    pub fn fill(&self) -> f64 {
        self.fill
    }

    pub fn shape(&self) -> (usize, usize) {
        self.indicator.shape()
    }

    #[inline]
    pub fn is_observed(&self, r: usize, c: usize) -> bool {
        self.indicator.get(r, c) != 0.0
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.indicator.is_empty() {
            return 1.0;
        }
        self.indicator.sum() / self.indicator.len() as f64
    }

    pub fn is_all_observed(&self) -> bool {
        self.indicator.as_slice().iter().all(|&v| v != 0.0)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Mask {
        Mask {
            indicator: self.indicator.select_rows(indices),
            fill: self.fill,
        }
    }

    /// Network input for `x`: observed entries pass through, missing ones become `fill`.
    pub fn fill_unobserved(&self, x: &Matrix) -> Result<Matrix> {
        x.zip_map(&self.indicator, "fill_unobserved", |v, w| {
            if w == 0.0 {
                self.fill
            } else {
                v
            }
        })
    }

    /// `Ω ⊙ a`, with unobserved positions forced to +0.0.
    pub fn apply(&self, a: &Matrix) -> Result<Matrix> {
        a.zip_map(
            &self.indicator,
            "mask",
            |v, w| if w == 0.0 { 0.0 } else { v },
        )
    }
}
