use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric partition of the capacity range into bins `[a^(b−1), a^b]`.
///
/// Bin `i` (0-based) covers `[a^(b_min+i), a^(b_min+i+1)]` and is represented
/// by its geometric center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct QuantizationGrid {
    base: f64,
    b_min: i32,
    b_max: i32,
    centers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridSpec {
    base: f64,
    b_min: i32,
    b_max: i32,
}

impl TryFrom<GridSpec> for QuantizationGrid {
    type Error = Error;

    fn try_from(s: GridSpec) -> Result<Self> {
        QuantizationGrid::from_exponents(s.base, s.b_min, s.b_max)
    }
}

impl From<QuantizationGrid> for GridSpec {
    fn from(g: QuantizationGrid) -> Self {
        GridSpec {
            base: g.base,
            b_min: g.b_min,
            b_max: g.b_max,
        }
    }
}

impl QuantizationGrid {
    /// Smallest grid of base `base` whose edges cover `[lo, hi]`.
    pub fn new(base: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(base > 1.0 && base.is_finite()) {
            return Err(Error::InvalidInput(format!("grid base must exceed 1, got {base}")));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grid bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        let ln_a = base.ln();
        // Small slack so bounds that are exact powers don't gain a bin.
        let b_min = (lo.ln() / ln_a + 1e-9).floor() as i32;
        let b_max = (hi.ln() / ln_a - 1e-9).ceil() as i32;
        QuantizationGrid::from_exponents(base, b_min, b_max.max(b_min + 1))
    }

    /// Grid for a population with the given smallest and largest capacity:
    /// bounds `[min(1, smallest/10), 1.1 × largest]`.
    pub fn for_population(base: f64, min_capacity: f64, max_capacity: f64) -> Result<Self> {
        QuantizationGrid::new(base, (min_capacity / 10.0).min(1.0), 1.1 * max_capacity)
    }

    pub fn from_exponents(base: f64, b_min: i32, b_max: i32) -> Result<Self> {
        if !(base > 1.0 && base.is_finite()) || b_max <= b_min {
            return Err(Error::InvalidInput(format!(
                "invalid grid: base {base}, exponents {b_min}..{b_max}"
            )));
        }
        let centers = (b_min..b_max)
            .map(|b| base.powf(b as f64 + 0.5))
            .collect();
        Ok(QuantizationGrid {
            base,
            b_min,
            b_max,
            centers,
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn edges(&self) -> Vec<f64> {
        (self.b_min..=self.b_max).map(|b| self.base.powi(b)).collect()
    }

    /// Lowest edge.
    pub fn lower(&self) -> f64 {
        self.base.powi(self.b_min)
    }

    /// Highest edge.
    pub fn upper(&self) -> f64 {
        self.base.powi(self.b_max)
    }

    /// Lowest and highest bin centers.
    pub fn center_range(&self) -> (f64, f64) {
        (self.centers[0], self.centers[self.centers.len() - 1])
    }

    /// Geometric mean of the grid bounds.
    pub fn midpoint(&self) -> f64 {
        (self.lower() * self.upper()).sqrt()
    }

    /// Index of the bin containing `x`, clamped to the grid.
    pub fn bin_of(&self, x: f64) -> usize {
        let b = (x.ln() / self.base.ln()).floor() as i64 - self.b_min as i64;
        b.clamp(0, self.len() as i64 - 1) as usize
    }

    /// Number of bins separating the bins of `x` and `y`.
    pub fn bin_distance(&self, x: f64, y: f64) -> usize {
        self.bin_of(x).abs_diff(self.bin_of(y))
    }
}
