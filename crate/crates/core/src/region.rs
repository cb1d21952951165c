//! Axis-aligned boxes with a per-axis grid.

use rand::Rng;

use crate::error::{Error, Result};

/// Box `Π [lower_d, upper_d]` with `resolution_d` evenly spaced grid points per axis.
///
/// A degenerate axis (`lower == upper`) carries exactly one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d || resolution.len() != d {
            return Err(Error::invalid(
                "region bounds and resolution must share a nonzero length",
            ));
        }
        for i in 0..d {
            let (lo, hi, r) = (lower[i], upper[i], resolution[i]);
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::invalid(format!(
                    "axis {i}: need finite lower <= upper, got [{lo}, {hi}]"
                )));
            }
            if lo == hi && r != 1 {
                return Err(Error::invalid(format!(
                    "axis {i} is degenerate and takes resolution 1"
                )));
            }
            if lo < hi && r < 2 {
                return Err(Error::invalid(format!(
                    "axis {i}: resolution must be at least 2, got {r}"
                )));
            }
        }
        Ok(Region {
            lower,
            upper,
            resolution,
        })
    }

    /// Same resolution on every non-degenerate axis.
    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>, resolution: usize) -> Result<Self> {
        let res = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| if l == u { 1 } else { resolution })
            .collect();
        Self::new(lower, upper, res)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn with_resolution(&self, resolution: Vec<usize>) -> Result<Self> {
        Self::new(self.lower.clone(), self.upper.clone(), resolution)
    }

    /// Grid refined to `factor·(r−1)+1` points on each non-degenerate axis.
    pub fn refined(&self, factor: usize) -> Self {
        let res = self
            .resolution
            .iter()
            .map(|&r| {
                if r == 1 {
                    1
                } else {
                    factor.max(1) * (r - 1) + 1
                }
            })
            .collect();
        Region {
            resolution: res,
            ..self.clone()
        }
    }

    pub fn cardinality(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Grid point `index`, first axis fastest.
    pub fn grid_point(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        (0..self.dim())
            .map(|d| {
                let r = self.resolution[d];
                let k = rem % r;
                rem /= r;
                if r == 1 {
                    self.lower[d]
                } else {
                    self.lower[d] + (self.upper[d] - self.lower[d]) * k as f64 / (r - 1) as f64
                }
            })
            .collect()
    }

    pub fn grid_points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.cardinality()).map(|i| self.grid_point(i))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
            .collect()
    }

    /// Maps a point of the unit cube onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| lo + t * (hi - lo))
            .collect()
    }
}
