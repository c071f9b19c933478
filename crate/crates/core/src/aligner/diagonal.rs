//! Log-linear diagonal alignment prior.
//!
//! For target position `j` of `n` and source position `i` of `m` (both
//! 1-based), the feature is `h = -|i/m - j/n|` and the non-null prior is
//! `exp(lambda * h) / Z`. Position 0 is the null word with mass `p0`.

use serde::{Deserialize, Serialize};

use super::AlignError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagonalParams {
    /// Diagonal tension; 0 gives a uniform prior over source positions.
    pub lambda: f64,
    /// Null-alignment probability.
    pub p0: f64,
    /// Dirichlet concentration for mean-field updates; 0 selects plain
    /// maximum-likelihood normalization.
    pub vb_alpha: f64,
}

impl Default for DiagonalParams {
    fn default() -> Self {
        Self {
            lambda: 4.0,
            p0: 0.08,
            vb_alpha: 0.01,
        }
    }
}

impl DiagonalParams {
    pub fn validate(&self) -> Result<(), AlignError> {
        if !(self.p0 >= 0.0 && self.p0 < 1.0) {
            return Err(AlignError::InvalidParams(format!("p0 {} not in [0, 1)", self.p0)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(AlignError::InvalidParams(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.vb_alpha >= 0.0 && self.vb_alpha.is_finite()) {
            return Err(AlignError::InvalidParams(format!("vb_alpha {} must be >= 0", self.vb_alpha)));
        }
        Ok(())
    }

    pub fn is_variational(&self) -> bool {
        self.vb_alpha > 0.0
    }

    /// Fills `out[0..=m]` with the prior over source positions for target
    /// position `j`, null included at index 0.
    pub fn prior(&self, j: usize, m: usize, n: usize, out: &mut Vec<f64>) {
        out.clear();
        out.push(self.p0);
        let z = partition(j, m, n, self.lambda);
        let scale = (1.0 - self.p0) / z;
        out.extend((1..=m).map(|i| scale * (self.lambda * feature(i, j, m, n)).exp()));
    }
}

/// `-|i/m - j/n|`, from the exact integer numerator so positions equally
/// far from the diagonal get bit-identical values.
#[inline]
pub fn feature(i: usize, j: usize, m: usize, n: usize) -> f64 {
    -((i * n).abs_diff(j * m) as f64) / (m * n) as f64
}

/// Normalizer `sum_{i=1..m} exp(lambda * h(i, j))` via two geometric
/// series split at the diagonal.
pub fn partition(j: usize, m: usize, n: usize, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return m as f64;
    }
    let floor = (j * m) / n;
    let step = -lambda / m as f64;
    // (1 - r^k) / (1 - r) with r = exp(step), computed without cancellation
    let series = |k: usize| (step * k as f64).exp_m1() / step.exp_m1();
    let mut z = 0.0;
    if floor < m {
        z += (lambda * feature(floor + 1, j, m, n)).exp() * series(m - floor);
    }
    if floor > 0 {
        z += (lambda * feature(floor, j, m, n)).exp() * series(floor);
    }
    z
}

/// Direct O(m) sum, used to check [`partition`].
pub fn partition_naive(j: usize, m: usize, n: usize, lambda: f64) -> f64 {
    (1..=m).map(|i| (lambda * feature(i, j, m, n)).exp()).sum()
}

/// Prior expectation of the feature, `d log Z / d lambda`.
pub fn expected_feature(j: usize, m: usize, n: usize, lambda: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..=m {
        let h = feature(i, j, m, n);
        let w = (lambda * h).exp();
        num += h * w;
        den += w;
    }
    num / den
}
