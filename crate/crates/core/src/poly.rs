//! Dense real polynomials in ascending-degree order.

use serde::{Deserialize, Serialize};

/// `coeffs[k]` multiplies `x^k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree ignoring trailing zero coefficients; the zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&a| a != 0.0)
            .unwrap_or(0)
    }

    /// Highest nonzero coefficient, or 0 for the zero polynomial.
    pub fn leading(&self) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .copied()
            .find(|&a| a != 0.0)
            .unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    pub fn derivative(&self) -> Self {
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &a)| k as f64 * a)
                .collect(),
        }
    }

    /// k-th derivative evaluated at `x`.
    pub fn eval_deriv(&self, x: f64, k: usize) -> f64 {
        let mut acc = 0.0;
        for (n, &a) in self.coeffs.iter().enumerate().skip(k).rev() {
            let falling: f64 = ((n - k + 1)..=n).map(|m| m as f64).product();
            acc = acc * x + falling * a;
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|a| a * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n)
            .map(|k| {
                self.coeffs.get(k).copied().unwrap_or(0.0) + other.coeffs.get(k).copied().unwrap_or(0.0)
            })
            .collect();
        Self { coeffs }
    }

    /// Largest coefficient magnitude.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
    }

    /// `(x - shift)^n * scale`, expanded.
    pub fn shifted_power(scale: f64, shift: f64, n: usize) -> Self {
        let mut coeffs = vec![0.0; n + 1];
        let mut binom = 1.0;
        for k in 0..=n {
            coeffs[k] = scale * binom * (-shift).powi((n - k) as i32);
            binom = binom * (n - k) as f64 / (k + 1) as f64;
        }
        Self { coeffs }
    }
}

impl From<Vec<f64>> for Polynomial {
    fn from(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs)
    }
}
