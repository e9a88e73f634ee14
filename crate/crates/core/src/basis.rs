//! Solutions of the continuation-region ODE `(σ²/2) φ'' − ρ φ + f = 0`.
//!
//! Every solution has the form `φ(x) = A e^{θx} + B e^{−θx} + p(x)` with
//! `θ = sqrt(2ρ/σ²)` and `p` the unique polynomial particular solution.

use serde::{Deserialize, Serialize};

use crate::error::SpecError;
use crate::poly::Polynomial;

/// Largest payoff degree accepted anywhere in the crate.
pub const MAX_DEGREE: usize = 5;

pub fn theta(rho: f64, sigma: f64) -> f64 {
    (2.0 * rho / (sigma * sigma)).sqrt()
}

/// Polynomial `p` with `(σ²/2) p'' − ρ p + f = 0`.
///
/// The map `p ↦ (σ²/2) p'' − ρ p` is upper triangular in the monomial basis,
/// so coefficients are recovered from the top degree down:
/// `p_k = (f_k + (σ²/2)(k+2)(k+1) p_{k+2}) / ρ`.
pub fn particular_solution(f: &Polynomial, rho: f64, sigma: f64) -> Result<Polynomial, SpecError> {
    let degree = f.degree();
    if degree > MAX_DEGREE {
        return Err(SpecError::DegreeTooHigh {
            name: "payoff",
            degree,
            max: MAX_DEGREE,
        });
    }
    let half_var = 0.5 * sigma * sigma;
    let fc = f.coeffs();
    let n = fc.len().min(degree + 1);
    let mut p = vec![0.0; n];
    for k in (0..n).rev() {
        let carried = if k + 2 < n {
            half_var * ((k + 2) * (k + 1)) as f64 * p[k + 2]
        } else {
            0.0
        };
        p[k] = (fc[k] + carried) / rho;
    }
    let p = Polynomial::new(p);

    let residual = coefficient_residual(&p, f, rho, sigma);
    let scale = f.max_abs_coeff().max(rho * p.max_abs_coeff()).max(f64::MIN_POSITIVE);
    assert!(
        residual <= 1e-12 * scale,
        "particular solution residual {residual:e} exceeds tolerance (scale {scale:e})"
    );
    Ok(p)
}

/// Max coefficient of `(σ²/2) p'' − ρ p + f`.
pub fn coefficient_residual(p: &Polynomial, f: &Polynomial, rho: f64, sigma: f64) -> f64 {
    let lhs = p
        .derivative()
        .derivative()
        .scale(0.5 * sigma * sigma)
        .add(&p.scale(-rho))
        .add(f);
    lhs.max_abs_coeff()
}

/// One member `A e^{θx} + B e^{−θx} + p(x)` of the solution family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiBasis {
    pub theta: f64,
    pub particular: Polynomial,
    pub a_plus: f64,
    pub a_minus: f64,
}

impl PhiBasis {
    pub fn new(theta: f64, particular: Polynomial, a_plus: f64, a_minus: f64) -> Self {
        Self {
            theta,
            particular,
            a_plus,
            a_minus,
        }
    }

    /// Builds the family member for payoff `f` directly.
    pub fn for_payoff(f: &Polynomial, rho: f64, sigma: f64, a_plus: f64, a_minus: f64) -> Result<Self, SpecError> {
        Ok(Self::new(theta(rho, sigma), particular_solution(f, rho, sigma)?, a_plus, a_minus))
    }

    pub fn with_coefficients(&self, a_plus: f64, a_minus: f64) -> Self {
        Self {
            a_plus,
            a_minus,
            ..self.clone()
        }
    }

    /// Value (`deriv = 0`) or derivative of order `deriv`.
    pub fn eval(&self, x: f64, deriv: usize) -> f64 {
        let t = self.theta;
        let tk = t.powi(deriv as i32);
        let sign = if deriv % 2 == 0 { 1.0 } else { -1.0 };
        self.a_plus * tk * (t * x).exp() + sign * self.a_minus * tk * (-t * x).exp() + self.particular.eval_deriv(x, deriv)
    }

    /// `(σ²/2) φ''(x) − ρ φ(x) + f(x)`.
    pub fn ode_residual(&self, f: &Polynomial, rho: f64, sigma: f64, x: f64) -> f64 {
        0.5 * sigma * sigma * self.eval(x, 2) - rho * self.eval(x, 0) + f.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_payoff_particular() {
        // f = x + 3, i.e. x - s1 with s1 = -3
        let rho = 0.02;
        let p = particular_solution(&Polynomial::new(vec![3.0, 1.0]), rho, 0.15).unwrap();
        assert!((p.coeffs()[0] - 3.0 / rho).abs() < 1e-12);
        assert!((p.coeffs()[1] - 1.0 / rho).abs() < 1e-12);
    }

    #[test]
    fn cubic_payoff_particular_matches_closed_form() {
        let (rho, sigma, c1, s1) = (0.1, 0.2, 1.2, -3.0);
        let f = Polynomial::shifted_power(c1, s1, 3);
        let p = particular_solution(&f, rho, sigma).unwrap();
        for &x in &[-5.0, -3.0, -0.7, 0.0, 1.3, 4.0] {
            let u: f64 = x - s1;
            let expected = c1 / rho * u.powi(3) + 3.0 * c1 * sigma * sigma / (rho * rho) * u;
            assert!((p.eval(x) - expected).abs() < 1e-10 * expected.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn zero_payoff_gives_zero() {
        let p = particular_solution(&Polynomial::zero(), 0.1, 0.3).unwrap();
        assert!(p.coeffs().iter().all(|&a| a == 0.0));
        let p = particular_solution(&Polynomial::new(vec![0.0, 0.0]), 0.1, 0.3).unwrap();
        assert_eq!(p.max_abs_coeff(), 0.0);
    }

    #[test]
    fn degree_overflow_is_rejected() {
        let f = Polynomial::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            particular_solution(&f, 0.1, 0.2),
            Err(SpecError::DegreeTooHigh { degree: 6, .. })
        ));
    }

    #[test]
    fn pure_particular_when_coefficients_vanish() {
        let f = Polynomial::new(vec![3.0, -1.0]);
        let b = PhiBasis::for_payoff(&f, 0.02, 0.15, 0.0, 0.0).unwrap();
        for &x in &[-2.0, 0.0, 1.5] {
            assert_eq!(b.eval(x, 0), b.particular.eval(x));
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let f = Polynomial::shifted_power(1.0, 3.0, 3).scale(-1.0);
        let b = PhiBasis::for_payoff(&f, 0.1, 0.2, 24.669, -56.001).unwrap();
        let h = 1e-5;
        for &x in &[-0.7, -0.2, 0.1, 0.45] {
            let fd1 = (b.eval(x + h, 0) - b.eval(x - h, 0)) / (2.0 * h);
            let fd2 = (b.eval(x + h, 1) - b.eval(x - h, 1)) / (2.0 * h);
            assert!((fd1 - b.eval(x, 1)).abs() <= 1e-6 * b.eval(x, 1).abs().max(1.0));
            assert!((fd2 - b.eval(x, 2)).abs() <= 1e-6 * b.eval(x, 2).abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn ode_residual_vanishes(
            coeffs in proptest::collection::vec(-5.0..5.0f64, 1..=6),
            rho in 0.01..0.5f64,
            sigma in 0.05..1.0f64,
            a in -10.0..10.0f64,
            b in -10.0..10.0f64,
            x in -2.0..2.0f64,
        ) {
            let f = Polynomial::new(coeffs);
            let basis = PhiBasis::for_payoff(&f, rho, sigma, a, b).unwrap();
            let scale = 1.0 + rho * basis.eval(x, 0).abs() + f.eval(x).abs();
            prop_assert!(basis.ode_residual(&f, rho, sigma, x).abs() < 1e-10 * scale);
            prop_assert!(coefficient_residual(&basis.particular, &f, rho, sigma) <= 1e-12 * f.max_abs_coeff().max(rho * basis.particular.max_abs_coeff()).max(1e-300));
        }
    }
}
