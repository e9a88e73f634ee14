//! Closed-form equilibrium of the symmetric linear game
//! `f1 = x − s1`, `f2 = s2 − x`.
//!
//! Everything reduces to the scalar root `ξ ∈ (0, η)` of
//! `F(x) = 2x + θc − η log((η + x)/(η − x))`. For large `c` the root sits
//! within a few ulps of `η`, so the solver works with the gap `u = η − ξ`
//! and every derived quantity is computed from `u` rather than `η − ξ`.

use serde::{Deserialize, Serialize};

use crate::error::{SolveError, SpecError};
use crate::model::{EquilibriumParams, GameSpec};

const MAX_SHRINKS: usize = 200;

/// `F(x) = 2x + θc − η log((η + x)/(η − x))`.
pub fn root_function(x: f64, c: f64, theta: f64, eta: f64) -> f64 {
    2.0 * x + theta * c - eta * ((eta + x) / (eta - x)).ln()
}

/// `F` written in terms of the gap `u = η − x`; exact where `η − x` is not
/// representable.
pub fn root_function_gap(gap: f64, c: f64, theta: f64, eta: f64) -> f64 {
    2.0 * (eta - gap) + theta * c - eta * ((2.0 * eta - gap) / gap).ln()
}

/// The root `ξ` together with `η − ξ` computed without cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiRoot {
    pub xi: f64,
    pub gap: f64,
}

impl XiRoot {
    /// `η² − ξ²`.
    pub fn eta_sq_minus_xi_sq(&self) -> f64 {
        self.gap * (self.xi + self.xi + self.gap)
    }

    /// `log((η + ξ)/(η − ξ))`.
    pub fn log_ratio(&self) -> f64 {
        ((2.0 * self.xi + self.gap) / self.gap).ln()
    }
}

/// Unique zero of `F` on `(0, η)`.
pub fn solve_xi(c: f64, theta: f64, eta: f64, tol: f64) -> Result<f64, SolveError> {
    solve_xi_root(c, theta, eta, tol).map(|r| r.xi)
}

/// Bisection in `log u` down to a relative bracket of `1e-3`, then a
/// bracket-safeguarded Newton polish on `G(u) = F(η − u)`, which is
/// increasing in `u`.
pub fn solve_xi_root(c: f64, theta: f64, eta: f64, tol: f64) -> Result<XiRoot, SolveError> {
    for (name, v) in [("c", c), ("theta", theta), ("eta", eta), ("tol", tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SpecError::NotPositive { name, value: v }.into());
        }
    }
    let g = |u: f64| root_function_gap(u, c, theta, eta);

    // G(η⁻) = θc > 0; push the lower end toward 0 until G < 0.
    let mut lo = 1e-12 * eta;
    let mut shrinks = 0;
    while g(lo) >= 0.0 {
        shrinks += 1;
        lo *= 1e-12;
        if shrinks >= MAX_SHRINKS || lo == 0.0 {
            return Err(SolveError::BracketExhausted { iterations: shrinks });
        }
    }
    let mut hi = (1.0 - 1e-12) * eta;
    if g(hi) <= 0.0 {
        hi = eta;
    }

    while hi / lo > 1.0 + 1e-3 {
        let mid = (lo * hi).sqrt();
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut u = 0.5 * (lo + hi);
    for _ in 0..100 {
        let val = g(u);
        if val.abs() <= tol {
            break;
        }
        if val < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let slope = -2.0 + 2.0 * eta * eta / (u * (2.0 * eta - u));
        let mut next = u - val / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 4.0 * f64::EPSILON * u {
            u = next;
            break;
        }
        u = next;
    }
    Ok(XiRoot { xi: eta - u, gap: u })
}

/// `(ξ'(c), ξ''(c))` from implicit differentiation of `F(ξ(c)) = 0`.
pub fn xi_derivatives(xi: f64, _c: f64, theta: f64, eta: f64) -> (f64, f64) {
    let m = eta * eta - xi * xi;
    derivatives_from(xi, m, theta, eta)
}

fn derivatives_from(xi: f64, eta_sq_minus_xi_sq: f64, theta: f64, eta: f64) -> (f64, f64) {
    let d1 = 0.5 * theta * eta_sq_minus_xi_sq / (xi * xi);
    let d2 = -0.5 * theta * theta * eta * eta * eta_sq_minus_xi_sq / xi.powi(5);
    (d1, d2)
}

/// Scalar quantities behind the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedCoefficients {
    pub s_tilde: f64,
    pub theta: f64,
    pub eta: f64,
    pub xi: f64,
    /// `η − ξ`, kept separately because it underflows the subtraction for large `c`.
    pub eta_minus_xi: f64,
    pub gamma_cap: f64,
}

impl DerivedCoefficients {
    fn root(&self) -> XiRoot {
        XiRoot {
            xi: self.xi,
            gap: self.eta_minus_xi,
        }
    }

    /// `(ξ'(c), ξ''(c))` at this root.
    pub fn xi_derivatives(&self) -> (f64, f64) {
        derivatives_from(self.xi, self.root().eta_sq_minus_xi_sq(), self.theta, self.eta)
    }
}

/// `Γ = θ(c − c̃)/(4ξ) + θc(λ − λ̃)/(4ηξ) + (λ − λ̃)/(2η)`.
pub fn gamma_cap(c: f64, c_tilde: f64, lambda: f64, lambda_tilde: f64, theta: f64, eta: f64, xi: f64) -> f64 {
    theta * (c - c_tilde) / (4.0 * xi)
        + theta * c * (lambda - lambda_tilde) / (4.0 * eta * xi)
        + (lambda - lambda_tilde) / (2.0 * eta)
}

/// Root tolerance used by the closed form.
pub fn default_root_tol(c: f64, theta: f64) -> f64 {
    1e-12 * (theta * c).max(1.0)
}

pub fn derived_coefficients(spec: &GameSpec) -> Result<DerivedCoefficients, SolveError> {
    let (s1, s2) = spec.symmetric_linear().ok_or(SpecError::NotSymmetricLinear)?;
    let k = spec.costs();
    let (theta, eta) = (spec.theta(), spec.eta());
    let root = solve_xi_root(k.c, theta, eta, default_root_tol(k.c, theta))?;
    let gamma = gamma_cap(k.c, k.c_tilde, k.lambda, k.lambda_tilde, theta, eta, root.xi);
    if !(gamma > 0.0) {
        return Err(SpecError::FixedCostOrder {
            c: k.c,
            c_tilde: k.c_tilde,
        }
        .into());
    }
    Ok(DerivedCoefficients {
        s_tilde: 0.5 * (s1 + s2),
        theta,
        eta,
        xi: root.xi,
        eta_minus_xi: root.gap,
        gamma_cap: gamma,
    })
}

/// Semi-explicit equilibrium of a symmetric linear game.
pub fn closed_form_equilibrium(spec: &GameSpec) -> Result<(EquilibriumParams, DerivedCoefficients), SolveError> {
    let d = derived_coefficients(spec)?;
    let root = d.root();
    let (st, th) = (d.s_tilde, d.theta);
    let sg = d.gamma_cap.sqrt();
    let sg1 = (d.gamma_cap + 1.0).sqrt();
    let half_log = 0.5 * root.log_ratio();
    let spread = (sg1 + sg).ln();
    let bar = (half_log + spread) / th;
    let star = (spread - half_log) / th;

    let amp = root.eta_sq_minus_xi_sq().sqrt() / (2.0 * th);
    let down = (-th * st).exp();
    let up = (th * st).exp();
    let params = EquilibriumParams {
        a11: down * amp * (-sg1 - sg),
        a12: up * amp * (sg1 - sg),
        a21: down * amp * (sg1 - sg),
        a22: up * amp * (-sg1 - sg),
        xbar1: st - bar,
        xbar2: st + bar,
        xstar1: st - star,
        xstar2: st + star,
    };
    params.check_order()?;
    Ok((params, d))
}

/// The symmetric game in the variables `ȳ = e^{θ(x̄2 − s̃)}`, `y* = e^{θ(x*2 − s̃)}`,
/// `A1 = 2θ A21 e^{θs̃}`, `A2 = 2θ A22 e^{−θs̃}`, in which player 2's
/// conditions become four algebraic equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedSystem {
    pub ybar: f64,
    pub ystar: f64,
    pub a1: f64,
    pub a2: f64,
}

impl ReducedSystem {
    pub fn from_params(p: &EquilibriumParams, d: &DerivedCoefficients) -> Self {
        let (th, st) = (d.theta, d.s_tilde);
        Self {
            ybar: (th * (p.xbar2 - st)).exp(),
            ystar: (th * (p.xstar2 - st)).exp(),
            a1: 2.0 * th * p.a21 * (th * st).exp(),
            a2: 2.0 * th * p.a22 * (-th * st).exp(),
        }
    }

    /// Builds the solution from `ξ` alone: `A1A2 = −M`, `A1 + A2 = −2N`, then
    /// `ȳ, y*` as the two roots of `A1 y² − 2ηy − A2 = 0`.
    pub fn from_root(spec: &GameSpec, d: &DerivedCoefficients) -> Self {
        let k = spec.costs();
        let (th, eta, xi) = (d.theta, d.eta, d.xi);
        let m = d.root().eta_sq_minus_xi_sq();
        let n = (m * (th * eta * (k.c - k.c_tilde) + (k.lambda - k.lambda_tilde) * (2.0 * xi + th * k.c))
            / (4.0 * eta * xi))
            .sqrt();
        let disc = (n * n + m).sqrt();
        let a1 = -n + disc;
        let a2 = -n - disc;
        // sqrt(η² + A1 A2) = ξ by construction.
        Self {
            ybar: (eta + xi) / a1,
            ystar: d.eta_minus_xi / a1,
            a1,
            a2,
        }
    }

    /// The four reduced equations, each divided by a natural magnitude.
    pub fn residuals(&self, spec: &GameSpec, d: &DerivedCoefficients) -> [f64; 4] {
        let k = spec.costs();
        let (th, eta) = (d.theta, d.eta);
        let Self { ybar, ystar, a1, a2 } = *self;
        let log_ratio = (ybar / ystar).ln();
        let quad = |y: f64| (a1 * y * y - 2.0 * eta * y - a2) / (a1 * y * y).abs().max(2.0 * eta * y).max(a2.abs());
        let s = a1 + a2;
        let bracket = th * (k.c - k.c_tilde) + (k.lambda - k.lambda_tilde) * log_ratio;
        let rc = (s * s * (ybar - ystar) + 2.0 * a2 * bracket)
            / (s * s * (ybar - ystar)).abs().max((2.0 * a2 * bracket).abs()).max(f64::MIN_POSITIVE);
        let rd = (a1 * (ybar - ystar) + th * k.c - eta * log_ratio) / (th * k.c).max(eta * log_ratio.abs()).max(1.0);
        [quad(ystar), quad(ybar), rc, rd]
    }
}

/// `V(x) = level + slope·(x − anchor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineValue {
    pub anchor: f64,
    pub level: f64,
    pub slope: f64,
}

impl AffineValue {
    pub fn eval(&self, x: f64) -> f64 {
        self.level + self.slope * (x - self.anchor)
    }
}

/// `c → 0⁺` with `c̃ = 0`, `λ = λ̃`: all four levels collapse to `s̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroCostLimit {
    pub point: f64,
    pub v1: AffineValue,
    pub v2: AffineValue,
}

/// `c → +∞`: nobody intervenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfiniteCostLimit {
    pub xbar1: f64,
    pub xbar2: f64,
    pub xstar1: f64,
    pub xstar2: f64,
    pub v1: AffineValue,
    pub v2: AffineValue,
}

/// `c → c̃⁺` with `λ = λ̃`: each target lands on the opponent's threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferLimit {
    pub xi_at_c_tilde: f64,
    /// Common limit of `x̄1` and `x*2`.
    pub lower: f64,
    /// Common limit of `x̄2` and `x*1`.
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticLimits {
    pub zero_cost: Option<ZeroCostLimit>,
    pub infinite_cost: InfiniteCostLimit,
    pub transfer: Option<TransferLimit>,
}

/// Limits of the closed form as the fixed cost varies, all other parameters
/// held fixed. Inapplicable limits are `None`.
pub fn asymptotic_limits(spec: &GameSpec) -> Result<AsymptoticLimits, SolveError> {
    let (s1, s2) = spec.symmetric_linear().ok_or(SpecError::NotSymmetricLinear)?;
    let k = spec.costs();
    let rho = spec.rho();
    let st = 0.5 * (s1 + s2);
    let (theta, eta) = (spec.theta(), spec.eta());
    let same_slope = k.lambda == k.lambda_tilde;

    let zero_cost = (k.c_tilde == 0.0 && same_slope).then(|| {
        let level = (s2 - st) / rho;
        ZeroCostLimit {
            point: st,
            v1: AffineValue {
                anchor: st,
                level,
                slope: -k.lambda,
            },
            v2: AffineValue {
                anchor: st,
                level,
                slope: -k.lambda,
            },
        }
    });

    let infinite_cost = InfiniteCostLimit {
        xbar1: f64::NEG_INFINITY,
        xbar2: f64::INFINITY,
        xstar1: f64::INFINITY,
        xstar2: f64::NEG_INFINITY,
        v1: AffineValue {
            anchor: s1,
            level: 0.0,
            slope: 1.0 / rho,
        },
        v2: AffineValue {
            anchor: s2,
            level: 0.0,
            slope: -1.0 / rho,
        },
    };

    let transfer = if same_slope {
        let (xi, half_log) = if k.c_tilde > 0.0 {
            let root = solve_xi_root(k.c_tilde, theta, eta, default_root_tol(k.c_tilde, theta))?;
            (root.xi, 0.5 * root.log_ratio() / theta)
        } else {
            (0.0, 0.0)
        };
        Some(TransferLimit {
            xi_at_c_tilde: xi,
            lower: st - half_log,
            upper: st + half_log,
        })
    } else {
        None
    };

    Ok(AsymptoticLimits {
        zero_cost,
        infinite_cost,
        transfer,
    })
}
