//! Game parameters, equilibrium candidates and the piecewise value functions
//! they induce.

use serde::{Deserialize, Serialize};

use crate::basis::{theta, PhiBasis, MAX_DEGREE};
use crate::error::{SolveError, SpecError};
use crate::poly::Polynomial;

/// Absolute tolerance for floating comparisons that have no better scale.
pub const ABS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }
}

impl From<Player> for u8 {
    fn from(p: Player) -> u8 {
        p.index() as u8 + 1
    }
}

impl TryFrom<u8> for Player {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Player::One),
            2 => Ok(Player::Two),
            other => Err(format!("player must be 1 or 2, got {other}")),
        }
    }
}

/// Fixed and proportional intervention costs (paid by the intervening player)
/// and gains (received by the opponent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Costs {
    pub c: f64,
    pub c_tilde: f64,
    pub lambda: f64,
    pub lambda_tilde: f64,
}

/// Unvalidated game description, exactly as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGameSpec {
    pub sigma: f64,
    pub rho: f64,
    pub costs: Costs,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidationOptions {
    /// Accept `c < c_tilde`. Such games admit profitable round trips between
    /// the players, so this is only useful for reproducing external data.
    pub allow_cost_inversion: bool,
}

/// A validated one-dimensional impulse game with dynamics `dX = σ dW`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "RawGameSpec")]
pub struct GameSpec {
    sigma: f64,
    rho: f64,
    costs: Costs,
    f1: Polynomial,
    f2: Polynomial,
}

impl From<GameSpec> for RawGameSpec {
    fn from(s: GameSpec) -> Self {
        RawGameSpec {
            sigma: s.sigma,
            rho: s.rho,
            costs: s.costs,
            f1: s.f1.coeffs().to_vec(),
            f2: s.f2.coeffs().to_vec(),
        }
    }
}

/// Checks every parameter constraint, returning the first violation.
pub fn validate_spec(raw: RawGameSpec, opts: ValidationOptions) -> Result<GameSpec, SpecError> {
    let RawGameSpec {
        sigma,
        rho,
        costs,
        f1,
        f2,
    } = raw;
    for (name, v) in [
        ("sigma", sigma),
        ("rho", rho),
        ("c", costs.c),
        ("c_tilde", costs.c_tilde),
        ("lambda", costs.lambda),
        ("lambda_tilde", costs.lambda_tilde),
    ] {
        if !v.is_finite() {
            return Err(SpecError::NonFinite { name });
        }
    }
    if f1.iter().chain(f2.iter()).any(|a| !a.is_finite()) {
        return Err(SpecError::NonFinite {
            name: "payoff coefficients",
        });
    }
    if sigma <= 0.0 {
        return Err(SpecError::NotPositive {
            name: "sigma",
            value: sigma,
        });
    }
    if rho <= 0.0 {
        return Err(SpecError::NotPositive { name: "rho", value: rho });
    }
    for (name, v) in [
        ("c", costs.c),
        ("c_tilde", costs.c_tilde),
        ("lambda", costs.lambda),
        ("lambda_tilde", costs.lambda_tilde),
    ] {
        if v < 0.0 {
            return Err(SpecError::Negative { name, value: v });
        }
    }
    if costs.c < costs.c_tilde && !opts.allow_cost_inversion {
        return Err(SpecError::FixedCostOrder {
            c: costs.c,
            c_tilde: costs.c_tilde,
        });
    }
    if costs.lambda < costs.lambda_tilde {
        return Err(SpecError::ProportionalCostOrder {
            lambda: costs.lambda,
            lambda_tilde: costs.lambda_tilde,
        });
    }
    if costs.c == costs.c_tilde && costs.lambda == costs.lambda_tilde {
        return Err(SpecError::DegenerateCosts);
    }
    let slope_margin = 1.0 - costs.lambda * rho;
    if slope_margin <= 0.0 {
        return Err(SpecError::DiscountedSlope { value: slope_margin });
    }
    let f1 = Polynomial::new(f1);
    let f2 = Polynomial::new(f2);
    for (name, f) in [("f1", &f1), ("f2", &f2)] {
        if f.coeffs().is_empty() {
            return Err(SpecError::EmptyPayoff { name });
        }
        if f.degree() > MAX_DEGREE {
            return Err(SpecError::DegreeTooHigh {
                name,
                degree: f.degree(),
                max: MAX_DEGREE,
            });
        }
    }
    if f1.degree() > 0 && f1.leading() < 0.0 {
        return Err(SpecError::F1Orientation);
    }
    if f2.degree() > 0 && f2.leading() > 0.0 {
        return Err(SpecError::F2Orientation);
    }
    Ok(GameSpec {
        sigma,
        rho,
        costs,
        f1,
        f2,
    })
}

impl GameSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        Self::from_json_with(text, ValidationOptions::default())
    }

    pub fn from_json_with(text: &str, opts: ValidationOptions) -> Result<Self, SpecError> {
        let raw: RawGameSpec = serde_json::from_str(text).map_err(|e| SpecError::Json(e.to_string()))?;
        validate_spec(raw, opts)
    }

    /// The symmetric linear game `f1 = x − s1`, `f2 = s2 − x`.
    pub fn linear(sigma: f64, rho: f64, s1: f64, s2: f64, costs: Costs) -> Result<Self, SpecError> {
        validate_spec(
            RawGameSpec {
                sigma,
                rho,
                costs,
                f1: vec![-s1, 1.0],
                f2: vec![s2, -1.0],
            },
            ValidationOptions::default(),
        )
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn costs(&self) -> &Costs {
        &self.costs
    }

    pub fn payoff(&self, player: Player) -> &Polynomial {
        match player {
            Player::One => &self.f1,
            Player::Two => &self.f2,
        }
    }

    pub fn theta(&self) -> f64 {
        theta(self.rho, self.sigma)
    }

    /// `(1 − λρ)/ρ`, positive for every valid spec.
    pub fn eta(&self) -> f64 {
        (1.0 - self.costs.lambda * self.rho) / self.rho
    }

    /// A copy with a different fixed cost, revalidated.
    pub fn with_fixed_cost(&self, c: f64, opts: ValidationOptions) -> Result<Self, SpecError> {
        let mut raw = RawGameSpec::from(self.clone());
        raw.costs.c = c;
        validate_spec(raw, opts)
    }

    /// `(s1, s2)` when `f1 = x − s1`, `f2 = s2 − x` and `s1 < s2`.
    pub fn symmetric_linear(&self) -> Option<(f64, f64)> {
        let (a, b) = (self.f1.coeffs(), self.f2.coeffs());
        if self.f1.degree() != 1 || self.f2.degree() != 1 {
            return None;
        }
        if (a[1] - 1.0).abs() > ABS_TOL || (b[1] + 1.0).abs() > ABS_TOL {
            return None;
        }
        let (s1, s2) = (-a[0], b[0]);
        (s1 < s2).then_some((s1, s2))
    }

    /// The homogeneous-free solution family for `player`, with `A = B = 0`.
    pub fn basis(&self, player: Player) -> PhiBasis {
        PhiBasis::for_payoff(self.payoff(player), self.rho, self.sigma, 0.0, 0.0)
            .expect("payoff degree checked at validation")
    }
}

/// The eight numbers defining both value functions and both threshold
/// strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub xbar1: f64,
    pub xbar2: f64,
    pub xstar1: f64,
    pub xstar2: f64,
}

impl EquilibriumParams {
    /// Order: `a11, a12, a21, a22, xbar1, xbar2, xstar1, xstar2`.
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.a11, self.a12, self.a21, self.a22, self.xbar1, self.xbar2, self.xstar1, self.xstar2,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Self {
            a11: v[0],
            a12: v[1],
            a21: v[2],
            a22: v[3],
            xbar1: v[4],
            xbar2: v[5],
            xstar1: v[6],
            xstar2: v[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// `xbar1 < xstar_i < xbar2` for both players.
    pub fn check_order(&self) -> Result<(), SolveError> {
        if !self.is_finite() {
            return Err(SolveError::NonFiniteParams);
        }
        let inside = |x: f64| self.xbar1 < x && x < self.xbar2;
        if inside(self.xstar1) && inside(self.xstar2) {
            Ok(())
        } else {
            Err(SolveError::OrderCondition {
                xbar1: self.xbar1,
                xbar2: self.xbar2,
                xstar1: self.xstar1,
                xstar2: self.xstar2,
            })
        }
    }

    pub fn coefficients(&self, player: Player) -> (f64, f64) {
        match player {
            Player::One => (self.a11, self.a12),
            Player::Two => (self.a21, self.a22),
        }
    }

    pub fn threshold(&self, player: Player) -> f64 {
        match player {
            Player::One => self.xbar1,
            Player::Two => self.xbar2,
        }
    }

    pub fn target(&self, player: Player) -> f64 {
        match player {
            Player::One => self.xstar1,
            Player::Two => self.xstar2,
        }
    }

    /// Largest componentwise difference, relative to `max(1, |other|)`.
    pub fn max_rel_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Three-piece value function of one player: linear on `]−∞, xbar1]`, the
/// ODE solution on `]xbar1, xbar2[`, linear on `[xbar2, ∞[`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseValue {
    player: Player,
    params: EquilibriumParams,
    phi: PhiBasis,
    costs: Costs,
    // Affine tails: value = level + slope * (x - anchor).
    left_level: f64,
    left_slope: f64,
    right_level: f64,
    right_slope: f64,
}

impl PiecewiseValue {
    pub fn new(spec: &GameSpec, params: &EquilibriumParams, player: Player) -> Self {
        let (a, b) = params.coefficients(player);
        let phi = spec.basis(player).with_coefficients(a, b);
        let k = *spec.costs();
        let (xb1, xb2) = (params.xbar1, params.xbar2);
        let (left_level, left_slope, right_level, right_slope) = match player {
            Player::One => (
                phi.eval(params.xstar1, 0) - k.c - k.lambda * (params.xstar1 - xb1),
                k.lambda,
                phi.eval(params.xstar2, 0) + k.c_tilde + k.lambda_tilde * (xb2 - params.xstar2),
                k.lambda_tilde,
            ),
            Player::Two => (
                phi.eval(params.xstar1, 0) + k.c_tilde + k.lambda_tilde * (params.xstar1 - xb1),
                -k.lambda_tilde,
                phi.eval(params.xstar2, 0) - k.c - k.lambda * (xb2 - params.xstar2),
                -k.lambda,
            ),
        };
        Self {
            player,
            params: *params,
            phi,
            costs: k,
            left_level,
            left_slope,
            right_level,
            right_slope,
        }
    }

    pub fn player(&self) -> Player {
        self.player
    }

    pub fn params(&self) -> &EquilibriumParams {
        &self.params
    }

    pub fn phi(&self) -> &PhiBasis {
        &self.phi
    }

    pub fn costs(&self) -> &Costs {
        &self.costs
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = &self.params;
        if x <= p.xbar1 {
            self.left_level + self.left_slope * (x - p.xbar1)
        } else if x < p.xbar2 {
            self.phi.eval(x, 0)
        } else {
            self.right_level + self.right_slope * (x - p.xbar2)
        }
    }

    /// One-sided first derivative; the two sides agree away from the thresholds.
    pub fn eval_deriv(&self, x: f64, side: Side) -> f64 {
        let p = &self.params;
        let in_left = match side {
            Side::Left => x <= p.xbar1,
            Side::Right => x < p.xbar1,
        };
        let in_right = match side {
            Side::Left => x > p.xbar2,
            Side::Right => x >= p.xbar2,
        };
        if in_left {
            self.left_slope
        } else if in_right {
            self.right_slope
        } else {
            self.phi.eval(x, 1)
        }
    }

    /// Second derivative away from the thresholds (zero on the tails).
    pub fn eval_second(&self, x: f64) -> f64 {
        let p = &self.params;
        if x <= p.xbar1 || x >= p.xbar2 {
            0.0
        } else {
            self.phi.eval(x, 2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Intervene when the state is at or below the threshold.
    Below,
    /// Intervene when the state is at or above the threshold.
    Above,
}

/// Intervene when the state crosses `threshold`, jumping to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStrategy {
    pub player: Player,
    pub threshold: f64,
    pub target: f64,
}

impl ThresholdStrategy {
    pub fn new(player: Player, threshold: f64, target: f64) -> Self {
        Self {
            player,
            threshold,
            target,
        }
    }

    /// The equilibrium strategies `(player 1, player 2)` encoded by `params`.
    pub fn pair_from(params: &EquilibriumParams) -> (Self, Self) {
        (
            Self::new(Player::One, params.xbar1, params.xstar1),
            Self::new(Player::Two, params.xbar2, params.xstar2),
        )
    }

    pub fn direction(&self) -> Direction {
        match self.player {
            Player::One => Direction::Below,
            Player::Two => Direction::Above,
        }
    }

    pub fn triggers(&self, x: f64) -> bool {
        match self.direction() {
            Direction::Below => x <= self.threshold,
            Direction::Above => x >= self.threshold,
        }
    }

    /// Both thresholds ordered, targets strictly inside the joint continuation
    /// interval.
    pub fn check_pair(s1: &Self, s2: &Self) -> Result<(), String> {
        if s1.player != Player::One || s2.player != Player::Two {
            return Err("strategies must be given as (player 1, player 2)".into());
        }
        let all = [s1.threshold, s1.target, s2.threshold, s2.target];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("strategy levels must be finite".into());
        }
        if s1.threshold >= s2.threshold {
            return Err(format!(
                "thresholds out of order: player 1 at {} must lie below player 2 at {}",
                s1.threshold, s2.threshold
            ));
        }
        for s in [s1, s2] {
            if !(s1.threshold < s.target && s.target < s2.threshold) {
                return Err(format!(
                    "target {} of player {} lies outside the continuation interval ({}, {})",
                    s.target,
                    u8::from(s.player),
                    s1.threshold,
                    s2.threshold
                ));
            }
        }
        Ok(())
    }
}
