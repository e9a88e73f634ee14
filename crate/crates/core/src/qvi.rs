//! The eight smooth-pasting conditions for general polynomial payoffs, a
//! damped multi-start Newton solver for them, and a grid certificate for the
//! quasi-variational inequalities the candidate must satisfy.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::PhiBasis;
use crate::error::SolveError;
use crate::model::{Costs, ABS_TOL, EquilibriumParams, GameSpec, PiecewiseValue, Player, ValidationOptions};
use crate::symmetric::closed_form_equilibrium;

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

/// Residuals of the pasting conditions, in order: `φ1'(x*1) − λ`,
/// `φ1'(x̄1) − λ`, C⁰ of V1 at x̄1, C⁰ of V1 at x̄2, `φ2'(x*2) + λ`,
/// `φ2'(x̄2) + λ`, C⁰ of V2 at x̄1, C⁰ of V2 at x̄2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PastingResidual {
    pub r: [f64; 8],
}

impl PastingResidual {
    pub fn norm_inf(&self) -> f64 {
        self.r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

struct Phis {
    one: PhiBasis,
    two: PhiBasis,
}

impl Phis {
    fn new(spec: &GameSpec, p: &EquilibriumParams) -> Self {
        Self {
            one: spec.basis(Player::One).with_coefficients(p.a11, p.a12),
            two: spec.basis(Player::Two).with_coefficients(p.a21, p.a22),
        }
    }
}

fn residual_vector(spec: &GameSpec, p: &EquilibriumParams) -> [f64; 8] {
    let Costs {
        c,
        c_tilde,
        lambda,
        lambda_tilde,
    } = *spec.costs();
    let Phis { one, two } = Phis::new(spec, p);
    let (xb1, xb2, xs1, xs2) = (p.xbar1, p.xbar2, p.xstar1, p.xstar2);
    [
        one.eval(xs1, 1) - lambda,
        one.eval(xb1, 1) - lambda,
        one.eval(xb1, 0) - one.eval(xs1, 0) + c + lambda * (xs1 - xb1),
        one.eval(xb2, 0) - one.eval(xs2, 0) - c_tilde - lambda_tilde * (xb2 - xs2),
        two.eval(xs2, 1) + lambda,
        two.eval(xb2, 1) + lambda,
        two.eval(xb1, 0) - two.eval(xs1, 0) - c_tilde - lambda_tilde * (xs1 - xb1),
        two.eval(xb2, 0) - two.eval(xs2, 0) + c + lambda * (xb2 - xs2),
    ]
}

/// Evaluates the pasting system at an ordered candidate.
pub fn system_residual(p: &EquilibriumParams, spec: &GameSpec) -> Result<PastingResidual, SolveError> {
    p.check_order()?;
    Ok(PastingResidual {
        r: residual_vector(spec, p),
    })
}

/// Analytic Jacobian of the residuals with respect to
/// `(a11, a12, a21, a22, xbar1, xbar2, xstar1, xstar2)`.
fn jacobian(spec: &GameSpec, p: &EquilibriumParams) -> Mat8 {
    let k = spec.costs();
    let th = spec.theta();
    let Phis { one, two } = Phis::new(spec, p);
    let (xb1, xb2, xs1, xs2) = (p.xbar1, p.xbar2, p.xstar1, p.xstar2);
    let ep = |x: f64| (th * x).exp();
    let em = |x: f64| (-th * x).exp();
    let mut j = Mat8::zeros();

    j[(0, 0)] = th * ep(xs1);
    j[(0, 1)] = -th * em(xs1);
    j[(0, 6)] = one.eval(xs1, 2);

    j[(1, 0)] = th * ep(xb1);
    j[(1, 1)] = -th * em(xb1);
    j[(1, 4)] = one.eval(xb1, 2);

    j[(2, 0)] = ep(xb1) - ep(xs1);
    j[(2, 1)] = em(xb1) - em(xs1);
    j[(2, 4)] = one.eval(xb1, 1) - k.lambda;
    j[(2, 6)] = -one.eval(xs1, 1) + k.lambda;

    j[(3, 0)] = ep(xb2) - ep(xs2);
    j[(3, 1)] = em(xb2) - em(xs2);
    j[(3, 5)] = one.eval(xb2, 1) - k.lambda_tilde;
    j[(3, 7)] = -one.eval(xs2, 1) + k.lambda_tilde;

    j[(4, 2)] = th * ep(xs2);
    j[(4, 3)] = -th * em(xs2);
    j[(4, 7)] = two.eval(xs2, 2);

    j[(5, 2)] = th * ep(xb2);
    j[(5, 3)] = -th * em(xb2);
    j[(5, 5)] = two.eval(xb2, 2);

    j[(6, 2)] = ep(xb1) - ep(xs1);
    j[(6, 3)] = em(xb1) - em(xs1);
    j[(6, 4)] = two.eval(xb1, 1) + k.lambda_tilde;
    j[(6, 6)] = -two.eval(xs1, 1) - k.lambda_tilde;

    j[(7, 2)] = ep(xb2) - ep(xs2);
    j[(7, 3)] = em(xb2) - em(xs2);
    j[(7, 5)] = two.eval(xb2, 1) + k.lambda;
    j[(7, 7)] = -two.eval(xs2, 1) - k.lambda;
    j
}

/// Solves `J d = rhs` after equilibrating the columns of `J`.
fn solve_scaled(j: &Mat8, rhs: &Vec8) -> Option<Vec8> {
    let mut scaled = *j;
    let mut col_scale = [1.0; 8];
    for (c, s) in col_scale.iter_mut().enumerate() {
        let norm = scaled.column(c).amax();
        if norm > 0.0 && norm.is_finite() {
            *s = 1.0 / norm;
            scaled.column_mut(c).scale_mut(*s);
        }
    }
    let d = scaled.lu().solve(rhs)?;
    let out = Vec8::from_fn(|i, _| d[i] * col_scale[i]);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Target for `‖residual‖∞`.
    pub tol: f64,
    pub max_starts: usize,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_starts: 64,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitialGuess {
    #[default]
    Auto,
    Given(EquilibriumParams),
}

/// Threshold coordinates that keep `x̄1 < x*_i < x̄2` for every value of the
/// unknowns: `x̄1 = m − e^{g1}`, `x̄2 = m + e^{g2}`,
/// `x*_i = x̄1 + (x̄2 − x̄1)·sigmoid(t_i)`. The centre `m` is re-anchored at
/// the midpoint before every step.
#[derive(Debug, Clone, Copy)]
struct OrderedCoords {
    m: f64,
    g1: f64,
    g2: f64,
    t1: f64,
    t2: f64,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl OrderedCoords {
    fn from_params(p: &EquilibriumParams) -> Self {
        let m = 0.5 * (p.xbar1 + p.xbar2);
        let w = p.xbar2 - p.xbar1;
        let logit = |x: f64| {
            let s = ((x - p.xbar1) / w).clamp(1e-15, 1.0 - 1e-15);
            (s / (1.0 - s)).ln()
        };
        Self {
            m,
            g1: (m - p.xbar1).ln(),
            g2: (p.xbar2 - m).ln(),
            t1: logit(p.xstar1),
            t2: logit(p.xstar2),
        }
    }

    fn points(&self) -> [f64; 4] {
        let xb1 = self.m - self.g1.exp();
        let xb2 = self.m + self.g2.exp();
        let w = xb2 - xb1;
        [xb1, xb2, xb1 + w * sigmoid(self.t1), xb1 + w * sigmoid(self.t2)]
    }

    /// d(xb1, xb2, xs1, xs2)/d(g1, g2, t1, t2).
    fn point_jacobian(&self) -> [[f64; 4]; 4] {
        let (e1, e2) = (self.g1.exp(), self.g2.exp());
        let w = e1 + e2;
        let (s1, s2) = (sigmoid(self.t1), sigmoid(self.t2));
        [
            [-e1, 0.0, 0.0, 0.0],
            [0.0, e2, 0.0, 0.0],
            [-e1 * (1.0 - s1), e2 * s1, w * s1 * (1.0 - s1), 0.0],
            [-e1 * (1.0 - s2), e2 * s2, 0.0, w * s2 * (1.0 - s2)],
        ]
    }
}

fn with_points(p: &EquilibriumParams, pts: [f64; 4]) -> EquilibriumParams {
    EquilibriumParams {
        xbar1: pts[0],
        xbar2: pts[1],
        xstar1: pts[2],
        xstar2: pts[3],
        ..*p
    }
}

fn merit(r: &[f64; 8]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Damped Newton from one start. Returns the final iterate and its residual.
fn newton_from(spec: &GameSpec, start: &EquilibriumParams, opts: &SolveOptions) -> Option<(EquilibriumParams, f64)> {
    let mut p = *start;
    p.check_order().ok()?;
    let mut r = residual_vector(spec, &p);
    let mut f = merit(&r);
    if !f.is_finite() {
        return None;
    }
    for _ in 0..opts.max_iterations {
        let res = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if res <= opts.tol {
            break;
        }
        let coords = OrderedCoords::from_params(&p);
        let jp = jacobian(spec, &p);
        let dpts = coords.point_jacobian();
        // Chain rule: columns 4..8 become d r / d(g1, g2, t1, t2).
        let mut jz = jp;
        for row in 0..8 {
            for (zc, _) in dpts.iter().enumerate() {
                jz[(row, 4 + zc)] = (0..4).map(|pc| jp[(row, 4 + pc)] * dpts[pc][zc]).sum();
            }
        }
        let rhs = -Vec8::from_column_slice(&r);
        let step = solve_scaled(&jz, &rhs)?;

        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let z = OrderedCoords {
                m: coords.m,
                g1: coords.g1 + damping * step[4],
                g2: coords.g2 + damping * step[5],
                t1: coords.t1 + damping * step[6],
                t2: coords.t2 + damping * step[7],
            };
            let mut trial = with_points(&p, z.points());
            trial.a11 += damping * step[0];
            trial.a12 += damping * step[1];
            trial.a21 += damping * step[2];
            trial.a22 += damping * step[3];
            if trial.check_order().is_ok() {
                let tr = residual_vector(spec, &trial);
                let tf = merit(&tr);
                if tf.is_finite() && tf < (1.0 - 1e-4 * damping) * f {
                    accepted = Some((trial, tr, tf));
                    break;
                }
            }
            damping *= 0.5;
        }
        let (np, nr, nf) = accepted?;
        p = np;
        r = nr;
        f = nf;
    }
    // Final undamped steps in the physical variables squeeze out the last
    // digits the ordered coordinates lose near saturation.
    for _ in 0..3 {
        let rhs = -Vec8::from_column_slice(&r);
        let Some(step) = solve_scaled(&jacobian(spec, &p), &rhs) else {
            break;
        };
        let trial = EquilibriumParams::from_array(std::array::from_fn(|i| p.to_array()[i] + step[i]));
        if trial.check_order().is_err() {
            break;
        }
        let tr = residual_vector(spec, &trial);
        if merit(&tr) < f {
            p = trial;
            r = tr;
            f = merit(&tr);
        } else {
            break;
        }
    }
    let res = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Some((p, res))
}

/// `φ1''(x*1) ≤ 0` and `φ2''(x*2) ≤ 0`: the targets are maxima, not minima.
pub fn second_order_ok(spec: &GameSpec, p: &EquilibriumParams) -> bool {
    let Phis { one, two } = Phis::new(spec, p);
    one.eval(p.xstar1, 2) <= 0.0 && two.eval(p.xstar2, 2) <= 0.0
}

/// Fills in the four exponential coefficients from the first-order
/// conditions `φ1'(x*1) = φ1'(x̄1) = λ`, `φ2'(x*2) = φ2'(x̄2) = −λ`, which are
/// linear in the coefficients once the four levels are fixed.
pub fn coefficients_for_points(spec: &GameSpec, xbar1: f64, xbar2: f64, xstar1: f64, xstar2: f64) -> EquilibriumParams {
    let th = spec.theta();
    let lambda = spec.costs().lambda;
    let solve2 = |player: Player, xa: f64, xb: f64, slope: f64| {
        let p = &spec.basis(player).particular;
        // θ e^{θx} A − θ e^{−θx} B = slope − p'(x)
        let (a1, b1, r1) = (th * (th * xa).exp(), -th * (-th * xa).exp(), slope - p.eval_deriv(xa, 1));
        let (a2, b2, r2) = (th * (th * xb).exp(), -th * (-th * xb).exp(), slope - p.eval_deriv(xb, 1));
        let det = a1 * b2 - a2 * b1;
        ((r1 * b2 - r2 * b1) / det, (a1 * r2 - a2 * r1) / det)
    };
    let (a11, a12) = solve2(Player::One, xstar1, xbar1, lambda);
    let (a21, a22) = solve2(Player::Two, xstar2, xbar2, -lambda);
    EquilibriumParams {
        a11,
        a12,
        a21,
        a22,
        xbar1,
        xbar2,
        xstar1,
        xstar2,
    }
}

/// Point where both running payoffs coincide, or 0 when none is found.
fn balance_point(spec: &GameSpec) -> f64 {
    let h = |x: f64| spec.payoff(Player::One).eval(x) - spec.payoff(Player::Two).eval(x);
    let mut radius = 1.0;
    for _ in 0..40 {
        let (a, b) = (-radius, radius);
        if h(a) * h(b) <= 0.0 {
            let (mut lo, mut hi) = if h(a) <= 0.0 { (a, b) } else { (b, a) };
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if h(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        radius *= 2.0;
    }
    0.0
}

/// Linear symmetric game whose slopes and payoff levels match the real game
/// at the balance point. Its closed form seeds the first Newton start.
fn surrogate_start(spec: &GameSpec) -> Option<(EquilibriumParams, f64, f64)> {
    let (f1, f2) = (spec.payoff(Player::One), spec.payoff(Player::Two));
    let x0 = balance_point(spec);
    let k1 = f1.eval_deriv(x0, 1).abs().max(1e-6);
    let k2 = f2.eval_deriv(x0, 1).abs().max(1e-6);
    let k = (k1 * k2).sqrt();
    let mut half = 0.5 * (f1.eval(x0) + f2.eval(x0)) / k;
    if !(half > 0.0) {
        half = 1.0;
    }
    let costs = spec.costs();
    let rho = spec.rho();
    let lambda = (costs.lambda / k).min(0.5 / rho);
    let lambda_tilde = (costs.lambda_tilde / k).min(lambda);
    let c_tilde = costs.c_tilde.min(costs.c) / k;
    let mut c = costs.c / k;
    if c == c_tilde && lambda == lambda_tilde {
        c = c_tilde + 1.0;
    }
    let surrogate = GameSpec::linear(
        spec.sigma(),
        rho,
        x0 - half,
        x0 + half,
        Costs {
            c,
            c_tilde,
            lambda,
            lambda_tilde,
        },
    )
    .ok()?;
    let (sp, _) = closed_form_equilibrium(&surrogate).ok()?;
    let guess = coefficients_for_points(spec, sp.xbar1, sp.xbar2, sp.xstar1, sp.xstar2);
    guess.is_finite().then_some((guess, x0, 0.5 * (sp.xbar2 - sp.xbar1)))
}

/// Radical-inverse (van der Corput) in `base`.
fn radical_inverse(mut n: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while n > 0 {
        out += (n % base) as f64 * inv;
        n /= base;
        inv /= base as f64;
    }
    out
}

fn halton_start(spec: &GameSpec, index: usize, centre: f64, half_width: f64) -> EquilibriumParams {
    let u: [f64; 5] = std::array::from_fn(|d| radical_inverse(index + 1, [2, 3, 5, 7, 11][d]));
    let hw = half_width.max(1e-3);
    let m = centre + hw * (2.0 * u[0] - 1.0);
    let g_lo = (hw / 8.0).ln();
    let g_hi = (hw * 3.0).ln();
    let coords = OrderedCoords {
        m,
        g1: g_lo + (g_hi - g_lo) * u[1],
        g2: g_lo + (g_hi - g_lo) * u[2],
        t1: 6.0 * u[3] - 3.0,
        t2: 6.0 * u[4] - 3.0,
    };
    let [xb1, xb2, xs1, xs2] = coords.points();
    coefficients_for_points(spec, xb1, xb2, xs1, xs2)
}

/// Finds an ordered root of the pasting system whose targets are maxima.
pub fn solve_system(spec: &GameSpec, guess: InitialGuess, opts: &SolveOptions) -> Result<EquilibriumParams, SolveError> {
    let surrogate = surrogate_start(spec);
    let (centre, half_width) = surrogate
        .map(|(_, c, w)| (c, w))
        .unwrap_or_else(|| (balance_point(spec), 1.0));

    let mut starts: Vec<EquilibriumParams> = Vec::new();
    if let InitialGuess::Given(p) = guess {
        starts.push(p);
    }
    if let Some((p, _, _)) = surrogate {
        starts.push(p);
    }
    let mut best = f64::INFINITY;
    let mut tried = 0;
    let mut halton_index = 0;
    while tried < opts.max_starts {
        let start = if tried < starts.len() {
            starts[tried]
        } else {
            halton_index += 1;
            halton_start(spec, halton_index, centre, half_width)
        };
        tried += 1;
        let Some((p, res)) = newton_from(spec, &start, opts) else {
            continue;
        };
        best = best.min(res);
        if res <= opts.tol && p.check_order().is_ok() && second_order_ok(spec, &p) {
            return Ok(p);
        }
    }
    Err(SolveError::NoAdmissibleRoot {
        starts: tried,
        best_residual: best,
    })
}

/// Solves along an increasing or decreasing list of fixed costs, seeding each
/// solve with the previous root.
pub fn continuation_in_cost(
    spec: &GameSpec,
    costs: &[f64],
    validation: ValidationOptions,
    opts: &SolveOptions,
) -> Vec<Result<EquilibriumParams, SolveError>> {
    let mut prev: Option<EquilibriumParams> = None;
    costs
        .iter()
        .map(|&c| {
            let s = spec.with_fixed_cost(c, validation)?;
            let guess = prev.map_or(InitialGuess::Auto, InitialGuess::Given);
            let out = solve_system(&s, guess, opts);
            if let Ok(p) = out {
                prev = Some(p);
            }
            out
        })
        .collect()
}

/// Search window for the supremum in the intervention operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionSearch {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
}

impl InterventionSearch {
    /// `[x̄1 − W, x̄2 + W]` with `W = width_factor·(x̄2 − x̄1)`.
    pub fn around(p: &EquilibriumParams, width_factor: f64) -> Self {
        let w = width_factor * (p.xbar2 - p.xbar1);
        Self {
            lo: p.xbar1 - w,
            hi: p.xbar2 + w,
            grid_points: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    /// `M_i V_i(x)`.
    pub value: f64,
    /// Optimal impulse; ties resolved toward the smallest `|δ|`.
    pub delta: f64,
}

fn golden_max(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut g1, mut g2) = (g(x1), g(x2));
    for _ in 0..80 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if g1 >= g2 {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - r * (b - a);
            g1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + r * (b - a);
            g2 = g(x2);
        }
    }
    if g1 >= g2 {
        (x1, g1)
    } else {
        (x2, g2)
    }
}

/// Best one-signed impulse for the owner of `v` at state `x`: player 1 jumps
/// up, player 2 jumps down, each paying `c + λ|δ|`.
pub fn intervention_operator(v: &PiecewiseValue, x: f64, spec: &GameSpec, search: &InterventionSearch) -> Intervention {
    let Costs { c, lambda, .. } = *spec.costs();
    let (a, b) = match v.player() {
        Player::One => (x, x.max(search.hi)),
        Player::Two => (x.min(search.lo), x),
    };
    // objective over landing points y
    let g = |y: f64| v.eval(y) - c - lambda * (y - x).abs();
    let n = search.grid_points.max(3);
    let ys: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            match v.player() {
                Player::One => a + (b - a) * t,
                Player::Two => b - (b - a) * t,
            }
        })
        .collect();
    let vals: Vec<f64> = ys.iter().map(|&y| g(y)).collect();
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * (best.abs() + 1.0);
    // ys is ordered by increasing |δ|, so the first near-maximal point wins ties.
    let idx = vals.iter().position(|&v| v >= best - slack).unwrap_or(0);

    let (mut y_best, mut g_best) = (ys[idx], vals[idx]);
    if b > a {
        let lo_i = idx.saturating_sub(1);
        let hi_i = (idx + 1).min(n - 1);
        let (ya, yb) = (ys[lo_i].min(ys[hi_i]), ys[lo_i].max(ys[hi_i]));
        let (y_ref, g_ref) = golden_max(&g, ya, yb);
        if g_ref > g_best + slack {
            y_best = y_ref;
            g_best = g_ref;
        }
    }
    Intervention {
        value: g_best,
        delta: y_best - x,
    }
}

/// `H_i V_i(x)`: value to the owner of `v` when the opponent intervenes at
/// `x` with its optimal impulse `opponent_delta`.
pub fn opponent_intervention_value(v: &PiecewiseValue, x: f64, opponent_delta: f64, spec: &GameSpec) -> f64 {
    let k = spec.costs();
    v.eval(x + opponent_delta) + k.c_tilde + k.lambda_tilde * opponent_delta.abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub points: usize,
    /// Grid covers `[x̄1 − W, x̄2 + W]`, `W = width_factor·(x̄2 − x̄1)`.
    pub width_factor: f64,
    /// Relative tolerance; multiplied by the payoff scale of each check.
    pub tol: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            points: 4001,
            width_factor: 2.0,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// For value-level checks: `tol · max(1, max |V_i|)`.
    pub value: f64,
    /// For generator checks: `tol · max(1, max |f_i|, ρ max |V_i|)`.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckFlags {
    pub ode: bool,
    pub m_inequality: bool,
    pub m_equality: bool,
    pub contregion: bool,
    pub h_equality: bool,
    pub sign_condition: bool,
    pub pasting: bool,
}

impl CheckFlags {
    pub fn all(&self) -> bool {
        self.ode
            && self.m_inequality
            && self.m_equality
            && self.contregion
            && self.h_equality
            && self.sign_condition
            && self.pasting
    }
}

/// Numeric certificate that a candidate solves the quasi-variational
/// inequalities on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub grid: Vec<f64>,
    /// Max `|(σ²/2)V'' − ρV + f|` inside the continuation interval.
    pub ode_residual_max: f64,
    /// Max of `M_i V_i − V_i` over the grid and both players.
    pub m_inequality_max: f64,
    /// Max `|M_i V_i − V_i|` on each player's own intervention region.
    pub m_equality_max: f64,
    /// Max `|H_i V_i − V_i|` on the opponent's intervention region.
    pub h_equality_max: f64,
    /// Max of `−ρV_i + f_i` on player i's own intervention region.
    pub sign_condition_max: f64,
    /// Max `|V_i − M_i V_i − c|` where no intervention can help
    /// (player 1 above `x*1`, player 2 below `x*2`).
    pub gap_structure_max: f64,
    /// Grid points off the intervention region where `M_i V_i − V_i ≥ 0`.
    pub contregion_violations: usize,
    /// Sign changes of `φ_i''` inside the continuation interval.
    pub curvature_sign_changes: [usize; 2],
    pub pasting: PastingResidual,
    pub tolerances: Tolerances,
    pub checks: CheckFlags,
    pub passed: bool,
}

struct PointChecks {
    ode: f64,
    m_ineq: f64,
    m_eq: f64,
    h_eq: f64,
    sign: f64,
    gap: f64,
    violation: usize,
    abs_v: f64,
    abs_f: f64,
}

/// Runs every grid check on a candidate. Failures are reported, not raised.
pub fn verify_candidate(p: &EquilibriumParams, spec: &GameSpec, grid: &GridOptions) -> Result<VerificationReport, SolveError> {
    let pasting = system_residual(p, spec)?;
    let n = grid.points.max(2);
    let w = grid.width_factor * (p.xbar2 - p.xbar1);
    let (lo, hi) = (p.xbar1 - w, p.xbar2 + w);
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();

    let v1 = PiecewiseValue::new(spec, p, Player::One);
    let v2 = PiecewiseValue::new(spec, p, Player::Two);
    let search = InterventionSearch::around(p, grid.width_factor);
    let (sigma, rho) = (spec.sigma(), spec.rho());
    let (f1, f2) = (spec.payoff(Player::One), spec.payoff(Player::Two));
    let c = spec.costs().c;

    let per_point: Vec<PointChecks> = xs
        .par_iter()
        .map(|&x| {
            let val = [v1.eval(x), v2.eval(x)];
            let f = [f1.eval(x), f2.eval(x)];
            let m1 = intervention_operator(&v1, x, spec, &search);
            let m2 = intervention_operator(&v2, x, spec, &search);
            let gaps = [m1.value - val[0], m2.value - val[1]];

            let inside = p.xbar1 < x && x < p.xbar2;
            let ode = if inside {
                let r1 = 0.5 * sigma * sigma * v1.eval_second(x) - rho * val[0] + f[0];
                let r2 = 0.5 * sigma * sigma * v2.eval_second(x) - rho * val[1] + f[1];
                r1.abs().max(r2.abs())
            } else {
                0.0
            };

            // grid endpoints land on the thresholds only up to rounding
            let own1 = x <= p.xbar1 + ABS_TOL * p.xbar1.abs().max(1.0);
            let own2 = x >= p.xbar2 - ABS_TOL * p.xbar2.abs().max(1.0);
            let mut m_eq: f64 = 0.0;
            let mut h_eq: f64 = 0.0;
            let mut sign = f64::NEG_INFINITY;
            let mut violation = 0;
            if own1 {
                m_eq = m_eq.max(gaps[0].abs());
                sign = sign.max(-rho * val[0] + f[0]);
                h_eq = h_eq.max((opponent_intervention_value(&v2, x, m1.delta, spec) - val[1]).abs());
            } else if gaps[0] >= 0.0 {
                violation += 1;
            }
            if own2 {
                m_eq = m_eq.max(gaps[1].abs());
                sign = sign.max(-rho * val[1] + f[1]);
                h_eq = h_eq.max((opponent_intervention_value(&v1, x, m2.delta, spec) - val[0]).abs());
            } else if gaps[1] >= 0.0 {
                violation += 1;
            }
            let mut gap: f64 = 0.0;
            if x > p.xstar1 {
                gap = gap.max((-gaps[0] - c).abs());
            }
            if x < p.xstar2 {
                gap = gap.max((-gaps[1] - c).abs());
            }
            PointChecks {
                ode,
                m_ineq: gaps[0].max(gaps[1]),
                m_eq,
                h_eq,
                sign,
                gap,
                violation,
                abs_v: val[0].abs().max(val[1].abs()),
                abs_f: f[0].abs().max(f[1].abs()),
            }
        })
        .collect();

    let fold = |g: fn(&PointChecks) -> f64, init: f64| per_point.iter().map(g).fold(init, f64::max);
    let ode_residual_max = fold(|q| q.ode, 0.0);
    let m_inequality_max = fold(|q| q.m_ineq, f64::NEG_INFINITY);
    let m_equality_max = fold(|q| q.m_eq, 0.0);
    let h_equality_max = fold(|q| q.h_eq, 0.0);
    let sign_condition_max = fold(|q| q.sign, f64::NEG_INFINITY);
    let gap_structure_max = fold(|q| q.gap, 0.0);
    let contregion_violations = per_point.iter().map(|q| q.violation).sum();
    let max_v = fold(|q| q.abs_v, 0.0);
    let max_f = fold(|q| q.abs_f, 0.0);

    let tolerances = Tolerances {
        value: grid.tol * max_v.max(1.0),
        rate: grid.tol * max_f.max(rho * max_v).max(1.0),
    };
    let checks = CheckFlags {
        ode: ode_residual_max <= tolerances.rate,
        m_inequality: m_inequality_max <= tolerances.value,
        m_equality: m_equality_max <= tolerances.value,
        contregion: contregion_violations == 0 && gap_structure_max <= tolerances.value,
        h_equality: h_equality_max <= tolerances.value,
        sign_condition: sign_condition_max <= tolerances.rate,
        pasting: pasting.norm_inf() <= tolerances.value,
    };
    let curvature_sign_changes = [
        curvature_sign_changes(spec, p, Player::One, n).len(),
        curvature_sign_changes(spec, p, Player::Two, n).len(),
    ];
    Ok(VerificationReport {
        grid: xs,
        ode_residual_max,
        m_inequality_max,
        m_equality_max,
        h_equality_max,
        sign_condition_max,
        gap_structure_max,
        contregion_violations,
        curvature_sign_changes,
        pasting,
        tolerances,
        passed: checks.all(),
        checks,
    })
}

/// Approximate locations where `φ_i''` changes sign in `]x̄1, x̄2[`, from a
/// scan with `points` samples refined by bisection.
pub fn curvature_sign_changes(spec: &GameSpec, p: &EquilibriumParams, player: Player, points: usize) -> Vec<f64> {
    let (a, b) = p.coefficients(player);
    let phi = spec.basis(player).with_coefficients(a, b);
    let d2 = |x: f64| phi.eval(x, 2);
    let n = points.max(3);
    let xs: Vec<f64> = (1..n).map(|i| p.xbar1 + (p.xbar2 - p.xbar1) * i as f64 / n as f64).collect();
    let mut out = Vec::new();
    for w in xs.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        if d2(lo).signum() == d2(hi).signum() || d2(lo) == 0.0 {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if d2(mid).signum() == d2(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_spec, RawGameSpec};

    fn problem1(c: f64) -> GameSpec {
        GameSpec::linear(
            0.15,
            0.02,
            -3.0,
            3.0,
            Costs {
                c,
                c_tilde: 0.0,
                lambda: 15.0,
                lambda_tilde: 15.0,
            },
        )
        .unwrap()
    }

    fn cubic() -> GameSpec {
        let raw = RawGameSpec {
            sigma: 0.2,
            rho: 0.1,
            costs: Costs {
                c: 60.0,
                c_tilde: 20.0,
                lambda: 5.0,
                lambda_tilde: 5.0,
            },
            // 1.2 (x + 3)^3 and (3 − x)^3
            f1: vec![32.4, 32.4, 10.8, 1.2],
            f2: vec![27.0, -27.0, 9.0, -1.0],
        };
        validate_spec(raw, Default::default()).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = cubic();
        let p = EquilibriumParams::from_array([-104.9, 12.9, 24.6, -56.0, -0.73, 0.46, 0.18, -0.45]);
        let j = jacobian(&spec, &p);
        let base = p.to_array();
        for col in 0..8 {
            let h = 1e-6 * base[col].abs().max(1.0);
            let mut up = base;
            let mut dn = base;
            up[col] += h;
            dn[col] -= h;
            let ru = residual_vector(&spec, &EquilibriumParams::from_array(up));
            let rd = residual_vector(&spec, &EquilibriumParams::from_array(dn));
            for row in 0..8 {
                let fd = (ru[row] - rd[row]) / (2.0 * h);
                assert!(
                    (fd - j[(row, col)]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "({row},{col}): fd {fd} vs {}",
                    j[(row, col)]
                );
            }
        }
    }

    #[test]
    fn closed_form_has_tiny_residual() {
        let (p, _) = closed_form_equilibrium(&problem1(100.0)).unwrap();
        assert!(system_residual(&p, &problem1(100.0)).unwrap().norm_inf() < 1e-7);
    }

    #[test]
    fn collapsed_target_is_an_order_error() {
        let (mut p, _) = closed_form_equilibrium(&problem1(100.0)).unwrap();
        p.xstar1 = p.xbar1;
        assert!(matches!(
            system_residual(&p, &problem1(100.0)),
            Err(SolveError::OrderCondition { .. })
        ));
    }

    #[test]
    fn coefficients_for_points_satisfy_first_order_conditions() {
        let spec = cubic();
        let p = coefficients_for_points(&spec, -0.7, 0.5, 0.2, -0.4);
        let r = residual_vector(&spec, &p);
        for i in [0, 1, 4, 5] {
            assert!(r[i].abs() < 1e-9, "{i}: {}", r[i]);
        }
    }

    #[test]
    fn newton_root_is_a_fixed_point() {
        let spec = cubic();
        let p = solve_system(&spec, InitialGuess::Auto, &SolveOptions::default()).unwrap();
        let again = solve_system(&spec, InitialGuess::Given(p), &SolveOptions::default()).unwrap();
        assert!(again.max_rel_diff(&p) < 1e-8);
    }

    #[test]
    fn intervention_of_constant_value() {
        // λ = 0, V ≡ K on the search range: sup is K − c with δ = 0.
        let spec = validate_spec(
            RawGameSpec {
                sigma: 0.2,
                rho: 0.1,
                costs: Costs {
                    c: 7.0,
                    c_tilde: 1.0,
                    lambda: 0.0,
                    lambda_tilde: 0.0,
                },
                f1: vec![4.0],
                f2: vec![4.0],
            },
            Default::default(),
        )
        .unwrap();
        let p = EquilibriumParams::from_array([0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.5, -0.5]);
        let v = PiecewiseValue::new(&spec, &p, Player::Two);
        let k = v.eval(0.0);
        assert!((k - 40.0).abs() < 1e-12);
        // the tails are not flat, so keep the search inside the middle piece
        let search = InterventionSearch {
            lo: -0.99,
            hi: 0.99,
            grid_points: 400,
        };
        for &x in &[-0.7, 0.0, 0.3] {
            let m = intervention_operator(&v, x, &spec, &search);
            assert!((m.value - (k - 7.0)).abs() < 1e-12);
            assert_eq!(m.delta, 0.0);
        }
    }

    #[test]
    fn equilibrium_impulses_follow_threshold_rule() {
        let spec = problem1(100.0);
        let (p, _) = closed_form_equilibrium(&spec).unwrap();
        let v2 = PiecewiseValue::new(&spec, &p, Player::Two);
        let v1 = PiecewiseValue::new(&spec, &p, Player::One);
        let search = InterventionSearch::around(&p, 2.0);
        for &x in &[p.xstar2 + 0.01, 0.0, p.xbar2, p.xbar2 + 3.0] {
            let m = intervention_operator(&v2, x, &spec, &search);
            assert!((m.delta - (p.xstar2 - x)).abs() < 1e-6, "x = {x}: {}", m.delta);
        }
        for &x in &[p.xstar2 - 0.01, p.xbar1, p.xbar1 - 2.0] {
            assert_eq!(intervention_operator(&v2, x, &spec, &search).delta, 0.0);
        }
        for &x in &[p.xbar1 - 1.0, p.xbar1, 0.0, p.xstar1 - 0.01] {
            let m = intervention_operator(&v1, x, &spec, &search);
            assert!((m.delta - (p.xstar1 - x)).abs() < 1e-6);
        }
        // M2V2 − V2 vanishes on [x̄2, ∞[ and is negative below x̄2
        for &x in &[p.xbar2, p.xbar2 + 0.5, p.xbar2 + 4.0] {
            let m = intervention_operator(&v2, x, &spec, &search);
            assert!((m.value - v2.eval(x)).abs() < 1e-9);
        }
        for &x in &[p.xbar1 - 1.0, 0.0, p.xbar2 - 0.05] {
            assert!(intervention_operator(&v2, x, &spec, &search).value < v2.eval(x));
        }
    }

    #[test]
    fn perturbed_threshold_fails_certification() {
        let spec = problem1(100.0);
        let (mut p, _) = closed_form_equilibrium(&spec).unwrap();
        p.xbar2 += 0.2;
        let report = verify_candidate(&p, &spec, &GridOptions::default()).unwrap();
        assert!(!report.passed);
        assert!(!report.checks.pasting);
        // C¹ pasting of V2 at x̄2 is broken by ≈ 0.2·φ2''.
        assert!(report.pasting.r[5].abs() > 1e-3);
    }

    #[test]
    fn halton_is_low_discrepancy() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }
}
