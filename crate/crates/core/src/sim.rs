//! Monte Carlo for the impulse-controlled process `dX = σ dW` under a pair
//! of threshold strategies.
//!
//! Every path owns a ChaCha8 stream selected by its index, so results do not
//! depend on the parallel schedule, and two runs with the same seed see the
//! same Brownian increments (common random numbers).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{Costs, GameSpec, Player, ThresholdStrategy};
use crate::poly::Polynomial;

/// Mixed into the seed of the stream used for bridge-crossing coins, so the
/// normal increments stay aligned whether or not the correction is on.
const BRIDGE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: f64,
    pub dt: f64,
    /// Truncation time `T`.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Intervene when a Brownian bridge between two grid states would have
    /// crossed a threshold, with probability `exp(−2(a−x)(a−y)/(σ²dt))`.
    pub bridge_correction: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.x0.is_finite() {
            return Err(SimError::Config("x0 must be finite".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > self.dt) {
            return Err(SimError::Config(format!(
                "horizon {} must be finite and exceed dt {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(SimError::Config("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationEstimate {
    pub j1_mean: f64,
    pub j2_mean: f64,
    /// `None` when fewer than two paths make the variance undefined.
    pub j1_se: Option<f64>,
    pub j2_se: Option<f64>,
    /// Mean number of interventions per path.
    pub interventions_p1: f64,
    pub interventions_p2: f64,
    /// Bound on the discarded tail beyond the horizon.
    pub truncation_bound: f64,
    /// Largest `|X|` seen on any path, evidence for the moment condition.
    pub max_abs_x: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
}

impl SimulationEstimate {
    pub fn mean(&self, player: Player) -> f64 {
        match player {
            Player::One => self.j1_mean,
            Player::Two => self.j2_mean,
        }
    }

    pub fn se(&self, player: Player) -> Option<f64> {
        match player {
            Player::One => self.j1_se,
            Player::Two => self.j2_se,
        }
    }
}

/// One intervention on a traced path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    /// State just before the jump.
    pub x: f64,
    pub player: Player,
    pub impulse: f64,
    /// State just after the jump.
    pub landing: f64,
    /// `e^{−ρt}(c + λ|δ|)` paid by the acting player.
    pub discounted_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_index: usize,
    pub events: Vec<TraceEvent>,
    pub j: [f64; 2],
    /// Largest single-step Brownian increment in absolute value.
    pub max_increment: f64,
    /// `(min, max)` of pre-jump states from the first intervention on.
    pub range_after_first: Option<(f64, f64)>,
}

enum Observation<'e> {
    /// State at the end of a grid step, before any jump.
    Step(f64),
    Jump(&'e TraceEvent),
}

#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    j: [f64; 2],
    count: [u32; 2],
    max_abs_x: f64,
}

struct Kernel<'a> {
    f: [&'a Polynomial; 2],
    costs: Costs,
    s: [ThresholdStrategy; 2],
    sigma: f64,
    rho: f64,
    x0: f64,
    seed: u64,
    bridge: bool,
    /// Normals are drawn at `fine_dt`; each step sums `coarsen` of them.
    fine_dt: f64,
    coarsen: usize,
    steps: usize,
}

impl<'a> Kernel<'a> {
    fn new(spec: &'a GameSpec, s1: &ThresholdStrategy, s2: &ThresholdStrategy, cfg: &SimConfig) -> Self {
        Self {
            f: [spec.payoff(Player::One), spec.payoff(Player::Two)],
            costs: *spec.costs(),
            s: [*s1, *s2],
            sigma: spec.sigma(),
            rho: spec.rho(),
            x0: cfg.x0,
            seed: cfg.seed,
            bridge: cfg.bridge_correction,
            fine_dt: cfg.dt,
            coarsen: 1,
            steps: cfg.steps(),
        }
    }

    /// Same Brownian paths sampled on a grid `factor` times coarser.
    fn coarsened(mut self, factor: usize) -> Self {
        self.coarsen = factor;
        self.steps /= factor;
        self
    }

    fn dt(&self) -> f64 {
        self.fine_dt * self.coarsen as f64
    }

    /// Acting player at `y`, player 1 first.
    fn trigger(&self, x_prev: f64, y: f64, coin: &mut Option<ChaCha8Rng>) -> Option<usize> {
        if let Some(i) = (0..2).find(|&i| self.s[i].triggers(y)) {
            return Some(i);
        }
        let rng = coin.as_mut()?;
        let var = self.sigma * self.sigma * self.dt();
        for i in 0..2 {
            let a = self.s[i].threshold;
            let p = (-2.0 * (a - x_prev) * (a - y) / var).exp();
            let u: f64 = rng.random();
            if u < p {
                return Some(i);
            }
        }
        None
    }

    fn run<O: FnMut(Observation)>(&self, path: usize, observe: &mut O) -> Result<PathOutcome, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        let mut coin = self.bridge.then(|| {
            let mut r = ChaCha8Rng::seed_from_u64(self.seed ^ BRIDGE_SEED_SALT);
            r.set_stream(path as u64);
            r
        });

        let dt = self.dt();
        let step_scale = self.sigma * self.fine_dt.sqrt();
        let decay = (-self.rho * dt).exp();
        let Costs {
            c,
            c_tilde,
            lambda,
            lambda_tilde,
        } = self.costs;

        let mut x = self.x0;
        let mut disc = 1.0;
        let mut j = [0.0; 2];
        let mut count = [0u32; 2];
        let mut max_abs_x = x.abs();

        let mut act = |i: usize, x: &mut f64, t: f64, disc: f64, j: &mut [f64; 2], observe: &mut O| {
            let delta = self.s[i].target - *x;
            let cost = disc * (c + lambda * delta.abs());
            j[i] -= cost;
            j[1 - i] += disc * (c_tilde + lambda_tilde * delta.abs());
            count[i] += 1;
            let event = TraceEvent {
                t,
                x: *x,
                player: if i == 0 { Player::One } else { Player::Two },
                impulse: delta,
                landing: self.s[i].target,
                discounted_cost: cost,
            };
            *x = self.s[i].target;
            observe(Observation::Jump(&event));
        };

        if let Some(i) = (0..2).find(|&i| self.s[i].triggers(x)) {
            act(i, &mut x, 0.0, disc, &mut j, observe);
        }
        for k in 0..self.steps {
            j[0] += disc * self.f[0].eval(x) * dt;
            j[1] += disc * self.f[1].eval(x) * dt;
            let mut z = 0.0;
            for _ in 0..self.coarsen {
                let n: f64 = rng.sample(StandardNormal);
                z += n;
            }
            let x_prev = x;
            x += step_scale * z;
            disc *= decay;
            max_abs_x = max_abs_x.max(x.abs());
            let t = (k + 1) as f64 * dt;
            observe(Observation::Step(x));
            if let Some(i) = self.trigger(x_prev, x, &mut coin) {
                act(i, &mut x, t, disc, &mut j, observe);
                if !(j[0].is_finite() && j[1].is_finite()) {
                    return Err(SimError::NonFinite { path, time: t, state: x });
                }
            }
            if k % 256 == 255 && !(j[0].is_finite() && j[1].is_finite() && x.is_finite()) {
                return Err(SimError::NonFinite { path, time: t, state: x });
            }
        }
        if !(j[0].is_finite() && j[1].is_finite()) {
            return Err(SimError::NonFinite {
                path,
                time: self.steps as f64 * dt,
                state: x,
            });
        }
        Ok(PathOutcome { j, count, max_abs_x })
    }

    fn run_all(&self, n_paths: usize) -> Result<Vec<PathOutcome>, SimError> {
        let out: Vec<Result<PathOutcome, SimError>> = (0..n_paths)
            .into_par_iter()
            .map(|p| self.run(p, &mut |_| {}))
            .collect();
        out.into_iter().collect()
    }
}

fn check_strategies(s1: &ThresholdStrategy, s2: &ThresholdStrategy) -> Result<(), SimError> {
    ThresholdStrategy::check_pair(s1, s2).map_err(SimError::Strategy)
}

/// Mean and standard error, summed in index order.
fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, Option<f64>) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

/// `C_f`: the largest `|f_i|` on `[thr1 − W, thr2 + W]`, `W = 2(thr2 − thr1)`,
/// plus `ρK` for the cost `K` of one intervention across that span.
pub fn payoff_rate_bound(spec: &GameSpec, s1: &ThresholdStrategy, s2: &ThresholdStrategy) -> f64 {
    let width = s2.threshold - s1.threshold;
    let (lo, hi) = (s1.threshold - 2.0 * width, s2.threshold + 2.0 * width);
    let n = 4001;
    let f_max = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .map(|x| {
            spec.payoff(Player::One)
                .eval(x)
                .abs()
                .max(spec.payoff(Player::Two).eval(x).abs())
        })
        .fold(0.0, f64::max);
    let k = spec.costs();
    let span = hi - lo;
    let per_intervention = k.c.max(k.c_tilde) + k.lambda.max(k.lambda_tilde) * span;
    f_max + spec.rho() * per_intervention
}

/// Horizon `T = ln(C_f/(ρε))/ρ`, so that `e^{−ρT}·C_f/ρ = ε`.
pub fn horizon_for(spec: &GameSpec, s1: &ThresholdStrategy, s2: &ThresholdStrategy, eps: f64) -> f64 {
    let rho = spec.rho();
    (payoff_rate_bound(spec, s1, s2) / (rho * eps)).ln().max(0.0) / rho
}

fn estimate(
    spec: &GameSpec,
    s1: &ThresholdStrategy,
    s2: &ThresholdStrategy,
    dt: f64,
    horizon: f64,
    outcomes: &[PathOutcome],
) -> SimulationEstimate {
    let (j1_mean, j1_se) = mean_se(outcomes.iter().map(|o| o.j[0]));
    let (j2_mean, j2_se) = mean_se(outcomes.iter().map(|o| o.j[1]));
    let n = outcomes.len() as f64;
    SimulationEstimate {
        j1_mean,
        j2_mean,
        j1_se,
        j2_se,
        interventions_p1: outcomes.iter().map(|o| o.count[0] as f64).sum::<f64>() / n,
        interventions_p2: outcomes.iter().map(|o| o.count[1] as f64).sum::<f64>() / n,
        truncation_bound: (-spec.rho() * horizon).exp() * payoff_rate_bound(spec, s1, s2) / spec.rho(),
        max_abs_x: outcomes.iter().map(|o| o.max_abs_x).fold(0.0, f64::max),
        n_paths: outcomes.len(),
        dt,
        horizon,
    }
}

/// Estimates `J^1(x0)`, `J^2(x0)` by end-of-step barrier monitoring and a
/// left-endpoint discounted running integral.
pub fn simulate_paths(
    spec: &GameSpec,
    s1: &ThresholdStrategy,
    s2: &ThresholdStrategy,
    cfg: &SimConfig,
) -> Result<SimulationEstimate, SimError> {
    cfg.validate()?;
    check_strategies(s1, s2)?;
    let kernel = Kernel::new(spec, s1, s2, cfg);
    let outcomes = kernel.run_all(cfg.n_paths)?;
    Ok(estimate(spec, s1, s2, kernel.dt(), kernel.steps as f64 * kernel.dt(), &outcomes))
}

/// Change in one player's payoff when that player deviates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationGap {
    pub deviation: ThresholdStrategy,
    /// Mean of `J^i(deviation) − J^i(equilibrium)` over paired paths.
    pub gap: f64,
    pub se: Option<f64>,
}

/// Runs the equilibrium and each unilateral deviation on the same Brownian
/// paths and reports the paired payoff change of the deviating player.
pub fn nash_deviation_test(
    spec: &GameSpec,
    equilibrium: (&ThresholdStrategy, &ThresholdStrategy),
    deviations: &[ThresholdStrategy],
    cfg: &SimConfig,
) -> Result<Vec<DeviationGap>, SimError> {
    cfg.validate()?;
    let (s1, s2) = equilibrium;
    check_strategies(s1, s2)?;
    let Some(first) = deviations.first() else {
        return Ok(Vec::new());
    };
    if deviations.iter().any(|d| d.player != first.player) {
        return Err(SimError::Strategy("deviations must all belong to one player".into()));
    }
    let pairs: Vec<(ThresholdStrategy, ThresholdStrategy)> = deviations
        .iter()
        .map(|d| match d.player {
            Player::One => (*d, *s2),
            Player::Two => (*s1, *d),
        })
        .collect();
    for (a, b) in &pairs {
        check_strategies(a, b)?;
    }
    let base = Kernel::new(spec, s1, s2, cfg).run_all(cfg.n_paths)?;
    let i = first.player.index();
    pairs
        .iter()
        .zip(deviations)
        .map(|((a, b), d)| {
            let dev = Kernel::new(spec, a, b, cfg).run_all(cfg.n_paths)?;
            let (gap, se) = mean_se(dev.iter().zip(&base).map(|(x, y)| x.j[i] - y.j[i]));
            Ok(DeviationGap {
                deviation: *d,
                gap,
                se,
            })
        })
        .collect()
}

/// Discretization bias allowance `κ·√dt` per player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCalibration {
    pub dt: f64,
    /// Paired mean of `ĵ_i(dt) − ĵ_i(dt/2)`.
    pub difference: [f64; 2],
    pub difference_se: [Option<f64>; 2],
    pub kappa: [f64; 2],
}

impl BiasCalibration {
    pub fn allowance(&self, player: Player, dt: f64) -> f64 {
        self.kappa[player.index()] * dt.sqrt()
    }
}

/// Richardson comparison of `cfg.dt` against `cfg.dt / 2` on the same
/// Brownian paths. If the bias is `κ√dt`, the paired difference is
/// `κ(1 − 1/√2)√dt`; κ is read off with a 3·se margin.
pub fn calibrate_bias(
    spec: &GameSpec,
    s1: &ThresholdStrategy,
    s2: &ThresholdStrategy,
    cfg: &SimConfig,
) -> Result<BiasCalibration, SimError> {
    cfg.validate()?;
    check_strategies(s1, s2)?;
    let fine_cfg = SimConfig {
        dt: 0.5 * cfg.dt,
        ..*cfg
    };
    let fine = Kernel::new(spec, s1, s2, &fine_cfg);
    let fine_out = fine.run_all(cfg.n_paths)?;
    let coarse_out = Kernel::new(spec, s1, s2, &fine_cfg).coarsened(2).run_all(cfg.n_paths)?;
    let denom = (1.0 - std::f64::consts::FRAC_1_SQRT_2) * cfg.dt.sqrt();
    let mut difference = [0.0; 2];
    let mut difference_se = [None; 2];
    let mut kappa = [0.0; 2];
    for i in 0..2 {
        let (d, se) = mean_se(coarse_out.iter().zip(&fine_out).map(|(a, b)| a.j[i] - b.j[i]));
        difference[i] = d;
        difference_se[i] = se;
        kappa[i] = (d.abs() + 3.0 * se.unwrap_or(0.0)) / denom;
    }
    Ok(BiasCalibration {
        dt: cfg.dt,
        difference,
        difference_se,
        kappa,
    })
}

/// Replays one path of a run and records its interventions.
pub fn trace_path(
    spec: &GameSpec,
    s1: &ThresholdStrategy,
    s2: &ThresholdStrategy,
    cfg: &SimConfig,
    path_index: usize,
) -> Result<PathRecord, SimError> {
    cfg.validate()?;
    check_strategies(s1, s2)?;
    let kernel = Kernel::new(spec, s1, s2, cfg);
    let mut events = Vec::new();
    let mut max_increment: f64 = 0.0;
    let mut range: Option<(f64, f64)> = None;
    let mut last = cfg.x0;
    let out = kernel.run(path_index, &mut |obs| match obs {
        Observation::Step(x) => {
            max_increment = max_increment.max((x - last).abs());
            if let Some((lo, hi)) = range.as_mut() {
                *lo = lo.min(x);
                *hi = hi.max(x);
            }
            last = x;
        }
        Observation::Jump(e) => {
            let (lo, hi) = range.unwrap_or((e.x, e.x));
            range = Some((lo.min(e.x), hi.max(e.x)));
            events.push(*e);
            last = e.landing;
        }
    })?;
    Ok(PathRecord {
        path_index,
        events,
        j: out.j,
        max_increment,
        range_after_first: range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    pub interventions: usize,
    /// Every jump lands bit-exactly on the acting player's target.
    pub exact_landings: bool,
    /// Player 1 jumps up, player 2 jumps down.
    pub impulse_signs_ok: bool,
    /// Largest excursion beyond the thresholds after the first intervention.
    pub overshoot: f64,
    pub max_increment: f64,
    /// `overshoot ≤ max_increment`.
    pub stays_in_band: bool,
}

pub fn path_diagnostics(rec: &PathRecord, s1: &ThresholdStrategy, s2: &ThresholdStrategy) -> PathDiagnostics {
    let target = |p: Player| match p {
        Player::One => s1.target,
        Player::Two => s2.target,
    };
    let exact_landings = rec.events.iter().all(|e| e.landing == target(e.player));
    let impulse_signs_ok = rec.events.iter().all(|e| match e.player {
        Player::One => e.impulse > 0.0,
        Player::Two => e.impulse < 0.0,
    });
    let overshoot = rec
        .range_after_first
        .map_or(0.0, |(lo, hi)| (s1.threshold - lo).max(hi - s2.threshold).max(0.0));
    PathDiagnostics {
        interventions: rec.events.len(),
        exact_landings,
        impulse_signs_ok,
        overshoot,
        max_increment: rec.max_increment,
        stays_in_band: overshoot <= rec.max_increment,
    }
}

/// Audit trace with columns `t,x,player,impulse,discounted_cost`.
pub fn write_trace_csv<W: Write>(rec: &PathRecord, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "player", "impulse", "discounted_cost"])?;
    for e in &rec.events {
        w.write_record([
            e.t.to_string(),
            e.x.to_string(),
            u8::from(e.player).to_string(),
            e.impulse.to_string(),
            e.discounted_cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
