//! Equilibria along a grid of fixed costs, emitted as CSV.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::SolveError;
use crate::model::{EquilibriumParams, GameSpec, PiecewiseValue, Player, ValidationOptions};
use crate::qvi::{continuation_in_cost, SolveOptions};
use crate::symmetric::closed_form_equilibrium;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("unsupported sweep parameter {0:?} (only \"c\" is supported)")]
    Parameter(String),
    #[error("invalid sweep range: {0}")]
    Range(String),
    #[error("solve failed at c = {c}: {source}")]
    Solve { c: f64, source: SolveError },
    #[error("csv output failed: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    /// Closed form when the game is symmetric-linear, Newton otherwise.
    #[default]
    Auto,
    Closed,
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRequest {
    pub spec: GameSpec,
    pub parameter: String,
    /// Strictly increasing values of `c`, all above `c̃`.
    pub grid: Vec<f64>,
    pub include_coefficients: bool,
    /// Evaluate `V1`, `V2` at these states for every grid point.
    pub value_points: Vec<f64>,
    pub method: SweepMethod,
    pub validation: ValidationOptions,
}

impl SweepRequest {
    pub fn new(spec: GameSpec, grid: Vec<f64>) -> Self {
        Self {
            spec,
            parameter: "c".into(),
            grid,
            include_coefficients: false,
            value_points: Vec::new(),
            method: SweepMethod::Auto,
            validation: ValidationOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.parameter != "c" {
            return Err(SweepError::Parameter(self.parameter.clone()));
        }
        if self.grid.is_empty() {
            return Err(SweepError::Range("empty grid".into()));
        }
        if self.grid.iter().any(|c| !c.is_finite()) {
            return Err(SweepError::Range("grid values must be finite".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SweepError::Range("grid must be strictly increasing".into()));
        }
        let c_tilde = self.spec.costs().c_tilde;
        if !self.validation.allow_cost_inversion && self.grid[0] <= c_tilde {
            return Err(SweepError::Range(format!(
                "grid starts at {} but must lie above c_tilde = {c_tilde}",
                self.grid[0]
            )));
        }
        Ok(())
    }
}

/// `points` evenly spaced values from `from` to `to`, both included.
pub fn linspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![from],
        n => (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: f64,
    pub params: EquilibriumParams,
    /// `[V1(x), V2(x)]` for each requested state.
    pub values: Vec<[f64; 2]>,
}

pub fn run_sweep(req: &SweepRequest) -> Result<Vec<SweepRow>, SweepError> {
    req.validate()?;
    let closed = match req.method {
        SweepMethod::Closed => true,
        SweepMethod::Numeric => false,
        SweepMethod::Auto => req.spec.symmetric_linear().is_some(),
    };
    let solved: Vec<Result<EquilibriumParams, SolveError>> = if closed {
        req.grid
            .par_iter()
            .map(|&c| {
                let s = req.spec.with_fixed_cost(c, req.validation)?;
                closed_form_equilibrium(&s).map(|(p, _)| p)
            })
            .collect()
    } else {
        continuation_in_cost(&req.spec, &req.grid, req.validation, &SolveOptions::default())
    };
    req.grid
        .iter()
        .zip(solved)
        .map(|(&c, p)| {
            let params = p.map_err(|source| SweepError::Solve { c, source })?;
            let values = if req.value_points.is_empty() {
                Vec::new()
            } else {
                let s = req
                    .spec
                    .with_fixed_cost(c, req.validation)
                    .map_err(|e| SweepError::Solve { c, source: e.into() })?;
                let v1 = PiecewiseValue::new(&s, &params, Player::One);
                let v2 = PiecewiseValue::new(&s, &params, Player::Two);
                req.value_points.iter().map(|&x| [v1.eval(x), v2.eval(x)]).collect()
            };
            Ok(SweepRow { c, params, values })
        })
        .collect()
}

/// Rounds to 12 significant digits and prints the shortest representation
/// of the rounded value.
pub fn format_sig12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    rounded.to_string()
}

pub fn sweep_header(req: &SweepRequest) -> Vec<String> {
    let mut h: Vec<String> = ["c", "xbar1", "xbar2", "xstar1", "xstar2"].map(String::from).into();
    if req.include_coefficients {
        h.extend(["a11", "a12", "a21", "a22"].map(String::from));
    }
    for &x in &req.value_points {
        let x = format_sig12(x);
        h.push(format!("v1@{x}"));
        h.push(format!("v2@{x}"));
    }
    h
}

pub fn write_sweep_csv<W: Write>(req: &SweepRequest, rows: &[SweepRow], out: W) -> Result<(), SweepError> {
    let csv_err = |e: csv::Error| SweepError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sweep_header(req)).map_err(csv_err)?;
    for row in rows {
        let p = &row.params;
        let mut rec = vec![row.c, p.xbar1, p.xbar2, p.xstar1, p.xstar2];
        if req.include_coefficients {
            rec.extend([p.a11, p.a12, p.a21, p.a22]);
        }
        for v in &row.values {
            rec.extend(v);
        }
        w.write_record(rec.iter().map(|&v| format_sig12(v))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| SweepError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Costs;

    fn problem2() -> GameSpec {
        GameSpec::linear(
            0.15,
            0.02,
            -3.0,
            3.0,
            Costs {
                c: 100.0,
                c_tilde: 50.0,
                lambda: 0.0,
                lambda_tilde: 0.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_sig12(2.823795342153624), "2.82379534215");
        assert_eq!(format_sig12(-0.0001234567890123456), "-0.000123456789012");
        assert_eq!(format_sig12(1000.0), "1000");
    }

    #[test]
    fn grid_below_gain_is_rejected() {
        let req = SweepRequest::new(problem2(), vec![40.0, 60.0]);
        assert!(matches!(run_sweep(&req), Err(SweepError::Range(_))));
        let req = SweepRequest::new(problem2(), vec![60.0, 60.0]);
        assert!(matches!(run_sweep(&req), Err(SweepError::Range(_))));
        let mut req = SweepRequest::new(problem2(), vec![60.0]);
        req.parameter = "rho".into();
        assert!(matches!(run_sweep(&req), Err(SweepError::Parameter(_))));
    }

    #[test]
    fn csv_layout() {
        let mut req = SweepRequest::new(problem2(), linspace(60.0, 100.0, 3));
        req.value_points = vec![0.0];
        req.include_coefficients = true;
        let rows = run_sweep(&req).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&req, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "c,xbar1,xbar2,xstar1,xstar2,a11,a12,a21,a22,v1@0,v2@0"
        );
        assert_eq!(lines.count(), 3);
        // symmetric game: V1(0) = V2(0)
        assert_eq!(rows[1].values[0][0], rows[1].values[0][1]);
    }

    #[test]
    fn numeric_sweep_follows_closed_form() {
        let mut req = SweepRequest::new(problem2(), linspace(60.0, 120.0, 4));
        let closed = run_sweep(&req).unwrap();
        req.method = SweepMethod::Numeric;
        let numeric = run_sweep(&req).unwrap();
        for (a, b) in closed.iter().zip(&numeric) {
            assert!(a.params.max_rel_diff(&b.params) < 1e-8);
        }
    }
}
