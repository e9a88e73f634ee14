use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use impulse_core::qvi::{solve_system, verify_candidate, GridOptions, InitialGuess, SolveOptions};
use impulse_core::sim::{horizon_for, simulate_paths, trace_path, write_trace_csv, SimConfig};
use impulse_core::sweep::{linspace, run_sweep, write_sweep_csv, SweepMethod, SweepRequest};
use impulse_core::{
    closed_form_equilibrium, EquilibriumParams, GameSpec, PiecewiseValue, Player, SimError, SolveError,
    SpecError, ThresholdStrategy, ValidationOptions,
};

const THREADS_ENV: &str = "IMPULSE_GAME_THREADS";

#[derive(Parser, Debug)]
#[command(name = "impulse-game", version, about = "Solve, certify and simulate two-player impulse games")]
struct Cli {
    /// Accept specs with c < c_tilde.
    #[arg(long, global = true)]
    allow_cost_inversion: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Closed,
    Numeric,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the equilibrium parameters.
    Solve {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "numeric")]
        method: Method,
        /// Output JSON path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the quasi-variational inequalities on a grid.
    Verify {
        spec: PathBuf,
        params: PathBuf,
        #[arg(long, default_value_t = 4001)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of both payoffs under the threshold strategies.
    Simulate {
        spec: PathBuf,
        params: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        x0: f64,
        #[arg(long, default_value_t = 20_000)]
        paths: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Truncation time; chosen from --eps when omitted.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long)]
        bridge: bool,
        /// Simulate even if the parameters fail certification.
        #[arg(long)]
        force: bool,
        /// Write the interventions of one path as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        trace_path: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equilibrium thresholds along a grid of fixed costs, as CSV.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value = "c")]
        param: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Also write V1, V2 at these states (comma separated).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
        /// Also write a11, a12, a21, a22.
        #[arg(long)]
        coefficients: bool,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn validation(message: impl ToString) -> Self {
        Self {
            code: 1,
            kind: "validation",
            message: message.to_string(),
        }
    }

    fn solver(message: impl ToString) -> Self {
        Self {
            code: 2,
            kind: "solver",
            message: message.to_string(),
        }
    }

    fn report(&self) {
        let body = json!({ "error": self.kind, "message": self.message, "exit_code": self.code });
        eprintln!("{body}");
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        Self::validation(e)
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Spec(s) => Self::validation(s),
            SolveError::OrderCondition { .. } | SolveError::NonFiniteParams => Self::validation(e),
            other => Self::solver(other),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFinite { .. } => Self {
                code: 4,
                kind: "non_finite",
                message: e.to_string(),
            },
            other => Self::validation(other),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path, opts: ValidationOptions) -> Result<GameSpec, Failure> {
    GameSpec::from_json_with(&read(path)?, opts).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn load_params(path: &Path) -> Result<EquilibriumParams, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::validation(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn solve(spec: &GameSpec, method: Method) -> Result<EquilibriumParams, Failure> {
    match method {
        Method::Closed => {
            if spec.symmetric_linear().is_none() {
                return Err(SpecError::NotSymmetricLinear.into());
            }
            Ok(closed_form_equilibrium(spec)?.0)
        }
        Method::Numeric => Ok(solve_system(spec, InitialGuess::Auto, &SolveOptions::default())?),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let opts = ValidationOptions {
        allow_cost_inversion: cli.allow_cost_inversion,
    };
    match cli.command {
        Command::Solve { spec, method, out } => {
            let spec = load_spec(&spec, opts)?;
            let p = solve(&spec, method)?;
            emit(out.as_deref(), &to_json(&p))
        }
        Command::Verify {
            spec,
            params,
            grid,
            out,
        } => {
            let spec = load_spec(&spec, opts)?;
            let p = load_params(&params)?;
            let report = verify_candidate(
                &p,
                &spec,
                &GridOptions {
                    points: grid,
                    ..GridOptions::default()
                },
            )?;
            emit(out.as_deref(), &to_json(&report))?;
            if report.passed {
                Ok(())
            } else {
                Err(Failure {
                    code: 3,
                    kind: "certification",
                    message: format!("candidate failed certification: {:?}", report.checks),
                })
            }
        }
        Command::Simulate {
            spec,
            params,
            x0,
            paths,
            dt,
            seed,
            horizon,
            eps,
            bridge,
            force,
            trace,
            trace_path: trace_index,
            out,
        } => {
            let spec = load_spec(&spec, opts)?;
            let p = load_params(&params)?;
            if !force {
                let report = verify_candidate(&p, &spec, &GridOptions::default())?;
                if !report.passed {
                    return Err(Failure {
                        code: 3,
                        kind: "certification",
                        message: "parameters are not certified; pass --force to simulate anyway".into(),
                    });
                }
            }
            let (s1, s2) = ThresholdStrategy::pair_from(&p);
            if !(eps > 0.0) {
                return Err(Failure::validation("eps must be positive"));
            }
            let cfg = SimConfig {
                x0,
                dt,
                horizon: horizon.unwrap_or_else(|| horizon_for(&spec, &s1, &s2, eps)),
                n_paths: paths,
                seed,
                bridge_correction: bridge,
            };
            let est = simulate_paths(&spec, &s1, &s2, &cfg)?;
            if let Some(path) = trace {
                let rec = trace_path(&spec, &s1, &s2, &cfg, trace_index)?;
                let file = std::fs::File::create(&path)
                    .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
                write_trace_csv(&rec, file).map_err(Failure::validation)?;
            }
            emit(out.as_deref(), &to_json(&est))?;
            for player in [Player::One, Player::Two] {
                let v = PiecewiseValue::new(&spec, &p, player).eval(x0);
                let j = est.mean(player);
                let se = est
                    .se(player)
                    .map_or_else(|| "insufficient".to_string(), |s| format!("{s:.6}"));
                eprintln!(
                    "player {}: J = {j:.6}  V(x0) = {v:.6}  |J - V| = {:.6}  se = {se}",
                    u8::from(player),
                    (j - v).abs()
                );
            }
            Ok(())
        }
        Command::Sweep {
            spec,
            param,
            from,
            to,
            points,
            values,
            coefficients,
            method,
            out,
        } => {
            let spec = load_spec(&spec, opts)?;
            if points == 0 || !(from < to || (points == 1 && from == to)) {
                return Err(Failure::validation(format!(
                    "need from < to and points >= 1 (from = {from}, to = {to}, points = {points})"
                )));
            }
            let mut req = SweepRequest::new(spec, linspace(from, to, points));
            req.parameter = param;
            req.include_coefficients = coefficients;
            req.value_points = values;
            req.validation = opts;
            req.method = match method {
                None => SweepMethod::Auto,
                Some(Method::Closed) => SweepMethod::Closed,
                Some(Method::Numeric) => SweepMethod::Numeric,
            };
            req.validate().map_err(Failure::validation)?;
            let rows = run_sweep(&req).map_err(Failure::solver)?;
            let mut buf = Vec::new();
            write_sweep_csv(&req, &rows, &mut buf).map_err(Failure::validation)?;
            let text = String::from_utf8(buf).expect("csv output is UTF-8");
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Failure::validation(format!("{}: {e}", p.display()))),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::validation(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::validation)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code)
        }
    }
}
