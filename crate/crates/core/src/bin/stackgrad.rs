use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stackgrad::adversarial::{
    default_c_d_grid, default_rho_grid, reference_solver_config, ExperimentOptions, OuterStep,
};
use stackgrad::bench::{
    cmd_convergence, cmd_gradcheck, cmd_quadratic, cmd_regression, default_dims, gradcheck_records, quadratic_records,
    regression_records, write_convergence, write_output, write_records, BenchError, ConvergenceOptions, DataSource,
    GameKind, GradcheckOptions, QuadraticOptions, RegressionOptions,
};
use stackgrad::{Method, SolverConfig};

/// Gradient methods for leader-follower games: timing, regression and
/// validation experiments written as CSV.
#[derive(Parser)]
#[command(name = "stackgrad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time backward and forward solvers on the quadratic game across dimensions.
    Quadratic {
        #[command(flatten)]
        common: Common,
        /// Median over this many runs per (dim, method).
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Raw ridge vs. Nash learner on attacked test data across c_d.
    Regression {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated attacker costs.
        #[arg(long, value_delimiter = ',')]
        cd_grid: Option<Vec<f64>>,
        /// Comma-separated ridge penalties for hold-out selection.
        #[arg(long, value_delimiter = ',')]
        rho_grid: Option<Vec<f64>>,
        /// Seeds to run; defaults to `--seed` alone.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Principal components kept (default: all features).
        #[arg(long)]
        components: Option<usize>,
    },
    /// Leader-cost paths of the regression game from random initializations.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 20)]
        num_inits: usize,
        #[arg(long, default_value_t = 0.5)]
        c_d: f64,
    },
    /// Compare backward, forward and finite-difference hypergradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = GameArg::Quadratic)]
        game: GameArg,
        #[arg(long, default_value_t = 20)]
        rows: usize,
        #[arg(long, default_value_t = 2)]
        features: usize,
        #[arg(long, default_value_t = 1e-5)]
        fd_tol: f64,
        #[arg(long, default_value_t = 1e-9)]
        adjoint_tol: f64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// backward, forward, or both (quadratic only).
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    inner_eta: Option<f64>,
    #[arg(long)]
    outer_steps: Option<usize>,
    /// Leader step size; `auto` (regression, convergence) sizes it from the
    /// training data's curvature.
    #[arg(long)]
    outer_eta: Option<OuterEta>,
    /// Comma-separated problem sizes.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataArgs {
    /// UCI white-wine CSV (semicolon-delimited).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use the offline wine-like synthetic substitute.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GameArg {
    Quadratic,
    Quartic,
    Regression,
}

impl From<GameArg> for GameKind {
    fn from(g: GameArg) -> Self {
        match g {
            GameArg::Quadratic => GameKind::Quadratic,
            GameArg::Quartic => GameKind::Quartic,
            GameArg::Regression => GameKind::Regression,
        }
    }
}

#[derive(Clone, Copy)]
enum OuterEta {
    Value(f64),
    Auto,
}

impl std::str::FromStr for OuterEta {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(OuterEta::Auto),
            v => v
                .parse()
                .map(OuterEta::Value)
                .map_err(|_| format!("expected a number or `auto`, got `{v}`")),
        }
    }
}

/// Rows used by `--synthetic` and as the `--data` subsample size.
const DESK_ROWS: usize = 300;

impl Common {
    fn solver(&self, base: SolverConfig) -> Result<SolverConfig, BenchError> {
        let method = match self.method.as_deref() {
            None => base.method,
            Some(m) => m.parse::<Method>().map_err(BenchError::Input)?,
        };
        Ok(SolverConfig {
            inner_steps: self.inner_steps.unwrap_or(base.inner_steps),
            inner_eta: self.inner_eta.unwrap_or(base.inner_eta),
            outer_steps: self.outer_steps.unwrap_or(base.outer_steps),
            outer_eta: match self.outer_eta {
                Some(OuterEta::Value(v)) => v,
                _ => base.outer_eta,
            },
            method,
            ..base
        })
    }

    fn outer_step(&self) -> OuterStep {
        match self.outer_eta {
            Some(OuterEta::Auto) => OuterStep::Curvature,
            _ => OuterStep::Fixed,
        }
    }
}

impl DataArgs {
    fn source(&self, dims: Option<&[usize]>) -> Result<DataSource, BenchError> {
        let rows = match dims {
            None => DESK_ROWS,
            Some([k]) => *k,
            Some(_) => return Err(BenchError::Input("--dims takes a single row count here".into())),
        };
        Ok(match &self.data {
            Some(path) => DataSource::Wine {
                path: path.clone(),
                subsample: dims.map(|_| rows),
            },
            None => DataSource::Synthetic { rows },
        })
    }
}

/// Outcome of a command: `Ok(true)` on success, `Ok(false)` on a failed check.
fn run(cli: Cli) -> Result<bool, BenchError> {
    match cli.command {
        Command::Quadratic { common, repeats } => {
            let methods = match common.method.as_deref() {
                None | Some("both") => vec![Method::Backward, Method::Forward],
                Some(m) => vec![m.parse::<Method>().map_err(BenchError::Input)?],
            };
            if common.outer_step() == OuterStep::Curvature {
                return Err(BenchError::Input(
                    "--outer-eta auto applies to regression and convergence".into(),
                ));
            }
            let solver = Common { method: None, ..common };
            let opts = QuadraticOptions {
                dims: solver.dims.clone().unwrap_or_else(default_dims),
                methods,
                solver: solver.solver(SolverConfig::default())?,
                repeats,
                seed: solver.seed,
            };
            let results = cmd_quadratic(&opts)?;
            let records = quadratic_records(&results, &opts);
            write_output(solver.out.as_deref(), |w| write_records(w, &records))?;
            Ok(true)
        }
        Command::Regression {
            common,
            data,
            cd_grid,
            rho_grid,
            seeds,
            components,
        } => {
            let opts = RegressionOptions {
                source: data.source(common.dims.as_deref())?,
                seeds: seeds.unwrap_or_else(|| vec![common.seed]),
                experiment: ExperimentOptions {
                    c_d_grid: cd_grid.unwrap_or_else(default_c_d_grid),
                    rho_grid: rho_grid.unwrap_or_else(default_rho_grid),
                    components,
                    solver: common.solver(reference_solver_config())?,
                    outer_step: common.outer_step(),
                    ..ExperimentOptions::default()
                },
            };
            let summary = cmd_regression(&opts)?;
            let records = regression_records(&summary, &opts);
            write_output(common.out.as_deref(), |w| write_records(w, &records))?;
            Ok(true)
        }
        Command::Convergence {
            common,
            data,
            num_inits,
            c_d,
        } => {
            let opts = ConvergenceOptions {
                source: data.source(common.dims.as_deref())?,
                num_inits,
                c_d,
                seed: common.seed,
                experiment: ExperimentOptions {
                    solver: common.solver(reference_solver_config())?,
                    outer_step: common.outer_step(),
                    ..ExperimentOptions::default()
                },
            };
            let result = cmd_convergence(&opts)?;
            write_output(common.out.as_deref(), |w| write_convergence(w, &result))?;
            eprintln!(
                "final spread {:.3e} (best final cost {:.6}, rho {}, outer_eta {:.3e}, {} diverged)",
                result.final_spread(),
                result.best_final(),
                result.rho,
                result.outer_eta,
                result.failures.iter().filter(|f| f.is_some()).count()
            );
            Ok(true)
        }
        Command::Gradcheck {
            common,
            game,
            rows,
            features,
            fd_tol,
            adjoint_tol,
        } => {
            let game = GameKind::from(game);
            let (steps, eta) = match game {
                GameKind::Regression => (100, 0.01),
                _ => (40, 0.1),
            };
            let defaults = GradcheckOptions::default();
            let opts = GradcheckOptions {
                game,
                dims: common.dims.clone().unwrap_or(defaults.dims.clone()),
                rows,
                features,
                inner_steps: common.inner_steps.unwrap_or(steps),
                inner_eta: common.inner_eta.unwrap_or(eta),
                fd_tol,
                adjoint_tol,
                seed: common.seed,
                ..defaults
            };
            let checks = cmd_gradcheck(&opts)?;
            let records = gradcheck_records(&checks, &opts);
            write_output(common.out.as_deref(), |w| write_records(w, &records))?;
            let mut ok = true;
            for c in checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "FAIL {} {} dim={}: {:.3e} (tolerance {:.1e})",
                    c.check, c.game, c.dim, c.value, c.tolerance
                );
                ok = false;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
