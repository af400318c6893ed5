//! Acceptance criteria 1-8. Runs every criterion, prints one PASS/FAIL line
//! each, and exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DVector;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, RngSeed, TestCaseError, TestRunner};
use stackgrad::adversarial::{
    attacker_closed_form, prepare_split, reference_solver_config, synth_dataset, wine_like_dataset, ExperimentOptions,
    OuterStep,
};
use stackgrad::bench::{
    cmd_convergence, cmd_gradcheck, cmd_quadratic, cmd_regression, median, CheckKind, ConvergenceOptions, DataSource,
    GameKind, GradcheckOptions, GradcheckRow, QuadraticOptions, RegressionOptions, QUADRATIC_EQUILIBRIUM,
};
use stackgrad::game::{flatten_rows, unflatten_rows, ALPHA, BETA};
use stackgrad::{
    backward_hypergradient, forward_hypergradient, inner_ascent, quadratic_game, quartic_game, regression_game,
    solve_stackelberg, HessianPoint, Method, RegressionGameSpec, SolverConfig,
};

mod common;
use common::{corpus, flat_gradient_fd, rel, CORPUS, DX, DY, X};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Desk-scale regression runs: the reference solver settings with the
/// leader step sized from the training data's curvature.
fn desk_experiment(outer_steps: usize) -> ExperimentOptions {
    ExperimentOptions {
        solver: SolverConfig {
            outer_steps,
            ..reference_solver_config()
        },
        outer_step: OuterStep::Curvature,
        ..ExperimentOptions::default()
    }
}

const DESK_ROWS: usize = 300;

fn c1_equilibrium() -> Outcome {
    let game = quadratic_game(5).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for method in [Method::Backward, Method::Forward] {
        let cfg = SolverConfig {
            method,
            ..SolverConfig::default()
        };
        let start = Instant::now();
        let report = solve_stackelberg(&game, &cfg).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let worst = report
            .final_alpha
            .iter()
            .chain(&report.final_beta)
            .map(|v| (v - QUADRATIC_EQUILIBRIUM).abs())
            .fold(0.0, f64::max);
        ok &= report.failure.is_none() && worst <= 1e-2 && secs <= 10.0;
        notes.push(format!("{method}: max |x+3.5| {worst:.2e} in {secs:.3}s"));
    }
    check(ok, notes.join("; "))
}

fn gradcheck(game: GameKind, steps: usize, eta: f64) -> Vec<GradcheckRow> {
    cmd_gradcheck(&GradcheckOptions {
        game,
        inner_steps: steps,
        inner_eta: eta,
        ..GradcheckOptions::default()
    })
    .unwrap()
}

fn worst(rows: &[GradcheckRow], kind: CheckKind) -> f64 {
    rows.iter()
        .filter(|r| r.check == kind)
        .map(|r| r.value)
        .fold(0.0, f64::max)
}

fn c2_exactness() -> Outcome {
    let start = Instant::now();
    let quad = gradcheck(GameKind::Quadratic, 40, 0.1);
    let reg = gradcheck(GameKind::Regression, 100, 0.01);
    let (eq, er) = (
        worst(&quad, CheckKind::FdVsForward),
        worst(&reg, CheckKind::FdVsForward),
    );
    let mut exits = Vec::new();
    for game in ["quadratic", "regression"] {
        let status = Command::new(env!("CARGO_BIN_EXE_stackgrad"))
            .args(["gradcheck", "--game", game])
            .output()
            .unwrap()
            .status;
        exits.push(status.code());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        eq <= 1e-5 && er <= 1e-5 && exits.iter().all(|c| *c == Some(0)) && secs <= 30.0,
        format!("fd rel err quadratic {eq:.2e}, regression {er:.2e}; gradcheck exits {exits:?}; {secs:.2}s"),
    )
}

fn c3_adjoint() -> Outcome {
    let runs = [
        gradcheck(GameKind::Quadratic, 40, 0.1),
        gradcheck(GameKind::Quartic, 40, 0.1),
        gradcheck(GameKind::Regression, 100, 0.01),
    ];
    let exact = runs
        .iter()
        .map(|r| worst(r, CheckKind::BackwardVsForward))
        .fold(0.0, f64::max);
    let mut ok = exact <= 1e-9;
    let mut notes = vec![format!("current-iterate gap {exact:.2e}")];
    for rows in &runs {
        let game = &rows[0].game;
        for dim in rows.iter().map(|r| r.dim).collect::<std::collections::BTreeSet<_>>() {
            let gaps: Vec<f64> = rows
                .iter()
                .filter(|r| r.dim == dim && r.check == CheckKind::StepGap)
                .map(|r| r.value)
                .collect();
            // constant Hessians make the gap exactly zero at every step size
            let shrinks = gaps.windows(2).all(|w| w[1] < w[0]) || gaps.iter().all(|g| *g <= 1e-12);
            ok &= gaps.len() == 3 && shrinks;
            notes.push(format!(
                "{game}/{dim} {}",
                gaps.iter().map(|g| format!("{g:.1e}")).collect::<Vec<_>>().join(">")
            ));
        }
    }
    check(ok, notes.join("; "))
}

fn c4_complexity() -> Outcome {
    let opts = QuadraticOptions {
        dims: vec![2, 4, 8, 16, 32],
        methods: vec![Method::Backward, Method::Forward],
        solver: SolverConfig::default(),
        repeats: 5,
        seed: 0,
    };
    let results = cmd_quadratic(&opts).unwrap();
    let time = |m: Method, d: usize| {
        results
            .iter()
            .find(|r| r.method == m && r.dim == d)
            .unwrap()
            .median_seconds
    };
    let fwd = time(Method::Forward, 32) / time(Method::Forward, 2);
    let bwd = time(Method::Backward, 32) / time(Method::Backward, 2);
    let traces = results.iter().all(|r| match r.method {
        Method::Backward => r.trace_length == opts.solver.inner_steps + 1,
        Method::Forward => r.trace_length <= 2,
    });
    check(
        fwd >= 4.0 && bwd <= 3.0 && traces,
        format!("forward n=32/n=2 {fwd:.1}x (>= 4), backward {bwd:.1}x (<= 3), trace lengths ok: {traces}"),
    )
}

fn c5_inner_oracle() -> Outcome {
    let data = wine_like_dataset(0, DESK_ROWS).unwrap().dataset;
    let prepared = prepare_split(&data, 0, &ExperimentOptions::default()).unwrap();
    let train = &prepared.train;
    let w = &prepared.ridge_weights;
    let beta0 = flatten_rows(&train.x);
    let mut ok = true;
    let mut notes = Vec::new();
    for c_d in [0.01, 0.1, 1.0] {
        let game = regression_game(&RegressionGameSpec::new(
            train.x.clone(),
            train.y.clone(),
            c_d,
            prepared.selection.best_rho,
        ))
        .unwrap();
        let trace = inner_ascent(&game, w.as_slice(), 100, 0.01, &beta0).unwrap();
        let ascended = unflatten_rows(trace.last().unwrap(), train.k(), train.p());
        let exact = attacker_closed_form(&train.x, w, c_d);
        let err = (ascended - &exact).norm() / exact.norm();
        ok &= err <= 1e-3;
        notes.push(format!("c_d={c_d}: {err:.2e}"));
    }
    check(ok, format!("relative Frobenius error {} (<= 1e-3)", notes.join(", ")))
}

fn c6_regression() -> Outcome {
    let start = Instant::now();
    let opts = RegressionOptions {
        source: DataSource::Synthetic { rows: DESK_ROWS },
        seeds: vec![0],
        experiment: desk_experiment(reference_solver_config().outer_steps),
    };
    let summary = cmd_regression(&opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rows = &summary.means;
    let dominated = rows.iter().all(|&(_, raw, nash, _)| nash <= raw + 0.01);
    let agree = rows
        .iter()
        .filter(|r| r.0 <= 1e-6)
        .all(|&(_, raw, nash, _)| (nash - raw).abs() <= 0.02);
    let spread = |f: fn(&(f64, f64, f64, f64)) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let (raw_spread, nash_spread) = (spread(|r| r.1), spread(|r| r.2));
    let table = rows
        .iter()
        .map(|(c, raw, nash, _)| format!("{c}:{raw:.4}/{nash:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    check(
        dominated && agree && nash_spread <= raw_spread && secs <= 300.0,
        format!(
            "raw/nash {table}; spread raw {raw_spread:.4} nash {nash_spread:.4}; \
             dominance {dominated}, c_d=0 agreement {agree}; {secs:.0}s"
        ),
    )
}

fn c7_convergence() -> Outcome {
    let epoch = 150;
    let result = cmd_convergence(&ConvergenceOptions {
        source: DataSource::Synthetic { rows: DESK_ROWS },
        num_inits: 20,
        c_d: 0.5,
        seed: 0,
        experiment: desk_experiment(200),
    })
    .unwrap();
    let best = result.best_final();
    let gaps: Vec<f64> = result
        .paths
        .iter()
        .map(|p| p.get(epoch).map_or(f64::INFINITY, |c| (c - best).abs() / best.abs()))
        .collect();
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let diverged = result.failures.iter().filter(|f| f.is_some()).count();
    check(
        diverged == 0 && worst <= 0.05,
        format!(
            "{} inits, worst gap to best final cost at epoch {epoch} {:.2}% (median {:.3}%), {diverged} diverged",
            result.paths.len(),
            100.0 * worst,
            100.0 * median(&mut gaps.clone())
        ),
    )
}

/// Condensed pass over the invariant families, each under a fixed-seed runner.
fn c8_properties() -> Outcome {
    let config = |seed: u64| ProptestConfig {
        cases: 32,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    let mut failures = Vec::new();
    let mut run = |name: &str, seed: u64, body: &dyn Fn(&mut TestRunner) -> Result<(), String>| {
        if let Err(e) = body(&mut TestRunner::new(config(seed))) {
            failures.push(format!("{name}: {e}"));
        }
    };
    let point = prop::collection::vec(-1.5f64..1.5, DX + DY);
    let alpha = prop::collection::vec(-1.5f64..1.5, 4);

    run("autodiff gradient vs differences", 1, &|r| {
        r.run(&point, |p| {
            for (name, f) in corpus() {
                let e = rel(
                    &f.at_flat(p.clone()).unwrap().full_gradient(),
                    &flat_gradient_fd(&f, &p),
                );
                prop_assert!(e <= 1e-5, "{name}: {e:e}");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    run("autodiff hvp vs dense Hessian", 2, &|r| {
        r.run(&(point.clone(), prop::collection::vec(-1.0f64..1.0, DX)), |(p, v)| {
            for (name, f) in corpus() {
                let eval = f.at_flat(p.clone()).unwrap();
                let dense = eval.hessian_block(X, X).unwrap() * DVector::from_column_slice(&v);
                let e = rel(&eval.hvp(X, &v).unwrap(), dense.as_slice());
                prop_assert!(e <= 1e-10, "{name}: {e:e}");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    run("follower best response is a stationary point", 3, &|r| {
        r.run(&(alpha.clone(), 0.0f64..5.0, 0u64..1000), |(a, c_d, seed)| {
            let q = quadratic_game(4).unwrap();
            let g = q.follower().gradient(&[(ALPHA, &a), (BETA, &a)], BETA).unwrap();
            prop_assert!(g.iter().all(|v| *v == 0.0));
            let d = synth_dataset(seed, 8, 2, 0.5).unwrap().dataset;
            let game = regression_game(&RegressionGameSpec::new(d.x.clone(), d.y.clone(), c_d, 0.1)).unwrap();
            let w = DVector::from_column_slice(&a[..2]);
            let xb = flatten_rows(&attacker_closed_form(&d.x, &w, c_d));
            let g = game
                .follower()
                .gradient(&[(ALPHA, &a[..2]), (BETA, &xb)], BETA)
                .unwrap();
            prop_assert!(g.iter().map(|v| v.abs()).fold(0.0, f64::max) <= 1e-8);
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    run("current-iterate backward equals forward", 4, &|r| {
        r.run(&(alpha.clone(), 1usize..5), |(a, n)| {
            for game in [quadratic_game(n).unwrap(), quartic_game(n).unwrap()] {
                let cfg = SolverConfig {
                    hessian_point: HessianPoint::CurrentIterate,
                    ..SolverConfig::default()
                };
                let b = backward_hypergradient(&game, &a[..n], &cfg).unwrap().grad;
                let f = forward_hypergradient(&game, &a[..n], &cfg).unwrap().grad;
                let e = rel(&b, &f);
                prop_assert!(e <= 1e-9, "{}: {e:e}", game.name());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    run("inner ascent contracts at rate |1 - 6 eta|", 5, &|r| {
        r.run(&(alpha.clone(), alpha.clone(), 0.01f64..0.3), |(a, b0, eta)| {
            let game = quadratic_game(4).unwrap();
            let trace = inner_ascent(&game, &a, 20, eta, &b0).unwrap();
            let dist = |b: &[f64]| b.iter().zip(&a).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let d0 = dist(&b0);
            for (t, b) in trace.iter().enumerate() {
                let expected = (1.0 - 6.0 * eta).abs().powi(t as i32) * d0;
                if (dist(b) - expected).abs() > 1e-10 * (1.0 + d0) {
                    return Err(TestCaseError::fail(format!("t={t}")));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    check(
        failures.is_empty() && CORPUS.len() >= 10,
        if failures.is_empty() {
            format!(
                "5 invariant families x 32 cases, autodiff corpus of {} functions",
                CORPUS.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 equilibrium recovery", c1_equilibrium),
        ("2 hypergradient exactness", c2_exactness),
        ("3 adjoint consistency", c3_adjoint),
        ("4 complexity behavior", c4_complexity),
        ("5 inner-solver oracle", c5_inner_oracle),
        ("6 adversarial regression", c6_regression),
        ("7 convergence", c7_convergence),
        ("8 property suites", c8_properties),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, criterion) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
