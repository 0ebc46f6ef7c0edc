//! Experiment execution and artifact files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use nalgebra::DVector;
use serde::Serialize;

use super::config::{AlgorithmChoice, ExperimentConfig, ProblemSource};
use crate::centering::{offline_center, CenteringOptions};
use crate::error::{Error, Result};
use crate::kkt::PrimalDualPoint;
use crate::metrics::{bound_check, BatchOracle, BoundParams, BoundReport, LedgerTotals, MetricsLedger};
use crate::opf::baseline::ProjectedGradient;
use crate::opf::{build_encoding, generate_loads, NetworkCase};
use crate::problem::TimeVaryingProblem;
use crate::solver::{beta_cap, initialize, RoundTrace, SolverOptions, SolverState};
use crate::synthetic::{lockstep_drift_run, random_instance, rng};

/// Problem with its full stream and per-round optima `x*_0, …, x*_T`.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub problem: TimeVaryingProblem,
    pub optima: BatchOracle,
    /// Load redraws made while building a power-flow stream.
    pub redraws: usize,
}

/// Per-round solver diagnostics beyond the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundDiagnostics {
    pub t: usize,
    pub drift: f64,
    pub drift_exceeded: bool,
    pub flagged: bool,
    pub extra_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: AlgorithmChoice,
    pub horizon: usize,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub complexity: f64,
    pub c_norm: f64,
    pub eta0: f64,
    /// Growth factor actually used (OIPM-TEC only).
    pub beta: Option<f64>,
    pub beta_cap: f64,
    /// Fixed `η` actually used (εOIPM-TEC only).
    pub eta_fixed: Option<f64>,
    pub epsilon: f64,
    pub oracle_tol: f64,
    pub totals: LedgerTotals,
    pub bounds: Option<BoundReport>,
    pub flagged_rounds: usize,
    pub drift_exceeded_rounds: usize,
    pub extra_steps: usize,
    pub load_redraws: usize,
    pub init_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub ledger: MetricsLedger,
    pub diagnostics: Vec<RoundDiagnostics>,
    pub summary: RunSummary,
}

fn solver_options(cfg: &ExperimentConfig, algorithm: AlgorithmChoice) -> SolverOptions {
    let mut opts = match algorithm {
        AlgorithmChoice::EpsOipmTec => SolverOptions::epsilon_oipm_tec(cfg.eta_fixed.unwrap_or(cfg.eta0), cfg.epsilon),
        _ => SolverOptions::oipm_tec(cfg.eta0),
    };
    opts.beta = cfg.beta;
    opts.drift_policy = cfg.drift_policy.into();
    opts
}

type ReusedRun = Option<(SolverState, Vec<RoundTrace>)>;

/// Builds the problem and stream for `cfg` and solves every round offline.
/// When the synthetic stream is driven by the configured solver itself, its
/// traces are returned as well.
fn prepare(cfg: &ExperimentConfig) -> Result<(PreparedRun, ReusedRun)> {
    let centering = CenteringOptions::default();
    match &cfg.problem {
        ProblemSource::Synthetic { spec, drift_fraction } => {
            let mut r = rng(cfg.seed);
            let base = random_instance(&mut r, spec)?;
            let mut reference = [initialize(&base, &solver_options(cfg, AlgorithmChoice::OipmTec))?];
            let run = lockstep_drift_run(&mut r, &base, &mut reference, *drift_fraction, cfg.horizon)?;
            let problem = base.with_stream(run.stream)?;
            let optima = BatchOracle::solve_stream(&problem, cfg.oracle_tol, &centering)?;
            let [reference] = reference;
            let traces = run.traces.into_iter().next().unwrap_or_default();
            let reused = (cfg.algorithm == AlgorithmChoice::OipmTec).then_some((reference, traces));
            Ok((
                PreparedRun {
                    problem,
                    optima,
                    redraws: 0,
                },
                reused,
            ))
        }
        ProblemSource::Case { path, load_rule } => {
            let case = NetworkCase::load(path)?;
            let enc = build_encoding(&case)?;
            let problem = &enc.problem;
            let b0 = problem.stream()[0].clone();
            let first = offline_center(problem, &b0, 0.0, cfg.oracle_tol, None, &centering)
                .map_err(|e| e.at_round(0))?;
            let mut warm: PrimalDualPoint = first.anchor.clone();
            let mut optima = vec![(0, first.center.point.x)];
            let stream = generate_loads(&enc, *load_rule, cfg.seed, cfg.horizon, |t, b| {
                match offline_center(problem, b, 0.0, cfg.oracle_tol, Some(&warm), &centering) {
                    Ok(res) => {
                        warm = res.anchor;
                        optima.retain(|(k, _)| *k != t);
                        optima.push((t, res.center.point.x));
                        Ok(true)
                    }
                    Err(Error::InfeasibleInstance) => Ok(false),
                    Err(e) => Err(e.at_round(t)),
                }
            })?;
            let redraws = stream.total_redraws();
            Ok((
                PreparedRun {
                    problem: problem.with_stream(stream.rhs)?,
                    optima: BatchOracle::new(optima),
                    redraws,
                },
                None,
            ))
        }
    }
}

fn optimum(optima: &BatchOracle, t: usize) -> Result<&DVector<f64>> {
    optima.get(t).ok_or(Error::MissingOracle { round: t })
}

/// Runs the configured experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let (prep, reused) = prepare(cfg)?;
    let problem = &prep.problem;
    let stream = problem.stream();
    let vf = problem.complexity();
    let mut ledger = MetricsLedger::new(cfg.epsilon).with_reference(stream[0].clone(), optimum(&prep.optima, 0)?.clone());
    let mut diagnostics = Vec::with_capacity(cfg.horizon);
    let init_iterations;
    let mut params = None;

    match cfg.algorithm {
        AlgorithmChoice::OipmTec | AlgorithmChoice::EpsOipmTec => {
            let (state, traces) = match reused {
                Some(r) => r,
                None => {
                    let mut state = initialize(problem, &solver_options(cfg, cfg.algorithm))?;
                    let mut traces = Vec::with_capacity(cfg.horizon);
                    for b in &stream[1..] {
                        traces.push(state.advance(problem, b)?);
                    }
                    (state, traces)
                }
            };
            init_iterations = state.init_iterations;
            params = Some(match cfg.algorithm {
                AlgorithmChoice::OipmTec => BoundParams::OipmTec {
                    eta0: state.eta0,
                    beta: state.beta,
                },
                _ => BoundParams::EpsilonOipmTec {
                    eta: state.eta0,
                    epsilon: cfg.epsilon,
                },
            });
            for tr in &traces {
                let t = tr.round;
                ledger.record_round(problem, t, &tr.decision, &stream[t], optimum(&prep.optima, t)?, tr.decrement, tr.eta);
                diagnostics.push(RoundDiagnostics {
                    t,
                    drift: tr.drift,
                    drift_exceeded: tr.drift_exceeded,
                    flagged: tr.flagged,
                    extra_steps: tr.extra_steps,
                });
            }
        }
        AlgorithmChoice::PgdBaseline => {
            let start = initialize(problem, &solver_options(cfg, AlgorithmChoice::OipmTec))?;
            init_iterations = start.init_iterations;
            let mut pg = ProjectedGradient::new(start.decision().clone(), cfg.oracle_tol, CenteringOptions::default());
            for (t, b) in stream.iter().enumerate().skip(1) {
                let x_t = pg.decision().clone();
                ledger.record_round(problem, t, &x_t, b, optimum(&prep.optima, t)?, 0.0, 0.0);
                diagnostics.push(RoundDiagnostics {
                    t,
                    drift: (b - &stream[t - 1]).norm(),
                    drift_exceeded: false,
                    flagged: false,
                    extra_steps: 0,
                });
                if t < stream.len() - 1 {
                    pg.advance(problem, b)?;
                }
            }
        }
    }

    let (beta, eta_fixed) = match params {
        Some(BoundParams::OipmTec { beta, .. }) => (Some(beta), None),
        Some(BoundParams::EpsilonOipmTec { eta, .. }) => (None, Some(eta)),
        None => (None, None),
    };
    let summary = RunSummary {
        algorithm: cfg.algorithm,
        horizon: cfg.horizon,
        seed: cfg.seed,
        n: problem.n(),
        p: problem.p(),
        complexity: vf,
        c_norm: problem.c().norm(),
        eta0: cfg.eta0,
        beta,
        beta_cap: beta_cap(vf),
        eta_fixed,
        epsilon: cfg.epsilon,
        oracle_tol: cfg.oracle_tol,
        totals: ledger.totals(),
        bounds: params.map(|p| bound_check(&ledger, problem, p)),
        flagged_rounds: diagnostics.iter().filter(|d| d.flagged).count(),
        drift_exceeded_rounds: diagnostics.iter().filter(|d| d.drift_exceeded).count(),
        extra_steps: diagnostics.iter().map(|d| d.extra_steps).sum(),
        load_redraws: prep.redraws,
        init_iterations,
    };
    info!(
        "{:?}: R_d = {:.6e}, Vio = {:.6e}, V_b = {:.6e} over {} rounds",
        cfg.algorithm, summary.totals.regret, summary.totals.violation, summary.totals.b_variation, cfg.horizon
    );
    Ok(RunOutcome {
        ledger,
        diagnostics,
        summary,
    })
}

fn write_series(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut cum = BufWriter::new(File::create(dir.join("cumulative.csv"))?);
    writeln!(cum, "t,regret,eps_regret,violation,opt_variation,b_variation,regret_avg,violation_avg")?;
    let mut acc = [0.0f64; 5];
    for r in outcome.ledger.records() {
        acc[0] += r.regret_inc;
        acc[1] += r.eps_regret_inc;
        acc[2] += r.eq_viol + r.ineq_viol;
        acc[3] += r.opt_shift;
        acc[4] += r.b_shift;
        let t = r.t as f64;
        writeln!(
            cum,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t,
            acc[0],
            acc[1],
            acc[2],
            acc[3],
            acc[4],
            acc[0] / t,
            acc[2] / t
        )?;
    }
    cum.flush()?;

    let mut rounds = BufWriter::new(File::create(dir.join("rounds.csv"))?);
    writeln!(rounds, "t,drift,drift_exceeded,flagged,extra_steps,b_shift,opt_shift")?;
    for (d, r) in outcome.diagnostics.iter().zip(outcome.ledger.records()) {
        writeln!(
            rounds,
            "{},{:.16e},{},{},{},{:.16e},{:.16e}",
            d.t, d.drift, d.drift_exceeded as u8, d.flagged as u8, d.extra_steps, r.b_shift, r.opt_shift
        )?;
    }
    rounds.flush()?;
    Ok(())
}

/// Runs the experiment and writes `ledger.csv`, `summary.json` and
/// `series/*.csv` into `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let outcome = execute(cfg)?;
    fs::create_dir_all(out.join("series"))?;
    let mut ledger = BufWriter::new(File::create(out.join("ledger.csv"))?);
    outcome.ledger.write_csv(&mut ledger)?;
    ledger.flush()?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&outcome.summary)? + "\n")?;
    write_series(&out.join("series"), &outcome)?;
    Ok(outcome)
}

/// Runs with the output directory named in the config.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory configured".into()))?;
    run_to_dir(cfg, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticSpec;

    fn synthetic(algorithm: AlgorithmChoice, horizon: usize) -> ExperimentConfig {
        ExperimentConfig {
            algorithm,
            eta0: 1.0,
            beta: None,
            epsilon: 0.05,
            eta_fixed: None,
            horizon,
            seed: 3,
            problem: ProblemSource::Synthetic {
                spec: SyntheticSpec::lp(6, 2),
                drift_fraction: 0.9,
            },
            output: None,
            drift_policy: Default::default(),
            oracle_tol: 1e-8,
        }
    }

    #[test]
    fn zero_horizon_gives_empty_ledger() {
        let out = execute(&synthetic(AlgorithmChoice::OipmTec, 0)).unwrap();
        assert!(out.ledger.records().is_empty());
        assert_eq!(out.summary.totals, LedgerTotals::default());
    }

    #[test]
    fn all_algorithms_share_the_stream() {
        let runs: Vec<_> = [AlgorithmChoice::OipmTec, AlgorithmChoice::EpsOipmTec, AlgorithmChoice::PgdBaseline]
            .into_iter()
            .map(|a| execute(&synthetic(a, 15)).unwrap())
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.summary.totals.b_variation, runs[0].summary.totals.b_variation);
            assert_eq!(r.ledger.records().len(), 15);
        }
        assert!(runs[0].summary.bounds.unwrap().passed);
        assert!(runs[2].summary.bounds.is_none());
    }

    #[test]
    fn writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        run_to_dir(&synthetic(AlgorithmChoice::EpsOipmTec, 5), dir.path()).unwrap();
        let ledger = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
        assert_eq!(ledger.lines().count(), 6);
        assert!(dir.path().join("series/cumulative.csv").exists());
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["horizon"], 5);
    }
}
