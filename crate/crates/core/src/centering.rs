//! Offline centering: damped Newton, phase-I search for an interior point,
//! and path following along `η`.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::barrier::BarrierTerm;
use crate::error::{Error, Result};
use crate::kkt::{KktSystem, NewtonStepResult, PrimalDualPoint};
use crate::problem::TimeVaryingProblem;

/// Decrement at which a point counts as centered.
pub const CENTERED: f64 = 1.0 / 9.0;
/// Above this decrement damped steps `1/(1+λ)` are taken.
pub const FULL_STEP: f64 = 0.25;
pub const MAX_NEWTON: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathSchedule {
    /// `η ← η(1 + 1/(8√v_f))` followed by re-centering.
    ShortStep,
    /// `η ← μη` followed by re-centering.
    LongStep(f64),
}

impl PathSchedule {
    pub fn factor(self, complexity: f64) -> f64 {
        match self {
            PathSchedule::ShortStep => 1.0 + 1.0 / (8.0 * complexity.max(1.0).sqrt()),
            PathSchedule::LongStep(mu) => mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringOptions {
    pub schedule: PathSchedule,
    /// Newton iteration cap per centering.
    pub max_newton: usize,
    /// Decrement aimed for on the final center.
    pub polish: f64,
    /// First `η` on the path.
    pub eta_start: f64,
}

impl Default for CenteringOptions {
    fn default() -> Self {
        Self {
            schedule: PathSchedule::LongStep(10.0),
            max_newton: MAX_NEWTON,
            polish: 1e-9,
            eta_start: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CenterResult {
    pub point: PrimalDualPoint,
    pub eta: f64,
    pub decrement: f64,
    pub iterations: usize,
}

fn step_at(problem: &TimeVaryingProblem, y: &PrimalDualPoint, eta: f64, b: &DVector<f64>) -> Result<(KktSystem, NewtonStepResult)> {
    let kkt = KktSystem::assemble(problem, &y.x)?;
    let step = kkt.step(problem.c(), &y.nu, eta, Some(b));
    Ok((kkt, step))
}

fn eq_tolerance(b: &DVector<f64>) -> f64 {
    1e-10 * (1.0 + b.norm())
}

/// Largest `α ≤ alpha` (halving) keeping `x + αΔx` interior.
fn interior_step(problem: &TimeVaryingProblem, y: &PrimalDualPoint, step: &NewtonStepResult, alpha: f64) -> Result<PrimalDualPoint> {
    let mut alpha = alpha;
    for _ in 0..60 {
        let next = step.apply(y, alpha);
        if problem.barrier().is_interior(&next.x) {
            return Ok(next);
        }
        alpha *= 0.5;
    }
    Err(Error::DomainViolation {
        term: problem.barrier().first_violation(&step.apply(y, alpha).x).unwrap_or(0),
    })
}

/// Damped Newton on `ηcᵀx + φ(x)` subject to `Ax = b` until the decrement is
/// at most `target` and `Ax = b` holds. Starting points need only be interior.
pub fn damped_newton(
    problem: &TimeVaryingProblem,
    start: &PrimalDualPoint,
    eta: f64,
    b: &DVector<f64>,
    target: f64,
    max_iter: usize,
) -> Result<CenterResult> {
    start.check_dims(problem)?;
    if let Some(term) = problem.barrier().first_violation(&start.x) {
        return Err(Error::DomainViolation { term });
    }
    let tol_eq = eq_tolerance(b);
    let mut y = start.clone();
    let mut iterations = 0;
    loop {
        let (_, step) = step_at(problem, &y, eta, b)?;
        let lambda = step.decrement;
        if lambda <= target && step.equality_residual_norm <= tol_eq {
            return Ok(CenterResult {
                point: y,
                eta,
                decrement: lambda,
                iterations,
            });
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergent { iterations });
        }
        let alpha = if lambda > FULL_STEP { 1.0 / (1.0 + lambda) } else { 1.0 };
        y = interior_step(problem, &y, &step, alpha)?;
        iterations += 1;
    }
}

/// Extra full Newton steps toward `tol` while the decrement keeps shrinking.
fn polish(problem: &TimeVaryingProblem, mut res: CenterResult, b: &DVector<f64>, tol: f64) -> Result<CenterResult> {
    for _ in 0..10 {
        if res.decrement <= tol {
            break;
        }
        let (_, step) = step_at(problem, &res.point, res.eta, b)?;
        let next = step.apply(&res.point, 1.0);
        if !problem.barrier().is_interior(&next.x) {
            break;
        }
        let (_, after) = step_at(problem, &next, res.eta, b)?;
        if !(after.decrement < res.decrement) {
            break;
        }
        res.point = next;
        res.decrement = after.decrement;
        res.iterations += 1;
    }
    Ok(res)
}

/// Follows the central path from a point centered (or nearly so) at
/// `eta_from` to `eta_to`, re-centering at every stage.
pub fn path_follow(
    problem: &TimeVaryingProblem,
    start: &PrimalDualPoint,
    eta_from: f64,
    eta_to: f64,
    b: &DVector<f64>,
    opts: &CenteringOptions,
) -> Result<CenterResult> {
    let factor = opts.schedule.factor(problem.complexity());
    let mut res = damped_newton(problem, start, eta_from, b, CENTERED, opts.max_newton)?;
    while res.eta < eta_to {
        let eta = (res.eta * factor).min(eta_to);
        let next = damped_newton(problem, &res.point, eta, b, CENTERED, opts.max_newton)?;
        res = CenterResult {
            iterations: res.iterations + next.iterations,
            ..next
        };
    }
    Ok(res)
}

/// Strictly interior point with `Ax = b`, nearest the affine set to `hint`.
///
/// Minimizes a slack `s` over `gᵢ(x) ≤ s`, `Ax = b` inside a large ball around
/// the least-norm solution, and stops once `s < 0`.
pub fn phase_one(problem: &TimeVaryingProblem, b: &DVector<f64>, hint: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let n = problem.n();
    let x0 = problem.affine_point(b, hint)?;
    if problem.barrier().is_interior(&x0) {
        return Ok(x0);
    }

    let mut barrier = problem.barrier().with_slack();
    let radius = 1e3 * (1.0 + x0.norm());
    let mut u = DMatrix::zeros(n, n + 1);
    u.view_mut((0, 0), (n, n)).fill_with_identity();
    barrier.push(BarrierTerm::second_order_cone(u, -&x0, DVector::zeros(n + 1), radius)?)?;
    let mut a = DMatrix::zeros(problem.p(), n + 1);
    a.view_mut((0, 0), (problem.p(), n)).copy_from(problem.a());
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let lifted = TimeVaryingProblem::new(c, a, barrier, vec![])?;

    let worst = problem
        .barrier()
        .terms()
        .iter()
        .map(|t| t.constraint_value(&x0))
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 + worst.abs();
    let mut z = x0.clone().resize_vertically(n + 1, 0.0);
    z[n] = worst + scale;
    let mut y = PrimalDualPoint::primal(z, problem.p());
    let vf = lifted.complexity();

    let accept = |y: &PrimalDualPoint| -> Option<DVector<f64>> {
        if y.x[n] < 0.0 {
            let x = y.x.rows(0, n).into_owned();
            if problem.barrier().is_interior(&x) {
                return Some(x);
            }
        }
        None
    };

    let mut eta = 1.0 / scale;
    let mut total = 0;
    for _stage in 0..60 {
        // Damped Newton with an early exit as soon as the slack turns negative.
        let mut iterations = 0;
        loop {
            if let Some(x) = accept(&y) {
                debug!("phase-I found an interior point after {total} Newton steps");
                return Ok(x);
            }
            let (_, step) = step_at(&lifted, &y, eta, b)?;
            if step.decrement <= CENTERED && step.equality_residual_norm <= eq_tolerance(b) {
                break;
            }
            if iterations >= MAX_NEWTON {
                return Err(Error::InfeasibleStart);
            }
            let alpha = if step.decrement > FULL_STEP { 1.0 / (1.0 + step.decrement) } else { 1.0 };
            y = interior_step(&lifted, &y, &step, alpha).map_err(|_| Error::InfeasibleStart)?;
            iterations += 1;
            total += 1;
        }
        // Near the center the slack is within 2v_f/η of its infimum.
        if y.x[n] - 2.0 * vf / eta > 0.0 {
            debug!("phase-I certifies infeasibility: s = {:e}, η = {eta:e}", y.x[n]);
            return Err(Error::InfeasibleStart);
        }
        eta *= 10.0;
    }
    Err(Error::InfeasibleStart)
}

/// Central point `y^η` with `η = max(eta_target, v_f/tol)` for the data `b`.
///
/// Starts from `warm` when it is interior, otherwise from phase-I.
pub fn offline_center(
    problem: &TimeVaryingProblem,
    b: &DVector<f64>,
    eta_target: f64,
    tol: f64,
    warm: Option<&PrimalDualPoint>,
    opts: &CenteringOptions,
) -> Result<OracleCenter> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("oracle tolerance must be positive, got {tol}")));
    }
    let eta_to = eta_target.max(problem.complexity() / tol);
    let start = match warm {
        Some(w) if w.x.len() == problem.n() && problem.barrier().is_interior(&w.x) => w.clone(),
        _ => {
            let x = phase_one(problem, b, warm.map(|w| &w.x)).map_err(|e| match e {
                Error::InfeasibleStart => Error::InfeasibleInstance,
                e => e,
            })?;
            PrimalDualPoint::primal(x, problem.p())
        }
    };
    let eta_start = opts.eta_start.min(eta_to);
    let anchor = damped_newton(problem, &start, eta_start, b, CENTERED, opts.max_newton)?;
    let res = path_follow(problem, &anchor.point, eta_start, eta_to, b, opts)?;
    let res = polish(problem, res, b, opts.polish)?;
    Ok(OracleCenter {
        anchor: anchor.point,
        iterations: anchor.iterations + res.iterations,
        center: res,
    })
}

#[derive(Debug, Clone)]
pub struct OracleCenter {
    pub center: CenterResult,
    /// Center at the starting `η`, a good warm start for nearby `b`.
    pub anchor: PrimalDualPoint,
    pub iterations: usize,
}

impl OracleCenter {
    pub fn x(&self) -> &DVector<f64> {
        &self.center.point.x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierAggregate;
    use approx::assert_relative_eq;

    fn bound(n: usize, i: usize, sign: f64, offset: f64) -> BarrierTerm {
        let mut a = DVector::zeros(n);
        a[i] = sign;
        BarrierTerm::affine(a, offset).unwrap()
    }

    fn box_lp(c: [f64; 2], lo: f64, hi: f64) -> TimeVaryingProblem {
        let terms = (0..2)
            .flat_map(|i| [bound(2, i, -1.0, -lo), bound(2, i, 1.0, hi)])
            .collect();
        TimeVaryingProblem::new(
            DVector::from_vec(c.to_vec()),
            DMatrix::zeros(0, 2),
            BarrierAggregate::new(2, terms).unwrap(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn analytic_center_of_a_box() {
        let p = box_lp([0.0, 0.0], -1.0, 3.0);
        let start = PrimalDualPoint::primal(DVector::from_vec(vec![2.9, -0.9]), 0);
        let res = damped_newton(&p, &start, 1.0, &DVector::zeros(0), CENTERED, MAX_NEWTON).unwrap();
        assert!(res.iterations < 50);
        let res = polish(&p, res, &DVector::zeros(0), 1e-12).unwrap();
        assert!((res.point.x.clone() - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-8);
    }

    #[test]
    fn centered_start_takes_no_iterations() {
        let p = box_lp([0.0, 0.0], 0.0, 2.0);
        let start = PrimalDualPoint::primal(DVector::from_vec(vec![1.0, 1.0]), 0);
        let res = damped_newton(&p, &start, 1.0, &DVector::zeros(0), CENTERED, MAX_NEWTON).unwrap();
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn pinned_variable_is_recovered() {
        // min x₁ s.t. x₁ ≥ 0, x₁ = b, with a boxed free coordinate so P < N.
        let terms = vec![bound(2, 0, -1.0, 0.0), bound(2, 1, -1.0, 0.0), bound(2, 1, 1.0, 1.0)];
        let p = TimeVaryingProblem::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            BarrierAggregate::new(2, terms).unwrap(),
            vec![],
        )
        .unwrap();
        for b in [0.3, 2.0, 17.0] {
            let b = DVector::from_vec(vec![b]);
            let res = offline_center(&p, &b, 0.0, 1e-8, None, &CenteringOptions::default()).unwrap();
            assert_relative_eq!(res.x()[0], b[0], max_relative = 1e-10);
        }
    }

    #[test]
    fn unit_interval_gap_is_within_complexity_over_eta() {
        let p = TimeVaryingProblem::new(
            DVector::from_vec(vec![2.0, 0.0]),
            DMatrix::zeros(0, 2),
            BarrierAggregate::new(
                2,
                vec![
                    bound(2, 0, -1.0, 0.0),
                    bound(2, 0, 1.0, 1.0),
                    bound(2, 1, -1.0, 0.0),
                    bound(2, 1, 1.0, 1.0),
                ],
            )
            .unwrap(),
            vec![],
        )
        .unwrap();
        let tol = 1e-6;
        let res = offline_center(&p, &DVector::zeros(0), 0.0, tol, None, &CenteringOptions::default()).unwrap();
        let gap = p.c().dot(res.x());
        assert!(gap >= 0.0 && gap <= tol * 1.01, "gap {gap}");
    }

    #[test]
    fn short_step_schedule_reaches_the_same_center() {
        let p = box_lp([1.0, -0.5], 0.0, 1.0);
        let long = offline_center(&p, &DVector::zeros(0), 0.0, 1e-4, None, &CenteringOptions::default()).unwrap();
        let opts = CenteringOptions {
            schedule: PathSchedule::ShortStep,
            ..Default::default()
        };
        let short = offline_center(&p, &DVector::zeros(0), 0.0, 1e-4, None, &opts).unwrap();
        assert_relative_eq!(long.center.eta, short.center.eta);
        assert!((long.x() - short.x()).norm() < 1e-6);
    }

    #[test]
    fn phase_one_finds_interior_point_off_the_least_norm_solution() {
        // x₁ + x₂ = 10 with x₁ ∈ (6, 7): least-norm point (5, 5) is outside.
        let terms = vec![
            bound(2, 0, -1.0, -6.0),
            bound(2, 0, 1.0, 7.0),
            bound(2, 1, -1.0, 0.0),
        ];
        let p = TimeVaryingProblem::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            BarrierAggregate::new(2, terms).unwrap(),
            vec![],
        )
        .unwrap();
        let b = DVector::from_vec(vec![10.0]);
        let x = phase_one(&p, &b, None).unwrap();
        assert!(p.barrier().is_interior(&x));
        assert!((p.a() * &x - &b).norm() < 1e-9);
    }

    #[test]
    fn phase_one_reports_infeasibility() {
        // x₁ ∈ (0, 1) and x₁ = 2.
        let terms = vec![bound(2, 0, -1.0, 0.0), bound(2, 0, 1.0, 1.0), bound(2, 1, -1.0, 0.0)];
        let p = TimeVaryingProblem::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            BarrierAggregate::new(2, terms).unwrap(),
            vec![],
        )
        .unwrap();
        let b = DVector::from_vec(vec![2.0]);
        assert!(matches!(phase_one(&p, &b, None), Err(Error::InfeasibleStart)));
        assert!(matches!(
            offline_center(&p, &b, 0.0, 1e-8, None, &CenteringOptions::default()),
            Err(Error::InfeasibleInstance)
        ));
    }

    #[test]
    fn phase_one_handles_cones() {
        // ‖(x₁ − 5, x₂)‖ ≤ 1 with x₁ − x₂ = 5.
        let u = DMatrix::identity(2, 2);
        let term = BarrierTerm::second_order_cone(u, DVector::from_vec(vec![-5.0, 0.0]), DVector::zeros(2), 1.0).unwrap();
        let p = TimeVaryingProblem::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            BarrierAggregate::new(2, vec![term]).unwrap(),
            vec![],
        )
        .unwrap();
        let x = phase_one(&p, &DVector::from_vec(vec![5.0]), None).unwrap();
        assert!(p.barrier().is_interior(&x));
    }
}
