//! Lagrangian residual, KKT system and the infeasible Newton step.
//!
//! For `y = (x, ν)` the residual is `r = [ηc + ∇φ(x) + Aᵀν; Ax − b]` and the
//! KKT matrix is `D(y) = [[∇²φ(x), Aᵀ], [A, 0]]`. The Newton step solves
//! `D Δy = −r`.
//!
//! The Newton decrement is reported as `‖Δx‖_{∇²φ(x)}`. When the equality
//! block of `r` vanishes this equals `√(rᵀD⁻¹r) = ‖Δy‖_{D(y)}`; for
//! equality-infeasible points `rᵀD⁻¹r` can be negative because `D` is
//! indefinite, while the primal Hessian norm stays a proper length that
//! still obeys the quadratic-convergence bound.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::ldl::Ldl;
use crate::problem::TimeVaryingProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: DVector<f64>,
    pub nu: DVector<f64>,
}

impl PrimalDualPoint {
    pub fn new(x: DVector<f64>, nu: DVector<f64>) -> Self {
        Self { x, nu }
    }

    pub fn primal(x: DVector<f64>, p: usize) -> Self {
        Self { x, nu: DVector::zeros(p) }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.x.len() + self.nu.len());
        y.rows_mut(0, self.x.len()).copy_from(&self.x);
        y.rows_mut(self.x.len(), self.nu.len()).copy_from(&self.nu);
        y
    }

    pub fn check_dims(&self, problem: &TimeVaryingProblem) -> Result<()> {
        if self.x.len() != problem.n() {
            return Err(Error::DimensionMismatch {
                what: "primal point",
                expected: problem.n(),
                found: self.x.len(),
            });
        }
        if self.nu.len() != problem.p() {
            return Err(Error::DimensionMismatch {
                what: "multiplier",
                expected: problem.p(),
                found: self.nu.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KktMethod {
    /// Bunch–Kaufman factorization of the assembled matrix.
    #[default]
    Indefinite,
    /// Cholesky of `∇²φ` followed by Cholesky of the Schur complement `A∇²φ⁻¹Aᵀ`.
    BlockElimination,
}

#[derive(Debug, Clone)]
enum Factor {
    Indefinite(Ldl),
    Block {
        hessian: Cholesky<f64, Dyn>,
        schur: Option<Cholesky<f64, Dyn>>,
    },
}

/// Factorized `D(y)` at a fixed primal point. Independent of `η`, `b` and `ν`,
/// so one factorization serves every right-hand side at that point.
#[derive(Debug, Clone)]
pub struct KktSystem {
    x: DVector<f64>,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
    a: DMatrix<f64>,
    matrix: DMatrix<f64>,
    factor: Factor,
}

impl KktSystem {
    pub fn assemble(problem: &TimeVaryingProblem, x: &DVector<f64>) -> Result<Self> {
        Self::assemble_with(problem, x, KktMethod::default())
    }

    pub fn assemble_with(problem: &TimeVaryingProblem, x: &DVector<f64>, method: KktMethod) -> Result<Self> {
        let (n, p) = (problem.n(), problem.p());
        let (gradient, hessian) = problem.barrier().derivatives(x)?;
        let a = problem.a().clone();
        let mut matrix = DMatrix::zeros(n + p, n + p);
        matrix.view_mut((0, 0), (n, n)).copy_from(&hessian);
        matrix.view_mut((n, 0), (p, n)).copy_from(&a);
        matrix.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        let factor = match method {
            KktMethod::Indefinite => {
                let ldl = Ldl::factor(&matrix)?;
                let inertia = ldl.inertia();
                if inertia.positive != n || inertia.negative != p {
                    return Err(Error::SingularKkt {
                        pivot: 0.0,
                        condition: ldl.pivot_ratio(),
                    });
                }
                Factor::Indefinite(ldl)
            }
            KktMethod::BlockElimination => {
                let hchol = hessian.clone().cholesky().ok_or(Error::SingularKkt {
                    pivot: 0.0,
                    condition: 0.0,
                })?;
                let schur = if p > 0 {
                    let hinv_at = hchol.solve(&a.transpose());
                    let s = &a * hinv_at;
                    Some(s.cholesky().ok_or(Error::SingularKkt {
                        pivot: 0.0,
                        condition: 0.0,
                    })?)
                } else {
                    None
                };
                Factor::Block { hessian: hchol, schur }
            }
        };
        Ok(Self {
            x: x.clone(),
            gradient,
            hessian,
            a,
            matrix,
            factor,
        })
    }

    pub fn point(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn barrier_gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    pub fn hessian_block(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// Assembled `D(y)`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn raw_solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Indefinite(ldl) => ldl.solve(rhs),
            Factor::Block { hessian, schur } => {
                let n = self.n();
                let r1 = rhs.rows(0, n).into_owned();
                let r2 = rhs.rows(n, self.p()).into_owned();
                let hinv_r1 = hessian.solve(&r1);
                let dnu = match schur {
                    Some(s) => s.solve(&(&self.a * &hinv_r1 - r2)),
                    None => DVector::zeros(0),
                };
                let dx = hessian.solve(&(r1 - self.a.transpose() * &dnu));
                let mut out = DVector::zeros(n + self.p());
                out.rows_mut(0, n).copy_from(&dx);
                out.rows_mut(n, self.p()).copy_from(&dnu);
                out
            }
        }
    }

    /// Solves `D z = rhs` with two passes of iterative refinement.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut z = self.raw_solve(rhs);
        for _ in 0..2 {
            let res = rhs - &self.matrix * &z;
            if res.norm() <= f64::EPSILON * (1.0 + rhs.norm()) {
                break;
            }
            z += self.raw_solve(&res);
        }
        z
    }

    /// `‖v‖²_{∇²φ(x)}`.
    pub fn hessian_norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.hessian * v))
    }

    /// `‖v‖_{∇²φ(x)}`, or NaN when the computed form is negative beyond
    /// rounding, which happens once the Hessian has lost definiteness in
    /// floating point. Reporting 0 there would certify a point that is not.
    fn decrement_of(&self, v: &DVector<f64>) -> f64 {
        let hv = &self.hessian * v;
        let q = v.dot(&hv);
        if q < -1e-12 * v.norm() * hv.norm() {
            f64::NAN
        } else {
            q.max(0.0).sqrt()
        }
    }

    /// Top block `ηc + ∇φ(x) + Aᵀν` of the residual.
    pub fn stationarity(&self, c: &DVector<f64>, nu: &DVector<f64>, eta: f64) -> DVector<f64> {
        c * eta + &self.gradient + self.a.transpose() * nu
    }

    /// Newton step for `r = [ηc + ∇φ + Aᵀν; Ax − b]`, or with a zero equality
    /// block when `b` is `None` (the η-step).
    pub fn step(&self, c: &DVector<f64>, nu: &DVector<f64>, eta: f64, b: Option<&DVector<f64>>) -> NewtonStepResult {
        let (n, p) = (self.n(), self.p());
        let mut r = DVector::zeros(n + p);
        r.rows_mut(0, n).copy_from(&self.stationarity(c, nu, eta));
        let eq = match b {
            Some(b) => &self.a * &self.x - b,
            None => DVector::zeros(p),
        };
        r.rows_mut(n, p).copy_from(&eq);
        let delta_y = -self.solve(&r);
        let dx = delta_y.rows(0, n).into_owned();
        let decrement = self.decrement_of(&dx);
        NewtonStepResult {
            kkt_form: -r.dot(&delta_y),
            solve_residual: (&self.matrix * &delta_y + &r).norm(),
            residual_norm: r.norm(),
            delta_y,
            n,
            decrement,
            equality_residual_norm: eq.norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonStepResult {
    /// Stacked `Δy = (Δx, Δν)`.
    pub delta_y: DVector<f64>,
    n: usize,
    /// `‖Δx‖_{∇²φ(x)}`.
    pub decrement: f64,
    /// `‖Ax − b‖` at the point the step was computed from.
    pub equality_residual_norm: f64,
    /// `rᵀD⁻¹r = −rᵀΔy`; equals `decrement²` when `Ax = b`.
    pub kkt_form: f64,
    /// `‖D Δy + r‖`.
    pub solve_residual: f64,
    /// `‖r‖`.
    pub residual_norm: f64,
}

impl NewtonStepResult {
    pub fn dx(&self) -> DVector<f64> {
        self.delta_y.rows(0, self.n).into_owned()
    }

    pub fn dnu(&self) -> DVector<f64> {
        self.delta_y.rows(self.n, self.delta_y.len() - self.n).into_owned()
    }

    /// `y + α Δy`.
    pub fn apply(&self, y: &PrimalDualPoint, alpha: f64) -> PrimalDualPoint {
        PrimalDualPoint {
            x: &y.x + self.dx() * alpha,
            nu: &y.nu + self.dnu() * alpha,
        }
    }
}

/// `r_t(y, η) = [ηc + ∇φ(x) + Aᵀν; Ax − b]`.
pub fn residual(problem: &TimeVaryingProblem, y: &PrimalDualPoint, eta: f64, b: &DVector<f64>) -> Result<DVector<f64>> {
    y.check_dims(problem)?;
    if b.len() != problem.p() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: problem.p(),
            found: b.len(),
        });
    }
    let (n, p) = (problem.n(), problem.p());
    let grad = problem.barrier().gradient(&y.x)?;
    let mut r = DVector::zeros(n + p);
    r.rows_mut(0, n)
        .copy_from(&(problem.c() * eta + grad + problem.a().transpose() * &y.nu));
    r.rows_mut(n, p).copy_from(&problem.equality_residual(&y.x, b));
    Ok(r)
}

pub fn newton_step(problem: &TimeVaryingProblem, y: &PrimalDualPoint, eta: f64, b: &DVector<f64>) -> Result<NewtonStepResult> {
    y.check_dims(problem)?;
    if b.len() != problem.p() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: problem.p(),
            found: b.len(),
        });
    }
    let kkt = KktSystem::assemble(problem, &y.x)?;
    Ok(kkt.step(problem.c(), &y.nu, eta, Some(b)))
}

/// Re-centering step after `η` grows to `eta_plus`; keeps `Ax` unchanged.
pub fn eta_step(problem: &TimeVaryingProblem, y: &PrimalDualPoint, eta_plus: f64) -> Result<NewtonStepResult> {
    y.check_dims(problem)?;
    let kkt = KktSystem::assemble(problem, &y.x)?;
    Ok(kkt.step(problem.c(), &y.nu, eta_plus, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecrementReduction {
    pub before: f64,
    pub after: f64,
    /// `λ² / (1 − λ)²`, infinite when `λ ≥ 1`.
    pub bound: f64,
    /// Whether the contraction hypothesis `λ < 1` held.
    pub applicable: bool,
    pub passed: bool,
}

/// Takes one unit Newton step and compares the new decrement with `λ²/(1−λ)²`.
pub fn decrement_reduction_check(
    problem: &TimeVaryingProblem,
    y: &PrimalDualPoint,
    eta: f64,
    b: &DVector<f64>,
    slack: f64,
) -> Result<DecrementReduction> {
    let step = newton_step(problem, y, eta, b)?;
    let lambda = step.decrement;
    if lambda >= 1.0 {
        return Ok(DecrementReduction {
            before: lambda,
            after: f64::NAN,
            bound: f64::INFINITY,
            applicable: false,
            passed: false,
        });
    }
    let next = step.apply(y, 1.0);
    let after = newton_step(problem, &next, eta, b)?.decrement;
    let bound = lambda * lambda / ((1.0 - lambda) * (1.0 - lambda));
    Ok(DecrementReduction {
        before: lambda,
        after,
        bound,
        applicable: true,
        passed: after <= bound + slack,
    })
}

/// `‖h(y)‖_{D(y)}` with `h(y) = D⁻¹[∇φ(x) + Aᵀν; 0]`; at most `√v_f`.
pub fn dual_witness(problem: &TimeVaryingProblem, y: &PrimalDualPoint) -> Result<f64> {
    y.check_dims(problem)?;
    let kkt = KktSystem::assemble(problem, &y.x)?;
    let zero = DVector::zeros(problem.n());
    // The step at η = 0 is −h(y).
    Ok(kkt.step(&zero, &y.nu, 0.0, None).decrement)
}

/// Smallest singular value of `D` by inverse power iteration.
pub fn estimate_min_singular_value(kkt: &KktSystem, iterations: usize, tol: f64) -> f64 {
    let dim = kkt.matrix().nrows();
    if dim == 0 {
        return f64::INFINITY;
    }
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + 1.0 / (i as f64 + 2.0));
    v /= v.norm();
    let mut estimate = f64::INFINITY;
    for _ in 0..iterations.max(1) {
        let w = kkt.solve(&v);
        let wn = w.norm();
        if !(wn > 0.0) || !wn.is_finite() {
            return 0.0;
        }
        let next = 1.0 / wn;
        v = w / wn;
        let converged = (estimate - next).abs() <= tol * next;
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

/// Drift threshold `√(3m/160)` for a given `m`.
pub fn drift_threshold(m: f64) -> f64 {
    (3.0 * m / 160.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{BarrierAggregate, BarrierTerm};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn orthant(n: usize) -> BarrierAggregate {
        let terms = (0..n)
            .map(|i| {
                let mut a = DVector::zeros(n);
                a[i] = -1.0;
                BarrierTerm::affine(a, 0.0).unwrap()
            })
            .collect();
        BarrierAggregate::new(n, terms).unwrap()
    }

    fn two_dim() -> TimeVaryingProblem {
        TimeVaryingProblem::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            orthant(2),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_central_point_has_zero_residual() {
        // min x s.t. x ≥ 0: stationarity η − 1/x = 0 at x = 1/η.
        let p = TimeVaryingProblem::new(DVector::from_vec(vec![1.0]), DMatrix::zeros(0, 1), orthant(1), vec![]).unwrap();
        let eta = 4.0;
        let y = PrimalDualPoint::primal(DVector::from_vec(vec![0.25]), 0);
        let r = residual(&p, &y, eta, &DVector::zeros(0)).unwrap();
        assert!(r.norm() < 1e-15);
        let step = newton_step(&p, &y, eta, &DVector::zeros(0)).unwrap();
        assert_eq!(step.decrement, 0.0);
    }

    #[test]
    fn two_dimensional_residual_by_hand() {
        let p = two_dim();
        let y = PrimalDualPoint::primal(DVector::from_vec(vec![1.0, 1.0]), 1);
        let r = residual(&p, &y, 1.0, &DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(r.as_slice(), &[-1.0, -1.0, 0.0]);
    }

    #[test]
    fn two_dimensional_step_matches_dense_inverse() {
        let p = two_dim();
        let y = PrimalDualPoint::primal(DVector::from_vec(vec![1.0, 0.5]), 1);
        let b = DVector::from_vec(vec![2.0]);
        let step = newton_step(&p, &y, 1.0, &b).unwrap();
        // D = [[1, 0, 1], [0, 4, 1], [1, 1, 0]], r = [−1, −2, −0.5]
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 4.0, 1.0, 1.0, 1.0, 0.0]);
        let r = DVector::from_vec(vec![-1.0, -2.0, -0.5]);
        let expected = -d.try_inverse().unwrap() * &r;
        assert!((&step.delta_y - &expected).norm() < 1e-14);
        let next = step.apply(&y, 1.0);
        assert!((p.a() * &next.x - &b).norm() < 1e-14);
        assert_relative_eq!(step.equality_residual_norm, 0.5);
    }

    #[test]
    fn decrement_equals_kkt_norm_when_feasible() {
        let p = two_dim();
        let y = PrimalDualPoint::new(DVector::from_vec(vec![1.5, 0.5]), DVector::from_vec(vec![0.3]));
        let b = DVector::from_vec(vec![2.0]);
        let kkt = KktSystem::assemble(&p, &y.x).unwrap();
        let step = kkt.step(p.c(), &y.nu, 2.0, Some(&b));
        let dy_norm = step.delta_y.dot(&(kkt.matrix() * &step.delta_y)).sqrt();
        assert_relative_eq!(step.decrement, dy_norm, max_relative = 1e-10);
        assert_relative_eq!(step.decrement * step.decrement, step.kkt_form, max_relative = 1e-10);
    }

    #[test]
    fn kkt_form_goes_negative_off_the_affine_set() {
        // Pure equality violation at the η-center: rᵀD⁻¹r < 0, decrement > 0.
        let p = two_dim();
        let y = PrimalDualPoint::new(DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![1.0]));
        let step = newton_step(&p, &y, 0.0, &DVector::from_vec(vec![2.5])).unwrap();
        assert!(step.kkt_form < 0.0);
        assert!(step.decrement > 0.0);
    }

    #[test]
    fn eta_step_preserves_equalities() {
        let p = TimeVaryingProblem::new(
            DVector::from_vec(vec![1.0, 2.0, 0.5]),
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            orthant(3),
            vec![],
        )
        .unwrap();
        let y = PrimalDualPoint::primal(DVector::from_vec(vec![0.2, 0.3, 0.5]), 1);
        let step = eta_step(&p, &y, 3.0).unwrap();
        let next = step.apply(&y, 1.0);
        let drift = (p.a() * &next.x - p.a() * &y.x).norm();
        assert!(drift <= 1e-12);
        assert_relative_eq!(step.decrement * step.decrement, step.kkt_form, max_relative = 1e-10);
    }

    #[test]
    fn block_elimination_matches_indefinite_factorization() {
        let p = TimeVaryingProblem::new(
            DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0]),
            DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 1.0, 0.0, 1.0, -1.0, 2.0]),
            orthant(4),
            vec![],
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.3, 1.2, 0.7, 2.0]);
        let nu = DVector::from_vec(vec![0.1, -0.2]);
        let b = DVector::from_vec(vec![4.0, 3.0]);
        let s1 = KktSystem::assemble_with(&p, &x, KktMethod::Indefinite).unwrap().step(p.c(), &nu, 1.5, Some(&b));
        let s2 = KktSystem::assemble_with(&p, &x, KktMethod::BlockElimination)
            .unwrap()
            .step(p.c(), &nu, 1.5, Some(&b));
        assert!((&s1.delta_y - &s2.delta_y).norm() <= 1e-10 * (1.0 + s1.delta_y.norm()));
    }

    #[test]
    fn singular_hessian_is_reported() {
        // Only x₁ is bounded; x₂ has no curvature and no equality row.
        let mut a = DVector::zeros(2);
        a[0] = -1.0;
        let barrier = BarrierAggregate::new(2, vec![BarrierTerm::affine(a, 0.0).unwrap()]).unwrap();
        let p = TimeVaryingProblem::new(DVector::zeros(2), DMatrix::zeros(0, 2), barrier, vec![]).unwrap();
        let y = PrimalDualPoint::primal(DVector::from_vec(vec![1.0, 0.0]), 0);
        assert!(matches!(newton_step(&p, &y, 1.0, &DVector::zeros(0)), Err(Error::SingularKkt { .. })));
    }

    #[test]
    fn dual_witness_single_affine_is_one() {
        let p = TimeVaryingProblem::new(DVector::from_vec(vec![1.0]), DMatrix::zeros(0, 1), orthant(1), vec![]).unwrap();
        for x in [0.5, 3.0] {
            let y = PrimalDualPoint::primal(DVector::from_vec(vec![x]), 0);
            assert_relative_eq!(dual_witness(&p, &y).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dual_witness_ignores_multipliers() {
        let p = two_dim();
        let x = DVector::from_vec(vec![0.4, 1.6]);
        let a = dual_witness(&p, &PrimalDualPoint::new(x.clone(), DVector::from_vec(vec![0.0]))).unwrap();
        let b = dual_witness(&p, &PrimalDualPoint::new(x, DVector::from_vec(vec![7.0]))).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
        assert!(a <= 2f64.sqrt() + 1e-8);
    }

    #[test]
    fn inverse_iteration_matches_eigen_decomposition() {
        let p = two_dim();
        let kkt = KktSystem::assemble(&p, &DVector::from_vec(vec![0.7, 1.9])).unwrap();
        let est = estimate_min_singular_value(&kkt, 200, 1e-12);
        let eig = kkt.matrix().clone().symmetric_eigen().eigenvalues;
        let smin = eig.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
        assert_relative_eq!(est, smin, max_relative = 1e-6);
    }

    #[test]
    fn dimension_errors() {
        let p = two_dim();
        let y = PrimalDualPoint::primal(DVector::from_vec(vec![1.0]), 1);
        assert!(matches!(
            residual(&p, &y, 1.0, &DVector::from_vec(vec![1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
