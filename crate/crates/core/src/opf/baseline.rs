//! Online projected gradient descent, the comparison method for the
//! power-flow experiments.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::barrier::BarrierTerm;
use crate::centering::{offline_center, CenteringOptions};
use crate::error::{Error, Result};
use crate::kkt::PrimalDualPoint;
use crate::problem::TimeVaryingProblem;

/// Nearest point of `{x : g(x) ⪯ 0, Ax = b}` to `z`, computed as the
/// barrier center of `min τ s.t. ‖x − z‖ ≤ τ` to objective accuracy `tol`.
/// `warm` must be strictly interior to the inequality constraints to be used.
pub fn project(
    problem: &TimeVaryingProblem,
    b: &DVector<f64>,
    z: &DVector<f64>,
    warm: Option<&DVector<f64>>,
    tol: f64,
    opts: &CenteringOptions,
) -> Result<DVector<f64>> {
    let n = problem.n();
    let mut barrier = problem.barrier().embed(1);
    let mut u = DMatrix::zeros(n, n + 1);
    u.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut w = DVector::zeros(n + 1);
    w[n] = 1.0;
    barrier.push(BarrierTerm::second_order_cone(u, -z, w, 0.0)?)?;
    let mut a = DMatrix::zeros(problem.p(), n + 1);
    a.view_mut((0, 0), (problem.p(), n)).copy_from(problem.a());
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let lifted = TimeVaryingProblem::new(c, a, barrier, vec![])?;

    let start = warm.filter(|x| problem.barrier().is_interior(x)).map(|x| {
        let mut y = x.clone().resize_vertically(n + 1, 0.0);
        y[n] = (x - z).norm() + 1.0;
        PrimalDualPoint::primal(y, problem.p())
    });
    // The previous projection sits near the boundary, and near a degenerate
    // projection the KKT matrix can lose rank (or Newton stall) before `tol`
    // is reached. Retry cold, then at looser tolerances, at most three decades.
    let attempts = [(start.as_ref(), tol), (None, tol), (None, 10.0 * tol), (None, 100.0 * tol), (None, 1e3 * tol)];
    for (k, &(warm, tol)) in attempts.iter().enumerate() {
        match offline_center(&lifted, b, 0.0, tol, warm, opts) {
            Ok(res) => {
                if k > 1 {
                    warn!("projection solved at tolerance {tol:.1e} after a failed centering");
                }
                return Ok(res.x().rows(0, n).into_owned());
            }
            Err(Error::SingularKkt { .. } | Error::NonConvergent { .. }) if k + 1 < attempts.len() => {}
            Err(e) => return Err(e),
        }
    }
    unreachable!("the last attempt returns")
}

/// `x_{t+1} = Π_t(x_t − α_t c)` with `α_t = t^{−1/3}`, where `Π_t` projects
/// onto the feasible set for the most recently observed `b_t`.
#[derive(Debug, Clone)]
pub struct ProjectedGradient {
    x: DVector<f64>,
    round: usize,
    tol: f64,
    opts: CenteringOptions,
}

impl ProjectedGradient {
    pub fn new(x1: DVector<f64>, tol: f64, opts: CenteringOptions) -> Self {
        Self {
            x: x1,
            round: 1,
            tol,
            opts,
        }
    }

    pub fn step_size(t: usize) -> f64 {
        (t as f64).powf(-1.0 / 3.0)
    }

    /// Decision for the current round.
    pub fn decision(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Observes `b_t` for the current round and moves to the next decision.
    pub fn advance(&mut self, problem: &TimeVaryingProblem, b_t: &DVector<f64>) -> Result<()> {
        let t = self.round;
        let z = &self.x - problem.c() * Self::step_size(t);
        self.x = project(problem, b_t, &z, Some(&self.x), self.tol, &self.opts).map_err(|e| e.at_round(t))?;
        self.round += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierAggregate;

    fn unit_box(n: usize) -> TimeVaryingProblem {
        let mut terms = Vec::new();
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            terms.push(BarrierTerm::affine(e.clone(), 1.0).unwrap());
            terms.push(BarrierTerm::affine(-e, 1.0).unwrap());
        }
        let a = DMatrix::from_row_slice(1, n, &vec![1.0; n]);
        TimeVaryingProblem::new(
            DVector::from_element(n, 1.0),
            a,
            BarrierAggregate::new(n, terms).unwrap(),
            vec![DVector::from_element(1, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn projection_matches_closed_form() {
        // Onto {x ∈ [−1, 1]², x₁ + x₂ = 0}: (z₁ − z₂)/2 along (1, −1), clipped.
        let p = unit_box(2);
        let b = DVector::from_element(1, 0.0);
        for (z, want) in [((0.3, -0.1), 0.2), ((3.0, 0.0), 1.0), ((0.0, 0.4), -0.2)] {
            let zv = DVector::from_vec(vec![z.0, z.1]);
            let x = project(&p, &b, &zv, None, 1e-9, &CenteringOptions::default()).unwrap();
            assert!((x[0] - want).abs() < 1e-6, "{x} vs {want}");
            assert!((x[0] + x[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn step_sizes_decay() {
        assert_eq!(ProjectedGradient::step_size(1), 1.0);
        assert!((ProjectedGradient::step_size(8) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iterates_stay_feasible() {
        let p = unit_box(3);
        let b = DVector::from_element(1, 0.5);
        let mut pg = ProjectedGradient::new(DVector::from_vec(vec![0.1, 0.2, 0.2]), 1e-8, CenteringOptions::default());
        for _ in 0..5 {
            pg.advance(&p, &b).unwrap();
            assert!(p.barrier().is_interior(pg.decision()));
            assert!((pg.decision().sum() - 0.5).abs() < 1e-9);
        }
        assert_eq!(pg.round(), 6);
    }
}
