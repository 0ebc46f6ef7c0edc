//! Per-round optima, regret, violation and variation accounting.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::barrier::{BarrierTerm, TermKind};
use crate::centering::{offline_center, CenteringOptions};
use crate::error::{Error, Result};
use crate::kkt::PrimalDualPoint;
use crate::problem::TimeVaryingProblem;

/// Default oracle accuracy on the gap proxy `v_f/η`.
pub const ORACLE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeDistance {
    pub value: f64,
    /// True when `value` is `max(0, g(x))` rather than a Euclidean distance.
    pub surrogate: bool,
}

/// Distance from `x` to the set `{g ≤ 0}` of one term.
pub fn cone_distance(term: &BarrierTerm, x: &DVector<f64>) -> ConeDistance {
    match term.kind() {
        TermKind::AffineIneq => {
            let norm = term.affine_row_norm().unwrap_or(1.0);
            ConeDistance {
                value: term.constraint_value(x).max(0.0) / norm,
                surrogate: false,
            }
        }
        TermKind::SecondOrderCone if term.cone_map_is_orthonormal() => {
            let (u, t) = term.cone_image(x).expect("cone term has an image");
            ConeDistance {
                value: soc_distance(&u, t),
                surrogate: false,
            }
        }
        _ => ConeDistance {
            value: term.constraint_value(x).max(0.0),
            surrogate: true,
        },
    }
}

/// Euclidean distance from `(u, t)` to `{‖u‖ ≤ t}`.
pub fn soc_distance(u: &DVector<f64>, t: f64) -> f64 {
    let un = u.norm();
    if un <= t {
        0.0
    } else if un <= -t {
        (t * t + un * un).sqrt()
    } else {
        (un - t) / std::f64::consts::SQRT_2
    }
}

/// Source of per-round optima `x*_t`.
pub trait Oracle {
    fn optimum(&mut self, t: usize, b: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Precomputed optima; rounds without an entry are an error.
#[derive(Debug, Clone, Default)]
pub struct BatchOracle {
    optima: BTreeMap<usize, DVector<f64>>,
}

impl BatchOracle {
    pub fn new(optima: impl IntoIterator<Item = (usize, DVector<f64>)>) -> Self {
        Self {
            optima: optima.into_iter().collect(),
        }
    }

    /// Solves every round of the problem's stream in order.
    pub fn solve_stream(problem: &TimeVaryingProblem, tol: f64, opts: &CenteringOptions) -> Result<Self> {
        let mut lazy = PathOracle::new(problem, tol, *opts);
        let mut optima = BTreeMap::new();
        for (t, b) in problem.stream().iter().enumerate() {
            optima.insert(t, lazy.optimum(t, b)?);
        }
        Ok(Self { optima })
    }

    pub fn get(&self, t: usize) -> Option<&DVector<f64>> {
        self.optima.get(&t)
    }
}

impl Oracle for BatchOracle {
    fn optimum(&mut self, t: usize, _b: &DVector<f64>) -> Result<DVector<f64>> {
        self.optima.get(&t).cloned().ok_or(Error::MissingOracle { round: t })
    }
}

/// Lazy path-following oracle, warm-started from the previous round's
/// low-`η` center.
#[derive(Debug, Clone)]
pub struct PathOracle<'a> {
    problem: &'a TimeVaryingProblem,
    tol: f64,
    opts: CenteringOptions,
    warm: Option<PrimalDualPoint>,
    cache: BTreeMap<usize, DVector<f64>>,
}

impl<'a> PathOracle<'a> {
    pub fn new(problem: &'a TimeVaryingProblem, tol: f64, opts: CenteringOptions) -> Self {
        Self {
            problem,
            tol,
            opts,
            warm: None,
            cache: BTreeMap::new(),
        }
    }
}

impl Oracle for PathOracle<'_> {
    fn optimum(&mut self, t: usize, b: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some(x) = self.cache.get(&t) {
            return Ok(x.clone());
        }
        let res = offline_center(self.problem, b, 0.0, self.tol, self.warm.as_ref(), &self.opts)
            .map_err(|e| e.at_round(t))?;
        self.warm = Some(res.anchor.clone());
        let x = res.center.point.x;
        self.cache.insert(t, x.clone());
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: usize,
    pub obj: f64,
    pub obj_opt: f64,
    pub regret_inc: f64,
    pub eps_regret_inc: f64,
    pub eq_viol: f64,
    pub ineq_viol: f64,
    /// Some inequality distance was a surrogate.
    pub ineq_surrogate: bool,
    pub decrement: f64,
    pub eta: f64,
    /// `‖b_t − b_{t−1}‖`.
    pub b_shift: f64,
    /// `‖x*_t − x*_{t−1}‖`.
    pub opt_shift: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LedgerTotals {
    pub rounds: usize,
    pub regret: f64,
    pub eps_regret: f64,
    pub violation: f64,
    pub opt_variation: f64,
    pub b_variation: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsLedger {
    pub epsilon: f64,
    records: Vec<RoundRecord>,
    totals: LedgerTotals,
    last_b: Option<DVector<f64>>,
    last_opt: Option<DVector<f64>>,
}

pub const CSV_HEADER: &str = "t,obj,obj_opt,regret_inc,eps_regret_inc,eq_viol,ineq_viol,decrement,eta";

impl MetricsLedger {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            records: Vec::new(),
            totals: LedgerTotals::default(),
            last_b: None,
            last_opt: None,
        }
    }

    /// Sets round-0 data so that round 1 contributes `‖b_1 − b_0‖` and
    /// `‖x*_1 − x*_0‖` to the variations.
    pub fn with_reference(mut self, b0: DVector<f64>, opt0: DVector<f64>) -> Self {
        self.last_b = Some(b0);
        self.last_opt = Some(opt0);
        self
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn totals(&self) -> LedgerTotals {
        self.totals
    }

    /// Appends round `t` given the decision, the round data and its optimum.
    #[allow(clippy::too_many_arguments)]
    pub fn record_round(
        &mut self,
        problem: &TimeVaryingProblem,
        t: usize,
        x_t: &DVector<f64>,
        b_t: &DVector<f64>,
        opt_t: &DVector<f64>,
        decrement: f64,
        eta: f64,
    ) -> &RoundRecord {
        let obj = problem.c().dot(x_t);
        let obj_opt = problem.c().dot(opt_t);
        let regret_inc = obj - obj_opt;
        let eps_regret_inc = (regret_inc - self.epsilon).max(0.0);
        let eq_viol = problem.equality_residual(x_t, b_t).norm();
        let mut ineq_viol = 0.0;
        let mut ineq_surrogate = false;
        for term in problem.barrier().terms() {
            let d = cone_distance(term, x_t);
            ineq_viol += d.value;
            ineq_surrogate |= d.surrogate && d.value > 0.0;
        }
        let b_shift = self.last_b.as_ref().map_or(0.0, |b| (b_t - b).norm());
        let opt_shift = self.last_opt.as_ref().map_or(0.0, |o| (opt_t - o).norm());
        self.last_b = Some(b_t.clone());
        self.last_opt = Some(opt_t.clone());

        let tot = &mut self.totals;
        tot.rounds += 1;
        tot.regret += regret_inc;
        tot.eps_regret += eps_regret_inc;
        tot.violation += ineq_viol + eq_viol;
        tot.opt_variation += opt_shift;
        tot.b_variation += b_shift;
        self.records.push(RoundRecord {
            t,
            obj,
            obj_opt,
            regret_inc,
            eps_regret_inc,
            eq_viol,
            ineq_viol,
            ineq_surrogate,
            decrement,
            eta,
            b_shift,
            opt_shift,
        });
        self.records.last().expect("just pushed")
    }

    /// As [`record_round`](Self::record_round) with the optimum drawn from `oracle`.
    #[allow(clippy::too_many_arguments)]
    pub fn record_with_oracle(
        &mut self,
        problem: &TimeVaryingProblem,
        oracle: &mut dyn Oracle,
        t: usize,
        x_t: &DVector<f64>,
        b_t: &DVector<f64>,
        decrement: f64,
        eta: f64,
    ) -> Result<&RoundRecord> {
        let opt = oracle.optimum(t, b_t)?;
        Ok(self.record_round(problem, t, x_t, b_t, &opt, decrement, eta))
    }

    /// Sums rebuilt from the stored records.
    pub fn recompute(&self) -> LedgerTotals {
        self.records.iter().fold(LedgerTotals::default(), |mut acc, r| {
            acc.rounds += 1;
            acc.regret += r.regret_inc;
            acc.eps_regret += r.eps_regret_inc;
            acc.violation += r.ineq_viol + r.eq_viol;
            acc.opt_variation += r.opt_shift;
            acc.b_variation += r.b_shift;
            acc
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.obj, r.obj_opt, r.regret_inc, r.eps_regret_inc, r.eq_viol, r.ineq_viol, r.decrement, r.eta
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundLine {
    pub measured: f64,
    pub bound: f64,
    /// `bound − measured`.
    pub margin: f64,
    pub passed: bool,
}

impl BoundLine {
    fn new(measured: f64, bound: f64) -> Self {
        // Rounding slack for sums of identical terms computed two ways.
        let slack = 1e-9 * (1.0 + bound.abs());
        Self {
            measured,
            bound,
            margin: bound - measured,
            passed: measured <= bound + slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundParams {
    OipmTec { eta0: f64, beta: f64 },
    EpsilonOipmTec { eta: f64, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    /// `R_d ≤ 11v_fβ/(5η₀(β−1)) + ‖c‖V_T` (OIPM-TEC).
    pub regret: Option<BoundLine>,
    /// `R_ε ≤ ‖c‖V_T` (εOIPM-TEC with `η ≥ 11v_f/(5ε)`).
    pub eps_regret: Option<BoundLine>,
    /// `Vio ≤ V_b`.
    pub violation: BoundLine,
    pub passed: bool,
}

pub fn bound_check(ledger: &MetricsLedger, problem: &TimeVaryingProblem, params: BoundParams) -> BoundReport {
    let tot = ledger.totals();
    let vf = problem.complexity();
    let drift_term = problem.c().norm() * tot.opt_variation;
    let violation = BoundLine::new(tot.violation, tot.b_variation);
    let (regret, eps_regret) = match params {
        BoundParams::OipmTec { eta0, beta } => {
            let bound = 11.0 * vf * beta / (5.0 * eta0 * (beta - 1.0)) + drift_term;
            (Some(BoundLine::new(tot.regret, bound)), None)
        }
        BoundParams::EpsilonOipmTec { eta, epsilon } => {
            let applicable = eta >= 11.0 * vf / (5.0 * epsilon) && (ledger.epsilon - epsilon).abs() <= f64::EPSILON * epsilon;
            (None, applicable.then(|| BoundLine::new(tot.eps_regret, drift_term)))
        }
    };
    let passed = violation.passed && regret.is_none_or(|l| l.passed) && eps_regret.is_none_or(|l| l.passed);
    BoundReport {
        regret,
        eps_regret,
        violation,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierAggregate;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn interior_points_have_zero_distance() {
        let x = DVector::from_vec(vec![0.5, 0.1]);
        let aff = BarrierTerm::affine(DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        let quad = BarrierTerm::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), -1.0).unwrap();
        let soc = BarrierTerm::second_order_cone(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::zeros(1),
            DVector::from_vec(vec![1.0, 0.0]),
            0.0,
        )
        .unwrap();
        for t in [&aff, &quad, &soc] {
            assert_eq!(cone_distance(t, &x).value, 0.0);
        }
    }

    #[test]
    fn affine_distance_is_exact() {
        let t = BarrierTerm::affine(DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        let d = cone_distance(&t, &DVector::from_vec(vec![3.0, 7.0]));
        assert_eq!(d.value, 2.0);
        assert!(!d.surrogate);
    }

    #[test]
    fn raw_cone_point_below_the_apex() {
        assert_eq!(soc_distance(&DVector::zeros(1), -1.0), 1.0);
        // Orthonormal map: x = (t, u).
        let soc = BarrierTerm::second_order_cone(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::zeros(1),
            DVector::from_vec(vec![1.0, 0.0]),
            0.0,
        )
        .unwrap();
        let d = cone_distance(&soc, &DVector::from_vec(vec![-1.0, 0.0]));
        assert_eq!(d.value, 1.0);
        assert!(!d.surrogate);
        let d = cone_distance(&soc, &DVector::from_vec(vec![1.0, 3.0]));
        assert_relative_eq!(d.value, 2.0 / 2f64.sqrt());
    }

    #[test]
    fn soc_distance_matches_brute_force_projection() {
        // Minimize over points (v, s) on the cone boundary and the apex.
        let cases: [(f64, f64); 4] = [(2.0, 0.5), (3.0, -1.0), (0.5, -2.0), (1.0, 1.5)];
        for (un, t) in cases {
            let mut best = if un <= t { 0.0 } else { (un * un + t * t).sqrt() };
            for k in 0..=200_000 {
                let r = k as f64 * 1e-4;
                best = best.min(((un - r).powi(2) + (t - r).powi(2)).sqrt());
            }
            let got = soc_distance(&DVector::from_vec(vec![un]), t);
            assert!((got - best).abs() < 1e-6, "({un}, {t}): {got} vs {best}");
        }
    }

    #[test]
    fn non_orthonormal_cone_is_flagged() {
        let soc = BarrierTerm::second_order_cone(
            DMatrix::from_row_slice(1, 2, &[0.0, 2.0]),
            DVector::zeros(1),
            DVector::from_vec(vec![1.0, 0.0]),
            0.0,
        )
        .unwrap();
        let d = cone_distance(&soc, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(d.surrogate);
        assert_eq!(d.value, 1.0);
    }

    fn toy() -> TimeVaryingProblem {
        let terms = vec![
            BarrierTerm::affine(DVector::from_vec(vec![-1.0, 0.0]), 0.0).unwrap(),
            BarrierTerm::affine(DVector::from_vec(vec![0.0, -1.0]), 0.0).unwrap(),
        ];
        TimeVaryingProblem::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            BarrierAggregate::new(2, terms).unwrap(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn optimal_feasible_round_contributes_nothing() {
        let p = toy();
        let mut l = MetricsLedger::new(0.1);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let r = l.record_round(&p, 1, &x, &b, &x, 0.0, 1.0).clone();
        assert_eq!(r.regret_inc, 0.0);
        assert_eq!(r.eq_viol + r.ineq_viol, 0.0);
    }

    #[test]
    fn constant_stream_has_no_b_variation() {
        let p = toy();
        let b = DVector::from_vec(vec![2.0]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let mut l = MetricsLedger::new(0.0).with_reference(b.clone(), x.clone());
        for t in 1..=5 {
            l.record_round(&p, t, &x, &b, &x, 0.0, 1.0);
        }
        assert_eq!(l.totals().b_variation, 0.0);
    }

    #[test]
    fn missing_batch_entry_is_an_error() {
        let mut o = BatchOracle::new([(0, DVector::zeros(2))]);
        assert!(matches!(o.optimum(3, &DVector::zeros(1)), Err(Error::MissingOracle { round: 3 })));
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let p = toy();
        let mut l = MetricsLedger::new(0.0);
        let x = DVector::from_vec(vec![0.1, 1.9]);
        l.record_round(&p, 1, &x, &DVector::from_vec(vec![2.0]), &x, 0.1, 1.02);
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let fields: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields[1], p.c().dot(&x));
        assert_eq!(fields[8], 1.02);
    }
}
