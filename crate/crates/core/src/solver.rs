//! Round-driven online solvers.
//!
//! Each round implements the current decision, observes the new right-hand
//! side `b_t`, and updates: one infeasible Newton step toward the new data
//! (t-step), then for OIPM-TEC a growth `η ← βη` and a re-centering step
//! (η-step). εOIPM-TEC keeps `η` fixed and only takes the t-step.

use log::{debug, warn};
use nalgebra::DVector;

use crate::centering::{damped_newton, path_follow, phase_one, CenteringOptions, CENTERED, FULL_STEP};
use crate::error::{Error, Result};
use crate::kkt::{drift_threshold, estimate_min_singular_value, KktSystem, NewtonStepResult, PrimalDualPoint};
use crate::problem::TimeVaryingProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    OipmTec,
    EpsilonOipmTec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftPolicy {
    /// Log a warning and take the regular updates anyway.
    Warn,
    /// Take up to `max_extra` additional damped Newton steps to restore the
    /// certificate.
    Correct { max_extra: usize },
}

impl Default for DriftPolicy {
    fn default() -> Self {
        DriftPolicy::Correct { max_extra: 5 }
    }
}

/// Largest growth factor for which one η-step re-centers: `1 + 1/(8√v_f)`.
pub fn beta_cap(complexity: f64) -> f64 {
    1.0 + 1.0 / (8.0 * complexity.sqrt())
}

pub fn default_beta(complexity: f64) -> f64 {
    beta_cap(complexity).min(1.02)
}

/// Smallest fixed `η` meeting the ε-regret requirement: `11v_f/(5ε)`.
pub fn epsilon_eta(complexity: f64, epsilon: f64) -> f64 {
    11.0 * complexity / (5.0 * epsilon)
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub algorithm: Algorithm,
    /// Initial `η` (OIPM-TEC) or requested fixed `η` (εOIPM-TEC).
    pub eta0: f64,
    /// Growth factor; `None` selects [`default_beta`].
    pub beta: Option<f64>,
    pub epsilon: f64,
    pub drift_policy: DriftPolicy,
    pub centering: CenteringOptions,
    /// Optional warm start; phase-I runs when absent or not interior.
    pub start: Option<PrimalDualPoint>,
}

impl SolverOptions {
    pub fn oipm_tec(eta0: f64) -> Self {
        Self {
            algorithm: Algorithm::OipmTec,
            eta0,
            beta: None,
            epsilon: 0.0,
            drift_policy: DriftPolicy::default(),
            centering: CenteringOptions::default(),
            start: None,
        }
    }

    pub fn epsilon_oipm_tec(eta: f64, epsilon: f64) -> Self {
        Self {
            algorithm: Algorithm::EpsilonOipmTec,
            epsilon,
            ..Self::oipm_tec(eta)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub y: PrimalDualPoint,
    pub eta: f64,
    pub round: usize,
    /// Growth factor; exactly 1 for εOIPM-TEC.
    pub beta: f64,
    pub last_decrement: f64,
    pub algorithm: Algorithm,
    pub eta0: f64,
    /// Smallest singular value estimate of the KKT matrix.
    pub m: f64,
    pub drift_threshold: f64,
    pub drift_policy: DriftPolicy,
    /// Right-hand side the current point is centered for.
    pub b: DVector<f64>,
    /// Newton iterations spent by the offline initialization.
    pub init_iterations: usize,
    kkt: Option<KktSystem>,
}

#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    /// Decision implemented this round, computed before `b_t` was seen.
    pub decision: DVector<f64>,
    pub drift: f64,
    pub drift_exceeded: bool,
    /// Decrement at the old point for the new data.
    pub decrement_observed: f64,
    /// Decrement after the t-step.
    pub decrement_after_t_step: f64,
    /// Decrement right after `η` grows, before the η-step.
    pub decrement_after_growth: Option<f64>,
    /// Certificate after all updates.
    pub decrement: f64,
    pub extra_steps: usize,
    /// Certificate not re-established or drift bound violated.
    pub flagged: bool,
    /// `η` in force after the round.
    pub eta: f64,
}

/// Unit step inside the quadratic-convergence region, `1/(1+λ)` outside it.
fn damping(decrement: f64) -> f64 {
    if decrement > FULL_STEP {
        1.0 / (1.0 + decrement)
    } else {
        1.0
    }
}

impl SolverState {
    fn kkt(&mut self, problem: &TimeVaryingProblem) -> Result<&KktSystem> {
        let stale = self.kkt.as_ref().is_none_or(|k| k.point() != &self.y.x);
        if stale {
            self.kkt = Some(KktSystem::assemble(problem, &self.y.x)?);
        }
        Ok(self.kkt.as_ref().expect("cache filled above"))
    }

    fn step(&mut self, problem: &TimeVaryingProblem, eta: f64, b: Option<&DVector<f64>>) -> Result<NewtonStepResult> {
        let nu = self.y.nu.clone();
        Ok(self.kkt(problem)?.step(problem.c(), &nu, eta, b))
    }

    /// Re-estimates `m` and the drift threshold at the current point.
    pub fn refresh_drift_threshold(&mut self, problem: &TimeVaryingProblem) -> Result<f64> {
        let m = estimate_min_singular_value(self.kkt(problem)?, 20, 1e-6);
        self.m = m;
        self.drift_threshold = drift_threshold(m);
        Ok(self.drift_threshold)
    }

    /// Decrement at `(y, η, b)`; a diagnostic that never mutates the iterate.
    pub fn certify(&mut self, problem: &TimeVaryingProblem, b: &DVector<f64>) -> Result<f64> {
        let eta = self.eta;
        Ok(self.step(problem, eta, Some(b))?.decrement)
    }

    fn take(&mut self, problem: &TimeVaryingProblem, step: &NewtonStepResult, alpha: f64) -> Result<()> {
        let mut alpha = alpha;
        for _ in 0..60 {
            let next = step.apply(&self.y, alpha);
            if problem.barrier().is_interior(&next.x) {
                self.y = next;
                return Ok(());
            }
            alpha *= 0.5;
        }
        Err(Error::DomainViolation {
            term: problem.barrier().first_violation(&step.apply(&self.y, alpha).x).unwrap_or(0),
        })
    }

    /// One round: implements the current decision, then updates for `b_t`.
    pub fn advance(&mut self, problem: &TimeVaryingProblem, b_t: &DVector<f64>) -> Result<RoundTrace> {
        let round = self.round + 1;
        self.advance_inner(problem, b_t, round).map_err(|e| e.at_round(round))
    }

    fn advance_inner(&mut self, problem: &TimeVaryingProblem, b_t: &DVector<f64>, round: usize) -> Result<RoundTrace> {
        if b_t.len() != problem.p() {
            return Err(Error::DimensionMismatch {
                what: "right-hand side",
                expected: problem.p(),
                found: b_t.len(),
            });
        }
        let decision = self.y.x.clone();
        let drift = (b_t - &self.b).norm();
        let drift_exceeded = drift > self.drift_threshold;
        let eta = self.eta;

        let mut step = self.step(problem, eta, Some(b_t))?;
        let decrement_observed = step.decrement;
        let mut extra_steps = 0;
        if drift_exceeded {
            match self.drift_policy {
                DriftPolicy::Warn => warn!(
                    "round {round}: drift {drift:.3e} exceeds threshold {:.3e}",
                    self.drift_threshold
                ),
                DriftPolicy::Correct { max_extra } => {
                    debug!(
                        "round {round}: drift {drift:.3e} exceeds threshold {:.3e}, correcting",
                        self.drift_threshold
                    );
                    while step.decrement > FULL_STEP && extra_steps < max_extra {
                        self.take(problem, &step, damping(step.decrement))?;
                        step = self.step(problem, eta, Some(b_t))?;
                        extra_steps += 1;
                    }
                }
            }
        }

        // t-step. Full when the certificate holds; outside it a full step can
        // leave the Dikin ellipsoid, so it is damped instead.
        self.take(problem, &step, damping(step.decrement))?;
        self.b = b_t.clone();
        let decrement_after_t_step = self.step(problem, eta, Some(b_t))?.decrement;

        let mut decrement_after_growth = None;
        if self.algorithm == Algorithm::OipmTec {
            self.eta = self.eta0 * self.beta.powi(round as i32);
            let eta_step = self.step(problem, self.eta, None)?;
            decrement_after_growth = Some(eta_step.decrement);
            self.take(problem, &eta_step, damping(eta_step.decrement))?;
        }

        let mut decrement = self.certify(problem, b_t)?;
        if !(decrement <= CENTERED) {
            if let DriftPolicy::Correct { max_extra } = self.drift_policy {
                while !(decrement <= CENTERED) && extra_steps < max_extra {
                    let s = self.step(problem, self.eta, Some(b_t))?;
                    self.take(problem, &s, damping(s.decrement))?;
                    decrement = self.certify(problem, b_t)?;
                    extra_steps += 1;
                }
            }
        }
        let flagged = !(decrement <= CENTERED) || (drift_exceeded && self.drift_policy == DriftPolicy::Warn);
        if !(decrement <= CENTERED) {
            warn!("round {round}: certificate {decrement:.3e} above 1/9");
        }
        self.last_decrement = decrement;
        self.round = round;
        Ok(RoundTrace {
            round,
            decision,
            drift,
            drift_exceeded,
            decrement_observed,
            decrement_after_t_step,
            decrement_after_growth,
            decrement,
            extra_steps,
            flagged,
            eta: self.eta,
        })
    }

    /// Current decision `x`.
    pub fn decision(&self) -> &DVector<f64> {
        &self.y.x
    }
}

/// Offline phase: interior point, then centering at the starting `η` until the
/// decrement is at most 1/9.
pub fn initialize(problem: &TimeVaryingProblem, opts: &SolverOptions) -> Result<SolverState> {
    let b0 = problem
        .stream()
        .first()
        .cloned()
        .ok_or_else(|| Error::Config("right-hand-side stream is empty".into()))?;
    initialize_at(problem, &b0, opts)
}

pub fn initialize_at(problem: &TimeVaryingProblem, b0: &DVector<f64>, opts: &SolverOptions) -> Result<SolverState> {
    let vf = problem.complexity();
    if !(opts.eta0 > 0.0) || !opts.eta0.is_finite() {
        return Err(Error::Config(format!("η must be positive and finite, got {}", opts.eta0)));
    }
    let (eta, beta) = match opts.algorithm {
        Algorithm::OipmTec => {
            let beta = opts.beta.unwrap_or_else(|| default_beta(vf));
            if !(beta > 1.0) || !beta.is_finite() {
                return Err(Error::Config(format!("β must exceed 1, got {beta}")));
            }
            let cap = beta_cap(vf);
            if beta > cap {
                warn!("β = {beta} exceeds the re-centering cap {cap:.6} for v_f = {vf}; the certificate may fail");
            }
            (opts.eta0, beta)
        }
        Algorithm::EpsilonOipmTec => {
            if !(opts.epsilon > 0.0) {
                return Err(Error::Config(format!("ε must be positive, got {}", opts.epsilon)));
            }
            (opts.eta0.max(epsilon_eta(vf, opts.epsilon)), 1.0)
        }
    };

    let warm = opts
        .start
        .as_ref()
        .filter(|s| s.check_dims(problem).is_ok() && problem.barrier().is_interior(&s.x));
    let mut centered = None;
    if let Some(w) = warm {
        let kkt = KktSystem::assemble(problem, &w.x)?;
        let step = kkt.step(problem.c(), &w.nu, eta, Some(b0));
        if step.decrement <= CENTERED && step.equality_residual_norm <= 1e-10 * (1.0 + b0.norm()) {
            centered = Some((w.clone(), step.decrement, 0, kkt));
        }
    }
    let (y, decrement, iterations, kkt) = match centered {
        Some(c) => c,
        None => {
            let start = match warm {
                Some(w) => w.clone(),
                None => PrimalDualPoint::primal(
                    phase_one(problem, b0, opts.start.as_ref().map(|s| &s.x))?,
                    problem.p(),
                ),
            };
            let eta_start = opts.centering.eta_start.min(eta);
            let first = damped_newton(problem, &start, eta_start, b0, CENTERED, opts.centering.max_newton)?;
            let res = path_follow(problem, &first.point, eta_start, eta, b0, &opts.centering)?;
            let kkt = KktSystem::assemble(problem, &res.point.x)?;
            (res.point, res.decrement, first.iterations + res.iterations, kkt)
        }
    };
    let m = estimate_min_singular_value(&kkt, 20, 1e-6);
    debug!("initialized: η = {eta:e}, decrement = {decrement:.3e}, m = {m:.3e}, {iterations} Newton steps");
    Ok(SolverState {
        y,
        eta,
        round: 0,
        beta,
        last_decrement: decrement,
        algorithm: opts.algorithm,
        eta0: eta,
        m,
        drift_threshold: drift_threshold(m),
        drift_policy: opts.drift_policy,
        b: b0.clone(),
        init_iterations: iterations,
        kkt: Some(kkt),
    })
}

/// Algorithm 1 round.
pub fn oipm_tec_round(state: &mut SolverState, problem: &TimeVaryingProblem, b_t: &DVector<f64>) -> Result<RoundTrace> {
    debug_assert_eq!(state.algorithm, Algorithm::OipmTec);
    state.advance(problem, b_t)
}

/// Algorithm 2 round.
pub fn epsilon_oipm_tec_round(state: &mut SolverState, problem: &TimeVaryingProblem, b_t: &DVector<f64>) -> Result<RoundTrace> {
    debug_assert_eq!(state.algorithm, Algorithm::EpsilonOipmTec);
    state.advance(problem, b_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{BarrierAggregate, BarrierTerm};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn simplex_lp(stream: Vec<f64>) -> TimeVaryingProblem {
        let n = 3;
        let terms = (0..n)
            .flat_map(|i| {
                let mut lo = DVector::zeros(n);
                lo[i] = -1.0;
                let mut hi = DVector::zeros(n);
                hi[i] = 1.0;
                [BarrierTerm::affine(lo, 0.0).unwrap(), BarrierTerm::affine(hi, 2.0).unwrap()]
            })
            .collect();
        TimeVaryingProblem::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            BarrierAggregate::new(n, terms).unwrap(),
            stream.into_iter().map(|b| DVector::from_vec(vec![b])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn no_drift_round_grows_eta_by_beta_and_stays_certified() {
        let p = simplex_lp(vec![3.0, 3.0, 3.0]);
        let mut s = initialize(&p, &SolverOptions::oipm_tec(1.0)).unwrap();
        assert!(s.last_decrement <= CENTERED);
        let beta = s.beta;
        for t in 1..=2 {
            let tr = oipm_tec_round(&mut s, &p, &p.stream()[t]).unwrap();
            assert!(tr.decrement <= CENTERED);
            assert!(!tr.flagged);
            assert_eq!(tr.eta, beta.powi(t as i32));
        }
    }

    #[test]
    fn default_beta_respects_cap() {
        assert_eq!(default_beta(1.0), 1.02);
        assert_relative_eq!(default_beta(199.0), 1.0 + 1.0 / (8.0 * 199f64.sqrt()));
    }

    #[test]
    fn epsilon_mode_fixes_eta_and_zero_drift_is_a_fixed_point() {
        let p = simplex_lp(vec![3.0, 3.0]);
        let opts = SolverOptions::epsilon_oipm_tec(1.0, 0.5);
        let mut s = initialize(&p, &opts).unwrap();
        assert_relative_eq!(s.eta, epsilon_eta(6.0, 0.5));
        // Tighten to an exact center, then a zero-drift round is a zero step.
        let b = p.stream()[0].clone();
        let c = damped_newton(&p, &s.y, s.eta, &b, 1e-13, 100).unwrap();
        s.y = c.point;
        let before = s.y.x.clone();
        let tr = epsilon_oipm_tec_round(&mut s, &p, &b).unwrap();
        assert_eq!(tr.eta, s.eta0);
        assert!((&s.y.x - &before).norm() <= 1e-10 * before.norm());
    }

    #[test]
    fn warm_start_that_is_centered_costs_nothing() {
        let p = simplex_lp(vec![3.0]);
        let s = initialize(&p, &SolverOptions::oipm_tec(1.0)).unwrap();
        let mut opts = SolverOptions::oipm_tec(1.0);
        opts.start = Some(s.y.clone());
        let again = initialize(&p, &opts).unwrap();
        assert_eq!(again.init_iterations, 0);
    }

    #[test]
    fn decisions_lag_the_equality_data_by_one_round() {
        let p = simplex_lp(vec![3.0, 3.01, 2.995, 3.02]);
        let mut s = initialize(&p, &SolverOptions::oipm_tec(1.0)).unwrap();
        for t in 1..=3 {
            let tr = s.advance(&p, &p.stream()[t]).unwrap();
            let lag = (p.a() * &tr.decision - &p.stream()[t - 1]).norm();
            assert!(lag <= 1e-10 * (1.0 + p.stream()[t - 1].norm()));
            assert!(p.barrier().is_interior(&tr.decision));
        }
    }

    #[test]
    fn certify_reports_large_perturbations() {
        let p = simplex_lp(vec![3.0]);
        let mut s = initialize(&p, &SolverOptions::oipm_tec(1.0)).unwrap();
        s.y.x = DVector::from_vec(vec![1.9, 0.05, 1.05]);
        let d = s.certify(&p, &p.stream()[0].clone()).unwrap();
        assert!(d > CENTERED);
    }

    #[test]
    fn certify_matches_dense_inverse_on_small_case() {
        // N = 2, P = 1: D is 3×3.
        let terms = vec![
            BarrierTerm::affine(DVector::from_vec(vec![-1.0, 0.0]), 0.0).unwrap(),
            BarrierTerm::affine(DVector::from_vec(vec![0.0, -1.0]), 0.0).unwrap(),
        ];
        let p = TimeVaryingProblem::new(
            DVector::from_vec(vec![1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            BarrierAggregate::new(2, terms).unwrap(),
            vec![DVector::from_vec(vec![2.0])],
        )
        .unwrap();
        let mut s = initialize(&p, &SolverOptions::oipm_tec(1.0)).unwrap();
        s.y.x = DVector::from_vec(vec![1.2, 0.8]);
        s.y.nu = DVector::from_vec(vec![-0.3]);
        let b = p.stream()[0].clone();
        let got = s.certify(&p, &b).unwrap();
        let (x1, x2) = (1.2, 0.8);
        let d = DMatrix::from_row_slice(3, 3, &[1.0 / (x1 * x1), 0.0, 1.0, 0.0, 1.0 / (x2 * x2), 1.0, 1.0, 1.0, 0.0]);
        let r = DVector::from_vec(vec![s.eta * 1.0 - 1.0 / x1 - 0.3, s.eta * 0.5 - 1.0 / x2 - 0.3, 0.0]);
        let expected = r.dot(&(d.try_inverse().unwrap() * &r)).sqrt();
        assert_relative_eq!(got, expected, max_relative = 1e-10);
    }

    #[test]
    fn jump_far_past_the_threshold_stays_interior_and_recovers() {
        let mut stream = vec![3.0];
        stream.extend([5.9; 12]);
        let p = simplex_lp(stream);
        let mut s = initialize(&p, &SolverOptions::epsilon_oipm_tec(1.0, 0.05)).unwrap();
        let mut last = None;
        for b in &p.stream()[1..] {
            let tr = s.advance(&p, b).unwrap();
            assert!(p.barrier().is_interior(s.decision()));
            last = Some(tr);
        }
        let last = last.unwrap();
        assert_eq!(last.round, 12);
        assert!(!last.flagged, "certificate {}", last.decrement);
        assert!(p.equality_residual(s.decision(), &p.stream()[12]).norm() < 1e-8);
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = simplex_lp(vec![3.0]);
        let mut o = SolverOptions::oipm_tec(1.0);
        o.beta = Some(1.0);
        assert!(matches!(initialize(&p, &o), Err(Error::Config(_))));
        let o = SolverOptions::epsilon_oipm_tec(1.0, 0.0);
        assert!(matches!(initialize(&p, &o), Err(Error::Config(_))));
        let empty = simplex_lp(vec![]);
        assert!(matches!(initialize(&empty, &SolverOptions::oipm_tec(1.0)), Err(Error::Config(_))));
    }
}
