//! Random bounded LP/SOCP instances and right-hand-side streams for tests and
//! experiments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierAggregate, BarrierTerm};
use crate::error::{Error, Result};
use crate::problem::TimeVaryingProblem;
use crate::solver::{RoundTrace, SolverState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Lp,
    Socp,
}

/// Shape of a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: InstanceKind,
    pub n: usize,
    pub p: usize,
    /// Extra random affine cuts beyond the box.
    #[serde(default)]
    pub cuts: usize,
    /// Number of cone terms (SOCP only).
    #[serde(default = "default_cones")]
    pub cones: usize,
}

fn default_cones() -> usize {
    2
}

impl SyntheticSpec {
    pub fn lp(n: usize, p: usize) -> Self {
        Self {
            kind: InstanceKind::Lp,
            n,
            p,
            cuts: n / 2,
            cones: 0,
        }
    }

    pub fn socp(n: usize, p: usize) -> Self {
        Self {
            kind: InstanceKind::Socp,
            n,
            p,
            cuts: 0,
            cones: 2,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box–Muller; one variate per call keeps the stream layout simple.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub(crate) fn gaussian_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(rng))
}

pub(crate) fn unit_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Random instance inside the box `[−1, 1]^N` with a strictly interior point
/// near the origin; the stream holds only `b_0`.
pub fn random_instance<R: Rng>(rng: &mut R, spec: &SyntheticSpec) -> Result<TimeVaryingProblem> {
    let n = spec.n;
    if n == 0 || spec.p >= n {
        return Err(Error::Config(format!("need 0 ≤ P < N, got N = {n}, P = {}", spec.p)));
    }
    let center = DVector::from_fn(n, |_, _| 0.4 * (rng.random::<f64>() - 0.5));
    let mut terms = Vec::new();
    for i in 0..n {
        let mut lo = DVector::zeros(n);
        lo[i] = -1.0;
        terms.push(BarrierTerm::affine(lo, 1.0)?);
        let mut hi = DVector::zeros(n);
        hi[i] = 1.0;
        terms.push(BarrierTerm::affine(hi, 1.0)?);
    }
    for _ in 0..spec.cuts {
        let a = unit_vector(rng, n);
        let slack = 0.3 + rng.random::<f64>();
        terms.push(BarrierTerm::affine(a.clone(), a.dot(&center) + slack)?);
    }
    if spec.kind == InstanceKind::Socp {
        for _ in 0..spec.cones {
            let k = 1 + (rng.random::<u32>() as usize) % n.min(3);
            let u = DMatrix::from_fn(k, n, |_, _| 0.5 * gaussian(rng));
            let u0 = gaussian_vector(rng, k) * 0.3;
            let w = gaussian_vector(rng, n) * 0.2;
            let at_center = (&u * &center + &u0).norm() - w.dot(&center);
            let w0 = at_center + 0.5 + rng.random::<f64>();
            terms.push(BarrierTerm::second_order_cone(u, u0, w, w0)?);
        }
    }
    let barrier = BarrierAggregate::new(n, terms)?;
    let a = DMatrix::from_fn(spec.p, n, |_, _| gaussian(rng));
    let c = gaussian_vector(rng, n);
    let b0 = &a * &center;
    TimeVaryingProblem::new(c, a, barrier, vec![b0])
}

fn pulled_direction<R: Rng>(rng: &mut R, b0: &DVector<f64>, last: &DVector<f64>, step: f64) -> DVector<f64> {
    let pull = if step > 0.0 { (b0 - last) * (0.2 / step) } else { DVector::zeros(b0.len()) };
    let mut dir = unit_vector(rng, b0.len()) + pull;
    let norm = dir.norm();
    if norm > 0.0 {
        dir /= norm;
    }
    dir
}

/// Stream `b_0, …, b_T` with `‖b_t − b_{t−1}‖ = step` exactly, random
/// directions, and a pull back toward `b_0` that keeps the walk local.
pub fn drifting_stream<R: Rng>(rng: &mut R, b0: &DVector<f64>, step: f64, horizon: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(b0.clone());
    if b0.is_empty() {
        out.resize(horizon + 1, b0.clone());
        return out;
    }
    for _ in 0..horizon {
        let last = out.last().expect("non-empty").clone();
        let dir = pulled_direction(rng, b0, &last, step);
        out.push(last + dir * step);
    }
    out
}

#[derive(Debug, Clone)]
pub struct LockstepRun {
    pub stream: Vec<DVector<f64>>,
    /// One trace list per solver, in input order.
    pub traces: Vec<Vec<RoundTrace>>,
}

/// Runs several solvers on one stream generated online: each round's step
/// length is `fraction` times the smallest drift threshold `√(3m/160)` among
/// the solvers, with `m` re-estimated at their current iterates.
pub fn lockstep_drift_run<R: Rng>(
    rng: &mut R,
    problem: &TimeVaryingProblem,
    states: &mut [SolverState],
    fraction: f64,
    horizon: usize,
) -> Result<LockstepRun> {
    let b0 = problem
        .stream()
        .first()
        .cloned()
        .ok_or_else(|| Error::Config("right-hand-side stream is empty".into()))?;
    let mut stream = vec![b0.clone()];
    let mut traces = vec![Vec::with_capacity(horizon); states.len()];
    for _ in 0..horizon {
        let mut threshold = f64::INFINITY;
        for s in states.iter_mut() {
            threshold = threshold.min(s.refresh_drift_threshold(problem)?);
        }
        let step = if threshold.is_finite() { fraction * threshold } else { 0.0 };
        let last = stream.last().expect("non-empty");
        let b = if b0.is_empty() {
            b0.clone()
        } else {
            last + pulled_direction(rng, &b0, last, step) * step
        };
        for (s, tr) in states.iter_mut().zip(traces.iter_mut()) {
            tr.push(s.advance(problem, &b)?);
        }
        stream.push(b);
    }
    Ok(LockstepRun { stream, traces })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_start_feasible_and_deterministic() {
        for kind in [InstanceKind::Lp, InstanceKind::Socp] {
            let spec = SyntheticSpec {
                kind,
                n: 6,
                p: 2,
                cuts: 3,
                cones: 2,
            };
            let a = random_instance(&mut rng(7), &spec).unwrap();
            let b = random_instance(&mut rng(7), &spec).unwrap();
            assert_eq!(a.c(), b.c());
            assert_eq!(a.stream()[0], b.stream()[0]);
            let x = crate::centering::phase_one(&a, &a.stream()[0], None).unwrap();
            assert!(a.barrier().is_interior(&x));
        }
    }

    #[test]
    fn stream_steps_have_exact_length() {
        let b0 = DVector::from_vec(vec![1.0, -2.0]);
        let s = drifting_stream(&mut rng(1), &b0, 0.05, 50);
        assert_eq!(s.len(), 51);
        for w in s.windows(2) {
            assert!(((&w[1] - &w[0]).norm() - 0.05).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_step_stream_is_constant() {
        let b0 = DVector::from_vec(vec![1.0]);
        let s = drifting_stream(&mut rng(1), &b0, 0.0, 5);
        assert!(s.iter().all(|b| b == &b0));
    }
}
