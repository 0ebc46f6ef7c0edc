//! Randomly perturbed load streams.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::OpfEncoding;
use crate::error::{Error, Result};
use crate::synthetic::rng;

pub const MAX_REDRAWS: usize = 100;

/// How the active-power perturbation of each load evolves. `ζ` is uniform
/// on `[0, 1]`, drawn per load and round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadRule {
    /// `p_d(t) = p_d(0) + scale·ζ/√t`.
    InverseSqrt { scale: f64 },
    /// `p_d(t) = p_d(t−1) + scale·ζ/√t`.
    RandomWalk { scale: f64 },
    /// Loads stay at their base values.
    Constant,
}

impl Default for LoadRule {
    fn default() -> Self {
        LoadRule::InverseSqrt { scale: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadStream {
    pub seed: u64,
    pub rule: LoadRule,
    /// Active power per load and round `0..=T` (MW).
    pub p: Vec<Vec<f64>>,
    /// Reactive power per load (MVAr), held at base values.
    pub q: Vec<f64>,
    /// Accepted `ζ` draws per round `1..=T` (round 0 has none).
    pub zeta: Vec<Vec<f64>>,
    /// Rejected draws per round.
    pub redraws: Vec<usize>,
    #[serde(skip)]
    pub rhs: Vec<DVector<f64>>,
}

impl LoadStream {
    pub fn horizon(&self) -> usize {
        self.rhs.len().saturating_sub(1)
    }

    pub fn total_redraws(&self) -> usize {
        self.redraws.iter().sum()
    }
}

/// Generates `b_0, …, b_T`. Each candidate `b_t` is offered to `accept`;
/// rejected draws are replaced with fresh `ζ` up to [`MAX_REDRAWS`] times.
pub fn generate_loads<F>(
    enc: &OpfEncoding,
    rule: LoadRule,
    seed: u64,
    horizon: usize,
    mut accept: F,
) -> Result<LoadStream>
where
    F: FnMut(usize, &DVector<f64>) -> Result<bool>,
{
    let mut rng = rng(seed);
    let base: Vec<f64> = enc.case.loads.iter().map(|l| l.p).collect();
    let q: Vec<f64> = enc.case.loads.iter().map(|l| l.q).collect();
    let mut p = vec![base.clone()];
    let mut rhs = vec![enc.rhs(&base, &q)];
    let mut zeta = Vec::with_capacity(horizon);
    let mut redraws = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let mut rejected = 0;
        loop {
            let z: Vec<f64> = (0..base.len()).map(|_| rng.random_range(0.0..=1.0)).collect();
            let anchor = match rule {
                LoadRule::RandomWalk { .. } => p.last().expect("non-empty"),
                _ => &base,
            };
            let scale = match rule {
                LoadRule::InverseSqrt { scale } | LoadRule::RandomWalk { scale } => scale,
                LoadRule::Constant => 0.0,
            };
            let step = scale / (t as f64).sqrt();
            let cand: Vec<f64> = anchor.iter().zip(&z).map(|(a, z)| a + step * z).collect();
            let b = enc.rhs(&cand, &q);
            if accept(t, &b)? {
                p.push(cand);
                rhs.push(b);
                zeta.push(z);
                redraws.push(rejected);
                break;
            }
            rejected += 1;
            log::debug!("round {t}: load draw rejected ({rejected})");
            if rejected >= MAX_REDRAWS {
                return Err(Error::PersistentInfeasibility {
                    round: t,
                    redraws: rejected,
                });
            }
        }
    }
    Ok(LoadStream {
        seed,
        rule,
        p,
        q,
        zeta,
        redraws,
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opf::case::fixtures::two_bus;
    use crate::opf::encoding::build_encoding;

    #[test]
    fn constant_rule_repeats_base() {
        let enc = build_encoding(&two_bus()).unwrap();
        let s = generate_loads(&enc, LoadRule::Constant, 3, 5, |_, _| Ok(true)).unwrap();
        assert_eq!(s.rhs.len(), 6);
        assert!(s.rhs.iter().all(|b| b == &enc.problem.stream()[0]));
    }

    #[test]
    fn perturbation_is_bounded_and_reproducible() {
        let enc = build_encoding(&two_bus()).unwrap();
        let rule = LoadRule::InverseSqrt { scale: 0.01 };
        let a = generate_loads(&enc, rule, 9, 20, |_, _| Ok(true)).unwrap();
        let b = generate_loads(&enc, rule, 9, 20, |_, _| Ok(true)).unwrap();
        assert_eq!(a.rhs, b.rhs);
        let base = enc.case.loads[0].p;
        for (t, p) in a.p.iter().enumerate().skip(1) {
            let shift = p[0] - base;
            assert!((0.0..=0.01 / (t as f64).sqrt() + 1e-15).contains(&shift));
            assert!((shift - 0.01 * a.zeta[t - 1][0] / (t as f64).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejections_are_redrawn_then_reported() {
        let enc = build_encoding(&two_bus()).unwrap();
        let rule = LoadRule::default();
        let mut calls = 0;
        let s = generate_loads(&enc, rule, 1, 2, |_, _| {
            calls += 1;
            Ok(calls % 3 == 0)
        })
        .unwrap();
        assert_eq!(s.redraws, vec![2, 2]);
        let err = generate_loads(&enc, rule, 1, 2, |_, _| Ok(false)).unwrap_err();
        assert!(matches!(err, Error::PersistentInfeasibility { round: 1, redraws: MAX_REDRAWS }));
    }
}
