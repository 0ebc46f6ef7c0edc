//! Problem data `min cᵀx s.t. gᵢ(x) ⪯ 0, Ax = b_t` with only `b_t` varying.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{matrix_from_rows, BarrierAggregate, TermSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TimeVaryingProblem {
    c: DVector<f64>,
    a: DMatrix<f64>,
    barrier: BarrierAggregate,
    stream: Vec<DVector<f64>>,
}

/// Numerical rank of `m` from its singular values.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|&&s| s > tol).count()
}

impl TimeVaryingProblem {
    /// Validates dimensions and full row rank of `A` (`P < N` is required
    /// unless `P = 0`).
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, barrier: BarrierAggregate, stream: Vec<DVector<f64>>) -> Result<Self> {
        let n = c.len();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "equality matrix columns",
                expected: n,
                found: a.ncols(),
            });
        }
        if barrier.dim() != n {
            return Err(Error::DimensionMismatch {
                what: "barrier dimension",
                expected: n,
                found: barrier.dim(),
            });
        }
        let p = a.nrows();
        if p > 0 && p >= n {
            return Err(Error::RankDeficient { rank: n, rows: p });
        }
        let rank = numerical_rank(&a);
        if rank < p {
            return Err(Error::RankDeficient { rank, rows: p });
        }
        for b in &stream {
            if b.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "right-hand side",
                    expected: p,
                    found: b.len(),
                });
            }
        }
        Ok(Self { c, a, barrier, stream })
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn barrier(&self) -> &BarrierAggregate {
        &self.barrier
    }

    /// Barrier complexity `v_f`.
    pub fn complexity(&self) -> f64 {
        self.barrier.total_complexity()
    }

    /// Right-hand sides `b_0, …, b_T`.
    pub fn stream(&self) -> &[DVector<f64>] {
        &self.stream
    }

    /// Number of scored rounds `T` (the stream holds `T + 1` vectors).
    pub fn horizon(&self) -> usize {
        self.stream.len().saturating_sub(1)
    }

    pub fn with_stream(&self, stream: Vec<DVector<f64>>) -> Result<Self> {
        Self::new(self.c.clone(), self.a.clone(), self.barrier.clone(), stream)
    }

    pub fn equality_residual(&self, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        &self.a * x - b
    }

    /// Least-norm solution of `Ax = b`, optionally the point of the affine set
    /// nearest to `hint`.
    pub fn affine_point(&self, b: &DVector<f64>, hint: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let base = hint.cloned().unwrap_or_else(|| DVector::zeros(self.n()));
        if self.p() == 0 {
            return Ok(base);
        }
        let r = b - &self.a * &base;
        let gram = &self.a * self.a.transpose();
        let chol = gram.cholesky().ok_or(Error::RankDeficient {
            rank: numerical_rank(&self.a),
            rows: self.p(),
        })?;
        let mut x = &base + self.a.transpose() * chol.solve(&r);
        // One refinement pass keeps ‖Ax − b‖ at rounding level for
        // moderately conditioned A.
        let r2 = b - &self.a * &x;
        x += self.a.transpose() * chol.solve(&r2);
        Ok(x)
    }

    pub fn to_spec(&self) -> ProblemSpec {
        ProblemSpec {
            c: self.c.iter().copied().collect(),
            a: (0..self.p()).map(|i| self.a.row(i).iter().copied().collect()).collect(),
            terms: self.barrier.to_specs(),
            b_stream: self.stream.iter().map(|b| b.iter().copied().collect()).collect(),
        }
    }
}

/// JSON problem schema: `{"c": [...], "a": [[...]], "terms": [...], "b_stream": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub c: Vec<f64>,
    #[serde(default)]
    pub a: Vec<Vec<f64>>,
    pub terms: Vec<TermSpec>,
    #[serde(default)]
    pub b_stream: Vec<Vec<f64>>,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<TimeVaryingProblem> {
        let n = self.c.len();
        let a = matrix_from_rows(&self.a, n, "equality matrix row")?;
        let barrier = BarrierAggregate::from_specs(n, &self.terms)?;
        let stream = self.b_stream.iter().map(|b| DVector::from_column_slice(b)).collect();
        TimeVaryingProblem::new(DVector::from_column_slice(&self.c), a, barrier, stream)
    }
}
