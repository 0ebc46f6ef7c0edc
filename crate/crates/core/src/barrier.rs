//! Self-concordant barrier terms and their aggregate `φ(x) = Σ −log(−gᵢ(x))`.
//!
//! Three constraint classes are supported:
//!
//! * affine `aᵀx − β ≤ 0`, barrier `−log(β − aᵀx)`, complexity 1;
//! * convex quadratic `½xᵀQx + qᵀx + r ≤ 0`, barrier `−log(−g(x))`, complexity 1;
//! * second-order cone `‖Ux + u₀‖ ≤ wᵀx + w₀`, barrier
//!   `−log(t(x)² − ‖u(x)‖²)`, complexity 2.
//!
//! Each term keeps its coefficients restricted to the columns it actually
//! touches, so assembling the Hessian of a large sparse aggregate only costs
//! the dense work of each term's own support.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    AffineIneq,
    ConvexQuadIneq,
    SecondOrderCone,
}

impl TermKind {
    pub fn complexity(self) -> f64 {
        match self {
            TermKind::AffineIneq | TermKind::ConvexQuadIneq => 1.0,
            TermKind::SecondOrderCone => 2.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Affine {
        a: DVector<f64>,
        offset: f64,
    },
    Quadratic {
        q_mat: DMatrix<f64>,
        q: DVector<f64>,
        r: f64,
    },
    Soc {
        u_mat: DMatrix<f64>,
        u0: DVector<f64>,
        w: DVector<f64>,
        w0: f64,
        utu: DMatrix<f64>,
    },
}

/// One barrier block. Coefficients are stored on the term's support only.
#[derive(Debug, Clone)]
pub struct BarrierTerm {
    dim: usize,
    support: Vec<usize>,
    repr: Repr,
}

fn support_of(dim: usize, nonzero: impl Fn(usize) -> bool) -> Vec<usize> {
    (0..dim).filter(|&j| nonzero(j)).collect()
}

fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]))
}

fn gather_cols(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, k| m[(i, idx[k])])
}

impl BarrierTerm {
    /// Affine term `g(x) = aᵀx − offset`.
    pub fn affine(a: DVector<f64>, offset: f64) -> Result<Self> {
        if !offset.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTerm("affine coefficients must be finite".into()));
        }
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidTerm("affine row must be non-zero".into()));
        }
        let dim = a.len();
        let support = support_of(dim, |j| a[j] != 0.0);
        Ok(Self {
            dim,
            repr: Repr::Affine {
                a: gather(&a, &support),
                offset,
            },
            support,
        })
    }

    /// Convex quadratic term `g(x) = ½xᵀQx + qᵀx + r`; `Q` must be symmetric PSD.
    pub fn quadratic(q_mat: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self> {
        let dim = q.len();
        if q_mat.nrows() != dim || q_mat.ncols() != dim {
            return Err(Error::DimensionMismatch {
                what: "quadratic matrix",
                expected: dim,
                found: q_mat.nrows(),
            });
        }
        if !r.is_finite() || q.iter().chain(q_mat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTerm("quadratic coefficients must be finite".into()));
        }
        let scale = q_mat.amax().max(1.0);
        if (&q_mat - q_mat.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidTerm("quadratic matrix is not symmetric".into()));
        }
        let shifted = &q_mat + DMatrix::identity(dim, dim) * (1e-10 * scale);
        if shifted.cholesky().is_none() {
            return Err(Error::InvalidTerm(
                "quadratic matrix is not positive semidefinite".into(),
            ));
        }
        let support = support_of(dim, |j| q[j] != 0.0 || q_mat.column(j).iter().any(|&v| v != 0.0));
        let q_loc = DMatrix::from_fn(support.len(), support.len(), |i, k| q_mat[(support[i], support[k])]);
        Ok(Self {
            dim,
            repr: Repr::Quadratic {
                q_mat: q_loc,
                q: gather(&q, &support),
                r,
            },
            support,
        })
    }

    /// Second-order cone term `‖Ux + u₀‖ ≤ wᵀx + w₀`.
    pub fn second_order_cone(u_mat: DMatrix<f64>, u0: DVector<f64>, w: DVector<f64>, w0: f64) -> Result<Self> {
        let dim = w.len();
        if u_mat.ncols() != dim {
            return Err(Error::DimensionMismatch {
                what: "cone map columns",
                expected: dim,
                found: u_mat.ncols(),
            });
        }
        if u_mat.nrows() != u0.len() {
            return Err(Error::DimensionMismatch {
                what: "cone offset",
                expected: u_mat.nrows(),
                found: u0.len(),
            });
        }
        if u_mat.nrows() == 0 {
            return Err(Error::InvalidTerm("cone needs at least one row".into()));
        }
        if !w0.is_finite() || u_mat.iter().chain(u0.iter()).chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTerm("cone coefficients must be finite".into()));
        }
        let support = support_of(dim, |j| w[j] != 0.0 || u_mat.column(j).iter().any(|&v| v != 0.0));
        let u_loc = gather_cols(&u_mat, &support);
        let utu = u_loc.transpose() * &u_loc;
        Ok(Self {
            dim,
            repr: Repr::Soc {
                u_mat: u_loc,
                u0,
                w: gather(&w, &support),
                w0,
                utu,
            },
            support,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn kind(&self) -> TermKind {
        match self.repr {
            Repr::Affine { .. } => TermKind::AffineIneq,
            Repr::Quadratic { .. } => TermKind::ConvexQuadIneq,
            Repr::Soc { .. } => TermKind::SecondOrderCone,
        }
    }

    pub fn complexity(&self) -> f64 {
        self.kind().complexity()
    }

    fn local(&self, x: &DVector<f64>) -> DVector<f64> {
        gather(x, &self.support)
    }

    /// Constraint function in scalar form: `aᵀx − β`, `½xᵀQx + qᵀx + r`, or
    /// `‖u(x)‖ − t(x)` for the cone. Negative exactly on the interior.
    pub fn constraint_value(&self, x: &DVector<f64>) -> f64 {
        let xl = self.local(x);
        match &self.repr {
            Repr::Affine { a, offset } => a.dot(&xl) - offset,
            Repr::Quadratic { q_mat, q, r } => 0.5 * xl.dot(&(q_mat * &xl)) + q.dot(&xl) + r,
            Repr::Soc { u_mat, u0, w, w0, .. } => (u_mat * &xl + u0).norm() - (w.dot(&xl) + w0),
        }
    }

    /// Cone image `(u(x), t(x))`; `None` for scalar terms.
    pub fn cone_image(&self, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        match &self.repr {
            Repr::Soc { u_mat, u0, w, w0, .. } => {
                let xl = self.local(x);
                Some((u_mat * &xl + u0, w.dot(&xl) + w0))
            }
            _ => None,
        }
    }

    /// Euclidean norm of the affine row; `None` for other kinds.
    pub fn affine_row_norm(&self) -> Option<f64> {
        match &self.repr {
            Repr::Affine { a, .. } => Some(a.norm()),
            _ => None,
        }
    }

    /// Whether the stacked cone map `[U; wᵀ]` has orthonormal rows.
    pub fn cone_map_is_orthonormal(&self) -> bool {
        match &self.repr {
            Repr::Soc { u_mat, w, .. } => {
                let k = u_mat.nrows();
                let mut m = DMatrix::zeros(k + 1, u_mat.ncols());
                m.rows_mut(0, k).copy_from(u_mat);
                m.row_mut(k).copy_from(&w.transpose());
                let gram = &m * m.transpose();
                (gram - DMatrix::identity(k + 1, k + 1)).amax() <= 1e-12
            }
            _ => false,
        }
    }

    /// Argument of the logarithm, `Some` iff `x` is strictly interior.
    fn log_argument(&self, xl: &DVector<f64>) -> Option<f64> {
        let v = match &self.repr {
            Repr::Affine { a, offset } => offset - a.dot(xl),
            Repr::Quadratic { q_mat, q, r } => -(0.5 * xl.dot(&(q_mat * xl)) + q.dot(xl) + r),
            Repr::Soc { u_mat, u0, w, w0, .. } => {
                let t = w.dot(xl) + w0;
                if !(t > 0.0) {
                    return None;
                }
                let u = u_mat * xl + u0;
                let un = u.norm();
                if !(un < t) {
                    return None;
                }
                (t - un) * (t + un)
            }
        };
        (v > 0.0 && v.is_finite()).then_some(v)
    }

    pub fn is_interior(&self, x: &DVector<f64>) -> bool {
        self.log_argument(&self.local(x)).is_some()
    }

    pub fn value(&self, x: &DVector<f64>) -> Option<f64> {
        self.log_argument(&self.local(x)).map(|s| -s.ln())
    }

    /// Local gradient and Hessian on the support, or `None` outside the domain.
    fn local_derivatives(&self, xl: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let s = self.log_argument(xl)?;
        Some(match &self.repr {
            Repr::Affine { a, .. } => {
                // φ = −log(β − aᵀx)
                let g = a / s;
                let h = &g * g.transpose();
                (g, h)
            }
            Repr::Quadratic { q_mat, q, .. } => {
                // φ = −log(−g), ∇g = Qx + q
                let dg = q_mat * xl + q;
                let g = &dg / s;
                let h = &g * g.transpose() + q_mat / s;
                (g, h)
            }
            Repr::Soc { u_mat, u0, w, w0, utu } => {
                // φ = −log(t² − ‖u‖²)
                let t = w.dot(xl) + w0;
                let u = u_mat * xl + u0;
                let ds = (w * t - u_mat.transpose() * &u) * 2.0;
                let g = -&ds / s;
                let h = &g * g.transpose() - (w * w.transpose() - utu) * (2.0 / s);
                (g, h)
            }
        })
    }

    /// Adds this term's gradient and Hessian at `x` into the global buffers.
    pub fn accumulate(&self, x: &DVector<f64>, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) -> bool {
        let Some((g, h)) = self.local_derivatives(&self.local(x)) else {
            return false;
        };
        for (a, &ja) in self.support.iter().enumerate() {
            grad[ja] += g[a];
            for (b, &jb) in self.support.iter().enumerate() {
                hess[(ja, jb)] += h[(a, b)];
            }
        }
        true
    }

    /// Same constraint in `(x, s)` with the slack shifted in: `g(x) − s ≤ 0`
    /// (for the cone, `‖u(x)‖ ≤ t(x) + s`). Used by phase-I.
    pub fn with_slack(&self) -> BarrierTerm {
        let mut support = self.support.clone();
        support.push(self.dim);
        let extend = |v: &DVector<f64>, last: f64| {
            let mut out = v.clone().resize_vertically(v.len() + 1, 0.0);
            out[v.len()] = last;
            out
        };
        let repr = match &self.repr {
            Repr::Affine { a, offset } => Repr::Affine {
                a: extend(a, -1.0),
                offset: *offset,
            },
            Repr::Quadratic { q_mat, q, r } => Repr::Quadratic {
                q_mat: q_mat.clone().resize(q.len() + 1, q.len() + 1, 0.0),
                q: extend(q, -1.0),
                r: *r,
            },
            Repr::Soc { u_mat, u0, w, w0, utu } => Repr::Soc {
                u_mat: u_mat.clone().resize_horizontally(w.len() + 1, 0.0),
                u0: u0.clone(),
                w: extend(w, 1.0),
                w0: *w0,
                utu: utu.clone().resize(w.len() + 1, w.len() + 1, 0.0),
            },
        };
        BarrierTerm {
            dim: self.dim + 1,
            support,
            repr,
        }
    }

    /// Same constraint viewed in a larger space whose leading coordinates are `x`.
    pub fn embed(&self, new_dim: usize) -> BarrierTerm {
        assert!(new_dim >= self.dim, "embedding must not shrink the space");
        BarrierTerm {
            dim: new_dim,
            ..self.clone()
        }
    }

    pub fn to_spec(&self) -> TermSpec {
        let scatter = |v: &DVector<f64>| {
            let mut out = vec![0.0; self.dim];
            for (k, &j) in self.support.iter().enumerate() {
                out[j] = v[k];
            }
            out
        };
        match &self.repr {
            Repr::Affine { a, offset } => TermSpec::Affine {
                a: scatter(a),
                offset: *offset,
            },
            Repr::Quadratic { q_mat, q, r } => {
                let mut full = vec![vec![0.0; self.dim]; self.dim];
                for (i, &ji) in self.support.iter().enumerate() {
                    for (k, &jk) in self.support.iter().enumerate() {
                        full[ji][jk] = q_mat[(i, k)];
                    }
                }
                TermSpec::Quadratic {
                    q_mat: full,
                    q: scatter(q),
                    r: *r,
                }
            }
            Repr::Soc { u_mat, u0, w, w0, .. } => TermSpec::Soc {
                u_mat: (0..u_mat.nrows())
                    .map(|i| scatter(&u_mat.row(i).transpose()))
                    .collect(),
                u0: u0.iter().copied().collect(),
                w: scatter(w),
                w0: *w0,
            },
        }
    }
}

/// Serialized form of a barrier term, as it appears in problem JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermSpec {
    Affine {
        a: Vec<f64>,
        offset: f64,
    },
    Quadratic {
        q_mat: Vec<Vec<f64>>,
        q: Vec<f64>,
        r: f64,
    },
    Soc {
        u_mat: Vec<Vec<f64>>,
        u0: Vec<f64>,
        w: Vec<f64>,
        w0: f64,
    },
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    for row in rows {
        if row.len() != ncols {
            return Err(Error::DimensionMismatch {
                what,
                expected: ncols,
                found: row.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl TermSpec {
    pub fn build(&self) -> Result<BarrierTerm> {
        match self {
            TermSpec::Affine { a, offset } => BarrierTerm::affine(DVector::from_column_slice(a), *offset),
            TermSpec::Quadratic { q_mat, q, r } => {
                let m = matrix_from_rows(q_mat, q.len(), "quadratic matrix")?;
                if m.nrows() != q.len() {
                    return Err(Error::DimensionMismatch {
                        what: "quadratic matrix",
                        expected: q.len(),
                        found: m.nrows(),
                    });
                }
                BarrierTerm::quadratic(m, DVector::from_column_slice(q), *r)
            }
            TermSpec::Soc { u_mat, u0, w, w0 } => BarrierTerm::second_order_cone(
                matrix_from_rows(u_mat, w.len(), "cone map")?,
                DVector::from_column_slice(u0),
                DVector::from_column_slice(w),
                *w0,
            ),
        }
    }
}

/// Twice-differentiable function restricted to an open domain. Implemented by
/// [`BarrierAggregate`]; tests implement it for negative controls.
pub trait SmoothFunction {
    fn dim(&self) -> usize;
    fn hessian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// `φ(x) = Σ φᵢ(x)` together with its complexity `v_f = Σ complexity(φᵢ)`.
#[derive(Debug, Clone)]
pub struct BarrierAggregate {
    dim: usize,
    terms: Vec<BarrierTerm>,
    total_complexity: f64,
}

impl BarrierAggregate {
    pub fn new(dim: usize, terms: Vec<BarrierTerm>) -> Result<Self> {
        for t in &terms {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what: "barrier term dimension",
                    expected: dim,
                    found: t.dim(),
                });
            }
        }
        let total_complexity = terms.iter().map(BarrierTerm::complexity).sum();
        Ok(Self {
            dim,
            terms,
            total_complexity,
        })
    }

    pub fn from_specs(dim: usize, specs: &[TermSpec]) -> Result<Self> {
        let terms = specs.iter().map(TermSpec::build).collect::<Result<Vec<_>>>()?;
        Self::new(dim, terms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[BarrierTerm] {
        &self.terms
    }

    /// Barrier complexity `v_f`.
    pub fn total_complexity(&self) -> f64 {
        self.total_complexity
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "barrier argument",
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Index of the first term whose domain excludes `x`.
    pub fn first_violation(&self, x: &DVector<f64>) -> Option<usize> {
        self.terms.iter().position(|t| !t.is_interior(x))
    }

    pub fn is_interior(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim && self.first_violation(x).is_none()
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        self.terms
            .iter()
            .enumerate()
            .map(|(i, t)| t.value(x).ok_or(Error::DomainViolation { term: i }))
            .sum()
    }

    /// Gradient and Hessian in one pass over the terms.
    pub fn derivatives(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_dim(x)?;
        let mut g = DVector::zeros(self.dim);
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (i, t) in self.terms.iter().enumerate() {
            if !t.accumulate(x, &mut g, &mut h) {
                return Err(Error::DomainViolation { term: i });
            }
        }
        Ok((g, h))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.derivatives(x).map(|(g, _)| g)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.derivatives(x).map(|(_, h)| h)
    }

    /// `∇φ(x)ᵀ ∇²φ(x)⁻¹ ∇φ(x)`, bounded above by `v_f` on the whole domain.
    pub fn complexity_witness(&self, x: &DVector<f64>) -> Result<f64> {
        let (g, h) = self.derivatives(x)?;
        let chol = h.cholesky().ok_or(Error::SingularHessian)?;
        Ok(g.dot(&chol.solve(&g)))
    }

    /// Aggregate in `(x, s)` with every term relaxed by the slack `s`.
    pub fn with_slack(&self) -> BarrierAggregate {
        BarrierAggregate {
            dim: self.dim + 1,
            terms: self.terms.iter().map(BarrierTerm::with_slack).collect(),
            total_complexity: self.total_complexity,
        }
    }

    /// Aggregate lifted into a space with `extra` trailing coordinates.
    pub fn embed(&self, extra: usize) -> BarrierAggregate {
        BarrierAggregate {
            dim: self.dim + extra,
            terms: self.terms.iter().map(|t| t.embed(self.dim + extra)).collect(),
            total_complexity: self.total_complexity,
        }
    }

    pub fn push(&mut self, term: BarrierTerm) -> Result<()> {
        if term.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "barrier term dimension",
                expected: self.dim,
                found: term.dim(),
            });
        }
        self.total_complexity += term.complexity();
        self.terms.push(term);
        Ok(())
    }

    pub fn to_specs(&self) -> Vec<TermSpec> {
        self.terms.iter().map(BarrierTerm::to_spec).collect()
    }
}

impl SmoothFunction for BarrierAggregate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn hessian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.hessian(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfConcordanceReport {
    /// `r''(0)`; equal to one since the direction is normalized.
    pub second: f64,
    /// `|r'''(0)|` estimated by central differences of `r''`.
    pub third: f64,
    /// `2 r''(0)^{3/2}`.
    pub bound: f64,
    pub passed: bool,
}

/// Default central-difference spacing `1e−4·(1 + ‖x‖)`.
pub fn default_fd_step(x: &DVector<f64>) -> f64 {
    1e-4 * (1.0 + x.norm())
}

/// Checks `|r'''| ≤ 2 r''^{3/2}` for the restriction `r(s) = f(x + s·d)`.
///
/// The direction is rescaled so that `r''(0) = 1`, which makes the test
/// scale-free; `r'''` comes from central differences of the analytic `r''`
/// with spacing `h`. The check passes when `|r'''| ≤ 2 + tol`.
pub fn check_self_concordance<F: SmoothFunction + ?Sized>(
    f: &F,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    h: f64,
    tol: f64,
) -> Result<SelfConcordanceReport> {
    if dir.len() != f.dim() || x.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            what: "self-concordance probe",
            expected: f.dim(),
            found: dir.len(),
        });
    }
    let curvature = |p: &DVector<f64>, d: &DVector<f64>| -> Result<f64> {
        let hm = f.hessian_at(p)?;
        Ok(d.dot(&(hm * d)))
    };
    let r2 = curvature(x, dir)?;
    if !(r2 > 0.0) {
        return Err(Error::SingularHessian);
    }
    let d = dir / r2.sqrt();
    let plus = curvature(&(x + &d * h), &d)?;
    let minus = curvature(&(x - &d * h), &d)?;
    let third = ((plus - minus) / (2.0 * h)).abs();
    let second = curvature(x, &d)?;
    let bound = 2.0 * second.powf(1.5);
    Ok(SelfConcordanceReport {
        second,
        third,
        bound,
        passed: third <= bound + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn nonneg(dim: usize, i: usize) -> BarrierTerm {
        let mut a = DVector::zeros(dim);
        a[i] = -1.0;
        BarrierTerm::affine(a, 0.0).unwrap()
    }

    fn unit_soc() -> BarrierTerm {
        // ‖x₂‖ ≤ x₁
        BarrierTerm::second_order_cone(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), v(&[0.0]), v(&[1.0, 0.0]), 0.0)
            .unwrap()
    }

    #[test]
    fn affine_value_at_unit_slack_is_zero() {
        let agg = BarrierAggregate::new(2, vec![nonneg(2, 0)]).unwrap();
        assert_eq!(agg.value(&v(&[1.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn soc_value_at_unit_point_is_zero() {
        let agg = BarrierAggregate::new(2, vec![unit_soc()]).unwrap();
        assert_eq!(agg.value(&v(&[1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(agg.total_complexity(), 2.0);
    }

    #[test]
    fn two_logs_at_e() {
        let agg = BarrierAggregate::new(2, vec![nonneg(2, 0), nonneg(2, 1)]).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(agg.value(&v(&[e, e])).unwrap(), -2.0, epsilon = 1e-15);
    }

    #[test]
    fn affine_derivatives_one_dimensional() {
        let agg = BarrierAggregate::new(1, vec![nonneg(1, 0)]).unwrap();
        let (g, h) = agg.derivatives(&v(&[2.0])).unwrap();
        assert_relative_eq!(g[0], -0.5);
        assert_relative_eq!(h[(0, 0)], 0.25);
    }

    #[test]
    fn soc_gradient_at_unit_point() {
        let agg = BarrierAggregate::new(2, vec![unit_soc()]).unwrap();
        let g = agg.gradient(&v(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(g[0], -2.0);
        assert_relative_eq!(g[1], 0.0);
    }

    #[test]
    fn domain_violation_names_the_term() {
        let agg = BarrierAggregate::new(2, vec![nonneg(2, 0), nonneg(2, 1)]).unwrap();
        match agg.value(&v(&[1.0, -1.0])) {
            Err(Error::DomainViolation { term }) => assert_eq!(term, 1),
            other => panic!("unexpected {other:?}"),
        }
        // On the boundary is not interior either.
        assert!(matches!(agg.gradient(&v(&[0.0, 1.0])), Err(Error::DomainViolation { term: 0 })));
    }

    #[test]
    fn soc_rejects_negative_cone() {
        let t = unit_soc();
        // t² − u² > 0 but t < 0
        assert!(!t.is_interior(&v(&[-2.0, 0.0])));
        assert!(t.value(&v(&[-2.0, 0.0])).is_none());
    }

    #[test]
    fn quadratic_rejects_indefinite_matrix() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            BarrierTerm::quadratic(q, v(&[0.0, 0.0]), -1.0),
            Err(Error::InvalidTerm(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(BarrierTerm::quadratic(asym, v(&[0.0, 0.0]), -1.0).is_err());
    }

    #[test]
    fn quadratic_accepts_singular_psd() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let t = BarrierTerm::quadratic(q, v(&[0.0, 0.0]), -1.0).unwrap();
        assert_eq!(t.kind(), TermKind::ConvexQuadIneq);
        assert_eq!(t.complexity(), 1.0);
    }

    #[test]
    fn quadratic_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = &b * b.transpose();
        let lin = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let t = BarrierTerm::quadratic(q, lin, -4.0).unwrap();
        let agg = BarrierAggregate::new(3, vec![t]).unwrap();
        let x = v(&[0.1, -0.2, 0.3]);
        let (g, h) = agg.derivatives(&x).unwrap();
        let step = 1e-5;
        for j in 0..3 {
            let mut e = DVector::zeros(3);
            e[j] = step;
            let fd_g = (agg.value(&(&x + &e)).unwrap() - agg.value(&(&x - &e)).unwrap()) / (2.0 * step);
            assert_relative_eq!(g[j], fd_g, max_relative = 1e-6, epsilon = 1e-9);
            let fd_h = (agg.gradient(&(&x + &e)).unwrap() - agg.gradient(&(&x - &e)).unwrap()) / (2.0 * step);
            for i in 0..3 {
                assert_relative_eq!(h[(i, j)], fd_h[i], max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn neg_log_is_the_boundary_case() {
        let agg = BarrierAggregate::new(1, vec![nonneg(1, 0)]).unwrap();
        let x = v(&[1.0]);
        let rep = check_self_concordance(&agg, &x, &v(&[1.0]), default_fd_step(&x), 1e-4).unwrap();
        assert!(rep.passed);
        assert_relative_eq!(rep.third, 2.0, epsilon = 1e-3);
        assert_relative_eq!(rep.bound, 2.0, epsilon = 1e-12);
    }

    struct Exp;

    impl SmoothFunction for Exp {
        fn dim(&self) -> usize {
            1
        }
        fn hessian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, x[0].exp()))
        }
    }

    #[test]
    fn exponential_is_not_self_concordant() {
        let x = v(&[-4.0]);
        let rep = check_self_concordance(&Exp, &x, &v(&[1.0]), 1e-4, 1e-4).unwrap();
        assert!(!rep.passed, "{rep:?}");
    }

    #[test]
    fn single_affine_witness_is_one() {
        let agg = BarrierAggregate::new(1, vec![nonneg(1, 0)]).unwrap();
        for x in [0.1, 1.0, 37.0] {
            assert_relative_eq!(agg.complexity_witness(&v(&[x])).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn witness_needs_nonsingular_hessian() {
        let agg = BarrierAggregate::new(2, vec![nonneg(2, 0)]).unwrap();
        assert!(matches!(agg.complexity_witness(&v(&[1.0, 0.0])), Err(Error::SingularHessian)));
    }

    #[test]
    fn value_blows_up_toward_boundary() {
        let agg = BarrierAggregate::new(2, vec![unit_soc(), nonneg(2, 0)]).unwrap();
        // Ray from (1, 0) toward the cone boundary point (1, 1).
        let mut last = f64::NEG_INFINITY;
        for k in 1..12 {
            let dist = 10f64.powi(-k);
            let val = agg.value(&v(&[1.0, 1.0 - dist])).unwrap();
            assert!(val > last);
            last = val;
        }
        assert!(last > 20.0);
    }

    #[test]
    fn slack_lift_relaxes_every_term() {
        let agg = BarrierAggregate::new(2, vec![unit_soc(), nonneg(2, 1)]).unwrap();
        let lifted = agg.with_slack();
        let bad = v(&[0.0, -1.0]);
        assert!(!agg.is_interior(&bad));
        assert!(lifted.is_interior(&v(&[0.0, -1.0, 3.0])));
        assert!(!lifted.is_interior(&v(&[0.0, -1.0, 0.5])));
        assert_eq!(lifted.total_complexity(), agg.total_complexity());
    }

    #[test]
    fn spec_round_trip_preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let soc = BarrierTerm::second_order_cone(u, v(&[0.1, 0.0]), v(&[0.0, 0.0, 0.0, 1.0]), 3.0).unwrap();
        let agg = BarrierAggregate::new(4, vec![soc, nonneg(4, 2)]).unwrap();
        let json = serde_json::to_string(&agg.to_specs()).unwrap();
        let specs: Vec<TermSpec> = serde_json::from_str(&json).unwrap();
        let back = BarrierAggregate::from_specs(4, &specs).unwrap();
        let x = v(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(agg.value(&x).unwrap(), back.value(&x).unwrap());
    }

    #[test]
    fn unknown_term_fields_are_rejected() {
        let bad = r#"{"kind":"affine","a":[1.0],"offset":1.0,"extra":2}"#;
        assert!(serde_json::from_str::<TermSpec>(bad).is_err());
    }
}
