//! Dense symmetric indefinite factorization `P A Pᵀ = L D Lᵀ` with
//! Bunch–Kaufman partial pivoting (1×1 and 2×2 diagonal blocks).
//!
//! The matrix is first equilibrated by symmetric diagonal scaling, so zero
//! pivots are judged relative to a balanced matrix rather than the largest
//! raw entry.
//!
//! Used for the saddle-point KKT matrices of the Newton steps, which have
//! exactly `N` positive and `P` negative eigenvalues when nonsingular.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Bunch–Kaufman growth constant `(1 + √17) / 8`.
const ALPHA: f64 = 0.640_388_203_202_208_4;

#[derive(Debug, Clone, Copy)]
enum Pivot {
    One(f64),
    /// Symmetric block `[[a, b], [b, c]]`.
    Two(f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone)]
pub struct Ldl {
    l: DMatrix<f64>,
    pivots: Vec<(usize, Pivot)>,
    perm: Vec<usize>,
    scale: Vec<f64>,
    min_pivot: f64,
    max_pivot: f64,
    inertia: Inertia,
}

fn block_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Ruiz equilibration: `s` with every row of `diag(s) A diag(s)` having
/// max-norm close to one.
fn equilibrate(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut s = vec![1.0; n];
    for _ in 0..10 {
        let mut done = true;
        let mut next = s.clone();
        for i in 0..n {
            let mut rowmax = 0.0_f64;
            for j in 0..n {
                rowmax = rowmax.max((s[i] * a[(i, j)] * s[j]).abs());
            }
            if rowmax > 0.0 && rowmax.is_finite() {
                next[i] = s[i] / rowmax.sqrt();
                if !(0.5..=2.0).contains(&rowmax) {
                    done = false;
                }
            }
        }
        s = next;
        if done {
            break;
        }
    }
    s
}

fn swap_symmetric(a: &mut DMatrix<f64>, l: &mut DMatrix<f64>, perm: &mut [usize], k: usize, p: usize, q: usize) {
    if p == q {
        return;
    }
    a.swap_rows(p, q);
    a.swap_columns(p, q);
    for j in 0..k {
        l.swap((p, j), (q, j));
    }
    perm.swap(p, q);
}

impl Ldl {
    /// Factorizes a symmetric matrix. Only the values are read; symmetry is
    /// the caller's contract.
    pub fn factor(matrix: &DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "square matrix",
                expected: n,
                found: matrix.ncols(),
            });
        }
        let scale = equilibrate(matrix);
        let mut a = DMatrix::from_fn(n, n, |i, j| scale[i] * matrix[(i, j)] * scale[j]);
        let mut l = DMatrix::<f64>::identity(n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::with_capacity(n);
        let tol = (n.max(1) as f64) * f64::EPSILON * a.amax().max(f64::MIN_POSITIVE);

        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0_f64;
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        let mut note = |e: f64, inertia: &mut Inertia| {
            min_pivot = min_pivot.min(e.abs());
            max_pivot = max_pivot.max(e.abs());
            if e.abs() <= tol {
                inertia.zero += 1;
            } else if e > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
        };

        let mut k = 0;
        while k < n {
            let absakk = a[(k, k)].abs();
            let (mut imax, mut colmax) = (k, 0.0_f64);
            for i in (k + 1)..n {
                let v = a[(i, k)].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }

            let two_by_two = if absakk.max(colmax) <= tol {
                // Zero column: record a zero pivot and move on.
                false
            } else if absakk >= ALPHA * colmax {
                false
            } else {
                let mut rowmax = 0.0_f64;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(a[(imax, j)].abs());
                    }
                }
                if absakk * rowmax >= ALPHA * colmax * colmax {
                    false
                } else if a[(imax, imax)].abs() >= ALPHA * rowmax {
                    swap_symmetric(&mut a, &mut l, &mut perm, k, k, imax);
                    false
                } else {
                    swap_symmetric(&mut a, &mut l, &mut perm, k, k + 1, imax);
                    true
                }
            };

            if !two_by_two {
                let d = a[(k, k)];
                note(d, &mut inertia);
                pivots.push((k, Pivot::One(d)));
                if d.abs() > tol {
                    for i in (k + 1)..n {
                        l[(i, k)] = a[(i, k)] / d;
                    }
                    for j in (k + 1)..n {
                        let ajk = a[(j, k)];
                        if ajk == 0.0 {
                            continue;
                        }
                        for i in (k + 1)..n {
                            a[(i, j)] -= l[(i, k)] * ajk;
                        }
                    }
                }
                k += 1;
            } else {
                let (p, q, r) = (a[(k, k)], a[(k + 1, k)], a[(k + 1, k + 1)]);
                let det = p * r - q * q;
                let (e1, e2) = block_eigenvalues(p, q, r);
                note(e1, &mut inertia);
                note(e2, &mut inertia);
                pivots.push((k, Pivot::Two(p, q, r)));
                for i in (k + 2)..n {
                    let (x0, x1) = (a[(i, k)], a[(i, k + 1)]);
                    l[(i, k)] = (x0 * r - x1 * q) / det;
                    l[(i, k + 1)] = (x1 * p - x0 * q) / det;
                }
                for j in (k + 2)..n {
                    let (y0, y1) = (a[(j, k)], a[(j, k + 1)]);
                    for i in (k + 2)..n {
                        a[(i, j)] -= l[(i, k)] * y0 + l[(i, k + 1)] * y1;
                    }
                }
                k += 2;
            }
        }

        if inertia.zero > 0 {
            return Err(Error::SingularKkt {
                pivot: min_pivot,
                condition: if max_pivot > 0.0 { min_pivot / max_pivot } else { 0.0 },
            });
        }

        Ok(Self {
            l,
            pivots,
            perm,
            scale,
            min_pivot,
            max_pivot,
            inertia,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Ratio of the smallest to the largest pivot magnitude of the
    /// equilibrated matrix; a cheap reciprocal-condition diagnostic.
    pub fn pivot_ratio(&self) -> f64 {
        if self.max_pivot > 0.0 {
            self.min_pivot / self.max_pivot
        } else {
            0.0
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        assert_eq!(rhs.len(), n, "rhs length must match the factored matrix");
        let mut z = DVector::from_fn(n, |i, _| rhs[self.perm[i]] * self.scale[self.perm[i]]);

        for k in 0..n {
            let zk = z[k];
            if zk != 0.0 {
                for i in (k + 1)..n {
                    z[i] -= self.l[(i, k)] * zk;
                }
            }
        }

        for &(k, pivot) in &self.pivots {
            match pivot {
                Pivot::One(d) => z[k] /= d,
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    let (z0, z1) = (z[k], z[k + 1]);
                    z[k] = (c * z0 - b * z1) / det;
                    z[k + 1] = (a * z1 - b * z0) / det;
                }
            }
        }

        for k in (0..n).rev() {
            let mut acc = z[k];
            for i in (k + 1)..n {
                acc -= self.l[(i, k)] * z[i];
            }
            z[k] = acc;
        }

        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = z[i] * self.scale[self.perm[i]];
        }
        x
    }
}
