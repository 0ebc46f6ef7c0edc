//! SOCP relaxation of optimal power flow as a time-varying conic program.
//!
//! Variables, in order: the cost epigraph `s`, generator outputs `p_g` and
//! `q_g` (MW, MVAr), squared voltage magnitudes `W_ii` (p.u.²) and, per line,
//! the real and imaginary parts of `W_ij` (p.u.²). Power balance rows are in
//! MW/MVAr; the right-hand side carries the bus loads.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::case::NetworkCase;
use crate::barrier::{BarrierAggregate, BarrierTerm};
use crate::error::{Error, Result};
use crate::problem::{numerical_rank, TimeVaryingProblem};

/// Index map from model quantities to coordinates of `x`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub generators: usize,
    pub buses: usize,
    pub lines: usize,
}

impl Layout {
    pub const EPIGRAPH: usize = 0;

    pub fn dim(&self) -> usize {
        1 + 2 * self.generators + self.buses + 2 * self.lines
    }

    pub fn p(&self, g: usize) -> usize {
        1 + g
    }

    pub fn q(&self, g: usize) -> usize {
        1 + self.generators + g
    }

    pub fn w(&self, bus: usize) -> usize {
        1 + 2 * self.generators + bus
    }

    pub fn w_re(&self, line: usize) -> usize {
        1 + 2 * self.generators + self.buses + 2 * line
    }

    pub fn w_im(&self, line: usize) -> usize {
        self.w_re(line) + 1
    }
}

/// Balance row identifier: bus position and whether it is the reactive row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BalanceRow {
    pub bus: usize,
    pub reactive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub n: usize,
    pub p: usize,
    pub removed_rows: usize,
    pub terms: usize,
    pub complexity: f64,
}

#[derive(Debug, Clone)]
pub struct OpfEncoding {
    pub case: NetworkCase,
    pub layout: Layout,
    /// Bus position of each line's endpoints.
    pub endpoints: Vec<(usize, usize)>,
    /// Balance rows kept in `A`, in row order.
    pub kept: Vec<BalanceRow>,
    /// Rows dropped as linearly dependent.
    pub removed: Vec<BalanceRow>,
    /// Full balance matrix over every bus, including removed rows.
    pub full_balance: DMatrix<f64>,
    pub problem: TimeVaryingProblem,
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

/// Real and imaginary parts of the sending-end flow `(W_ii − W_ij)·y*` of a
/// line as linear forms in `x` (per unit).
fn sending_flow(layout: &Layout, line: usize, from: usize, y: (f64, f64)) -> (DVector<f64>, DVector<f64>) {
    let n = layout.dim();
    let (g, b) = y;
    let (wi, re, im) = (layout.w(from), layout.w_re(line), layout.w_im(line));
    let mut real = DVector::zeros(n);
    real[wi] = g;
    real[re] = -g;
    real[im] = -b;
    let mut imag = DVector::zeros(n);
    imag[wi] = -b;
    imag[re] = b;
    imag[im] = -g;
    (real, imag)
}

/// Receiving-end flow `(W_jj − conj(W_ij))·y*`.
fn receiving_flow(layout: &Layout, line: usize, to: usize, y: (f64, f64)) -> (DVector<f64>, DVector<f64>) {
    let n = layout.dim();
    let (g, b) = y;
    let (wj, re, im) = (layout.w(to), layout.w_re(line), layout.w_im(line));
    let mut real = DVector::zeros(n);
    real[wj] = g;
    real[re] = -g;
    real[im] = b;
    let mut imag = DVector::zeros(n);
    imag[wj] = -b;
    imag[re] = b;
    imag[im] = g;
    (real, imag)
}

fn balance_matrix(case: &NetworkCase, layout: &Layout, endpoints: &[(usize, usize)]) -> DMatrix<f64> {
    let nb = case.buses.len();
    let index = case.bus_index();
    let mut m = DMatrix::zeros(2 * nb, layout.dim());
    for (k, g) in case.generators.iter().enumerate() {
        let bus = index[&g.bus];
        m[(bus, layout.p(k))] += 1.0;
        m[(nb + bus, layout.q(k))] += 1.0;
    }
    let base = case.base_mva;
    for (l, (line, &(i, j))) in case.lines.iter().zip(endpoints).enumerate() {
        let y = (line.g, line.b_susceptance);
        let (fr, fi) = sending_flow(layout, l, i, y);
        let (tr, ti) = receiving_flow(layout, l, j, y);
        for c in 0..layout.dim() {
            m[(i, c)] -= base * fr[c];
            m[(nb + i, c)] -= base * fi[c];
            m[(j, c)] -= base * tr[c];
            m[(nb + j, c)] -= base * ti[c];
        }
    }
    m
}

/// Bus loads stacked as `[p_d; q_d]` over every bus (MW, MVAr).
pub fn bus_loads(case: &NetworkCase, p: &[f64], q: &[f64]) -> DVector<f64> {
    let nb = case.buses.len();
    let index = case.bus_index();
    let mut out = DVector::zeros(2 * nb);
    for (k, l) in case.loads.iter().enumerate() {
        let bus = index[&l.bus];
        out[bus] += p[k];
        out[nb + bus] += q[k];
    }
    out
}

fn row_id(nb: usize, r: usize) -> BalanceRow {
    BalanceRow {
        bus: r % nb,
        reactive: r >= nb,
    }
}

fn inequality_terms(case: &NetworkCase, layout: &Layout, endpoints: &[(usize, usize)]) -> Result<Vec<BarrierTerm>> {
    let n = layout.dim();
    let mut terms = Vec::new();

    // Σ a p² + b p − s ≤ 0
    let mut qm = DMatrix::zeros(n, n);
    let mut qv = DVector::zeros(n);
    qv[Layout::EPIGRAPH] = -1.0;
    for (k, g) in case.generators.iter().enumerate() {
        qm[(layout.p(k), layout.p(k))] = 2.0 * g.a;
        qv[layout.p(k)] = g.b;
    }
    terms.push(BarrierTerm::quadratic(qm, qv, 0.0)?);

    let mut boxed = |idx: usize, lo: f64, hi: f64| -> Result<()> {
        terms.push(BarrierTerm::affine(-unit(n, idx), -lo)?);
        terms.push(BarrierTerm::affine(unit(n, idx), hi)?);
        Ok(())
    };
    for (k, g) in case.generators.iter().enumerate() {
        boxed(layout.p(k), g.pmin, g.pmax)?;
        boxed(layout.q(k), g.qmin, g.qmax)?;
    }
    let v = case.voltage;
    for bus in 0..layout.buses {
        boxed(layout.w(bus), v.vmin * v.vmin, v.vmax * v.vmax)?;
    }

    for (l, (line, &(i, j))) in case.lines.iter().zip(endpoints).enumerate() {
        // ‖(2 Re W_ij, 2 Im W_ij, W_ii − W_jj)‖ ≤ W_ii + W_jj
        let mut u = DMatrix::zeros(3, n);
        u[(0, layout.w_re(l))] = 2.0;
        u[(1, layout.w_im(l))] = 2.0;
        u[(2, layout.w(i))] = 1.0;
        u[(2, layout.w(j))] = -1.0;
        let w = unit(n, layout.w(i)) + unit(n, layout.w(j));
        terms.push(BarrierTerm::second_order_cone(u, DVector::zeros(3), w, 0.0)?);

        // base·‖(W_ii − W_ij) y*‖ ≤ k_max
        let (fr, fi) = sending_flow(layout, l, i, (line.g, line.b_susceptance));
        let mut u = DMatrix::zeros(2, n);
        u.set_row(0, &(fr.transpose() * case.base_mva));
        u.set_row(1, &(fi.transpose() * case.base_mva));
        terms.push(BarrierTerm::second_order_cone(u, DVector::zeros(2), DVector::zeros(n), line.k_max)?);
    }
    Ok(terms)
}

/// Builds the relaxation with the case's base loads as the only stream entry.
/// Linearly dependent balance rows are dropped greedily in bus order.
pub fn build_encoding(case: &NetworkCase) -> Result<OpfEncoding> {
    case.validate()?;
    let index = case.bus_index();
    let layout = Layout {
        generators: case.generators.len(),
        buses: case.buses.len(),
        lines: case.lines.len(),
    };
    let endpoints: Vec<_> = case.lines.iter().map(|l| (index[&l.from], index[&l.to])).collect();
    let full = balance_matrix(case, &layout, &endpoints);

    let nb = layout.buses;
    let mut kept_rows: Vec<usize> = Vec::new();
    let mut removed = Vec::new();
    for r in 0..full.nrows() {
        let mut trial = kept_rows.clone();
        trial.push(r);
        let sub = full.select_rows(trial.iter());
        if numerical_rank(&sub) == trial.len() {
            kept_rows = trial;
        } else {
            removed.push(row_id(nb, r));
        }
    }
    if !removed.is_empty() {
        log::info!("removed {} dependent balance rows", removed.len());
    }
    let a = full.select_rows(kept_rows.iter());
    let c = unit(layout.dim(), Layout::EPIGRAPH);
    let barrier = BarrierAggregate::new(layout.dim(), inequality_terms(case, &layout, &endpoints)?)?;
    let p0: Vec<f64> = case.loads.iter().map(|l| l.p).collect();
    let q0: Vec<f64> = case.loads.iter().map(|l| l.q).collect();
    let loads = bus_loads(case, &p0, &q0);
    let b0 = DVector::from_iterator(kept_rows.len(), kept_rows.iter().map(|&r| loads[r]));
    let problem = TimeVaryingProblem::new(c, a, barrier, vec![b0])?;
    Ok(OpfEncoding {
        case: case.clone(),
        layout,
        endpoints,
        kept: kept_rows.iter().map(|&r| row_id(nb, r)).collect(),
        removed,
        full_balance: full,
        problem,
    })
}

/// Decoded decision in physical units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpfSolution {
    pub cost_bound: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub w_diag: Vec<f64>,
    pub w_line: Vec<(f64, f64)>,
}

impl OpfSolution {
    pub fn voltage_magnitudes(&self) -> Vec<f64> {
        self.w_diag.iter().map(|w| w.max(0.0).sqrt()).collect()
    }
}

/// Largest violation per constraint family; non-positive means satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub cost: f64,
    pub generation: f64,
    pub voltage: f64,
    pub relaxation: f64,
    pub line_limit: f64,
    pub balance: f64,
}

impl ConstraintReport {
    pub fn worst(&self) -> f64 {
        [self.cost, self.generation, self.voltage, self.relaxation, self.line_limit, self.balance]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn satisfied(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

impl OpfEncoding {
    pub fn dimensions(&self) -> DimensionReport {
        DimensionReport {
            n: self.problem.n(),
            p: self.problem.p(),
            removed_rows: self.removed.len(),
            terms: self.problem.barrier().terms().len(),
            complexity: self.problem.complexity(),
        }
    }

    /// Right-hand side for per-load demands `p`, `q` (one entry per case load).
    pub fn rhs(&self, p: &[f64], q: &[f64]) -> DVector<f64> {
        let loads = bus_loads(&self.case, p, q);
        let nb = self.layout.buses;
        DVector::from_iterator(
            self.kept.len(),
            self.kept.iter().map(|r| loads[r.bus + if r.reactive { nb } else { 0 }]),
        )
    }

    pub fn decode(&self, x: &DVector<f64>) -> Result<OpfSolution> {
        let l = &self.layout;
        if x.len() != l.dim() {
            return Err(Error::DimensionMismatch {
                what: "power-flow decision",
                expected: l.dim(),
                found: x.len(),
            });
        }
        Ok(OpfSolution {
            cost_bound: x[Layout::EPIGRAPH],
            p: (0..l.generators).map(|g| x[l.p(g)]).collect(),
            q: (0..l.generators).map(|g| x[l.q(g)]).collect(),
            w_diag: (0..l.buses).map(|b| x[l.w(b)]).collect(),
            w_line: (0..l.lines).map(|k| (x[l.w_re(k)], x[l.w_im(k)])).collect(),
        })
    }

    /// Generation cost `Σ a p² + b p` of a decision.
    pub fn generation_cost(&self, sol: &OpfSolution) -> f64 {
        self.case.generators.iter().zip(&sol.p).map(|(g, &p)| g.a * p * p + g.b * p).sum()
    }

    /// Recomputes every constraint from the case data, including balance
    /// rows that were removed from `A`.
    pub fn check(&self, x: &DVector<f64>, p_load: &[f64], q_load: &[f64]) -> Result<ConstraintReport> {
        let sol = self.decode(x)?;
        let case = &self.case;
        let cost = self.generation_cost(&sol) - sol.cost_bound;
        let mut generation = f64::NEG_INFINITY;
        for (k, g) in case.generators.iter().enumerate() {
            generation = generation
                .max(g.pmin - sol.p[k])
                .max(sol.p[k] - g.pmax)
                .max(g.qmin - sol.q[k])
                .max(sol.q[k] - g.qmax);
        }
        let v = case.voltage;
        let voltage = sol
            .w_diag
            .iter()
            .map(|&w| (v.vmin * v.vmin - w).max(w - v.vmax * v.vmax))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut relaxation = f64::NEG_INFINITY;
        let mut line_limit = f64::NEG_INFINITY;
        for (l, (line, &(i, j))) in case.lines.iter().zip(&self.endpoints).enumerate() {
            let (re, im) = sol.w_line[l];
            let (wi, wj) = (sol.w_diag[i], sol.w_diag[j]);
            let lhs = (4.0 * re * re + 4.0 * im * im + (wi - wj).powi(2)).sqrt();
            relaxation = relaxation.max(lhs - (wi + wj));
            let (g, b) = (line.g, line.b_susceptance);
            let fr = g * (wi - re) - b * im;
            let fi = -b * (wi - re) - g * im;
            line_limit = line_limit.max(case.base_mva * fr.hypot(fi) - line.k_max);
        }
        let loads = bus_loads(case, p_load, q_load);
        let balance = (&self.full_balance * x - loads).amax();
        Ok(ConstraintReport {
            cost,
            generation: if case.generators.is_empty() { f64::NEG_INFINITY } else { generation },
            voltage,
            relaxation: if case.lines.is_empty() { f64::NEG_INFINITY } else { relaxation },
            line_limit: if case.lines.is_empty() { f64::NEG_INFINITY } else { line_limit },
            balance,
        })
    }

    /// `√(W_ii W_jj) − |W_ij|` per line; zero means the relaxation is exact.
    pub fn relaxation_gap(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let sol = self.decode(x)?;
        Ok(self
            .endpoints
            .iter()
            .zip(&sol.w_line)
            .map(|(&(i, j), &(re, im))| (sol.w_diag[i] * sol.w_diag[j]).max(0.0).sqrt() - re.hypot(im))
            .collect())
    }
}
