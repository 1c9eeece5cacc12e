//! Dense two-phase primal simplex.
//!
//! Dantzig pricing with a switch to Bland's rule after a run of degenerate
//! pivots, which rules out cycling. The returned basis is certified by
//! recomputing the duals from the original data and checking dual
//! feasibility and the duality gap.

use thiserror::Error;

use super::lp::{LinearProgram, Relation, Sense};

#[derive(Debug, Error, PartialEq)]
pub enum SimplexError {
    #[error("infeasible (phase-one residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("unbounded along variable `{variable}`")]
    Unbounded { variable: String },
    #[error("no convergence after {0} pivots")]
    IterationLimit(usize),
    #[error("optimality certificate failed: {0}")]
    Certificate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Marginal value of each constraint's right-hand side.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-9;
const PRICE_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows × (cols + 1)`, right-hand side last.
    a: Vec<f64>,
    /// Reduced costs, `cols + 1` entries.
    r: Vec<f64>,
    basis: Vec<usize>,
    allowed: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let w = self.cols + 1;
        let inv = 1.0 / self.at(p, q);
        for j in 0..w {
            self.a[p * w + j] *= inv;
        }
        self.a[p * w + q] = 1.0;
        let prow: Vec<f64> = self.a[p * w..(p + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == p {
                continue;
            }
            let f = self.a[i * w + q];
            if f != 0.0 {
                let row = &mut self.a[i * w..(i + 1) * w];
                for (x, &y) in row.iter_mut().zip(&prow) {
                    *x -= f * y;
                }
                row[q] = 0.0;
            }
        }
        let f = self.r[q];
        if f != 0.0 {
            for (x, &y) in self.r.iter_mut().zip(&prow) {
                *x -= f * y;
            }
            self.r[q] = 0.0;
        }
        self.basis[p] = q;
        self.pivots += 1;
    }

    /// Sets reduced costs for objective `c` (maximized) given the basis.
    fn price(&mut self, c: &[f64]) {
        self.r = c.to_vec();
        self.r.push(0.0);
        let w = self.cols + 1;
        for i in 0..self.rows {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    self.r[j] -= cb * self.a[i * w + j];
                }
            }
        }
    }

    fn optimize(&mut self, limit: usize, names: &dyn Fn(usize) -> String) -> Result<(), SimplexError> {
        let mut degenerate = 0;
        loop {
            if self.pivots > limit {
                return Err(SimplexError::IterationLimit(self.pivots));
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut q = None;
            let mut best = PRICE_TOL;
            for j in 0..self.cols {
                if !self.allowed[j] || self.r[j] <= PRICE_TOL {
                    continue;
                }
                if bland {
                    q = Some(j);
                    break;
                }
                if self.r[j] > best {
                    best = self.r[j];
                    q = Some(j);
                }
            }
            let Some(q) = q else { return Ok(()) };
            let mut p: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, q);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    p = match p {
                        None => Some((i, ratio)),
                        Some((pi, pr)) => {
                            if ratio < pr - 1e-12 || (ratio <= pr + 1e-12 && self.basis[i] < self.basis[pi]) {
                                Some((i, ratio))
                            } else {
                                Some((pi, pr))
                            }
                        }
                    }
                }
            }
            let Some((p, ratio)) = p else {
                return Err(SimplexError::Unbounded { variable: names(q) });
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(p, q);
        }
    }
}

/// Solves `lp` to optimality.
pub fn solve(lp: &LinearProgram) -> Result<Solution, SimplexError> {
    let n = lp.num_vars();
    let m = lp.constraints.len();
    let sign = match lp.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };

    // rows with nonnegative right-hand sides
    let mut flip = vec![1.0; m];
    let mut rel = Vec::with_capacity(m);
    for (i, c) in lp.constraints.iter().enumerate() {
        let mut r = c.relation;
        if c.rhs < 0.0 {
            flip[i] = -1.0;
            r = match r {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        rel.push(r);
    }
    let n_slack = rel.iter().filter(|r| **r != Relation::Eq).count();
    let n_art = rel.iter().filter(|r| **r != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut t = Tableau {
        rows: m,
        cols,
        a: vec![0.0; m * w],
        r: Vec::new(),
        basis: vec![0; m],
        allowed: vec![true; cols],
        pivots: 0,
    };
    let mut slack_col = vec![usize::MAX; m];
    let mut art_col = vec![usize::MAX; m];
    let (mut s, mut a) = (n, n + n_slack);
    for (i, c) in lp.constraints.iter().enumerate() {
        for &(j, v) in &c.terms {
            t.a[i * w + j] += flip[i] * v;
        }
        t.a[i * w + cols] = flip[i] * c.rhs;
        match rel[i] {
            Relation::Le => {
                t.a[i * w + s] = 1.0;
                slack_col[i] = s;
                t.basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t.a[i * w + s] = -1.0;
                slack_col[i] = s;
                s += 1;
                t.a[i * w + a] = 1.0;
                art_col[i] = a;
                t.basis[i] = a;
                a += 1;
            }
            Relation::Eq => {
                t.a[i * w + a] = 1.0;
                art_col[i] = a;
                t.basis[i] = a;
                a += 1;
            }
        }
    }
    let name_of = |j: usize| {
        if j < n {
            lp.names[j].clone()
        } else {
            format!("aux{j}")
        }
    };
    let limit = 50 * (m + cols) + 1000;

    // phase one: drive artificials to zero
    if n_art > 0 {
        let mut c1 = vec![0.0; cols];
        for j in n + n_slack..cols {
            c1[j] = -1.0;
        }
        t.price(&c1);
        t.optimize(limit, &name_of)?;
        let residual: f64 = (0..m)
            .filter(|&i| t.basis[i] >= n + n_slack)
            .map(|i| t.rhs(i))
            .sum();
        let scale = 1.0 + lp.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
        if residual > 1e-9 * scale {
            return Err(SimplexError::Infeasible { residual });
        }
        for i in 0..m {
            if t.basis[i] >= n + n_slack {
                if let Some(j) = (0..n + n_slack).find(|&j| t.at(i, j).abs() > PIVOT_TOL) {
                    t.pivot(i, j);
                }
            }
        }
        for j in n + n_slack..cols {
            t.allowed[j] = false;
        }
    }

    // phase two
    let mut c2 = vec![0.0; cols];
    for j in 0..n {
        c2[j] = sign * lp.objective[j];
    }
    t.price(&c2);
    t.optimize(limit, &name_of)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    // duals of the normalized rows from the reduced costs of unit columns
    let y: Vec<f64> = (0..m)
        .map(|i| match rel[i] {
            Relation::Le => -t.r[slack_col[i]],
            Relation::Ge => t.r[slack_col[i]],
            Relation::Eq => -t.r[art_col[i]],
        })
        .collect();
    let objective = lp.objective_value(&x);
    certify(lp, &x, &y, &flip, &rel, sign)?;
    let duals = y.iter().zip(&flip).map(|(v, f)| sign * v * f).collect();
    Ok(Solution {
        x,
        objective,
        duals,
        pivots: t.pivots,
    })
}

/// Primal feasibility, dual feasibility and zero gap, checked against the
/// original data.
fn certify(
    lp: &LinearProgram,
    x: &[f64],
    y: &[f64],
    flip: &[f64],
    rel: &[Relation],
    sign: f64,
) -> Result<(), SimplexError> {
    let scale = 1.0
        + lp.objective.iter().map(|c| c.abs()).fold(0.0, f64::max)
        + lp.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
    let tol = 1e-7 * scale;
    let viol = lp.max_violation(x);
    if viol > tol {
        return Err(SimplexError::Certificate(format!("primal violation {viol:.3e}")));
    }
    let mut reduced: Vec<f64> = lp.objective.iter().map(|c| sign * c).collect();
    let mut dual_obj = 0.0;
    for (i, c) in lp.constraints.iter().enumerate() {
        let ok = match rel[i] {
            Relation::Le => y[i] >= -tol,
            Relation::Ge => y[i] <= tol,
            Relation::Eq => true,
        };
        if !ok {
            return Err(SimplexError::Certificate(format!("dual sign of `{}`", c.name)));
        }
        for &(j, a) in &c.terms {
            reduced[j] -= y[i] * flip[i] * a;
        }
        dual_obj += y[i] * flip[i] * c.rhs;
    }
    if let Some(j) = (0..reduced.len()).find(|&j| reduced[j] > tol) {
        return Err(SimplexError::Certificate(format!(
            "reduced cost {:.3e} of `{}`",
            reduced[j], lp.names[j]
        )));
    }
    let primal = sign * lp.objective_value(x);
    if (primal - dual_obj).abs() > tol * (1.0 + primal.abs()) {
        return Err(SimplexError::Certificate(format!("duality gap {:.3e}", primal - dual_obj)));
    }
    Ok(())
}
