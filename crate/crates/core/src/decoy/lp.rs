//! Dense two-phase simplex with Bland's anti-cycling rule. Sized for the
//! decoy programs: a few dozen rows over at most a few hundred columns.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min` (or `max`) `objective . x` subject to the constraints and `x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub maximize: bool,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 50_000;
const DEGENERATE_SWITCH: usize = 50;

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost . x` over the current basis, entering only columns
    /// marked `allowed`. Returns false if unbounded.
    ///
    /// Dantzig pricing, falling back to Bland's rule during runs of
    /// degenerate pivots.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<bool> {
        let mut degenerate_run = 0usize;
        let mut in_basis = vec![false; self.cols];
        for _ in 0..MAX_PIVOTS {
            in_basis.iter_mut().for_each(|b| *b = false);
            for &b in &self.basis {
                in_basis[b] = true;
            }
            let bland = degenerate_run > DEGENERATE_SWITCH;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.cols {
                if !allowed[j] || in_basis[j] {
                    continue;
                }
                let mut rc = cost[j];
                for (i, &b) in self.basis.iter().enumerate() {
                    rc -= cost[b] * self.t[i][j];
                }
                let scale = 1.0 + cost[j].abs();
                if rc < -1e-10 * scale {
                    if bland {
                        entering = Some((j, rc));
                        break;
                    }
                    if entering.is_none_or(|(_, best)| rc < best) {
                        entering = Some((j, rc));
                    }
                }
            }
            let Some((c, _)) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.t.len() {
                let a = self.t[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.t[i][self.cols] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                            if ratio < lr && !tie || tie && self.basis[i] < self.basis[li] {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            if ratio.abs() <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::Degenerate("simplex pivot limit reached".into()))
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.objective.len();
    if lp.constraints.iter().any(|c| c.coeffs.len() != n) {
        return Err(Error::domain("constraint width differs from objective"));
    }
    if lp
        .constraints
        .iter()
        .any(|c| !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()))
        || lp.objective.iter().any(|v| !v.is_finite())
    {
        return Err(Error::domain("non-finite linear program data"));
    }
    // Solve with right-hand sides of order one; the solution scales back linearly.
    let rhs_scale = lp.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
    let rhs_scale = if rhs_scale > 0.0 { rhs_scale } else { 1.0 };
    // Normalize to nonnegative right-hand sides.
    let rows: Vec<(Vec<f64>, Sense, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let flipped = match c.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs / rhs_scale)
            } else {
                (c.coeffs.clone(), c.sense, c.rhs / rhs_scale)
            }
        })
        .collect();
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let cols = n + n_slack + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut is_art = vec![false; cols];
    let (mut s, mut a) = (n, n + n_slack);
    for (i, (coeffs, sense, rhs)) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(coeffs);
        t[i][cols] = *rhs;
        match sense {
            Sense::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Sense::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                is_art[a] = true;
                a += 1;
            }
            Sense::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                is_art[a] = true;
                a += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols };

    if n_art > 0 {
        let cost: Vec<f64> = is_art.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let all = vec![true; cols];
        tab.optimize(&cost, &all)?;
        let infeas: f64 = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| is_art[b])
            .map(|(i, _)| tab.t[i][cols])
            .sum();
        let scale = 1.0 + rows.iter().map(|r| r.2).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return Err(Error::Infeasible(format!(
                "phase one ended with residual {infeas:.3e}"
            )));
        }
        // Drive remaining (zero-level) artificials out of the basis.
        let mut i = 0;
        while i < tab.t.len() {
            if is_art[tab.basis[i]] {
                let col = (0..n + n_slack).find(|&j| tab.t[i][j].abs() > PIVOT_TOL);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        // Redundant row.
                        tab.t.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    let sign = if lp.maximize { -1.0 } else { 1.0 };
    let mut cost = vec![0.0; cols];
    for (c, &o) in cost.iter_mut().zip(&lp.objective) {
        *c = sign * o;
    }
    let allowed: Vec<bool> = is_art.iter().map(|&b| !b).collect();
    if !tab.optimize(&cost, &allowed)? {
        return Err(Error::Degenerate("linear program is unbounded".into()));
    }
    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.t[i][cols].max(0.0) * rhs_scale;
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective })
}
