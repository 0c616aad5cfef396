//! Dense tableau simplex for small covering-type linear programs.
//!
//! Solves `min cᵀx  s.t.  A x ≥ b, x ≥ 0` with a nonnegative cost vector by
//! running the primal simplex on the dual `max bᵀy  s.t.  Aᵀy ≤ c, y ≥ 0`,
//! whose origin is feasible when `c ≥ 0`, so no phase one is needed. The
//! primal solution is read off the reduced costs of the dual slack columns.
//!
//! Rows of the primal (columns of the dual) can be appended after a solve;
//! the current basis stays feasible and the next solve continues from it.

use crate::error::{AfmError, Result};

const PIVOT_EPS: f64 = 1e-11;
const PRICE_EPS: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const DEGENERATE_STREAK: usize = 200;
// Tiny deterministic cost perturbation; breaks the massive degeneracy of the
// all-slack starting vertex when many costs are zero.
const PERTURB: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// One-shot builder over [`IncrementalCovering`].
#[derive(Clone, Debug)]
pub struct CoveringLp {
    costs: Vec<f64>,
    rows: Vec<f64>,
    rhs: Vec<f64>,
}

impl CoveringLp {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        check_costs(&costs)?;
        Ok(Self {
            costs,
            rows: Vec::new(),
            rhs: Vec::new(),
        })
    }

    pub fn nvars(&self) -> usize {
        self.costs.len()
    }

    pub fn nrows(&self) -> usize {
        self.rhs.len()
    }

    /// Adds `coeffs · x ≥ rhs`.
    pub fn add_row(&mut self, coeffs: &[f64], rhs: f64) {
        assert_eq!(coeffs.len(), self.nvars(), "row width");
        self.rows.extend_from_slice(coeffs);
        self.rhs.push(rhs);
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let mut s = IncrementalCovering::new(self.costs.clone())?;
        s.add_rows(&self.rows, &self.rhs);
        s.solve()
    }
}

fn check_costs(costs: &[f64]) -> Result<()> {
    if let Some(c) = costs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(AfmError::InvalidParameter(format!(
            "covering LP needs finite nonnegative costs, got {c}"
        )));
    }
    Ok(())
}

/// Dual tableau kept between solves.
///
/// Row layout: `[B⁻¹ (m) | dual columns (n) | rhs]`, one row per primal
/// variable plus the objective row, whose first `m` entries are the primal
/// solution.
#[derive(Clone, Debug)]
pub struct IncrementalCovering {
    m: usize,
    n: usize,
    costs: Vec<f64>,
    tab: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    // original rows, kept so a failed warm start can restart from scratch
    rows: Vec<f64>,
    rhs: Vec<f64>,
    // no pivots since the slack basis
    fresh: bool,
}

impl IncrementalCovering {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        check_costs(&costs)?;
        let m = costs.len();
        let width = m + 1;
        let mut tab = vec![0.0; (m + 1) * width];
        for r in 0..m {
            tab[r * width + r] = 1.0;
            tab[r * width + m] = costs[r] + PERTURB * perturbation(r);
        }
        Ok(Self {
            m,
            n: 0,
            costs,
            tab,
            basis: (0..m).collect(),
            pivots: 0,
            rows: Vec::new(),
            rhs: Vec::new(),
            fresh: true,
        })
    }

    fn width(&self) -> usize {
        self.m + self.n + 1
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    /// Appends primal rows `A x ≥ b`; `rows` is row-major, `nvars` wide.
    pub fn add_rows(&mut self, rows: &[f64], rhs: &[f64]) {
        let m = self.m;
        assert_eq!(rows.len(), rhs.len() * m, "row block shape");
        let k = rhs.len();
        if k == 0 {
            return;
        }
        self.rows.extend_from_slice(rows);
        self.rhs.extend_from_slice(rhs);
        let old_w = self.width();
        let new_n = self.n + k;
        let new_w = m + new_n + 1;
        let mut tab = vec![0.0; (m + 1) * new_w];
        for r in 0..=m {
            let src = &self.tab[r * old_w..(r + 1) * old_w];
            let dst = &mut tab[r * new_w..(r + 1) * new_w];
            dst[..old_w - 1].copy_from_slice(&src[..old_w - 1]);
            dst[new_w - 1] = src[old_w - 1];
            // new column = B⁻¹ a (objective row: xᵀa − b)
            let binv = &src[..m];
            for (c, a) in rows.chunks_exact(m).enumerate() {
                let v: f64 = binv.iter().zip(a).map(|(p, q)| p * q).sum();
                dst[old_w - 1 + c] = if r == m { v - rhs[c] } else { v };
            }
        }
        self.tab = tab;
        self.n = new_n;
    }

    /// Removes nonbasic rows (index ≥ `protected`) whose slack at the current
    /// solution exceeds `min_slack`. Returns the removed indices, ascending,
    /// numbered as before the call.
    pub fn drop_slack_rows(&mut self, min_slack: f64, protected: usize) -> Vec<usize> {
        let m = self.m;
        let old_w = self.width();
        let obj = m * old_w;
        let mut basic = vec![false; self.n];
        for &b in &self.basis {
            if b >= m {
                basic[b - m] = true;
            }
        }
        let removed: Vec<usize> = (protected..self.n)
            .filter(|&k| !basic[k] && self.tab[obj + m + k] > min_slack)
            .collect();
        if removed.is_empty() {
            return removed;
        }
        let mut keep = vec![true; self.n];
        for &k in &removed {
            keep[k] = false;
        }
        let mut new_index = vec![usize::MAX; self.n];
        let mut next = 0;
        for k in 0..self.n {
            if keep[k] {
                new_index[k] = next;
                next += 1;
            }
        }
        let new_n = next;
        let new_w = m + new_n + 1;
        let mut tab = vec![0.0; (m + 1) * new_w];
        for r in 0..=m {
            let src = &self.tab[r * old_w..(r + 1) * old_w];
            let dst = &mut tab[r * new_w..(r + 1) * new_w];
            dst[..m].copy_from_slice(&src[..m]);
            for k in 0..self.n {
                if keep[k] {
                    dst[m + new_index[k]] = src[m + k];
                }
            }
            dst[new_w - 1] = src[old_w - 1];
        }
        for b in &mut self.basis {
            if *b >= m {
                *b = m + new_index[*b - m];
            }
        }
        let mut rows = Vec::with_capacity(new_n * m);
        let mut rhs = Vec::with_capacity(new_n);
        for k in (0..self.n).filter(|&k| keep[k]) {
            rows.extend_from_slice(&self.rows[k * m..(k + 1) * m]);
            rhs.push(self.rhs[k]);
        }
        self.rows = rows;
        self.rhs = rhs;
        self.tab = tab;
        self.n = new_n;
        removed
    }

    /// Replaces the cost vector, keeping the current basis. The next
    /// [`solve`](Self::solve) restores feasibility with dual simplex pivots.
    pub fn set_costs(&mut self, costs: &[f64]) -> Result<()> {
        assert_eq!(costs.len(), self.m, "cost width");
        check_costs(costs)?;
        self.costs.copy_from_slice(costs);
        let m = self.m;
        let width = self.width();
        for r in 0..m {
            let row = &self.tab[r * width..(r + 1) * width];
            let v: f64 = (0..m)
                .map(|s| row[s] * (costs[s] + PERTURB * perturbation(s)))
                .sum();
            self.tab[r * width + width - 1] = v;
        }
        Ok(())
    }

    fn restart(&mut self) {
        let mut fresh = Self::new(self.costs.clone()).expect("costs already checked");
        let rows = std::mem::take(&mut self.rows);
        let rhs = std::mem::take(&mut self.rhs);
        fresh.add_rows(&rows, &rhs);
        fresh.pivots = self.pivots;
        *self = fresh;
    }

    /// Dual simplex on the tableau: drives negative basic values out while
    /// keeping the reduced profits nonnegative. Returns false when the warm
    /// start is unusable.
    fn restore_feasibility(&mut self) -> bool {
        let m = self.m;
        let width = self.width();
        let ncols = width - 1;
        let obj = m * width;
        let infeasible = (0..m).any(|r| self.tab[r * width + ncols] < -FEAS_TOL);
        if !infeasible {
            return true;
        }
        if self.tab[obj..obj + ncols].iter().any(|&v| v < -PRICE_EPS) {
            return false;
        }
        let limit = 20 * (m + ncols) + 100;
        for _ in 0..limit {
            let mut leave = None;
            let mut most = -FEAS_TOL;
            for r in 0..m {
                let v = self.tab[r * width + ncols];
                if v < most {
                    most = v;
                    leave = Some(r);
                }
            }
            let Some(prow) = leave else { return true };
            // Harris two-pass ratio test: bound the step with relaxed
            // reduced profits, then take the largest pivot within it.
            let prow_vals = &self.tab[prow * width..prow * width + ncols];
            let objrow = &self.tab[obj..obj + ncols];
            let mut bound = f64::INFINITY;
            for (j, &a) in prow_vals.iter().enumerate() {
                if a < -PIVOT_EPS {
                    bound = bound.min((objrow[j].max(0.0) + OPT_TOL) / -a);
                }
            }
            let mut enter: Option<(usize, f64)> = None;
            for (j, &a) in prow_vals.iter().enumerate() {
                if a < -PIVOT_EPS
                    && objrow[j].max(0.0) / -a <= bound
                    && enter.is_none_or(|(_, big)| -a > big)
                {
                    enter = Some((j, -a));
                }
            }
            let Some((col, _)) = enter else { return false };
            self.pivot_on(prow, col);
        }
        false
    }

    fn pivot_on(&mut self, prow: usize, col: usize) {
        let width = self.width();
        pivot(&mut self.tab, width, self.m + 1, prow, col);
        self.basis[prow] = col;
        self.pivots += 1;
        self.fresh = false;
    }

    pub fn solve(&mut self) -> Result<LpSolution> {
        if !self.restore_feasibility() {
            self.restart();
        }
        self.primal_phase()?;
        if !self.fresh && !self.certified() {
            log::trace!("warm-started tableau lost accuracy, re-solving from scratch");
            self.restart();
            self.primal_phase()?;
        }
        let m = self.m;
        let obj = m * self.width();
        let x: Vec<f64> = self.tab[obj..obj + m].iter().map(|v| v.max(0.0)).collect();
        let objective = x.iter().zip(&self.costs).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: self.pivots,
        })
    }

    fn primal_phase(&mut self) -> Result<()> {
        let m = self.m;
        let width = self.width();
        let ncols = width - 1;
        let obj = m * width;
        let max_pivots = self.pivots + 50 * (ncols + m) + 1000;
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_STREAK;
            let row = &self.tab[obj..obj + ncols];
            let entering = if bland {
                row.iter().position(|&v| v < -PRICE_EPS)
            } else {
                let mut best = None;
                let mut best_v = -PRICE_EPS;
                for (j, &v) in row.iter().enumerate() {
                    if v < best_v {
                        best_v = v;
                        best = Some(j);
                    }
                }
                best
            };
            let Some(col) = entering else { return Ok(()) };

            let rhs = |r: usize| self.tab[r * width + ncols].max(0.0);
            let colv = |r: usize| self.tab[r * width + col];
            let mut leave: Option<(usize, f64)> = None;
            if bland {
                // textbook rule, smallest basis label among ties
                for r in 0..m {
                    let a = colv(r);
                    if a > PIVOT_EPS {
                        let ratio = rhs(r) / a;
                        let better = match leave {
                            None => true,
                            Some((lr, lratio)) => {
                                ratio < lratio - 1e-13
                                    || (ratio <= lratio + 1e-13 && self.basis[r] < self.basis[lr])
                            }
                        };
                        if better {
                            leave = Some((r, ratio));
                        }
                    }
                }
            } else {
                let mut bound = f64::INFINITY;
                for r in 0..m {
                    let a = colv(r);
                    if a > PIVOT_EPS {
                        bound = bound.min((rhs(r) + FEAS_TOL) / a);
                    }
                }
                let mut big = 0.0;
                for r in 0..m {
                    let a = colv(r);
                    if a > PIVOT_EPS && rhs(r) / a <= bound && a > big {
                        big = a;
                        leave = Some((r, rhs(r) / a));
                    }
                }
            }
            let Some((prow, ratio)) = leave else {
                return Err(AfmError::Solver(
                    "dual unbounded, the covering LP is infeasible".into(),
                ));
            };
            degenerate = if ratio <= 1e-15 { degenerate + 1 } else { 0 };
            self.pivot_on(prow, col);
            if self.pivots > max_pivots {
                return Err(AfmError::Solver(format!(
                    "no convergence after {} pivots",
                    self.pivots
                )));
            }
        }
    }

    /// Checks primal feasibility, dual feasibility and a zero duality gap
    /// against the original rows.
    fn certified(&self) -> bool {
        let m = self.m;
        let width = self.width();
        let ncols = width - 1;
        let obj = m * width;
        let x = &self.tab[obj..obj + m];
        let mut y = vec![0.0; self.n];
        for (r, &b) in self.basis.iter().enumerate() {
            if b >= m {
                y[b - m] = self.tab[r * width + ncols];
            }
        }
        if y.iter().any(|&v| v < -1e-7) {
            return false;
        }
        let scale = 1.0 + self.costs.iter().fold(0.0f64, |a, &c| a.max(c));
        let mut aty = vec![0.0; m];
        let mut dual_obj = 0.0;
        for ((row, &b), &yk) in self.rows.chunks_exact(m).zip(&self.rhs).zip(&y) {
            let ax: f64 = row.iter().zip(x).map(|(a, v)| a * v.max(0.0)).sum();
            if ax < b - 1e-7 * (1.0 + b.abs()) {
                return false;
            }
            if yk != 0.0 {
                for (acc, a) in aty.iter_mut().zip(row) {
                    *acc += a * yk;
                }
                dual_obj += b * yk;
            }
        }
        if aty.iter().zip(&self.costs).any(|(a, c)| *a > c + 1e-7 * scale) {
            return false;
        }
        let primal: f64 = x.iter().zip(&self.costs).map(|(v, c)| v.max(0.0) * c).sum();
        (primal - dual_obj).abs() <= 1e-8 * (1.0 + primal.abs())
    }
}

fn perturbation(r: usize) -> f64 {
    // splitmix-style hash to [1, 2)
    let mut z = (r as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    1.0 + (z >> 11) as f64 / (1u64 << 53) as f64
}

fn pivot(t: &mut [f64], width: usize, nrows: usize, prow: usize, col: usize) {
    let inv = 1.0 / t[prow * width + col];
    let (before, rest) = t.split_at_mut(prow * width);
    let (prow_slice, after) = rest.split_at_mut(width);
    for v in prow_slice.iter_mut() {
        *v *= inv;
    }
    prow_slice[col] = 1.0;
    let eliminate = |row: &mut [f64]| {
        let f = row[col];
        if f != 0.0 {
            for (a, &p) in row.iter_mut().zip(prow_slice.iter()) {
                *a -= f * p;
            }
            row[col] = 0.0;
        }
    };
    before.chunks_exact_mut(width).for_each(eliminate);
    after
        .chunks_exact_mut(width)
        .take(nrows - prow - 1)
        .for_each(eliminate);
}
