//! Joint L∞ approximation of several kernel signatures over one shared,
//! sparse frequency set.
//!
//! LP variables, in order: `α[i][ω]` for every kernel `i` and pool frequency
//! `ω`, one error bound `t[i]` per kernel, one envelope `e[ω] ≥ max_i α[i][ω]`
//! per frequency. The program is
//!
//! ```text
//! min  Σ_i t[i] + γ Σ_ω e[ω]
//! s.t. |k_i(λ) − Σ_ω α[i][ω] cos(ωλ)| ≤ t[i]   for λ in the lag grid
//!      α[i][ω] ≤ e[ω],   all variables ≥ 0
//! ```
//!
//! The lag constraints are generated lazily: the LP is first solved on a
//! coarse subset of the grid, then the points where the bound is violated are
//! added until the solution is feasible on the whole grid. The final optimum
//! is that of the full program.

use crate::error::{AfmError, Result};

use super::signature::KernelSignature;
use super::simplex::IncrementalCovering;
use super::spectrum::{FrequencyPool, Spectrum, PRUNE_EPS};

const VIOLATION_TOL: f64 = 1e-9;
const SEED_STRIDE: usize = 10;
const MAX_CUT_ROUNDS: usize = 60;
// lag rows with more slack than this are dropped before a re-solve
const DROP_SLACK: f64 = 0.05;

/// Raw LP optimum over the whole pool.
#[derive(Clone, Debug)]
pub struct JointLpSolution {
    /// `weights[kernel][pool index]`
    pub weights: Vec<Vec<f64>>,
    /// Per-kernel error bounds at the optimum.
    pub bounds: Vec<f64>,
    pub objective: f64,
    pub gamma: f64,
}

impl JointLpSolution {
    /// Pool indices that survive pruning; index 0 is always kept.
    pub fn support(&self) -> Vec<usize> {
        let nf = self.weights[0].len();
        (0..nf)
            .filter(|&j| {
                j == 0
                    || self
                        .weights
                        .iter()
                        .map(|row| row[j])
                        .fold(0.0, f64::max)
                        > PRUNE_EPS
            })
            .collect()
    }
}

fn check_inputs(sigs: &[KernelSignature], pool: &FrequencyPool) -> Result<()> {
    if sigs.is_empty() {
        return Err(AfmError::InvalidParameter("no kernel signatures".into()));
    }
    let lm = sigs[0].lambda_max();
    if sigs.iter().any(|s| (s.lambda_max() - lm).abs() > 1e-12) {
        return Err(AfmError::InvalidParameter(
            "all signatures must share lambda_max".into(),
        ));
    }
    if pool.frequencies().is_empty() || pool.grid().is_empty() {
        return Err(AfmError::InvalidParameter("empty frequency pool".into()));
    }
    Ok(())
}

/// Solves the joint LP at sparsity weight `gamma` without pruning.
pub fn joint_lp_solve(
    sigs: &[KernelSignature],
    pool: &FrequencyPool,
    gamma: f64,
) -> Result<JointLpSolution> {
    let mut program = JointProgram::new(sigs, pool)?;
    let ones = vec![1.0; pool.frequencies().len()];
    program.solve(gamma, &ones)
}

/// The joint LP over one pool, kept alive between solves so that changes of
/// the regularizer weights restart from the previous optimal basis.
struct JointProgram {
    nk: usize,
    nf: usize,
    targets: Vec<Vec<f64>>,
    cosines: Vec<Vec<f64>>,
    lp: IncrementalCovering,
    // which side of `|k − k̂| ≤ t` is in the LP, per kernel and lag
    active: Vec<Vec<[bool; 2]>>,
    pending: Vec<(usize, usize, usize)>,
    // (kernel, lag, side) of every lag row, in LP order after the envelope rows
    tags: Vec<(usize, usize, usize)>,
}

impl JointProgram {
    fn new(sigs: &[KernelSignature], pool: &FrequencyPool) -> Result<Self> {
        check_inputs(sigs, pool)?;
        let nk = sigs.len();
        let freqs = pool.frequencies();
        let nf = freqs.len();
        let grid = pool.grid();
        let nvars = nk * nf + nk + nf;
        let targets = sigs
            .iter()
            .map(|s| grid.iter().map(|&l| s.eval(l)).collect())
            .collect();
        let cosines = grid
            .iter()
            .map(|&l| freqs.iter().map(|w| (w * l).cos()).collect())
            .collect();

        let mut lp = IncrementalCovering::new(vec![0.0; nvars])?;
        let mut block = Vec::new();
        let mut row = vec![0.0; nvars];
        for j in 0..nf {
            row.fill(0.0);
            row[nk * nf + nk + j] = 1.0;
            for i in 0..nk {
                row[i * nf + j] = -1.0;
                block.extend_from_slice(&row);
                row[i * nf + j] = 0.0;
            }
        }
        lp.add_rows(&block, &vec![0.0; nk * nf]);
        Ok(Self {
            nk,
            nf,
            targets,
            cosines,
            lp,
            active: vec![vec![[false; 2]; grid.len()]; nk],
            pending: (0..nk)
                .flat_map(|i| {
                    seed_points(grid.len())
                        .into_iter()
                        .flat_map(move |g| [(i, g, 0), (i, g, 1)])
                })
                .collect(),
            tags: Vec::new(),
        })
    }

    fn nvars(&self) -> usize {
        self.nk * self.nf + self.nk + self.nf
    }

    /// Optimum of `Σ t_i + γ Σ_ω penalty_ω · max_i α_iω`.
    fn solve(&mut self, gamma: f64, penalty: &[f64]) -> Result<JointLpSolution> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(AfmError::InvalidParameter(format!("gamma = {gamma}")));
        }
        let (nk, nf) = (self.nk, self.nf);
        let mut costs = vec![0.0; self.nvars()];
        costs[nk * nf..nk * nf + nk].fill(1.0);
        for (c, p) in costs[nk * nf + nk..].iter_mut().zip(penalty) {
            *c = gamma * p;
        }
        self.lp.set_costs(&costs)?;

        // forget lag rows that are far from tight; they come back if needed
        let protected = nk * nf;
        for k in self.lp.drop_slack_rows(DROP_SLACK, protected).into_iter().rev() {
            let (i, g, side) = self.tags.remove(k - protected);
            self.active[i][g][side] = false;
        }

        let mut row = vec![0.0; self.nvars()];
        let mut block = Vec::new();
        let mut rhs = Vec::new();
        for _round in 0..MAX_CUT_ROUNDS {
            for (i, g, side) in self.pending.drain(..) {
                self.active[i][g][side] = true;
                self.tags.push((i, g, side));
                // side 0: k̂ + t ≥ k, side 1: −k̂ + t ≥ −k
                let sign = if side == 0 { 1.0 } else { -1.0 };
                row.fill(0.0);
                for (v, c) in row[i * nf..(i + 1) * nf].iter_mut().zip(&self.cosines[g]) {
                    *v = sign * c;
                }
                row[nk * nf + i] = 1.0;
                block.extend_from_slice(&row);
                rhs.push(sign * self.targets[i][g]);
            }
            self.lp.add_rows(&block, &rhs);
            block.clear();
            rhs.clear();
            let sol = self.lp.solve()?;
            log::trace!(
                "gamma {gamma:.3e} round {_round}: {} rows, {} pivots, objective {:.6e}",
                self.lp.nrows(),
                sol.pivots,
                sol.objective
            );

            let weights: Vec<Vec<f64>> = (0..nk)
                .map(|i| sol.x[i * nf..(i + 1) * nf].to_vec())
                .collect();
            let bounds: Vec<f64> = (0..nk).map(|i| sol.x[nk * nf + i]).collect();

            let mut added = false;
            for i in 0..nk {
                let diff: Vec<f64> = self
                    .cosines
                    .iter()
                    .zip(&self.targets[i])
                    .map(|(c, k)| k - c.iter().zip(&weights[i]).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                for side in 0..2 {
                    let sign = if side == 0 { 1.0 } else { -1.0 };
                    let resid = |g: usize| sign * diff[g] - bounds[i];
                    // add every local maximum of the violation
                    for g in 0..diff.len() {
                        let v = resid(g);
                        let left = if g == 0 { f64::NEG_INFINITY } else { resid(g - 1) };
                        let right = if g + 1 < diff.len() { resid(g + 1) } else { f64::NEG_INFINITY };
                        if v > VIOLATION_TOL && v >= left && v >= right && !self.active[i][g][side] {
                            self.pending.push((i, g, side));
                            added = true;
                        }
                    }
                }
            }
            if !added {
                return Ok(JointLpSolution {
                    weights,
                    bounds,
                    objective: sol.objective,
                    gamma,
                });
            }
        }
        Err(AfmError::Solver(
            "lag-constraint generation did not converge".into(),
        ))
    }
}

fn seed_points(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).step_by(SEED_STRIDE).collect();
    if *v.last().unwrap() != n - 1 {
        v.push(n - 1);
    }
    v
}

fn to_spectrum(
    sol: &JointLpSolution,
    sigs: &[KernelSignature],
    pool: &FrequencyPool,
) -> Result<Spectrum> {
    let support = sol.support();
    let frequencies = support.iter().map(|&j| pool.frequencies()[j]).collect();
    let weights = sol
        .weights
        .iter()
        .map(|row| support.iter().map(|&j| row[j]).collect())
        .collect();
    let mut s = Spectrum::new(frequencies, weights, pool.lambda_max())?;
    s.gamma = Some(sol.gamma);
    Ok(s.with_errors(sigs, pool.grid()))
}

/// Joint LP at a fixed sparsity weight, pruned to its support.
pub fn joint_lp_spectrum(
    sigs: &[KernelSignature],
    pool: &FrequencyPool,
    gamma: f64,
) -> Result<Spectrum> {
    let sol = joint_lp_solve(sigs, pool, gamma)?;
    to_spectrum(&sol, sigs, pool)
}

/// Knobs for [`spectrum_for_dim_with`].
#[derive(Clone, Debug)]
pub struct BisectionOptions {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub max_iters: usize,
    /// Stop once a hit is found and the bracket is narrower than this
    /// (natural-log units).
    pub log_tol: f64,
    /// Re-solve without the regularizer on the selected frequencies.
    pub refit: bool,
    /// Solves per `γ` with the envelope penalty reweighted by
    /// `ε / (e_ω + ε)`, `ε = reweight_eps`; 0 bisects the plain LP.
    pub reweight_rounds: usize,
    pub reweight_eps: f64,
    /// When no `γ` hits the target, prune the smallest larger support down
    /// to it instead of failing.
    pub eliminate: bool,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self {
            gamma_lo: 1e-6,
            gamma_hi: 1e3,
            max_iters: 40,
            log_tol: 1e-3,
            refit: true,
            reweight_rounds: 4,
            reweight_eps: 1e-2,
            eliminate: true,
        }
    }
}

pub fn spectrum_for_dim(
    sigs: &[KernelSignature],
    pool: &FrequencyPool,
    target_nfreq: usize,
) -> Result<Spectrum> {
    spectrum_for_dim_with(sigs, pool, target_nfreq, &BisectionOptions::default())
}

/// Reweighted joint solves at `gamma`, starting from the envelope of a
/// reference solution. The reweighting turns the envelope penalty into a
/// count-like penalty: with nonnegative weights `Σ_ω α_ω ≈ k(0)` for every
/// good fit, so the plain penalty barely distinguishes sparse from dense
/// solutions.
fn reweighted_solve(
    program: &mut JointProgram,
    reference: &JointLpSolution,
    gamma: f64,
    rounds: usize,
    eps: f64,
) -> Result<JointLpSolution> {
    let nf = program.nf;
    let penalty_for = |sol: &JointLpSolution| -> Vec<f64> {
        (0..nf)
            .map(|j| {
                let env = sol.weights.iter().map(|r| r[j]).fold(0.0, f64::max);
                // the zero frequency is always part of the map
                if j == 0 {
                    0.0
                } else {
                    eps / (env + eps)
                }
            })
            .collect()
    };
    let mut penalty = penalty_for(reference);
    let mut sol = program.solve(gamma, &penalty)?;
    for _ in 1..rounds.max(1) {
        penalty = penalty_for(&sol);
        sol = program.solve(gamma, &penalty)?;
    }
    Ok(sol)
}

/// Bisects `γ` on a log scale until the pruned support has exactly
/// `target_nfreq` frequencies, keeping the lowest total error among hits.
pub fn spectrum_for_dim_with(
    sigs: &[KernelSignature],
    pool: &FrequencyPool,
    target_nfreq: usize,
    opts: &BisectionOptions,
) -> Result<Spectrum> {
    check_inputs(sigs, pool)?;
    if target_nfreq == 0 {
        return Err(AfmError::InvalidParameter("target_nfreq must be ≥ 1".into()));
    }
    if !(opts.gamma_lo > 0.0 && opts.gamma_hi > opts.gamma_lo && opts.reweight_eps > 0.0) {
        return Err(AfmError::InvalidParameter("bad bisection options".into()));
    }
    let total = |s: &Spectrum| s.linf_errors.iter().sum::<f64>();
    let mut program = JointProgram::new(sigs, pool)?;
    let ones = vec![1.0; pool.frequencies().len()];
    let reference = program.solve(opts.gamma_lo, &ones)?;
    let mut lo = opts.gamma_lo.ln();
    let mut hi = opts.gamma_hi.ln();
    let mut best: Option<Spectrum> = None;
    let mut nearest: Option<Spectrum> = None;
    // smallest support seen above the target, for the elimination fallback
    let mut above: Option<Spectrum> = None;

    for _ in 0..opts.max_iters {
        let mid = 0.5 * (lo + hi);
        let sol = if opts.reweight_rounds == 0 {
            program.solve(mid.exp(), &ones)?
        } else {
            reweighted_solve(
                &mut program,
                &reference,
                mid.exp(),
                opts.reweight_rounds,
                opts.reweight_eps,
            )?
        };
        let count = sol.support().len();
        log::debug!("gamma {:.4e}: {count} frequencies", mid.exp());
        if count == target_nfreq {
            let mut cand = to_spectrum(&sol, sigs, pool)?;
            if opts.refit {
                if let Some(r) = refit(sigs, pool, &cand)? {
                    if total(&r) < total(&cand) {
                        cand = r;
                    }
                }
            }
            if best.as_ref().is_none_or(|b| total(&cand) < total(b)) {
                best = Some(cand);
            }
            hi = mid;
        } else {
            let cand = to_spectrum(&sol, sigs, pool)?;
            if count > target_nfreq && above.as_ref().is_none_or(|a| count < a.nfreq()) {
                above = Some(cand.clone());
            }
            let gap = count.abs_diff(target_nfreq);
            if nearest
                .as_ref()
                .is_none_or(|n| gap < n.nfreq().abs_diff(target_nfreq))
            {
                nearest = Some(cand);
            }
            if count > target_nfreq {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best.is_some() && hi - lo < opts.log_tol {
            break;
        }
    }
    if best.is_none() && opts.eliminate {
        if let Some(start) = above {
            best = Some(eliminate_to(sigs, pool, start, target_nfreq)?);
        }
    }
    match best {
        Some(s) => Ok(s),
        None => {
            let best = nearest.expect("at least one iteration");
            Err(AfmError::TargetUnreachable {
                target: target_nfreq,
                achieved: best.nfreq(),
                best: Box::new(best),
            })
        }
    }
}

/// Greedy backward elimination: repeatedly drops the nonzero frequency whose
/// removal (followed by an unregularized refit) raises the total error
/// least. Used when no `γ` yields the target count, which happens when that
/// count is off the lower convex hull of error versus support size.
fn eliminate_to(
    sigs: &[KernelSignature],
    pool: &FrequencyPool,
    start: Spectrum,
    target: usize,
) -> Result<Spectrum> {
    let gamma = start.gamma;
    let mut freqs = start.frequencies;
    let mut best: Option<Spectrum> = None;
    while freqs.len() > target {
        let mut round: Option<Spectrum> = None;
        for drop in 1..freqs.len() {
            let mut trial = freqs.clone();
            trial.remove(drop);
            let sub = pool.with_frequencies(trial.clone())?;
            let sol = joint_lp_solve(sigs, &sub, 0.0)?;
            let weights = sol.weights.clone();
            let mut s = Spectrum::new(trial, weights, pool.lambda_max())?;
            s.gamma = gamma;
            let s = s.with_errors(sigs, pool.grid());
            let err = s.linf_errors.iter().sum::<f64>();
            if round
                .as_ref()
                .is_none_or(|r| err < r.linf_errors.iter().sum::<f64>())
            {
                round = Some(s);
            }
        }
        let chosen = round.expect("at least two frequencies");
        freqs = chosen.frequencies.clone();
        best = Some(chosen);
    }
    Ok(best.expect("start was above the target"))
}

/// Unregularized re-solve restricted to `spec`'s frequencies. Returns `None`
/// when the refit zeroes a frequency out (the count would change).
fn refit(
    sigs: &[KernelSignature],
    pool: &FrequencyPool,
    spec: &Spectrum,
) -> Result<Option<Spectrum>> {
    let sub = pool.with_frequencies(spec.frequencies.clone())?;
    let sol = joint_lp_solve(sigs, &sub, 0.0)?;
    if sol.support().len() != spec.nfreq() {
        return Ok(None);
    }
    let mut s = to_spectrum(&sol, sigs, &sub)?;
    s.gamma = spec.gamma;
    Ok(Some(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_lab::make_rbf_signature;
    use std::f64::consts::PI;

    fn small_pool() -> FrequencyPool {
        FrequencyPool::uniform(0.5, 12.0, PI, 201).unwrap()
    }

    #[test]
    fn huge_gamma_keeps_only_dc() {
        let sig = make_rbf_signature(0.16, false, None).unwrap();
        let s = joint_lp_spectrum(&[sig], &small_pool(), 1e3).unwrap();
        assert_eq!(s.frequencies, vec![0.0]);
        assert!(s.weights[0][0] <= PRUNE_EPS);
    }

    #[test]
    fn weights_nonnegative_and_support_consistent() {
        let sigs: Vec<_> = [0.12, 0.2]
            .iter()
            .map(|&s| make_rbf_signature(s, false, None).unwrap())
            .collect();
        let s = joint_lp_spectrum(&sigs, &small_pool(), 1e-3).unwrap();
        for j in 1..s.nfreq() {
            let m = s.weights.iter().map(|r| r[j]).fold(0.0, f64::max);
            assert!(m > PRUNE_EPS);
        }
        assert!(s.weights.iter().flatten().all(|&a| a >= 0.0));
    }

    #[test]
    fn reported_bounds_match_grid_errors() {
        let sig = make_rbf_signature(0.2, false, None).unwrap();
        let pool = small_pool();
        let sol = joint_lp_solve(std::slice::from_ref(&sig), &pool, 1e-4).unwrap();
        let s = to_spectrum(&sol, std::slice::from_ref(&sig), &pool).unwrap();
        // the LP bound is attained on the grid
        assert!((s.linf_errors[0] - sol.bounds[0]).abs() < 1e-7);
    }

    #[test]
    fn mismatched_lambda_rejected() {
        let a = make_rbf_signature(0.2, false, None).unwrap();
        let b = a.clone().with_lambda_max(2.0).unwrap();
        assert!(joint_lp_solve(&[a, b], &small_pool(), 0.1).is_err());
    }

    #[test]
    fn target_one_is_dc() {
        let sig = make_rbf_signature(0.16, false, None).unwrap();
        let s = spectrum_for_dim(&[sig], &small_pool(), 1).unwrap();
        assert_eq!(s.frequencies, vec![0.0]);
    }

    #[test]
    fn unreachable_target_carries_best() {
        let sig = make_rbf_signature(0.16, false, None).unwrap();
        let pool = FrequencyPool::uniform(1.0, 2.0, PI, 51).unwrap();
        match spectrum_for_dim(&[sig], &pool, 10) {
            Err(AfmError::TargetUnreachable { target, achieved, best }) => {
                assert_eq!(target, 10);
                assert!(achieved <= 3);
                assert_eq!(best.nfreq(), achieved);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn warm_program_matches_cold() {
        let pool = small_pool();
        let sigs: Vec<_> = [0.12, 0.2]
            .iter()
            .map(|&s| make_rbf_signature(s, false, None).unwrap())
            .collect();
        let mut p = JointProgram::new(&sigs, &pool).unwrap();
        let ones = vec![1.0; pool.frequencies().len()];
        for g in [1e-3, 1.0, 1e-4, 0.1, 10.0, 1e-5] {
            let warm = p.solve(g, &ones).unwrap();
            let cold = joint_lp_solve(&sigs, &pool, g).unwrap();
            assert!((warm.objective - cold.objective).abs() < 1e-7, "gamma {g}");
        }
    }

    #[test]
    fn objective_monotone_on_gamma_ladder() {
        let sigs: Vec<_> = [0.12, 0.16, 0.2]
            .iter()
            .map(|&s| make_rbf_signature(s, false, None).unwrap())
            .collect();
        let pool = small_pool();
        let mut last = f64::INFINITY;
        for g in [10.0, 3.0, 1.0, 0.3, 0.1, 1e-2, 1e-3, 0.0] {
            let obj = joint_lp_solve(&sigs, &pool, g).unwrap().objective;
            assert!(obj <= last + 1e-9, "gamma {g}: {obj} > {last}");
            last = obj;
        }
    }

    #[test]
    fn single_kernel_beats_harmonic_at_seven() {
        // the 0.5-spaced pool contains the integer harmonics of Λ = π
        let sig = make_rbf_signature(0.16, false, None).unwrap();
        let pool = small_pool();
        let joint = spectrum_for_dim(std::slice::from_ref(&sig), &pool, 7).unwrap();
        let harm = crate::kernel_lab::harmonic_spectrum(&sig, PI, 7, 201).unwrap();
        assert_eq!(joint.nfreq(), 7);
        assert!(joint.linf_errors[0] < harm.spectrum.linf_errors[0]);
    }

    #[test]
    fn three_kernels_reach_five() {
        let sigs: Vec<_> = [0.12, 0.16, 0.2]
            .iter()
            .map(|&s| make_rbf_signature(s, false, None).unwrap())
            .collect();
        let s = spectrum_for_dim(&sigs, &small_pool(), 5).unwrap();
        assert_eq!(s.nfreq(), 5);
        assert_eq!(s.frequencies[0], 0.0);
        let grid = small_pool().grid().to_vec();
        for (i, sig) in sigs.iter().enumerate() {
            for &l in &grid {
                let d = (sig.eval(l) - s.eval_khat(i, l)).abs();
                assert!(d <= s.linf_errors[i] + 1e-12);
            }
        }
    }

    #[test]
    fn wrapped_orientation_kernel_reaches_two() {
        let sig = crate::kernel_lab::orientation_signature(0.8).unwrap();
        let s = spectrum_for_dim(&[sig], &small_pool(), 2).unwrap();
        assert_eq!(s.nfreq(), 2);
    }

    #[test]
    fn objective_matches_reference_solver() {
        // optima from an independent interior-point/simplex LP code on the
        // same program (3 kernels, 0.5-spaced pool to 12, 201 lags)
        let frozen = [
            (0.0, 0.11016544019711925),
            (1e-3, 0.111520097015139),
            (0.1, 0.22734782329856035),
            (1.0, 1.2230757742996907),
        ];
        let sigs: Vec<_> = [0.12, 0.16, 0.2]
            .iter()
            .map(|&s| make_rbf_signature(s, false, None).unwrap())
            .collect();
        for (g, want) in frozen {
            let got = joint_lp_solve(&sigs, &small_pool(), g).unwrap().objective;
            assert!((got - want).abs() < 1e-7, "gamma {g}: {got} vs {want}");
        }
    }

    #[test]
    fn every_small_target_is_met() {
        let sigs: Vec<_> = [0.12, 0.16, 0.2]
            .iter()
            .map(|&s| make_rbf_signature(s, false, None).unwrap())
            .collect();
        for target in 1..=6 {
            let s = spectrum_for_dim(&sigs, &small_pool(), target).unwrap();
            assert_eq!(s.nfreq(), target);
        }
    }
}
