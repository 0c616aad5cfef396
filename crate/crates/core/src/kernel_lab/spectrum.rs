use std::f64::consts::PI;

use crate::error::{AfmError, Result};

use super::signature::KernelSignature;

/// Weights at or below this are treated as numerical dust when pruning.
pub const PRUNE_EPS: f64 = 1e-7;

/// Candidate frequencies plus the lag samples on which approximations are
/// scored.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPool {
    frequencies: Vec<f64>,
    grid: Vec<f64>,
}

impl FrequencyPool {
    pub fn new(frequencies: Vec<f64>, grid: Vec<f64>) -> Result<Self> {
        if frequencies.first() != Some(&0.0) {
            return Err(AfmError::InvalidParameter(
                "frequency pool must start with 0".into(),
            ));
        }
        if frequencies.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(AfmError::InvalidParameter(
                "pool frequencies must be strictly increasing".into(),
            ));
        }
        if grid.first() != Some(&0.0) || grid.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(AfmError::InvalidParameter(
                "lag grid must start at 0 and be strictly increasing".into(),
            ));
        }
        Ok(Self { frequencies, grid })
    }

    /// `{0, step, 2·step, …, max}` with `points` uniform lag samples on
    /// `[0, lambda_max]`.
    pub fn uniform(step: f64, max: f64, lambda_max: f64, points: usize) -> Result<Self> {
        if !(step > 0.0 && max >= 0.0 && points >= 2 && lambda_max > 0.0) {
            return Err(AfmError::InvalidParameter("bad uniform pool".into()));
        }
        let nf = (max / step + 1e-9).floor() as usize;
        let frequencies = (0..=nf).map(|k| k as f64 * step).collect();
        Self::new(frequencies, uniform_grid(lambda_max, points))
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn lambda_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Same grid, restricted candidate set.
    pub(crate) fn with_frequencies(&self, frequencies: Vec<f64>) -> Result<Self> {
        Self::new(frequencies, self.grid.clone())
    }
}

impl Default for FrequencyPool {
    /// 0.25-spaced pool on `[0, 25]` and 501 lags on `[0, π]`.
    fn default() -> Self {
        Self::uniform(0.25, 25.0, PI, 501).expect("default pool")
    }
}

pub fn uniform_grid(lambda_max: f64, points: usize) -> Vec<f64> {
    let h = lambda_max / (points - 1) as f64;
    let mut g: Vec<f64> = (0..points).map(|i| i as f64 * h).collect();
    g[points - 1] = lambda_max;
    g
}

/// A shared frequency set with one nonnegative weight row per kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    /// `weights[kernel][freq]`
    pub weights: Vec<Vec<f64>>,
    /// Per-kernel max error on the lag grid, when known.
    pub linf_errors: Vec<f64>,
    pub gamma: Option<f64>,
    pub lambda_max: f64,
}

impl Spectrum {
    pub fn new(frequencies: Vec<f64>, weights: Vec<Vec<f64>>, lambda_max: f64) -> Result<Self> {
        if frequencies.first() != Some(&0.0) {
            return Err(AfmError::InvalidParameter(
                "spectrum must contain frequency 0 first".into(),
            ));
        }
        if frequencies.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(AfmError::InvalidParameter(
                "spectrum frequencies must be strictly increasing".into(),
            ));
        }
        if weights.is_empty() {
            return Err(AfmError::InvalidParameter("spectrum needs a kernel".into()));
        }
        for row in &weights {
            if row.len() != frequencies.len() {
                return Err(AfmError::InvalidParameter("weight row width".into()));
            }
            if row.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(AfmError::InvalidParameter(
                    "weights must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(Self {
            frequencies,
            weights,
            linf_errors: Vec::new(),
            gamma: None,
            lambda_max,
        })
    }

    pub fn nkernels(&self) -> usize {
        self.weights.len()
    }

    pub fn nfreq(&self) -> usize {
        self.frequencies.len()
    }

    /// Embedding width `2|Ω| − 1` (the sine of ω = 0 is dropped).
    pub fn dim(&self) -> usize {
        2 * self.nfreq() - 1
    }

    pub fn eval_khat(&self, kernel: usize, lambda: f64) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.weights[kernel])
            .map(|(w, a)| a * (w * lambda).cos())
            .sum()
    }

    /// `max_{λ ∈ grid} |k(λ) − k̂(λ)|`
    pub fn linf_error(&self, sig: &KernelSignature, kernel: usize, grid: &[f64]) -> f64 {
        linf_error_fn(|l| sig.eval(l), |l| self.eval_khat(kernel, l), grid)
    }

    pub(crate) fn with_errors(mut self, sigs: &[KernelSignature], grid: &[f64]) -> Self {
        self.linf_errors = sigs
            .iter()
            .enumerate()
            .map(|(i, s)| self.linf_error(s, i, grid))
            .collect();
        self
    }
}

pub fn eval_khat(spec: &Spectrum, kernel: usize, lambda: f64) -> f64 {
    spec.eval_khat(kernel, lambda)
}

pub fn linf_error(sig: &KernelSignature, spec: &Spectrum, kernel: usize, grid: &[f64]) -> f64 {
    spec.linf_error(sig, kernel, grid)
}

fn linf_error_fn(k: impl Fn(f64) -> f64, khat: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&l| (k(l) - khat(l)).abs())
        .fold(0.0, f64::max)
}

/// Result of the Fourier-periodization baseline.
#[derive(Clone, Debug)]
pub struct HarmonicFit {
    pub spectrum: Spectrum,
    /// Frequencies whose cosine coefficient came out negative and was set to 0.
    pub clamped: Vec<f64>,
}

/// Cosine series of `k` periodized with period `2Λ`, truncated to the first
/// `n_freq` harmonics `{0, π/Λ, 2π/Λ, …}`. Coefficients come from trapezoid
/// quadrature on `grid_points` uniform lags.
pub fn harmonic_spectrum(
    sig: &KernelSignature,
    lambda_max: f64,
    n_freq: usize,
    grid_points: usize,
) -> Result<HarmonicFit> {
    if n_freq == 0 {
        return Err(AfmError::InvalidParameter("n_freq must be ≥ 1".into()));
    }
    if lambda_max.is_nan() || lambda_max <= 0.0 || grid_points < 2 {
        return Err(AfmError::InvalidParameter("bad harmonic grid".into()));
    }
    let grid = uniform_grid(lambda_max, grid_points);
    let mut fit = harmonic_from_fn(|l| sig.eval(l), &grid, n_freq)?;
    fit.spectrum = fit.spectrum.with_errors(std::slice::from_ref(sig), &grid);
    Ok(fit)
}

pub(crate) fn harmonic_from_fn(
    k: impl Fn(f64) -> f64,
    grid: &[f64],
    n_freq: usize,
) -> Result<HarmonicFit> {
    let lambda_max = *grid.last().unwrap();
    let values: Vec<f64> = grid.iter().map(|&l| k(l)).collect();
    let h = lambda_max / (grid.len() - 1) as f64;
    let mut weights = Vec::with_capacity(n_freq);
    let mut frequencies = Vec::with_capacity(n_freq);
    let mut clamped = Vec::new();
    for n in 0..n_freq {
        let w = n as f64 * PI / lambda_max;
        let last = grid.len() - 1;
        let integral: f64 = h
            * grid
                .iter()
                .zip(&values)
                .enumerate()
                .map(|(i, (&l, &v))| {
                    let end = if i == 0 || i == last { 0.5 } else { 1.0 };
                    end * v * (w * l).cos()
                })
                .sum::<f64>();
        let scale = if n == 0 { 1.0 } else { 2.0 };
        let a = scale * integral / lambda_max;
        frequencies.push(w);
        if a < 0.0 {
            clamped.push(w);
            weights.push(0.0);
        } else {
            weights.push(a);
        }
    }
    let spectrum = Spectrum::new(frequencies, vec![weights], lambda_max)?;
    Ok(HarmonicFit { spectrum, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_lab::make_rbf_signature;

    #[test]
    fn default_pool_shape() {
        let p = FrequencyPool::default();
        assert_eq!(p.frequencies().len(), 101);
        assert_eq!(p.frequencies()[0], 0.0);
        assert_eq!(*p.frequencies().last().unwrap(), 25.0);
        assert_eq!(p.grid().len(), 501);
        assert_eq!(p.lambda_max(), PI);
    }

    #[test]
    fn pool_validation() {
        let g = uniform_grid(1.0, 5);
        assert!(FrequencyPool::new(vec![0.5, 1.0], g.clone()).is_err());
        assert!(FrequencyPool::new(vec![0.0, 1.0, 1.0], g.clone()).is_err());
        assert!(FrequencyPool::new(vec![0.0], vec![0.1, 0.2]).is_err());
        assert!(FrequencyPool::new(vec![0.0, 2.0], g).is_ok());
    }

    #[test]
    fn harmonic_frequencies_for_lambda_pi() {
        let sig = make_rbf_signature(0.12, false, None).unwrap();
        let fit = harmonic_spectrum(&sig, PI, 7, 501).unwrap();
        let expect: Vec<f64> = (0..7).map(|n| n as f64).collect();
        for (a, b) in fit.spectrum.frequencies.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(fit.spectrum.nkernels(), 1);
        assert_eq!(fit.spectrum.linf_errors.len(), 1);
    }

    #[test]
    fn constant_profile_is_dc_only() {
        let grid = uniform_grid(PI, 501);
        let fit = harmonic_from_fn(|_| 1.0, &grid, 7).unwrap();
        let w = &fit.spectrum.weights[0];
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!(w[1..].iter().all(|a| a.abs() < 1e-12), "{w:?}");
        for l in [0.0, 0.3, 1.7, 3.0, -2.2] {
            assert!((fit.spectrum.eval_khat(0, l) - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_spectrum_error_is_peak_value() {
        let sig = make_rbf_signature(0.16, false, None).unwrap();
        let s = Spectrum::new(vec![0.0, 1.0], vec![vec![0.0, 0.0]], PI).unwrap();
        let grid = uniform_grid(PI, 501);
        assert_eq!(s.linf_error(&sig, 0, &grid), 1.0);
    }

    #[test]
    fn khat_at_zero_is_weight_sum_and_even() {
        let s = Spectrum::new(vec![0.0, 1.5, 4.0], vec![vec![0.2, 0.3, 0.1]], PI).unwrap();
        assert!((s.eval_khat(0, 0.0) - 0.6).abs() < 1e-15);
        for l in [0.1, 0.7, 2.9] {
            assert_eq!(s.eval_khat(0, l), s.eval_khat(0, -l));
        }
    }

    #[test]
    fn spectrum_validation() {
        assert!(Spectrum::new(vec![1.0], vec![vec![1.0]], PI).is_err());
        assert!(Spectrum::new(vec![0.0, 1.0], vec![vec![1.0, -0.1]], PI).is_err());
        assert!(Spectrum::new(vec![0.0, 1.0], vec![vec![1.0]], PI).is_err());
        assert!(Spectrum::new(vec![0.0], vec![], PI).is_err());
    }
}
