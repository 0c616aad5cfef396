//! Kernel signatures and their finite-frequency approximations.

mod format;
mod joint;
mod signature;
pub mod simplex;
mod spectrum;

pub use format::{read_spectra, write_spectrum};
pub use joint::{
    joint_lp_solve, joint_lp_spectrum, spectrum_for_dim, spectrum_for_dim_with,
    BisectionOptions, JointLpSolution,
};
pub use signature::{make_rbf_signature, KernelKind, KernelSignature, DEFAULT_LAMBDA_MAX};
pub use spectrum::{
    eval_khat, harmonic_spectrum, linf_error, uniform_grid, FrequencyPool, HarmonicFit,
    Spectrum, PRUNE_EPS,
};

use std::f64::consts::{PI, TAU};

use crate::error::Result;

/// Spatial kernel widths, narrowest first.
pub const SPATIAL_SIGMAS: [f64; 3] = [0.12, 0.16, 0.20];
pub const ORIENTATION_SIGMA: f64 = 0.8;

pub fn spatial_signatures(sigmas: &[f64]) -> Result<Vec<KernelSignature>> {
    sigmas
        .iter()
        .map(|&s| make_rbf_signature(s, false, None))
        .collect()
}

pub fn orientation_signature(sigma: f64) -> Result<KernelSignature> {
    make_rbf_signature(sigma, true, Some(TAU))
}

/// Orientation spectrum: the wrapped RBF is 2π-periodic, so its integer
/// harmonics are used directly.
pub fn orientation_spectrum(sigma: f64, nfreq: usize) -> Result<Spectrum> {
    let sig = orientation_signature(sigma)?;
    Ok(harmonic_spectrum(&sig, PI, nfreq, 501)?.spectrum)
}
