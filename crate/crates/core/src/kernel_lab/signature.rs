use std::f64::consts::PI;

use crate::error::{AfmError, Result};

/// Default maximal lag of interest, in normalized coordinate units.
pub const DEFAULT_LAMBDA_MAX: f64 = PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    /// `exp(-λ²/2σ²)` on the real line.
    RbfLine,
    /// The RBF wrapped onto a circle of the given period.
    RbfPeriodic { period: f64 },
}

/// One-dimensional stationary kernel profile `k(λ)`, normalized so `k(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSignature {
    kind: KernelKind,
    sigma: f64,
    lambda_max: f64,
    // 1 / (unnormalized wrapped sum at λ = 0)
    norm: f64,
}

impl KernelSignature {
    pub fn rbf(sigma: f64, lambda_max: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        check_positive("lambda_max", lambda_max)?;
        Ok(Self {
            kind: KernelKind::RbfLine,
            sigma,
            lambda_max,
            norm: 1.0,
        })
    }

    pub fn periodic_rbf(sigma: f64, period: f64, lambda_max: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        check_positive("period", period)?;
        check_positive("lambda_max", lambda_max)?;
        let mut sig = Self {
            kind: KernelKind::RbfPeriodic { period },
            sigma,
            lambda_max,
            norm: 1.0,
        };
        sig.norm = 1.0 / sig.raw(0.0);
        Ok(sig)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn with_lambda_max(mut self, lambda_max: f64) -> Result<Self> {
        check_positive("lambda_max", lambda_max)?;
        self.lambda_max = lambda_max;
        Ok(self)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.raw(lambda) * self.norm
    }

    fn raw(&self, lambda: f64) -> f64 {
        let two_s2 = 2.0 * self.sigma * self.sigma;
        match self.kind {
            KernelKind::RbfLine => (-lambda * lambda / two_s2).exp(),
            KernelKind::RbfPeriodic { period } => {
                // Reduce into [-period/2, period/2) and sum the images that
                // contribute above double precision.
                let l = lambda - period * (lambda / period).round();
                let reach = (10.0 * self.sigma / period).ceil() as i64 + 1;
                (-reach..=reach)
                    .map(|m| {
                        let d = l + m as f64 * period;
                        (-d * d / two_s2).exp()
                    })
                    .sum()
            }
        }
    }
}

/// Builds an RBF signature on `[0, π]`; `period` is required when `periodic`.
pub fn make_rbf_signature(
    sigma: f64,
    periodic: bool,
    period: Option<f64>,
) -> Result<KernelSignature> {
    if periodic {
        let period = period.ok_or_else(|| {
            AfmError::InvalidParameter("periodic kernel needs a period".into())
        })?;
        KernelSignature::periodic_rbf(sigma, period, DEFAULT_LAMBDA_MAX)
    } else {
        KernelSignature::rbf(sigma, DEFAULT_LAMBDA_MAX)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(AfmError::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn rbf_closed_form() {
        let k = make_rbf_signature(0.2, false, None).unwrap();
        assert_eq!(k.eval(0.0), 1.0);
        assert!((k.eval(0.2) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.eval(0.2) - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn self_similarity_is_one() {
        for sigma in [0.05, 0.12, 0.16, 0.2, 0.8, 3.0] {
            assert_eq!(make_rbf_signature(sigma, false, None).unwrap().eval(0.0), 1.0);
            let p = make_rbf_signature(sigma, true, Some(TAU)).unwrap();
            assert!((p.eval(0.0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn periodic_is_even_periodic_and_bounded() {
        let k = make_rbf_signature(0.8, true, Some(TAU)).unwrap();
        for i in 0..200 {
            let l = -7.0 + i as f64 * 0.07;
            let v = k.eval(l);
            assert!((v - k.eval(-l)).abs() < 1e-14);
            assert!((v - k.eval(l + TAU)).abs() < 1e-13);
            assert!((0.0..=1.0 + 1e-15).contains(&v));
        }
        // wrapping raises the tail above the line kernel
        let line = make_rbf_signature(0.8, false, None).unwrap();
        assert!(k.eval(PI) > line.eval(PI));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_rbf_signature(0.0, false, None).is_err());
        assert!(make_rbf_signature(-1.0, false, None).is_err());
        assert!(make_rbf_signature(0.5, true, None).is_err());
        assert!(make_rbf_signature(0.5, true, Some(0.0)).is_err());
        assert!(make_rbf_signature(f64::NAN, false, None).is_err());
    }
}
