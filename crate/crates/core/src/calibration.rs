//! Calibrating loss parameters from cost asymmetries.
//!
//! A LINEX `ψ` is chosen so the LINEX action on a Gaussian posterior sits
//! `z_q` posterior standard deviations above the mean, which makes it the
//! Gaussian `q`-quantile. A quantile loss takes `q = 1 - prevention share`.

use crate::error::{Error, Result};
use crate::numeric::norm_quantile;

/// How far above the posterior mean the calibrated action should sit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Asymmetry {
    /// `z_q`, e.g. 1.88.
    GaussianMultiple(f64),
    /// Upper-tail mass left above the action, e.g. 0.03.
    TailMass(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub asymmetry: Asymmetry,
    /// Posterior standard deviation `σ_{Y|z}`.
    pub sigma: f64,
    /// Round `z_q` to two decimals (1.8808 becomes 1.88).
    pub paper_exact: bool,
}

impl CalibrationTarget {
    pub fn gaussian_multiple(z: f64, sigma: f64) -> Self {
        Self {
            asymmetry: Asymmetry::GaussianMultiple(z),
            sigma,
            paper_exact: false,
        }
    }

    pub fn tail_mass(mass: f64, sigma: f64) -> Self {
        Self {
            asymmetry: Asymmetry::TailMass(mass),
            sigma,
            paper_exact: false,
        }
    }

    pub fn paper_exact(mut self, on: bool) -> Self {
        self.paper_exact = on;
        self
    }

    /// The Gaussian multiple `z_q` implied by the target.
    pub fn z_q(&self) -> Result<f64> {
        let z = match self.asymmetry {
            Asymmetry::GaussianMultiple(z) => {
                if !z.is_finite() {
                    return Err(Error::param("gaussian_multiple", z, "must be finite"));
                }
                z
            }
            Asymmetry::TailMass(m) => {
                if !(m > 0.0 && m < 1.0) {
                    return Err(Error::param("tail_mass", m, "must lie in (0, 1)"));
                }
                norm_quantile(1.0 - m)
            }
        };
        Ok(if self.paper_exact { (z * 100.0).round() / 100.0 } else { z })
    }
}

/// `ψ = -2 z_q / σ`. Only targets above the mean (`z_q > 0`) are accepted;
/// the mirrored case is obtained by negating the predictand.
pub fn calibrate_linex(target: &CalibrationTarget) -> Result<f64> {
    if !(target.sigma.is_finite() && target.sigma > 0.0) {
        return Err(Error::param("sigma", target.sigma, "must be finite and > 0"));
    }
    let z = target.z_q()?;
    if z.is_nan() || z <= 0.0 {
        return Err(Error::param(
            "gaussian_multiple",
            z,
            "must be > 0: a symmetric or underprediction-favoring target has no LINEX calibration with psi < 0",
        ));
    }
    Ok(-2.0 * z / target.sigma)
}

/// `q = 1 - prevention_share`.
pub fn calibrate_quantile(prevention_share: f64) -> Result<f64> {
    if !(prevention_share > 0.0 && prevention_share < 1.0) {
        return Err(Error::param("prevention_share", prevention_share, "must lie in (0, 1)"));
    }
    Ok(1.0 - prevention_share)
}

/// Delta-method approximations to the LINEX action:
/// `μ - log(1 + ψ²σ²/2) / ψ` and its expansion `μ - ψσ²/2`.
pub fn linex_action_approx(psi: f64, mu: f64, sigma2: f64) -> Result<(f64, f64)> {
    if !(psi.is_finite() && psi != 0.0) {
        return Err(Error::param("psi", psi, "must be finite and nonzero"));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::param("sigma2", sigma2, "must be finite and > 0"));
    }
    let first = mu - (0.5 * psi * psi * sigma2).ln_1p() / psi;
    let second = mu - 0.5 * psi * sigma2;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::optimize;
    use crate::loss::LossSpec;
    use crate::posterior::Posterior;

    #[test]
    fn linex_calibration() {
        assert_eq!(calibrate_linex(&CalibrationTarget::gaussian_multiple(1.88, 1.0)).unwrap(), -3.76);
        assert_eq!(calibrate_linex(&CalibrationTarget::gaussian_multiple(1.88, 2.0)).unwrap(), -1.88);
        let exact = CalibrationTarget::tail_mass(0.03, 1.0).paper_exact(true);
        assert_eq!(calibrate_linex(&exact).unwrap(), -3.76);
        let computed = calibrate_linex(&CalibrationTarget::tail_mass(0.03, 1.0)).unwrap();
        assert!((computed + 2.0 * 1.880_793_6).abs() < 1e-6);
    }

    #[test]
    fn rejects_symmetric_and_bad_targets() {
        assert!(calibrate_linex(&CalibrationTarget::tail_mass(0.5, 1.0)).is_err());
        assert!(calibrate_linex(&CalibrationTarget::tail_mass(0.7, 1.0)).is_err());
        assert!(calibrate_linex(&CalibrationTarget::gaussian_multiple(1.88, 0.0)).is_err());
        assert!(calibrate_linex(&CalibrationTarget::gaussian_multiple(1.88, -1.0)).is_err());
        assert!(calibrate_linex(&CalibrationTarget::tail_mass(1.0, 1.0)).is_err());
    }

    #[test]
    fn quantile_calibration() {
        assert_eq!(calibrate_quantile(0.03).unwrap(), 0.97);
        assert_eq!(calibrate_quantile(0.5).unwrap(), 0.5);
        assert_eq!(calibrate_quantile(0.25).unwrap(), 0.75);
        assert!(calibrate_quantile(0.0).is_err());
        assert!(calibrate_quantile(1.0).is_err());
    }

    #[test]
    fn approximations() {
        let (_, second) = linex_action_approx(-3.76, 0.0, 1.0).unwrap();
        assert!((second - 1.88).abs() < 1e-15);
        let (first, second) = linex_action_approx(-0.01, 5.0, 1.0).unwrap();
        assert!((first - 5.005).abs() < 1e-6 && (second - 5.005).abs() < 1e-15);
        // first order falls short of the exact Gaussian action by x - log(1 + x) over |ψ|
        let (first, second) = linex_action_approx(-2.0, 1.0, 1.5).unwrap();
        let x: f64 = 0.5 * 4.0 * 1.5;
        assert!((second - first - (x - x.ln_1p()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_exactness() {
        for (psi, mu, s2) in [(-3.76, 0.0, 1.0), (-0.5, 2.0, 4.0), (1.5, -1.0, 0.25)] {
            let d = optimize(&LossSpec::Linex { psi }, &Posterior::gaussian(mu, f64::sqrt(s2)).unwrap()).unwrap();
            let (_, second) = linex_action_approx(psi, mu, s2).unwrap();
            assert!((d.action - second).abs() < 1e-10);
        }
    }

    #[test]
    fn calibrated_action_hits_gaussian_quantile() {
        let sigma = 2.5;
        let target = CalibrationTarget::tail_mass(0.03, sigma);
        let psi = calibrate_linex(&target).unwrap();
        let d = optimize(&LossSpec::Linex { psi }, &Posterior::gaussian(10.0, sigma).unwrap()).unwrap();
        assert!((d.action - (10.0 + target.z_q().unwrap() * sigma)).abs() < 1e-10);
    }

    #[test]
    fn gamma_small_cv() {
        // shape 400 gives σ/μ = 0.05; the skewness term grows like (ψσ)² σ/μ,
        // so the guardrail is checked for |ψ|σ ≤ 1
        let post = Posterior::gamma(400.0, 4.0).unwrap();
        let (mu, var) = post.moments();
        let sigma = var.sqrt();
        for psi_sigma in [-1.0, -0.5, -0.1, 0.1, 0.5, 1.0] {
            let psi = psi_sigma / sigma;
            let exact = optimize(&LossSpec::Linex { psi }, &post).unwrap().action;
            let (_, second) = linex_action_approx(psi, mu, var).unwrap();
            assert!((exact - second).abs() <= 0.05 * sigma, "psi*sigma = {psi_sigma}");
        }
    }
}
