//! Exponents, bandwidth formulas and explicit constants for the risk
//! bounds of the kernel estimator.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fbm::Hurst;
use crate::glselect::is_member;
use crate::kernels::{Bandwidth, Kernel};

/// `(a_H, β_H) = (max(2H, 1), min(1, 2 − 2H))`.
pub fn exponents(hurst: Hurst) -> (f64, f64) {
    let h = hurst.value();
    ((2.0 * h).max(1.0), (2.0 - 2.0 * h).min(1.0))
}

pub fn beta_h(hurst: Hurst) -> f64 {
    exponents(hurst).1
}

/// `max{l ∈ ℕ : l < s}`; differs from the usual floor at integers.
pub fn strict_floor(s: f64) -> u32 {
    debug_assert!(s > 0.0);
    (s.ceil() - 1.0).max(0.0) as u32
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Anisotropic Hölder smoothness `s` with radii `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderClass {
    s: Vec<f64>,
    l: Vec<f64>,
}

impl HolderClass {
    pub fn new(s: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        if s.is_empty() || s.len() != l.len() {
            return Err(Error::Parameter("smoothness and radius vectors must be nonempty and of equal length".into()));
        }
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Parameter("smoothness indices must be positive".into()));
        }
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("Hölder radii must be nonnegative".into()));
        }
        Ok(HolderClass { s, l })
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }
    pub fn l(&self) -> &[f64] {
        &self.l
    }
    pub fn dim(&self) -> usize {
        self.s.len()
    }
}

fn check_smoothness(s: &[f64]) -> Result<()> {
    if s.is_empty() || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Parameter("smoothness indices must be positive".into()));
    }
    Ok(())
}

/// `(s̄, γ(s))` with `s̄ = (Σ 1/s_i)⁻¹` and
/// `γ = s̄ / (2(1 + 1/min s) s̄ + 2)`.
pub fn gamma_of(s: &[f64]) -> Result<(f64, f64)> {
    check_smoothness(s)?;
    let s_bar = 1.0 / s.iter().map(|v| 1.0 / v).sum::<f64>();
    let s_min = s.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((s_bar, s_bar / (2.0 * (1.0 + 1.0 / s_min) * s_bar + 2.0)))
}

fn horizon(n: usize, delta_n: f64) -> Result<f64> {
    let t = n as f64 * delta_n;
    if !(t >= 1.0 - 1e-12) || !t.is_finite() {
        return Err(Error::Parameter(format!("n*delta_n must be at least 1, got {t}")));
    }
    Ok(t)
}

/// `h_i(s) = ((nΔ_n)^{-β_H})^{γ(s)/s_i}`.
pub fn oracle_bandwidth(s: &[f64], n: usize, delta_n: f64, hurst: Hurst) -> Result<Bandwidth> {
    let t = horizon(n, delta_n)?;
    let (_, gamma) = gamma_of(s)?;
    let beta = beta_h(hurst);
    Bandwidth::new(s.iter().map(|si| t.powf(-beta * gamma / si).min(1.0)).collect())
}

/// Log-corrected bandwidth `((nΔ_n)^{-β_H} log (nΔ_n)^{β_H})^{γ(s)/s_i}`.
pub fn log_corrected_bandwidth(s: &[f64], n: usize, delta_n: f64, hurst: Hurst) -> Result<Vec<f64>> {
    let t = horizon(n, delta_n)?;
    let (_, gamma) = gamma_of(s)?;
    let log_eff = beta_h(hurst) * t.ln();
    Ok(s.iter().map(|si| (t.powf(-beta_h(hurst)) * log_eff).powf(gamma / si)).collect())
}

/// Lattice point `h* = e^{-l*}` with
/// `l*_i = ⌊(γ/s_i)(log (nΔ_n)^{β_H} − log log (nΔ_n)^{β_H})⌋`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptiveStar {
    pub levels: Vec<u32>,
    /// Unrounded exponents `(γ/s_i)(log − log log)`.
    pub exponents: Vec<f64>,
    pub h: Bandwidth,
}

pub fn adaptive_bandwidth_star(s: &[f64], n: usize, delta_n: f64, hurst: Hurst) -> Result<AdaptiveStar> {
    let t = horizon(n, delta_n)?;
    let (_, gamma) = gamma_of(s)?;
    let log_eff = beta_h(hurst) * t.ln();
    if log_eff < 1.0 {
        return Err(Error::Precondition(format!("(n*delta_n)^beta_H = {:.4} is below e", log_eff.exp())));
    }
    let base = log_eff - log_eff.ln();
    let exponents: Vec<f64> = s.iter().map(|si| gamma / si * base).collect();
    let levels: Vec<u32> = exponents.iter().map(|x| x.floor() as u32).collect();
    let h = Bandwidth::new(levels.iter().map(|&l| (-(l as f64)).exp()).collect())?;
    Ok(AdaptiveStar { levels, exponents, h })
}

/// Whether `h*` lies in the selection grid for `(n, Δ_n, H)`.
pub fn star_in_grid(star: &AdaptiveStar, n: usize, delta_n: f64, hurst: Hurst) -> bool {
    is_member(&star.levels, n as f64 * delta_n, beta_h(hurst))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBundle {
    pub a_h: f64,
    pub beta_h: f64,
    pub s_bar: f64,
    pub gamma: f64,
    /// `(nΔ_n)^{-β_H γ(s)}`.
    pub rate: f64,
    /// `((nΔ_n)^{-β_H} log (nΔ_n)^{β_H})^{γ(s)}`.
    pub adaptive_rate: f64,
    /// `-β_H γ(s)`, the log-log slope of the rate in `nΔ_n`.
    pub slope: f64,
}

pub fn rate_bundle(hurst: Hurst, s: &[f64], n: usize, delta_n: f64) -> Result<RateBundle> {
    let t = horizon(n, delta_n)?;
    let (a_h, beta) = exponents(hurst);
    let (s_bar, gamma) = gamma_of(s)?;
    Ok(RateBundle {
        a_h,
        beta_h: beta,
        s_bar,
        gamma,
        rate: t.powf(-beta * gamma),
        adaptive_rate: (t.powf(-beta) * (beta * t.ln())).powf(gamma),
        slope: -beta * gamma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremConstants {
    pub lambda1: f64,
    pub lambda2: f64,
    pub c0: f64,
    pub c1: f64,
    /// Concentration constant the constants were instantiated with.
    pub c_hat: f64,
    pub kappa: f64,
    pub p: f64,
}

/// `(pΓ((p+1)/2))^{1/p}`.
pub fn moment_factor(p: f64) -> f64 {
    (p * gamma((p + 1.0) / 2.0)).powf(1.0 / p)
}

/// `Λ₁ = Σ L_i/⌊s_i⌋! ∫|v^{s_i} K(v)| dv`.
pub fn lambda1(kernel: &Kernel, class: &HolderClass) -> f64 {
    class.s.iter().zip(&class.l).map(|(&s, &l)| if l == 0.0 { 0.0 } else { l / factorial(strict_floor(s)) * kernel.abs_moment(s) }).sum()
}

/// Explicit constants `Λ₁, Λ₂, C₀, C₁` of the rate, oracle and adaptive
/// bounds. `c_hat` stands in for the unknown concentration constant.
pub fn theorem_constants(
    kernel: &Kernel,
    class: &HolderClass,
    kappa: f64,
    p: f64,
    c_hat: f64,
    order_bound: usize,
) -> Result<TheoremConstants> {
    if !(c_hat > 0.0 && c_hat.is_finite()) {
        return Err(Error::Parameter(format!("concentration constant must be positive, got {c_hat}")));
    }
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("p must be at least 1, got {p}")));
    }
    if !(kappa > c_hat) {
        return Err(Error::Theory(format!("kappa = {kappa} must exceed the concentration constant {c_hat}")));
    }
    let d = class.dim() as f64;
    let kl = kernel.lipschitz();
    let lambda1 = lambda1(kernel, class);
    let lambda2 = 2.0 * (d * c_hat).sqrt() * moment_factor(p) * kl;
    let e = (p * (kappa / c_hat - 1.0)).exp();
    let c0 = 6.0 * lambda2 * (e / (e - 1.0)).powf(d / p);
    let c1 = 8.0 * (kappa * d * (d + 1.5) * p).sqrt() * kl + 7.0 * ((order_bound + 1) as f64).exp() * lambda1 + lambda2 + c0;
    Ok(TheoremConstants { lambda1, lambda2, c0, c1, c_hat, kappa, p })
}
