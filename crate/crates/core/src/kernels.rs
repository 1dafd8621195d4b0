//! Compactly supported Lipschitz kernels of arbitrary order and their
//! anisotropic product form `K_h(u) = ∏ h_i⁻¹ K(u_i / h_i)`.
//!
//! A kernel of order `M` is written `K(u) = q(u)(1 − u²)` on `[-1, 1]` with
//! `q` of degree ≤ `M`. The moment conditions `∫ uˡ K = δ_{l0}` for
//! `l ≤ M` say that `q` reproduces evaluation at zero against the weight
//! `1 − u²`, so `q(u) = Σ_j C_j(0) C_j(u) / ‖C_j‖²` with `C_j` the
//! Gegenbauer polynomials of index 3/2, which are orthogonal for that
//! weight. In this basis the moment system is diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{tanh_sinh, GaussLegendre};

pub const MAX_ORDER: usize = 20;

const SCAN_POINTS: usize = 20_001;

/// `‖C_j‖² = ∫ C_j(u)² (1 − u²) du` for the index-3/2 Gegenbauer family.
fn gegenbauer_norm_sq(j: usize) -> f64 {
    let j = j as f64;
    (j + 1.0) * (j + 2.0) / (j + 1.5)
}

/// `C_j(0)` for j ≥ 0.
fn gegenbauer_at_zero(j: usize) -> f64 {
    let (mut c0, mut c1) = (1.0, 0.0);
    if j == 0 {
        return c0;
    }
    for n in 2..=j {
        let nf = n as f64;
        let c2 = -(nf + 1.0) * c0 / nf;
        c0 = c1;
        c1 = c2;
    }
    c1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Kernel {
    order: usize,
    /// Coefficients of `q` in the Gegenbauer (index 3/2) basis.
    coefficients: Vec<f64>,
    lipschitz: f64,
    sup: f64,
    /// `∫ uˡ K(u) du` for `l = 0..=order + 2`.
    moments: Vec<f64>,
}

impl Kernel {
    /// Kernel of order `order` (`order` 0 and 1 both give Epanechnikov).
    pub fn new(order: usize) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::Parameter(format!("kernel order {order} exceeds the supported maximum {MAX_ORDER}")));
        }
        let coefficients: Vec<f64> = (0..=order).map(|j| gegenbauer_at_zero(j) / gegenbauer_norm_sq(j)).collect();
        let mut kernel = Kernel { order, coefficients, lipschitz: 0.0, sup: 0.0, moments: Vec::new() };
        let rule = GaussLegendre::new(64);
        kernel.moments = (0..=order + 2).map(|l| rule.integrate(-1.0, 1.0, |u| u.powi(l as i32) * kernel.eval(u))).collect();
        let residual = kernel.moment_residual();
        if !(residual <= 1e-10) {
            return Err(Error::Parameter(format!("kernel of order {order} has moment residual {residual:e}")));
        }
        kernel.lipschitz = kernel.scan_max(|k| k.1, |k| k.2);
        kernel.sup = kernel.scan_max(|k| k.0, |k| k.1);
        Ok(kernel)
    }

    pub fn epanechnikov() -> Self {
        Kernel::new(1).expect("order-1 kernel is always constructible")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Global Lipschitz constant `max |K'|`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `max |K|`.
    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// Largest deviation of `∫ uˡ K` from `δ_{l0}` over `l ≤ order`.
    pub fn moment_residual(&self) -> f64 {
        self.moments.iter().take(self.order + 1).enumerate().map(|(l, m)| (m - if l == 0 { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max)
    }

    /// `(q, q', q'')` at `u` via the three-term recurrence.
    fn q_with_derivatives(&self, u: f64) -> (f64, f64, f64) {
        let (mut p0, mut d0, mut s0) = (1.0, 0.0, 0.0);
        let (mut p1, mut d1, mut s1) = (3.0 * u, 3.0, 0.0);
        let mut q = self.coefficients[0] * p0;
        let mut dq = 0.0;
        let mut sq = 0.0;
        if self.order >= 1 {
            q += self.coefficients[1] * p1;
            dq += self.coefficients[1] * d1;
        }
        for n in 2..=self.order {
            let nf = n as f64;
            let a = 2.0 * (nf + 0.5) / nf;
            let b = (nf + 1.0) / nf;
            let p2 = a * u * p1 - b * p0;
            let d2 = a * (p1 + u * d1) - b * d0;
            let s2 = a * (2.0 * d1 + u * s1) - b * s0;
            q += self.coefficients[n] * p2;
            dq += self.coefficients[n] * d2;
            sq += self.coefficients[n] * s2;
            (p0, d0, s0) = (p1, d1, s1);
            (p1, d1, s1) = (p2, d2, s2);
        }
        (q, dq, sq)
    }

    /// `(K, K', K'')` inside the support.
    fn with_derivatives(&self, u: f64) -> (f64, f64, f64) {
        let (q, dq, sq) = self.q_with_derivatives(u);
        let w = 1.0 - u * u;
        (q * w, dq * w - 2.0 * u * q, sq * w - 4.0 * u * dq - 2.0 * q)
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        self.with_derivatives(u).0
    }

    pub fn derivative(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        self.with_derivatives(u).1
    }

    /// `max |g|` over [-1, 1] where `g` and `g'` are projections of
    /// `(K, K', K'')`: dense scan, then Newton refinement on `g' = 0`.
    fn scan_max(&self, g: impl Fn((f64, f64, f64)) -> f64, dg: impl Fn((f64, f64, f64)) -> f64) -> f64 {
        let at = |u: f64| self.with_derivatives(u);
        let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| -1.0 + 2.0 * i as f64 / (SCAN_POINTS - 1) as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&u| g(at(u)).abs()).collect();
        let mut best = vals[0].max(vals[SCAN_POINTS - 1]);
        for i in 1..SCAN_POINTS - 1 {
            if vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1] {
                let (lo, hi) = (grid[i - 1], grid[i + 1]);
                let mut u = grid[i];
                for _ in 0..50 {
                    let v = at(u);
                    let slope = dg(v);
                    // derivative of g' by central difference of the analytic g'
                    let eps = 1e-7;
                    let curv = (dg(at(u + eps)) - dg(at(u - eps))) / (2.0 * eps);
                    if curv == 0.0 {
                        break;
                    }
                    let next = (u - slope / curv).clamp(lo, hi);
                    if (next - u).abs() < 1e-15 {
                        u = next;
                        break;
                    }
                    u = next;
                }
                best = best.max(vals[i]).max(g(at(u)).abs());
            }
        }
        best
    }

    /// `∫ |v|^s |K(v)| dv` for real `s ≥ 0`.
    pub fn abs_moment(&self, s: f64) -> f64 {
        // K is even; integrate over (0, 1) between sign changes.
        let n = 4000;
        let mut breaks = vec![0.0];
        let mut prev = self.eval(0.0);
        for i in 1..n {
            let u = i as f64 / n as f64;
            let cur = self.eval(u);
            if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
                let (mut lo, mut hi) = ((i - 1) as f64 / n as f64, u);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid).signum() == prev.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                breaks.push(0.5 * (lo + hi));
            }
            prev = cur;
        }
        breaks.push(1.0);
        let total: f64 = breaks.windows(2).map(|w| tanh_sinh(w[0], w[1], 1e-13, |v| v.powf(s) * self.eval(v).abs()).0).sum();
        2.0 * total
    }
}

/// Bandwidth vector with every coordinate in (0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Bandwidth(Vec<f64>);

impl Bandwidth {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::Parameter("bandwidth must have at least one coordinate".into()));
        }
        if let Some(bad) = h.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::Parameter(format!("bandwidth coordinates must lie in (0, 1], got {bad}")));
        }
        Ok(Bandwidth(h))
    }

    pub fn isotropic(h: f64, dim: usize) -> Result<Self> {
        Bandwidth::new(vec![h; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `V_h = min_i h_i · ∏ h_i`.
    pub fn volume_factor(&self) -> f64 {
        let min = self.0.iter().copied().fold(f64::INFINITY, f64::min);
        min * self.0.iter().product::<f64>()
    }

    /// Componentwise maximum `self ∨ other`.
    pub fn join(&self, other: &Bandwidth) -> Bandwidth {
        Bandwidth(self.0.iter().zip(&other.0).map(|(a, b)| a.max(*b)).collect())
    }
}

impl TryFrom<Vec<f64>> for Bandwidth {
    type Error = Error;
    fn try_from(h: Vec<f64>) -> Result<Self> {
        Bandwidth::new(h)
    }
}

impl From<Bandwidth> for Vec<f64> {
    fn from(h: Bandwidth) -> Vec<f64> {
        h.0
    }
}

/// `K_h(u) = ∏ h_i⁻¹ K(u_i / h_i)`; zero as soon as one `|u_i| ≥ h_i`.
pub fn eval_product(kernel: &Kernel, h: &Bandwidth, u: &[f64]) -> f64 {
    debug_assert_eq!(h.dim(), u.len());
    let mut acc = 1.0;
    for (&ui, &hi) in u.iter().zip(h.as_slice()) {
        if ui.abs() >= hi {
            return 0.0;
        }
        acc *= kernel.eval(ui / hi) / hi;
    }
    acc
}

/// Lipschitz constant of `x ↦ K_h(x₀ − x)` for the Euclidean norm,
/// `√d κ_L / V_h`.
pub fn product_lipschitz_bound(kernel: &Kernel, h: &Bandwidth) -> f64 {
    (h.dim() as f64).sqrt() * kernel.lipschitz() / h.volume_factor()
}
