//! Numerical quadrature: Gauss–Legendre rules and double-exponential
//! (tanh-sinh) integration for integrands with endpoint singularities.

use std::f64::consts::{FRAC_PI_2, PI};

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        // Tricomi initial guess
        let theta = PI * (4.0 * i as f64 + 3.0) / (4.0 * nf + 2.0);
        let mut x = (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf)) * theta.cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        weights[i] = w;
        nodes[n - 1 - i] = -x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[m - 1] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Precomputed Gauss–Legendre rule mapped onto arbitrary intervals.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        GaussLegendre { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Composite rule over `panels` equal sub-intervals.
    pub fn integrate_composite<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let width = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + k as f64 * width;
                self.integrate(lo, lo + width, &mut f)
            })
            .sum()
    }
}

/// Tanh-sinh quadrature of `f` over `[a, b]`.
///
/// The integrand is never evaluated at the endpoints, so integrable
/// singularities such as `|x - a|^{-1/2}` or a kink in `|x - a|^{0.4}` are
/// handled. Returns the estimate and the last level-to-level change.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(a: f64, b: f64, tol: f64, mut f: F) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let half = 0.5 * (b - a);
    let t_max = 3.5;
    // Each abscissa is built from its distance to the nearer endpoint to
    // keep full relative precision there.
    let mut eval = |t: f64| -> f64 {
        let u = FRAC_PI_2 * t.sinh();
        let cu = u.cosh();
        let w = FRAC_PI_2 * t.cosh() / (cu * cu);
        if !w.is_finite() || w == 0.0 {
            return 0.0;
        }
        // 1 - tanh(|u|) = 2 / (1 + e^{2|u|})
        let gap = 2.0 / (1.0 + (2.0 * u.abs()).exp());
        let x = if u < 0.0 { a + half * gap } else { b - half * gap };
        if x <= a || x >= b {
            return 0.0;
        }
        half * w * f(x)
    };
    let mut step = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    loop {
        let t = k as f64 * step;
        if t > t_max {
            break;
        }
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut estimate = sum * step;
    let mut change = f64::INFINITY;
    for _level in 0..12 {
        step *= 0.5;
        let mut k = 1;
        loop {
            let t = k as f64 * step;
            if t > t_max {
                break;
            }
            sum += eval(t) + eval(-t);
            k += 2;
        }
        let next = sum * step;
        change = (next - estimate).abs();
        estimate = next;
        if change <= tol * estimate.abs().max(1e-300) {
            break;
        }
    }
    (estimate, change)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(6);
        // degree 11 is exact for 6 nodes
        let v = rule.integrate(-1.0, 1.0, |x| x.powi(10) + x.powi(11));
        assert_relative_eq!(v, 2.0 / 11.0, epsilon = 1e-14);
        let w: f64 = gauss_legendre(1000).1.iter().sum();
        assert_relative_eq!(w, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularity() {
        let (v, _) = tanh_sinh(0.0, 1.0, 1e-12, |x| 1.0 / x.sqrt());
        assert_relative_eq!(v, 2.0, epsilon = 1e-10);
        let (v, _) = tanh_sinh(0.0, 2.0, 1e-12, |x| x.powf(0.4));
        assert_relative_eq!(v, 2f64.powf(1.4) / 1.4, epsilon = 1e-11);
    }
}
