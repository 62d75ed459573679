//! Gauss-Legendre rules and the composite variants used for operator
//! quadrature.

use std::f64::consts::PI;

/// Quadrature rule: nodes and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `n`-point Gauss-Legendre rule on `[-1, 1]`, nodes by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n == 1 {
        weights[0] = 2.0;
    }
    Rule { nodes, weights }
}

/// Composite Gauss-Legendre on `[a, b]` with `panels` equal panels of
/// `order` nodes each.
pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Rule {
    let base = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in base.nodes.iter().zip(&base.weights) {
            nodes.push(lo + 0.5 * h * (x + 1.0));
            weights.push(0.5 * h * w);
        }
    }
    Rule { nodes, weights }
}

/// Rule for `E[f(Z)]`, `Z ~ N(0,1)`, as a composite rule on `[-9, 9]`
/// against the normal density. Truncated mass is below `1e-18`.
pub fn standard_normal(panels: usize, order: usize) -> Rule {
    let mut r = composite(-9.0, 9.0, panels, order);
    let c = 1.0 / (2.0 * PI).sqrt();
    for (x, w) in r.nodes.iter().zip(r.weights.iter_mut()) {
        *w *= c * (-0.5 * x * x).exp();
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let r = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got = r.integrate(|x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg} got={got}");
            }
        }
    }

    #[test]
    fn large_rule_is_accurate() {
        let r = gauss_legendre(10_000);
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-10);
        let got = r.integrate(|x| (3.0 * x).cos());
        assert!((got - 2.0 * 3f64.sin() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normal_moments() {
        let r = standard_normal(60, 10);
        assert!((r.integrate(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((r.integrate(|z| z * z) - 1.0).abs() < 1e-12);
        assert!((r.integrate(|z| z.powi(4)) - 3.0).abs() < 1e-11);
    }
}
