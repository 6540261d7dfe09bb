use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integrates `f` over `[a, b]` with the affine image of the rule.
    pub fn integrate<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

/// Legendre polynomial P_n and its derivative at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = if n == 0 {
        0.0
    } else {
        n as f64 * (x * p - p0) / (x * x - 1.0)
    };
    (p, dp)
}

/// Builds the `n`-point Gauss–Legendre rule, `1 <= n <= 64`.
pub fn gauss_legendre<T: Real>(n: usize) -> Result<QuadratureRule<T>> {
    if !(1..=64).contains(&n) {
        return Err(Error::UnsupportedOrder(n));
    }
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            x = 0.0;
        }
        let dp = legendre(n, x).1;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(QuadratureRule {
        nodes: nodes.into_iter().map(T::lit).collect(),
        weights: weights.into_iter().map(T::lit).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_orders_are_classical() {
        let r1 = gauss_legendre::<f64>(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert_abs_diff_eq!(r1.weights[0], 2.0, epsilon = 1e-15);
        let r2 = gauss_legendre::<f64>(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(r2.nodes[0], -s, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.nodes[1], s, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.weights[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.weights[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn order_limits() {
        assert!(matches!(gauss_legendre::<f64>(0), Err(Error::UnsupportedOrder(0))));
        assert!(matches!(gauss_legendre::<f64>(65), Err(Error::UnsupportedOrder(65))));
    }

    #[test]
    fn eight_points_integrate_degree_fourteen() {
        let r = gauss_legendre::<f64>(8).unwrap();
        let v = r.integrate(-1.0, 1.0, |x| x.powi(14));
        assert_abs_diff_eq!(v, 2.0 / 15.0, epsilon = 1e-13);
    }

    #[test]
    fn exact_up_to_degree_2n_minus_1() {
        for n in [1usize, 3, 5, 8, 16, 33, 64] {
            let r = gauss_legendre::<f64>(n).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for d in 0..(2 * n) {
                let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d as f64 + 1.0) };
                let v = r.integrate(-1.0, 1.0, |x| x.powi(d as i32));
                assert_abs_diff_eq!(v, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn single_precision_rule() {
        let r = gauss_legendre::<f32>(4).unwrap();
        let v = r.integrate(0.0f32, 2.0, |x| x * x * x);
        assert!((v - 4.0).abs() < 1e-5);
    }
}
