//! Gauss-Hermite rules for averages over standard normal variables.
//!
//! Nodes are the roots of the Hermite polynomial `H_n`, seeded from the
//! Jacobi-matrix eigenvalues and polished with Newton's method on the
//! orthonormal three-term recurrence. The physicists' rule
//! (weight `exp(-x^2)`) is rescaled to the probabilists' one, so that
//! `sum_i w_i f(x_i) ~ E[f(Z)]` for `Z ~ N(0, 1)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default node count for both the field and the signal direction.
pub const DEFAULT_ORDER: usize = 101;

/// Node pairs of a [`QuadratureSpec`] whose joint weight is below this are
/// skipped. Integrands grow at most polynomially in the nodes, so the
/// dropped mass is far below double precision.
pub const WEIGHT_FLOOR: f64 = 1e-30;

/// A one-dimensional standard-normal rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `order`-point rule. The order must be odd and at least 3 so
    /// that the origin is a node.
    pub fn new(order: usize) -> Result<Self> {
        if order < 3 || order.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "quadrature order must be odd and >= 3, got {order}"
            )));
        }
        let (x, w) = physicists_rule(order);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let nodes = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().map(|v| v / sqrt_pi).collect();
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Roots of `H_n` with their weights for `exp(-x^2)`, in decreasing order.
///
/// Eigenvalues of the Jacobi matrix (Golub-Welsch) seed a Newton polish on
/// the orthonormal recurrence, and the weights come from the derivative at
/// each polished root, `w = 2 / H'_n(x)^2` in orthonormal scaling.
fn physicists_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    // pi^(-1/4)
    const PIM4: f64 = 0.751_125_544_464_942_5;
    const MAX_NEWTON: usize = 50;

    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut seeds: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    seeds.sort_by(|a, b| b.total_cmp(a));

    let nf = n as f64;
    let polish = |mut z: f64| {
        let mut pp = 0.0;
        for _ in 0..MAX_NEWTON {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z1.abs().max(1.0) {
                break;
            }
        }
        (z, 2.0 / (pp * pp))
    };

    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let (z, wi) = polish(seeds[i]);
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// The pair of rules used for the double average over the Gaussian field
/// `z` and the nonzero signal component `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    z: GaussHermite,
    x: GaussHermite,
    /// For each `z` node, the half-open range of `x` nodes whose joint
    /// weight reaches [`WEIGHT_FLOOR`]. Empty when the `z` weight alone is
    /// below the floor.
    spans: Vec<(usize, usize)>,
}

impl QuadratureSpec {
    pub fn new(order_z: usize, order_x: usize) -> Result<Self> {
        let z = GaussHermite::new(order_z)?;
        let x = GaussHermite::new(order_x)?;
        let spans = z
            .weights()
            .iter()
            .map(|&wz| {
                if wz < WEIGHT_FLOOR {
                    return (0, 0);
                }
                // Weights are symmetric and unimodal in the node index.
                let lo = x.weights().iter().position(|&wx| wz * wx >= WEIGHT_FLOOR);
                match lo {
                    Some(lo) => (lo, order_x - lo),
                    None => (0, 0),
                }
            })
            .collect();
        Ok(Self { z, x, spans })
    }

    /// Same order in both directions.
    pub fn with_order(order: usize) -> Result<Self> {
        Self::new(order, order)
    }

    pub fn order_z(&self) -> usize {
        self.z.order()
    }

    pub fn order_x(&self) -> usize {
        self.x.order()
    }

    pub fn z_rule(&self) -> &GaussHermite {
        &self.z
    }

    pub fn x_rule(&self) -> &GaussHermite {
        &self.x
    }

    /// Active `x` node range for the `i`-th `z` node.
    pub fn span(&self, i: usize) -> std::ops::Range<usize> {
        let (lo, hi) = self.spans[i];
        lo..hi
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self::with_order(DEFAULT_ORDER).expect("default order is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_even_and_small_orders() {
        assert!(GaussHermite::new(2).is_err());
        assert!(GaussHermite::new(1).is_err());
        assert!(GaussHermite::new(100).is_err());
        assert!(GaussHermite::new(3).is_ok());
    }

    #[test]
    fn three_point_rule_is_exact() {
        // Probabilists' 3-point rule: nodes 0, +-sqrt(3); weights 2/3, 1/6.
        let r = GaussHermite::new(3).unwrap();
        assert!((r.nodes()[0] - 3f64.sqrt()).abs() < 1e-14);
        assert_eq!(r.nodes()[1], 0.0);
        assert!((r.weights()[1] - 2.0 / 3.0).abs() < 1e-14);
        assert!((r.weights()[0] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn weights_normalized_and_moments_exact() {
        for order in [11, 51, 101, 201, 301] {
            let r = GaussHermite::new(order).unwrap();
            assert!((r.expect(|_| 1.0) - 1.0).abs() < 1e-12, "order {order}");
            assert!((r.expect(|x| x * x) - 1.0).abs() < 1e-11, "order {order}");
            assert!((r.expect(|x| x.powi(4)) - 3.0).abs() < 1e-10, "order {order}");
            assert!(r.expect(|x| x.powi(3)).abs() < 1e-12, "order {order}");
            assert_eq!(r.nodes()[order / 2], 0.0);
        }
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        let r = GaussHermite::new(101).unwrap();
        let n = r.order();
        for i in 0..n {
            assert_eq!(r.nodes()[i], -r.nodes()[n - 1 - i]);
            if i + 1 < n {
                assert!(r.nodes()[i] > r.nodes()[i + 1]);
            }
        }
    }

    #[test]
    fn spans_are_symmetric_and_drop_only_negligible_mass() {
        let q = QuadratureSpec::with_order(101).unwrap();
        let (zr, xr) = (q.z_rule(), q.x_rule());
        let mut kept = 0.0;
        for i in 0..q.order_z() {
            assert_eq!(q.span(i), q.span(q.order_z() - 1 - i));
            for j in q.span(i) {
                kept += zr.weights()[i] * xr.weights()[j];
            }
        }
        assert!((kept - 1.0).abs() < 1e-14);
        let widths: Vec<usize> = (0..q.order_z()).map(|i| q.span(i).len()).collect();
        assert_eq!(widths.iter().max(), Some(&widths[50]));
        assert!(widths[50] < 101);
        assert!(q.span(0).is_empty());
    }

    #[test]
    fn gaussian_moment_generating_function() {
        // E[exp(t Z)] = exp(t^2 / 2)
        let r = GaussHermite::new(101).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let got = r.expect(|x| (t * x).exp());
            assert!((got / (t * t / 2.0).exp() - 1.0).abs() < 1e-12);
        }
    }
}
