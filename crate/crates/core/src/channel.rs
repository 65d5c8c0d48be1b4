//! The effective scalar channel of the Bernoulli-Gaussian prior.
//!
//! A single entry `x` with prior `(1 - theta) delta(x) + theta N(0, sigma_x2)`
//! is observed through the exponential tilt
//! `exp(-(hat_Q_x + hat_q_x) x^2 / 2 + h x)`, where the field is
//! `h = sqrt(hat_q_x) z + hat_m_x x0`. The normalizer of that tilt is
//!
//! ```text
//! Xi = (1 - theta) + theta / sqrt(hs) * exp(sigma_x2 h^2 / (2 hs)),
//! hs = 1 + (hat_Q_x + hat_q_x) sigma_x2,
//! ```
//!
//! and the posterior mean is `d ln Xi / dh = (Xi+ / Xi) sigma_x2 h / hs`.
//! Everything is evaluated in log space so that very large conjugates (the
//! approach to perfect recovery) saturate cleanly instead of overflowing.

use std::convert::Infallible;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub theta: f64,
    pub sigma_x2: f64,
    pub hat_q_x: f64,
    pub hat_m_x: f64,
    pub hat_big_q_x: f64,
}

impl ChannelParams {
    /// Channel on the matched line: `hat_m_x = hat_q_x`, `hat_Q_x = 0`.
    pub fn nishimori(theta: f64, sigma_x2: f64, hat_q_x: f64) -> Self {
        Self {
            theta,
            sigma_x2,
            hat_q_x,
            hat_m_x: hat_q_x,
            hat_big_q_x: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParams(format!("theta = {} outside [0, 1]", self.theta)));
        }
        if !(self.sigma_x2 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "sigma_x2 = {} must be > 0",
                self.sigma_x2
            )));
        }
        if !(self.hat_q_x >= 0.0) {
            return Err(Error::InvalidParams(format!("hat_q_x = {} must be >= 0", self.hat_q_x)));
        }
        if !(self.hat_sigma() > 0.0) {
            return Err(Error::InvalidParams(format!(
                "hat_sigma = {} must be > 0",
                self.hat_sigma()
            )));
        }
        Ok(())
    }

    /// `1 + (hat_Q_x + hat_q_x) sigma_x2`
    pub fn hat_sigma(&self) -> f64 {
        1.0 + (self.hat_big_q_x + self.hat_q_x) * self.sigma_x2
    }

    pub fn field(&self, z: f64, x0: f64) -> f64 {
        self.hat_q_x.sqrt() * z + self.hat_m_x * x0
    }

    /// Log-domain Xi for a given field.
    pub fn xi_at_field(&self, h: f64) -> XiParts {
        let hs = self.hat_sigma();
        let log_plus = if self.theta > 0.0 {
            self.theta.ln() - 0.5 * hs.ln() + self.sigma_x2 * h * h / (2.0 * hs)
        } else {
            f64::NEG_INFINITY
        };
        let log_total = log_add_exp((1.0 - self.theta).ln(), log_plus);
        XiParts { log_plus, log_total }
    }

    /// Posterior mean and second moment of `x` for a given field.
    pub fn moments_at_field(&self, h: f64) -> PosteriorMoments {
        self.prepared().moments(h)
    }

    /// Field-independent constants of the posterior, for use in inner loops.
    pub fn prepared(&self) -> PreparedChannel {
        let hs = self.hat_sigma();
        PreparedChannel {
            log_odds0: ((1.0 - self.theta) / self.theta).ln() + 0.5 * hs.ln(),
            curvature: self.sigma_x2 / (2.0 * hs),
            slope: self.sigma_x2 / hs,
        }
    }
}

/// The slab responsibility `Xi+ / Xi` as a logistic function of `h^2`:
/// `1 / (1 + exp(log_odds0 - curvature h^2))`. The exponent only decreases
/// with `|h|`, so large fields saturate at 1 without overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedChannel {
    log_odds0: f64,
    curvature: f64,
    slope: f64,
}

impl PreparedChannel {
    pub fn ratio(&self, h: f64) -> f64 {
        1.0 / (1.0 + (self.log_odds0 - self.curvature * h * h).exp())
    }

    pub fn mean(&self, h: f64) -> f64 {
        self.ratio(h) * self.slope * h
    }

    pub fn moments(&self, h: f64) -> PosteriorMoments {
        let ratio = self.ratio(h);
        let slab_mean = self.slope * h;
        PosteriorMoments {
            mean: ratio * slab_mean,
            second: ratio * (self.slope + slab_mean * slab_mean),
        }
    }
}

/// `Xi+` and `Xi = (1 - theta) + Xi+`, stored as logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiParts {
    pub log_plus: f64,
    pub log_total: f64,
}

impl XiParts {
    pub fn plus(&self) -> f64 {
        self.log_plus.exp()
    }

    pub fn total(&self) -> f64 {
        self.log_total.exp()
    }

    /// `Xi+ / Xi`, saturating at 1.
    pub fn ratio(&self) -> f64 {
        if self.log_plus == f64::NEG_INFINITY {
            0.0
        } else {
            (self.log_plus - self.log_total).exp().min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub second: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn xi_parts(z: f64, x0: f64, ch: &ChannelParams) -> XiParts {
    ch.xi_at_field(ch.field(z, x0))
}

/// Posterior mean of `x` given the field `sqrt(hat_q_x) z + hat_m_x x0`.
pub fn denoiser(z: f64, x0: f64, ch: &ChannelParams) -> f64 {
    ch.moments_at_field(ch.field(z, x0)).mean
}

/// `<<f>>`: average over `z ~ N(0, 1)` and `x0 ~ (1 - rho) delta + rho N(0, sigma_x2)`.
/// The atom at `x0 = 0` is weighted exactly.
pub fn double_average<F>(f: F, rho: f64, sigma_x2: f64, quad: &QuadratureSpec) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let Ok([v]) = grid_sum::<1, Infallible, _>(|z, x0| Ok([f(z, x0)]), rho, sigma_x2, quad, false);
    v
}

/// [`double_average`] of several integrands sharing one pass over the grid.
pub fn double_average_many<const K: usize, F>(f: F, rho: f64, sigma_x2: f64, quad: &QuadratureSpec) -> [f64; K]
where
    F: Fn(f64, f64) -> [f64; K],
{
    let Ok(v) = grid_sum::<K, Infallible, _>(|z, x0| Ok(f(z, x0)), rho, sigma_x2, quad, false);
    v
}

/// Fallible variant of [`double_average`]; stops at the first error.
pub fn try_double_average<F>(f: F, rho: f64, sigma_x2: f64, quad: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    grid_sum::<1, Error, _>(|z, x0| f(z, x0).map(|v| [v]), rho, sigma_x2, quad, false).map(|[v]| v)
}

/// [`try_double_average`] for integrands with `f(-z, -x0) = f(z, x0)`.
/// Visits only half of the grid, which is symmetric under negation.
pub fn try_double_average_even<F>(f: F, rho: f64, sigma_x2: f64, quad: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    grid_sum::<1, Error, _>(|z, x0| f(z, x0).map(|v| [v]), rho, sigma_x2, quad, true).map(|[v]| v)
}

fn grid_sum<const K: usize, E, F>(
    f: F,
    rho: f64,
    sigma_x2: f64,
    quad: &QuadratureSpec,
    even: bool,
) -> std::result::Result<[f64; K], E>
where
    F: Fn(f64, f64) -> std::result::Result<[f64; K], E>,
{
    let sigma = sigma_x2.sqrt();
    let zr = quad.z_rule();
    let xr = quad.x_rule();
    let (nz, mid_z, mid_x) = (zr.order(), zr.order() / 2, xr.order() / 2);
    let last_z = if even { mid_z + 1 } else { nz };
    let mut total = [0.0; K];
    for i in 0..last_z {
        let span = quad.span(i);
        if span.is_empty() {
            continue;
        }
        let z = zr.nodes()[i];
        // Off-centre rows stand in for their mirror image as well.
        let fold = if even && i < mid_z { 2.0 } else { 1.0 };
        let mut slab = [0.0; K];
        let row = if even && i == mid_z {
            span.start..mid_x + 1
        } else {
            span
        };
        for j in row {
            let w = if even && i == mid_z && j < mid_x { 2.0 } else { 1.0 } * xr.weights()[j];
            let v = f(z, sigma * xr.nodes()[j])?;
            for k in 0..K {
                slab[k] += w * v[k];
            }
        }
        let spike = f(z, 0.0)?;
        let wz = fold * zr.weights()[i];
        for k in 0..K {
            total[k] += wz * ((1.0 - rho) * spike[k] + rho * slab[k]);
        }
    }
    Ok(total)
}

/// Anything that can produce the scalar posterior mean. Lets the solver run
/// on either the closed form or the numerical oracle.
pub trait Denoiser: Sync {
    fn posterior_mean(&self, z: f64, x0: f64, ch: &ChannelParams) -> Result<f64>;

    /// `<<posterior_mean^2>>`. The posterior mean is odd in `(z, x0)`, so its
    /// square is averaged over half the grid.
    fn mean_square(&self, ch: &ChannelParams, rho: f64, quad: &QuadratureSpec) -> Result<f64> {
        try_double_average_even(
            |z, x0| self.posterior_mean(z, x0, ch).map(|m| m * m),
            rho,
            ch.sigma_x2,
            quad,
        )
    }
}

/// The closed-form Bernoulli-Gaussian posterior mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClosedForm;

impl Denoiser for ClosedForm {
    fn posterior_mean(&self, z: f64, x0: f64, ch: &ChannelParams) -> Result<f64> {
        Ok(denoiser(z, x0, ch))
    }

    fn mean_square(&self, ch: &ChannelParams, rho: f64, quad: &QuadratureSpec) -> Result<f64> {
        let pc = ch.prepared();
        let (a, b) = (ch.hat_q_x.sqrt(), ch.hat_m_x);
        try_double_average_even(
            |z, x0| {
                let m = pc.mean(a * z + b * x0);
                Ok(m * m)
            },
            rho,
            ch.sigma_x2,
            quad,
        )
    }
}
