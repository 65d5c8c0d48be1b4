//! Independent reference for the scalar posterior mean.
//!
//! The posterior `P_theta(x) exp(-(hat_Q_x + hat_q_x) x^2 / 2 + h x)` is
//! normalized and integrated numerically with adaptive Gauss-Kronrod (7/15).
//! The spike at zero contributes mass but no first moment; the slab is a
//! log-concave density that is integrated on a window around its peak. No
//! closed form for the slab integral is used.

use crate::channel::{ChannelParams, Denoiser};
use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel on `[a, b]` for several integrands at once.
/// Returns the Kronrod estimates and the Kronrod-Gauss differences.
fn kronrod_panel<const K: usize, F>(f: &F, a: f64, b: f64) -> ([f64; K], [f64; K])
where
    F: Fn(f64) -> [f64; K],
{
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    let fc = f(c);
    for k in 0..K {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = hw * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..K {
            let s = f1[k] + f2[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut err = [0.0; K];
    for k in 0..K {
        kron[k] *= hw;
        err[k] = (kron[k] - gauss[k] * hw).abs();
    }
    (kron, err)
}

/// Globally adaptive bisection until every component meets
/// `abs_tol + rel_tol * |I|`.
pub fn adaptive_integrate<const K: usize, F>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<[f64; K]>
where
    F: Fn(f64) -> [f64; K],
{
    let mut panels = vec![(a, b, kronrod_panel(&f, a, b))];
    loop {
        let mut total = [0.0; K];
        let mut err = [0.0; K];
        for (_, _, (v, e)) in &panels {
            for k in 0..K {
                total[k] += v[k];
                err[k] += e[k];
            }
        }
        let done = (0..K).all(|k| err[k] <= abs_tol + rel_tol * total[k].abs());
        if done {
            return Ok(total);
        }
        if panels.len() >= max_panels {
            return Err(Error::IntegrationFailed(format!(
                "{} panels exhausted, error estimate {:?}",
                max_panels, err
            )));
        }
        // Split the panel with the largest error, weighted per component.
        let worst = panels
            .iter()
            .enumerate()
            .map(|(i, (_, _, (_, e)))| {
                let s: f64 = (0..K).map(|k| e[k] / (abs_tol + rel_tol * total[k].abs())).sum();
                (i, s)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        panels.push((lo, mid, kronrod_panel(&f, lo, mid)));
        panels.push((mid, hi, kronrod_panel(&f, mid, hi)));
    }
}

/// Half-width of the slab integration window in units of the slab's
/// posterior standard deviation.
const WINDOW: f64 = 40.0;

/// Posterior mean of `x` by direct numerical integration.
pub fn denoiser_oracle(z: f64, x0: f64, ch: &ChannelParams) -> Result<f64> {
    ch.validate()?;
    let h = ch.field(z, x0);
    if ch.theta == 0.0 || (h == 0.0) {
        return Ok(0.0);
    }
    let s2 = ch.sigma_x2;
    let a = ch.hat_big_q_x + ch.hat_q_x;
    // Log of the slab integrand: Gaussian prior density times the tilt.
    let log_slab =
        |x: f64| -x * x / (2.0 * s2) - 0.5 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * a * x * x + h * x;
    let precision = 1.0 / s2 + a;
    let peak = h / precision;
    let width = precision.sqrt().recip();
    let shift = log_slab(peak);

    let integrand = |x: f64| {
        let w = (log_slab(x) - shift).exp();
        [w, x * w]
    };
    let [mass, first] = adaptive_integrate(
        integrand,
        peak - WINDOW * width,
        peak + WINDOW * width,
        0.0,
        1e-14,
        2000,
    )?;

    // Spike mass relative to the shifted slab mass: (1 - theta) / (theta e^shift).
    let spike = if ch.theta < 1.0 {
        ((1.0 - ch.theta).ln() - ch.theta.ln() - shift).exp()
    } else {
        0.0
    };
    Ok(first / (mass + spike))
}

/// The oracle as a [`Denoiser`], for full solves that bypass the closed form.
#[derive(Debug, Clone, Copy, Default)]
pub struct NumericalOracle;

impl Denoiser for NumericalOracle {
    fn posterior_mean(&self, z: f64, x0: f64, ch: &ChannelParams) -> Result<f64> {
        denoiser_oracle(z, x0, ch)
    }
}
