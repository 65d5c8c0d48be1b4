//! Saddle point of the free entropy for a learner whose assumed density
//! `theta` may differ from the true `rho`.
//!
//! Setting the derivatives of `phi` to zero splits into two groups. With
//! `gap = tau + Q_x - q_d q_x` and `e = tau + q_d q_x - 2 m_d m_x + rho sigma_x2`,
//! stationarity in the order parameters fixes the conjugates:
//!
//! ```text
//! hat_Q_x = alpha (gap - e) / gap^2      hat_q_x = alpha q_d e / gap^2
//! hat_m_x = alpha m_d / gap              hat_q_d = gamma q_x e / gap^2
//! hat_m_d = gamma m_x / gap
//! ```
//!
//! and stationarity in the conjugates fixes the order parameters. The
//! dictionary part is Gaussian: with `s = hat_Q_d + hat_q_d`,
//!
//! ```text
//! 1   = 1 / s + (hat_q_d + hat_m_d^2) / s^2      (column normalization)
//! q_d = (hat_q_d + hat_m_d^2) / s^2
//! m_d = hat_m_d / s
//! ```
//!
//! so `s = (1 + sqrt(1 + 4 (hat_q_d + hat_m_d^2))) / 2`. The sparse part
//! averages the scalar posterior moments:
//! `Q_x = <<E[x^2]>>`, `q_x = <<E[x]^2>>`, `m_x = <<E[x] x0>>`.
//!
//! On the matched line these collapse to `hat_Q_d = 1`, `hat_Q_x = 0`,
//! `hat_m = hat_q`, `m = q` and `Q_x = rho sigma_x2`.

use rayon::prelude::*;

use crate::channel::{double_average_many, ChannelParams};
use crate::error::{Error, Result};
use crate::free_entropy::phi_general;
use crate::params::{Branch, ConjugateParams, FixedPoint, ModelParams, OrderParams};
use crate::quadrature::QuadratureSpec;
use crate::solver::{canonical_inits, dedup_branches, success_susceptibilities, SolveOptions, SUCCESS_GAP};

/// Conjugates that make `phi` stationary in the order parameters.
pub fn conjugates_from_order(order: &OrderParams, p: &ModelParams) -> Result<ConjugateParams> {
    let gap = p.tau + order.big_q_x - order.q_d * order.q_x;
    if !(gap > 0.0) {
        return Err(Error::DegenerateDenominator(format!("tau + Q_x - q_d q_x = {gap:e}")));
    }
    let e = p.tau + order.q_d * order.q_x - 2.0 * order.m_d * order.m_x + p.signal_power();
    let gap2 = gap * gap;
    let hat_q_d = p.gamma * order.q_x * e / gap2;
    let hat_m_d = p.gamma * order.m_x / gap;
    let s = 0.5 * (1.0 + (1.0 + 4.0 * (hat_q_d + hat_m_d * hat_m_d)).sqrt());
    Ok(ConjugateParams {
        hat_big_q_d: s - hat_q_d,
        hat_q_d,
        hat_m_d,
        hat_big_q_x: p.alpha * (gap - e) / gap2,
        hat_q_x: p.alpha * order.q_d * e / gap2,
        hat_m_x: p.alpha * order.m_d / gap,
    })
}

/// Order parameters that make `phi` stationary in the conjugates.
pub fn order_from_conjugates(conj: &ConjugateParams, p: &ModelParams, quad: &QuadratureSpec) -> Result<OrderParams> {
    let s = conj.hat_big_q_d + conj.hat_q_d;
    if !(s > 0.0) {
        return Err(Error::DegenerateDenominator(format!("hat_Q_d + hat_q_d = {s:e}")));
    }
    let ch = ChannelParams {
        theta: p.theta,
        sigma_x2: p.sigma_x2,
        hat_q_x: conj.hat_q_x.max(0.0),
        hat_m_x: conj.hat_m_x,
        hat_big_q_x: conj.hat_big_q_x,
    };
    ch.validate()?;
    let pc = ch.prepared();
    let [big_q_x, q_x, m_x] = double_average_many(
        |z, x0| {
            let m = pc.moments(ch.field(z, x0));
            [m.second, m.mean * m.mean, m.mean * x0]
        },
        p.rho,
        p.sigma_x2,
        quad,
    );
    Ok(OrderParams {
        q_d: (conj.hat_q_d + conj.hat_m_d * conj.hat_m_d) / (s * s),
        m_d: conj.hat_m_d / s,
        q_x,
        m_x,
        big_q_x,
    })
}

fn classify_general(o: &OrderParams, p: &ModelParams) -> Branch {
    let power = p.signal_power();
    let small = |v: f64, scale: f64| v.abs() < 1e-6 * scale;
    if small(o.q_d, 1.0) && small(o.m_d, 1.0) && small(o.q_x, power) && small(o.m_x, power) {
        Branch::Failure
    } else if o.q_d > 0.0 && o.q_d < 1.0 && o.q_x > 0.0 && o.q_x < o.big_q_x {
        Branch::Middle
    } else {
        Branch::Unconverged
    }
}

/// Damped iteration of the two stationarity groups from `init`.
///
/// At `tau = 0` an iterate whose gap `Q_x - q_d q_x` collapses below
/// [`SUCCESS_GAP`] times the signal power is reported as
/// [`Error::DegenerateDenominator`]: it is running into the success branch,
/// which is handled analytically.
pub fn general_extremize(
    p: &ModelParams,
    init: &OrderParams,
    quad: &QuadratureSpec,
    opts: &SolveOptions,
) -> Result<FixedPoint> {
    let power = p.signal_power();
    let mut x = init.as_array();
    let mut before = [f64::INFINITY; 5];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let order = OrderParams::from_array(x);
        let conj = conjugates_from_order(&order, p)?;
        let next = order_from_conjugates(&conj, p, quad)?.as_array();
        residual = 0.0;
        let mut cycle_gap = 0.0;
        for k in 0..5 {
            let v = (1.0 - opts.damping) * next[k] + opts.damping * x[k];
            residual = f64::max(residual, (v - x[k]).abs());
            cycle_gap = f64::max(cycle_gap, (v - before[k]).abs());
            before[k] = x[k];
            x[k] = v;
        }
        if residual >= opts.tol && cycle_gap < opts.tol {
            // Settled on a period-2 orbit.
            return Err(Error::Unconverged { iterations, residual });
        }
        let o = OrderParams::from_array(x);
        if p.tau == 0.0 && o.big_q_x - o.q_d * o.q_x <= SUCCESS_GAP * power {
            return Err(Error::DegenerateDenominator(format!(
                "approaching success corner at q_d = {}, q_x = {}",
                o.q_d, o.q_x
            )));
        }
        if residual < opts.tol {
            break;
        }
    }
    if !(residual < opts.tol) {
        return Err(Error::Unconverged { iterations, residual });
    }
    let mut order = OrderParams::from_array(x);
    let branch = classify_general(&order, p);
    if branch == Branch::Failure {
        // Zero overlaps are an exact solution for any theta; only Q_x remains.
        order.q_d = 0.0;
        order.m_d = 0.0;
        order.q_x = 0.0;
        order.m_x = 0.0;
    }
    let conj = conjugates_from_order(&order, p)?;
    Ok(FixedPoint {
        order,
        conj,
        branch,
        iterations,
        residual,
        susceptibilities: None,
    })
}

/// Every branch reached from the canonical inits (with `m = q` and
/// `Q_x = rho sigma_x2` as starting values), plus the analytic success
/// record when `g > 0`.
pub fn solve_all_branches_general(p: &ModelParams, quad: &QuadratureSpec, opts: &SolveOptions) -> Vec<FixedPoint> {
    let power = p.signal_power();
    let found: Vec<FixedPoint> = canonical_inits(power)
        .par_iter()
        .map(|&(q_d, q_x)| general_extremize(p, &OrderParams::nishimori(q_d, q_x, power), quad, opts))
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|r| r.ok())
        .collect();
    let mut branches = dedup_branches(found);
    if let Ok(chi) = success_susceptibilities(p) {
        branches.push(FixedPoint::success(p, chi));
    }
    branches
}

/// Central finite-difference gradient of `phi` over all eleven scalars,
/// ordered as `[q_d, m_d, q_x, m_x, Q_x, hat_Q_d, hat_q_d, hat_m_d, hat_Q_x,
/// hat_q_x, hat_m_x]`. Steps are `rel_step * max(|v|, 1)`; `hat_q_x` enters
/// through its square root, so near zero it gets a one-sided second-order
/// stencil.
pub fn phi_gradient(
    order: &OrderParams,
    conj: &ConjugateParams,
    p: &ModelParams,
    quad: &QuadratureSpec,
    rel_step: f64,
) -> Result<[f64; 11]> {
    let mut v = [0.0; 11];
    v[..5].copy_from_slice(&order.as_array());
    v[5..].copy_from_slice(&conj.as_array());
    let eval = |v: &[f64; 11]| {
        let o = OrderParams::from_array([v[0], v[1], v[2], v[3], v[4]]);
        let c = ConjugateParams::from_array([v[5], v[6], v[7], v[8], v[9], v[10]]);
        phi_general(&o, &c, p, quad)
    };
    const HAT_Q_X: usize = 9;
    let mut grad = [0.0; 11];
    for k in 0..11 {
        let h = rel_step * v[k].abs().max(1.0);
        let at = |offset: f64| {
            let mut w = v;
            w[k] += offset;
            eval(&w)
        };
        grad[k] = if k == HAT_Q_X && v[k] < 2.0 * h {
            (-3.0 * at(0.0)? + 4.0 * at(h)? - at(2.0 * h)?) / (2.0 * h)
        } else {
            (at(h)? - at(-h)?) / (2.0 * h)
        };
    }
    Ok(grad)
}
