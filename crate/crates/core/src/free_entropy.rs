//! Replica-symmetric free entropy density and branch dominance.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::channel::{double_average, xi_parts, ChannelParams};
use crate::error::{Error, Result};
use crate::params::{Branch, ConjugateParams, FixedPoint, ModelParams, OrderParams};
use crate::quadrature::QuadratureSpec;

/// `phi = log_div_coeff * ln(1 / tau) + finite_part` as `tau -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiValue {
    pub log_div_coeff: f64,
    pub finite_part: f64,
}

impl PhiValue {
    pub fn finite(value: f64) -> Self {
        Self {
            log_div_coeff: 0.0,
            finite_part: value,
        }
    }

    /// Total order: larger divergence first, then larger finite part.
    pub fn cmp_dominance(&self, other: &Self) -> Ordering {
        let a = self.log_div_coeff.max(0.0);
        let b = other.log_div_coeff.max(0.0);
        a.total_cmp(&b)
            .then_with(|| self.finite_part.total_cmp(&other.finite_part))
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(rho: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(rho) + term(1.0 - rho)
}

/// Free entropy at arbitrary order and conjugate parameters. `tau` from the
/// model is the width of the regularized delta function; it adds to both
/// the gap `Q_x - q_d q_x` and the residual `rho sigma_x2 - 2 m_d m_x + q_d q_x`.
pub fn phi_general(order: &OrderParams, conj: &ConjugateParams, p: &ModelParams, quad: &QuadratureSpec) -> Result<f64> {
    let gap = p.tau + order.big_q_x - order.q_d * order.q_x;
    if !(gap > 0.0) {
        return Err(Error::DegenerateDenominator(format!("tau + Q_x - q_d q_x = {gap:e}")));
    }
    let s = conj.hat_big_q_d + conj.hat_q_d;
    if !(s > 0.0) {
        return Err(Error::DegenerateDenominator(format!("hat_Q_d + hat_q_d = {s:e}")));
    }
    let ch = ChannelParams {
        theta: p.theta,
        sigma_x2: p.sigma_x2,
        hat_q_x: conj.hat_q_x,
        hat_m_x: conj.hat_m_x,
        hat_big_q_x: conj.hat_big_q_x,
    };
    ch.validate()?;

    let log_xi = double_average(|z, x0| xi_parts(z, x0, &ch).log_total, p.rho, p.sigma_x2, quad);
    let prior = p.gamma
        * (0.5 * (conj.hat_big_q_x * order.big_q_x + conj.hat_q_x * order.q_x) - conj.hat_m_x * order.m_x + log_xi);
    let dictionary = 0.5
        * p.alpha
        * (conj.hat_big_q_d + conj.hat_q_d * order.q_d - 2.0 * conj.hat_m_d * order.m_d - s.ln()
            + (conj.hat_q_d + conj.hat_m_d * conj.hat_m_d) / s);
    let mismatch = p.tau + order.q_d * order.q_x - 2.0 * order.m_d * order.m_x + p.signal_power();
    let channel = -0.5 * p.alpha * p.gamma * (mismatch / gap + gap.ln());
    Ok(prior + dictionary + channel)
}

/// Closed form at `q_d = q_x = 0` on the matched line.
pub fn phi_failure(p: &ModelParams) -> PhiValue {
    let ag = p.alpha * p.gamma;
    PhiValue::finite(0.5 * (-ag * (1.0 + p.signal_power().ln()) + p.alpha))
}

/// Success branch: `(g / 2) ln(1 / tau)` plus a finite part. A learner
/// assuming `theta != rho` only changes the entropy term, which becomes the
/// cross entropy `-(1 - rho) ln(1 - theta) - rho ln(theta)`.
pub fn phi_success(p: &ModelParams) -> Result<PhiValue> {
    let g = p.success_gap();
    if p.alpha <= p.rho || !(g > 0.0) {
        return Err(Error::SuccessBranchAbsent { g });
    }
    let (a, gm, r, s2) = (p.alpha, p.gamma, p.rho, p.sigma_x2);
    let cross_entropy = -(1.0 - r) * (1.0 - p.theta).ln() - r * p.theta.ln();
    let finite = 0.5
        * (g * (g.ln() - 1.0) - a * gm * (a * gm).ln() + a * (1.0 - (r * s2 / a).ln()) + gm * r * (gm.ln() - s2.ln()))
        - gm * cross_entropy;
    Ok(PhiValue {
        log_div_coeff: 0.5 * g,
        finite_part: finite,
    })
}

/// Free entropy of a solved branch. Success uses the analytic limit; every
/// other branch is evaluated in place.
pub fn branch_phi(fp: &FixedPoint, p: &ModelParams, quad: &QuadratureSpec) -> Result<PhiValue> {
    match fp.branch {
        Branch::Success => phi_success(p),
        _ => phi_general(&fp.order, &fp.conj, p, quad).map(PhiValue::finite),
    }
}

fn branch_rank(b: Branch) -> u8 {
    match b {
        Branch::Success => 3,
        Branch::Middle => 2,
        Branch::Failure => 1,
        Branch::Unconverged => 0,
    }
}

/// The thermodynamically dominant branch: divergent free entropy wins, then
/// the largest finite part. Ties go to success, then middle. The result does
/// not depend on the order of the input.
pub fn dominant_branch(branches: &[(FixedPoint, PhiValue)]) -> Option<FixedPoint> {
    branches
        .iter()
        .max_by(|(fa, pa), (fb, pb)| {
            pa.cmp_dominance(pb)
                .then_with(|| branch_rank(fa.branch).cmp(&branch_rank(fb.branch)))
                .then_with(|| fa.order.q_d.total_cmp(&fb.order.q_d))
                .then_with(|| fa.order.q_x.total_cmp(&fb.order.q_x))
        })
        .map(|(fp, _)| *fp)
}
