//! State evolution on the matched line `theta = rho`.
//!
//! With `m = q`, `Q_X = rho sigma_x2` and the conjugates pinned to
//! `hat_Q_d = 1, hat_Q_x = 0, hat_m = hat_q`, the saddle point reduces to the
//! two-dimensional map
//!
//! ```text
//! hat_q_x = alpha q_d / (tau + rho sigma_x2 - q_d q_x)
//! hat_q_d = gamma q_x / (tau + rho sigma_x2 - q_d q_x)
//! q_d'    = hat_q_d / (1 + hat_q_d)
//! q_x'    = << denoiser(z, x0)^2 >>
//! ```
//!
//! Failure and middle branches are found by damped iteration at `tau = 0`.
//! The success branch sits where the denominator vanishes and is described
//! analytically by [`success_susceptibilities`].

use rayon::prelude::*;

use crate::channel::{ChannelParams, ClosedForm, Denoiser};
use crate::error::{Error, Result};
use crate::params::{Branch, ConjugateParams, FixedPoint, ModelParams, OrderParams, SuccessSusceptibilities};
use crate::quadrature::QuadratureSpec;

/// At `tau = 0`, iterates whose gap `rho sigma_x2 - q_d q_x` falls below this
/// fraction of `rho sigma_x2` are treated as converging to the success corner.
pub const SUCCESS_GAP: f64 = 1e-6;

/// Branch deduplication distance in max-norm on `(q_d, q_x)`.
pub const DEDUP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Weight kept on the previous iterate.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Conjugates on the matched line for given `(q_d, q_x)`.
pub fn nishimori_conjugates(q_d: f64, q_x: f64, p: &ModelParams) -> Result<ConjugateParams> {
    let denom = p.tau + p.signal_power() - q_d * q_x;
    if !(denom > 0.0) {
        return Err(Error::DenominatorVanishes { q_d, q_x });
    }
    Ok(ConjugateParams::nishimori(p.gamma * q_x / denom, p.alpha * q_d / denom))
}

pub fn nishimori_update(q_d: f64, q_x: f64, p: &ModelParams, quad: &QuadratureSpec) -> Result<(f64, f64)> {
    nishimori_update_with(q_d, q_x, p, quad, &ClosedForm)
}

/// One application of the matched-line map with an arbitrary denoiser.
pub fn nishimori_update_with<D: Denoiser>(
    q_d: f64,
    q_x: f64,
    p: &ModelParams,
    quad: &QuadratureSpec,
    den: &D,
) -> Result<(f64, f64)> {
    let conj = nishimori_conjugates(q_d, q_x, p)?;
    let q_d_new = conj.hat_q_d / (1.0 + conj.hat_q_d);
    let ch = ChannelParams::nishimori(p.theta, p.sigma_x2, conj.hat_q_x);
    let q_x_new = den.mean_square(&ch, p.rho, quad)?;
    Ok((q_d_new, q_x_new))
}

pub fn classify(q_d: f64, q_x: f64, p: &ModelParams) -> Branch {
    let power = p.signal_power();
    if q_d < 1e-6 && q_x < 1e-6 * power {
        Branch::Failure
    } else if q_d > 0.0 && q_d < 1.0 && q_x > 0.0 && q_x < power {
        Branch::Middle
    } else {
        Branch::Unconverged
    }
}

pub fn solve_branch(
    init: (f64, f64),
    p: &ModelParams,
    quad: &QuadratureSpec,
    opts: &SolveOptions,
) -> Result<FixedPoint> {
    solve_branch_with(init, p, quad, opts, &ClosedForm)
}

/// Damped iteration `x <- (1 - damping) update(x) + damping x` from `init`.
///
/// Never returns a success record: an iterate that runs into the success
/// corner yields [`Error::DenominatorVanishes`] carrying the last iterate.
pub fn solve_branch_with<D: Denoiser>(
    init: (f64, f64),
    p: &ModelParams,
    quad: &QuadratureSpec,
    opts: &SolveOptions,
    den: &D,
) -> Result<FixedPoint> {
    let power = p.signal_power();
    let (mut q_d, mut q_x) = init;
    let mut before = (f64::INFINITY, f64::INFINITY);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let (u_d, u_x) = nishimori_update_with(q_d, q_x, p, quad, den)?;
        let n_d = (1.0 - opts.damping) * u_d + opts.damping * q_d;
        let n_x = (1.0 - opts.damping) * u_x + opts.damping * q_x;
        residual = (n_d - q_d).abs().max((n_x - q_x).abs());
        let cycled = (n_d - before.0).abs().max((n_x - before.1).abs()) < opts.tol;
        before = (q_d, q_x);
        q_d = n_d;
        q_x = n_x;
        if p.tau == 0.0 && power - q_d * q_x <= SUCCESS_GAP * power {
            return Err(Error::DenominatorVanishes { q_d, q_x });
        }
        // A settled period-2 orbit never converges; stop early.
        if residual < opts.tol || cycled {
            break;
        }
    }
    let branch = if residual < opts.tol {
        classify(q_d, q_x, p)
    } else {
        Branch::Unconverged
    };
    // The origin is an exact fixed point; report it exactly.
    if branch == Branch::Failure {
        q_d = 0.0;
        q_x = 0.0;
    }
    let conj = nishimori_conjugates(q_d, q_x, p)?;
    Ok(FixedPoint {
        order: OrderParams::nishimori(q_d, q_x, power),
        conj,
        branch,
        iterations,
        residual,
        susceptibilities: None,
    })
}

/// Closed-form success branch in the `tau -> 0` limit.
pub fn success_susceptibilities(p: &ModelParams) -> Result<SuccessSusceptibilities> {
    let g = p.success_gap();
    if p.alpha <= p.rho || !(g > 0.0) {
        return Err(Error::SuccessBranchAbsent { g });
    }
    let chi_x = p.rho * p.gamma / g;
    let chi_d = p.alpha / (p.signal_power() * g);
    Ok(SuccessSusceptibilities {
        chi_x,
        chi_d,
        theta_hat_x: p.rho / chi_x,
        theta_hat_d: 1.0 / chi_d,
    })
}

/// `(1e-3, 1e-3 P)` plus the 5x5 grid `{0.1, .., 0.9}^2`, scaled by the
/// signal power `P` in the `q_x` direction.
pub fn canonical_inits(signal_power: f64) -> Vec<(f64, f64)> {
    let mut inits = vec![(1e-3, 1e-3 * signal_power)];
    inits.extend(grid_inits(signal_power));
    inits
}

pub fn grid_inits(signal_power: f64) -> Vec<(f64, f64)> {
    const LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
    LEVELS
        .iter()
        .flat_map(|&a| LEVELS.iter().map(move |&b| (a, b * signal_power)))
        .collect()
}

/// Keeps the first of any records within [`DEDUP_TOL`] of each other.
pub fn dedup_branches(records: Vec<FixedPoint>) -> Vec<FixedPoint> {
    let mut out: Vec<FixedPoint> = Vec::new();
    for r in records {
        let dup = out.iter().any(|o| {
            o.branch == r.branch
                && (o.order.q_d - r.order.q_d).abs() <= DEDUP_TOL
                && (o.order.q_x - r.order.q_x).abs() <= DEDUP_TOL
        });
        if !dup {
            out.push(r);
        }
    }
    out
}

/// Every branch reachable from the canonical inits, plus the analytic success
/// record when it exists. Results come back in init order, so they do not
/// depend on the thread pool.
pub fn solve_all_branches(p: &ModelParams, quad: &QuadratureSpec) -> Vec<FixedPoint> {
    solve_all_branches_with(p, quad, &SolveOptions::default())
}

pub fn solve_all_branches_with(p: &ModelParams, quad: &QuadratureSpec, opts: &SolveOptions) -> Vec<FixedPoint> {
    let found: Vec<FixedPoint> = canonical_inits(p.signal_power())
        .par_iter()
        .map(|&init| solve_branch(init, p, quad, opts))
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

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn origin_is_fixed() {
        let p = ModelParams::matched(0.5, 0.2, 3.0).unwrap();
        assert_eq!(nishimori_update(0.0, 0.0, &p, &quad()).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn linearization_near_origin() {
        let p = ModelParams::matched(0.5, 0.2, 3.0).unwrap();
        let eps = 1e-9;
        let (_, qx) = nishimori_update(eps, 0.0, &p, &quad()).unwrap();
        assert!((qx / eps - 0.2 * 0.5).abs() < 1e-5, "{}", qx / eps);
        let (qd, _) = nishimori_update(0.0, eps, &p, &quad()).unwrap();
        assert!((qd / eps - 3.0 / 0.2).abs() < 1e-5);
    }

    #[test]
    fn denominator_guard() {
        let p = ModelParams::matched(0.5, 0.2, 3.0).unwrap();
        assert!(matches!(
            nishimori_update(1.0, 0.2, &p, &quad()),
            Err(Error::DenominatorVanishes { .. })
        ));
        // tau keeps the corner finite
        assert!(nishimori_update(1.0, 0.2, &p.with_tau(1e-3), &quad()).is_ok());
    }

    #[test]
    fn susceptibilities_closed_form() {
        let p = ModelParams::matched(0.5, 0.2, 2.0).unwrap();
        let s = success_susceptibilities(&p).unwrap();
        assert!((s.chi_x - 4.0).abs() < 1e-12);
        assert!((s.chi_d - 25.0).abs() < 1e-12);
        assert!((s.theta_hat_x - 0.05).abs() < 1e-14);
        assert!((s.theta_hat_d - 0.04).abs() < 1e-14);
        assert!((s.chi_x * s.theta_hat_x - p.rho).abs() < 1e-15);
        assert!((s.chi_d * s.theta_hat_d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn susceptibilities_absent() {
        let at_threshold = ModelParams::matched(0.5, 0.2, 0.5 / 0.3).unwrap();
        // g rounds to a tiny number either side of zero; make it exact
        let mut exact = at_threshold;
        exact.gamma = 5.0 / 3.0;
        exact.alpha = 0.5;
        let g = exact.success_gap();
        assert!(g.abs() < 1e-15);
        if g <= 0.0 {
            assert!(success_susceptibilities(&exact).is_err());
        }
        for gamma in [0.5, 2.0, 100.0] {
            let p = ModelParams::matched(0.3, 0.3, gamma).unwrap();
            assert!(matches!(
                success_susceptibilities(&p),
                Err(Error::SuccessBranchAbsent { .. })
            ));
        }
    }

    #[test]
    fn failure_below_gamma_f() {
        let p = ModelParams::matched(0.5, 0.2, 1.5).unwrap();
        let fp = solve_branch((0.01, 0.01), &p, &quad(), &SolveOptions::default()).unwrap();
        assert_eq!(fp.branch, Branch::Failure);
    }

    #[test]
    fn origin_unstable_above_gamma_f() {
        let p = ModelParams::matched(0.5, 0.2, 2.5).unwrap();
        match solve_branch((0.01, 0.01), &p, &quad(), &SolveOptions::default()) {
            Ok(fp) => assert_ne!(fp.branch, Branch::Failure),
            Err(Error::DenominatorVanishes { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn middle_branch_at_gamma_three() {
        let p = ModelParams::matched(0.5, 0.2, 3.0).unwrap();
        let all = solve_all_branches(&p, &quad());
        let middle: Vec<_> = all.iter().filter(|f| f.branch == Branch::Middle).collect();
        assert_eq!(middle.len(), 1, "{all:?}");
        let m = middle[0].order;
        assert!(m.q_d > 0.0 && m.q_d < 1.0 && m.q_x > 0.0 && m.q_x < 0.2);
        assert!(all.iter().any(|f| f.branch == Branch::Success));
        assert!(!all.iter().any(|f| f.branch == Branch::Failure));
    }

    #[test]
    fn branch_sets() {
        let q = quad();
        let low = solve_all_branches(&ModelParams::matched(0.5, 0.2, 1.0).unwrap(), &q);
        let converged: Vec<_> = low.iter().filter(|f| f.branch != Branch::Unconverged).collect();
        assert_eq!(converged.len(), 1, "{low:?}");
        assert_eq!(converged[0].branch, Branch::Failure);

        let high = solve_all_branches(&ModelParams::matched(0.5, 0.2, 5.0).unwrap(), &q);
        assert_eq!(high.len(), 1, "{high:?}");
        assert_eq!(high[0].branch, Branch::Success);
    }

    #[test]
    fn dedup_keeps_first() {
        let p = ModelParams::matched(0.5, 0.2, 1.0).unwrap();
        let fp = solve_branch((0.01, 0.001), &p, &quad(), &SolveOptions::default()).unwrap();
        let mut near = fp;
        near.order.q_d += 5e-7;
        near.iterations = 7;
        let out = dedup_branches(vec![fp, near]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].iterations, fp.iterations);
    }
}
