//! Critical sample ratios and the spinodal line in the `alpha`-`rho` plane.
//!
//! `gamma_S` and `gamma_F` are closed forms. `gamma_M`, where the middle
//! branch disappears, is found by continuation in `gamma` followed by
//! bisection. The spinodal `rho_M(alpha)` is where `gamma_M` diverges; there
//! `hat_q_d ~ gamma` forces `q_d -> 1`, and the matched-line map reduces to
//! the one-dimensional recursion
//!
//! ```text
//! q_x <- << denoiser(z, x0)^2 >>,   hat_q_x = alpha / (rho sigma_x2 - q_x)
//! ```
//!
//! which is the state evolution of noiseless compressed sensing with a known
//! dictionary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, ClosedForm, Denoiser};
use crate::error::{Error, Result};
use crate::params::{Branch, ModelParams};
use crate::quadrature::QuadratureSpec;
use crate::solver::{grid_inits, solve_branch, SolveOptions};

/// Margin that separates an interior `q_x` from the two ends `0` and
/// `rho sigma_x2` in the existence tests.
pub const INTERIOR_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryStatus {
    Found,
    Diverged,
    Undefined,
}

impl BoundaryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryStatus::Found => "found",
            BoundaryStatus::Diverged => "diverged",
            BoundaryStatus::Undefined => "undefined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub value: f64,
    pub bracket: (f64, f64),
    pub status: BoundaryStatus,
}

impl BoundaryResult {
    fn found(lo: f64, hi: f64) -> Self {
        Self {
            value: 0.5 * (lo + hi),
            bracket: (lo, hi),
            status: BoundaryStatus::Found,
        }
    }
}

/// Region of the `alpha`-`rho` phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// `alpha > alpha_M(rho)`: perfect learning with `O(N)` samples and no
    /// competing metastable branch at large `gamma`.
    I,
    /// `rho < alpha <= alpha_M(rho)`: `O(N)` samples suffice, but a middle
    /// branch survives for every `gamma`.
    II,
    /// `alpha <= rho`: no success branch.
    III,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::I => "I",
            Region::II => "II",
            Region::III => "III",
        }
    }
}

/// `alpha / (alpha - rho)`
pub fn gamma_s(alpha: f64, rho: f64) -> Result<f64> {
    if !(alpha > rho) || !(rho > 0.0) {
        return Err(Error::Undefined(format!(
            "gamma_S needs alpha > rho > 0 (alpha = {alpha}, rho = {rho})"
        )));
    }
    Ok(alpha / (alpha - rho))
}

/// `1 / alpha`
pub fn gamma_f(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams(format!("alpha = {alpha} must be > 0")));
    }
    Ok(1.0 / alpha)
}

/// Settings shared by the numerical boundary searches.
#[derive(Debug, Clone)]
pub struct BoundarySearch {
    pub quad: QuadratureSpec,
    pub sigma_x2: f64,
    pub solve: SolveOptions,
    /// Multiplicative step of the `gamma` continuation.
    pub step_factor: f64,
    /// Largest `gamma` probed before declaring divergence.
    pub gamma_cap: f64,
    /// Iteration cap for the reduced map.
    pub reduced_max_iter: usize,
}

impl Default for BoundarySearch {
    fn default() -> Self {
        Self {
            quad: QuadratureSpec::default(),
            sigma_x2: 1.0,
            solve: SolveOptions::default(),
            step_factor: 1.1,
            gamma_cap: 1e3,
            reduced_max_iter: 1_000_000,
        }
    }
}

impl BoundarySearch {
    pub fn with_quadrature(quad: QuadratureSpec) -> Self {
        Self {
            quad,
            ..Self::default()
        }
    }

    fn params(&self, alpha: f64, rho: f64, gamma: f64) -> Result<ModelParams> {
        ModelParams::new(alpha, gamma, rho, rho, self.sigma_x2, 0.0)
    }

    /// Whether any init of the 5x5 grid converges to an interior fixed point.
    pub fn middle_exists(&self, alpha: f64, rho: f64, gamma: f64) -> Result<bool> {
        Ok(self.find_middle(alpha, rho, gamma, None)?.is_some())
    }

    /// An interior fixed point `(q_d, q_x)`, trying `seed` before the grid.
    pub fn find_middle(
        &self,
        alpha: f64,
        rho: f64,
        gamma: f64,
        seed: Option<(f64, f64)>,
    ) -> Result<Option<(f64, f64)>> {
        let p = self.params(alpha, rho, gamma)?;
        let power = p.signal_power();
        let inits: Vec<(f64, f64)> = seed.into_iter().chain(grid_inits(power)).collect();
        Ok(inits.par_iter().find_map_first(|&init| {
            let fp = solve_branch(init, &p, &self.quad, &self.solve).ok()?;
            let interior = fp.order.q_x > INTERIOR_MARGIN * power && fp.order.q_x < power - INTERIOR_MARGIN;
            (fp.branch == Branch::Middle && interior).then_some((fp.order.q_d, fp.order.q_x))
        }))
    }

    /// Largest `gamma` at which the middle branch exists.
    ///
    /// Continuation starts at `1.01 max(gamma_S, gamma_F)` and climbs by
    /// `step_factor` until the branch is lost. For sparse signals the branch
    /// can already be gone at that start, its window of existence closing
    /// below `gamma_F`; the search then walks downward in finer steps to the
    /// last `gamma` that still carries it.
    pub fn gamma_m(&self, alpha: f64, rho: f64, tol: f64) -> Result<BoundaryResult> {
        const DOWN_FACTOR: f64 = 1.02;
        const DOWN_LIMIT: f64 = 1e-2;
        let start = gamma_s(alpha, rho)?.max(gamma_f(alpha)?) * 1.01;
        let Some(mut seed) = self.find_middle(alpha, rho, start, None)? else {
            let mut hi = start;
            while hi > DOWN_LIMIT {
                let lo = hi / DOWN_FACTOR;
                if self.find_middle(alpha, rho, lo, None)?.is_some() {
                    return self.bisect_gamma(alpha, rho, lo, hi, tol);
                }
                hi = lo;
            }
            return Ok(BoundaryResult {
                value: f64::NAN,
                bracket: (DOWN_LIMIT, start),
                status: BoundaryStatus::Undefined,
            });
        };
        let mut lo = start;
        loop {
            let hi = lo * self.step_factor;
            if hi > self.gamma_cap {
                return Ok(BoundaryResult {
                    value: f64::INFINITY,
                    bracket: (lo, f64::INFINITY),
                    status: BoundaryStatus::Diverged,
                });
            }
            match self.find_middle(alpha, rho, hi, Some(seed))? {
                Some(next) => seed = next,
                None => return self.bisect_gamma(alpha, rho, lo, hi, tol),
            }
            lo = hi;
        }
    }

    /// Bisection with the middle branch present at `lo` and absent at `hi`.
    fn bisect_gamma(&self, alpha: f64, rho: f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<BoundaryResult> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParams(format!("tol = {tol} must be > 0")));
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.middle_exists(alpha, rho, mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(BoundaryResult::found(lo, hi))
    }

    /// Iterates the reduced map from `q_x = 0`. Returns the fixed point it
    /// stalls at, or `None` when it climbs to within [`INTERIOR_MARGIN`] of
    /// perfect recovery.
    pub fn reduced_fixed_point(&self, alpha: f64, rho: f64) -> Result<Option<f64>> {
        let p = self.params(alpha, rho, 1.0)?;
        let power = p.signal_power();
        let mut q_x = 0.0;
        for _ in 0..self.reduced_max_iter {
            let hat_q_x = alpha / (power - q_x);
            let ch = ChannelParams::nishimori(rho, self.sigma_x2, hat_q_x);
            let next = ClosedForm.mean_square(&ch, rho, &self.quad)?;
            if next >= power - INTERIOR_MARGIN {
                return Ok(None);
            }
            if (next - q_x).abs() < self.solve.tol {
                return Ok(Some(next));
            }
            q_x = next;
        }
        Err(Error::Unconverged {
            iterations: self.reduced_max_iter,
            residual: f64::NAN,
        })
    }

    /// True when the reduced map has a stable fixed point short of perfect
    /// recovery.
    pub fn reduced_map_stuck(&self, alpha: f64, rho: f64) -> Result<bool> {
        Ok(self.reduced_fixed_point(alpha, rho)?.is_some())
    }

    /// Smallest `rho` at which the reduced map gets stuck, for fixed `alpha`.
    pub fn rho_m(&self, alpha: f64, tol: f64) -> Result<BoundaryResult> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParams(format!("alpha = {alpha} must be > 0")));
        }
        const SCAN: usize = 50;
        let upper = alpha.min(1.0);
        let step = upper / SCAN as f64;
        let mut prev = None;
        for k in 1..SCAN {
            let rho = k as f64 * step;
            if self.reduced_map_stuck(alpha, rho)? {
                let Some(lo) = prev else {
                    return Err(Error::Undefined(format!("reduced map already stuck at rho = {rho}")));
                };
                return self.bisect_rho(alpha, lo, rho, tol);
            }
            prev = Some(rho);
        }
        // The last grid cell below alpha.
        let lo = prev.unwrap_or(step);
        let hi = upper * (1.0 - 1e-9);
        if self.reduced_map_stuck(alpha, hi)? {
            return self.bisect_rho(alpha, lo, hi, tol);
        }
        Ok(BoundaryResult {
            value: f64::NAN,
            bracket: (lo, hi),
            status: BoundaryStatus::Undefined,
        })
    }

    fn bisect_rho(&self, alpha: f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<BoundaryResult> {
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.reduced_map_stuck(alpha, mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(BoundaryResult::found(lo, hi))
    }

    /// Inverse of [`Self::rho_m`]: the `alpha` above which the reduced map at
    /// density `rho` reaches perfect recovery. Searched on `(rho, alpha_max]`.
    pub fn alpha_m(&self, rho: f64, tol: f64, alpha_max: f64) -> Result<BoundaryResult> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParams(format!("rho = {rho} must lie in (0, 1)")));
        }
        if !(alpha_max > rho) {
            return Err(Error::InvalidParams(format!(
                "alpha_max = {alpha_max} must exceed rho = {rho}"
            )));
        }
        if self.reduced_map_stuck(alpha_max, rho)? {
            return Ok(BoundaryResult {
                value: f64::INFINITY,
                bracket: (alpha_max, f64::INFINITY),
                status: BoundaryStatus::Diverged,
            });
        }
        let mut lo = rho * (1.0 + 1e-9);
        let mut hi = alpha_max;
        if !self.reduced_map_stuck(lo, rho)? {
            return Ok(BoundaryResult {
                value: f64::NAN,
                bracket: (rho, alpha_max),
                status: BoundaryStatus::Undefined,
            });
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.reduced_map_stuck(mid, rho)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(BoundaryResult::found(lo, hi))
    }

    /// Region of the phase diagram. Region I is decided directly by whether
    /// the reduced map reaches perfect recovery, which is equivalent to
    /// comparing `alpha` with `alpha_M(rho)` without bisecting for it.
    pub fn phase_region(&self, alpha: f64, rho: f64) -> Result<Region> {
        if !(alpha > 0.0 && rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParams(format!(
                "need alpha > 0 and rho in (0, 1), got ({alpha}, {rho})"
            )));
        }
        if alpha <= rho {
            return Ok(Region::III);
        }
        Ok(if self.reduced_map_stuck(alpha, rho)? {
            Region::II
        } else {
            Region::I
        })
    }
}
