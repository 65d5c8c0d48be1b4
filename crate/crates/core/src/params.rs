use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `M / N`
    pub alpha: f64,
    /// `P / N`
    pub gamma: f64,
    /// True density of nonzero entries.
    pub rho: f64,
    /// Density assumed by the learner.
    pub theta: f64,
    pub sigma_x2: f64,
    /// Width of the Gaussian that regularizes the noiseless likelihood.
    pub tau: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, gamma: f64, rho: f64, theta: f64, sigma_x2: f64, tau: f64) -> Result<Self> {
        let p = Self {
            alpha,
            gamma,
            rho,
            theta,
            sigma_x2,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    /// Matched prior (`theta = rho`), unit slab variance, noiseless.
    pub fn matched(alpha: f64, rho: f64, gamma: f64) -> Result<Self> {
        Self::new(alpha, gamma, rho, rho, 1.0, 0.0)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.sigma_x2 > 0.0 && self.sigma_x2.is_finite()) {
            return bad("sigma_x2 must be positive");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be non-negative");
        }
        Ok(())
    }

    pub fn is_matched(&self) -> bool {
        self.theta == self.rho
    }

    /// Second moment of a true entry, `rho sigma_x2`.
    pub fn signal_power(&self) -> f64 {
        self.rho * self.sigma_x2
    }

    /// `g = (alpha - rho) gamma - alpha`; the success branch exists iff `g > 0`.
    pub fn success_gap(&self) -> f64 {
        (self.alpha - self.rho) * self.gamma - self.alpha
    }
}

/// Macroscopic overlaps. `big_q_x` is the posterior second moment `Q_X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub q_d: f64,
    pub m_d: f64,
    pub q_x: f64,
    pub m_x: f64,
    pub big_q_x: f64,
}

impl OrderParams {
    /// Matched-line values: `m = q` and `Q_X = rho sigma_x2`.
    pub fn nishimori(q_d: f64, q_x: f64, signal_power: f64) -> Self {
        Self {
            q_d,
            m_d: q_d,
            q_x,
            m_x: q_x,
            big_q_x: signal_power,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.q_d, self.m_d, self.q_x, self.m_x, self.big_q_x]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            q_d: a[0],
            m_d: a[1],
            q_x: a[2],
            m_x: a[3],
            big_q_x: a[4],
        }
    }

    /// `2 - 2 m_d / sqrt(q_d)`, or 2 when `q_d = 0`.
    pub fn mse_d(&self) -> f64 {
        if self.q_d > 0.0 {
            2.0 - 2.0 * self.m_d / self.q_d.sqrt()
        } else {
            2.0
        }
    }

    /// `rho sigma_x2 + q_x - 2 m_x`
    pub fn mse_x(&self, signal_power: f64) -> f64 {
        signal_power + self.q_x - 2.0 * self.m_x
    }
}

/// Conjugate (hatted) parameters. `hat_big_q_d` is the multiplier of the
/// column normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateParams {
    pub hat_big_q_d: f64,
    pub hat_q_d: f64,
    pub hat_m_d: f64,
    pub hat_big_q_x: f64,
    pub hat_q_x: f64,
    pub hat_m_x: f64,
}

impl ConjugateParams {
    pub fn nishimori(hat_q_d: f64, hat_q_x: f64) -> Self {
        Self {
            hat_big_q_d: 1.0,
            hat_q_d,
            hat_m_d: hat_q_d,
            hat_big_q_x: 0.0,
            hat_q_x,
            hat_m_x: hat_q_x,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.hat_big_q_d,
            self.hat_q_d,
            self.hat_m_d,
            self.hat_big_q_x,
            self.hat_q_x,
            self.hat_m_x,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            hat_big_q_d: a[0],
            hat_q_d: a[1],
            hat_m_d: a[2],
            hat_big_q_x: a[3],
            hat_q_x: a[4],
            hat_m_x: a[5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Success,
    Failure,
    Middle,
    Unconverged,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Success => "success",
            Branch::Failure => "failure",
            Branch::Middle => "middle",
            Branch::Unconverged => "unconverged",
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "success" => Ok(Branch::Success),
            "failure" => Ok(Branch::Failure),
            "middle" => Ok(Branch::Middle),
            "unconverged" => Ok(Branch::Unconverged),
            other => Err(Error::InvalidParams(format!("unknown branch {other:?}"))),
        }
    }
}

/// Rescaled deviations of the success branch from perfect recovery as the
/// regularizer `tau` goes to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessSusceptibilities {
    /// `(rho sigma_x2 - q_x) / tau`
    pub chi_x: f64,
    /// `(1 - q_d) / tau`
    pub chi_d: f64,
    /// `tau hat_q_x`
    pub theta_hat_x: f64,
    /// `tau hat_q_d`
    pub theta_hat_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub order: OrderParams,
    /// Infinite hatted overlaps for the analytic success record.
    pub conj: ConjugateParams,
    pub branch: Branch,
    pub iterations: usize,
    pub residual: f64,
    pub susceptibilities: Option<SuccessSusceptibilities>,
}

impl FixedPoint {
    /// The `tau -> 0` success record: perfect recovery.
    pub fn success(p: &ModelParams, chi: SuccessSusceptibilities) -> Self {
        let inf = f64::INFINITY;
        Self {
            order: OrderParams {
                q_d: 1.0,
                m_d: 1.0,
                q_x: p.signal_power(),
                m_x: p.signal_power(),
                big_q_x: p.signal_power(),
            },
            conj: ConjugateParams {
                hat_big_q_d: 1.0,
                hat_q_d: inf,
                hat_m_d: inf,
                hat_big_q_x: 0.0,
                hat_q_x: inf,
                hat_m_x: inf,
            },
            branch: Branch::Success,
            iterations: 0,
            residual: 0.0,
            susceptibilities: Some(chi),
        }
    }
}
