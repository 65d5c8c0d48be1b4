//! Deterministic tabular output.
//!
//! Every table is CSV with a header row, `,` separators, `\n` line ends and
//! reals in scientific notation with 12 significant digits. Rows are emitted
//! in grid order regardless of how many threads produced them.

use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundaries::{BoundaryResult, BoundarySearch, BoundaryStatus, Region};
use crate::error::{Error, Result};
use crate::free_entropy::{branch_phi, dominant_branch, PhiValue};
use crate::general::solve_all_branches_general;
use crate::params::{Branch, FixedPoint, ModelParams};
use crate::quadrature::QuadratureSpec;
use crate::solver::{solve_all_branches_with, SolveOptions};

pub const SWEEP_HEADER: [&str; 12] = [
    "gamma",
    "branch",
    "q_d",
    "q_x",
    "m_d",
    "m_x",
    "Q_x",
    "mse_d",
    "mse_x",
    "phi_finite",
    "phi_logdiv",
    "dominant",
];

pub const FREE_ENTROPY_HEADER: [&str; 5] = ["gamma", "branch", "phi_finite", "phi_logdiv", "dominant"];
pub const BOUNDARY_HEADER: [&str; 3] = ["parameter", "value", "status"];
pub const PHASE_HEADER: [&str; 3] = ["alpha", "rho", "region"];
pub const ALPHA_M_HEADER: [&str; 3] = ["rho", "alpha_m", "status"];

/// One branch at one sample ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub gamma: f64,
    pub branch: Branch,
    pub q_d: f64,
    pub q_x: f64,
    pub m_d: f64,
    pub m_x: f64,
    #[serde(rename = "Q_x")]
    pub big_q_x: f64,
    pub mse_d: f64,
    pub mse_x: f64,
    pub phi_finite: f64,
    pub phi_logdiv: f64,
    pub dominant: bool,
}

impl SweepRecord {
    pub fn new(p: &ModelParams, fp: &FixedPoint, phi: Option<PhiValue>, dominant: bool) -> Self {
        let o = &fp.order;
        let (phi_finite, phi_logdiv) = phi.map_or((f64::NAN, f64::NAN), |v| (v.finite_part, v.log_div_coeff));
        Self {
            gamma: p.gamma,
            branch: fp.branch,
            q_d: o.q_d,
            q_x: o.q_x,
            m_d: o.m_d,
            m_x: o.m_x,
            big_q_x: o.big_q_x,
            mse_d: o.mse_d(),
            mse_x: o.mse_x(p.signal_power()),
            phi_finite,
            phi_logdiv,
            dominant,
        }
    }

    fn fields(&self) -> [String; 12] {
        [
            format_real(self.gamma),
            self.branch.to_string(),
            format_real(self.q_d),
            format_real(self.q_x),
            format_real(self.m_d),
            format_real(self.m_x),
            format_real(self.big_q_x),
            format_real(self.mse_d),
            format_real(self.mse_x),
            format_real(self.phi_finite),
            format_real(self.phi_logdiv),
            self.dominant.to_string(),
        ]
    }

    fn from_fields(r: &csv::StringRecord) -> Result<Self> {
        let real = |i: usize| parse_real(&r[i]);
        Ok(Self {
            gamma: real(0)?,
            branch: Branch::from_str(&r[1])?,
            q_d: real(2)?,
            q_x: real(3)?,
            m_d: real(4)?,
            m_x: real(5)?,
            big_q_x: real(6)?,
            mse_d: real(7)?,
            mse_x: real(8)?,
            phi_finite: real(9)?,
            phi_logdiv: real(10)?,
            dominant: parse_bool(&r[11])?,
        })
    }
}

/// `{:.11e}`: 12 significant digits, locale independent.
pub fn format_real(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn parse_real(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Malformed(format!("not a real number: {s:?}")))
}

fn parse_bool(s: &str) -> Result<bool> {
    s.parse().map_err(|_| Error::Malformed(format!("not a boolean: {s:?}")))
}

/// `steps` equally spaced values from `min` to `max` inclusive.
pub fn gamma_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(Error::InvalidParams(format!("empty range [{min}, {max}]")));
    }
    if steps < 2 {
        return Err(Error::InvalidParams(format!("steps = {steps} must be >= 2")));
    }
    let h = (max - min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|k| if k + 1 == steps { max } else { min + k as f64 * h })
        .collect())
}

/// All branches at one parameter point with their free entropy and the
/// dominance flag. Matched models use the two-variable map; mismatched ones
/// the full saddle-point iteration. Unconverged records are reported but
/// never marked dominant.
pub fn branch_records(p: &ModelParams, quad: &QuadratureSpec, opts: &SolveOptions) -> Vec<SweepRecord> {
    let mut branches = if p.is_matched() {
        solve_all_branches_with(p, quad, opts)
    } else {
        solve_all_branches_general(p, quad, opts)
    };
    branches.sort_by(|a, b| {
        a.branch
            .cmp(&b.branch)
            .then_with(|| a.order.q_d.total_cmp(&b.order.q_d))
            .then_with(|| a.order.q_x.total_cmp(&b.order.q_x))
    });
    let phis: Vec<Option<PhiValue>> = branches.iter().map(|fp| branch_phi(fp, p, quad).ok()).collect();
    let candidates: Vec<(FixedPoint, PhiValue)> = branches
        .iter()
        .zip(&phis)
        .filter(|(fp, _)| fp.branch != Branch::Unconverged)
        .filter_map(|(fp, phi)| phi.map(|v| (*fp, v)))
        .collect();
    let winner = dominant_branch(&candidates);
    branches
        .iter()
        .zip(phis)
        .map(|(fp, phi)| {
            let dominant = winner.is_some_and(|w| w.branch == fp.branch && w.order == fp.order);
            SweepRecord::new(p, fp, phi, dominant)
        })
        .collect()
}

/// [`branch_records`] for each `gamma`, flattened in grid order.
pub fn sweep(
    base: &ModelParams,
    gammas: &[f64],
    quad: &QuadratureSpec,
    opts: &SolveOptions,
) -> Result<Vec<SweepRecord>> {
    for &g in gammas {
        base.with_gamma(g).validate()?;
    }
    let per_point: Vec<Vec<SweepRecord>> = gammas
        .par_iter()
        .map(|&g| branch_records(&base.with_gamma(g), quad, opts))
        .collect();
    Ok(per_point.into_iter().flatten().collect())
}

/// `gamma` values at which no branch converged.
pub fn unresolved_gammas(records: &[SweepRecord]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for r in records {
        if out.last() == Some(&r.gamma) {
            continue;
        }
        let all_bad = records
            .iter()
            .filter(|s| s.gamma == r.gamma)
            .all(|s| s.branch == Branch::Unconverged);
        if all_bad {
            out.push(r.gamma);
        }
    }
    out
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn reader<R: Read>(r: R, header: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != header {
        return Err(Error::Malformed(format!("expected columns {header:?}, found {got:?}")));
    }
    Ok(rdr)
}

pub fn write_sweep<W: Write>(w: W, records: &[SweepRecord]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(SWEEP_HEADER)?;
    for r in records {
        wtr.write_record(r.fields())?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sweep<R: Read>(r: R) -> Result<Vec<SweepRecord>> {
    reader(r, &SWEEP_HEADER)?
        .records()
        .map(|row| SweepRecord::from_fields(&row?))
        .collect()
}

/// The free-entropy columns of a sweep.
pub fn write_free_entropy<W: Write>(w: W, records: &[SweepRecord]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(FREE_ENTROPY_HEADER)?;
    for r in records {
        wtr.write_record([
            format_real(r.gamma),
            r.branch.to_string(),
            format_real(r.phi_finite),
            format_real(r.phi_logdiv),
            r.dominant.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// A boundary value together with the coordinate it was computed at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub parameter: f64,
    pub value: f64,
    pub status: BoundaryStatus,
}

impl BoundaryRow {
    pub fn new(parameter: f64, result: &BoundaryResult) -> Self {
        Self {
            parameter,
            value: result.value,
            status: result.status,
        }
    }

    /// Closed-form boundaries: `Undefined` carries a NaN value.
    pub fn from_closed_form(parameter: f64, value: Result<f64>) -> Self {
        match value {
            Ok(value) => Self {
                parameter,
                value,
                status: BoundaryStatus::Found,
            },
            Err(_) => Self {
                parameter,
                value: f64::NAN,
                status: BoundaryStatus::Undefined,
            },
        }
    }
}

impl FromStr for BoundaryStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "found" => Ok(BoundaryStatus::Found),
            "diverged" => Ok(BoundaryStatus::Diverged),
            "undefined" => Ok(BoundaryStatus::Undefined),
            other => Err(Error::Malformed(format!("unknown status {other:?}"))),
        }
    }
}

fn write_boundary_rows<W: Write>(w: W, header: [&str; 3], rows: &[BoundaryRow]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record([
            format_real(r.parameter),
            format_real(r.value),
            r.status.as_str().to_owned(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_boundary_rows<R: Read>(r: R, header: [&str; 3]) -> Result<Vec<BoundaryRow>> {
    reader(r, &header)?
        .records()
        .map(|row| {
            let row = row?;
            Ok(BoundaryRow {
                parameter: parse_real(&row[0])?,
                value: parse_real(&row[1])?,
                status: row[2].parse()?,
            })
        })
        .collect()
}

pub fn write_boundaries<W: Write>(w: W, rows: &[BoundaryRow]) -> Result<()> {
    write_boundary_rows(w, BOUNDARY_HEADER, rows)
}

pub fn read_boundaries<R: Read>(r: R) -> Result<Vec<BoundaryRow>> {
    read_boundary_rows(r, BOUNDARY_HEADER)
}

/// The `alpha_M(rho)` polyline: `parameter` is `rho`, `value` is `alpha_M`.
pub fn write_alpha_m<W: Write>(w: W, rows: &[BoundaryRow]) -> Result<()> {
    write_boundary_rows(w, ALPHA_M_HEADER, rows)
}

pub fn read_alpha_m<R: Read>(r: R) -> Result<Vec<BoundaryRow>> {
    read_boundary_rows(r, ALPHA_M_HEADER)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub alpha: f64,
    pub rho: f64,
    pub region: Region,
}

/// Region labels on the `alphas x rhos` grid, alpha-major.
pub fn phase_diagram(search: &BoundarySearch, alphas: &[f64], rhos: &[f64]) -> Result<Vec<PhaseRow>> {
    let points: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| rhos.iter().map(move |&r| (a, r))).collect();
    points
        .par_iter()
        .map(|&(alpha, rho)| {
            Ok(PhaseRow {
                alpha,
                rho,
                region: search.phase_region(alpha, rho)?,
            })
        })
        .collect()
}

/// `alpha_M` at each `rho`, searched on `(rho, alpha_max]`. Densities at or
/// above `alpha_max` give undefined rows.
pub fn alpha_m_polyline(search: &BoundarySearch, rhos: &[f64], tol: f64, alpha_max: f64) -> Result<Vec<BoundaryRow>> {
    rhos.par_iter()
        .map(|&rho| {
            if rho >= alpha_max {
                return Ok(BoundaryRow::from_closed_form(rho, Err(Error::Undefined(String::new()))));
            }
            Ok(BoundaryRow::new(rho, &search.alpha_m(rho, tol, alpha_max)?))
        })
        .collect()
}

pub fn write_phase_diagram<W: Write>(w: W, rows: &[PhaseRow]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(PHASE_HEADER)?;
    for r in rows {
        wtr.write_record([format_real(r.alpha), format_real(r.rho), r.region.as_str().to_owned()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_phase_diagram<R: Read>(r: R) -> Result<Vec<PhaseRow>> {
    reader(r, &PHASE_HEADER)?
        .records()
        .map(|row| {
            let row = row?;
            let region = match &row[2] {
                "I" => Region::I,
                "II" => Region::II,
                "III" => Region::III,
                other => return Err(Error::Malformed(format!("unknown region {other:?}"))),
            };
            Ok(PhaseRow {
                alpha: parse_real(&row[0])?,
                rho: parse_real(&row[1])?,
                region,
            })
        })
        .collect()
}
