//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Criteria marked `known` are reported but only affect the exit status
//! under `--strict`:
//!
//! ```text
//! cargo test --release --test acceptance -- --strict
//! ```

use std::time::{Duration, Instant};

use dl_replica::boundaries::{gamma_f, gamma_s, BoundarySearch, BoundaryStatus};
use dl_replica::free_entropy::branch_phi;
use dl_replica::general::{phi_gradient, solve_all_branches_general};
use dl_replica::solver::solve_branch_with;
use dl_replica::{
    dominant_branch, nishimori_update, phi_failure, phi_general, phi_success, solve_all_branches, solve_branch, Branch,
    ConjugateParams, FixedPoint, ModelParams, NumericalOracle, OrderParams, QuadratureSpec, SolveOptions,
};

type Check = Result<String, String>;

struct Outcome {
    name: String,
    passed: bool,
    known: bool,
    detail: String,
    elapsed: Duration,
}

struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    /// Runs `f`; the criterion passes when `f` returns `Ok` within `budget`.
    fn run(&mut self, name: &str, budget: Duration, known: bool, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if elapsed > budget {
            passed = false;
            detail = format!("{detail}; over budget of {budget:.0?}");
        }
        let tag = match (passed, known) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known)",
        };
        println!("{tag} {name} [{elapsed:.2?}]: {detail}");
        self.outcomes.push(Outcome {
            name: name.to_owned(),
            passed,
            known,
            detail,
            elapsed,
        });
    }
}

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matched(alpha: f64, rho: f64, gamma: f64) -> ModelParams {
    ModelParams::matched(alpha, rho, gamma).expect("valid parameters")
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn gamma_s_exact() -> Check {
    let v = gamma_s(0.5, 0.2).map_err(|e| e.to_string())?;
    ensure(v == 5.0 / 3.0, format!("gamma_S = {v:.17}"))
}

/// Damped iterates of the matched map from `(1e-8, 1e-8)`.
fn origin_orbit(gamma: f64, steps: usize, quad: &QuadratureSpec) -> Result<Vec<f64>, String> {
    let p = matched(0.5, 0.2, gamma);
    let (mut q_d, mut q_x) = (1e-8f64, 1e-8f64);
    let mut norms = vec![q_d.max(q_x)];
    for _ in 0..steps {
        let (u_d, u_x) = nishimori_update(q_d, q_x, &p, quad).map_err(|e| e.to_string())?;
        q_d = 0.5 * (u_d + q_d);
        q_x = 0.5 * (u_x + q_x);
        norms.push(q_d.max(q_x));
    }
    Ok(norms)
}

fn gamma_f_and_loop_gain(quad: &QuadratureSpec) -> Check {
    let v = gamma_f(0.5).map_err(|e| e.to_string())?;
    let below = origin_orbit(1.9, 200, quad)?;
    let above = origin_orbit(2.1, 200, quad)?;
    let contracts = below.windows(2).skip(2).all(|w| w[1] < w[0]) && below[200] < below[0];
    let escapes = above.windows(2).skip(2).all(|w| w[1] > w[0]) && above[200] > above[0];
    let solved = solve_branch((1e-8, 1e-8), &matched(0.5, 0.2, 1.9), quad, &SolveOptions::default())
        .map_err(|e| e.to_string())?;
    ensure(
        v == 2.0 && contracts && escapes && solved.branch == Branch::Failure,
        format!(
            "gamma_F = {v}; |q| after 200 steps from 1e-8: {:.3e} at gamma 1.9, {:.3e} at gamma 2.1; solve at 1.9 -> {}",
            below[200], above[200], solved.branch
        ),
    )
}

fn gamma_m_value(search: &BoundarySearch) -> Result<f64, String> {
    let r = search.gamma_m(0.5, 0.2, 1e-3).map_err(|e| e.to_string())?;
    if r.status != BoundaryStatus::Found {
        return Err(format!("status {:?}", r.status));
    }
    let floor = gamma_s(0.5, 0.2).unwrap().max(gamma_f(0.5).unwrap());
    if (r.value - 3.841).abs() <= 0.01 && r.value >= floor {
        Ok(r.value)
    } else {
        Err(format!("gamma_M = {:.6}", r.value))
    }
}

fn rho_m_value(search: &BoundarySearch) -> Result<f64, String> {
    let r = search.rho_m(0.5, 1e-4).map_err(|e| e.to_string())?;
    if r.status == BoundaryStatus::Found && (r.value - 0.317).abs() <= 0.005 {
        Ok(r.value)
    } else {
        Err(format!("rho_M = {:.6} ({:?})", r.value, r.status))
    }
}

fn rho_m_cross_check(search: &BoundarySearch) -> Check {
    let r = search.gamma_m(0.5, 0.307, 0.1).map_err(|e| e.to_string())?;
    let large = r.status == BoundaryStatus::Diverged || (r.status == BoundaryStatus::Found && r.value > 50.0);
    ensure(
        large,
        format!("gamma_M(0.5, 0.307) = {:.3} ({:?}), required > 50", r.value, r.status),
    )
}

/// The failure point at a grid point: iterated to convergence when it is
/// stable, otherwise the origin after checking it is an exact fixed point.
fn failure_point(p: &ModelParams, quad: &QuadratureSpec) -> Result<(FixedPoint, bool), String> {
    let power = p.signal_power();
    if let Ok(fp) = solve_branch((1e-3, 1e-3 * power), p, quad, &SolveOptions::default()) {
        if fp.branch == Branch::Failure {
            return Ok((fp, true));
        }
    }
    let image = nishimori_update(0.0, 0.0, p, quad).map_err(|e| e.to_string())?;
    if image != (0.0, 0.0) {
        return Err(format!("origin maps to {image:?} at gamma = {}", p.gamma));
    }
    let conj = ConjugateParams::nishimori(0.0, 0.0);
    Ok((
        FixedPoint {
            order: OrderParams::nishimori(0.0, 0.0, power),
            conj,
            branch: Branch::Failure,
            iterations: 0,
            residual: 0.0,
            susceptibilities: None,
        },
        false,
    ))
}

fn phi_consistency(quad: &QuadratureSpec) -> Check {
    let mut worst = 0.0f64;
    let mut points = 0;
    let mut iterated = 0;
    for gamma in [0.5, 1.0, 2.0, 4.0] {
        for alpha in [0.3, 0.5, 0.8] {
            for rho in [0.1, 0.2] {
                let p = matched(alpha, rho, gamma);
                let (fp, by_iteration) = failure_point(&p, quad)?;
                let general = phi_general(&fp.order, &fp.conj, &p, quad).map_err(|e| e.to_string())?;
                worst = worst.max((general - phi_failure(&p).finite_part).abs());
                points += 1;
                iterated += by_iteration as usize;
            }
        }
    }
    ensure(
        worst < 1e-8,
        format!("{points} points ({iterated} reached by iteration), max |phi_general - phi_F| = {worst:.2e}"),
    )
}

fn success_dominance(quad: &QuadratureSpec) -> Check {
    let mut details = Vec::new();
    for gamma in [1.7, 2.5, 5.0] {
        let p = matched(0.5, 0.2, gamma);
        let phi_s = phi_success(&p).map_err(|e| e.to_string())?;
        let g = (0.5 - 0.2) * gamma - 0.5;
        if !(phi_s.log_div_coeff > 0.0 && (phi_s.log_div_coeff - g / 2.0).abs() < 1e-15) {
            return Err(format!("gamma {gamma}: log_div_coeff = {}", phi_s.log_div_coeff));
        }
        let scored: Vec<(FixedPoint, _)> = solve_all_branches(&p, quad)
            .into_iter()
            .filter(|fp| fp.branch != Branch::Unconverged)
            .filter_map(|fp| branch_phi(&fp, &p, quad).ok().map(|phi| (fp, phi)))
            .collect();
        let winner = dominant_branch(&scored).map(|fp| fp.branch);
        let names: Vec<&str> = scored.iter().map(|(fp, _)| fp.branch.as_str()).collect();
        if winner != Some(Branch::Success) {
            return Err(format!("gamma {gamma}: dominant {winner:?} among {names:?}"));
        }
        details.push(format!(
            "gamma {gamma}: g/2 = {:.3}, success over {names:?}",
            phi_s.log_div_coeff
        ));
    }
    Ok(details.join("; "))
}

fn oracle_equivalence(quad: &QuadratureSpec) -> Result<(f64, f64), String> {
    let p = matched(0.5, 0.2, 3.0);
    let opts = SolveOptions::default();
    let closed = solve_branch((0.5, 0.1), &p, quad, &opts).map_err(|e| e.to_string())?;
    let oracle = solve_branch_with((0.5, 0.1), &p, quad, &opts, &NumericalOracle).map_err(|e| e.to_string())?;
    let diff = (closed.order.q_d - oracle.order.q_d)
        .abs()
        .max((closed.order.q_x - oracle.order.q_x).abs());
    if closed.branch == Branch::Middle && oracle.branch == Branch::Middle && diff < 1e-7 {
        Ok((closed.order.q_d, closed.order.q_x))
    } else {
        Err(format!(
            "{} vs {}, max difference {diff:.2e}",
            closed.branch, oracle.branch
        ))
    }
}

/// Converged branches, with the general solver away from the matched line.
fn relevant_branches(p: &ModelParams, quad: &QuadratureSpec) -> Vec<FixedPoint> {
    let all = if p.is_matched() {
        solve_all_branches(p, quad)
    } else {
        solve_all_branches_general(p, quad, &SolveOptions::default())
    };
    all.into_iter().filter(|fp| fp.branch != Branch::Unconverged).collect()
}

fn dominant_of(p: &ModelParams, branches: &[FixedPoint], quad: &QuadratureSpec) -> Option<FixedPoint> {
    let scored: Vec<_> = branches
        .iter()
        .filter_map(|fp| branch_phi(fp, p, quad).ok().map(|phi| (*fp, phi)))
        .collect();
    dominant_branch(&scored)
}

/// Returns the general fixed points it produced, for the stationarity check.
fn bayes_optimal_ordering(quad: &QuadratureSpec) -> Result<(String, Vec<(ModelParams, FixedPoint)>), String> {
    let power = 0.2;
    let mut details = Vec::new();
    let mut general_points = Vec::new();
    for gamma in [2.0, 3.0] {
        let base = matched(0.5, 0.2, gamma);
        let reference = relevant_branches(&base, quad);
        let ref_dom = dominant_of(&base, &reference, quad).ok_or("no dominant branch at theta = rho")?;
        for theta in [0.8 * 0.2, 1.5 * 0.2] {
            let p = base.with_theta(theta);
            let branches = relevant_branches(&p, quad);
            let dom = dominant_of(&p, &branches, quad).ok_or("no dominant branch")?;
            let mut pairs = vec![(dom, ref_dom)];
            for fp in &branches {
                let same: Vec<&FixedPoint> = reference.iter().filter(|r| r.branch == fp.branch).collect();
                if let Some(best) = same.iter().min_by(|a, b| a.order.mse_d().total_cmp(&b.order.mse_d())) {
                    pairs.push((*fp, **best));
                }
                if fp.branch != Branch::Success {
                    general_points.push((p, *fp));
                }
            }
            for (mine, theirs) in pairs {
                let (dd, dx) = (mine.order.mse_d(), mine.order.mse_x(power));
                let (rd, rx) = (theirs.order.mse_d(), theirs.order.mse_x(power));
                if dd < rd - 1e-6 || dx < rx - 1e-6 {
                    return Err(format!(
                        "gamma {gamma}, theta {theta}: {} has MSE ({dd:.6}, {dx:.6}) below ({rd:.6}, {rx:.6})",
                        mine.branch
                    ));
                }
                details.push(format!(
                    "g{gamma} th{theta:.2} {}: ({dd:.4}, {dx:.4}) >= ({rd:.4}, {rx:.4})",
                    mine.branch
                ));
            }
        }
    }
    Ok((details.join("; "), general_points))
}

fn stationarity(points: &[(ModelParams, FixedPoint)], quad: &QuadratureSpec) -> Check {
    if points.is_empty() {
        return Err("no general fixed points to check".into());
    }
    let mut worst = 0.0f64;
    for (p, fp) in points {
        let g = phi_gradient(&fp.order, &fp.conj, p, quad, 1e-6).map_err(|e| e.to_string())?;
        worst = g.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    ensure(
        worst < 1e-6,
        format!("{} fixed points, max |grad phi| = {worst:.2e}", points.len()),
    )
}

/// Every numerical criterion at one quadrature order. Returns the values
/// compared across orders.
fn numerical_criteria(suite: &mut Suite, order: usize) -> Option<[f64; 4]> {
    let quad = QuadratureSpec::with_order(order).expect("valid order");
    let search = BoundarySearch::with_quadrature(quad.clone());
    let tag = |name: &str| format!("{name} (order {order})");
    let mut values = [f64::NAN; 4];

    suite.run(&tag("gamma_F loop gain"), secs(1), false, || {
        gamma_f_and_loop_gain(&quad)
    });
    suite.run(&tag("gamma_M(0.5, 0.2) = 3.841 +- 0.01"), secs(60), false, || {
        gamma_m_value(&search).map(|v| {
            values[0] = v;
            format!("gamma_M = {v:.6}")
        })
    });
    suite.run(&tag("rho_M(0.5) = 0.317 +- 0.005"), secs(60), false, || {
        rho_m_value(&search).map(|v| {
            values[1] = v;
            format!("rho_M = {v:.6}")
        })
    });
    suite.run(
        &tag("rho_M cross-check gamma_M(0.5, 0.307) > 50"),
        secs(60),
        true,
        || rho_m_cross_check(&search),
    );
    suite.run(&tag("phi_general = phi_F at failure"), secs(10), false, || {
        phi_consistency(&quad)
    });
    suite.run(&tag("success dominance"), secs(5), false, || success_dominance(&quad));
    suite.run(&tag("oracle equivalence"), secs(60), false, || {
        oracle_equivalence(&quad).map(|(q_d, q_x)| {
            values[2] = q_d;
            values[3] = q_x;
            format!("middle at gamma 3: q_d = {q_d:.12}, q_x = {q_x:.12}")
        })
    });
    let mut general_points = Vec::new();
    suite.run(&tag("Bayes-optimality ordering"), secs(300), false, || {
        bayes_optimal_ordering(&quad).map(|(d, pts)| {
            general_points = pts;
            d
        })
    });
    suite.run(&tag("stationarity"), secs(60), false, || {
        stationarity(&general_points, &quad)
    });
    values.iter().all(|v| v.is_finite()).then_some(values)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let strict = args.iter().any(|a| a == "--strict");
    // The libtest flags cargo passes through have no meaning here.
    if args.iter().any(|a| a == "--list") {
        return;
    }

    let mut suite = Suite { outcomes: Vec::new() };
    suite.run("gamma_S(0.5, 0.2) = 5/3", secs(1), false, gamma_s_exact);
    let low = numerical_criteria(&mut suite, 101);
    let high = numerical_criteria(&mut suite, 201);
    suite.run("quadrature stability 101 -> 201", Duration::MAX, false, || {
        let (Some(a), Some(b)) = (low, high) else {
            return Err("a compared criterion failed at one of the orders".into());
        };
        let fixed = (a[2] - b[2]).abs().max((a[3] - b[3]).abs());
        ensure(
            (a[0] - b[0]).abs() < 1e-3 && (a[1] - b[1]).abs() < 1e-4 && fixed < 1e-9,
            format!(
                "gamma_M {:.6} vs {:.6}, rho_M {:.6} vs {:.6}, middle fixed point differs by {fixed:.2e}",
                a[0], b[0], a[1], b[1]
            ),
        )
    });

    let failed: Vec<&Outcome> = suite.outcomes.iter().filter(|o| !o.passed).collect();
    let blocking = failed.iter().filter(|o| strict || !o.known).count();
    let total: Duration = suite.outcomes.iter().map(|o| o.elapsed).sum();
    println!(
        "{} criteria, {} passed, {} failed ({} known), total {total:.1?}",
        suite.outcomes.len(),
        suite.outcomes.len() - failed.len(),
        failed.len(),
        failed.iter().filter(|o| o.known).count()
    );
    for o in &failed {
        println!("  failed: {}: {}", o.name, o.detail);
    }
    if blocking > 0 {
        std::process::exit(1);
    }
}
