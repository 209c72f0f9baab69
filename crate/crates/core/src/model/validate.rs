//! Sampling-based checks of the standing hypotheses.

use std::fmt;

use serde::Serialize;

use super::expr::{ExprError, RateExpr, Var};
use super::{tail_bound, ModelProblem, NumericsParams};
use crate::par;
use crate::quad::gauss4;

/// Tolerance on |z_p| = 1.
pub const UNIT_NORM_TOL: f64 = 1e-9;

const REFINE: usize = 4;
const T_SAMPLES: usize = 33;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Age integral of ρ_I at each grid node.
    pub mu_i: Vec<f64>,
    /// Largest divided difference of z_p in time (information only).
    pub zp_lipschitz: f64,
    /// Sampled age variation Σ_a sup_x |Δρ_I| (information only).
    pub rho_i_variation: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "pass" } else { "FAIL" };
            writeln!(f, "{tag}  {:<22} {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Extremes of an expression over a sampling box, with the arguments where
/// they occur.
#[derive(Debug, Clone, Copy)]
struct Extremes {
    min: f64,
    min_at: [f64; 3],
    max: f64,
    max_at: [f64; 3],
}

impl Extremes {
    fn empty() -> Self {
        Extremes {
            min: f64::INFINITY,
            min_at: [f64::NAN; 3],
            max: f64::NEG_INFINITY,
            max_at: [f64::NAN; 3],
        }
    }

    fn add(&mut self, v: f64, at: [f64; 3]) {
        if v < self.min {
            self.min = v;
            self.min_at = at;
        }
        if v > self.max {
            self.max = v;
            self.max_at = at;
        }
    }

    fn merge(mut self, o: Extremes) -> Self {
        if o.min < self.min {
            self.min = o.min;
            self.min_at = o.min_at;
        }
        if o.max > self.max {
            self.max = o.max;
            self.max_at = o.max_at;
        }
        self
    }
}

fn fmt_at(at: [f64; 3]) -> String {
    format!("(x={}, a={}, t={})", at[0], at[1], at[2])
}

fn axis(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Samples `e` on the product of the three axes, collapsing any axis the
/// expression does not read.
fn sample(e: &RateExpr, xs: &[f64], ages: &[f64], ts: &[f64]) -> Result<Extremes, ExprError> {
    let pick = |v: Var, s: &[f64]| -> Vec<f64> {
        if e.depends_on(v) {
            s.to_vec()
        } else {
            vec![s[0]]
        }
    };
    let xs = pick(Var::X, xs);
    let ages = pick(Var::A, ages);
    let ts = pick(Var::T, ts);
    let parts = par::map(xs.len(), |i| -> Result<Extremes, ExprError> {
        let x = xs[i];
        let mut ex = Extremes::empty();
        for &a in &ages {
            for &t in &ts {
                ex.add(e.eval(x, a, t)?, [x, a, t]);
            }
        }
        Ok(ex)
    });
    let mut out = Extremes::empty();
    for p in parts {
        out = out.merge(p?);
    }
    Ok(out)
}

/// Checks the problem data on a grid four times finer than the
/// discretisation. Every failed check makes the report fail.
pub fn validate_hypotheses(p: &ModelProblem, n: &NumericsParams) -> ValidationReport {
    let mut report = ValidationReport {
        checks: Vec::new(),
        mu_i: Vec::new(),
        zp_lipschitz: 0.0,
        rho_i_variation: 0.0,
    };
    let b = &p.bounds;

    report.push(
        "beta_min>0",
        b.beta_min > 0.0 && b.beta_min <= b.beta_max,
        format!("beta_min={} beta_max={}", b.beta_min, b.beta_max),
    );
    report.push(
        "zeta_min>0",
        b.zeta_min > 0.0 && b.zeta_min <= b.zeta_max,
        format!("zeta_min={} zeta_max={}", b.zeta_min, b.zeta_max),
    );
    report.push(
        "M>beta_max",
        b.m > b.beta_max,
        format!("M={} beta_max={}", b.m, b.beta_max),
    );
    let mu_cap = b.mu_i_min.min(b.beta_min / (b.beta_min + b.zeta_max));
    report.push(
        "mu0_min",
        b.mu0_min > 0.0 && b.mu0_min < mu_cap,
        format!("mu0_min={} must lie in (0, {mu_cap})", b.mu0_min),
    );

    let j_max = n.j_max();
    report.push(
        "J_max>=2",
        j_max >= 2,
        format!("J_max={j_max} (A_max={}, delta_a={})", n.a_max, n.delta_a),
    );
    let tail = tail_bound(b, n.a_max);
    report.push(
        "A_max tail rule",
        tail < n.tol_age,
        format!("tail bound {tail:e} vs tol_age {:e}", n.tol_age),
    );

    let nx_fine = REFINE * (n.nx - 1) + 1;
    let xs = axis(0.0, 1.0, nx_fine);
    let na_fine = REFINE * j_max.max(1) + 1;
    let ages = axis(0.0, n.a_max, na_fine);
    let ts = axis(0.0, p.horizon, T_SAMPLES);

    let rate_checks: [(&str, &RateExpr, f64, f64); 4] = [
        ("beta", &p.beta, b.beta_min, b.beta_max),
        ("zeta", &p.zeta, b.zeta_min, b.zeta_max),
        ("beta0", &p.beta0, b.beta_min, b.beta_max),
        ("zeta0", &p.zeta0, b.zeta_min, b.zeta_max),
    ];
    for (name, e, lo, hi) in rate_checks {
        match sample(e, &xs, &ages, &ts) {
            Err(err) => report.push(&format!("{name} bounds"), false, err.to_string()),
            Ok(ex) => {
                if ex.min <= 0.0 {
                    report.push(
                        &format!("{name} bounds"),
                        false,
                        format!("{name}_min>0 violated: {name}={} at {}", ex.min, fmt_at(ex.min_at)),
                    );
                } else if ex.min < lo {
                    report.push(
                        &format!("{name} bounds"),
                        false,
                        format!("{name}={} below lower bound {lo} at {}", ex.min, fmt_at(ex.min_at)),
                    );
                } else if ex.max > hi {
                    report.push(
                        &format!("{name} bounds"),
                        false,
                        format!("{name}={} above upper bound {hi} at {}", ex.max, fmt_at(ex.max_at)),
                    );
                } else {
                    report.push(
                        &format!("{name} bounds"),
                        true,
                        format!("sampled range [{}, {}]", ex.min, ex.max),
                    );
                }
            }
        }
    }

    match sample(&p.rho_i, &xs, &ages, &ts) {
        Err(err) => report.push("rho_I range", false, err.to_string()),
        Ok(ex) => report.push(
            "rho_I range",
            ex.min >= 0.0 && ex.max <= b.m,
            format!(
                "sampled range [{}, {}] (min at {}, max at {}), M={}",
                ex.min,
                ex.max,
                fmt_at(ex.min_at),
                fmt_at(ex.max_at),
                b.m
            ),
        ),
    }
    let beyond = axis(n.a_max, 2.0 * n.a_max, na_fine);
    match sample(&p.rho_i, &xs, &beyond, &ts) {
        Err(err) => report.push("rho_I support", false, err.to_string()),
        Ok(ex) => {
            let sup = ex.max.abs().max(ex.min.abs());
            report.push(
                "rho_I support",
                sup <= n.tol_age,
                format!("sup |rho_I| on [A_max, 2 A_max] = {sup:e}"),
            );
        }
    }

    // μ_I per grid node by 4-point Gauss per age cell.
    let grid_x = axis(0.0, 1.0, n.nx);
    let da = n.delta_a;
    let mu: Result<Vec<f64>, ExprError> = par::map(n.nx, |k| {
        let x = grid_x[k];
        let mut acc = 0.0;
        for j in 0..=j_max {
            let lo = j as f64 * da;
            acc += gauss4(lo, lo + da, |a| p.rho_i.eval(x, a, 0.0))?;
        }
        Ok(acc)
    })
    .into_iter()
    .collect();
    match mu {
        Err(err) => report.push("mu_I", false, err.to_string()),
        Ok(mu) => {
            let (lo, hi) = mu
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            report.push(
                "0<mu_I<1",
                lo > 0.0 && hi < 1.0,
                format!("mu_I in [{lo}, {hi}]"),
            );
            report.push(
                "mu_I>=mu_I_min",
                lo >= b.mu_i_min,
                format!("min mu_I={lo}, mu_I_min={}", b.mu_i_min),
            );
            report.mu_i = mu;
        }
    }

    // Lipschitz-type variation of ρ_I in age, recorded only.
    if p.rho_i.depends_on(Var::A) {
        let rows: Result<Vec<Vec<f64>>, ExprError> = par::map(xs.len(), |i| {
            ages.iter().map(|&a| p.rho_i.eval(xs[i], a, 0.0)).collect()
        })
        .into_iter()
        .collect();
        if let Ok(rows) = rows {
            let mut var = 0.0;
            for m in 1..ages.len() {
                let sup = rows
                    .iter()
                    .map(|r| (r[m] - r[m - 1]).abs())
                    .fold(0.0, f64::max);
                var += sup;
            }
            report.rho_i_variation = var;
        }
    }

    check_past(p, n, &xs, &mut report);
    report
}

fn check_past(p: &ModelProblem, n: &NumericsParams, xs: &[f64], report: &mut ValidationReport) {
    if p.z_p.len() != p.d {
        report.push(
            "z_p dimension",
            false,
            format!("{} components for d={}", p.z_p.len(), p.d),
        );
        return;
    }
    let depends_t = p.z_p.iter().any(|e| e.depends_on(Var::T));
    let t_lo = -p.epsilon * n.a_max;
    let nt = if depends_t {
        REFINE * (n.j_max() + 2) + 1
    } else {
        1
    };
    let ts = axis(t_lo, 0.0, nt);
    // per x: (worst |1-|z||, at t, max time divided difference)
    let per_x: Vec<Result<(f64, f64, f64), ExprError>> = par::map(xs.len(), |i| {
        let x = xs[i];
        let mut worst = (0.0f64, 0.0f64);
        let mut lip = 0.0f64;
        let mut prev: Option<Vec<f64>> = None;
        for (m, &t) in ts.iter().enumerate() {
            let v: Vec<f64> = p
                .z_p
                .iter()
                .map(|e| e.eval(x, 0.0, t))
                .collect::<Result<_, _>>()?;
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            let dev = (norm - 1.0).abs();
            if dev > worst.0 {
                worst = (dev, t);
            }
            if let Some(pv) = &prev {
                let dt = ts[m] - ts[m - 1];
                let diff = v
                    .iter()
                    .zip(pv)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                lip = lip.max(diff / dt);
            }
            prev = Some(v);
        }
        Ok((worst.0, worst.1, lip))
    });
    let mut worst = (0.0f64, f64::NAN, f64::NAN);
    let mut lip = 0.0f64;
    for (i, r) in per_x.into_iter().enumerate() {
        match r {
            Err(err) => {
                report.push("|z_p|=1", false, err.to_string());
                return;
            }
            Ok((dev, t, l)) => {
                if dev > worst.0 || worst.1.is_nan() {
                    worst = (dev, xs[i], t);
                }
                lip = lip.max(l);
            }
        }
    }
    report.push(
        "|z_p|=1",
        worst.0 <= UNIT_NORM_TOL,
        format!("max ||z_p|-1| = {:e} at (x={}, t={})", worst.0, worst.1, worst.2),
    );
    report.zp_lipschitz = lip;
}

#[cfg(test)]
mod tests {
    use super::super::config::parse_config;
    use super::super::config::tests::MINIMAL;
    use super::*;

    fn report_for(text: &str) -> ValidationReport {
        let s = parse_config(text).unwrap();
        validate_hypotheses(&s.problem, &s.numerics)
    }

    #[test]
    fn exponential_initial_density_passes() {
        let text = MINIMAL
            .replace("zp_1 = cos(0.5*cos(pi*x))", "zp_1 = cos(0)")
            .replace("zp_2 = sin(0.5*cos(pi*x))", "zp_2 = sin(0)");
        let s = parse_config(&text).unwrap();
        let r = validate_hypotheses(&s.problem, &s.numerics);
        assert!(r.passed(), "{r}");
        let expect = 0.25 * (1.0 - (-s.numerics.a_max).exp());
        // cells cover [0, (J_max+1)Δa], slightly beyond A_max
        for mu in &r.mu_i {
            assert!((mu - expect).abs() < 1e-10, "{mu} vs {expect}");
        }
    }

    #[test]
    fn zero_beta_fails() {
        let r = report_for(&MINIMAL.replace("beta = 1\n", "beta = 0\n"));
        assert!(!r.passed());
        assert!(r.failures().any(|c| c.detail.contains("beta_min>0 violated")), "{r}");
    }

    #[test]
    fn non_unit_past_fails() {
        let r = report_for(
            &MINIMAL
                .replace("zp_1 = cos(0.5*cos(pi*x))", "zp_1 = 1")
                .replace("zp_2 = sin(0.5*cos(pi*x))", "zp_2 = 1"),
        );
        assert!(r.failures().any(|c| c.name == "|z_p|=1"), "{r}");
    }

    #[test]
    fn domain_error_fails() {
        let r = report_for(&MINIMAL.replace("zeta = 1\n", "zeta = sqrt(x - 0.5)\n"));
        assert!(r.failures().any(|c| c.name == "zeta bounds"), "{r}");
    }

    #[test]
    fn bound_relations() {
        let r = report_for(&MINIMAL.replace("mu0_min = 0.1", "mu0_min = 0.6"));
        assert!(r.failures().any(|c| c.name == "mu0_min"), "{r}");
        let r = report_for(&MINIMAL.replace("M = 2", "M = 0.5"));
        assert!(r.failures().any(|c| c.name == "M>beta_max"), "{r}");
        let r = report_for(&MINIMAL.replace("rho_I = 0.25*exp(-a)", "rho_I = 0.25"));
        assert!(r.failures().any(|c| c.name == "rho_I support"), "{r}");
    }
}
