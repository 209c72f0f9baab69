//! Problem data, numerical parameters and the load-time hypothesis checks.

mod config;
pub mod expr;
mod validate;

pub use config::{load_problem, parse_config, ConfigError, DaScaling, RunConfig, Setup};
pub use expr::{eval_expr, parse_rate_expression, ExprError, RateExpr, Var};
pub use validate::{validate_hypotheses, Check, ValidationReport, UNIT_NORM_TOL};

/// Constants bounding the rates and the initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub beta_min: f64,
    pub beta_max: f64,
    pub zeta_min: f64,
    pub zeta_max: f64,
    /// Upper bound for the initial density, required to exceed `beta_max`.
    pub m: f64,
    pub mu_i_min: f64,
    pub mu0_min: f64,
}

/// Continuous problem data. Rates are given for the current `epsilon`
/// (`beta`, `zeta`) and for the limit problem (`beta0`, `zeta0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProblem {
    pub beta: RateExpr,
    pub zeta: RateExpr,
    pub beta0: RateExpr,
    pub zeta0: RateExpr,
    pub rho_i: RateExpr,
    /// Past positions for t ≤ 0, one expression per component.
    pub z_p: Vec<RateExpr>,
    pub d: usize,
    pub epsilon: f64,
    pub horizon: f64,
    pub bounds: Bounds,
}

impl ModelProblem {
    pub fn with_epsilon(&self, epsilon: f64) -> ModelProblem {
        ModelProblem {
            epsilon,
            ..self.clone()
        }
    }

    /// Rates that do not depend on age or time, i.e. the setting of the
    /// closed-form oracles.
    pub fn has_stationary_rates(&self) -> bool {
        !self.beta.depends_on(Var::T)
            && !self.zeta.depends_on(Var::T)
            && !self.zeta.depends_on(Var::A)
    }
}

/// Discretisation parameters. `delta_t` is never read from input: it is
/// always `epsilon * delta_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericsParams {
    pub delta_a: f64,
    pub nx: usize,
    pub a_max: f64,
    pub tol_age: f64,
    pub tol_grad: f64,
    pub max_inner: usize,
    pub limit_dt_safety: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    delta_t: f64,
}

pub const DEFAULT_TOL_AGE: f64 = 1e-12;
pub const DEFAULT_TOL_GRAD: f64 = 1e-10;
pub const DEFAULT_MAX_INNER: usize = 10_000;
pub const DEFAULT_LIMIT_DT_SAFETY: f64 = 0.4;
pub const DEFAULT_ARMIJO_C: f64 = 1e-4;
pub const DEFAULT_BACKTRACK: f64 = 0.5;

impl NumericsParams {
    /// Builds the parameter record for a given `epsilon`. When `a_max` is
    /// `None` the truncation age is the smallest value satisfying the
    /// exponential-tail rule for `tol_age`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        epsilon: f64,
        delta_a: f64,
        nx: usize,
        a_max: Option<f64>,
        tol_age: f64,
        bounds: &Bounds,
    ) -> NumericsParams {
        let a_max = a_max.unwrap_or_else(|| tail_rule_age(bounds, tol_age));
        NumericsParams {
            delta_a,
            nx,
            a_max,
            tol_age,
            tol_grad: DEFAULT_TOL_GRAD,
            max_inner: DEFAULT_MAX_INNER,
            limit_dt_safety: DEFAULT_LIMIT_DT_SAFETY,
            armijo_c: DEFAULT_ARMIJO_C,
            backtrack: DEFAULT_BACKTRACK,
            delta_t: epsilon * delta_a,
        }
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn delta_x(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    /// Number of the last age cell: cells are `0..=j_max`.
    pub fn j_max(&self) -> usize {
        (self.a_max / self.delta_a).ceil() as usize
    }

    /// Same parameters at another `(epsilon, delta_a)` pair; the CFL lock is
    /// re-derived.
    pub fn retarget(&self, epsilon: f64, delta_a: f64) -> NumericsParams {
        NumericsParams {
            delta_a,
            delta_t: epsilon * delta_a,
            ..self.clone()
        }
    }

    pub fn with_nx(&self, nx: usize) -> NumericsParams {
        NumericsParams { nx, ..self.clone() }
    }
}

/// `beta_max (1 + A) exp(-zeta_min A) / zeta_min`: bound on the density mass
/// beyond age `A`.
pub fn tail_bound(bounds: &Bounds, age: f64) -> f64 {
    bounds.beta_max * (1.0 + age) * (-bounds.zeta_min * age).exp() / bounds.zeta_min
}

fn tail_rule_age(bounds: &Bounds, tol_age: f64) -> f64 {
    if !(bounds.beta_max > 0.0 && bounds.zeta_min > 0.0 && tol_age > 0.0) {
        return 1.0;
    }
    // the bound decreases for A > 1/zeta_min - 1
    let mut lo = (1.0 / bounds.zeta_min - 1.0).max(0.0);
    if tail_bound(bounds, lo) < tol_age {
        return lo;
    }
    let mut hi = lo + 1.0;
    while tail_bound(bounds, hi) >= tol_age {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tail_bound(bounds, mid) < tol_age {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_bounds() -> Bounds {
        Bounds {
            beta_min: 1.0,
            beta_max: 1.0,
            zeta_min: 1.0,
            zeta_max: 1.0,
            m: 2.0,
            mu_i_min: 0.2,
            mu0_min: 0.1,
        }
    }

    #[test]
    fn cfl_lock() {
        let n = NumericsParams::new(0.05, 0.02, 65, None, 1e-12, &unit_bounds());
        assert_eq!(n.delta_t(), 0.05 * 0.02);
        assert_eq!(n.delta_t(), 0.001);
        let m = n.retarget(0.025, 0.01);
        assert_eq!(m.delta_t(), 0.025 * 0.01);
    }

    #[test]
    fn tail_rule() {
        let b = unit_bounds();
        let n = NumericsParams::new(0.05, 0.02, 65, None, 1e-10, &b);
        assert!(tail_bound(&b, n.a_max) < 1e-10);
        assert!(tail_bound(&b, n.a_max - 0.01) >= 1e-10);
        assert!(n.a_max > 26.0 && n.a_max < 27.0, "{}", n.a_max);
        assert_eq!(n.j_max(), (n.a_max / 0.02).ceil() as usize);
    }
}
