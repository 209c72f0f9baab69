//! The ε-level bond density: upwind transport in age, implicit off-rate and
//! a nonlocal saturation boundary at age zero.
//!
//! Slabs are stored column by column: `rho[k * cells + j]` is ρ_j(x_k).

use crate::error::{Error, Result};
use crate::grid::{Grids, SpaceGrid};
use crate::model::{ModelProblem, RateExpr, Var};
use crate::par;
use crate::quad::gauss4_mean;

/// How ρ^{-1} is built from the problem data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Cell averages of ρ_I.
    CellAverage,
    /// The scheme's own fixed point; requires rates independent of a and t.
    DiscreteSteady,
}

pub const RHO_FLOOR: f64 = -1e-14;
pub const S_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub n: i64,
    pub cells: usize,
    pub rho: Vec<f64>,
    /// s(x_k) = Δa Σ_j ρ_j(x_k).
    pub s: Vec<f64>,
}

impl DensityState {
    pub fn zeros(n: i64, nx: usize, cells: usize) -> DensityState {
        DensityState {
            n,
            cells,
            rho: vec![0.0; nx * cells],
            s: vec![0.0; nx],
        }
    }

    pub fn nx(&self) -> usize {
        self.s.len()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.rho[k * self.cells..(k + 1) * self.cells]
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.rho[k * self.cells + j]
    }

    pub fn recompute_moment(&mut self, delta_a: f64) {
        let cells = self.cells;
        for (k, s) in self.s.iter_mut().enumerate() {
            *s = delta_a * self.rho[k * cells..(k + 1) * cells].iter().sum::<f64>();
        }
    }
}

/// β(x_k, t) and ζ(x_k, a_j, t) tabulated at one time level; re-evaluated
/// only when an expression reads t.
#[derive(Debug, Clone)]
pub struct RateTable {
    beta_expr: RateExpr,
    zeta_expr: RateExpr,
    x: Vec<f64>,
    delta_a: f64,
    cells: usize,
    t: Option<f64>,
    pub beta: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl RateTable {
    pub fn new(beta: &RateExpr, zeta: &RateExpr, space: &SpaceGrid, delta_a: f64, cells: usize) -> Self {
        RateTable {
            beta_expr: beta.clone(),
            zeta_expr: zeta.clone(),
            x: space.x.clone(),
            delta_a,
            cells,
            t: None,
            beta: vec![0.0; space.nx],
            zeta: vec![0.0; space.nx * cells],
        }
    }

    pub fn time_dependent(&self) -> bool {
        self.beta_expr.depends_on(Var::T) || self.zeta_expr.depends_on(Var::T)
    }

    /// Brings the tables to time `t`.
    pub fn at(&mut self, t: f64) -> Result<()> {
        if let Some(t0) = self.t {
            if t0 == t || !self.time_dependent() {
                return Ok(());
            }
        }
        let (x, da, cells) = (&self.x, self.delta_a, self.cells);
        for (k, b) in self.beta.iter_mut().enumerate() {
            *b = self.beta_expr.eval(x[k], 0.0, t)?;
        }
        let zeta = &self.zeta_expr;
        let by_age = zeta.depends_on(Var::A);
        let results = par::chunks_mut(&mut self.zeta, cells, |k, col| -> Result<()> {
            if by_age {
                for (j, v) in col.iter_mut().enumerate() {
                    *v = zeta.eval(x[k], j as f64 * da, t)?;
                }
            } else {
                col.fill(zeta.eval(x[k], 0.0, t)?);
            }
            Ok(())
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
        self.t = Some(t);
        Ok(())
    }
}

/// Builds ρ^{-1}.
pub fn init_density(p: &ModelProblem, g: &Grids, mode: InitMode) -> Result<DensityState> {
    let cells = g.cells();
    let nx = g.nx();
    let da = g.delta_a;
    let mut st = DensityState::zeros(-1, nx, cells);
    match mode {
        InitMode::CellAverage => {
            let x = &g.space.x;
            let rho_i = &p.rho_i;
            let res = par::chunks_mut(&mut st.rho, cells, |k, col| -> Result<()> {
                for (j, v) in col.iter_mut().enumerate() {
                    let lo = j as f64 * da;
                    *v = gauss4_mean(lo, lo + da, |a| rho_i.eval(x[k], a, 0.0))?;
                }
                Ok(())
            });
            res.into_iter().collect::<Result<Vec<()>>>()?;
        }
        InitMode::DiscreteSteady => {
            if p.beta.depends_on(Var::T) || p.zeta.depends_on(Var::T) || p.zeta.depends_on(Var::A) {
                return Err(Error::Unsupported(
                    "discrete_steady initial data needs beta independent of t and zeta independent of a and t".into(),
                ));
            }
            for k in 0..nx {
                let x = g.space.x[k];
                let beta = p.beta.eval(x, 0.0, 0.0)?;
                let zeta = p.zeta.eval(x, 0.0, 0.0)?;
                let alpha = 1.0 / (1.0 + da * zeta);
                // fixed point of the truncated scheme: the boundary sees
                // only cells 1..=J_max, so the geometric tail is cut there
                let mut tail = 0.0;
                let mut pw = 1.0;
                for _ in 1..cells {
                    pw *= alpha;
                    tail += pw;
                }
                let mut v = beta / (1.0 + da * (beta + zeta) + beta * da * tail);
                for r in &mut st.rho[k * cells..(k + 1) * cells] {
                    *r = v;
                    v *= alpha;
                }
            }
        }
    }
    st.recompute_moment(da);
    Ok(st)
}

/// Per-step bookkeeping returned by [`DensityStepper::advance`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    /// max_k ρ^n_{J_max}(x_k), the mass leaving the age grid.
    pub outflow: f64,
    /// Max over x of the moment-recursion residual.
    pub residual: f64,
}

/// One column update in place; returns (s^{n+1}, ρ^n_J, residual).
fn step_column(col: &mut [f64], zeta: &[f64], beta: f64, s_prev: f64, da: f64) -> (f64, f64, f64) {
    let cells = col.len();
    let outflow = col[cells - 1];
    for j in (1..cells).rev() {
        col[j] = col[j - 1] / (1.0 + da * zeta[j]);
    }
    let interior: f64 = col[1..].iter().sum();
    col[0] = beta / (1.0 + da * (beta + zeta[0])) * (1.0 - da * interior);
    let s = da * col.iter().sum::<f64>();
    let loss: f64 = col.iter().zip(zeta).map(|(r, z)| z * r).sum();
    let residual = s + da * da * loss - (s_prev - da * outflow) - da * beta * (1.0 - s);
    (s, outflow, residual.abs())
}

/// Advances a density state in place with cached rate tables.
#[derive(Debug, Clone)]
pub struct DensityStepper {
    pub grids: Grids,
    pub rates: RateTable,
    pub state: DensityState,
}

impl DensityStepper {
    pub fn new(p: &ModelProblem, g: &Grids, mode: InitMode) -> Result<Self> {
        Ok(DensityStepper {
            grids: g.clone(),
            rates: RateTable::new(&p.beta, &p.zeta, &g.space, g.delta_a, g.cells()),
            state: init_density(p, g, mode)?,
        })
    }

    pub fn from_state(p: &ModelProblem, g: &Grids, state: DensityState) -> Self {
        DensityStepper {
            grids: g.clone(),
            rates: RateTable::new(&p.beta, &p.zeta, &g.space, g.delta_a, g.cells()),
            state,
        }
    }

    /// ρ^n → ρ^{n+1}; afterwards `rates` holds β^{n+1} and ζ^{n+1}.
    pub fn advance(&mut self) -> Result<StepInfo> {
        let next = self.state.n + 1;
        self.rates.at(self.grids.time(next))?;
        let da = self.grids.delta_a;
        let cells = self.state.cells;
        let (beta, zeta) = (&self.rates.beta, &self.rates.zeta);
        let s_prev = &self.state.s;
        let out = par::chunks_mut(&mut self.state.rho, cells, |k, col| {
            step_column(col, &zeta[k * cells..(k + 1) * cells], beta[k], s_prev[k], da)
        });
        let mut info = StepInfo::default();
        for (k, (s, outflow, res)) in out.into_iter().enumerate() {
            self.state.s[k] = s;
            info.outflow = info.outflow.max(outflow);
            info.residual = info.residual.max(res);
        }
        self.state.n = next;
        Ok(info)
    }
}

/// ρ^n → ρ^{n+1} for a single state.
pub fn step_density(state: &DensityState, p: &ModelProblem, g: &Grids) -> Result<DensityState> {
    let mut st = DensityStepper::from_state(p, g, state.clone());
    st.advance()?;
    Ok(st.state)
}

/// Max over x of |s^{n+1} + Δa² Σζρ^{n+1} − (s^n − Δa ρ^n_J) − Δa β (1 − s^{n+1})|.
/// The outflow term accounts for the cell leaving the truncated age grid.
pub fn zeroth_moment_residual(
    prev: &DensityState,
    next: &DensityState,
    p: &ModelProblem,
    g: &Grids,
) -> Result<f64> {
    let mut rates = RateTable::new(&p.beta, &p.zeta, &g.space, g.delta_a, g.cells());
    rates.at(g.time(next.n))?;
    let da = g.delta_a;
    let cells = g.cells();
    let mut worst = 0.0f64;
    for k in 0..g.nx() {
        let col = next.column(k);
        let zeta = &rates.zeta[k * cells..(k + 1) * cells];
        let loss: f64 = col.iter().zip(zeta).map(|(r, z)| z * r).sum();
        let outflow = prev.column(k)[cells - 1];
        let r = next.s[k] + da * da * loss - (prev.s[k] - da * outflow)
            - da * rates.beta[k] * (1.0 - next.s[k]);
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Closed-form solution for constant rates and ρ_I(a) = c e^{-ζa} on
/// [0, a_max).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRateOracle {
    pub beta: f64,
    pub zeta: f64,
    pub c: f64,
    pub epsilon: f64,
    pub a_max: f64,
}

impl ConstantRateOracle {
    pub fn mu_star(&self) -> f64 {
        self.beta / (self.beta + self.zeta)
    }

    pub fn mu_initial(&self) -> f64 {
        self.c * (-(-self.zeta * self.a_max).exp_m1()) / self.zeta
    }

    /// Zeroth moment μ(t).
    pub fn moment(&self, t: f64) -> f64 {
        let ms = self.mu_star();
        ms + (self.mu_initial() - ms) * (-(self.beta + self.zeta) * t / self.epsilon).exp()
    }

    pub fn density(&self, a: f64, t: f64) -> f64 {
        if t > self.epsilon * a {
            self.beta * (1.0 - self.moment(t - self.epsilon * a)) * (-self.zeta * a).exp()
        } else if a - t / self.epsilon < self.a_max {
            self.c * (-self.zeta * a).exp()
        } else {
            0.0
        }
    }

    /// Cell averages of the oracle at time t on cells [jΔa, (j+1)Δa).
    pub fn cell_averages(&self, delta_a: f64, cells: usize, t: f64) -> Vec<f64> {
        (0..cells)
            .map(|j| {
                let lo = j as f64 * delta_a;
                let split = t / self.epsilon;
                // the oracle has a kink on a = t/ε; integrate each side separately
                let f = |a: f64| Ok::<_, std::convert::Infallible>(self.density(a, t));
                let v = if split > lo && split < lo + delta_a {
                    let left = gauss4_mean(lo, split, f).unwrap() * (split - lo);
                    let right = gauss4_mean(split, lo + delta_a, f).unwrap() * (lo + delta_a - split);
                    (left + right) / delta_a
                } else {
                    gauss4_mean(lo, lo + delta_a, f).unwrap()
                };
                v
            })
            .collect()
    }
}

/// The oracle density with untruncated initial data.
pub fn analytic_constant_rate_density(beta: f64, zeta: f64, c: f64, epsilon: f64, a: f64, t: f64) -> f64 {
    ConstantRateOracle {
        beta,
        zeta,
        c,
        epsilon,
        a_max: f64::INFINITY,
    }
    .density(a, t)
}

/// Extremes and self-checks accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DensityStats {
    pub min_rho: f64,
    pub max_rho: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub max_residual: f64,
    /// Σ_n Δt Δa max_k ρ^n_{J_max}.
    pub discarded_mass: f64,
}

impl Default for DensityStats {
    fn default() -> Self {
        DensityStats {
            min_rho: f64::INFINITY,
            max_rho: f64::NEG_INFINITY,
            min_s: f64::INFINITY,
            max_s: f64::NEG_INFINITY,
            max_residual: 0.0,
            discarded_mass: 0.0,
        }
    }
}

impl DensityStats {
    /// Folds a state into the extremes; negative density or a moment outside
    /// [0, 1] beyond roundoff is an error naming the offending entry.
    pub fn observe(&mut self, st: &DensityState) -> Result<()> {
        let cells = st.cells;
        for (idx, &r) in st.rho.iter().enumerate() {
            if r < RHO_FLOOR || !r.is_finite() {
                return Err(Error::Invariant {
                    what: format!("rho = {r:e} < 0"),
                    n: st.n,
                    j: Some(idx % cells),
                    k: idx / cells,
                });
            }
            self.min_rho = self.min_rho.min(r);
            self.max_rho = self.max_rho.max(r);
        }
        for (k, &s) in st.s.iter().enumerate() {
            if !(-S_SLACK..=1.0 + S_SLACK).contains(&s) {
                return Err(Error::Invariant {
                    what: format!("s = {s} outside [0, 1]"),
                    n: st.n,
                    j: None,
                    k,
                });
            }
            self.min_s = self.min_s.min(s);
            self.max_s = self.max_s.max(s);
        }
        Ok(())
    }

    /// Records the residual and outflow of a completed step.
    pub fn record_step(&mut self, info: &StepInfo, g: &Grids) {
        self.max_residual = self.max_residual.max(info.residual);
        self.discarded_mass += g.delta_t * g.delta_a * info.outflow;
    }
}

#[derive(Debug, Clone)]
pub struct DensityTrajectory {
    pub grids: Grids,
    pub stride: usize,
    /// ρ^{-1} and every ρ^n with n a multiple of `stride`.
    pub slabs: Vec<DensityState>,
    /// s^n for n = −1..=N.
    pub moments: Vec<Vec<f64>>,
    pub stats: DensityStats,
}

impl DensityTrajectory {
    /// Moment at time index n ≥ −1.
    pub fn moment(&self, n: i64) -> &[f64] {
        &self.moments[(n + 1) as usize]
    }
}

/// Runs the scheme to n = N, streaming every state (including ρ^{-1}) to
/// `observer` after the invariants have been checked.
pub fn run_density_observed(
    p: &ModelProblem,
    g: &Grids,
    mode: InitMode,
    mut observer: impl FnMut(&DensityState, &RateTable) -> Result<()>,
) -> Result<DensityStats> {
    let mut stepper = DensityStepper::new(p, g, mode)?;
    let mut stats = DensityStats::default();
    stats.observe(&stepper.state)?;
    observer(&stepper.state, &stepper.rates)?;
    for _ in 0..=g.n_steps {
        let info = stepper.advance()?;
        stats.observe(&stepper.state)?;
        stats.record_step(&info, g);
        observer(&stepper.state, &stepper.rates)?;
    }
    Ok(stats)
}

/// Runs the scheme and keeps every `stride`-th slab.
pub fn run_density(p: &ModelProblem, g: &Grids, mode: InitMode, stride: usize) -> Result<DensityTrajectory> {
    let stride = stride.max(1);
    let mut slabs = Vec::new();
    let mut moments = Vec::with_capacity(g.n_steps + 2);
    let stats = run_density_observed(p, g, mode, |st, _| {
        if st.n < 0 || st.n as usize % stride == 0 {
            slabs.push(st.clone());
        }
        moments.push(st.s.clone());
        Ok(())
    })?;
    Ok(DensityTrajectory {
        grids: g.clone(),
        stride,
        slabs,
        moments,
        stats,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{parse_config, NumericsParams, Setup};

    pub(crate) fn setup(model: &[(&str, &str)], delta_a: f64, nx: usize) -> Setup {
        let mut keys: Vec<(String, String)> = [
            ("beta", "1"),
            ("zeta", "1"),
            ("beta0", "1"),
            ("zeta0", "1"),
            ("rho_I", "0.25*exp(-a)"),
            ("zp_1", "1"),
            ("zp_2", "0"),
            ("d", "2"),
            ("epsilon", "0.05"),
            ("T", "1"),
            ("beta_min", "1"),
            ("beta_max", "1"),
            ("zeta_min", "1"),
            ("zeta_max", "1"),
            ("M", "2"),
            ("mu_I_min", "0.2"),
            ("mu0_min", "0.1"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        for (k, v) in model {
            match keys.iter_mut().find(|(kk, _)| kk == k) {
                Some(e) => e.1 = v.to_string(),
                None => keys.push((k.to_string(), v.to_string())),
            }
        }
        let mut text = String::from("[model]\n");
        for (k, v) in keys {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str(&format!("[numerics]\ndelta_a = {delta_a}\nNx = {nx}\n"));
        parse_config(&text).unwrap()
    }

    fn grids(s: &Setup) -> Grids {
        Grids::new(&s.problem, &s.numerics)
    }

    #[test]
    fn cell_average_of_indicator() {
        let s = setup(&[("rho_I", "0.3*min(1, max(0, (1 - a)*1e9))")], 0.125, 3);
        let mut s = s;
        s.numerics = NumericsParams::new(0.05, 0.125, 3, Some(3.0), 1e-12, &s.problem.bounds);
        let st = init_density(&s.problem, &grids(&s), InitMode::CellAverage).unwrap();
        for j in 0..8 {
            assert!((st.get(j, 1) - 0.3).abs() < 1e-15);
        }
        for j in 8..st.cells {
            assert!(st.get(j, 1).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_average_of_exponential() {
        let s = setup(&[("rho_I", "exp(-a)"), ("M", "2")], 0.02, 5);
        let st = init_density(&s.problem, &grids(&s), InitMode::CellAverage).unwrap();
        let expect = -(-0.02f64).exp_m1() / 0.02;
        assert!((st.get(0, 2) - expect).abs() < 1e-15);
    }

    #[test]
    fn discrete_steady_state() {
        let s = setup(&[], 0.02, 5);
        let g = grids(&s);
        let st = init_density(&s.problem, &g, InitMode::DiscreteSteady).unwrap();
        for &v in &st.s {
            assert!((v - 0.5).abs() < 1e-13, "{v}");
        }
        let next = step_density(&st, &s.problem, &g).unwrap();
        for (a, b) in st.rho.iter().zip(&next.rho) {
            assert!((a - b).abs() <= 1e-15, "{a} {b}");
        }
        assert!(zeroth_moment_residual(&st, &next, &s.problem, &g).unwrap() <= 1e-15);
        let s = setup(&[("zeta", "1 + 0.1*t"), ("zeta_max", "2")], 0.02, 5);
        assert!(matches!(
            init_density(&s.problem, &grids(&s), InitMode::DiscreteSteady),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn empty_density_fills_boundary() {
        let s = setup(&[], 0.1, 3);
        let g = grids(&s);
        let empty = DensityState::zeros(0, 3, g.cells());
        let next = step_density(&empty, &s.problem, &g).unwrap();
        assert!((next.get(0, 0) - 1.0 / 1.2).abs() < 1e-15);
        assert!(next.column(0)[1..].iter().all(|v| *v == 0.0));
        assert!(zeroth_moment_residual(&empty, &next, &s.problem, &g).unwrap() <= 1e-15);
    }

    #[test]
    fn moment_identity_on_variable_rates() {
        let s = setup(
            &[
                ("beta", "1 + 0.5*sin(2*pi*t)*x"),
                ("zeta", "1 + 0.5*a/(1+a) + 0.2*cos(t)"),
                ("beta_max", "1.5"),
                ("beta_min", "0.5"),
                ("zeta_max", "1.7"),
                ("M", "2"),
            ],
            0.02,
            9,
        );
        let g = grids(&s);
        let mut st = init_density(&s.problem, &g, InitMode::CellAverage).unwrap();
        for _ in 0..20 {
            let next = step_density(&st, &s.problem, &g).unwrap();
            let r = zeroth_moment_residual(&st, &next, &s.problem, &g).unwrap();
            assert!(r <= 1e-13, "{r}");
            st = next;
        }
    }

    #[test]
    fn oracle_examples() {
        let v = analytic_constant_rate_density(1.0, 1.0, 0.25, 0.05, 0.0, 50.0);
        assert!((v - 0.5).abs() < 1e-15);
        for a in [0.0, 0.3, 2.0] {
            assert_eq!(analytic_constant_rate_density(1.0, 1.0, 0.25, 0.05, a, 0.0), 0.25 * (-a as f64).exp());
        }
        let o = ConstantRateOracle {
            beta: 1.0,
            zeta: 1.0,
            c: 0.5,
            epsilon: 0.1,
            a_max: f64::INFINITY,
        };
        for t in [0.0, 0.01, 0.3] {
            assert!((o.moment(t) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_run_keeps_invariants() {
        let s = setup(&[], 0.02, 5);
        let mut s = s;
        s.problem.horizon = 0.2;
        let g = grids(&s);
        let traj = run_density(&s.problem, &g, InitMode::CellAverage, 50).unwrap();
        assert!(traj.stats.min_rho >= RHO_FLOOR);
        assert!(traj.stats.min_s > 0.1);
        assert!(traj.stats.max_residual <= 1e-13, "{}", traj.stats.max_residual);
        assert_eq!(traj.moments.len(), g.n_steps + 2);
        assert_eq!(traj.slabs[0].n, -1);
        assert!(traj.slabs.iter().skip(1).all(|s| s.n % 50 == 0));
    }
}
