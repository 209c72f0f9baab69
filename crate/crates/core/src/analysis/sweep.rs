use serde::Serialize;

use super::table::{is_halving, ConvergenceRow, ConvergenceTable, SweepKind};
use crate::density::{run_density_observed, ConstantRateOracle, DensityState, InitMode};
use crate::error::{Error, Result};
use crate::flow::{run_flow_observed, FlowReport, MinimizerOptions};
use crate::grid::{c0_error, yt_slab, Grids};
use crate::harmonic::{flow_sample_times, run_limit, LimitStats, LimitTrajectory};
use crate::limit_density::Rho0Solver;
use crate::model::{DaScaling, ModelProblem, NumericsParams, RunConfig, Setup, Var};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub stride: usize,
    pub mode: InitMode,
    pub da_scaling: DaScaling,
}

impl SweepOptions {
    pub fn from_run(run: &RunConfig) -> Self {
        SweepOptions {
            stride: run.stride.max(1),
            mode: run.init,
            da_scaling: run.da_scaling,
        }
    }
}

/// Δa for the i-th ε of a sweep: the configured value, or the configured
/// value scaled by ε/ε_0 with ε_0 the first (largest) entry.
pub fn member_delta_a(base: f64, eps_first: f64, eps: f64, scaling: DaScaling) -> f64 {
    match scaling {
        DaScaling::Shared => base,
        DaScaling::Proportional => base * (eps / eps_first),
    }
}

/// Invariant panel of one ε-run.
#[derive(Debug, Clone, Serialize)]
pub struct MemberPanel {
    pub epsilon: f64,
    pub delta_a: f64,
    pub delta_t: f64,
    pub n_steps: usize,
    pub j_max: usize,
    pub tol_energy: f64,
    pub max_chain_excess: f64,
    pub energy_first: f64,
    pub energy_last: f64,
    pub max_unit_deviation: f64,
    pub max_lambda: f64,
    pub min_ldotz: f64,
    pub min_rho: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub max_iterations: usize,
}

impl MemberPanel {
    fn new(g: &Grids, r: &FlowReport) -> Self {
        MemberPanel {
            epsilon: g.epsilon,
            delta_a: g.delta_a,
            delta_t: g.delta_t,
            n_steps: g.n_steps,
            j_max: g.j_max,
            tol_energy: r.tol_energy,
            max_chain_excess: r.max_chain_excess,
            energy_first: r.rows.first().map_or(f64::NAN, |row| row.energy),
            energy_last: r.rows.last().map_or(f64::NAN, |row| row.energy),
            max_unit_deviation: r.max_unit_deviation,
            max_lambda: r.max_lambda,
            min_ldotz: r.min_ldotz,
            min_rho: r.density.min_rho,
            min_s: r.density.min_s,
            max_s: r.density.max_s,
            max_iterations: r.max_iterations,
        }
    }
}

#[derive(Debug)]
pub struct EpsilonSweep {
    pub table: ConvergenceTable,
    pub panels: Vec<MemberPanel>,
    pub limit: LimitStats,
    /// The first failing member, if any; the table holds the rows before it.
    pub failure: Option<Error>,
}

/// Sorted union of sample times, merging values closer than roundoff.
fn merge_times(lists: &[Vec<f64>]) -> Vec<f64> {
    let mut all: Vec<f64> = lists.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        match out.last() {
            Some(&last) if (t - last).abs() <= 1e-12 * last.abs().max(1.0) => {}
            _ => out.push(t),
        }
    }
    out
}

fn nearest_index(times: &[f64], t: f64) -> usize {
    let i = times.partition_point(|&s| s < t);
    if i == 0 {
        0
    } else if i == times.len() || (t - times[i - 1]) <= (times[i] - t) {
        i - 1
    } else {
        i
    }
}

/// Reference ρ_0 cell averages, recomputed only when the limit rates move.
struct Rho0Reference {
    solver: Rho0Solver,
    moving: bool,
    cached: Option<Vec<f64>>,
}

impl Rho0Reference {
    fn new(p: &ModelProblem, g: &Grids) -> Self {
        let solver = Rho0Solver::new(p, g);
        let moving = solver.rates_time_dependent();
        Rho0Reference {
            solver,
            moving,
            cached: None,
        }
    }

    fn at(&mut self, t: f64) -> Result<&[f64]> {
        if self.moving || self.cached.is_none() {
            self.cached = Some(self.solver.solve(t)?.averages);
        }
        Ok(self.cached.as_deref().expect("filled above"))
    }
}

/// Accumulates Σ_n Δt yt_slab(ρ^n − ref^n) for n ≥ 0, plain and (1+a)-weighted.
#[derive(Debug, Default, Clone, Copy)]
struct YtError {
    plain: f64,
    weighted: f64,
}

impl YtError {
    fn add(&mut self, st: &DensityState, reference: &[f64], g: &Grids) {
        let diff: Vec<f64> = st.rho.iter().zip(reference).map(|(a, b)| a - b).collect();
        let (nx, cells) = (g.nx(), g.cells());
        self.plain += g.delta_t * yt_slab(&diff, nx, cells, g.delta_a, false);
        self.weighted += g.delta_t * yt_slab(&diff, nx, cells, g.delta_a, true);
    }
}

struct MemberResult {
    row: ConvergenceRow,
    panel: MemberPanel,
}

fn run_member(
    p: &ModelProblem,
    numerics: &NumericsParams,
    opts: &SweepOptions,
    limit: &LimitTrajectory,
) -> Result<MemberResult> {
    let g = Grids::new(p, numerics);
    let mopts = MinimizerOptions::from_numerics(numerics);
    let mut reference = Rho0Reference::new(p, &g);
    let mut yt = YtError::default();
    let mut ours = Vec::new();
    let mut theirs = Vec::new();
    let stride = opts.stride;
    let report = run_flow_observed(p, numerics, opts.mode, &mopts, |s| {
        let r0 = reference.at(s.t)?;
        yt.add(s.density, r0, &g);
        if s.n % stride == 0 || s.n == g.n_steps {
            let i = nearest_index(&limit.times, s.t);
            ours.push(s.z.clone());
            theirs.push(limit.frames[i].clone());
        }
        Ok(())
    })?;
    let mut row = ConvergenceRow::new(g.epsilon, g.delta_a, g.delta_t);
    row.err_z_c0 = c0_error(&ours, &theirs)?;
    row.err_rho = yt.plain;
    row.err_rho_weighted = yt.weighted;
    row.lambda_l1_sup = report.sup_lambda_l1;
    row.ldotz_l1 = report.ldotz_l1_xt;
    row.h1_time_sum = report.h1_time_sum;
    Ok(MemberResult {
        row,
        panel: MemberPanel::new(&g, &report),
    })
}

/// Runs the delayed flow for each ε (in parallel) against one limit run and
/// tabulates the cross-model errors and the flow's a-priori quantities.
pub fn epsilon_sweep(setup: &Setup, eps_list: &[f64], opts: &SweepOptions) -> Result<EpsilonSweep> {
    if eps_list.is_empty() {
        return Err(Error::Unsupported("empty eps_list".into()));
    }
    let members: Vec<(ModelProblem, NumericsParams)> = eps_list
        .iter()
        .map(|&eps| {
            let da = member_delta_a(setup.numerics.delta_a, eps_list[0], eps, opts.da_scaling);
            (setup.problem.with_epsilon(eps), setup.numerics.retarget(eps, da))
        })
        .collect();
    let time_lists: Vec<Vec<f64>> = members
        .iter()
        .map(|(p, n)| flow_sample_times(p, n, opts.stride))
        .collect();
    let times = merge_times(&time_lists);
    let finest = &members.last().expect("non-empty").1;
    let limit = run_limit(&setup.problem, finest, &times)?;

    let results = par::map(members.len(), |i| run_member(&members[i].0, &members[i].1, opts, &limit));
    let mut table = ConvergenceTable::new(SweepKind::Epsilon);
    let mut panels = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(m) => {
                table.rows.push(m.row);
                panels.push(m.panel);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    table.compute_orders();
    Ok(EpsilonSweep {
        table,
        panels,
        limit: limit.stats,
        failure,
    })
}

#[derive(Debug)]
pub struct DeltaASweep {
    pub table: ConvergenceTable,
    /// Every row has Δt = εΔa exactly, and Δt halves whenever Δa does.
    pub cfl_locked: bool,
    pub failure: Option<Error>,
}

/// The oracle for constant β, ζ and ρ_I = c e^{−ζa}.
pub fn constant_rate_oracle(p: &ModelProblem, a_max: f64) -> Result<ConstantRateOracle> {
    let unsupported = || Error::Unsupported("oracle requested for non-constant rates".into());
    if !p.beta.is_constant() || !p.zeta.is_constant() {
        return Err(unsupported());
    }
    let beta = p.beta.eval(0.0, 0.0, 0.0)?;
    let zeta = p.zeta.eval(0.0, 0.0, 0.0)?;
    let c = p.rho_i.eval(0.0, 0.0, 0.0)?;
    for &x in &[0.0, 0.37, 1.0] {
        for &a in &[0.0, 0.5, 1.3, 4.0] {
            let v = p.rho_i.eval(x, a, 0.0)?;
            let expect = c * (-zeta * a).exp();
            if (v - expect).abs() > 1e-12 * c.abs().max(1e-300) {
                return Err(Error::Unsupported(
                    "oracle needs rho_I = c*exp(-zeta*a) with constant c".into(),
                ));
            }
        }
    }
    Ok(ConstantRateOracle {
        beta,
        zeta,
        c,
        epsilon: p.epsilon,
        a_max,
    })
}

fn refinement_member(p: &ModelProblem, numerics: &NumericsParams, mode: InitMode) -> Result<ConvergenceRow> {
    let g = Grids::new(p, numerics);
    let cells = g.cells();
    let oracle = constant_rate_oracle(p, cells as f64 * g.delta_a)?;
    let mut steady: Option<Vec<f64>> = None;
    let mut yt = YtError::default();
    run_density_observed(p, &g, mode, |st, _| {
        if st.n < 0 {
            if mode == InitMode::DiscreteSteady {
                steady = Some(st.rho.clone());
            }
            return Ok(());
        }
        let reference = match &steady {
            Some(r) => r.clone(),
            None => {
                let col = oracle.cell_averages(g.delta_a, cells, g.time(st.n));
                col.iter().cycle().take(g.nx() * cells).copied().collect()
            }
        };
        yt.add(st, &reference, &g);
        Ok(())
    })?;
    let mut row = ConvergenceRow::new(g.delta_a, g.delta_a, g.delta_t);
    row.err_rho = yt.plain;
    row.err_rho_weighted = yt.weighted;
    Ok(row)
}

/// Density-only refinement in Δa at fixed ε against the constant-rate
/// oracle (or, for `discrete_steady`, against the scheme's own fixed point).
pub fn delta_a_refinement(setup: &Setup, da_list: &[f64], mode: InitMode) -> Result<DeltaASweep> {
    if da_list.is_empty() {
        return Err(Error::Unsupported("empty da_list".into()));
    }
    let p = &setup.problem;
    constant_rate_oracle(p, setup.numerics.a_max)?;
    if p.rho_i.depends_on(Var::T) {
        return Err(Error::Unsupported("rho_I must not depend on t".into()));
    }
    let results = par::map(da_list.len(), |i| {
        refinement_member(p, &setup.numerics.retarget(p.epsilon, da_list[i]), mode)
    });
    let mut table = ConvergenceTable::new(SweepKind::DeltaA);
    let mut failure = None;
    for r in results {
        match r {
            Ok(row) => table.rows.push(row),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    table.compute_orders();
    let cfl_locked = table.rows.iter().all(|r| r.delta_t == p.epsilon * r.delta_a)
        && table
            .rows
            .windows(2)
            .all(|w| !is_halving(w[0].delta_a, w[1].delta_a) || is_halving(w[0].delta_t, w[1].delta_t));
    Ok(DeltaASweep {
        table,
        cfl_locked,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::tests::setup;

    #[test]
    fn time_union_merges_roundoff_duplicates() {
        let a = vec![0.0, 0.1, 0.2];
        let b = vec![0.0, 0.05, 0.1 + 1e-17, 0.15, 0.2];
        let u = merge_times(&[a, b]);
        assert_eq!(u, vec![0.0, 0.05, 0.1, 0.15, 0.2]);
        assert_eq!(nearest_index(&u, 0.1 + 1e-17), 2);
        assert_eq!(nearest_index(&u, 0.2), 4);
    }

    #[test]
    fn proportional_delta_a() {
        assert_eq!(member_delta_a(0.04, 0.2, 0.05, DaScaling::Proportional), 0.01);
        assert_eq!(member_delta_a(0.04, 0.2, 0.05, DaScaling::Shared), 0.04);
    }

    #[test]
    fn oracle_requires_constant_rates() {
        let s = setup(&[("beta", "1+0.5*sin(2*pi*t)")], 0.05, 5);
        let err = constant_rate_oracle(&s.problem, 10.0).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        let s = setup(&[("rho_I", "0.25*exp(-2*a)")], 0.05, 5);
        assert!(constant_rate_oracle(&s.problem, 10.0).is_err());
        let s = setup(&[], 0.05, 5);
        assert!(constant_rate_oracle(&s.problem, 10.0).is_ok());
    }

    #[test]
    fn discrete_steady_refinement_is_exact() {
        let mut s = setup(&[("T", "0.2"), ("epsilon", "0.1")], 0.04, 5);
        s.problem.horizon = 0.2;
        let out = delta_a_refinement(&s, &[0.04, 0.02], InitMode::DiscreteSteady).unwrap();
        assert!(out.failure.is_none());
        assert!(out.cfl_locked);
        for r in &out.table.rows {
            assert!(r.err_rho <= 1e-12, "{r:?}");
        }
        assert!(out.table.rows[1].order_rho.is_nan());
    }
}
