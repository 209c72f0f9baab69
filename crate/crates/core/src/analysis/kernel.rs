use serde::Serialize;

use super::sweep::{member_delta_a, SweepOptions};
use crate::density::{run_density_observed, DensityState, DensityTrajectory, InitMode};
use crate::error::{Error, Result};
use crate::grid::Grids;
use crate::limit_density::Rho0Solver;
use crate::model::{ModelProblem, NumericsParams, RateExpr, Setup, Var};
use crate::par;

/// Test function sampled at cell centres, tabulated when it ignores t.
struct Psi<'a> {
    expr: &'a RateExpr,
    table: Option<Vec<f64>>,
    cells: usize,
}

impl<'a> Psi<'a> {
    fn new(expr: &'a RateExpr, g: &Grids) -> Result<Self> {
        let cells = g.cells();
        let table = if expr.depends_on(Var::T) {
            None
        } else {
            let mut t = Vec::with_capacity(g.nx() * cells);
            for k in 0..g.nx() {
                for j in 0..cells {
                    t.push(expr.eval(g.space.x[k], (j as f64 + 0.5) * g.delta_a, 0.0)?);
                }
            }
            Some(t)
        };
        Ok(Psi { expr, table, cells })
    }

    fn at(&self, g: &Grids, k: usize, j: usize, n: usize) -> Result<f64> {
        match &self.table {
            Some(t) => Ok(t[k * self.cells + j]),
            None => Ok(self
                .expr
                .eval(g.space.x[k], (j as f64 + 0.5) * g.delta_a, g.time(n as i64))?),
        }
    }
}

/// Streams Σ_{n+j ≤ N} ψ(x_k, a_j, t_n)(ρ^{n+j}_j − ρ^n_j)(x_k)/ε w_k Δa Δt:
/// the state ρ^m enters once as ρ^{n+j} (n = m − j) and once as ρ^n.
struct KernelAccumulator<'a> {
    g: &'a Grids,
    psi: Psi<'a>,
    sum: f64,
}

impl<'a> KernelAccumulator<'a> {
    fn add(&mut self, st: &DensityState) -> Result<()> {
        let g = self.g;
        let m = st.n as usize;
        let n_max = g.n_steps;
        let cells = g.cells();
        let mut acc = 0.0;
        for k in 0..g.nx() {
            let col = st.column(k);
            let mut inner = 0.0;
            // j = 0 cancels between the two sums
            for j in 1..=m.min(cells - 1) {
                inner += self.psi.at(g, k, j, m - j)? * col[j];
            }
            for j in 1..=(n_max - m).min(cells - 1) {
                inner -= self.psi.at(g, k, j, m)? * col[j];
            }
            acc += g.space.weights[k] * inner;
        }
        self.sum += acc * g.delta_a * g.delta_t / g.epsilon;
        Ok(())
    }
}

/// K_ε integral over the discrete region {t_n + εa_j ≤ T}. Every step must
/// be stored: the region pairs ρ^n with ρ^{n+j} exactly.
pub fn transposed_kernel(traj: &DensityTrajectory, psi: &RateExpr) -> Result<f64> {
    if traj.stride != 1 {
        return Err(Error::Unsupported(format!(
            "transposed kernel needs every step; stride is {}",
            traj.stride
        )));
    }
    let mut acc = KernelAccumulator {
        g: &traj.grids,
        psi: Psi::new(psi, &traj.grids)?,
        sum: 0.0,
    };
    for slab in traj.slabs.iter().filter(|s| s.n >= 0) {
        acc.add(slab)?;
    }
    Ok(acc.sum)
}

/// Same value without storing the trajectory.
pub fn transposed_kernel_run(p: &ModelProblem, numerics: &NumericsParams, mode: InitMode, psi: &RateExpr) -> Result<f64> {
    let g = Grids::new(p, numerics);
    let mut acc = KernelAccumulator {
        g: &g,
        psi: Psi::new(psi, &g)?,
        sum: 0.0,
    };
    run_density_observed(p, &g, mode, |st, _| if st.n >= 0 { acc.add(st) } else { Ok(()) })?;
    Ok(acc.sum)
}

/// ∫_0^T ∫ ∫ a ψ ∂_t ρ_0 dx da dt with centred differences of ρ_0 over
/// `time_steps` intervals and ψ, a at the interval and cell midpoints.
pub fn limit_kernel_integral(p: &ModelProblem, numerics: &NumericsParams, psi: &RateExpr, time_steps: usize) -> Result<f64> {
    let g = Grids::new(p, numerics);
    let cells = g.cells();
    let mut solver = Rho0Solver::new(p, &g);
    let h = p.horizon / time_steps as f64;
    let mut prev = solver.solve(0.0)?.averages;
    let mut total = 0.0;
    for m in 0..time_steps {
        let next = solver.solve((m + 1) as f64 * h)?.averages;
        let tm = (m as f64 + 0.5) * h;
        let mut acc = 0.0;
        for k in 0..g.nx() {
            let x = g.space.x[k];
            let mut inner = 0.0;
            for j in 0..cells {
                let a = (j as f64 + 0.5) * g.delta_a;
                let i = k * cells + j;
                inner += a * psi.eval(x, a, tm)? * (next[i] - prev[i]);
            }
            acc += g.space.weights[k] * inner;
        }
        total += acc * g.delta_a;
        prev = next;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelRow {
    pub epsilon: f64,
    pub delta_a: f64,
    pub delta_t: f64,
    pub kernel: f64,
    pub limit: f64,
    /// |kernel − limit|.
    pub gap: f64,
    /// Previous row's gap over this one (NaN on the first row).
    pub gap_ratio: f64,
}

pub const KERNEL_HEADER: [&str; 7] = ["epsilon", "delta_a", "delta_t", "kernel", "limit", "gap", "gap_ratio"];

#[derive(Debug)]
pub struct KernelSweep {
    pub rows: Vec<KernelRow>,
    pub limit: f64,
    /// True when no rate depends on t, so ∂_t ρ vanishes for well-prepared
    /// data.
    pub stationary: bool,
    pub failure: Option<Error>,
}

/// Time intervals for the limit integral.
pub const LIMIT_KERNEL_STEPS: usize = 400;

/// K_ε for each ε against the limit integral computed once on the finest
/// member's age grid.
pub fn kernel_sweep(setup: &Setup, eps_list: &[f64], psi: &RateExpr, opts: &SweepOptions) -> Result<KernelSweep> {
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
    let finest = &members.last().expect("non-empty").1;
    let limit = limit_kernel_integral(&setup.problem, finest, psi, LIMIT_KERNEL_STEPS)?;
    let results = par::map(members.len(), |i| {
        transposed_kernel_run(&members[i].0, &members[i].1, opts.mode, psi)
    });
    let mut rows: Vec<KernelRow> = Vec::new();
    let mut failure = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(kernel) => {
                let (p, n) = &members[i];
                let gap = (kernel - limit).abs();
                let gap_ratio = rows.last().map_or(f64::NAN, |prev| prev.gap / gap);
                rows.push(KernelRow {
                    epsilon: p.epsilon,
                    delta_a: n.delta_a,
                    delta_t: n.delta_t(),
                    kernel,
                    limit,
                    gap,
                    gap_ratio,
                });
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let p = &setup.problem;
    let stationary = [&p.beta, &p.zeta, &p.beta0, &p.zeta0]
        .iter()
        .all(|e| !e.depends_on(Var::T));
    Ok(KernelSweep {
        rows,
        limit,
        stationary,
        failure,
    })
}
