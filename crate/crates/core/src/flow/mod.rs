//! The delayed minimizing movement: at each step z^n minimizes the Dirichlet
//! energy plus a memory term built from ρ^n and the past fields.

mod energy;
mod history;
mod minimize;

pub use energy::{
    delay_operator_l, dissipation, energy, energy_gradient, lagrange_multiplier, DelayQuadratic,
};
pub use history::{elongation_v, HistoryBuffer};
pub use minimize::{
    minimize_quadratic, minimize_step, warm_start_probe, Minimized, MinimizerOptions, Preconditioner,
};

use crate::density::{DensityState, DensityStats, DensityStepper, InitMode};
use crate::error::{Error, Result};
use crate::grid::{dist2, l1_x, Grids, NodeField};
use crate::model::{ModelProblem, NumericsParams};

/// Tolerance on the sign of λ and of L·z.
pub const SIGN_TOL: f64 = 1e-12;
/// Tolerance on ||z| − 1| after each step.
pub const UNIT_TOL: f64 = 1e-12;

/// What the observer sees after step n.
#[derive(Debug)]
pub struct FlowStep<'a> {
    pub n: usize,
    pub t: f64,
    pub z: &'a NodeField,
    pub lambda: &'a [f64],
    /// L^n·z^n at each node.
    pub ldotz: &'a [f64],
    pub density: &'a DensityState,
    pub row: &'a EnergyRow,
}

/// One line of the energy report.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyRow {
    pub n: usize,
    pub t: f64,
    /// E_n(z^n).
    pub energy: f64,
    /// D_{n−1}, built from ρ^n and the history up to z^{n−1}.
    pub dissipation: f64,
    pub lambda_l1: f64,
    pub ldotz_l1: f64,
    /// ‖(z^n − z^{n−1})/Δt‖²_{L2}.
    pub dz_l2sq: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct FlowReport {
    pub rows: Vec<EnergyRow>,
    /// 10·tol_grad·(1 + E_0).
    pub tol_energy: f64,
    /// max_n of E_n + Δt D_{n−1} − E_{n−1}.
    pub max_chain_excess: f64,
    pub max_unit_deviation: f64,
    pub max_lambda: f64,
    pub min_ldotz: f64,
    pub sup_lambda_l1: f64,
    /// Σ_n Δt ‖L^n·z^n‖_{L1}.
    pub ldotz_l1_xt: f64,
    /// Σ_{n=1}^{N−1} Δt ‖(z^{n+1} − z^n)/Δt‖²_{L2}.
    pub h1_time_sum: f64,
    pub density: DensityStats,
    /// min s^n over n ≥ 0.
    pub min_s: f64,
    pub max_iterations: usize,
    pub final_z: NodeField,
}

#[derive(Debug, Clone)]
pub struct FlowFrame {
    pub n: usize,
    pub t: f64,
    pub z: NodeField,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub grids: Grids,
    pub stride: usize,
    /// Steps with n a multiple of `stride`, plus the last one.
    pub frames: Vec<FlowFrame>,
    pub report: FlowReport,
}

/// Runs density and flow in lockstep for n = 0..=N, calling `observer`
/// after every step. Violations of the energy chain, the sign of λ or the
/// unit constraint stop the run.
pub fn run_flow_observed(
    p: &ModelProblem,
    numerics: &NumericsParams,
    mode: InitMode,
    opts: &MinimizerOptions,
    mut observer: impl FnMut(&FlowStep<'_>) -> Result<()>,
) -> Result<FlowReport> {
    let g = Grids::new(p, numerics);
    let mut density = DensityStepper::new(p, &g, mode)?;
    let mut dstats = DensityStats::default();
    dstats.observe(&density.state)?;
    let mut history = HistoryBuffer::from_past(p, &g)?;
    let dt = g.delta_t;

    let mut rows: Vec<EnergyRow> = Vec::with_capacity(g.n_steps + 1);
    let mut report = FlowReport {
        rows: Vec::new(),
        tol_energy: 0.0,
        max_chain_excess: f64::NEG_INFINITY,
        max_unit_deviation: 0.0,
        max_lambda: f64::NEG_INFINITY,
        min_ldotz: f64::INFINITY,
        sup_lambda_l1: 0.0,
        ldotz_l1_xt: 0.0,
        h1_time_sum: 0.0,
        density: DensityStats::default(),
        min_s: f64::INFINITY,
        max_iterations: 0,
        final_z: history.entry(0).clone(),
    };

    for n in 0..=g.n_steps {
        let info = density.advance()?;
        dstats.observe(&density.state)?;
        dstats.record_step(&info, &g);
        report.min_s = density.state.s.iter().fold(report.min_s, |m, v| m.min(*v));

        let d_prev = dissipation(&history, &density.state, &density.rates.zeta, &g, g.epsilon);
        let q = DelayQuadratic::assemble(&history, &density.state, &g);
        let out = minimize_quadratic(&q, history.entry(0), opts, n)?;
        let z = out.z;

        let unit = z.max_unit_deviation();
        if unit > UNIT_TOL {
            return Err(Error::Invariant {
                what: format!("||z|-1| = {unit:e}"),
                n: n as i64,
                j: None,
                k: 0,
            });
        }
        report.max_unit_deviation = report.max_unit_deviation.max(unit);

        if n == 0 {
            report.tol_energy = 10.0 * opts.tol_grad * (1.0 + out.energy);
        } else {
            let prev = rows[n - 1].energy;
            let excess = out.energy + dt * d_prev - prev;
            report.max_chain_excess = report.max_chain_excess.max(excess);
            if excess > report.tol_energy {
                return Err(Error::Invariant {
                    what: format!(
                        "energy chain: E_n + dt D_(n-1) - E_(n-1) = {excess:e} > {:e}",
                        report.tol_energy
                    ),
                    n: n as i64,
                    j: None,
                    k: 0,
                });
            }
        }

        let l = q.delay_force(&z);
        let lambda = lagrange_multiplier(&z, &l, &g.space);
        let ldotz = z.dot_nodes(&l);
        for (k, (&lam, &ld)) in lambda.iter().zip(&ldotz).enumerate() {
            if lam > SIGN_TOL || ld < -SIGN_TOL {
                return Err(Error::Invariant {
                    what: format!("sign: lambda = {lam:e}, L.z = {ld:e}"),
                    n: n as i64,
                    j: None,
                    k,
                });
            }
        }
        report.max_lambda = lambda.iter().fold(report.max_lambda, |m, v| m.max(*v));
        report.min_ldotz = ldotz.iter().fold(report.min_ldotz, |m, v| m.min(*v));

        let prev_z = history.entry(0);
        let dz: Vec<f64> = (0..z.nx())
            .map(|k| dist2(z.node(k), prev_z.node(k)) / (dt * dt))
            .collect();
        let dz_l2sq = l1_x(&dz, &g.space);
        let row = EnergyRow {
            n,
            t: g.time(n as i64),
            energy: out.energy,
            dissipation: d_prev,
            lambda_l1: l1_x(&lambda, &g.space),
            ldotz_l1: l1_x(&ldotz, &g.space),
            dz_l2sq,
            iterations: out.iterations,
        };
        report.sup_lambda_l1 = report.sup_lambda_l1.max(row.lambda_l1);
        report.ldotz_l1_xt += dt * row.ldotz_l1;
        if n >= 2 {
            report.h1_time_sum += dt * dz_l2sq;
        }
        report.max_iterations = report.max_iterations.max(out.iterations);
        history.push(z);
        rows.push(row);
        observer(&FlowStep {
            n,
            t: row.t,
            z: history.entry(0),
            lambda: &lambda,
            ldotz: &ldotz,
            density: &density.state,
            row: &row,
        })?;
    }
    report.final_z = history.entry(0).clone();
    report.rows = rows;
    report.density = dstats;
    Ok(report)
}

/// [`run_flow_observed`] keeping every `stride`-th field.
pub fn run_flow(
    p: &ModelProblem,
    numerics: &NumericsParams,
    mode: InitMode,
    opts: &MinimizerOptions,
    stride: usize,
) -> Result<FlowTrajectory> {
    let stride = stride.max(1);
    let g = Grids::new(p, numerics);
    let last = g.n_steps;
    let mut frames = Vec::new();
    let report = run_flow_observed(p, numerics, mode, opts, |s| {
        if s.n % stride == 0 || s.n == last {
            frames.push(FlowFrame {
                n: s.n,
                t: s.t,
                z: s.z.clone(),
                lambda: s.lambda.to_vec(),
            });
        }
        Ok(())
    })?;
    Ok(FlowTrajectory {
        grids: g,
        stride,
        frames,
        report,
    })
}

#[cfg(test)]
mod tests;
