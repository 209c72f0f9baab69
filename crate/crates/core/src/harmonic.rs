//! Friction-limit solver: μ_{1,0} ∂_t z_0 − ∂_xx z_0 − |∂_x z_0|² z_0 = 0
//! with Neumann ends, discretized by an explicit step followed by
//! projection onto the sphere.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{discrete_laplacian, dirichlet_energy, step_count, NodeField, SpaceGrid, SphereField};
use crate::limit_density::Rho0Solver;
use crate::model::{ModelProblem, NumericsParams};

/// Nodes whose predictor falls below this length signal a step that is
/// too large for the projection to be meaningful.
pub const MIN_PREDICTOR_NORM: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct LimitFlowState {
    pub t: f64,
    pub z: SphereField,
    pub mu10: Vec<f64>,
}

/// One explicit step z* = z + (Δt/μ_k) (Lap z)_k, then z' = z*/|z*|.
pub fn step_limit(z: &SphereField, mu10: &[f64], dt: f64, g: &SpaceGrid) -> Result<SphereField> {
    let lap = discrete_laplacian(z, g);
    let mut out = z.clone();
    for k in 0..z.nx() {
        let f = dt / mu10[k];
        let lk = lap.node(k);
        for (c, v) in out.node_mut(k).iter_mut().enumerate() {
            *v += f * lk[c];
        }
    }
    let norms = out.node_norms();
    if let Some((k, &norm)) = norms
        .iter()
        .enumerate()
        .find(|(_, n)| !(**n >= MIN_PREDICTOR_NORM))
    {
        return Err(Error::StepTooLarge { k, norm });
    }
    out.normalize();
    Ok(out)
}

/// Largest explicitly stable step for the given friction profile.
pub fn stable_limit_dt(mu10: &[f64], delta_x: f64, safety: f64) -> f64 {
    let mu_min = mu10.iter().cloned().fold(f64::INFINITY, f64::min);
    safety * mu_min * delta_x * delta_x / 2.0
}

/// Phase θ_0 e^{−π²t/μ} cos(πx) on the circle, the exact solution for
/// constant friction μ.
pub fn exact_circle_solution(theta0: f64, mu: f64, x: f64, t: f64) -> [f64; 2] {
    let th = theta0 * (-std::f64::consts::PI.powi(2) * t / mu).exp() * (std::f64::consts::PI * x).cos();
    [th.cos(), th.sin()]
}

pub fn exact_circle_field(theta0: f64, mu: f64, g: &SpaceGrid, t: f64) -> SphereField {
    NodeField::from_fn(g.nx, 2, |k, v| v.copy_from_slice(&exact_circle_solution(theta0, mu, g.x[k], t)))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LimitStats {
    pub internal_steps: usize,
    pub max_unit_deviation: f64,
    /// Largest one-step increase of ½∫|∂_x z|² (negative if it always fell).
    pub max_energy_increase: f64,
    pub min_mu10: f64,
}

#[derive(Debug, Clone)]
pub struct LimitTrajectory {
    pub times: Vec<f64>,
    pub frames: Vec<SphereField>,
    pub mu10: Vec<Vec<f64>>,
    pub stats: LimitStats,
}

/// Advances `z0` through `times` (non-decreasing, first entry is the start
/// time). Each interval is split into equal steps no longer than
/// `dt_max(μ)`, so every sample time is hit exactly; μ_{1,0} is frozen on
/// each interval at its left end.
pub fn evolve_limit(
    z0: SphereField,
    g: &SpaceGrid,
    times: &[f64],
    mut mu_at: impl FnMut(f64) -> Result<Vec<f64>>,
    dt_max: impl Fn(&[f64]) -> f64,
) -> Result<LimitTrajectory> {
    let mut z = z0;
    z.normalize();
    let mut stats = LimitStats {
        max_energy_increase: f64::NEG_INFINITY,
        min_mu10: f64::INFINITY,
        ..LimitStats::default()
    };
    let mut frames = Vec::with_capacity(times.len());
    let mut mus = Vec::with_capacity(times.len());
    let mut energy = dirichlet_energy(&z, g);
    for (i, &t) in times.iter().enumerate() {
        let mu = mu_at(t)?;
        if let Some((k, m)) = mu.iter().enumerate().find(|(_, m)| !(**m > 0.0)) {
            return Err(Error::Invariant {
                what: format!("mu10 = {m} is not positive"),
                n: i as i64,
                j: None,
                k,
            });
        }
        stats.min_mu10 = mu.iter().cloned().fold(stats.min_mu10, f64::min);
        stats.max_unit_deviation = stats.max_unit_deviation.max(z.max_unit_deviation());
        frames.push(z.clone());
        if let Some(&next) = times.get(i + 1) {
            let span = next - t;
            if span > 0.0 {
                let cap = dt_max(&mu);
                let mut steps = step_count(span, cap).max(1);
                if span / steps as f64 > cap {
                    steps += 1;
                }
                let dt = span / steps as f64;
                for _ in 0..steps {
                    z = step_limit(&z, &mu, dt, g)?;
                    let e = dirichlet_energy(&z, g);
                    stats.max_energy_increase = stats.max_energy_increase.max(e - energy);
                    energy = e;
                }
                stats.internal_steps += steps;
            }
        }
        mus.push(mu);
    }
    Ok(LimitTrajectory {
        times: times.to_vec(),
        frames,
        mu10: mus,
        stats,
    })
}

/// The delayed-flow sample times n Δt for n = 0, stride, 2 stride, … and
/// always the last step N.
pub fn flow_sample_times(p: &ModelProblem, numerics: &NumericsParams, stride: usize) -> Vec<f64> {
    let dt = numerics.delta_t();
    let n_steps = step_count(p.horizon, dt);
    let stride = stride.max(1);
    let mut out: Vec<f64> = (0..=n_steps).step_by(stride).map(|n| n as f64 * dt).collect();
    if n_steps % stride != 0 {
        out.push(n_steps as f64 * dt);
    }
    out
}

/// Limit trajectory from z_p(·,0), with μ_{1,0} from the limit density on
/// the ε-problem age grid.
pub fn run_limit(p: &ModelProblem, numerics: &NumericsParams, times: &[f64]) -> Result<LimitTrajectory> {
    let g = SpaceGrid::new(numerics.nx);
    let mut z0 = NodeField::zeros(g.nx, p.d);
    for k in 0..g.nx {
        for c in 0..p.d {
            z0.node_mut(k)[c] = p.z_p[c].eval(g.x[k], 0.0, 0.0)?;
        }
    }
    let mut solver = Rho0Solver::with_age_grid(p, &g.x, numerics.delta_a, numerics.j_max() + 1);
    let safety = numerics.limit_dt_safety;
    let dx = g.delta_x;
    evolve_limit(z0, &g, times, |t| Ok(solver.solve(t)?.mu10), |mu| stable_limit_dt(mu, dx, safety))
}

/// C0 error of the projection scheme against the circle oracle at time
/// `t_end`, with Δt_lim = c μ Δx² (adjusted down to land on `t_end`).
pub fn circle_oracle_error(nx: usize, theta0: f64, mu: f64, c: f64, t_end: f64) -> Result<f64> {
    let g = SpaceGrid::new(nx);
    let z0 = exact_circle_field(theta0, mu, &g, 0.0);
    let dt = c * mu * g.delta_x * g.delta_x;
    let traj = evolve_limit(z0, &g, &[0.0, t_end], |_| Ok(vec![mu; nx]), |_| dt)?;
    let exact = exact_circle_field(theta0, mu, &g, t_end);
    crate::grid::c0_error(&traj.frames[1..], &[exact])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_fixed() {
        let g = SpaceGrid::new(17);
        let z = NodeField::constant(17, &[0.0, 0.6, 0.8]);
        let next = step_limit(&z, &vec![0.5; 17], 1e-3, &g).unwrap();
        assert_eq!(next, z);
    }

    #[test]
    fn one_step_damps_cosine_phase() {
        let nx = 129;
        let g = SpaceGrid::new(nx);
        let (theta0, mu) = (0.1, 0.5);
        let dt = 0.2 * mu * g.delta_x * g.delta_x;
        let z = exact_circle_field(theta0, mu, &g, 0.0);
        let next = step_limit(&z, &vec![mu; nx], dt, &g).unwrap();
        let amp = next.node(0)[1].atan2(next.node(0)[0]);
        let expect = theta0 * (1.0 - dt * std::f64::consts::PI.powi(2) / mu);
        let slack = theta0 * (dt * dt * 1e3 + g.delta_x * g.delta_x) * 1e-2;
        assert!((amp - expect).abs() <= slack, "{amp} {expect}");
    }

    #[test]
    fn antipodal_neighbours_with_huge_step_fail() {
        let g = SpaceGrid::new(3);
        let z = NodeField::from_vec(2, vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
        let err = step_limit(&z, &[1.0; 3], 0.25 * g.delta_x * g.delta_x, &g).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }), "{err}");
    }

    #[test]
    fn circle_solution_examples() {
        let v = exact_circle_solution(0.7, 0.5, 0.2, 0.0);
        let th = 0.7 * (std::f64::consts::PI * 0.2).cos();
        assert_eq!(v, [th.cos(), th.sin()]);
        let v = exact_circle_solution(1.0, 0.5, 0.0, 0.1);
        let phase = v[1].atan2(v[0]);
        assert!((phase - (-2.0 * std::f64::consts::PI.powi(2) * 0.1).exp()).abs() < 1e-14);
        assert!((phase - 0.1389).abs() < 1e-4);
        let v = exact_circle_solution(1.0, 0.5, 0.5, 3.0);
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
    }

    #[test]
    fn oracle_refinement_is_second_order() {
        let errs: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&nx| circle_oracle_error(nx, 1.0, 0.5, 0.2, 0.05).unwrap())
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8, "{errs:?}");
        }
    }

    #[test]
    fn lands_on_sample_times_and_keeps_energy_falling() {
        let g = SpaceGrid::new(33);
        let z0 = exact_circle_field(1.0, 0.5, &g, 0.0);
        let times = [0.0, 0.013, 0.02, 0.02, 0.05];
        let traj = evolve_limit(z0, &g, &times, |_| Ok(vec![0.5; 33]), |mu| stable_limit_dt(mu, g.delta_x, 0.4)).unwrap();
        assert_eq!(traj.frames.len(), times.len());
        assert_eq!(traj.frames[2], traj.frames[3]);
        assert!(traj.stats.max_unit_deviation <= 1e-12);
        assert!(traj.stats.max_energy_increase <= 1e-10);
    }

    #[test]
    fn constant_past_gives_constant_limit() {
        let mut s = crate::density::tests::setup(&[], 0.05, 9);
        s.problem.z_p = vec![crate::model::RateExpr::constant(0.0), crate::model::RateExpr::constant(1.0)];
        s.problem.horizon = 0.1;
        let times = flow_sample_times(&s.problem, &s.numerics, 7);
        assert_eq!(times.first(), Some(&0.0));
        let n = step_count(0.1, s.numerics.delta_t());
        assert_eq!(*times.last().unwrap(), n as f64 * s.numerics.delta_t());
        let traj = run_limit(&s.problem, &s.numerics, &times).unwrap();
        let e = NodeField::constant(9, &[0.0, 1.0]);
        assert!(traj.frames.iter().all(|f| *f == e));
        assert!((traj.stats.min_mu10 - 0.5).abs() < 1e-6);
    }
}
