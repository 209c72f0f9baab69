//! Riemannian descent on the product of unit spheres.

use super::energy::DelayQuadratic;
use super::history::HistoryBuffer;
use crate::density::DensityState;
use crate::error::{Error, Result};
use crate::grid::{dot, Grids, NodeField};
use crate::model::NumericsParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    /// Tridiagonal model of the Riemannian Hessian, solved per component.
    Tridiagonal,
    /// Plain projected gradient with step 1/L.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerOptions {
    pub tol_grad: f64,
    pub max_inner: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub preconditioner: Preconditioner,
}

impl MinimizerOptions {
    pub fn from_numerics(n: &NumericsParams) -> Self {
        MinimizerOptions {
            tol_grad: n.tol_grad,
            max_inner: n.max_inner,
            armijo_c: n.armijo_c,
            backtrack: n.backtrack,
            preconditioner: Preconditioner::Tridiagonal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimized {
    pub z: NodeField,
    pub energy: f64,
    pub iterations: usize,
    /// max_k |P_{z_k} grad_k| at exit.
    pub residual: f64,
}

/// Removes the component along w at every node.
fn project(w: &NodeField, v: &mut NodeField) {
    for k in 0..w.nx() {
        let wk = w.node(k);
        let s = dot(wk, v.node(k));
        for (vc, wc) in v.node_mut(k).iter_mut().zip(wk) {
            *vc -= s * wc;
        }
    }
}

fn max_node_norm(v: &NodeField) -> f64 {
    v.node_norms().into_iter().fold(0.0, f64::max)
}

/// Solves (K + diag(shift)) u = rhs per component, K the Dirichlet
/// stiffness matrix.
fn solve_tridiagonal(shift: &[f64], delta_x: f64, rhs: &NodeField) -> NodeField {
    let nx = rhs.nx();
    let d = rhs.d();
    let off = -1.0 / delta_x;
    let diag: Vec<f64> = (0..nx)
        .map(|k| {
            let edges = if k == 0 || k == nx - 1 { 1.0 } else { 2.0 };
            edges / delta_x + shift[k]
        })
        .collect();
    // forward elimination shared by all components
    let mut cp = vec![0.0; nx];
    let mut denom = vec![0.0; nx];
    denom[0] = diag[0];
    cp[0] = off / denom[0];
    for k in 1..nx {
        denom[k] = diag[k] - off * cp[k - 1];
        cp[k] = off / denom[k];
    }
    let mut out = NodeField::zeros(nx, d);
    let mut dp = vec![0.0; nx];
    for c in 0..d {
        dp[0] = rhs.node(0)[c] / denom[0];
        for k in 1..nx {
            dp[k] = (rhs.node(k)[c] - off * dp[k - 1]) / denom[k];
        }
        out.node_mut(nx - 1)[c] = dp[nx - 1];
        for k in (0..nx - 1).rev() {
            let next = out.node(k + 1)[c];
            out.node_mut(k)[c] = dp[k] - cp[k] * next;
        }
    }
    out
}

/// Minimizes the quadratic over unit fields from `start` (normalized first).
/// Every accepted step decreases the energy (Armijo), so the result never
/// has more energy than the start.
pub fn minimize_quadratic(q: &DelayQuadratic, start: &NodeField, opts: &MinimizerOptions, step: usize) -> Result<Minimized> {
    let mut w = start.clone();
    w.normalize();
    let dx = q.space().delta_x;
    let delay_diag = q.delay_diagonal();
    let lipschitz = 4.0 / dx + delay_diag.iter().cloned().fold(0.0, f64::max);
    let mut iterations = 0;
    loop {
        let grad = q.gradient(&w);
        let mut pg = grad.clone();
        project(&w, &mut pg);
        let residual = max_node_norm(&pg);
        if !residual.is_finite() {
            return Err(Error::NonFinite { n: step });
        }
        if residual <= opts.tol_grad {
            let energy = q.energy(&w);
            if !energy.is_finite() {
                return Err(Error::NonFinite { n: step });
            }
            return Ok(Minimized {
                z: w,
                energy,
                iterations,
                residual,
            });
        }
        if iterations >= opts.max_inner {
            return Err(Error::NoConvergence {
                n: step,
                iterations,
                residual,
            });
        }
        iterations += 1;

        let (mut dir, mut alpha) = match opts.preconditioner {
            Preconditioner::Identity => (pg.clone(), 1.0 / lipschitz),
            Preconditioner::Tridiagonal => {
                let shift: Vec<f64> = (0..w.nx())
                    .map(|k| {
                        let sigma = dot(w.node(k), grad.node(k)).min(0.5 * delay_diag[k]);
                        delay_diag[k] - sigma
                    })
                    .collect();
                let mut u = solve_tridiagonal(&shift, dx, &pg);
                project(&w, &mut u);
                (u, 1.0)
            }
        };
        for v in dir.as_mut_slice() {
            *v = -*v;
        }
        let mut slope = dot(grad.as_slice(), dir.as_slice());
        if !(slope < 0.0) {
            dir = pg.clone();
            for v in dir.as_mut_slice() {
                *v = -*v;
            }
            alpha = 1.0 / lipschitz;
            slope = dot(grad.as_slice(), dir.as_slice());
        }
        // below the roundoff floor of the energy difference the Armijo test
        // is meaningless; accept a step that shrinks the projected gradient
        let radial: f64 = (0..w.nx()).map(|k| dot(w.node(k), grad.node(k)).abs()).sum();
        let noise = 64.0 * f64::EPSILON * (q.energy(&w).abs() + radial);
        if (alpha * slope).abs() <= noise {
            let mut trial = w.clone();
            for (t, dv) in trial.as_mut_slice().iter_mut().zip(dir.as_slice()) {
                *t += alpha * dv;
            }
            trial.normalize();
            let mut tg = q.gradient(&trial);
            project(&trial, &mut tg);
            if max_node_norm(&tg) < residual && q.energy_difference(&trial, &w) <= noise {
                w = trial;
                continue;
            }
            return Err(Error::NoConvergence {
                n: step,
                iterations,
                residual,
            });
        }
        let mut accepted = false;
        for _ in 0..80 {
            let mut trial = w.clone();
            for (t, dv) in trial.as_mut_slice().iter_mut().zip(dir.as_slice()) {
                *t += alpha * dv;
            }
            trial.normalize();
            let de = q.energy_difference(&trial, &w);
            if !de.is_finite() {
                return Err(Error::NonFinite { n: step });
            }
            if de <= opts.armijo_c * alpha * slope {
                w = trial;
                accepted = true;
                break;
            }
            alpha *= opts.backtrack;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                n: step,
                iterations,
                residual,
            });
        }
    }
}

/// z^n from a history whose latest entry is z^{n−1} and the density ρ^n,
/// warm-started at z^{n−1}.
pub fn minimize_step(h: &HistoryBuffer, rho: &DensityState, g: &Grids, opts: &MinimizerOptions) -> Result<NodeField> {
    let q = DelayQuadratic::assemble(h, rho, g);
    let step = (h.latest() + 1).max(0) as usize;
    Ok(minimize_quadratic(&q, h.entry(0), opts, step)?.z)
}

/// Distance between the minimizers reached from `start` and from a small
/// tangential perturbation of it, both at tolerance 1e−12. A large value
/// signals a second local minimizer; it is reported, not treated as an
/// error.
pub fn warm_start_probe(q: &DelayQuadratic, start: &NodeField, opts: &MinimizerOptions, amplitude: f64) -> Result<f64> {
    let tight = MinimizerOptions {
        tol_grad: 1e-12,
        ..*opts
    };
    let a = minimize_quadratic(q, start, &tight, 0)?;
    let mut perturbed = start.clone();
    perturbed.normalize();
    let d = perturbed.d();
    for k in 0..perturbed.nx() {
        let zk = perturbed.node(k).to_vec();
        // rotate within the plane of the first two coordinates, which is
        // tangent to the sphere at zk
        let mut t = vec![0.0; d];
        t[0] = -zk[1];
        t[1] = zk[0];
        let phase = amplitude * (1.0 + k as f64).sin();
        for (p, tv) in perturbed.node_mut(k).iter_mut().zip(&t) {
            *p += phase * tv;
        }
    }
    perturbed.normalize();
    let b = minimize_quadratic(q, &perturbed, &tight, 0)?;
    crate::grid::c0_error(&[a.z], &[b.z])
}
