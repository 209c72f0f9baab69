//! The delayed energy E_n, its gradient, the delay force L^n, the Lagrange
//! multiplier and the dissipation.
//!
//! The delay term is a sum of squared distances to past fields, so at every
//! node it collapses to c|w − m|² + r with c the total weight, m the weighted
//! mean of the past and r the weighted spread. The solver works with that
//! form; the direct sums are kept for checking it.

use super::history::{elongation_v, HistoryBuffer};
use crate::density::DensityState;
use crate::grid::{dist2, dot, Grids, NodeField, SpaceGrid};
use crate::par;

/// Per-node quadratic form of E_n.
#[derive(Debug, Clone)]
pub struct DelayQuadratic {
    /// Δa / (2ε).
    pub scale: f64,
    pub c: Vec<f64>,
    pub m: NodeField,
    pub r: Vec<f64>,
    space: SpaceGrid,
}

/// Weight of history entry i (z^{n−1−i}) in E_n: ρ_i + ρ_{i+1}.
fn entry_weight(col: &[f64], i: usize) -> f64 {
    col[i] + col.get(i + 1).copied().unwrap_or(0.0)
}

impl DelayQuadratic {
    /// Assembles E_n from ρ^n and a history whose latest entry is z^{n−1}.
    pub fn assemble(h: &HistoryBuffer, rho: &DensityState, g: &Grids) -> Self {
        let d = h.entry(0).d();
        let nx = g.nx();
        let cells = rho.cells;
        let per_node = par::map(nx, |k| {
            let col = rho.column(k);
            let mut c = 0.0;
            let mut m = vec![0.0; d];
            for i in 0..cells {
                let w = entry_weight(col, i);
                c += w;
                for (mc, y) in m.iter_mut().zip(h.entry(i).node(k)) {
                    *mc += w * y;
                }
            }
            if c > 0.0 {
                for mc in m.iter_mut() {
                    *mc /= c;
                }
            }
            let mut r = 0.0;
            for i in 0..cells {
                r += entry_weight(col, i) * dist2(h.entry(i).node(k), &m);
            }
            (c, m, r)
        });
        let mut c = Vec::with_capacity(nx);
        let mut r = Vec::with_capacity(nx);
        let mut m = NodeField::zeros(nx, d);
        for (k, (ck, mk, rk)) in per_node.into_iter().enumerate() {
            c.push(ck);
            r.push(rk);
            m.node_mut(k).copy_from_slice(&mk);
        }
        DelayQuadratic {
            scale: g.delta_a / (2.0 * g.epsilon),
            c,
            m,
            r,
            space: g.space.clone(),
        }
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn energy(&self, w: &NodeField) -> f64 {
        let mut delay = 0.0;
        for k in 0..w.nx() {
            delay += self.space.weights[k] * (self.c[k] * dist2(w.node(k), self.m.node(k)) + self.r[k]);
        }
        crate::grid::dirichlet_energy(w, &self.space) + 0.5 * self.scale * delay
    }

    /// E(w_new) − E(w_old), evaluated from differences so that tiny steps
    /// are resolved.
    pub fn energy_difference(&self, w_new: &NodeField, w_old: &NodeField) -> f64 {
        let nx = w_new.nx();
        let d = w_new.d();
        let (a, b) = (w_new.as_slice(), w_old.as_slice());
        let mut dir = 0.0;
        for k in 0..nx - 1 {
            for c in 0..d {
                let dn = a[(k + 1) * d + c] - a[k * d + c];
                let dol = b[(k + 1) * d + c] - b[k * d + c];
                dir += (dn - dol) * (dn + dol);
            }
        }
        let mut delay = 0.0;
        for k in 0..nx {
            let mk = self.m.node(k);
            let mut s = 0.0;
            for c in 0..d {
                let (x, y) = (a[k * d + c], b[k * d + c]);
                s += (x - y) * (x + y - 2.0 * mk[c]);
            }
            delay += self.space.weights[k] * self.c[k] * s;
        }
        0.5 * dir / self.space.delta_x + 0.5 * self.scale * delay
    }

    pub fn gradient(&self, w: &NodeField) -> NodeField {
        let lap = crate::grid::discrete_laplacian(w, &self.space);
        let mut g = lap;
        for k in 0..w.nx() {
            let wk = self.space.weights[k];
            let coef = self.scale * wk * self.c[k];
            let (wn, mn) = (w.node(k), self.m.node(k));
            for (c, gv) in g.node_mut(k).iter_mut().enumerate() {
                *gv = -wk * *gv + coef * (wn[c] - mn[c]);
            }
        }
        g
    }

    /// L = (Δa/2ε) c (z − m), the delay force at z.
    pub fn delay_force(&self, z: &NodeField) -> NodeField {
        let mut out = z.clone();
        for k in 0..z.nx() {
            let coef = self.scale * self.c[k];
            let mk = self.m.node(k).to_vec();
            for (o, m) in out.node_mut(k).iter_mut().zip(&mk) {
                *o = coef * (*o - m);
            }
        }
        out
    }

    /// Diagonal of the delay part of the Hessian, (Δa/2ε) W c.
    pub fn delay_diagonal(&self) -> Vec<f64> {
        self.c
            .iter()
            .zip(&self.space.weights)
            .map(|(c, w)| self.scale * w * c)
            .collect()
    }
}

/// E_n(w) by the defining sum: Dirichlet energy plus
/// (Δa/4ε) Σ_k W_k [ρ_0|w−z^{n−1}|² + Σ_{j≥1} ρ_j(|w−z^{n−j}|² + |w−z^{n−j−1}|²)],
/// with `h.entry(0)` = z^{n−1}.
pub fn energy(w: &NodeField, h: &HistoryBuffer, rho: &DensityState, g: &Grids) -> f64 {
    let mut delay = 0.0;
    for k in 0..w.nx() {
        let col = rho.column(k);
        let wk = w.node(k);
        let mut acc = col[0] * dist2(wk, h.entry(0).node(k));
        for (j, &r) in col.iter().enumerate().skip(1) {
            acc += r * (dist2(wk, h.entry(j - 1).node(k)) + dist2(wk, h.entry(j).node(k)));
        }
        delay += g.space.weights[k] * acc;
    }
    crate::grid::dirichlet_energy(w, &g.space) + g.delta_a / (4.0 * g.epsilon) * delay
}

/// Exact gradient of [`energy`].
pub fn energy_gradient(w: &NodeField, h: &HistoryBuffer, rho: &DensityState, g: &Grids) -> NodeField {
    let mut out = crate::grid::discrete_laplacian(w, &g.space);
    let scale = g.delta_a / (2.0 * g.epsilon);
    for k in 0..w.nx() {
        let col = rho.column(k);
        let wk = w.node(k).to_vec();
        let weight = g.space.weights[k];
        let mut acc = vec![0.0; wk.len()];
        for (c, a) in acc.iter_mut().enumerate() {
            *a = col[0] * (wk[c] - h.entry(0).node(k)[c]);
            for (j, &r) in col.iter().enumerate().skip(1) {
                *a += r * ((wk[c] - h.entry(j - 1).node(k)[c]) + (wk[c] - h.entry(j).node(k)[c]));
            }
        }
        for (c, o) in out.node_mut(k).iter_mut().enumerate() {
            *o = -weight * *o + scale * weight * acc[c];
        }
    }
    out
}

/// L^n = Δa Σ_{j=0}^{J_max} ρ^n_j V^n_j with `h.entry(0)` = z^n.
pub fn delay_operator_l(h: &HistoryBuffer, rho: &DensityState, g: &Grids) -> NodeField {
    let z = h.entry(0);
    let mut out = NodeField::zeros(z.nx(), z.d());
    for j in 0..rho.cells {
        let v = elongation_v(h, j, g.epsilon);
        for k in 0..z.nx() {
            let r = g.delta_a * rho.get(j, k);
            for (o, vc) in out.node_mut(k).iter_mut().zip(v.node(k)) {
                *o += r * vc;
            }
        }
    }
    out
}

/// λ_k = (Lap z)_k·z_k − L_k·z_k. On the sphere z_k·(z_{k±1} − z_k) equals
/// −½|z_{k±1} − z_k|², which is how the first term is evaluated.
pub fn lagrange_multiplier(z: &NodeField, l: &NodeField, space: &SpaceGrid) -> Vec<f64> {
    let nx = z.nx();
    let inv = 1.0 / (space.delta_x * space.delta_x);
    (0..nx)
        .map(|k| {
            let left = if k == 0 { 1 } else { k - 1 };
            let right = if k == nx - 1 { nx - 2 } else { k + 1 };
            let lap_dot = -0.5 * (dist2(z.node(right), z.node(k)) + dist2(z.node(left), z.node(k))) * inv;
            lap_dot - dot(l.node(k), z.node(k))
        })
        .collect()
}

/// D = (Δa/2) Σ_k W_k Σ_{j<J_max} |V_j|² ζ_{j+1} ρ_{j+1} with V built on a
/// history whose latest entry is z^n, and ρ, ζ at level n+1.
pub fn dissipation(h: &HistoryBuffer, rho: &DensityState, zeta: &[f64], g: &Grids, epsilon: f64) -> f64 {
    let z = h.entry(0);
    let cells = rho.cells;
    let per_node = par::map(z.nx(), |k| {
        let zk = z.node(k);
        let col = rho.column(k);
        let zc = &zeta[k * cells..(k + 1) * cells];
        let mut acc = 0.0;
        for j in 0..cells - 1 {
            let (a, b) = (h.entry(j).node(k), h.entry(j + 1).node(k));
            let mut v2 = 0.0;
            for c in 0..zk.len() {
                let v = (zk[c] - 0.5 * (a[c] + b[c])) / epsilon;
                v2 += v * v;
            }
            acc += v2 * zc[j + 1] * col[j + 1];
        }
        acc
    });
    let mut total = 0.0;
    for (k, v) in per_node.into_iter().enumerate() {
        total += g.space.weights[k] * v;
    }
    0.5 * g.delta_a * total
}
