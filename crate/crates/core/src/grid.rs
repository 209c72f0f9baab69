//! Grids, node fields, the discrete Dirichlet energy and Laplacian, and norms.

use crate::error::{Error, Result};
use crate::model::{ModelProblem, NumericsParams};

/// Uniform nodes on [0, 1] with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    pub nx: usize,
    pub delta_x: f64,
    pub x: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SpaceGrid {
    pub fn new(nx: usize) -> SpaceGrid {
        assert!(nx >= 2, "at least two nodes");
        let delta_x = 1.0 / (nx - 1) as f64;
        let x = (0..nx)
            .map(|k| if k == nx - 1 { 1.0 } else { k as f64 / (nx - 1) as f64 })
            .collect();
        let mut weights = vec![delta_x; nx];
        weights[0] = 0.5 * delta_x;
        weights[nx - 1] = 0.5 * delta_x;
        SpaceGrid {
            nx,
            delta_x,
            x,
            weights,
        }
    }
}

/// Space, age and time grids of one ε-level run.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub space: SpaceGrid,
    pub delta_a: f64,
    /// Last age cell; cells are `0..=j_max`.
    pub j_max: usize,
    pub delta_t: f64,
    pub epsilon: f64,
    /// Number of time steps N with N·Δt ≤ T < (N+1)·Δt.
    pub n_steps: usize,
    pub horizon: f64,
}

impl Grids {
    pub fn new(p: &ModelProblem, n: &NumericsParams) -> Grids {
        let dt = n.delta_t();
        let steps = step_count(p.horizon, dt);
        Grids {
            space: SpaceGrid::new(n.nx),
            delta_a: n.delta_a,
            j_max: n.j_max(),
            delta_t: dt,
            epsilon: p.epsilon,
            n_steps: steps,
            horizon: p.horizon,
        }
    }

    pub fn nx(&self) -> usize {
        self.space.nx
    }

    pub fn cells(&self) -> usize {
        self.j_max + 1
    }

    /// Left end of age cell `j`.
    pub fn age(&self, j: usize) -> f64 {
        j as f64 * self.delta_a
    }

    pub fn time(&self, n: i64) -> f64 {
        n as f64 * self.delta_t
    }
}

/// Largest N with N·dt ≤ horizon, where a product within 1e-12 relative of
/// the horizon counts as reaching it (0.1·0.05 is not exactly 0.005).
pub fn step_count(horizon: f64, dt: f64) -> usize {
    let reach = horizon * (1.0 + 1e-12);
    let mut steps = (horizon / dt).floor() as usize;
    while (steps + 1) as f64 * dt <= reach {
        steps += 1;
    }
    while steps > 0 && steps as f64 * dt > reach {
        steps -= 1;
    }
    steps
}

/// `d` components at each of `nx` nodes, stored node by node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    d: usize,
    data: Vec<f64>,
}

/// A node field whose vectors are kept on the unit sphere.
pub type SphereField = NodeField;

impl NodeField {
    pub fn zeros(nx: usize, d: usize) -> NodeField {
        NodeField {
            d,
            data: vec![0.0; nx * d],
        }
    }

    pub fn from_vec(d: usize, data: Vec<f64>) -> NodeField {
        assert!(d > 0 && data.len() % d == 0);
        NodeField { d, data }
    }

    pub fn from_fn(nx: usize, d: usize, mut f: impl FnMut(usize, &mut [f64])) -> NodeField {
        let mut z = NodeField::zeros(nx, d);
        for k in 0..nx {
            f(k, z.node_mut(k));
        }
        z
    }

    /// The same vector at every node.
    pub fn constant(nx: usize, v: &[f64]) -> NodeField {
        NodeField::from_fn(nx, v.len(), |_, out| out.copy_from_slice(v))
    }

    pub fn nx(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.d..(k + 1) * self.d]
    }

    /// Euclidean length at each node.
    pub fn node_norms(&self) -> Vec<f64> {
        self.data.chunks(self.d).map(norm).collect()
    }

    /// Rescales every node to unit length and returns the smallest length
    /// seen before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let mut smallest = f64::INFINITY;
        for v in self.data.chunks_mut(self.d) {
            let r = norm(v);
            smallest = smallest.min(r);
            for c in v.iter_mut() {
                *c /= r;
            }
        }
        smallest
    }

    pub fn max_unit_deviation(&self) -> f64 {
        self.data
            .chunks(self.d)
            .map(|v| (norm(v) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Per-node dot product with another field.
    pub fn dot_nodes(&self, other: &NodeField) -> Vec<f64> {
        self.data
            .chunks(self.d)
            .zip(other.data.chunks(self.d))
            .map(|(a, b)| dot(a, b))
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// ½ Σ_edges |z_{k+1} − z_k|² / Δx.
pub fn dirichlet_energy(z: &NodeField, g: &SpaceGrid) -> f64 {
    let mut acc = 0.0;
    for k in 0..z.nx() - 1 {
        acc += dist2(z.node(k + 1), z.node(k));
    }
    0.5 * acc / g.delta_x
}

/// Second differences with reflected ghosts at both ends. Written as a sum
/// of neighbour differences so that near-constant fields keep their sign.
pub fn discrete_laplacian(z: &NodeField, g: &SpaceGrid) -> NodeField {
    let nx = z.nx();
    let d = z.d();
    let inv = 1.0 / (g.delta_x * g.delta_x);
    let mut out = NodeField::zeros(nx, d);
    for k in 0..nx {
        let left = if k == 0 { 1 } else { k - 1 };
        let right = if k == nx - 1 { nx - 2 } else { k + 1 };
        let (zl, zc, zr) = (z.node(left), z.node(k), z.node(right));
        for (c, o) in out.node_mut(k).iter_mut().enumerate() {
            *o = ((zr[c] - zc[c]) + (zl[c] - zc[c])) * inv;
        }
    }
    out
}

fn check_len(f: &[f64], g: &SpaceGrid) {
    assert_eq!(f.len(), g.nx, "grid mismatch: {} values for {} nodes", f.len(), g.nx);
}

/// max_k |f_k|.
pub fn linf_x(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Trapezoid integral of |f| over [0, 1].
///
/// # Panics
/// If `f` does not have one value per node.
pub fn l1_x(f: &[f64], g: &SpaceGrid) -> f64 {
    check_len(f, g);
    f.iter().zip(&g.weights).map(|(v, w)| w * v.abs()).sum()
}

/// Square root of the trapezoid integral of f².
///
/// # Panics
/// If `f` does not have one value per node.
pub fn l2_x(f: &[f64], g: &SpaceGrid) -> f64 {
    check_len(f, g);
    f.iter()
        .zip(&g.weights)
        .map(|(v, w)| w * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Σ_j Δa (1+a_j)^{weighted} max_k |f_j(x_k)| for one time slab stored
/// column by column (`data[k * cells + j]`).
pub fn yt_slab(data: &[f64], nx: usize, cells: usize, delta_a: f64, weighted: bool) -> f64 {
    assert_eq!(data.len(), nx * cells, "grid mismatch");
    let mut sup = vec![0.0f64; cells];
    for col in data.chunks(cells) {
        for (s, v) in sup.iter_mut().zip(col) {
            *s = s.max(v.abs());
        }
    }
    let mut acc = 0.0;
    for (j, s) in sup.iter().enumerate() {
        let w = if weighted { 1.0 + j as f64 * delta_a } else { 1.0 };
        acc += w * s;
    }
    delta_a * acc
}

/// Σ_n Δt · [`yt_slab`] over a sequence of slabs.
pub fn yt_norm<'a>(
    slabs: impl IntoIterator<Item = &'a [f64]>,
    nx: usize,
    cells: usize,
    delta_a: f64,
    delta_t: f64,
    weighted: bool,
) -> f64 {
    let mut acc = 0.0;
    for s in slabs {
        acc += yt_slab(s, nx, cells, delta_a, weighted);
    }
    delta_t * acc
}

/// Largest nodal distance between two trajectories sampled at the same
/// times.
pub fn c0_error(za: &[NodeField], zb: &[NodeField]) -> Result<f64> {
    if za.len() != zb.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} sample times",
            za.len(),
            zb.len()
        )));
    }
    let mut worst = 0.0f64;
    for (a, b) in za.iter().zip(zb) {
        if a.nx() != b.nx() || a.d() != b.d() {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{} node values",
                a.nx(),
                a.d(),
                b.nx(),
                b.d()
            )));
        }
        for k in 0..a.nx() {
            worst = worst.max(dist2(a.node(k), b.node(k)).sqrt());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn circle(nx: usize, phase: impl Fn(f64) -> f64) -> NodeField {
        let g = SpaceGrid::new(nx);
        NodeField::from_fn(nx, 2, |k, v| {
            let th = phase(g.x[k]);
            v[0] = th.cos();
            v[1] = th.sin();
        })
    }

    #[test]
    fn space_grid_shape() {
        let g = SpaceGrid::new(65);
        assert_eq!(g.x[0], 0.0);
        assert_eq!(g.x[64], 1.0);
        assert!(g.x.windows(2).all(|w| w[1] > w[0]));
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn step_count_brackets_horizon() {
        for (t, dt) in [(1.0, 0.001), (0.5, 0.0025), (1.0, 0.1 * 0.03), (0.3, 0.1), (0.25, 0.07)] {
            let steps = step_count(t, dt);
            let reach = t * (1.0 + 1e-12);
            assert!(steps as f64 * dt <= reach && reach < (steps + 1) as f64 * dt);
        }
        assert_eq!(step_count(0.05, 0.1 * 0.05), 10);
        assert_eq!(step_count(0.3, 0.1), 3);
        assert_eq!(step_count(0.25, 0.07), 3);
    }

    #[test]
    fn dirichlet_examples() {
        let g = SpaceGrid::new(11);
        assert_eq!(dirichlet_energy(&NodeField::constant(11, &[0.6, 0.8]), &g), 0.0);
        let e = dirichlet_energy(&circle(101, |x| PI * x), &SpaceGrid::new(101));
        assert!((e - PI * PI / 2.0).abs() < 1e-3, "{e}");
        let two = NodeField::from_vec(2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(dirichlet_energy(&two, &SpaceGrid::new(2)), 1.0);
    }

    #[test]
    fn laplacian_examples() {
        let g = SpaceGrid::new(21);
        let lap = discrete_laplacian(&NodeField::constant(21, &[0.0, 1.0]), &g);
        assert!(lap.as_slice().iter().all(|v| *v == 0.0));
        let q = NodeField::from_fn(21, 1, |k, v| v[0] = g.x[k] * g.x[k]);
        let lap = discrete_laplacian(&q, &g);
        for k in 1..20 {
            assert!((lap.node(k)[0] - 2.0).abs() < 1e-10);
        }
        assert!((lap.node(0)[0] - 2.0 * g.x[1] * g.x[1] / (g.delta_x * g.delta_x)).abs() < 1e-10);
    }

    #[test]
    fn laplacian_is_weighted_energy_gradient() {
        let g = SpaceGrid::new(17);
        let z = circle(17, |x| 0.7 * (3.0 * x).sin() + x * x);
        let lap = discrete_laplacian(&z, &g);
        let h = 1e-6;
        for k in 0..17 {
            for c in 0..2 {
                let mut zp = z.clone();
                zp.node_mut(k)[c] += h;
                let mut zm = z.clone();
                zm.node_mut(k)[c] -= h;
                let fd = (dirichlet_energy(&zp, &g) - dirichlet_energy(&zm, &g)) / (2.0 * h);
                let exact = -g.weights[k] * lap.node(k)[c];
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{k} {c}: {fd} {exact}");
            }
        }
    }

    #[test]
    fn norm_examples() {
        let g = SpaceGrid::new(33);
        assert!((l1_x(&vec![1.0; 33], &g) - 1.0).abs() < 1e-15);
        let (a_max, t, da, dt) = (3.0, 0.5, 0.1, 0.01);
        let cells = (a_max / da as f64).ceil() as usize;
        let slab = vec![1.0; 4 * cells];
        let slabs: Vec<&[f64]> = (0..50).map(|_| slab.as_slice()).collect();
        let v = yt_norm(slabs, 4, cells, da, dt, false);
        assert!((v - a_max * t).abs() <= da * t + 1e-12, "{v}");
        let z = circle(9, |x| x);
        assert_eq!(c0_error(&[z.clone()], &[z]).unwrap(), 0.0);
        assert!(c0_error(&[circle(9, |x| x)], &[]).is_err());
    }

    fn field(nx: usize, d: usize) -> impl Strategy<Value = NodeField> {
        prop::collection::vec(-2.0f64..2.0, nx * d).prop_map(move |v| NodeField::from_vec(d, v))
    }

    proptest! {
        #[test]
        fn bilinear_identity(u in field(12, 3), v in field(12, 3)) {
            let g = SpaceGrid::new(12);
            let lap = discrete_laplacian(&v, &g);
            let mut lhs = 0.0;
            let mut scale = 0.0;
            for k in 0..12 {
                let t = -g.weights[k] * dot(u.node(k), lap.node(k));
                lhs += t;
                scale += t.abs();
            }
            let mut rhs = 0.0;
            for k in 0..11 {
                let du: Vec<f64> = u.node(k + 1).iter().zip(u.node(k)).map(|(a, b)| a - b).collect();
                let dv: Vec<f64> = v.node(k + 1).iter().zip(v.node(k)).map(|(a, b)| a - b).collect();
                rhs += dot(&du, &dv) / g.delta_x;
            }
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn norms_are_seminorms(
            f in prop::collection::vec(-5.0f64..5.0, 20),
            h in prop::collection::vec(-5.0f64..5.0, 20),
            c in -3.0f64..3.0,
        ) {
            let g = SpaceGrid::new(20);
            let scaled: Vec<f64> = f.iter().map(|v| c * v).collect();
            let sum: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a + b).collect();
            let tol = 1e-12;
            for n in [
                &(|v: &[f64]| linf_x(v)) as &dyn Fn(&[f64]) -> f64,
                &|v: &[f64]| l1_x(v, &g),
                &|v: &[f64]| l2_x(v, &g),
                &|v: &[f64]| yt_slab(v, 4, 5, 0.1, true),
            ] {
                prop_assert!((n(&scaled) - c.abs() * n(&f)).abs() <= tol * (1.0 + n(&f)));
                prop_assert!(n(&sum) <= n(&f) + n(&h) + tol);
            }
        }
    }
}
