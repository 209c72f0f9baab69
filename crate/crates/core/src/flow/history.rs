//! Ring of past fields z^{n−j} feeding the delay term.

use crate::error::Result;
use crate::grid::{Grids, NodeField};
use crate::model::{ModelProblem, Var};
use crate::quad::gauss4_mean_vec;

#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    ring: Vec<NodeField>,
    latest: i64,
}

impl HistoryBuffer {
    /// Holds `capacity` fields, initially the given ones with indices
    /// `latest − capacity + 1 ..= latest` in order.
    pub fn from_fields(fields: Vec<NodeField>, latest: i64) -> Self {
        let cap = fields.len();
        assert!(cap > 0);
        let mut ring = fields.clone();
        for (i, f) in fields.into_iter().enumerate() {
            let m = latest - (cap - 1 - i) as i64;
            ring[m.rem_euclid(cap as i64) as usize] = f;
        }
        HistoryBuffer { ring, latest }
    }

    /// Capacity J_max + 2 filled with the past averages
    /// z_p^i = (1/Δt)∫_{iΔt}^{(i+1)Δt} z_p dt for i = −(J_max+2)..=−1.
    pub fn from_past(p: &ModelProblem, g: &Grids) -> Result<Self> {
        let cap = g.j_max + 2;
        let nx = g.nx();
        let d = p.d;
        let dt = g.delta_t;
        let average = |i: i64| -> Result<NodeField> {
            let mut z = NodeField::zeros(nx, d);
            for k in 0..nx {
                let x = g.space.x[k];
                gauss4_mean_vec(i as f64 * dt, (i + 1) as f64 * dt, z.node_mut(k), |t, out| {
                    for (o, e) in out.iter_mut().zip(&p.z_p) {
                        *o = e.eval(x, 0.0, t)?;
                    }
                    Ok::<_, crate::model::ExprError>(())
                })?;
            }
            Ok(z)
        };
        let fields = if p.z_p.iter().any(|e| e.depends_on(Var::T)) {
            (-(cap as i64)..0).map(average).collect::<Result<Vec<_>>>()?
        } else {
            vec![average(-1)?; cap]
        };
        Ok(Self::from_fields(fields, -1))
    }

    pub fn capacity(&self) -> usize {
        self.ring.len()
    }

    /// Index of the most recent field.
    pub fn latest(&self) -> i64 {
        self.latest
    }

    /// z^m for `latest − capacity < m ≤ latest`.
    pub fn get(&self, m: i64) -> &NodeField {
        let cap = self.ring.len() as i64;
        assert!(
            m <= self.latest && m > self.latest - cap,
            "history index {m} outside ({}, {}]",
            self.latest - cap,
            self.latest
        );
        &self.ring[m.rem_euclid(cap) as usize]
    }

    /// z^{latest − j}.
    pub fn entry(&self, j: usize) -> &NodeField {
        self.get(self.latest - j as i64)
    }

    /// Appends z^{latest+1}, dropping the oldest field.
    pub fn push(&mut self, z: NodeField) {
        self.latest += 1;
        let cap = self.ring.len() as i64;
        self.ring[self.latest.rem_euclid(cap) as usize] = z;
    }
}

/// V_j = (z^n − (z^{n−j} + z^{n−j−1})/2)/ε with z^n the latest entry.
pub fn elongation_v(h: &HistoryBuffer, j: usize, epsilon: f64) -> NodeField {
    let z = h.entry(0);
    let a = h.entry(j);
    let b = h.entry(j + 1);
    let mut out = z.clone();
    for ((o, x), y) in out.as_mut_slice().iter_mut().zip(a.as_slice()).zip(b.as_slice()) {
        *o = (*o - 0.5 * (x + y)) / epsilon;
    }
    out
}
