//! The ε = 0 density ρ_0, its moments μ_{0,0} and μ_{1,0}, and the initial
//! layer on the fast time scale t̃ = t/ε.

use crate::error::Result;
use crate::grid::Grids;
use crate::model::{ModelProblem, Var};
use crate::par;
use crate::quad::gauss4_mean;

/// (1 − e^{−z})/z.
fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        -(-z).exp_m1() / z
    }
}

/// (1 − (1+z)e^{−z})/z², by series near zero.
fn phi2(z: f64) -> f64 {
    if z.abs() < 0.1 {
        // Σ_n (n+1)(−z)^n / (n+2)!
        let mut term = 0.5;
        let mut acc = 0.5;
        for n in 1..14 {
            term *= -z / (n + 2) as f64;
            acc += (n + 1) as f64 * term;
        }
        acc
    } else {
        (1.0 - (1.0 + z) * (-z).exp()) / (z * z)
    }
}

/// Age profile of one x-column at one time.
#[derive(Debug, Clone, Default)]
struct Column {
    /// S(a_j) for j = 0..=cells.
    survival: Vec<f64>,
    /// ∫ over cell j of S.
    cell_int: Vec<f64>,
    i_int: f64,
    k_int: f64,
}

fn survival_column(zeta_nodes: &[f64], delta_a: f64) -> Column {
    let cells = zeta_nodes.len() - 1;
    let mut survival = Vec::with_capacity(cells + 1);
    let mut cell_int = Vec::with_capacity(cells);
    // compensated running sum keeps S accurate over thousands of cells
    let (mut cum, mut comp) = (0.0f64, 0.0f64);
    let (mut i_int, mut k_int) = (0.0, 0.0);
    survival.push(1.0);
    for j in 0..cells {
        let s_j = (-(cum + comp)).exp();
        let zbar = 0.5 * (zeta_nodes[j] + zeta_nodes[j + 1]);
        let z = delta_a * zbar;
        let ci = s_j * delta_a * phi1(z);
        cell_int.push(ci);
        i_int += ci;
        k_int += s_j * (j as f64 * delta_a * delta_a * phi1(z) + delta_a * delta_a * phi2(z));
        let y = z;
        let t = cum + y;
        comp += if cum.abs() >= y.abs() { (cum - t) + y } else { (y - t) + cum };
        cum = t;
        survival.push((-(cum + comp)).exp());
    }
    Column {
        survival,
        cell_int,
        i_int,
        k_int,
    }
}

/// ρ_0 and its moments at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSlice {
    pub t: f64,
    pub cells: usize,
    /// ρ_0(x_k, a_j), `k * cells + j`.
    pub nodes: Vec<f64>,
    /// Cell averages of ρ_0 on [a_j, a_{j+1}).
    pub averages: Vec<f64>,
    pub mu00: Vec<f64>,
    pub mu10: Vec<f64>,
    /// I(x_k) = ∫ S da.
    pub survival_integral: Vec<f64>,
    pub beta0: Vec<f64>,
}

impl LimitSlice {
    pub fn column(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.cells..(k + 1) * self.cells]
    }

    pub fn averages_column(&self, k: usize) -> &[f64] {
        &self.averages[k * self.cells..(k + 1) * self.cells]
    }
}

/// Solves the limit density at arbitrary times, reusing the survival
/// profiles when ζ_0 does not depend on t.
#[derive(Debug, Clone)]
pub struct Rho0Solver {
    problem: ModelProblem,
    x: Vec<f64>,
    delta_a: f64,
    cells: usize,
    cached: Option<Vec<Column>>,
}

impl Rho0Solver {
    pub fn new(p: &ModelProblem, g: &Grids) -> Self {
        Self::with_age_grid(p, &g.space.x, g.delta_a, g.cells())
    }

    pub fn with_age_grid(p: &ModelProblem, x: &[f64], delta_a: f64, cells: usize) -> Self {
        Rho0Solver {
            problem: p.clone(),
            x: x.to_vec(),
            delta_a,
            cells,
            cached: None,
        }
    }

    pub fn rates_time_dependent(&self) -> bool {
        self.problem.beta0.depends_on(Var::T) || self.problem.zeta0.depends_on(Var::T)
    }

    fn columns(&self, t: f64) -> Result<Vec<Column>> {
        let zeta0 = &self.problem.zeta0;
        let (da, cells) = (self.delta_a, self.cells);
        par::map(self.x.len(), |k| -> Result<Column> {
            let x = self.x[k];
            let nodes: Vec<f64> = if zeta0.depends_on(Var::A) {
                (0..=cells)
                    .map(|j| zeta0.eval(x, j as f64 * da, t))
                    .collect::<std::result::Result<_, _>>()?
            } else {
                vec![zeta0.eval(x, 0.0, t)?; cells + 1]
            };
            Ok(survival_column(&nodes, da))
        })
        .into_iter()
        .collect()
    }

    pub fn solve(&mut self, t: f64) -> Result<LimitSlice> {
        let fresh;
        let cols: &Vec<Column> = if self.problem.zeta0.depends_on(Var::T) {
            fresh = self.columns(t)?;
            &fresh
        } else {
            if self.cached.is_none() {
                self.cached = Some(self.columns(t)?);
            }
            self.cached.as_ref().expect("cached above")
        };
        let nx = self.x.len();
        let cells = self.cells;
        let mut out = LimitSlice {
            t,
            cells,
            nodes: vec![0.0; nx * cells],
            averages: vec![0.0; nx * cells],
            mu00: vec![0.0; nx],
            mu10: vec![0.0; nx],
            survival_integral: vec![0.0; nx],
            beta0: vec![0.0; nx],
        };
        for (k, col) in cols.iter().enumerate() {
            let b = self.problem.beta0.eval(self.x[k], 0.0, t)?;
            let mu = b * col.i_int / (1.0 + b * col.i_int);
            let inflow = b * (1.0 - mu);
            out.beta0[k] = b;
            out.mu00[k] = mu;
            out.mu10[k] = inflow * col.k_int;
            out.survival_integral[k] = col.i_int;
            for j in 0..cells {
                out.nodes[k * cells + j] = inflow * col.survival[j];
                out.averages[k * cells + j] = inflow * col.cell_int[j] / self.delta_a;
            }
        }
        Ok(out)
    }
}

/// ρ_0(·,·,t) with μ_{0,0} from the closed-form fixed point
/// μ = β_0(1−μ)I and μ_{1,0} = β_0(1−μ_{0,0})K. The survival function is
/// integrated exactly cell by cell for the trapezoid-averaged off-rate.
pub fn solve_rho0(p: &ModelProblem, g: &Grids, t: f64) -> Result<LimitSlice> {
    Rho0Solver::new(p, g).solve(t)
}

/// μ_{0,0} and μ_{1,0} at each requested time.
pub fn limit_moment_series(p: &ModelProblem, g: &Grids, times: &[f64]) -> Result<Vec<LimitSlice>> {
    let mut solver = Rho0Solver::new(p, g);
    times.iter().map(|&t| solver.solve(t)).collect()
}

/// ρ̃ on the fast time scale, stored like a density slab.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub m: usize,
    pub ttilde: f64,
    pub cells: usize,
    pub rho: Vec<f64>,
    pub mass: f64,
}

/// Relative size below which ρ_I − ρ_0(·,·,0) is treated as zero: the two
/// fields come from different quadratures and agree only to roundoff when
/// the data are well prepared.
pub const WELL_PREPARED_TOL: f64 = 1e-11;

/// ∫ sup_x |ρ̃| da by the trapezoid rule on the cell values.
pub fn layer_mass(rho: &[f64], cells: usize, delta_a: f64) -> f64 {
    let mut sup = vec![0.0f64; cells];
    for col in rho.chunks(cells) {
        for (s, v) in sup.iter_mut().zip(col) {
            *s = s.max(v.abs());
        }
    }
    let inner: f64 = sup.iter().sum();
    delta_a * (inner - 0.5 * (sup[0] + sup[cells - 1]))
}

/// ρ̃(·,·,0) = averages of ρ_I − averages of ρ_0(·,·,0).
pub fn init_layer_setup(p: &ModelProblem, g: &Grids) -> Result<LayerState> {
    let cells = g.cells();
    let da = g.delta_a;
    let rho0 = solve_rho0(p, g, 0.0)?;
    let x = &g.space.x;
    let mut rho = vec![0.0; g.nx() * cells];
    let res = par::chunks_mut(&mut rho, cells, |k, col| -> Result<()> {
        for (j, v) in col.iter_mut().enumerate() {
            let lo = j as f64 * da;
            *v = gauss4_mean(lo, lo + da, |a| p.rho_i.eval(x[k], a, 0.0))?;
        }
        Ok(())
    });
    res.into_iter().collect::<Result<Vec<()>>>()?;
    let scale = rho
        .iter()
        .chain(&rho0.averages)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for (v, r0) in rho.iter_mut().zip(&rho0.averages) {
        *v -= r0;
        worst = worst.max(v.abs());
    }
    if worst <= WELL_PREPARED_TOL * scale {
        rho.fill(0.0);
    }
    let mass = layer_mass(&rho, cells, da);
    Ok(LayerState {
        m: 0,
        ttilde: 0.0,
        cells,
        rho,
        mass,
    })
}

/// Rates of the layer problem, frozen at t = 0.
#[derive(Debug, Clone)]
pub struct LayerRates {
    pub beta0: Vec<f64>,
    pub zeta0: Vec<f64>,
}

impl LayerRates {
    pub fn new(p: &ModelProblem, g: &Grids) -> Result<Self> {
        let cells = g.cells();
        let mut zeta0 = vec![0.0; g.nx() * cells];
        let mut beta0 = vec![0.0; g.nx()];
        for (k, &x) in g.space.x.iter().enumerate() {
            beta0[k] = p.beta0.eval(x, 0.0, 0.0)?;
            for j in 0..cells {
                zeta0[k * cells + j] = p.zeta0.eval(x, g.age(j), 0.0)?;
            }
        }
        Ok(LayerRates { beta0, zeta0 })
    }
}

fn layer_step_with(state: &mut LayerState, rates: &LayerRates, delta_a: f64) {
    let cells = state.cells;
    for (k, col) in state.rho.chunks_mut(cells).enumerate() {
        let z = &rates.zeta0[k * cells..(k + 1) * cells];
        for j in (1..cells).rev() {
            col[j] = col[j - 1] / (1.0 + delta_a * z[j]);
        }
        let interior: f64 = col[1..].iter().sum();
        let b = rates.beta0[k];
        col[0] = -b * delta_a * interior / (1.0 + delta_a * (z[0] + b));
    }
    state.m += 1;
    state.ttilde = state.m as f64 * delta_a;
    state.mass = layer_mass(&state.rho, cells, delta_a);
}

/// One fast-time step Δt̃ = Δa of the layer problem.
pub fn step_initial_layer(state: &LayerState, p: &ModelProblem, g: &Grids) -> Result<LayerState> {
    let rates = LayerRates::new(p, g)?;
    let mut next = state.clone();
    layer_step_with(&mut next, &rates, g.delta_a);
    Ok(next)
}

/// Layer mass history.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSeries {
    /// (t̃, ∫ sup_x |ρ̃| da).
    pub points: Vec<(f64, f64)>,
    /// First t̃ ≥ 1 at which the mass exceeded mass(0)·exp(−ζ_min t̃ / 2).
    /// This loose bound can be touched by the exact solution near t̃ = 1, so
    /// it is reported rather than enforced.
    pub sanity_violation: Option<f64>,
}

/// Iterates the layer problem from t̃ = 0 to `horizon`.
pub fn layer_decay_series(p: &ModelProblem, g: &Grids, horizon: f64) -> Result<LayerSeries> {
    let rates = LayerRates::new(p, g)?;
    let mut st = init_layer_setup(p, g)?;
    let m0 = st.mass;
    let zmin = p.bounds.zeta_min;
    let steps = (horizon / g.delta_a).round() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    let mut sanity_violation = None;
    points.push((0.0, st.mass));
    for _ in 0..steps {
        layer_step_with(&mut st, &rates, g.delta_a);
        if sanity_violation.is_none()
            && st.ttilde >= 1.0
            && st.mass > m0 * (-0.5 * zmin * st.ttilde).exp()
        {
            sanity_violation = Some(st.ttilde);
        }
        points.push((st.ttilde, st.mass));
    }
    Ok(LayerSeries {
        points,
        sanity_violation,
    })
}
