use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::density::tests::setup;
use crate::density::init_density;
use crate::model::Setup;

fn small(eps: f64, nx: usize) -> (Setup, Grids) {
    let mut s = setup(&[("epsilon", &eps.to_string())], 0.05, nx);
    s.numerics = NumericsParams::new(eps, 0.05, nx, Some(0.5), 1e-12, &s.problem.bounds);
    let g = Grids::new(&s.problem, &s.numerics);
    (s, g)
}

fn unit(rng: &mut ChaCha8Rng, nx: usize, d: usize) -> NodeField {
    let mut z = NodeField::from_fn(nx, d, |_, v| v.iter_mut().for_each(|c| *c = rng.gen_range(-1.0..1.0)));
    z.normalize();
    z
}

fn random_history(rng: &mut ChaCha8Rng, g: &Grids, d: usize, scale_norm: bool) -> HistoryBuffer {
    let fields = (0..g.j_max + 2)
        .map(|_| {
            let mut z = unit(rng, g.nx(), d);
            if scale_norm {
                let f: f64 = rng.gen_range(0.7..1.0);
                z.as_mut_slice().iter_mut().for_each(|c| *c *= f);
            }
            z
        })
        .collect();
    HistoryBuffer::from_fields(fields, 4)
}

fn random_density(rng: &mut ChaCha8Rng, g: &Grids) -> DensityState {
    let mut st = DensityState::zeros(5, g.nx(), g.cells());
    st.rho.iter_mut().for_each(|r| *r = rng.gen_range(0.0..1.0));
    st.recompute_moment(g.delta_a);
    st
}

#[test]
fn quadratic_form_matches_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (_, g) = small(0.1, 9);
    for d in [2, 3] {
        let h = random_history(&mut rng, &g, d, true);
        let rho = random_density(&mut rng, &g);
        let q = DelayQuadratic::assemble(&h, &rho, &g);
        let w = NodeField::from_fn(9, d, |_, v| v.iter_mut().for_each(|c| *c = rng.gen_range(-2.0..2.0)));
        let (e1, e2) = (q.energy(&w), energy(&w, &h, &rho, &g));
        assert!((e1 - e2).abs() <= 1e-12 * e2.abs(), "{e1} {e2}");
        let (g1, g2) = (q.gradient(&w), energy_gradient(&w, &h, &rho, &g));
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()), "{a} {b}");
        }
        let w2 = NodeField::from_fn(9, d, |_, v| v.iter_mut().for_each(|c| *c = rng.gen_range(-2.0..2.0)));
        let diff = q.energy_difference(&w2, &w);
        assert!((diff - (q.energy(&w2) - q.energy(&w))).abs() < 1e-10 * (1.0 + e1.abs()));

        let mut h2 = h.clone();
        h2.push(w.clone());
        let direct = delay_operator_l(&h2, &rho, &g);
        let quad = q.delay_force(&w);
        for (a, b) in quad.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()), "{a} {b}");
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (_, g) = small(0.05, 7);
    let h = random_history(&mut rng, &g, 3, true);
    let rho = random_density(&mut rng, &g);
    let w = NodeField::from_fn(7, 3, |_, v| v.iter_mut().for_each(|c| *c = rng.gen_range(-1.5..1.5)));
    let grad = energy_gradient(&w, &h, &rho, &g);
    let step = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..w.as_slice().len() {
        let mut a = w.clone();
        a.as_mut_slice()[i] += step;
        let mut b = w.clone();
        b.as_mut_slice()[i] -= step;
        let fd = (energy(&a, &h, &rho, &g) - energy(&b, &h, &rho, &g)) / (2.0 * step);
        worst = worst.max((fd - grad.as_slice()[i]).abs());
    }
    let scale = grad.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 1e-6 * scale, "{worst} vs {scale}");
}

#[test]
fn energy_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_, g) = small(0.1, 9);
    let e = NodeField::constant(9, &[0.0, 1.0]);
    let h = HistoryBuffer::from_fields(vec![e.clone(); g.j_max + 2], 0);
    let rho = random_density(&mut rng, &g);
    assert_eq!(energy(&e, &h, &rho, &g), 0.0);
    assert!(energy_gradient(&e, &h, &rho, &g).as_slice().iter().all(|v| *v == 0.0));
    let w = unit(&mut rng, 9, 2);
    let empty = DensityState::zeros(0, 9, g.cells());
    let direct = crate::grid::dirichlet_energy(&w, &g.space);
    assert_eq!(energy(&w, &h, &empty, &g), direct);
}

#[test]
fn delay_force_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, g) = small(0.1, 5);
    let e = NodeField::constant(5, &[1.0, 0.0]);
    let h = HistoryBuffer::from_fields(vec![e.clone(); g.j_max + 2], 0);
    let rho = random_density(&mut rng, &g);
    assert!(delay_operator_l(&h, &rho, &g).as_slice().iter().all(|v| *v == 0.0));

    let h = random_history(&mut rng, &g, 2, false);
    let mut single = DensityState::zeros(0, 5, g.cells());
    let jstar = 3;
    for k in 0..5 {
        single.rho[k * g.cells() + jstar] = 0.8;
    }
    let l = delay_operator_l(&h, &single, &g);
    let v = elongation_v(&h, jstar, g.epsilon);
    for (a, b) in l.as_slice().iter().zip(v.as_slice()) {
        assert!((a - g.delta_a * 0.8 * b).abs() < 1e-14);
    }

    // L·z equals the weighted sum of half squared distances when the whole
    // history is unit length
    let rho = random_density(&mut rng, &g);
    let l = delay_operator_l(&h, &rho, &g);
    let z = h.entry(0);
    for k in 0..5 {
        let col = rho.column(k);
        let mut rhs = col[0] * dist2(z.node(k), h.entry(1).node(k));
        for j in 1..g.cells() {
            rhs += col[j] * (dist2(z.node(k), h.entry(j).node(k)) + dist2(z.node(k), h.entry(j + 1).node(k)));
        }
        rhs *= g.delta_a / (4.0 * g.epsilon);
        let lhs = crate::grid::dot(l.node(k), z.node(k));
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs), "{lhs} {rhs}");
        assert!(lhs >= -1e-12);
    }
}

#[test]
fn lagrange_multiplier_examples() {
    let (_, g) = small(0.1, 9);
    let e = NodeField::constant(9, &[0.6, 0.8]);
    let zero = NodeField::zeros(9, 2);
    assert!(lagrange_multiplier(&e, &zero, &g.space).iter().all(|v| *v == 0.0));
}

#[test]
fn dissipation_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (_, g) = small(0.1, 5);
    let e = NodeField::constant(5, &[1.0, 0.0]);
    let rho = random_density(&mut rng, &g);
    let zeta = vec![1.0; 5 * g.cells()];
    let h = HistoryBuffer::from_fields(vec![e.clone(); g.j_max + 2], 0);
    assert_eq!(dissipation(&h, &rho, &zeta, &g, g.epsilon), 0.0);

    // only z^n differs from a constant past: V_0 = (e2 − e1)/(2ε) and
    // V_j = (e2 − e1)/ε for j ≥ 1; keep only ρ_1 to isolate the j = 0 term
    let mut h = HistoryBuffer::from_fields(vec![e.clone(); g.j_max + 2], 0);
    h.push(NodeField::constant(5, &[0.0, 1.0]));
    let mut single = DensityState::zeros(0, 5, g.cells());
    for k in 0..5 {
        single.rho[k * g.cells() + 1] = 0.4;
    }
    let v2 = 2.0 / (4.0 * g.epsilon * g.epsilon);
    let expect = 0.5 * g.delta_a * v2 * 0.4 * 1.0;
    let got = dissipation(&h, &single, &zeta, &g, g.epsilon);
    assert!((got - expect).abs() < 1e-12 * expect, "{got} {expect}");

    for _ in 0..5 {
        let h = random_history(&mut rng, &g, 3, true);
        let rho = random_density(&mut rng, &g);
        assert!(dissipation(&h, &rho, &zeta, &g, g.epsilon) >= 0.0);
    }
}

#[test]
fn minimizer_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (s, g) = small(0.1, 17);
    let opts = MinimizerOptions::from_numerics(&s.numerics);
    let rho = init_density(&s.problem, &g, InitMode::CellAverage).unwrap();

    let e = NodeField::constant(17, &[0.0, 0.0, 1.0]);
    let h = HistoryBuffer::from_fields(vec![e.clone(); g.j_max + 2], 0);
    let z = minimize_step(&h, &rho, &g, &opts).unwrap();
    assert!(crate::grid::c0_error(&[z], &[e]).unwrap() <= 1e-8);

    // spatially constant data stays spatially constant
    let fields = (0..g.j_max + 2)
        .map(|i| {
            let th = 0.01 * i as f64;
            NodeField::constant(17, &[th.cos(), th.sin()])
        })
        .rev()
        .collect();
    let h = HistoryBuffer::from_fields(fields, 0);
    let z = minimize_step(&h, &rho, &g, &opts).unwrap();
    for k in 0..17 {
        assert!(dist2(z.node(k), z.node(0)).sqrt() <= 1e-8);
    }

    // a random history: both preconditioners agree and tighter tolerance
    // never raises the energy
    let h = random_history(&mut rng, &g, 3, true);
    let q = DelayQuadratic::assemble(&h, &rho, &g);
    let start = h.entry(0);
    let a = minimize_quadratic(&q, start, &opts, 0).unwrap();
    let mut start_n = start.clone();
    start_n.normalize();
    assert!(a.energy <= q.energy(&start_n) + 1e-14);
    assert!(a.residual <= opts.tol_grad);
    assert!(a.z.max_unit_deviation() <= 1e-12);
    let half = MinimizerOptions {
        tol_grad: opts.tol_grad / 2.0,
        ..opts
    };
    let b = minimize_quadratic(&q, start, &half, 0).unwrap();
    assert!(b.energy <= a.energy + 1e-13 * (1.0 + a.energy.abs()), "{} {}", b.energy, a.energy);
    let plain = MinimizerOptions {
        preconditioner: Preconditioner::Identity,
        tol_grad: 1e-7,
        max_inner: 200_000,
        ..opts
    };
    let c = minimize_quadratic(&q, start, &plain, 0).unwrap();
    let gap = crate::grid::c0_error(&[a.z.clone()], &[c.z.clone()]).unwrap();
    assert!(gap < 1e-4, "{gap} {} {} {} {}", a.energy, c.energy, a.iterations, c.iterations);
    assert!(a.iterations < 200, "{}", a.iterations);
    let probe = warm_start_probe(&q, start, &opts, 1e-3).unwrap();
    assert!(probe.is_finite());
}

#[test]
fn constant_past_is_invariant() {
    let (mut s, _) = small(0.1, 9);
    s.problem.z_p = vec![crate::model::RateExpr::constant(0.6), crate::model::RateExpr::constant(0.8)];
    s.problem.horizon = 0.05;
    let opts = MinimizerOptions::from_numerics(&s.numerics);
    let traj = run_flow(&s.problem, &s.numerics, InitMode::CellAverage, &opts, 1).unwrap();
    let e = NodeField::constant(9, &[0.6, 0.8]);
    for f in &traj.frames {
        assert!(crate::grid::c0_error(&[f.z.clone()], &[e.clone()]).unwrap() <= 1e-8);
        assert!(f.lambda.iter().all(|v| v.abs() < 1e-12));
    }
    for r in &traj.report.rows {
        assert!(r.energy <= 1e-16 && r.dissipation.abs() <= 1e-16, "{r:?}");
    }
}

#[test]
fn energy_decreases_for_cosine_phase() {
    let (mut s, _) = small(0.1, 17);
    s.problem.z_p = vec![
        crate::model::RateExpr::parse("cos(0.5*cos(pi*x))").unwrap(),
        crate::model::RateExpr::parse("sin(0.5*cos(pi*x))").unwrap(),
    ];
    s.problem.horizon = 0.1;
    let opts = MinimizerOptions::from_numerics(&s.numerics);
    let report = run_flow_observed(&s.problem, &s.numerics, InitMode::CellAverage, &opts, |_| Ok(())).unwrap();
    assert!(report.max_chain_excess <= report.tol_energy);
    let first = report.rows.first().unwrap().energy;
    let last = report.rows.last().unwrap().energy;
    assert!(last < first);
    assert!(report.max_lambda <= SIGN_TOL);
}
