//! Fixed 4-point Gauss-Legendre rule.

const NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

/// ∫_lo^hi f.
pub fn gauss4<E>(lo: f64, hi: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut acc = 0.0;
    for (xi, w) in NODES.iter().zip(WEIGHTS) {
        acc += w * f(mid + half * xi)?;
    }
    Ok(acc * half)
}

/// (1/(hi-lo)) ∫_lo^hi f.
pub fn gauss4_mean<E>(lo: f64, hi: f64, f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    Ok(gauss4(lo, hi, f)? / (hi - lo))
}

/// Averages of a vector-valued map; `out` receives the component means.
pub fn gauss4_mean_vec<E>(
    lo: f64,
    hi: f64,
    out: &mut [f64],
    mut f: impl FnMut(f64, &mut [f64]) -> Result<(), E>,
) -> Result<(), E> {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut buf = vec![0.0; out.len()];
    out.fill(0.0);
    for (xi, w) in NODES.iter().zip(WEIGHTS) {
        f(mid + half * xi, &mut buf)?;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o += 0.5 * w * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn exact_for_degree_seven() {
        let v = gauss4(0.0, 2.0, |x| Ok::<_, Infallible>(x.powi(7))).unwrap();
        assert!((v - 32.0).abs() < 1e-12);
        let m = gauss4_mean(1.0, 3.0, |x| Ok::<_, Infallible>(x * x)).unwrap();
        assert!((m - 13.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn exponential_cell() {
        let da = 0.02;
        let m = gauss4_mean(0.0, da, |a| Ok::<_, Infallible>((-a).exp())).unwrap();
        assert!((m + (-da as f64).exp_m1() / da).abs() < 1e-15);
    }
}
