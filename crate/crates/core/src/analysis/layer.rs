use serde::Serialize;

use crate::error::Result;
use crate::grid::Grids;
use crate::limit_density::{layer_decay_series, LayerSeries};
use crate::model::{ModelProblem, NumericsParams};

/// Fit window in fast time.
pub const FIT_WINDOW: (f64, f64) = (1.0, 5.0);
/// Masses at or below this count as underflow.
pub const MASS_FLOOR: f64 = 1e-290;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerVerdict {
    /// Well-prepared data: the layer mass is identically zero.
    Exact,
    Fitted,
    /// The mass reached the floor inside the window.
    Underflow,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub verdict: LayerVerdict,
    /// Least-squares slope of ln(mass) on the window (NaN if not fitted).
    pub slope: f64,
    pub zeta_min: f64,
    /// −0.9 ζ_min.
    pub threshold: f64,
    pub points_used: usize,
    pub initial_mass: f64,
    pub sanity_violation: Option<f64>,
    pub passed: bool,
}

/// Least-squares slope of y on x.
pub fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

pub fn layer_report(series: &LayerSeries, zeta_min: f64) -> LayerReport {
    let threshold = -0.9 * zeta_min;
    let initial_mass = series.points.first().map_or(0.0, |p| p.1);
    let window: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter(|p| p.0 >= FIT_WINDOW.0 - 1e-12 && p.0 <= FIT_WINDOW.1 + 1e-12)
        .copied()
        .collect();
    let mut report = LayerReport {
        verdict: LayerVerdict::Fitted,
        slope: f64::NAN,
        zeta_min,
        threshold,
        points_used: 0,
        initial_mass,
        sanity_violation: series.sanity_violation,
        passed: false,
    };
    if series.points.iter().all(|p| p.1 == 0.0) {
        report.verdict = LayerVerdict::Exact;
        report.passed = true;
        return report;
    }
    let logs: Vec<(f64, f64)> = window
        .iter()
        .filter(|p| p.1 > MASS_FLOOR)
        .map(|p| (p.0, p.1.ln()))
        .collect();
    report.points_used = logs.len();
    report.slope = ls_slope(&logs);
    if logs.len() < window.len() {
        report.verdict = LayerVerdict::Underflow;
        report.passed = true;
    } else {
        report.passed = report.slope <= threshold;
    }
    report
}

/// Runs the layer series to `horizon` and fits its decay.
pub fn initial_layer_report(p: &ModelProblem, numerics: &NumericsParams, horizon: f64) -> Result<(LayerReport, LayerSeries)> {
    let g = Grids::new(p, numerics);
    let series = layer_decay_series(p, &g, horizon)?;
    Ok((layer_report(&series, p.bounds.zeta_min), series))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64) -> LayerSeries {
        LayerSeries {
            points: (0..=60).map(|i| (0.1 * i as f64, f(0.1 * i as f64))).collect(),
            sanity_violation: None,
        }
    }

    #[test]
    fn fits_exponential_slope() {
        let r = layer_report(&series(|t| 0.3 * (-1.2 * t).exp()), 1.0);
        assert_eq!(r.verdict, LayerVerdict::Fitted);
        assert!((r.slope + 1.2).abs() < 1e-10);
        assert_eq!(r.points_used, 41);
        assert!(r.passed);
        let r = layer_report(&series(|t| (-0.5 * t).exp()), 1.0);
        assert!(!r.passed);
    }

    #[test]
    fn zero_mass_is_exact_and_underflow_passes() {
        let r = layer_report(&series(|_| 0.0), 1.0);
        assert_eq!(r.verdict, LayerVerdict::Exact);
        assert!(r.passed && r.slope.is_nan());
        let r = layer_report(&series(|t| if t < 3.0 { (-t).exp() } else { 0.0 }), 1.0);
        assert_eq!(r.verdict, LayerVerdict::Underflow);
        assert!(r.passed);
    }
}
