use serde::{Deserialize, Deserializer, Serialize};

/// Errors below this are roundoff and get no observed order.
pub const ORDER_FLOOR: f64 = 1e-13;

/// Which parameter a table sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Epsilon,
    DeltaA,
}

fn nan_for_null<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One sweep member. Unused columns hold NaN (written as `NaN` in CSV and
/// `null` in JSON).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub param: f64,
    pub delta_a: f64,
    pub delta_t: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub err_z_c0: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub err_rho: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub err_rho_weighted: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub lambda_l1_sup: f64,
    #[serde(rename = "Ldotz_l1", deserialize_with = "nan_for_null")]
    pub ldotz_l1: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub h1_time_sum: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub order_z_c0: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub order_rho: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub order_rho_weighted: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub order_lambda_l1_sup: f64,
    #[serde(rename = "order_Ldotz_l1", deserialize_with = "nan_for_null")]
    pub order_ldotz_l1: f64,
    #[serde(deserialize_with = "nan_for_null")]
    pub order_h1_time_sum: f64,
}

impl ConvergenceRow {
    pub fn new(param: f64, delta_a: f64, delta_t: f64) -> Self {
        let nan = f64::NAN;
        ConvergenceRow {
            param,
            delta_a,
            delta_t,
            err_z_c0: nan,
            err_rho: nan,
            err_rho_weighted: nan,
            lambda_l1_sup: nan,
            ldotz_l1: nan,
            h1_time_sum: nan,
            order_z_c0: nan,
            order_rho: nan,
            order_rho_weighted: nan,
            order_lambda_l1_sup: nan,
            order_ldotz_l1: nan,
            order_h1_time_sum: nan,
        }
    }

    fn values(&self) -> [f64; 6] {
        [
            self.err_z_c0,
            self.err_rho,
            self.err_rho_weighted,
            self.lambda_l1_sup,
            self.ldotz_l1,
            self.h1_time_sum,
        ]
    }

    fn orders_mut(&mut self) -> [&mut f64; 6] {
        [
            &mut self.order_z_c0,
            &mut self.order_rho,
            &mut self.order_rho_weighted,
            &mut self.order_lambda_l1_sup,
            &mut self.order_ldotz_l1,
            &mut self.order_h1_time_sum,
        ]
    }

    pub fn to_cells(&self) -> Vec<f64> {
        let mut v = vec![self.param, self.delta_a, self.delta_t];
        v.extend(self.values());
        v.extend([
            self.order_z_c0,
            self.order_rho,
            self.order_rho_weighted,
            self.order_lambda_l1_sup,
            self.order_ldotz_l1,
            self.order_h1_time_sum,
        ]);
        v
    }

    /// Bitwise equality, so NaN markers compare equal.
    pub fn same_as(&self, other: &ConvergenceRow) -> bool {
        self.to_cells()
            .iter()
            .zip(other.to_cells())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub kind: SweepKind,
    pub rows: Vec<ConvergenceRow>,
}

pub const CONVERGENCE_HEADER: [&str; 15] = [
    "param",
    "delta_a",
    "delta_t",
    "err_z_c0",
    "err_rho",
    "err_rho_weighted",
    "lambda_l1_sup",
    "Ldotz_l1",
    "h1_time_sum",
    "order_z_c0",
    "order_rho",
    "order_rho_weighted",
    "order_lambda_l1_sup",
    "order_Ldotz_l1",
    "order_h1_time_sum",
];

/// True when `fine` is exactly half of `coarse` up to representation.
pub fn is_halving(coarse: f64, fine: f64) -> bool {
    (coarse - 2.0 * fine).abs() <= 1e-12 * coarse.abs()
}

/// log2(coarse/fine), or NaN when either value is below [`ORDER_FLOOR`] or
/// not finite.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    if !(coarse >= ORDER_FLOOR && fine >= ORDER_FLOOR) || !coarse.is_finite() || !fine.is_finite() {
        return f64::NAN;
    }
    (coarse / fine).log2()
}

impl ConvergenceTable {
    pub fn new(kind: SweepKind) -> Self {
        ConvergenceTable { kind, rows: Vec::new() }
    }

    /// Fills the order columns; row i gets the order between rows i−1 and
    /// i when its parameter is exactly half the previous one.
    pub fn compute_orders(&mut self) {
        for i in 1..self.rows.len() {
            let prev = self.rows[i - 1];
            let halving = is_halving(prev.param, self.rows[i].param);
            let cur = self.rows[i].values();
            for (c, slot) in self.rows[i].orders_mut().into_iter().enumerate() {
                *slot = if halving {
                    observed_order(prev.values()[c], cur[c])
                } else {
                    f64::NAN
                };
            }
        }
    }

    pub fn same_as(&self, other: &ConvergenceTable) -> bool {
        self.kind == other.kind
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.same_as(b))
    }

    /// Ratios of consecutive values of one column.
    pub fn ratios(&self, column: impl Fn(&ConvergenceRow) -> f64) -> Vec<f64> {
        self.rows.windows(2).map(|w| column(&w[1]) / column(&w[0])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_only_across_halvings() {
        let mut t = ConvergenceTable::new(SweepKind::DeltaA);
        for (p, e) in [(0.04, 0.08), (0.02, 0.04), (0.015, 0.03), (0.0075, 1e-14)] {
            let mut r = ConvergenceRow::new(p, p, 0.1 * p);
            r.err_rho = e;
            t.rows.push(r);
        }
        t.compute_orders();
        assert!(t.rows[0].order_rho.is_nan());
        assert!((t.rows[1].order_rho - 1.0).abs() < 1e-12);
        assert!(t.rows[2].order_rho.is_nan());
        assert!(t.rows[3].order_rho.is_nan());
        assert!(t.rows[1].order_z_c0.is_nan());
    }

    #[test]
    fn json_round_trip_keeps_nan_markers() {
        let mut t = ConvergenceTable::new(SweepKind::Epsilon);
        let mut r = ConvergenceRow::new(0.1, 0.02, 0.002);
        r.err_z_c0 = 0.125;
        t.rows.push(r);
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"err_rho\":null"));
        let back: ConvergenceTable = serde_json::from_str(&text).unwrap();
        assert!(back.same_as(&t));
    }
}
