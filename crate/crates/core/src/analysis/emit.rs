use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use super::table::{ConvergenceTable, CONVERGENCE_HEADER};
use crate::density::{DensityState, DensityTrajectory};
use crate::error::{Error, Result};
use crate::flow::{EnergyRow, FlowFrame};
use crate::grid::{Grids, SpaceGrid};
use crate::limit_density::LimitSlice;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

/// A header plus rows of integers and reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// 17 significant digits; non-finite values spelled `NaN`, `inf`, `-inf`.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&csv_row(row));
        }
        s
    }

    /// Array of row objects in header order; non-finite reals become null.
    pub fn to_json_value(&self) -> Value {
        Value::Array(self.rows.iter().map(|row| json_row(&self.header, row)).collect())
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => json_text(&self.to_json_value()),
        }
    }
}

fn csv_row(row: &[Cell]) -> String {
    let mut s = String::new();
    for (i, c) in row.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        match c {
            Cell::Int(v) => {
                let _ = write!(s, "{v}");
            }
            Cell::Real(v) => s.push_str(&format_real(*v)),
        }
    }
    s.push('\n');
    s
}

fn json_row(header: &[String], row: &[Cell]) -> Value {
    let mut m = Map::new();
    for (h, c) in header.iter().zip(row) {
        let v = match c {
            Cell::Int(v) => Value::from(*v),
            Cell::Real(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
        };
        m.insert(h.clone(), v);
    }
    Value::Object(m)
}

/// Writes a table row by row, producing the same bytes as
/// [`Table::render`] without holding the rows in memory.
pub struct TableWriter {
    out: BufWriter<File>,
    header: Vec<String>,
    format: Format,
    rows: usize,
    path: PathBuf,
}

impl TableWriter {
    pub fn create(dir: &Path, stem: &str, format: Format, header: &[&str]) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{stem}.{}", format.extension()));
        let mut out = BufWriter::new(File::create(&path)?);
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        match format {
            Format::Csv => writeln!(out, "{}", header.join(","))?,
            Format::Json => out.write_all(b"[")?,
        }
        Ok(TableWriter {
            out,
            header,
            format,
            rows: 0,
            path,
        })
    }

    pub fn row(&mut self, row: &[Cell]) -> Result<()> {
        debug_assert_eq!(row.len(), self.header.len());
        match self.format {
            Format::Csv => self.out.write_all(csv_row(row).as_bytes())?,
            Format::Json => {
                let obj = serde_json::to_string_pretty(&json_row(&self.header, row)).expect("values are always serializable");
                self.out.write_all(if self.rows == 0 { b"\n" } else { b",\n" })?;
                for (i, line) in obj.lines().enumerate() {
                    if i > 0 {
                        self.out.write_all(b"\n")?;
                    }
                    write!(self.out, "  {line}")?;
                }
            }
        }
        self.rows += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        if self.format == Format::Json {
            self.out.write_all(if self.rows == 0 { b"]\n" } else { b"\n]\n" })?;
        }
        self.out.flush()?;
        Ok(self.path)
    }
}

pub fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values are always serializable");
    s.push('\n');
    s
}

/// Writes `text` to `dir/stem.ext`, creating `dir` if needed.
pub fn write_text(dir: &Path, stem: &str, format: Format, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.{}", format.extension()));
    std::fs::write(&path, text).map_err(Error::Io)?;
    Ok(path)
}

pub fn emit(table: &Table, dir: &Path, stem: &str, format: Format) -> Result<PathBuf> {
    write_text(dir, stem, format, &table.render(format))
}

pub fn emit_convergence(table: &ConvergenceTable, dir: &Path, stem: &str, format: Format) -> Result<PathBuf> {
    let text = match format {
        Format::Csv => convergence_table(table).to_csv(),
        Format::Json => json_text(&serde_json::to_value(table).expect("table serializes")),
    };
    write_text(dir, stem, format, &text)
}

pub const DENSITY_HEADER: [&str; 7] = ["n", "t", "j", "a", "k", "x", "rho"];
pub const MOMENT_HEADER: [&str; 5] = ["n", "t", "k", "x", "s"];
pub const ENERGY_HEADER: [&str; 7] = ["n", "t", "E", "D", "lambda_l1", "Ldotz_l1", "dz_l2sq"];
pub const LIMIT_DENSITY_HEADER: [&str; 5] = ["t", "k", "x", "mu00", "mu10"];
pub const LAYER_HEADER: [&str; 2] = ["ttilde", "mass"];

/// `n,t,k,x,z_1..z_d,lambda`.
pub fn flow_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = ["n", "t", "k", "x"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=d).map(|c| format!("z_{c}")));
    h.push("lambda".to_string());
    h
}

/// Rows of one density slab, ages outer and nodes inner.
pub fn density_rows<'a>(g: &'a Grids, slab: &'a DensityState) -> impl Iterator<Item = Vec<Cell>> + 'a {
    let cells = g.cells();
    let time = g.time(slab.n);
    (0..cells).flat_map(move |j| {
        (0..g.nx()).map(move |k| {
            vec![
                slab.n.into(),
                time.into(),
                j.into(),
                g.age(j).into(),
                k.into(),
                g.space.x[k].into(),
                slab.rho[k * cells + j].into(),
            ]
        })
    })
}

pub fn moment_rows<'a>(g: &'a Grids, n: i64, s: &'a [f64]) -> impl Iterator<Item = Vec<Cell>> + 'a {
    let time = g.time(n);
    s.iter()
        .enumerate()
        .map(move |(k, v)| vec![n.into(), time.into(), k.into(), g.space.x[k].into(), (*v).into()])
}

pub fn density_table(traj: &DensityTrajectory) -> Table {
    let mut t = Table::new(&DENSITY_HEADER);
    for slab in &traj.slabs {
        t.rows.extend(density_rows(&traj.grids, slab));
    }
    t
}

/// Moments at the stored slab times.
pub fn moment_table(traj: &DensityTrajectory) -> Table {
    let mut t = Table::new(&MOMENT_HEADER);
    for slab in &traj.slabs {
        t.rows.extend(moment_rows(&traj.grids, slab.n, traj.moment(slab.n)));
    }
    t
}

pub fn flow_table(frames: &[FlowFrame], space: &SpaceGrid) -> Table {
    let d = frames.first().map_or(2, |f| f.z.d());
    let mut t = Table {
        header: flow_header(d),
        rows: Vec::new(),
    };
    for f in frames {
        for k in 0..f.z.nx() {
            let mut row: Vec<Cell> = vec![f.n.into(), f.t.into(), k.into(), space.x[k].into()];
            row.extend(f.z.node(k).iter().map(|v| Cell::Real(*v)));
            row.push(f.lambda[k].into());
            t.push(row);
        }
    }
    t
}

pub fn energy_table(rows: &[EnergyRow]) -> Table {
    let mut t = Table::new(&ENERGY_HEADER);
    for r in rows {
        t.push(vec![
            r.n.into(),
            r.t.into(),
            r.energy.into(),
            r.dissipation.into(),
            r.lambda_l1.into(),
            r.ldotz_l1.into(),
            r.dz_l2sq.into(),
        ]);
    }
    t
}

pub fn limit_density_table(slices: &[LimitSlice], space: &SpaceGrid) -> Table {
    let mut t = Table::new(&LIMIT_DENSITY_HEADER);
    for s in slices {
        for k in 0..s.mu00.len() {
            t.push(vec![s.t.into(), k.into(), space.x[k].into(), s.mu00[k].into(), s.mu10[k].into()]);
        }
    }
    t
}

pub fn layer_table(points: &[(f64, f64)]) -> Table {
    let mut t = Table::new(&LAYER_HEADER);
    for &(tt, m) in points {
        t.push(vec![tt.into(), m.into()]);
    }
    t
}

pub fn convergence_table(table: &ConvergenceTable) -> Table {
    let mut t = Table::new(&CONVERGENCE_HEADER);
    for r in &table.rows {
        t.push(r.to_cells().into_iter().map(Cell::Real).collect());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::table::{ConvergenceRow, SweepKind};

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(energy_table(&[]).to_csv(), "n,t,E,D,lambda_l1,Ldotz_l1,dz_l2sq\n");
        assert_eq!(layer_table(&[]).to_csv(), "ttilde,mass\n");
        assert_eq!(flow_header(3).join(","), "n,t,k,x,z_1,z_2,z_3,lambda");
    }

    #[test]
    fn reals_use_seventeen_digits() {
        let mut t = Table::new(&["n", "v"]);
        t.push(vec![Cell::Int(3), Cell::Real(0.1)]);
        t.push(vec![Cell::Int(-1), Cell::Real(f64::NAN)]);
        assert_eq!(t.to_csv(), "n,v\n3,1.0000000000000001e-1\n-1,NaN\n");
        let v = t.to_json_value();
        assert_eq!(v[1]["v"], Value::Null);
        assert_eq!(v[0]["n"], Value::from(3));
        let keys: Vec<_> = v[0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["n", "v"]);
    }

    #[test]
    fn emitted_json_reparses_to_the_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ConvergenceTable::new(SweepKind::Epsilon);
        let mut r = ConvergenceRow::new(0.2, 0.04, 0.008);
        r.err_z_c0 = 1.0 / 3.0;
        table.rows.push(r);
        table.rows.push(ConvergenceRow::new(0.1, 0.02, 0.002));
        table.compute_orders();
        let path = emit_convergence(&table, dir.path(), "sweep", Format::Json).unwrap();
        let back: ConvergenceTable = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert!(back.same_as(&table));
        let csv = emit_convergence(&table, dir.path(), "sweep", Format::Csv).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), CONVERGENCE_HEADER.join(","));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn streamed_output_matches_rendered_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["n", "v", "w"]);
        t.push(vec![Cell::Int(0), Cell::Real(0.5), Cell::Real(f64::INFINITY)]);
        t.push(vec![Cell::Int(-1), Cell::Real(-2e-300), Cell::Real(f64::NAN)]);
        let empty = Table::new(&["n", "v", "w"]);
        for format in [Format::Csv, Format::Json] {
            for (stem, table) in [("full", &t), ("empty", &empty)] {
                let mut w = TableWriter::create(dir.path(), stem, format, &["n", "v", "w"]).unwrap();
                for row in &table.rows {
                    w.row(row).unwrap();
                }
                let path = w.finish().unwrap();
                assert_eq!(std::fs::read_to_string(path).unwrap(), table.render(format), "{stem} {format:?}");
            }
        }
    }
}
