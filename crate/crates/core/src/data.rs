//! Datasets of `(Y, X, Z)` samples, row splitting and CSV I/O.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FloodgateError, Result};
use crate::report::fmt_float;
use crate::rng;

/// Dense row-major matrix. Rows are contiguous so a row can be handed to a
/// regression function as a plain slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMatrix {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl RowMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        RowMatrix {
            data: vec![0.0; nrows * ncols],
            nrows,
            ncols,
        }
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(FloodgateError::Shape(format!(
                "expected {} entries for a {nrows}x{ncols} matrix, got {}",
                nrows * ncols,
                data.len()
            )));
        }
        Ok(RowMatrix { data, nrows, ncols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(FloodgateError::Shape(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(RowMatrix {
            data,
            nrows: rows.len(),
            ncols,
        })
    }

    /// An `nrows x 0` matrix (no conditioning covariates).
    pub fn empty(nrows: usize) -> Self {
        RowMatrix {
            data: Vec::new(),
            nrows,
            ncols: 0,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> RowMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        RowMatrix {
            data,
            nrows: rows.len(),
            ncols: self.ncols,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> RowMatrix {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for i in 0..self.nrows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        RowMatrix {
            data,
            nrows: self.nrows,
            ncols: cols.len(),
        }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &RowMatrix) -> Result<RowMatrix> {
        if self.nrows != other.nrows {
            return Err(FloodgateError::Shape(format!(
                "cannot stack {} rows with {} rows",
                self.nrows, other.nrows
            )));
        }
        let ncols = self.ncols + other.ncols;
        let mut data = Vec::with_capacity(self.nrows * ncols);
        for i in 0..self.nrows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(RowMatrix {
            data,
            nrows: self.nrows,
            ncols,
        })
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }
}

/// `n` samples of `(Y, X, Z)`. `X` may hold several columns (group importance).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: RowMatrix,
    z: RowMatrix,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: RowMatrix, z: RowMatrix) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(FloodgateError::Size("dataset has no rows".into()));
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(FloodgateError::Shape(format!(
                "row counts differ: y has {n}, x has {}, z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(FloodgateError::Shape("x needs at least one column".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(FloodgateError::validation(
                "y",
                format!("non-finite value in row {i}"),
            ));
        }
        for (name, m) in [("x", &x), ("z", &z)] {
            if let Some(k) = m.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(FloodgateError::validation(
                    name,
                    format!("non-finite value in row {}", k / m.ncols().max(1)),
                ));
            }
        }
        Ok(Dataset { y, x, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    pub fn dz(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &RowMatrix {
        &self.x
    }

    pub fn z(&self) -> &RowMatrix {
        &self.z
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        self.z.row(i)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: rows.iter().map(|&r| self.y[r]).collect(),
            x: self.x.select_rows(rows),
            z: self.z.select_rows(rows),
        }
    }

    /// All covariates as one matrix `[X | Z]`.
    pub fn covariates(&self) -> RowMatrix {
        self.x.hstack(&self.z).expect("row counts validated")
    }

    /// Re-partition the covariates `[X | Z]` so that `focal` (column indices
    /// into `[X | Z]`) becomes the new `X` and every other column, in order,
    /// becomes the new `Z`.
    pub fn refocus(&self, focal: &[usize]) -> Result<Dataset> {
        let w = self.covariates();
        let (xcols, zcols) = partition_columns(w.ncols(), focal)?;
        Dataset::new(
            self.y.clone(),
            w.select_columns(&xcols),
            w.select_columns(&zcols),
        )
    }

    /// Replace the response (e.g. by a fixed transformation of `Y`).
    pub fn with_response(&self, y: Vec<f64>) -> Result<Dataset> {
        Dataset::new(y, self.x.clone(), self.z.clone())
    }

    pub fn map_response(&self, g: impl Fn(f64) -> f64) -> Result<Dataset> {
        self.with_response(self.y.iter().map(|&v| g(v)).collect())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut y_col = None;
        let mut x_cols: Vec<(usize, usize)> = Vec::new();
        let mut z_cols: Vec<(usize, usize)> = Vec::new();
        for (pos, name) in headers.iter().enumerate() {
            let name = name.trim();
            if name == "y" {
                y_col = Some(pos);
            } else if let Some(k) = column_index(name, 'x') {
                x_cols.push((k, pos));
            } else if let Some(k) = column_index(name, 'z') {
                z_cols.push((k, pos));
            } else {
                return Err(FloodgateError::validation(
                    "header",
                    format!("unexpected column `{name}` (expected y, x1.., z1..)"),
                ));
            }
        }
        let y_col =
            y_col.ok_or_else(|| FloodgateError::validation("header", "missing column `y`"))?;
        x_cols.sort_unstable();
        z_cols.sort_unstable();
        for (cols, prefix) in [(&x_cols, 'x'), (&z_cols, 'z')] {
            for (expect, (k, _)) in cols.iter().enumerate() {
                if *k != expect + 1 {
                    return Err(FloodgateError::validation(
                        "header",
                        format!(
                            "{prefix} columns must be numbered 1..{} without gaps",
                            cols.len()
                        ),
                    ));
                }
            }
        }
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut z = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let cell = |pos: usize| -> Result<f64> {
                let raw = record.get(pos).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| {
                    FloodgateError::validation(
                        headers.get(pos).unwrap_or("?"),
                        format!("row {}: cannot parse `{raw}` as a number", row + 1),
                    )
                })?;
                if !v.is_finite() {
                    return Err(FloodgateError::validation(
                        headers.get(pos).unwrap_or("?"),
                        format!("row {}: non-finite value", row + 1),
                    ));
                }
                Ok(v)
            };
            y.push(cell(y_col)?);
            for &(_, pos) in &x_cols {
                x.push(cell(pos)?);
            }
            for &(_, pos) in &z_cols {
                z.push(cell(pos)?);
            }
        }
        let n = y.len();
        Dataset::new(
            y,
            RowMatrix::from_row_major(n, x_cols.len(), x)?,
            RowMatrix::from_row_major(n, z_cols.len(), z)?,
        )
    }

    pub fn from_csv_path(path: &Path) -> Result<Dataset> {
        let f = std::fs::File::open(path)?;
        Dataset::read_csv(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.dx()).map(|k| format!("x{k}")));
        header.extend((1..=self.dz()).map(|k| format!("z{k}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![fmt_float(self.y[i])];
            rec.extend(self.x_row(i).iter().map(|&v| fmt_float(v)));
            rec.extend(self.z_row(i).iter().map(|&v| fmt_float(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn column_index(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

/// Split `0..ncols` into the focal columns (in the given order) and the rest.
pub fn partition_columns(ncols: usize, focal: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if focal.is_empty() {
        return Err(FloodgateError::Index("focal column set is empty".into()));
    }
    let mut seen = vec![false; ncols];
    for &c in focal {
        if c >= ncols {
            return Err(FloodgateError::Index(format!(
                "focal column {c} out of range for {ncols} covariates"
            )));
        }
        if seen[c] {
            return Err(FloodgateError::Index(format!(
                "focal column {c} listed twice"
            )));
        }
        seen[c] = true;
    }
    let rest = (0..ncols).filter(|c| !seen[*c]).collect();
    Ok((focal.to_vec(), rest))
}

/// A dataset divided into a part for fitting the working regression and a
/// disjoint part for inference.
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub fit_part: Dataset,
    pub infer_part: Dataset,
    pub proportion: f64,
    pub fit_rows: Vec<usize>,
    pub infer_rows: Vec<usize>,
}

/// Seeded random split. The fit part receives `floor(proportion * n)` rows.
/// The partition depends only on `(seed, n, proportion)`, never on the data.
pub fn split(data: &Dataset, proportion: f64, seed: u64) -> Result<SplitDataset> {
    if !(proportion > 0.0 && proportion < 1.0) {
        return Err(FloodgateError::Domain(format!(
            "split proportion must lie in (0,1), got {proportion}"
        )));
    }
    let n = data.n();
    let n_fit = (proportion * n as f64).floor() as usize;
    if n_fit < 1 || n - n_fit < 1 {
        return Err(FloodgateError::Size(format!(
            "split of {n} rows at proportion {proportion} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::TAG_SPLIT, n as u64]));
    let mut fit_rows = order[..n_fit].to_vec();
    let mut infer_rows = order[n_fit..].to_vec();
    fit_rows.sort_unstable();
    infer_rows.sort_unstable();
    Ok(SplitDataset {
        fit_part: data.select_rows(&fit_rows),
        infer_part: data.select_rows(&infer_rows),
        proportion,
        fit_rows,
        infer_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = RowMatrix::from_row_major(n, 1, y.iter().map(|v| v * 2.0).collect()).unwrap();
        Dataset::new(y, x, RowMatrix::empty(n)).unwrap()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let s = split(&toy(10), 0.5, 1).unwrap();
        assert_eq!((s.fit_part.n(), s.infer_part.n()), (5, 5));
        let s = split(&toy(11), 0.5, 1).unwrap();
        assert_eq!((s.fit_part.n(), s.infer_part.n()), (5, 6));
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let d = toy(37);
        let a = split(&d, 0.3, 99).unwrap();
        let b = split(&d, 0.3, 99).unwrap();
        assert_eq!(a.fit_rows, b.fit_rows);
        let mut all: Vec<usize> = a.fit_rows.iter().chain(&a.infer_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        let c = split(&d, 0.3, 100).unwrap();
        assert_ne!(a.fit_rows, c.fit_rows);
    }

    #[test]
    fn split_rejects_degenerate_parts() {
        assert!(matches!(
            split(&toy(1), 0.5, 0),
            Err(FloodgateError::Size(_))
        ));
        assert!(matches!(
            split(&toy(10), 1.0, 0),
            Err(FloodgateError::Domain(_))
        ));
        assert!(matches!(
            split(&toy(10), 0.05, 0),
            Err(FloodgateError::Size(_))
        ));
    }

    #[test]
    fn dataset_rejects_non_finite_and_mismatched_rows() {
        let x = RowMatrix::from_row_major(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(Dataset::new(vec![1.0, f64::NAN], x.clone(), RowMatrix::empty(2)).is_err());
        assert!(Dataset::new(vec![1.0], x, RowMatrix::empty(1)).is_err());
    }

    #[test]
    fn csv_round_trip_and_header_checks() {
        let csv_text = "y,x1,z1,z2\n1.5,2,3,4\n-1,0.25,1e-3,7\n";
        let d = Dataset::read_csv(csv_text.as_bytes()).unwrap();
        assert_eq!((d.n(), d.dx(), d.dz()), (2, 1, 2));
        assert_eq!(d.z_row(1), &[1e-3, 7.0]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);

        assert!(Dataset::read_csv("x1,z1\n1,2\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("y,x2\n1,2\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("y,x1,w\n1,2,3\n".as_bytes()).is_err());
        let err = Dataset::read_csv("y,x1\n1,\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("x1"), "{err}");
    }

    #[test]
    fn refocus_moves_columns() {
        let x = RowMatrix::from_row_major(1, 2, vec![1.0, 2.0]).unwrap();
        let z = RowMatrix::from_row_major(1, 2, vec![3.0, 4.0]).unwrap();
        let d = Dataset::new(vec![0.0], x, z).unwrap();
        let r = d.refocus(&[2]).unwrap();
        assert_eq!(r.x_row(0), &[3.0]);
        assert_eq!(r.z_row(0), &[1.0, 2.0, 4.0]);
        assert!(d.refocus(&[4]).is_err());
    }
}
