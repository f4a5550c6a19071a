//! Dataset container, CSV ingestion and conditioning grids.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column labels carried alongside the numeric blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub y: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
}

/// Outcome `y`, regressors `x` (n × k_x) and instruments `z` (n × k_z).
///
/// All blocks share the row count, every entry is finite, and both matrices
/// have at least one column. The struct is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    names: ColumnNames,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, z: DMatrix<f64>, names: ColumnNames) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, x has {}, z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 || z.ncols() == 0 {
            return Err(Error::DimensionMismatch("x and z need at least one column".into()));
        }
        if names.x.len() != x.ncols() || names.z.len() != z.ncols() {
            return Err(Error::DimensionMismatch("column names do not match block widths".into()));
        }
        for (i, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: i + 1, col: names.y.clone() });
            }
        }
        for (block, names) in [(&x, &names.x), (&z, &names.z)] {
            for j in 0..block.ncols() {
                for i in 0..n {
                    if !block[(i, j)].is_finite() {
                        return Err(Error::NonFiniteValue { row: i + 1, col: names[j].clone() });
                    }
                }
            }
        }
        Ok(Self { y, x, z, names })
    }

    /// Scalar-regressor, scalar-instrument constructor with default labels.
    pub fn from_columns(y: Vec<f64>, x: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z.len() != n {
            return Err(Error::DimensionMismatch("column lengths differ".into()));
        }
        Self::new(
            y,
            DMatrix::from_vec(n, 1, x),
            DMatrix::from_vec(n, 1, z),
            ColumnNames { y: "y".into(), x: vec!["x".into()], z: vec!["z".into()] },
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn kx(&self) -> usize {
        self.x.ncols()
    }
    pub fn kz(&self) -> usize {
        self.z.ncols()
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn names(&self) -> &ColumnNames {
        &self.names
    }
    pub fn x_col(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().copied().collect()
    }
    pub fn z_col(&self, j: usize) -> Vec<f64> {
        self.z.column(j).iter().copied().collect()
    }

    /// Same data with the outcome replaced.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(y, self.x.clone(), self.z.clone(), self.names.clone())
    }

    /// Same data with the instrument block replaced by the regressors (OLS route).
    pub fn with_z_as_x(&self) -> Self {
        let mut names = self.names.clone();
        names.z = names.x.clone();
        Self { y: self.y.clone(), x: self.x.clone(), z: self.x.clone(), names }
    }

    /// Keeps the rows whose indices are listed, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let x = self.x.select_rows(rows.iter());
        let z = self.z.select_rows(rows.iter());
        Self::new(y, x, z, self.names.clone())
    }
}

/// Reads the named columns of a comma-delimited file with one header row.
pub fn read_columns(path: impl AsRef<Path>, cols: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| header.iter().position(|h| h == *c).ok_or_else(|| Error::MissingColumn(c.to_string())))
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); cols.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for (k, &j) in idx.iter().enumerate() {
            let cell = record.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                col: cols[k].to_string(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: r + 1, col: cols[k].to_string() });
            }
            out[k].push(v);
        }
    }
    if out.first().map_or(true, |c| c.is_empty()) {
        return Err(Error::EmptyData);
    }
    Ok(out)
}

/// Loads a [`Dataset`]. Rows keep file order; a column may appear in both the
/// regressor and instrument lists.
pub fn load_csv(path: impl AsRef<Path>, y_col: &str, x_cols: &[&str], z_cols: &[&str]) -> Result<Dataset> {
    if x_cols.is_empty() || z_cols.is_empty() {
        return Err(Error::DimensionMismatch("need at least one x and one z column".into()));
    }
    let mut all = vec![y_col];
    all.extend_from_slice(x_cols);
    all.extend_from_slice(z_cols);
    let cols = read_columns(path, &all)?;
    let n = cols[0].len();
    let kx = x_cols.len();
    let block = |from: usize, k: usize| DMatrix::from_fn(n, k, |i, j| cols[from + j][i]);
    Dataset::new(
        cols[0].clone(),
        block(1, kx),
        block(1 + kx, z_cols.len()),
        ColumnNames {
            y: y_col.to_string(),
            x: x_cols.iter().map(|s| s.to_string()).collect(),
            z: z_cols.iter().map(|s| s.to_string()).collect(),
        },
    )
}

/// Writes the dataset so that [`load_csv`] with the same column names restores
/// it exactly. Columns shared by name between `x` and `z` are written once.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut cols: Vec<(String, Vec<f64>)> = vec![(ds.names.y.clone(), ds.y.clone())];
    for (j, name) in ds.names.x.iter().enumerate() {
        push_unique(&mut cols, name, ds.x_col(j))?;
    }
    for (j, name) in ds.names.z.iter().enumerate() {
        push_unique(&mut cols, name, ds.z_col(j))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(cols.iter().map(|(n, _)| n.as_str()))?;
    for i in 0..ds.n() {
        w.write_record(cols.iter().map(|(_, c)| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn push_unique(cols: &mut Vec<(String, Vec<f64>)>, name: &str, values: Vec<f64>) -> Result<()> {
    match cols.iter().find(|(n, _)| n == name) {
        Some((_, existing)) if *existing == values => Ok(()),
        Some(_) => Err(Error::DimensionMismatch(format!("column `{name}` appears twice with different values"))),
        None => {
            cols.push((name.to_string(), values));
            Ok(())
        }
    }
}

/// Left-continuous empirical quantile `inf{a : F_n(a) ≥ u}` of sorted data.
pub fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    if u <= 0.0 {
        return sorted[0];
    }
    let nf = n as f64;
    let mut k = ((u * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= u {
        k -= 1;
    }
    while k < n && (k as f64) / nf < u {
        k += 1;
    }
    sorted[k - 1]
}

/// Hyndman–Fan type-7 quantile (linear interpolation) of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Evaluation points for one conditioning variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningGrid {
    pub points: Vec<f64>,
    pub requested: usize,
}

impl ConditioningGrid {
    pub fn effective(&self) -> usize {
        self.points.len()
    }
}

/// Equally spaced points between the empirical `lo`- and `hi`-quantiles of
/// `values`.
///
/// When the variable takes fewer than `count / 2` distinct values inside that
/// range it is treated as discrete and the grid collapses to those values.
pub fn conditioning_grid(values: &[f64], lo: f64, hi: f64, count: usize) -> Result<ConditioningGrid> {
    if !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
        return Err(Error::InvalidConfig(format!("grid centiles must satisfy 0 ≤ lo < hi ≤ 1, got ({lo}, {hi})")));
    }
    if count < 2 {
        return Err(Error::InvalidConfig("grid count must be at least 2".into()));
    }
    if values.is_empty() {
        return Err(Error::EmptyData);
    }
    let sorted = sorted_copy(values);
    let a = empirical_quantile(&sorted, lo);
    let b = empirical_quantile(&sorted, hi);
    if a == b {
        return Err(Error::DegenerateSupport(a));
    }
    let mut distinct: Vec<f64> = sorted.iter().copied().filter(|v| *v >= a && *v <= b).collect();
    distinct.dedup();
    if distinct.len() < count / 2 {
        return Ok(ConditioningGrid { points: distinct, requested: count });
    }
    let step = (b - a) / (count - 1) as f64;
    let mut points: Vec<f64> = (0..count).map(|i| a + step * i as f64).collect();
    points[count - 1] = b;
    Ok(ConditioningGrid { points, requested: count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_rows() {
        let f = write_file("y,x,z\n1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(f.path(), "y", &["x"], &["z"]).unwrap();
        assert_eq!((ds.n(), ds.kx(), ds.kz()), (3, 1, 1));
        assert_eq!(ds.y(), &[1.0, 4.0, 7.0]);
        assert_eq!(ds.z_col(0), vec![3.0, 6.0, 9.0]);
    }

    #[test]
    fn nan_cell_is_rejected() {
        let f = write_file("y,x,z\n1,2,3\nNaN,5,6\n");
        match load_csv(f.path(), "y", &["x"], &["z"]) {
            Err(Error::NonFiniteValue { row, col }) => assert_eq!((row, col.as_str()), (2, "y")),
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
    }

    #[test]
    fn load_errors() {
        let f = write_file("y,x,z\n1,2,3\n");
        assert!(matches!(load_csv(f.path(), "y", &["w"], &["z"]), Err(Error::MissingColumn(c)) if c == "w"));
        let f = write_file("y,x,z\n1,abc,3\n");
        assert!(matches!(load_csv(f.path(), "y", &["x"], &["z"]), Err(Error::Parse { row: 1, .. })));
        let f = write_file("y,x,z\n");
        assert!(matches!(load_csv(f.path(), "y", &["x"], &["z"]), Err(Error::EmptyData)));
    }

    #[test]
    fn left_continuous_quantile_on_ties() {
        let s = [1.0, 2.0, 2.0, 2.0, 5.0];
        assert_eq!(empirical_quantile(&s, 0.2), 1.0);
        assert_eq!(empirical_quantile(&s, 0.21), 2.0);
        assert_eq!(empirical_quantile(&s, 0.8), 2.0);
        assert_eq!(empirical_quantile(&s, 0.81), 5.0);
        assert_eq!(empirical_quantile(&s, 1.0), 5.0);
    }

    #[test]
    fn grid_on_integers_matches_sorting_oracle() {
        let z: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let g = conditioning_grid(&z, 0.01, 0.99, 100).unwrap();
        // oracle: sort, take the ceil(n·u)-th order statistic
        let mut s = z.clone();
        s.sort_by(f64::total_cmp);
        let lo = s[(0.01f64 * 100.0).ceil() as usize - 1];
        let hi = s[(0.99f64 * 100.0).ceil() as usize - 1];
        assert_eq!(g.points.len(), 100);
        assert_eq!(g.points[0], lo);
        assert_eq!(g.points[99], hi);
        assert!(g.points.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn constant_column_is_degenerate() {
        assert!(matches!(conditioning_grid(&[2.0; 50], 0.01, 0.99, 100), Err(Error::DegenerateSupport(_))));
    }

    #[test]
    fn uniform_grid_endpoints() {
        use rand::Rng;
        let mut rng = crate::rng::RngSpec::new(11).rng();
        let z: Vec<f64> = (0..3000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = conditioning_grid(&z, 0.01, 0.99, 100).unwrap();
        // population centiles of U[-3,3] are ±2.94
        assert!((g.points[0] + 2.94).abs() < 0.15);
        assert!((g.points[99] - 2.94).abs() < 0.15);
    }

    #[test]
    fn binary_column_collapses() {
        let z: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let g = conditioning_grid(&z, 0.0, 1.0, 100).unwrap();
        assert_eq!(g.points, vec![0.0, 1.0]);
        assert_eq!(g.requested, 100);
    }

    proptest! {
        #[test]
        fn write_then_load_is_identity(rows in proptest::collection::vec((-1e6f64..1e6, -1e3f64..1e3, -50.0f64..50.0), 1..60)) {
            let n = rows.len();
            let ds = Dataset::new(
                rows.iter().map(|r| r.0).collect(),
                DMatrix::from_fn(n, 1, |i, _| rows[i].1),
                DMatrix::from_fn(n, 1, |i, _| rows[i].2),
                ColumnNames { y: "y".into(), x: vec!["x".into()], z: vec!["z".into()] },
            ).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_csv(&ds, f.path()).unwrap();
            let back = load_csv(f.path(), "y", &["x"], &["z"]).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn grid_is_strictly_increasing(v in proptest::collection::vec(-10.0f64..10.0, 10..200), count in 2usize..150) {
            if let Ok(g) = conditioning_grid(&v, 0.05, 0.95, count) {
                prop_assert!(g.points.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(g.points.len() == count || g.points.len() < count / 2);
            }
        }
    }
}
