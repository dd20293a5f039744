//! Field import/export: a JSON header plus a CSV body with one row per node
//! (`i0,…,i{n-1}` followed by the components).

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::field::{MetricField, ScalarField, TensorField};
use crate::error::{Error, Result};
use crate::grid::{GridManifold, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Scalar,
    /// Symmetric 2-tensor, upper triangle stored row by row.
    Tensor,
}

impl FieldKind {
    pub fn components(self, n: usize) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Tensor => n * (n + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub n: usize,
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub kind: FieldKind,
}

impl FieldHeader {
    pub fn for_grid(grid: &GridManifold, kind: FieldKind, t: Option<f64>) -> Self {
        Self { n: grid.n(), shape: grid.shape().to_vec(), spacing: grid.spacing().to_vec(), t, kind }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("field header: {e}")))?;
        header.grid()?;
        if let Some(t) = header.t {
            if !t.is_finite() {
                return Err(Error::Parse("field header: t must be finite".into()));
            }
        }
        Ok(header)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("header serializes")
    }

    /// Grid described by the header; the normal spacing must match the shape.
    pub fn grid(&self) -> Result<GridManifold> {
        let n = self.n;
        if !(3..=MAX_DIM).contains(&n) || self.shape.len() != n || self.spacing.len() != n {
            return Err(Error::Parse(format!("field header: inconsistent dimension {n}")));
        }
        if self.shape.iter().any(|&m| m > 1 << 12) {
            return Err(Error::Parse("field header: axis too large".into()));
        }
        let periods: Vec<f64> = (0..n - 1).map(|a| self.spacing[a] * self.shape[a] as f64).collect();
        let grid = GridManifold::new(self.shape.clone(), periods).map_err(|e| Error::Parse(e.to_string()))?;
        let expected = grid.spacing()[n - 1];
        if (self.spacing[n - 1] - expected).abs() > 1e-9 * expected {
            return Err(Error::Parse(format!(
                "field header: normal spacing {} does not match {} nodes on [0,1]",
                self.spacing[n - 1],
                self.shape[n - 1]
            )));
        }
        Ok(grid)
    }

    fn column_names(&self) -> Vec<String> {
        let mut cols: Vec<String> = (0..self.n).map(|a| format!("i{a}")).collect();
        match self.kind {
            FieldKind::Scalar => cols.push("value".into()),
            FieldKind::Tensor => {
                for i in 0..self.n {
                    for j in i..self.n {
                        cols.push(format!("g{i}{j}"));
                    }
                }
            }
        }
        cols
    }
}

/// Writes node rows; `data` holds `components` values per node.
pub fn write_field_csv<W: Write>(out: W, grid: &GridManifold, header: &FieldHeader, data: &[f64]) -> Result<()> {
    let nc = header.kind.components(grid.n());
    if data.len() != grid.len() * nc {
        return Err(Error::Shape("field data does not match grid".into()));
    }
    let io = |e: csv::Error| Error::Parse(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header.column_names()).map_err(io)?;
    let mut row: Vec<String> = Vec::with_capacity(grid.n() + nc);
    for p in 0..grid.len() {
        row.clear();
        row.extend(grid.multi_index(p).iter().map(|i| i.to_string()));
        row.extend(data[p * nc..(p + 1) * nc].iter().map(|x| format!("{x:?}")));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// Parses a CSV body against its header. Every node must appear exactly once.
pub fn parse_field_csv(text: &str, header: &FieldHeader) -> Result<Vec<f64>> {
    let grid = header.grid()?;
    let n = grid.n();
    let nc = header.kind.components(n);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let names = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let expected = header.column_names();
    if names.len() != expected.len() || names.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Parse(format!("expected columns {}", expected.join(","))));
    }
    let mut data = vec![0.0; grid.len() * nc];
    let mut seen = vec![false; grid.len()];
    let mut multi = vec![0usize; n];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
        if record.len() != n + nc {
            return Err(Error::Parse(format!("row {}: expected {} fields", row + 1, n + nc)));
        }
        for a in 0..n {
            let i: usize = record[a].parse().map_err(|_| Error::Parse(format!("row {}: bad index", row + 1)))?;
            if i >= grid.shape()[a] {
                return Err(Error::Parse(format!("row {}: index {i} out of range on axis {a}", row + 1)));
            }
            multi[a] = i;
        }
        let p = grid.index(&multi);
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::Parse(format!("row {}: duplicate node", row + 1)));
        }
        for c in 0..nc {
            let x: f64 = record[n + c].parse().map_err(|_| Error::Parse(format!("row {}: bad value", row + 1)))?;
            if !x.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite value", row + 1)));
            }
            data[p * nc + c] = x;
        }
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!("node {p} missing")));
    }
    Ok(data)
}

pub fn scalar_to_csv<W: Write>(out: W, grid: &GridManifold, field: &ScalarField, t: Option<f64>) -> Result<()> {
    let header = FieldHeader::for_grid(grid, FieldKind::Scalar, t);
    write_field_csv(out, grid, &header, &field.values)
}

pub fn scalar_from_csv(text: &str, header: &FieldHeader) -> Result<(GridManifold, ScalarField)> {
    if header.kind != FieldKind::Scalar {
        return Err(Error::Parse("header does not describe a scalar field".into()));
    }
    Ok((header.grid()?, ScalarField::new(parse_field_csv(text, header)?)))
}

pub fn metric_to_csv<W: Write>(out: W, grid: &GridManifold, g: &MetricField, t: Option<f64>) -> Result<()> {
    let header = FieldHeader::for_grid(grid, FieldKind::Tensor, t);
    let n = grid.n();
    let mut data = Vec::with_capacity(grid.len() * n * (n + 1) / 2);
    for p in 0..grid.len() {
        let gp = g.node(p);
        for i in 0..n {
            for j in i..n {
                data.push(gp[i * n + j]);
            }
        }
    }
    write_field_csv(out, grid, &header, &data)
}

pub fn metric_from_csv(text: &str, header: &FieldHeader) -> Result<(GridManifold, MetricField)> {
    if header.kind != FieldKind::Tensor {
        return Err(Error::Parse("header does not describe a tensor field".into()));
    }
    let grid = header.grid()?;
    let packed = parse_field_csv(text, header)?;
    let n = grid.n();
    let nc = n * (n + 1) / 2;
    let tensor = TensorField::from_fn(&grid, |p, g| {
        let mut c = 0;
        for i in 0..n {
            for j in i..n {
                g[i * n + j] = packed[p * nc + c];
                g[j * n + i] = packed[p * nc + c];
                c += 1;
            }
        }
    });
    let g = MetricField::new(&grid, tensor)?;
    Ok((grid, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_round_trip_is_exact() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        let mut buf = Vec::new();
        metric_to_csv(&mut buf, &grid, &g, Some(0.5)).unwrap();
        let header = FieldHeader::for_grid(&grid, FieldKind::Tensor, Some(0.5));
        let header = FieldHeader::from_json(&header.to_json()).unwrap();
        let (grid2, g2) = metric_from_csv(std::str::from_utf8(&buf).unwrap(), &header).unwrap();
        assert_eq!(grid, grid2);
        assert_eq!(g, g2);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let header = FieldHeader::for_grid(&grid, FieldKind::Scalar, None);
        assert!(parse_field_csv("i0,i1,i2,value\n0,0,0,1\n", &header).is_err());
        assert!(parse_field_csv("a,b\n", &header).is_err());
        assert!(parse_field_csv("i0,i1,i2,value\n9,0,0,1\n", &header).is_err());
        assert!(parse_field_csv("i0,i1,i2,value\n0,0,0,NaN\n", &header).is_err());
        assert!(
            FieldHeader::from_json(r#"{"n":3,"shape":[8,8,9],"spacing":[0.125,0.125,0.5],"kind":"scalar"}"#).is_err()
        );
        assert!(FieldHeader::from_json(r#"{"n":2,"shape":[8,8],"spacing":[0.125,0.125],"kind":"scalar"}"#).is_err());
    }

    proptest! {
        #[test]
        fn scalar_round_trip(values in prop::collection::vec(-1e6f64..1e6, 8 * 8 * 9)) {
            let grid = GridManifold::uniform(3, 8).unwrap();
            let field = ScalarField::new(values);
            let mut buf = Vec::new();
            scalar_to_csv(&mut buf, &grid, &field, None).unwrap();
            let header = FieldHeader::for_grid(&grid, FieldKind::Scalar, None);
            let (_, back) = scalar_from_csv(std::str::from_utf8(&buf).unwrap(), &header).unwrap();
            prop_assert_eq!(back, field);
        }
    }
}
