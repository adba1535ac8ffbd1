//! Multi-modal multi-label datasets: schemas, loading, folds, scaling.
//!
//! A dataset is a dense feature matrix whose columns are grouped into
//! contiguous modality blocks, plus a label matrix with entries in {-1,+1}.
//! Modality boundaries and extraction costs live in a [`ModalitySchema`];
//! on disk they are described by a JSON sidecar next to the CSV file.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-modality dimensionalities and extraction costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySchema {
    dims: Vec<usize>,
    costs: Vec<f64>,
}

impl ModalitySchema {
    pub fn new(dims: Vec<usize>, costs: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Schema("schema needs at least one modality".into()));
        }
        if dims.len() != costs.len() {
            return Err(Error::Schema(format!(
                "{} modality dims but {} costs",
                dims.len(),
                costs.len()
            )));
        }
        if let Some(m) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Schema(format!("modality {m} has zero features")));
        }
        if let Some(m) = costs.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Schema(format!("modality {m} has invalid cost")));
        }
        Ok(ModalitySchema { dims, costs })
    }

    /// Unit-cost schema, the default when only boundaries are known.
    pub fn unit_costs(dims: Vec<usize>) -> Result<Self> {
        let costs = vec![1.0; dims.len()];
        ModalitySchema::new(dims, costs)
    }

    pub fn modality_count(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cost(&self, m: usize) -> f64 {
        self.costs[m]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Sum of all extraction costs; extracting everything pays this much.
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Column offset of modality `m`: sum of the dims before it.
    pub fn offset(&self, m: usize) -> usize {
        self.dims[..m].iter().sum()
    }

    /// Column range `[offset, offset + dim)` occupied by modality `m`.
    pub fn block_range(&self, m: usize) -> Range<usize> {
        let start = self.offset(m);
        start..start + self.dims[m]
    }

    /// Schema with one extra modality appended (used for the label-history
    /// block added by chain stages).
    pub fn with_appended(&self, dim: usize, cost: f64) -> Result<Self> {
        let mut dims = self.dims.clone();
        let mut costs = self.costs.clone();
        dims.push(dim);
        costs.push(cost);
        ModalitySchema::new(dims, costs)
    }
}

/// JSON sidecar describing how to interpret a data file.
///
/// ```json
/// {"dims":[32,32,8], "costs":[1.0,1.0,1.0], "labels":6, "label_position":"tail"}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub dims: Vec<usize>,
    pub costs: Vec<f64>,
    pub labels: usize,
    pub label_position: String,
}

impl SchemaSpec {
    pub fn new(dims: Vec<usize>, costs: Vec<f64>, labels: usize) -> Self {
        SchemaSpec {
            dims,
            costs,
            labels,
            label_position: "tail".into(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SchemaSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("serialize schema: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels == 0 {
            return Err(Error::Schema("label count must be positive".into()));
        }
        if self.label_position != "tail" {
            return Err(Error::Schema(format!(
                "unsupported label_position {:?} (only \"tail\")",
                self.label_position
            )));
        }
        self.schema().map(|_| ())
    }

    pub fn schema(&self) -> Result<ModalitySchema> {
        ModalitySchema::new(self.dims.clone(), self.costs.clone())
    }
}

/// Dense multi-modal features plus {-1,+1} labels.
#[derive(Debug, Clone)]
pub struct MultiModalDataset {
    pub x: Array2<f64>,
    pub y: Array2<i8>,
    pub schema: ModalitySchema,
    pub names: Option<Vec<String>>,
}

impl MultiModalDataset {
    pub fn new(
        x: Array2<f64>,
        y: Array2<i8>,
        schema: ModalitySchema,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let ds = MultiModalDataset { x, y, schema, names };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.nrows() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} label rows",
                self.x.nrows(),
                self.y.nrows()
            )));
        }
        if self.x.ncols() != self.schema.total_dim() {
            return Err(Error::Schema(format!(
                "schema covers {} columns but matrix has {}",
                self.schema.total_dim(),
                self.x.ncols()
            )));
        }
        if let Some(names) = &self.names {
            if names.len() != self.y.ncols() {
                return Err(Error::Schema(format!(
                    "{} label names for {} labels",
                    names.len(),
                    self.y.ncols()
                )));
            }
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature matrix contains NaN/Inf".into()));
        }
        if self.y.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::Validation("labels must be -1 or +1".into()));
        }
        Ok(())
    }

    pub fn n_instances(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.y.ncols()
    }

    /// One modality's feature block, as a view.
    pub fn modality_block(&self, m: usize) -> ArrayView2<'_, f64> {
        let r = self.schema.block_range(m);
        self.x.slice(ndarray::s![.., r.start..r.end])
    }

    /// Row subset (for fold splits); keeps schema and names.
    pub fn subset(&self, rows: &[usize]) -> MultiModalDataset {
        let x = self.x.select(ndarray::Axis(0), rows);
        let y = self.y.select(ndarray::Axis(0), rows);
        MultiModalDataset {
            x,
            y,
            schema: self.schema.clone(),
            names: self.names.clone(),
        }
    }

    /// Same labels and schema with replaced feature values (e.g. scaled).
    pub fn with_features(&self, x: Array2<f64>) -> Result<MultiModalDataset> {
        MultiModalDataset::new(x, self.y.clone(), self.schema.clone(), self.names.clone())
    }

    /// Write as CSV (features then labels per row). Floats use the shortest
    /// representation that round-trips, so a reload is bit-identical.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut line = String::new();
        for i in 0..self.n_instances() {
            line.clear();
            for v in self.x.row(i).iter() {
                line.push_str(&format!("{v}"));
                line.push(',');
            }
            for (j, v) in self.y.row(i).iter().enumerate() {
                line.push_str(&format!("{v}"));
                if j + 1 < self.n_labels() {
                    line.push(',');
                }
            }
            line.push('\n');
            out.write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// On-disk formats accepted by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Arff,
}

impl DataFormat {
    /// Guess from the file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("arff") => DataFormat::Arff,
            _ => DataFormat::Csv,
        }
    }
}

fn normalize_label(v: f64, line: usize) -> Result<i8> {
    if v == 1.0 {
        Ok(1)
    } else if v == 0.0 || v == -1.0 {
        Ok(-1)
    } else {
        Err(Error::Validation(format!(
            "label value {v} at line {line} is not in {{0,1}} or {{-1,+1}}"
        )))
    }
}

/// Load and validate a dataset. Labels on disk may be {0,1} or {-1,+1};
/// they are normalized to {-1,+1}.
pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    spec: &SchemaSpec,
) -> Result<MultiModalDataset> {
    spec.validate()?;
    let schema = spec.schema()?;
    let (rows, names) = match format {
        DataFormat::Csv => (read_csv_rows(path)?, None),
        DataFormat::Arff => {
            let (rows, attributes) = read_arff_rows(path)?;
            // The trailing attributes are the labels.
            let names = attributes.filter(|a| a.len() >= spec.labels).map(|a| {
                a[a.len() - spec.labels..].to_vec()
            });
            (rows, names)
        }
    };
    build_dataset(rows, schema, spec.labels, names)
}

/// One parsed numeric row plus its 1-based source line.
type RawRow = (usize, Vec<f64>);

fn build_dataset(
    rows: Vec<RawRow>,
    schema: ModalitySchema,
    n_labels: usize,
    names: Option<Vec<String>>,
) -> Result<MultiModalDataset> {
    if rows.is_empty() {
        return Err(Error::Validation("dataset has no instances".into()));
    }
    let d = schema.total_dim();
    let width = d + n_labels;
    let n = rows.len();
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Array2::<i8>::zeros((n, n_labels));
    for (i, (line, row)) in rows.into_iter().enumerate() {
        if row.len() != width {
            return Err(Error::Schema(format!(
                "line {line}: {} columns but schema declares {d} features + {n_labels} labels",
                row.len()
            )));
        }
        for (c, &v) in row[..d].iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite feature at line {line}, column {}",
                    c + 1
                )));
            }
            x[[i, c]] = v;
        }
        for (c, &v) in row[d..].iter().enumerate() {
            y[[i, c]] = normalize_label(v, line)?;
        }
    }
    MultiModalDataset::new(x, y, schema, names)
}

fn read_csv_rows(path: &Path) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: {field:?}"),
            })?;
            row.push(v);
        }
        if !row.is_empty() {
            rows.push((line, row));
        }
    }
    Ok(rows)
}

/// Load a raw feature/label matrix when the modality grouping is not yet
/// known (the feature count is inferred from the first row). Used by the
/// partitioning pipeline, which assigns columns to modalities afterwards.
/// Raw matrix load result: features, labels, optional label names.
pub type RawMatrix = (Array2<f64>, Array2<i8>, Option<Vec<String>>);

pub fn load_matrix(path: &Path, format: DataFormat, n_labels: usize) -> Result<RawMatrix> {
    if n_labels == 0 {
        return Err(Error::Argument("label count must be positive".into()));
    }
    let (rows, names) = match format {
        DataFormat::Csv => (read_csv_rows(path)?, None),
        DataFormat::Arff => {
            let (rows, attributes) = read_arff_rows(path)?;
            let names = attributes
                .filter(|a| a.len() >= n_labels)
                .map(|a| a[a.len() - n_labels..].to_vec());
            (rows, names)
        }
    };
    let width = rows
        .first()
        .map(|(_, r)| r.len())
        .ok_or_else(|| Error::Validation("dataset has no instances".into()))?;
    if width <= n_labels {
        return Err(Error::Schema(format!(
            "rows have {width} columns, not enough for {n_labels} labels"
        )));
    }
    let schema = ModalitySchema::unit_costs(vec![width - n_labels])?;
    let ds = build_dataset(rows, schema, n_labels, names)?;
    Ok((ds.x, ds.y, ds.names))
}

/// Minimal ARFF reader for dense Mulan-style files: numeric feature
/// attributes followed by nominal {0,1} label attributes, then `@data`.
fn read_arff_rows(path: &Path) -> Result<(Vec<RawRow>, Option<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut attribute_names = Vec::new();
    let mut in_data = false;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@attribute") {
                let rest = line["@attribute".len()..].trim();
                let name = rest
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_matches('\'')
                    .to_string();
                attribute_names.push(name);
            } else if lower.starts_with("@data") {
                in_data = true;
            }
            continue;
        }
        if line.starts_with('{') {
            return Err(Error::Parse {
                line: line_no,
                message: "sparse ARFF rows are not supported".into(),
            });
        }
        let mut row = Vec::with_capacity(attribute_names.len());
        for field in line.split(',') {
            let field = field.trim().trim_matches('\'');
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("not a number: {field:?}"),
            })?;
            row.push(v);
        }
        rows.push((line_no, row));
    }
    if !in_data {
        return Err(Error::Parse {
            line: 0,
            message: "no @data section".into(),
        });
    }
    Ok((rows, Some(attribute_names)))
}

// ---------------------------------------------------------------------------
// Information-gain modality partitioning
// ---------------------------------------------------------------------------

// Counts are indexed by dense class id so the float summation order is
// fixed; ranking ties must break on column index alone.
fn entropy_from_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of a median-binarized feature column against the
/// label-powerset class variable (`classes` holds dense ids < `n_classes`).
fn column_info_gain(col: ArrayView1<f64>, classes: &[usize], n_classes: usize) -> f64 {
    let n = col.len();
    let mut sorted: Vec<f64> = col.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };

    let mut all = vec![0usize; n_classes];
    let mut above = vec![0usize; n_classes];
    let mut below = vec![0usize; n_classes];
    let mut n_above = 0usize;
    for (i, &v) in col.iter().enumerate() {
        all[classes[i]] += 1;
        if v > median {
            above[classes[i]] += 1;
            n_above += 1;
        } else {
            below[classes[i]] += 1;
        }
    }
    let n_below = n - n_above;
    let h = entropy_from_counts(&all, n);
    let h_cond = (n_above as f64 / n as f64) * entropy_from_counts(&above, n_above)
        + (n_below as f64 / n as f64) * entropy_from_counts(&below, n_below);
    h - h_cond
}

/// Rank feature columns by information gain (ties by original index) and
/// assign them greedily to contiguous blocks of the requested sizes.
///
/// Returns the column permutation (`perm[k]` = original index of new column
/// `k`) and a unit-cost schema with `target_dims` blocks.
pub fn partition_by_info_gain(
    x: ArrayView2<f64>,
    y: ArrayView2<i8>,
    target_dims: &[usize],
) -> Result<(Vec<usize>, ModalitySchema)> {
    let d: usize = target_dims.iter().sum();
    if d != x.ncols() {
        return Err(Error::Schema(format!(
            "target dims sum to {d} but matrix has {} columns",
            x.ncols()
        )));
    }
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::Argument("feature/label row mismatch".into()));
    }

    // Label powerset: each distinct label vector becomes one class.
    let mut class_of = HashMap::new();
    let classes: Vec<usize> = (0..y.nrows())
        .map(|i| {
            let key: Vec<i8> = y.row(i).to_vec();
            let next = class_of.len();
            *class_of.entry(key).or_insert(next)
        })
        .collect();
    let n_classes = class_of.len();

    let gains: Vec<f64> = (0..x.ncols())
        .map(|c| column_info_gain(x.column(c), &classes, n_classes))
        .collect();
    let mut perm: Vec<usize> = (0..x.ncols()).collect();
    perm.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));

    let schema = ModalitySchema::unit_costs(target_dims.to_vec())?;
    Ok((perm, schema))
}

/// Apply a column permutation: new column `k` is old column `perm[k]`.
pub fn permute_columns(x: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(1), perm)
}

// ---------------------------------------------------------------------------
// Cross-validation folds
// ---------------------------------------------------------------------------

/// Deterministic assignment of instances to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    fold_count: usize,
    assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn fold_count(&self) -> usize {
        self.fold_count
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Shuffled round-robin fold assignment; identical (n, k, seed) always
/// produce identical folds, and fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Argument(format!("fold count {k} must be >= 2")));
    }
    if k > n {
        return Err(Error::Argument(format!(
            "fold count {k} exceeds instance count {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignments = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignments[idx] = pos % k;
    }
    Ok(FoldSplit {
        fold_count: k,
        assignments,
    })
}

// ---------------------------------------------------------------------------
// Feature scaling
// ---------------------------------------------------------------------------

/// Per-column z-scoring fitted on training rows only; test folds reuse the
/// training statistics.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Standardizer {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(ndarray::Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            for (c, &v) in row.iter().enumerate() {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
        var /= n;
        let std = var.mapv(|v| {
            let s = v.sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        });
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_temp(content: &str, ext: &str) -> tempfile::TempPath {
        let mut f = tempfile::Builder::new()
            .suffix(&format!(".{ext}"))
            .tempfile()
            .unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.into_temp_path()
    }

    #[test]
    fn schema_invariants() {
        let s = ModalitySchema::new(vec![2, 3, 1], vec![1.0, 1.0, 0.5]).unwrap();
        assert_eq!(s.total_dim(), 6);
        assert_eq!(s.offset(0), 0);
        assert_eq!(s.offset(2), 5);
        assert_eq!(s.block_range(1), 2..5);
        assert!(ModalitySchema::new(vec![], vec![]).is_err());
        assert!(ModalitySchema::new(vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(ModalitySchema::new(vec![1], vec![-0.1]).is_err());
        assert!(ModalitySchema::new(vec![1, 2], vec![1.0]).is_err());
    }

    #[test]
    fn load_single_instance_csv() {
        let path = write_temp("1.0,2.0,1,0\n", "csv");
        let spec = SchemaSpec::new(vec![1, 1], vec![1.0, 1.0], 2);
        let ds = load_dataset(&path, DataFormat::Csv, &spec).unwrap();
        assert_eq!(ds.x, array![[1.0, 2.0]]);
        assert_eq!(ds.y, array![[1, -1]]);
        assert_eq!(ds.schema.modality_count(), 2);
    }

    #[test]
    fn load_rejects_nan_and_bad_labels() {
        let path = write_temp("1.0,NaN,1,0\n", "csv");
        let spec = SchemaSpec::new(vec![1, 1], vec![1.0, 1.0], 2);
        match load_dataset(&path, DataFormat::Csv, &spec) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
        let path = write_temp("1.0,2.0,1,3\n", "csv");
        assert!(load_dataset(&path, DataFormat::Csv, &spec).is_err());
    }

    #[test]
    fn load_reports_boundary_mismatch() {
        let path = write_temp("1.0,2.0,3.0,1,0\n", "csv");
        let spec = SchemaSpec::new(vec![1, 1], vec![1.0, 1.0], 2);
        match load_dataset(&path, DataFormat::Csv, &spec) {
            Err(Error::Schema(msg)) => assert!(msg.contains("line 1"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_parse_line() {
        let path = write_temp("1.0,2.0,1,0\nx,2.0,1,0\n", "csv");
        let spec = SchemaSpec::new(vec![1, 1], vec![1.0, 1.0], 2);
        match load_dataset(&path, DataFormat::Csv, &spec) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn arff_roundtrip_dense() {
        let arff = "\
% comment
@relation toy
@attribute f1 numeric
@attribute f2 numeric
@attribute l1 {0,1}
@attribute l2 {0,1}
@data
0.5,-1.5,1,0
2.0,3.0,0,1
";
        let path = write_temp(arff, "arff");
        let spec = SchemaSpec::new(vec![1, 1], vec![1.0, 1.0], 2);
        let ds = load_dataset(&path, DataFormat::Arff, &spec).unwrap();
        assert_eq!(ds.n_instances(), 2);
        assert_eq!(ds.y, array![[1, -1], [-1, 1]]);
        assert_eq!(ds.names, Some(vec!["l1".to_string(), "l2".to_string()]));
    }

    #[test]
    fn arff_rejects_sparse() {
        let arff = "@relation t\n@attribute f numeric\n@attribute l {0,1}\n@data\n{0 1.0}\n";
        let path = write_temp(arff, "arff");
        let spec = SchemaSpec::new(vec![1], vec![1.0], 1);
        assert!(load_dataset(&path, DataFormat::Arff, &spec).is_err());
    }

    #[test]
    fn csv_write_reload_bit_identical() {
        let ds = MultiModalDataset::new(
            array![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 7.25, -0.0]],
            array![[1, -1], [-1, 1]],
            ModalitySchema::new(vec![2, 1], vec![1.0, 0.5]).unwrap(),
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        ds.write_csv(&path).unwrap();
        let spec = SchemaSpec::new(vec![2, 1], vec![1.0, 0.5], 2);
        let back = load_dataset(&path, DataFormat::Csv, &spec).unwrap();
        assert_eq!(ds.x, back.x);
        assert_eq!(ds.y, back.y);
    }

    #[test]
    fn modality_blocks_reconstruct_matrix() {
        let ds = MultiModalDataset::new(
            array![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]],
            array![[1], [-1]],
            ModalitySchema::new(vec![1, 2, 1], vec![1.0, 1.0, 1.0]).unwrap(),
            None,
        )
        .unwrap();
        let mut cols = Vec::new();
        for m in 0..ds.schema.modality_count() {
            cols.push(ds.modality_block(m).to_owned());
        }
        let rebuilt = ndarray::concatenate(
            ndarray::Axis(1),
            &cols.iter().map(|c| c.view()).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(rebuilt, ds.x);
    }

    #[test]
    fn info_gain_constant_column_ranks_last() {
        // Column 0 mirrors the label, column 2 is constant.
        let x = array![
            [1.0, 0.3, 5.0],
            [1.0, 0.1, 5.0],
            [0.0, 0.9, 5.0],
            [0.0, 0.5, 5.0]
        ];
        let y = array![[1], [1], [-1], [-1]];
        let (perm, schema) = partition_by_info_gain(x.view(), y.view(), &[1, 1, 1]).unwrap();
        assert_eq!(perm[0], 0, "label-identical feature ranks first");
        assert_eq!(perm[2], 2, "constant feature ranks last");
        assert_eq!(schema.dims(), &[1, 1, 1]);
    }

    #[test]
    fn info_gain_matches_bruteforce_ranking() {
        // 10 instances, 4 features, dims [2,2]; oracle recomputes each
        // column's gain independently and sorts.
        let x = array![
            [0.1, 1.0, 0.9, 0.2],
            [0.2, 0.0, 0.8, 0.3],
            [0.3, 1.0, 0.7, 0.1],
            [0.4, 0.0, 0.6, 0.4],
            [0.5, 1.0, 0.5, 0.2],
            [0.6, 0.0, 0.4, 0.3],
            [0.7, 1.0, 0.3, 0.1],
            [0.8, 0.0, 0.2, 0.4],
            [0.9, 1.0, 0.1, 0.2],
            [1.0, 0.0, 0.0, 0.3]
        ];
        let y = array![
            [1, -1],
            [1, 1],
            [1, -1],
            [1, 1],
            [1, -1],
            [-1, 1],
            [-1, -1],
            [-1, 1],
            [-1, -1],
            [-1, 1]
        ];
        let (perm, _) = partition_by_info_gain(x.view(), y.view(), &[2, 2]).unwrap();

        // Independent oracle.
        let mut class_of = HashMap::new();
        let classes: Vec<usize> = (0..y.nrows())
            .map(|i| {
                let key: Vec<i8> = y.row(i).to_vec();
                let next = class_of.len();
                *class_of.entry(key).or_insert(next)
            })
            .collect();
        let mut expected: Vec<usize> = (0..4).collect();
        let gains: Vec<f64> = (0..4)
            .map(|c| column_info_gain(x.column(c), &classes, class_of.len()))
            .collect();
        expected.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
        assert_eq!(perm, expected);
    }

    #[test]
    fn info_gain_idempotent_on_permuted_matrix() {
        let x = array![
            [0.1, 1.0, 0.9, 0.2],
            [0.9, 0.0, 0.8, 0.3],
            [0.2, 1.0, 0.7, 0.1],
            [0.8, 0.0, 0.6, 0.4],
            [0.3, 1.0, 0.5, 0.2],
            [0.7, 0.0, 0.4, 0.3]
        ];
        let y = array![[1], [-1], [1], [-1], [1], [-1]];
        let (perm, _) = partition_by_info_gain(x.view(), y.view(), &[2, 2]).unwrap();
        let permuted = permute_columns(x.view(), &perm);
        let (perm2, _) = partition_by_info_gain(permuted.view(), y.view(), &[2, 2]).unwrap();
        assert_eq!(perm2, vec![0, 1, 2, 3]);
    }

    #[test]
    fn info_gain_rejects_dim_mismatch() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y = array![[1], [-1]];
        match partition_by_info_gain(x.view(), y.view(), &[3]) {
            Err(Error::Schema(_)) => {}
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn folds_exact_sizes() {
        let f = make_folds(10, 10, 0).unwrap();
        for fold in 0..10 {
            assert_eq!(f.test_indices(fold).len(), 1);
        }
        let f = make_folds(11, 10, 0).unwrap();
        let mut sizes: Vec<usize> = (0..10).map(|k| f.test_indices(k).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 2]);
    }

    #[test]
    fn folds_deterministic() {
        let a = make_folds(593, 10, 7).unwrap();
        let b = make_folds(593, 10, 7).unwrap();
        assert_eq!(a, b);
        let c = make_folds(593, 10, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn folds_reject_bad_counts() {
        assert!(make_folds(5, 6, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
    }

    #[test]
    fn standardizer_uses_train_stats() {
        let train = array![[0.0, 10.0], [2.0, 10.0]];
        let s = Standardizer::fit(train.view());
        let scaled = s.transform(train.view());
        assert!((scaled[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((scaled[[1, 0]] - 1.0).abs() < 1e-12);
        // Constant column maps to zero rather than dividing by zero.
        assert_eq!(scaled[[0, 1]], 0.0);
        let test = array![[4.0, 10.0]];
        let t = s.transform(test.view());
        assert!((t[[0, 0]] - 3.0).abs() < 1e-12);
    }
}
