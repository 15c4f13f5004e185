//! Datasets: CSV and IDX loading, min-max normalization, synthetic
//! regression targets and splits.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression targets (`K × O`, row-major) or class labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values { outputs: usize, values: Vec<f64> },
    Labels { classes: usize, labels: Vec<usize> },
}

impl Targets {
    /// Output arity a model needs for these targets.
    pub fn arity(&self) -> usize {
        match self {
            Targets::Values { outputs, .. } => *outputs,
            Targets::Labels { classes, .. } => *classes,
        }
    }

    fn len(&self) -> usize {
        match self {
            Targets::Values { outputs, values } => values.len() / outputs,
            Targets::Labels { labels, .. } => labels.len(),
        }
    }

    fn subset(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Values { outputs, values } => Targets::Values {
                outputs: *outputs,
                values: idx
                    .iter()
                    .flat_map(|&k| values[k * outputs..(k + 1) * outputs].iter().copied())
                    .collect(),
            },
            Targets::Labels { classes, labels } => Targets::Labels {
                classes: *classes,
                labels: idx.iter().map(|&k| labels[k]).collect(),
            },
        }
    }
}

/// Per-feature affine map `x ↦ (x - min) / (max - min)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    /// Maps one point in place, clamping to `[0, 1]`. Returns how many
    /// coordinates had to be clamped.
    pub fn apply(&self, x: &mut [f64]) -> usize {
        let mut clamped = 0;
        for (d, xd) in x.iter_mut().enumerate() {
            let z = (*xd - self.min[d]) / (self.max[d] - self.min[d]);
            let c = z.clamp(0.0, 1.0);
            if c != z {
                clamped += 1;
            }
            *xd = c;
        }
        clamped
    }

    pub fn inverse(&self, z: &mut [f64]) {
        for (d, zd) in z.iter_mut().enumerate() {
            *zd = self.min[d] + *zd * (self.max[d] - self.min[d]);
        }
    }

    /// Applies the map to every row; returns the new dataset and the number
    /// of clamped coordinates.
    pub fn transform(&self, ds: &Dataset) -> Result<(Dataset, usize)> {
        if self.min.len() != ds.dim {
            return Err(Error::shape(format!("{} features", self.min.len()), ds.dim));
        }
        let mut out = ds.clone();
        let mut clamped = 0;
        for row in out.inputs.chunks_mut(ds.dim) {
            clamped += self.apply(row);
        }
        out.normalization = Some(self.clone());
        Ok((out, clamped))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    targets: Targets,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub normalization: Option<MinMax>,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, targets: Targets) -> Result<Self> {
        if dim == 0 || inputs.len() % dim != 0 {
            return Err(Error::shape(format!("a multiple of {dim} inputs"), inputs.len()));
        }
        let k = inputs.len() / dim;
        if k == 0 {
            return Err(Error::EmptyDataset);
        }
        if targets.len() != k {
            return Err(Error::shape(format!("{k} targets"), targets.len()));
        }
        if let Targets::Labels { classes, labels } = &targets {
            if let Some(&bad) = labels.iter().find(|&&c| c >= *classes) {
                return Err(Error::IndexOutOfRange {
                    index: bad + 1,
                    max: *classes,
                });
            }
        }
        let class_names = match &targets {
            Targets::Labels { classes, .. } => (0..*classes).map(|c| c.to_string()).collect(),
            Targets::Values { .. } => Vec::new(),
        };
        Ok(Self {
            inputs,
            dim,
            targets,
            feature_names: (1..=dim).map(|d| format!("x{d}")).collect(),
            class_names,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().flat_map(|&k| self.row(k).iter().copied()).collect(),
            dim: self.dim,
            targets: self.targets.subset(idx),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Errors unless every input coordinate lies in `[0, 1]`.
    pub fn check_unit_domain(&self) -> Result<()> {
        match self.inputs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            Some(&value) => Err(Error::OutOfDomain { value }),
            None => Ok(()),
        }
    }
}

/// A column given by 0-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    #[default]
    Labels,
    Values,
}

/// Layout of a comma-separated file with dot decimals and an optional single
/// header row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_true")]
    pub header: bool,
    /// Target columns; the last column when empty.
    #[serde(default)]
    pub targets: Vec<ColumnRef>,
    #[serde(default)]
    pub kind: TargetKind,
    /// Expected number of columns, checked when set.
    #[serde(default)]
    pub columns: Option<usize>,
    /// Fixed class order for label targets; order of first appearance
    /// otherwise.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

fn default_true() -> bool {
    true
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            header: true,
            targets: Vec::new(),
            kind: TargetKind::Labels,
            columns: None,
            classes: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let parse_err = |e: csv::Error| {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    };

    let mut header: Option<Vec<String>> = None;
    if schema.header {
        match records.next() {
            None => {
                return Err(Error::SchemaMismatch(
                    "file is empty, expected a header row".into(),
                ))
            }
            Some(r) => header = Some(r.map_err(parse_err)?.iter().map(str::to_string).collect()),
        }
    }

    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for r in records {
        let r = r.map_err(parse_err)?;
        let line = r.position().map(|p| p.line() as usize).unwrap_or(0);
        if r.len() == 1 && r[0].is_empty() {
            continue;
        }
        rows.push((line, r));
    }
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(|(_, r)| r.len()))
        .ok_or(Error::EmptyDataset)?;
    if let Some(expected) = schema.columns {
        if expected != width {
            return Err(Error::SchemaMismatch(format!(
                "expected {expected} columns, found {width}"
            )));
        }
    }
    if width < 2 {
        return Err(Error::SchemaMismatch(
            "need at least one feature and one target column".into(),
        ));
    }

    let mut target_cols = Vec::new();
    for c in &schema.targets {
        let idx = match c {
            ColumnRef::Index(i) => *i,
            ColumnRef::Name(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|x| x == name))
                .ok_or_else(|| Error::UnknownName(name.clone()))?,
        };
        if idx >= width {
            return Err(Error::SchemaMismatch(format!(
                "target column {idx} beyond the {width} columns"
            )));
        }
        target_cols.push(idx);
    }
    if target_cols.is_empty() {
        target_cols.push(width - 1);
    }
    if schema.kind == TargetKind::Labels && target_cols.len() != 1 {
        return Err(Error::SchemaMismatch(
            "label targets need exactly one column".into(),
        ));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|c| !target_cols.contains(c)).collect();
    if feature_cols.is_empty() {
        return Err(Error::SchemaMismatch("no feature columns left".into()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let number = |line: usize, s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("`{s}` is not a finite number"),
            })
    };
    let mut inputs = Vec::with_capacity(rows.len() * feature_cols.len());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut classes: Vec<String> = schema.classes.clone().unwrap_or_default();
    for (line, r) in &rows {
        if r.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {width} fields, found {}", r.len()),
            });
        }
        for &c in &feature_cols {
            inputs.push(number(*line, &r[c])?);
        }
        match schema.kind {
            TargetKind::Values => {
                for &c in &target_cols {
                    values.push(number(*line, &r[c])?);
                }
            }
            TargetKind::Labels => {
                let name = &r[target_cols[0]];
                let idx = match classes.iter().position(|c| c == name) {
                    Some(i) => i,
                    None if schema.classes.is_some() => {
                        return Err(Error::UnknownName(name.to_string()))
                    }
                    None => {
                        classes.push(name.to_string());
                        classes.len() - 1
                    }
                };
                labels.push(idx);
            }
        }
    }
    let targets = match schema.kind {
        TargetKind::Values => Targets::Values {
            outputs: target_cols.len(),
            values,
        },
        TargetKind::Labels => Targets::Labels {
            classes: classes.len(),
            labels,
        },
    };
    let mut ds = Dataset::new(inputs, feature_cols.len(), targets)?;
    if let Some(h) = header {
        ds.feature_names = feature_cols.iter().map(|&c| h[c].clone()).collect();
    }
    if schema.kind == TargetKind::Labels {
        ds.class_names = classes;
    }
    Ok(ds)
}

/// Fits a per-feature min-max map on `ds` and applies it.
pub fn normalize_minmax(ds: &Dataset) -> Result<(Dataset, MinMax)> {
    let dim = ds.dim();
    let mut min = vec![f64::INFINITY; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for row in ds.inputs().chunks(dim) {
        for d in 0..dim {
            min[d] = min[d].min(row[d]);
            max[d] = max[d].max(row[d]);
        }
    }
    if let Some(d) = (0..dim).find(|&d| !(max[d] > min[d])) {
        return Err(Error::ConstantFeature {
            feature: ds.feature_names[d].clone(),
        });
    }
    let record = MinMax { min, max };
    let (out, _) = record.transform(ds)?;
    Ok((out, record))
}

/// Seeded synthetic regression data: `exp1` is `cos(20πx)` on `U[0,1]`;
/// `exp2` is `x1 + x2² + x3³ + e^{x4} + x1 x2 + x3 x4` on `U[-1,1]^4` with
/// inputs mapped to `[0,1]^4` and targets unchanged.
pub fn synthetic(name: &str, k_train: usize, k_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if k_train == 0 || k_test == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, record): (usize, Option<MinMax>) = match name {
        "exp1" => (1, None),
        "exp2" => (
            4,
            Some(MinMax {
                min: vec![-1.0; 4],
                max: vec![1.0; 4],
            }),
        ),
        other => return Err(Error::UnknownName(other.to_string())),
    };
    let mut draw = |k: usize| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(k * dim);
        let mut values = Vec::with_capacity(k);
        for _ in 0..k {
            if dim == 1 {
                let x: f64 = rng.random();
                inputs.push(x);
                values.push(exp1_target(x));
            } else {
                let x: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                values.push(exp2_target(&x));
                inputs.extend(x.iter().map(|v| (v + 1.0) / 2.0));
            }
        }
        let mut ds = Dataset::new(inputs, dim, Targets::Values { outputs: 1, values })?;
        ds.normalization = record.clone();
        Ok(ds)
    };
    let train = draw(k_train)?;
    let test = draw(k_test)?;
    Ok((train, test))
}

pub fn exp1_target(x: f64) -> f64 {
    (20.0 * PI * x).cos()
}

/// Target on the natural `[-1, 1]^4` domain.
pub fn exp2_target(x: &[f64; 4]) -> f64 {
    x[0] + x[1] * x[1] + x[2].powi(3) + x[3].exp() + x[0] * x[1] + x[2] * x[3]
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Loads an IDX image/label pair with pixels scaled to `[0, 1]`.
/// `limit` keeps only the first rows.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let images = read(images_path.as_ref())?;
    let labels = read(labels_path.as_ref())?;
    parse_idx(&images, &labels, limit)
}

pub fn parse_idx(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let be = |b: &[u8], at: usize, what: &str| -> Result<u32> {
        b.get(at..at + 4)
            .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
            .ok_or_else(|| Error::TruncatedFile(format!("{what} header")))
    };
    let magic = be(images, 0, "image")?;
    if magic != IDX_IMAGES {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES,
        });
    }
    let magic = be(labels, 0, "label")?;
    if magic != IDX_LABELS {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS,
        });
    }
    let n_img = be(images, 4, "image")? as usize;
    let rows = be(images, 8, "image")? as usize;
    let cols = be(images, 12, "image")? as usize;
    let n_lab = be(labels, 4, "label")? as usize;
    if n_img != n_lab {
        return Err(Error::CountMismatch(format!(
            "{n_img} images but {n_lab} labels"
        )));
    }
    let dim = rows * cols;
    let payload = &images[16..];
    if payload.len() < n_img * dim {
        return Err(Error::TruncatedFile(format!(
            "image payload has {} bytes, expected {}",
            payload.len(),
            n_img * dim
        )));
    }
    let lab = &labels[8..];
    if lab.len() < n_lab {
        return Err(Error::TruncatedFile(format!(
            "label payload has {} bytes, expected {n_lab}",
            lab.len()
        )));
    }
    let k = limit.map_or(n_img, |l| l.min(n_img));
    let inputs = payload[..k * dim].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab[..k].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().map_or(10, |m| (m + 1).max(10));
    Dataset::new(inputs, dim, Targets::Labels { classes, labels })
}

/// Splits label data class by class, putting `round(test_fraction · n_c)`
/// samples of each class into the test set.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let Targets::Labels { classes, labels } = ds.targets() else {
        return Err(Error::SchemaMismatch(
            "stratified split needs label targets".into(),
        ));
    };
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidHyperparameter(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..*classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == c).collect();
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Seeded random split without stratification.
pub fn random_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * ds.len() as f64).round() as usize;
    if n_test == 0 || n_test >= ds.len() {
        return Err(Error::EmptyDataset);
    }
    let (test, train) = idx.split_at(n_test);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}
