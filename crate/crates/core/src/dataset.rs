//! Encoded datasets: CSV I/O, stratified splitting, augmentation and
//! synthetic generation with a planted ground truth.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{FieldKind, SurveySchema};

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("split ratios must be positive and sum to 1")]
    RatioSum,
    #[error("split `{split}` would receive no samples of class {label}")]
    TooFewSamples { label: u8, split: &'static str },
    #[error("target size {target} is smaller than the dataset ({have})")]
    TargetTooSmall { target: usize, have: usize },
    #[error("label noise must lie in [0, 0.5)")]
    BadNoise,
    #[error("row {0} has no label")]
    Unlabeled(usize),
    #[error("dataset is empty")]
    Empty,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("header does not match the schema: {0}")]
    HeaderMismatch(String),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("row {row}: `{field}` = {value} is outside its bounds")]
    OutOfBounds { row: usize, field: String, value: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepLabel {
    Poor = 0,
    Good = 1,
}

impl SleepLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SleepLabel::Poor),
            1 => Some(SleepLabel::Good),
            _ => None,
        }
    }

    pub fn from_bool(good: bool) -> Self {
        if good {
            SleepLabel::Good
        } else {
            SleepLabel::Poor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Option<SleepLabel>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, label: SleepLabel) -> Self {
        Self {
            values,
            label: Some(label),
        }
    }

    pub fn unlabeled(values: Vec<f64>) -> Self {
        Self { values, label: None }
    }
}

/// Rows of encoded features; a row's id is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureVector>,
}

impl Dataset {
    pub fn new(schema: &SurveySchema, rows: Vec<FeatureVector>) -> Self {
        Self {
            feature_names: schema.feature_names().iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Labels as 0/1, failing on the first unlabeled row.
    pub fn labels(&self) -> Result<Vec<f64>, DatasetError> {
        labels_of(&self.rows)
    }

    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: ids.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn check_schema(&self, schema: &SurveySchema) -> Result<(), DatasetError> {
        let expected = schema.feature_names();
        if self
            .feature_names
            .iter()
            .map(String::as_str)
            .ne(expected.iter().copied())
        {
            return Err(DatasetError::HeaderMismatch(format!(
                "expected [{}]",
                expected.join(",")
            )));
        }
        for (row, fv) in self.rows.iter().enumerate() {
            for (f, &v) in schema.fields.iter().zip(&fv.values) {
                if !f.in_bounds(v) {
                    return Err(DatasetError::OutOfBounds {
                        row,
                        field: f.name.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_reader(file)
    }

    /// Reads `f1,...,fk,label`; an empty label cell means unlabeled.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| DatasetError::Parse {
                line: 1,
                msg: e.to_string(),
            })?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let label_col = headers.iter().position(|h| h == "label");
        let feature_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_col)
            .map(|(_, h)| h.clone())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| DatasetError::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                msg: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |msg: String| DatasetError::Parse { line, msg };
            let mut values = Vec::with_capacity(feature_names.len());
            let mut label = None;
            for (i, cell) in rec.iter().enumerate() {
                let cell = cell.trim();
                if Some(i) == label_col {
                    if !cell.is_empty() {
                        let v: u8 = cell.parse().map_err(|_| parse_err(format!("bad label `{cell}`")))?;
                        label = Some(SleepLabel::from_u8(v).ok_or_else(|| parse_err(format!("bad label `{cell}`")))?);
                    }
                } else {
                    values.push(
                        cell.parse::<f64>()
                            .map_err(|_| parse_err(format!("bad number `{cell}`")))?,
                    );
                }
            }
            rows.push(FeatureVector { values, label });
        }
        Ok(Self { feature_names, rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path.as_ref())
            .map_err(|e| DatasetError::Io(format!("{}: {e}", path.as_ref().display())))?;
        self.to_writer(file)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let io = |e: csv::Error| DatasetError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header).map_err(io)?;
        for row in &self.rows {
            let mut cells: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
            cells.push(row.label.map(|l| l.as_u8().to_string()).unwrap_or_default());
            w.write_record(&cells).map_err(io)?;
        }
        w.flush().map_err(|e| DatasetError::Io(e.to_string()))
    }
}

pub fn labels_of(rows: &[FeatureVector]) -> Result<Vec<f64>, DatasetError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| r.label.map(SleepLabel::as_f64).ok_or(DatasetError::Unlabeled(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<FeatureVector>,
    pub validation: Vec<FeatureVector>,
    pub test: Vec<FeatureVector>,
    /// Positions in the input, ascending.
    pub train_ids: Vec<usize>,
    pub validation_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}

const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

/// Largest-remainder apportionment of `n` items over `ratios`; ties go to the
/// lower index.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut out = [0usize; 3];
    for (o, q) in out.iter_mut().zip(&quotas) {
        *o = q.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - out.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Stratified, seeded train/validation/test split.
pub fn split_dataset(data: &[FeatureVector], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit, DatasetError> {
    let ratios = [ratios.0, ratios.1, ratios.2];
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::RatioSum);
    }
    let labels = labels_of(data)?;
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        classes[y as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in classes.iter_mut() {
        c.shuffle(&mut rng);
    }

    let targets = apportion(data.len(), &ratios);
    let mut quotas: Vec<[usize; 3]> = classes.iter().map(|c| apportion(c.len(), &ratios)).collect();

    // Move single units between splits until totals meet the global targets,
    // keeping every class allocation within one of its exact share.
    loop {
        let totals: Vec<usize> = (0..3).map(|s| quotas.iter().map(|q| q[s]).sum()).collect();
        let Some(over) = (0..3).find(|&s| totals[s] > targets[s]) else {
            break;
        };
        let Some(under) = (0..3).find(|&s| totals[s] < targets[s]) else {
            break;
        };
        let movable = (0..classes.len()).find(|&c| {
            let n = classes[c].len() as f64;
            let from = quotas[c][over] as f64 - 1.0;
            let to = quotas[c][under] as f64 + 1.0;
            quotas[c][over] > 0 && (from - n * ratios[over]).abs() < 1.0 && (to - n * ratios[under]).abs() < 1.0
        });
        match movable {
            Some(c) => {
                quotas[c][over] -= 1;
                quotas[c][under] += 1;
            }
            None => break,
        }
    }

    for (c, q) in quotas.iter().enumerate() {
        if let Some(s) = (0..3).find(|&s| q[s] == 0) {
            return Err(DatasetError::TooFewSamples {
                label: c as u8,
                split: SPLIT_NAMES[s],
            });
        }
    }

    let mut ids: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (members, q) in classes.iter().zip(&quotas) {
        let mut start = 0;
        for s in 0..3 {
            ids[s].extend_from_slice(&members[start..start + q[s]]);
            start += q[s];
        }
    }
    for v in ids.iter_mut() {
        v.sort_unstable();
    }
    let take = |v: &[usize]| v.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let [train_ids, validation_ids, test_ids] = ids;
    Ok(DatasetSplit {
        train: take(&train_ids),
        validation: take(&validation_ids),
        test: take(&test_ids),
        train_ids,
        validation_ids,
        test_ids,
        seed,
    })
}

/// Grows `data` to `target_size` rows. Originals are kept in place; new rows
/// copy a random row from a class chosen with probability inversely
/// proportional to its current size, with each ordinal value moved by -1, 0
/// or +1 and clamped to the field bounds.
pub fn augment_dataset(
    data: &[FeatureVector],
    schema: &SurveySchema,
    target_size: usize,
    seed: u64,
) -> Result<Vec<FeatureVector>, DatasetError> {
    if target_size < data.len() {
        return Err(DatasetError::TargetTooSmall {
            target: target_size,
            have: data.len(),
        });
    }
    if target_size == data.len() {
        return Ok(data.to_vec());
    }
    if data.is_empty() {
        return Err(DatasetError::Empty);
    }
    let labels = labels_of(data)?;
    let mut members: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        members[y as usize].push(i);
    }
    let mut counts = [members[0].len() as f64, members[1].len() as f64];
    let jitter: Vec<bool> = schema.fields.iter().map(|f| f.kind == FieldKind::Ordinal).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.to_vec();
    while out.len() < target_size {
        let class = match (members[0].is_empty(), members[1].is_empty()) {
            (true, _) => 1,
            (_, true) => 0,
            _ => {
                let w0 = 1.0 / counts[0];
                let w1 = 1.0 / counts[1];
                usize::from(rng.gen::<f64>() * (w0 + w1) >= w0)
            }
        };
        let src = &data[members[class][rng.gen_range(0..members[class].len())]];
        let mut values = src.values.clone();
        for ((v, f), &j) in values.iter_mut().zip(&schema.fields).zip(&jitter) {
            if j {
                let step = rng.gen_range(-1i64..=1) as f64;
                *v = (*v + step).clamp(f.lower_bound as f64, f.upper_bound as f64);
            }
        }
        out.push(FeatureVector {
            values,
            label: src.label,
        });
        counts[class] += 1.0;
    }
    Ok(out)
}

/// Parameters of the planted-truth generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// One coefficient per schema field, applied to standardized values.
    pub planted: Vec<f64>,
    /// Logit offset; 0 gives balanced classes.
    #[serde(default)]
    pub intercept: f64,
    pub noise: f64,
    pub seed: u64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws every field uniformly among the integers in its bounds; the label is
/// Bernoulli(sigmoid(intercept + planted . z)) on standardized values `z`, then
/// flipped with probability `noise`.
pub fn generate_synthetic(schema: &SurveySchema, spec: &SyntheticSpec) -> Result<Vec<FeatureVector>, DatasetError> {
    if !(0.0..0.5).contains(&spec.noise) {
        return Err(DatasetError::BadNoise);
    }
    if spec.n == 0 {
        return Err(DatasetError::Empty);
    }
    if spec.planted.len() != schema.len() {
        return Err(DatasetError::DimensionMismatch {
            expected: schema.len(),
            got: spec.planted.len(),
        });
    }
    // Moments of the discrete uniform on {lo, ..., hi}.
    let moments: Vec<(f64, f64)> = schema
        .fields
        .iter()
        .map(|f| {
            let (lo, hi) = (f.lower_bound as f64, f.upper_bound as f64);
            let k = hi - lo + 1.0;
            ((lo + hi) / 2.0, ((k * k - 1.0) / 12.0).sqrt())
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let values: Vec<f64> = schema
            .fields
            .iter()
            .map(|f| rng.gen_range(f.lower_bound..=f.upper_bound) as f64)
            .collect();
        let logit = spec.intercept
            + values
                .iter()
                .zip(&moments)
                .zip(&spec.planted)
                .map(|((&v, &(mean, sd)), &b)| if sd > 0.0 { b * (v - mean) / sd } else { 0.0 })
                .sum::<f64>();
        let mut good = rng.gen::<f64>() < sigmoid(logit);
        if rng.gen::<f64>() < spec.noise {
            good = !good;
        }
        out.push(FeatureVector::new(values, SleepLabel::from_bool(good)));
    }
    Ok(out)
}
