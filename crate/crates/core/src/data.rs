//! Dataset ingestion: delimited text and IDX files, label maps, stratified
//! splitting and a light on-disk form of a prepared dataset.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};

/// Bijection between raw label strings and dense ids `0..classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    raw: Vec<String>,
}

impl LabelMap {
    /// Sorted numerically when every label parses as a number, otherwise
    /// lexicographically.
    pub fn from_raw<S: AsRef<str>>(values: &[S]) -> Self {
        let mut uniq: Vec<String> = values.iter().map(|v| v.as_ref().to_string()).collect();
        uniq.sort();
        uniq.dedup();
        let numeric: Option<Vec<f64>> = uniq.iter().map(|s| s.parse::<f64>().ok()).collect();
        if let Some(nums) = numeric {
            let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(uniq).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            uniq = pairs.into_iter().map(|(_, s)| s).collect();
        }
        Self { raw: uniq }
    }

    pub fn from_names(raw: Vec<String>) -> Result<Self> {
        let mut sorted = raw.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != raw.len() {
            return Err(Error::Format("label map has duplicate entries".into()));
        }
        Ok(Self { raw })
    }

    pub fn classes(&self) -> usize {
        self.raw.len()
    }

    pub fn id(&self, raw: &str) -> Result<usize> {
        self.raw
            .iter()
            .position(|r| r == raw)
            .ok_or_else(|| Error::UnknownLabel(raw.to_string()))
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.raw.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.raw
    }
}

/// Row index sets of each partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Where a dataset came from, enough to reload it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Csv { path: PathBuf, schema: CsvSchema },
    Idx { pairs: Vec<(PathBuf, PathBuf)> },
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    pub source: Source,
    /// Source rows kept, in order, when the dataset is a subset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<usize>>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub split: Split,
    pub label_map: LabelMap,
    pub provenance: Provenance,
}

/// Features and labels of one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Matrix, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::invalid(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Materialized partitions handed to training code.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: Option<LabeledSet>,
    pub n_classes: usize,
}

impl DataSplits {
    pub fn n_features(&self) -> usize {
        self.train.x.cols()
    }

    /// Applies `f` to the feature matrix of every partition.
    pub fn map_features(&self, mut f: impl FnMut(&Matrix) -> Result<Matrix>) -> Result<Self> {
        Ok(Self {
            train: LabeledSet::new(f(&self.train.x)?, self.train.y.clone())?,
            val: LabeledSet::new(f(&self.val.x)?, self.val.y.clone())?,
            test: match &self.test {
                Some(t) => Some(LabeledSet::new(f(&t.x)?, t.y.clone())?),
                None => None,
            },
            n_classes: self.n_classes,
        })
    }
}

impl Dataset {
    /// Builds a dataset whose rows all sit in the training split.
    pub fn new(features: Matrix, labels: Vec<usize>, label_map: LabelMap, provenance: Provenance) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_map.classes()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: label_map.classes(),
            });
        }
        let split = Split {
            train: (0..labels.len()).collect(),
            ..Default::default()
        };
        Ok(Self {
            features,
            labels,
            split,
            label_map,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.classes()
    }

    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.split.train,
            Part::Val => &self.split.val,
            Part::Test => &self.split.test,
        }
    }

    pub fn part(&self, part: Part) -> LabeledSet {
        let idx = self.indices(part);
        LabeledSet {
            x: self.features.select_rows(idx),
            y: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Train and validation partitions, plus test when non-empty.
    pub fn splits(&self) -> Result<DataSplits> {
        if self.split.train.is_empty() || self.split.val.is_empty() {
            return Err(Error::invalid("dataset needs non-empty train and validation splits"));
        }
        Ok(DataSplits {
            train: self.part(Part::Train),
            val: self.part(Part::Val),
            test: (!self.split.test.is_empty()).then(|| self.part(Part::Test)),
            n_classes: self.n_classes(),
        })
    }

    /// Checks disjointness, full coverage and class presence in training.
    pub fn validate_split(&self) -> Result<()> {
        let n = self.len();
        let mut seen = vec![false; n];
        for &i in self.split.train.iter().chain(&self.split.val).chain(&self.split.test) {
            if i >= n {
                return Err(Error::invalid(format!("split index {i} out of range for {n} rows")));
            }
            if seen[i] {
                return Err(Error::invalid(format!("row {i} appears in more than one split")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("row {missing} is in no split")));
        }
        let mut present = vec![false; self.n_classes()];
        for &i in &self.split.train {
            present[self.labels[i]] = true;
        }
        if let Some(class) = present.iter().position(|p| !p) {
            return Err(Error::MissingClass { class });
        }
        Ok(())
    }

    /// Keeps only `rows` (in order), remapping the split accordingly.
    fn restrict(&mut self, rows: &[usize]) {
        let mut new_index = vec![usize::MAX; self.len()];
        for (k, &r) in rows.iter().enumerate() {
            new_index[r] = k;
        }
        let remap = |v: &[usize]| -> Vec<usize> {
            v.iter().map(|&i| new_index[i]).filter(|&i| i != usize::MAX).collect()
        };
        self.split = Split {
            train: remap(&self.split.train),
            val: remap(&self.split.val),
            test: remap(&self.split.test),
        };
        self.features = self.features.select_rows(rows);
        self.labels = rows.iter().map(|&r| self.labels[r]).collect();
        let source_rows = match &self.provenance.rows {
            Some(prev) => rows.iter().map(|&r| prev[r]).collect(),
            None => rows.to_vec(),
        };
        self.provenance.rows = Some(source_rows);
    }
}

/// Layout of a delimited text file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
    /// Zero-based label column; `None` means the last column.
    #[serde(default)]
    pub label_column: Option<usize>,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_header: true,
            label_column: None,
        }
    }
}

impl CsvSchema {
    fn reader_builder(&self) -> Result<csv::ReaderBuilder> {
        if !self.delimiter.is_ascii() {
            return Err(Error::invalid(format!("delimiter {:?} is not ASCII", self.delimiter)));
        }
        let mut b = csv::ReaderBuilder::new();
        b.delimiter(self.delimiter as u8)
            .has_headers(self.has_header)
            .trim(csv::Trim::All)
            .flexible(true);
        Ok(b)
    }
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            row,
            col,
            value: cell.to_string(),
        }),
    }
}

/// Reads a labeled delimited file. Row numbers in errors are 1-based file
/// lines.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = schema.reader_builder()?.from_path(path)?;
    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::MalformedRow {
                    row: line,
                    reason: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let w = record.len();
        if w < 2 {
            return Err(Error::MalformedRow {
                row: line,
                reason: "need at least one feature and a label".into(),
            });
        }
        let label_col = schema.label_column.unwrap_or(w - 1);
        if label_col >= w {
            return Err(Error::MalformedRow {
                row: line,
                reason: format!("label column {label_col} beyond {w} fields"),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_col {
                raw_labels.push(cell.to_string());
            } else {
                data.push(parse_cell(cell, line, c)?);
            }
        }
    }
    let cols = width.map_or(0, |w| w - 1);
    let rows = raw_labels.len();
    let label_map = LabelMap::from_raw(&raw_labels);
    let labels = raw_labels.iter().map(|r| label_map.id(r)).collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        name: path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        source: Source::Csv {
            path: path.to_path_buf(),
            schema: schema.clone(),
        },
        rows: None,
        notes: String::new(),
    };
    Dataset::new(Matrix::from_vec(rows, cols, data)?, labels, label_map, provenance)
}

/// Reads an unlabeled feature file of the given width. An empty file gives a
/// `0 x width` matrix.
pub fn load_feature_csv(path: &Path, delimiter: char, has_header: bool, width: usize) -> Result<Matrix> {
    let schema = CsvSchema {
        delimiter,
        has_header,
        label_column: None,
    };
    let mut reader = schema.reader_builder()?.from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(Error::FeatureWidth {
                expected: width,
                got: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            data.push(parse_cell(cell, line, c)?);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, width, data)
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
        })
}

fn idx_images(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != 2051 {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!("image magic number {magic}, expected 2051"),
        });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let d = rows * cols;
    let body = &bytes[16..];
    if body.len() != n * d {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!("expected {} pixel bytes, found {}", n * d, body.len()),
        });
    }
    let data = body.iter().map(|&p| p as f64 / 255.0).collect();
    Matrix::from_vec(n, d, data)
}

fn idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != 2049 {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!("label magic number {magic}, expected 2049"),
        });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!("expected {n} label bytes, found {}", body.len()),
        });
    }
    Ok(body.to_vec())
}

/// Reads one or more IDX image/label file pairs and stacks them in order.
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx(pairs: &[(PathBuf, PathBuf)]) -> Result<Dataset> {
    if pairs.is_empty() {
        return Err(Error::invalid("no IDX files given"));
    }
    let mut data = Vec::new();
    let mut raw = Vec::new();
    let mut width = None;
    for (images, labels) in pairs {
        let x = idx_images(images)?;
        let y = idx_labels(labels)?;
        if x.rows() != y.len() {
            return Err(Error::Idx {
                path: labels.clone(),
                reason: format!("{} labels for {} images", y.len(), x.rows()),
            });
        }
        if *width.get_or_insert(x.cols()) != x.cols() {
            return Err(Error::FeatureWidth {
                expected: width.unwrap_or(0),
                got: x.cols(),
            });
        }
        data.extend_from_slice(x.as_slice());
        raw.extend(y.iter().map(|v| v.to_string()));
    }
    let cols = width.unwrap_or(0);
    let label_map = LabelMap::from_raw(&raw);
    let labels = raw.iter().map(|r| label_map.id(r)).collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        name: "idx".into(),
        source: Source::Idx { pairs: pairs.to_vec() },
        rows: None,
        notes: String::new(),
    };
    Dataset::new(Matrix::from_vec(raw.len(), cols, data)?, labels, label_map, provenance)
}

/// Fractions of rows per partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Splits `amounts` of items across classes with per-class counts
/// proportional to `fractions`, using largest remainders so that totals are
/// exact. Returns `[part][class]` counts.
fn allocate(class_sizes: &[usize], fractions: [f64; 3]) -> [Vec<usize>; 3] {
    let n: usize = class_sizes.iter().sum();
    let mut cum = 0.0;
    let mut prev_total = 0usize;
    let mut remaining: Vec<usize> = class_sizes.to_vec();
    let mut out: [Vec<usize>; 3] = Default::default();
    for (p, &f) in fractions.iter().enumerate() {
        cum += f;
        let cum_total = ((cum * n as f64) + 1e-9).round().min(n as f64) as usize;
        let target = cum_total.saturating_sub(prev_total);
        prev_total = cum_total.max(prev_total);
        let quotas: Vec<f64> = class_sizes.iter().map(|&c| f * c as f64).collect();
        let mut counts: Vec<usize> = quotas
            .iter()
            .zip(&remaining)
            .map(|(&q, &r)| ((q + 1e-9).floor() as usize).min(r))
            .collect();
        let mut assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..class_sizes.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        while assigned < target {
            let before = assigned;
            for &c in &order {
                if assigned == target {
                    break;
                }
                if counts[c] < remaining[c] {
                    counts[c] += 1;
                    assigned += 1;
                }
            }
            if assigned == before {
                break;
            }
        }
        while assigned > target {
            let c = order.iter().rev().copied().find(|&c| counts[c] > 0).expect("positive total");
            counts[c] -= 1;
            assigned -= 1;
        }
        for (r, &c) in remaining.iter_mut().zip(&counts) {
            *r -= c;
        }
        out[p] = counts;
    }
    out
}

fn class_members(labels: &[usize], rows: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); classes];
    for &r in rows {
        members[labels[r]].push(r);
    }
    members
}

/// Stratified random split. Rows left unassigned when the fractions sum to
/// less than one are dropped from the dataset.
pub fn split_fractions(mut ds: Dataset, fr: SplitFractions, rng: &mut RandomSource) -> Result<Dataset> {
    let parts = [fr.train, fr.val, fr.test];
    if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.train + fr.val + fr.test > 1.0 + 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be in [0, 1] and sum to at most 1, got {fr:?}"
        )));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut members = class_members(&ds.labels, &all, ds.n_classes());
    for m in &mut members {
        rng.shuffle(m);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let counts = allocate(&sizes, parts);
    let mut split = Split::default();
    for (c, m) in members.iter().enumerate() {
        let (a, b, t) = (counts[0][c], counts[1][c], counts[2][c]);
        split.train.extend_from_slice(&m[..a]);
        split.val.extend_from_slice(&m[a..a + b]);
        split.test.extend_from_slice(&m[a + b..a + b + t]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    ds.split = split;
    let assigned = ds.split.train.len() + ds.split.val.len() + ds.split.test.len();
    if assigned < ds.len() {
        let mut keep: Vec<usize> = ds.split.train.iter().chain(&ds.split.val).chain(&ds.split.test).copied().collect();
        keep.sort_unstable();
        ds.restrict(&keep);
    }
    ds.validate_split()?;
    Ok(ds)
}

/// Moves a stratified share of the training rows into validation.
pub fn holdout_validation(mut ds: Dataset, amount: Holdout, rng: &mut RandomSource) -> Result<Dataset> {
    let train = std::mem::take(&mut ds.split.train);
    let fraction = match amount {
        Holdout::Fraction(f) if (0.0..1.0).contains(&f) => f,
        Holdout::Count(c) if c < train.len() => c as f64 / train.len() as f64,
        other => {
            return Err(Error::invalid(format!(
                "holdout {other:?} is invalid for {} training rows",
                train.len()
            )))
        }
    };
    let mut members = class_members(&ds.labels, &train, ds.n_classes());
    for m in &mut members {
        rng.shuffle(m);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let counts = allocate(&sizes, [fraction, 1.0 - fraction, 0.0]);
    let mut val = std::mem::take(&mut ds.split.val);
    let mut new_train = Vec::with_capacity(train.len());
    for (c, m) in members.iter().enumerate() {
        val.extend_from_slice(&m[..counts[0][c]]);
        new_train.extend_from_slice(&m[counts[0][c]..]);
    }
    new_train.sort_unstable();
    val.sort_unstable();
    ds.split.train = new_train;
    ds.split.val = val;
    ds.validate_split()?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holdout {
    Fraction(f64),
    Count(usize),
}

impl Default for Holdout {
    fn default() -> Self {
        Holdout::Fraction(0.15)
    }
}

/// Reads newline-separated row indices. Blank lines are ignored.
pub fn read_index_file(path: &Path) -> Result<Vec<usize>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|_| Error::MalformedRow {
            row: n + 1,
            reason: format!("{}: {t:?} is not a row index", path.display()),
        })?);
    }
    Ok(out)
}

pub fn write_index_file(path: &Path, idx: &[usize]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for i in idx {
        writeln!(f, "{i}")?;
    }
    f.flush()?;
    Ok(())
}

/// Applies split index files verbatim. The files must cover every row.
pub fn split_explicit(mut ds: Dataset, train: &Path, val: &Path, test: Option<&Path>) -> Result<Dataset> {
    ds.split = Split {
        train: read_index_file(train)?,
        val: read_index_file(val)?,
        test: match test {
            Some(p) => read_index_file(p)?,
            None => Vec::new(),
        },
    };
    ds.validate_split()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PreparedMeta {
    format: String,
    n_features: usize,
    label_map: LabelMap,
    provenance: Provenance,
}

const PREPARED_FORMAT: &str = "netsynth-dataset-v1";

/// Writes `dataset.json` and split files into `dir`. Datasets without a
/// reloadable source also get `features.csv`.
pub fn save_prepared(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut provenance = ds.provenance.clone();
    if provenance.source == Source::Memory {
        let path = dir.join("features.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header: Vec<String> = (0..ds.n_features()).map(|c| format!("f{c}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for r in 0..ds.len() {
            let mut rec: Vec<String> = ds.features.row(r).iter().map(f64::to_string).collect();
            rec.push(ds.label_map.name(ds.labels[r]).unwrap_or_default().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        provenance.source = Source::Csv {
            path: PathBuf::from("features.csv"),
            schema: CsvSchema::default(),
        };
        provenance.rows = None;
    }
    let meta = PreparedMeta {
        format: PREPARED_FORMAT.into(),
        n_features: ds.n_features(),
        label_map: ds.label_map.clone(),
        provenance,
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&meta)?)?;
    write_index_file(&dir.join("train.txt"), &ds.split.train)?;
    write_index_file(&dir.join("val.txt"), &ds.split.val)?;
    write_index_file(&dir.join("test.txt"), &ds.split.test)?;
    Ok(())
}

/// Reloads a dataset written by [`save_prepared`].
pub fn load_prepared(dir: &Path) -> Result<Dataset> {
    let meta: PreparedMeta = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    if meta.format != PREPARED_FORMAT {
        return Err(Error::Format(format!("unknown dataset format {:?}", meta.format)));
    }
    let resolve = |p: &Path| if p.is_relative() && !p.exists() { dir.join(p) } else { p.to_path_buf() };
    let mut ds = match &meta.provenance.source {
        Source::Csv { path, schema } => load_csv(&resolve(path), schema)?,
        Source::Idx { pairs } => {
            let pairs: Vec<(PathBuf, PathBuf)> = pairs.iter().map(|(a, b)| (resolve(a), resolve(b))).collect();
            load_idx(&pairs)?
        }
        Source::Memory => return Err(Error::Format("in-memory source cannot be reloaded".into())),
    };
    if let Some(rows) = &meta.provenance.rows {
        if rows.iter().any(|&r| r >= ds.len()) {
            return Err(Error::Format("row subset exceeds source rows".into()));
        }
        ds.features = ds.features.select_rows(rows);
        ds.labels = rows.iter().map(|&r| ds.labels[r]).collect();
    }
    if ds.n_features() != meta.n_features {
        return Err(Error::FeatureWidth {
            expected: meta.n_features,
            got: ds.n_features(),
        });
    }
    // the stored map wins: a subset may not contain every class name
    let names: Vec<String> = ds.labels.iter().map(|&l| ds.label_map.name(l).unwrap_or_default().to_string()).collect();
    ds.labels = names.iter().map(|n| meta.label_map.id(n)).collect::<Result<Vec<_>>>()?;
    ds.label_map = meta.label_map;
    ds.provenance = meta.provenance;
    ds.split = Split {
        train: read_index_file(&dir.join("train.txt"))?,
        val: read_index_file(&dir.join("val.txt"))?,
        test: read_index_file(&dir.join("test.txt"))?,
    };
    ds.validate_split()?;
    Ok(ds)
}

/// Per-class row counts, keyed by dense label id.
pub fn class_counts(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for &l in labels {
        *out.entry(l).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn memory_dataset(n: usize, classes: usize) -> Dataset {
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|v| v as f64 * 0.5).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let names: Vec<String> = (0..classes).map(|c| c.to_string()).collect();
        let provenance = Provenance {
            name: "toy".into(),
            source: Source::Memory,
            rows: None,
            notes: String::new(),
        };
        Dataset::new(x, labels, LabelMap::from_names(names).unwrap(), provenance).unwrap()
    }

    #[test]
    fn toy_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "a,b,y\n1,2,cat\n3.5,-1,dog\n0,0,cat\n");
        let ds = load_csv(&p, &CsvSchema::default()).unwrap();
        assert_eq!(ds.features.shape(), (3, 2));
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.features.row(1), &[3.5, -1.0]);
        assert_eq!(ds.label_map.names(), &["cat".to_string(), "dog".to_string()]);
    }

    #[test]
    fn label_column_and_delimiter() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.txt", "2;1;5\n1;0;6\n");
        let schema = CsvSchema {
            delimiter: ';',
            has_header: false,
            label_column: Some(0),
        };
        let ds = load_csv(&p, &schema).unwrap();
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.features.row(0), &[1.0, 5.0]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let m = LabelMap::from_raw(&["10", "9", "2", "10"]);
        assert_eq!(m.names(), &["2".to_string(), "9".to_string(), "10".to_string()]);
        assert!(matches!(m.id("11"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "a,b,y\n1,2,0\n3,x,1\n");
        match load_csv(&p, &CsvSchema::default()) {
            Err(Error::NonNumeric { row, col, value }) => {
                assert_eq!((row, col, value.as_str()), (3, 1, "x"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "a,b,y\n1,2,0\n3,1\n");
        match load_csv(&p, &CsvSchema::default()) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_80_10_10() {
        let ds = memory_dataset(100, 3);
        let f = SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        };
        let a = split_fractions(ds.clone(), f, &mut RandomSource::new(3)).unwrap();
        assert_eq!((a.split.train.len(), a.split.val.len(), a.split.test.len()), (80, 10, 10));
        let b = split_fractions(ds, f, &mut RandomSource::new(3)).unwrap();
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn partial_fractions_drop_rows() {
        let ds = memory_dataset(50, 2);
        let f = SplitFractions {
            train: 0.4,
            val: 0.2,
            test: 0.0,
        };
        let s = split_fractions(ds, f, &mut RandomSource::new(1)).unwrap();
        assert_eq!(s.len(), 30);
        s.validate_split().unwrap();
    }

    #[test]
    fn missing_training_class_rejected() {
        let mut ds = memory_dataset(10, 2);
        ds.labels = vec![0; 10];
        ds.labels[9] = 1;
        // a single train row goes to the class with the larger remainder
        let f = SplitFractions {
            train: 0.1,
            val: 0.9,
            test: 0.0,
        };
        let r = split_fractions(ds, f, &mut RandomSource::new(0));
        assert!(matches!(r, Err(Error::MissingClass { class: 1 })));
    }

    #[test]
    fn holdout_moves_stratified_rows() {
        let ds = memory_dataset(60, 3);
        let h = holdout_validation(ds, Holdout::Count(15), &mut RandomSource::new(2)).unwrap();
        assert_eq!(h.split.val.len(), 15);
        assert_eq!(h.split.train.len(), 45);
        let counts = class_counts(&h.split.val.iter().map(|&i| h.labels[i]).collect::<Vec<_>>());
        assert!(counts.values().all(|&c| c == 5));
    }

    fn idx_bytes(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn idx_round_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, idx_bytes(2051, &[2, 2, 2], &[0, 0, 0, 0, 255, 51, 0, 0])).unwrap();
        fs::write(&lab, idx_bytes(2049, &[2], &[7, 3])).unwrap();
        let ds = load_idx(&[(img.clone(), lab.clone())]).unwrap();
        assert_eq!(ds.features.shape(), (2, 4));
        assert_eq!(ds.features.row(0), &[0.0; 4]);
        assert_eq!(ds.features.row(1), &[1.0, 0.2, 0.0, 0.0]);
        assert_eq!(ds.labels, vec![1, 0]);

        fs::write(&img, idx_bytes(2051, &[2, 2, 2], &[0, 0, 0])).unwrap();
        assert!(matches!(load_idx(&[(img.clone(), lab.clone())]), Err(Error::Idx { .. })));
        fs::write(&img, idx_bytes(2049, &[2, 2, 2], &[0; 8])).unwrap();
        assert!(matches!(load_idx(&[(img, lab)]), Err(Error::Idx { .. })));
    }

    #[test]
    fn feature_csv_empty_and_width() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "");
        assert_eq!(load_feature_csv(&p, ',', false, 3).unwrap().shape(), (0, 3));
        let p = write(dir.path(), "w.csv", "1,2\n");
        assert!(matches!(
            load_feature_csv(&p, ',', false, 3),
            Err(Error::FeatureWidth { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn explicit_split_files_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let ds = memory_dataset(6, 2);
        let tr = write(dir.path(), "tr", "0\n1\n3\n");
        let va = write(dir.path(), "va", "2\n5\n");
        let te = write(dir.path(), "te", "4\n");
        let s = split_explicit(ds.clone(), &tr, &va, Some(&te)).unwrap();
        assert_eq!(s.split.train, vec![0, 1, 3]);
        assert_eq!(s.split.test, vec![4]);
        let te = write(dir.path(), "te2", "");
        assert!(split_explicit(ds, &tr, &va, Some(&te)).is_err());
    }

    proptest! {
        #[test]
        fn stratified_share_within_one_row(seed in any::<u64>(), n in 20usize..200, classes in 2usize..6, ftr in 0.3f64..0.8) {
            let ds = memory_dataset(n, classes);
            let fv = (1.0 - ftr) / 2.0;
            let f = SplitFractions { train: ftr, val: fv, test: 1.0 - ftr - fv };
            let s = split_fractions(ds, f, &mut RandomSource::new(seed)).unwrap();
            s.validate_split().unwrap();
            let all = class_counts(&s.labels);
            let tr = class_counts(&s.split.train.iter().map(|&i| s.labels[i]).collect::<Vec<_>>());
            for (c, &total) in &all {
                let got = *tr.get(c).unwrap_or(&0) as f64;
                prop_assert!((got - ftr * total as f64).abs() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn prepared_round_trip(seed in any::<u64>(), n in 12usize..60) {
            let dir = tempfile::tempdir().unwrap();
            let ds = memory_dataset(n, 3);
            let f = SplitFractions { train: 0.6, val: 0.2, test: 0.2 };
            let s = split_fractions(ds, f, &mut RandomSource::new(seed)).unwrap();
            save_prepared(&s, dir.path()).unwrap();
            let back = load_prepared(dir.path()).unwrap();
            prop_assert_eq!(&back.features, &s.features);
            prop_assert_eq!(&back.labels, &s.labels);
            prop_assert_eq!(&back.split, &s.split);
            prop_assert_eq!(&back.label_map, &s.label_map);
        }

        #[test]
        fn label_map_is_bijection(raw in proptest::collection::vec("[a-c0-9]{1,3}", 1..30)) {
            let m = LabelMap::from_raw(&raw);
            for r in &raw {
                let id = m.id(r).unwrap();
                prop_assert!(id < m.classes());
                prop_assert_eq!(m.name(id).unwrap(), r.as_str());
            }
        }
    }
}
