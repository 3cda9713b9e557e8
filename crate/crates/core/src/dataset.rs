//! Labeled datasets: CSV ingestion, the synthetic Sandwich generator,
//! train/test and cross-validation splitting, and class-stratified
//! mini-batch sampling.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A row-major feature matrix with one integer class id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    class_names: Option<Vec<String>>,
}

impl LabeledDataset {
    /// Builds a dataset, inferring the class count from the largest label.
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        Self::with_classes(features, labels, n_classes, None)
    }

    /// Builds a dataset over an explicit class universe `[0, n_classes)`.
    ///
    /// Not every class has to be present; subsets produced by splitting keep
    /// the parent's class universe.
    pub fn with_classes(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != n_classes {
                return Err(Error::Shape(format!(
                    "{} class names for {} classes",
                    names.len(),
                    n_classes
                )));
            }
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Data(format!(
                "row {row}: label {label} outside [0, {n_classes})"
            )));
        }
        if let Some(((row, col), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "row {row}, column {col}: non-finite value {v}"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            class_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Number of rows carrying each class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices grouped by class id, ascending within each class.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    /// The rows at `indices`, in that order, over the same class universe.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Replaces the feature matrix, keeping labels and class universe.
    pub fn with_features(&self, features: Array2<f64>) -> Result<LabeledDataset> {
        Self::with_classes(
            features,
            self.labels.clone(),
            self.n_classes,
            self.class_names.clone(),
        )
    }

    /// Checks the minimal requirements for fitting a metric.
    pub fn check_trainable(&self) -> Result<()> {
        if self.n_samples() == 0 || self.n_features() == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        let present = self.class_counts().iter().filter(|&&c| c > 0).count();
        if present < 2 {
            return Err(Error::Data(format!(
                "training needs at least 2 classes, found {present}"
            )));
        }
        Ok(())
    }

    /// Writes the dataset as CSV with a header row `f0,..,f{D-1},label`.
    ///
    /// Labels are written as class names when present, else as ids.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.n_features()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.n_features() + 1);
        for (row, &label) in self.features.rows().into_iter().zip(&self.labels) {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(match &self.class_names {
                Some(names) => names[label].clone(),
                None => label.to_string(),
            });
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
#[derive(Default)]
pub enum LabelColumn {
    /// Column selected by header name; requires a header row.
    Name(String),
    /// 0-based column index.
    Index(usize),
    /// The last column.
    #[default]
    Last,
}


impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

/// Header handling for CSV ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// Treat the first row as a header when any feature cell fails to parse.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub header: HeaderMode,
    /// Fixed class universe; labels are mapped onto these names and any
    /// other label is rejected. When absent, ids are assigned by first
    /// appearance.
    pub class_names: Option<Vec<String>>,
}

/// Loads a labeled dataset from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), options)
}

/// Parses a labeled dataset from CSV text.
///
/// Row numbers in errors are 1-based physical line numbers, counting the
/// header when one is present.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Data("CSV contains no rows".into()));
    }

    let arity = records[0].len();
    if arity < 2 {
        return Err(Error::Parse {
            row: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }
    let resolve_index = |i: usize| -> Result<usize> {
        if i < arity {
            Ok(i)
        } else {
            Err(Error::Config(format!(
                "label column index {i} out of range for {arity} columns"
            )))
        }
    };

    let first_looks_numeric = |label_col: usize| {
        records[0]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label_col)
            .all(|(_, cell)| cell.parse::<f64>().is_ok())
    };

    let (label_col, has_header) = match &options.label_column {
        LabelColumn::Name(name) => {
            if options.header == HeaderMode::Absent {
                return Err(Error::Config(format!(
                    "label column '{name}' selected by name but the file has no header"
                )));
            }
            let col = records[0]
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("unknown label column '{name}'")))?;
            (col, true)
        }
        LabelColumn::Index(i) => {
            let col = resolve_index(*i)?;
            let header = match options.header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => !first_looks_numeric(col),
            };
            (col, header)
        }
        LabelColumn::Last => {
            let col = arity - 1;
            let header = match options.header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => !first_looks_numeric(col),
            };
            (col, header)
        }
    };

    let body = if has_header { &records[1..] } else { &records[..] };
    if body.is_empty() {
        return Err(Error::Data("CSV contains a header but no data rows".into()));
    }
    let row_offset = if has_header { 2 } else { 1 };
    let d = arity - 1;

    let mut names: Vec<String> = options.class_names.clone().unwrap_or_default();
    let mut lookup: HashMap<String, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let fixed_classes = options.class_names.is_some();

    let mut data = Vec::with_capacity(body.len() * d);
    let mut labels = Vec::with_capacity(body.len());
    for (r, rec) in body.iter().enumerate() {
        let row = r + row_offset;
        if rec.len() != arity {
            return Err(Error::Parse {
                row,
                message: format!("expected {arity} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_col {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column {j}: '{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column {j}: non-finite value '{cell}'"),
                });
            }
            data.push(v);
        }
        let label = &rec[label_col];
        let id = match lookup.get(label) {
            Some(&id) => id,
            None if fixed_classes => {
                return Err(Error::Data(format!(
                    "row {row}: label '{label}' is not one of the known classes"
                )))
            }
            None => {
                let id = names.len();
                names.push(label.to_string());
                lookup.insert(label.to_string(), id);
                id
            }
        };
        labels.push(id);
    }
    let features = Array2::from_shape_vec((labels.len(), d), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let n_classes = names.len();
    LabeledDataset::with_classes(features, labels, n_classes, Some(names))
}

/// Parameters of the Sandwich generator.
///
/// Strip `s` (counting from the bottom) holds points with
/// `y ~ s + N(0, noise_sd)` and `x ~ U[0, width)` and belongs to class
/// `s mod classes`. The width is `horizontal_spacing` times the number of
/// points in the largest strip, so consecutive points of a strip are on
/// average `horizontal_spacing` apart while strips are 1 apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub strips_per_class: usize,
    pub noise_sd: f64,
    pub horizontal_spacing: f64,
    pub seed: u64,
}

impl Default for SandwichConfig {
    fn default() -> Self {
        Self {
            n_per_class: 150,
            classes: 3,
            strips_per_class: 3,
            noise_sd: 0.05,
            horizontal_spacing: 1.0,
            seed: 0,
        }
    }
}

impl SandwichConfig {
    pub fn n_strips(&self) -> usize {
        self.classes * self.strips_per_class
    }

    /// Points in strip `s`; a class's points are spread as evenly as possible
    /// over its strips, lower strips taking the remainder.
    pub fn strip_size(&self, strip: usize) -> usize {
        let nth = strip / self.classes;
        let base = self.n_per_class / self.strips_per_class;
        base + usize::from(nth < self.n_per_class % self.strips_per_class)
    }

    /// Horizontal extent of every strip.
    pub fn width(&self) -> f64 {
        self.horizontal_spacing * self.strip_size(0) as f64
    }
}

/// Generates the 2-D interleaved-strip Sandwich dataset.
///
/// Rows are emitted strip by strip from the bottom strip upward.
pub fn generate_sandwich(cfg: &SandwichConfig) -> Result<LabeledDataset> {
    if cfg.classes < 2 {
        return Err(Error::Config("sandwich needs at least 2 classes".into()));
    }
    if cfg.strips_per_class < 2 {
        return Err(Error::Config("sandwich needs at least 2 strips per class".into()));
    }
    if cfg.n_per_class < cfg.strips_per_class {
        return Err(Error::Config(format!(
            "n_per_class ({}) must be at least strips_per_class ({})",
            cfg.n_per_class, cfg.strips_per_class
        )));
    }
    if !(cfg.noise_sd >= 0.0) || !cfg.noise_sd.is_finite() {
        return Err(Error::Config(format!(
            "noise_sd must be finite and non-negative, got {}",
            cfg.noise_sd
        )));
    }
    if !(cfg.horizontal_spacing > 0.0) || !cfg.horizontal_spacing.is_finite() {
        return Err(Error::Config(format!(
            "horizontal_spacing must be positive, got {}",
            cfg.horizontal_spacing
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let width = cfg.width();
    let total = cfg.n_per_class * cfg.classes;
    let mut data = Vec::with_capacity(total * 2);
    let mut labels = Vec::with_capacity(total);
    for strip in 0..cfg.n_strips() {
        for _ in 0..cfg.strip_size(strip) {
            let x = rng.gen::<f64>() * width;
            let y = strip as f64
                + if cfg.noise_sd > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
            data.push(x);
            data.push(y);
            labels.push(strip % cfg.classes);
        }
    }
    let features =
        Array2::from_shape_vec((labels.len(), 2), data).map_err(|e| Error::Shape(e.to_string()))?;
    let names = (0..cfg.classes).map(|c| c.to_string()).collect();
    LabeledDataset::with_classes(features, labels, cfg.classes, Some(names))
}

/// How to partition a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    /// When set, produce this many cross-validation folds instead of a
    /// single holdout split.
    pub folds: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            stratified: true,
            seed: 0,
            folds: None,
        }
    }
}

/// One train/test partition with the parent row indices of each side.
#[derive(Debug, Clone)]
pub struct Partition {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Partition {
    fn from_indices(ds: &LabeledDataset, mut train: Vec<usize>, mut test: Vec<usize>) -> Self {
        train.sort_unstable();
        test.sort_unstable();
        Partition {
            train: ds.subset(&train),
            test: ds.subset(&test),
            train_indices: train,
            test_indices: test,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Split {
    Holdout(Partition),
    /// Fold `f` tests on its own rows and trains on all others.
    Folds(Vec<Partition>),
}

impl Split {
    /// Every partition, one for holdout and one per fold.
    pub fn partitions(&self) -> &[Partition] {
        match self {
            Split::Holdout(p) => std::slice::from_ref(p),
            Split::Folds(ps) => ps,
        }
    }
}

/// Splits `ds` into holdout train/test sets or cross-validation folds.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Split> {
    match spec.folds {
        Some(folds) => split_folds(ds, spec, folds).map(Split::Folds),
        None => split_holdout(ds, spec).map(Split::Holdout),
    }
}

fn class_too_small(ds: &LabeledDataset, class: usize, count: usize, needed: usize) -> Error {
    let name = ds
        .class_names()
        .map(|n| format!("'{}' (id {class})", n[class]))
        .unwrap_or_else(|| class.to_string());
    Error::Data(format!(
        "class {name} has {count} members, splitting needs at least {needed}"
    ))
}

fn split_holdout(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Partition> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut take = |mut idx: Vec<usize>, rng: &mut ChaCha8Rng| {
        idx.shuffle(rng);
        let n = idx.len();
        let n_train = ((n as f64 * spec.train_fraction).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    };
    if spec.stratified {
        for (class, members) in ds.class_members().into_iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            if members.len() < 2 {
                return Err(class_too_small(ds, class, members.len(), 2));
            }
            take(members, &mut rng);
        }
    } else {
        if ds.n_samples() < 2 {
            return Err(Error::Data("holdout split needs at least 2 rows".into()));
        }
        take((0..ds.n_samples()).collect(), &mut rng);
    }
    Ok(Partition::from_indices(ds, train, test))
}

fn split_folds(ds: &LabeledDataset, spec: &SplitSpec, folds: usize) -> Result<Vec<Partition>> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be at least 2, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Concatenate shuffled class blocks and deal positions round-robin so both
    // the fold sizes and each class's per-fold counts differ by at most one.
    let order: Vec<usize> = if spec.stratified {
        let mut order = Vec::with_capacity(ds.n_samples());
        for (class, mut members) in ds.class_members().into_iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            if members.len() < folds {
                return Err(class_too_small(ds, class, members.len(), folds));
            }
            members.shuffle(&mut rng);
            order.extend(members);
        }
        order
    } else {
        if ds.n_samples() < folds {
            return Err(Error::Data(format!(
                "{} rows cannot fill {folds} folds",
                ds.n_samples()
            )));
        }
        let mut order: Vec<usize> = (0..ds.n_samples()).collect();
        order.shuffle(&mut rng);
        order
    };
    let mut assignment = vec![Vec::new(); folds];
    for (pos, &row) in order.iter().enumerate() {
        assignment[pos % folds].push(row);
    }
    Ok((0..folds)
        .map(|f| {
            let test = assignment[f].clone();
            let train = assignment
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();
            Partition::from_indices(ds, train, test)
        })
        .collect())
}

/// Selected rows of a parent dataset.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl MiniBatch {
    pub fn from_dataset(ds: &LabeledDataset, indices: Vec<usize>) -> Self {
        MiniBatch {
            features: ds.features().select(Axis(0), &indices),
            labels: indices.iter().map(|&i| ds.labels()[i]).collect(),
            n_classes: ds.n_classes(),
            indices,
        }
    }

    /// The whole dataset, in row order.
    pub fn full(ds: &LabeledDataset) -> Self {
        Self::from_dataset(ds, (0..ds.n_samples()).collect())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws class-stratified mini-batches in which every included class has
/// at least `k + 1` members, so each query keeps `k` same-class neighbours
/// after excluding itself.
#[derive(Debug, Clone)]
pub struct MiniBatchSampler {
    members: Vec<Vec<usize>>,
    feasible: Vec<usize>,
    batch_size: usize,
    k: usize,
}

impl MiniBatchSampler {
    pub fn new(ds: &LabeledDataset, batch_size: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if batch_size < 2 * (k + 1) {
            return Err(Error::Config(format!(
                "batch_size {batch_size} cannot host two classes of k + 1 = {} members",
                k + 1
            )));
        }
        let members = ds.class_members();
        let mut feasible = Vec::new();
        for (class, m) in members.iter().enumerate() {
            if m.len() > k {
                feasible.push(class);
            } else if !m.is_empty() {
                warn!(
                    "class {class} has {} members, fewer than k + 1 = {}; excluded from training",
                    m.len(),
                    k + 1
                );
            }
        }
        if feasible.len() < 2 {
            let class = (0..members.len())
                .find(|c| !feasible.contains(c))
                .unwrap_or(0);
            return Err(Error::Feasibility {
                class,
                k,
                available: members.get(class).map_or(0, |m| m.len().saturating_sub(1)),
            });
        }
        Ok(Self {
            members,
            feasible,
            batch_size,
            k,
        })
    }

    /// Classes eligible for sampling.
    pub fn feasible_classes(&self) -> &[usize] {
        &self.feasible
    }

    /// Number of rows belonging to feasible classes.
    pub fn feasible_rows(&self) -> usize {
        self.feasible.iter().map(|&c| self.members[c].len()).sum()
    }

    /// Per-class quotas for a batch drawn from `classes`.
    ///
    /// Quotas are proportional to class size (largest remainder), floored at
    /// `k + 1` and capped at the class size.
    fn quotas(&self, classes: &[usize]) -> Vec<usize> {
        let sizes: Vec<usize> = classes.iter().map(|&c| self.members[c].len()).collect();
        let total: usize = sizes.iter().sum();
        let budget = self.batch_size.min(total);
        let floor = self.k + 1;
        let targets: Vec<f64> = sizes
            .iter()
            .map(|&s| budget as f64 * s as f64 / total as f64)
            .collect();
        let mut q: Vec<usize> = targets
            .iter()
            .zip(&sizes)
            .map(|(&t, &s)| (t.floor() as usize).max(floor).min(s))
            .collect();
        let mut assigned: usize = q.iter().sum();
        while assigned < budget {
            let pick = (0..q.len())
                .filter(|&i| q[i] < sizes[i])
                .max_by(|&a, &b| {
                    (targets[a] - q[a] as f64)
                        .total_cmp(&(targets[b] - q[b] as f64))
                        .then(b.cmp(&a))
                })
                .expect("budget never exceeds total class size");
            q[pick] += 1;
            assigned += 1;
        }
        while assigned > budget {
            let pick = (0..q.len())
                .filter(|&i| q[i] > floor)
                .min_by(|&a, &b| {
                    (targets[a] - q[a] as f64)
                        .total_cmp(&(targets[b] - q[b] as f64))
                        .then(a.cmp(&b))
                })
                .expect("budget admits the k + 1 floor for every sampled class");
            q[pick] -= 1;
            assigned -= 1;
        }
        q
    }

    /// Sample indices of one mini-batch.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let floor = self.k + 1;
        let max_classes = self.batch_size / floor;
        let classes: Vec<usize> = if max_classes >= self.feasible.len() {
            self.feasible.clone()
        } else {
            let mut chosen: Vec<usize> = self
                .feasible
                .choose_multiple(rng, max_classes)
                .copied()
                .collect();
            chosen.sort_unstable();
            chosen
        };
        let quotas = self.quotas(&classes);
        let mut indices = Vec::with_capacity(quotas.iter().sum());
        for (&class, &quota) in classes.iter().zip(&quotas) {
            let members = &self.members[class];
            if quota == members.len() {
                indices.extend_from_slice(members);
            } else {
                indices.extend(members.choose_multiple(rng, quota).copied());
            }
        }
        indices.shuffle(rng);
        indices
    }

    pub fn sample<R: Rng + ?Sized>(&self, ds: &LabeledDataset, rng: &mut R) -> MiniBatch {
        MiniBatch::from_dataset(ds, self.sample_indices(rng))
    }
}

/// Draws one class-stratified mini-batch; see [`MiniBatchSampler`].
pub fn sample_minibatch<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    batch_size: usize,
    k: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    Ok(MiniBatchSampler::new(ds, batch_size, k)?.sample(ds, rng))
}
