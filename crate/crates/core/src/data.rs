//! Dataset ingestion, column standardization and vertical feature partitioning.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: feature index {index} outside 1..={n_features}")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        n_features: usize,
    },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Dense samples-by-features matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub task: Task,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Array1<f64>, task: Task) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::InvalidDataset(format!(
                "{} rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if task == Task::Classification {
            if let Some(bad) = labels.iter().find(|y| **y != 1.0 && **y != -1.0) {
                return Err(DataError::InvalidDataset(format!(
                    "classification label {bad} is not +1/-1"
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            task,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Writes the dataset in LIBSVM text form, skipping zero entries.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (row, y) in self.features.rows().into_iter().zip(self.labels.iter()) {
            write!(out, "{y}").unwrap();
            for (j, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    write!(out, " {}:{v}", j + 1).unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Parses LIBSVM text (`<label> <idx>:<val> ...`, 1-based increasing indices) into a
/// dense dataset. With `zero_one_labels` set, classification labels `0`/`1` are
/// mapped to `-1`/`+1`.
pub fn parse_libsvm(
    text: &str,
    n_features: usize,
    task: Task,
    zero_one_labels: bool,
) -> Result<Dataset, DataError> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let mut label: f64 = label_tok.parse().map_err(|_| DataError::Parse {
            line: line_no,
            reason: format!("bad label `{label_tok}`"),
        })?;
        if task == Task::Classification && zero_one_labels {
            label = match label {
                0.0 => -1.0,
                1.0 => 1.0,
                other => {
                    return Err(DataError::Parse {
                        line: line_no,
                        reason: format!("label {other} is not 0/1"),
                    })
                }
            };
        }
        if task == Task::Classification && label != 1.0 && label != -1.0 {
            return Err(DataError::Parse {
                line: line_no,
                reason: format!("classification label {label} is not +1/-1"),
            });
        }

        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| DataError::Parse {
                line: line_no,
                reason: format!("expected idx:val, got `{tok}`"),
            })?;
            let idx: usize = idx.parse().map_err(|_| DataError::Parse {
                line: line_no,
                reason: format!("bad index `{idx}`"),
            })?;
            let val: f64 = val.parse().map_err(|_| DataError::Parse {
                line: line_no,
                reason: format!("bad value `{val}`"),
            })?;
            if idx == 0 || idx > n_features {
                return Err(DataError::IndexOutOfRange {
                    line: line_no,
                    index: idx,
                    n_features,
                });
            }
            if idx <= last {
                return Err(DataError::Parse {
                    line: line_no,
                    reason: format!("index {idx} not strictly increasing"),
                });
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        rows.push(entries);
        labels.push(label);
    }

    let mut features = Array2::zeros((rows.len(), n_features));
    for (i, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            features[[i, j]] = v;
        }
    }
    Dataset::new(features, Array1::from(labels), task)
}

/// Per-column statistics produced by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Centers every column and scales it to unit population standard deviation.
/// Constant columns become all zeros.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Vec<ColumnStats>), DataError> {
    if ds.n_samples() < 2 {
        return Err(DataError::InvalidDataset(
            "standardize needs at least two samples".into(),
        ));
    }
    let n = ds.n_samples() as f64;
    let mut features = ds.features.clone();
    let mut stats = Vec::with_capacity(ds.n_features());
    for mut col in features.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        // relative threshold so that columns equal up to rounding count as constant
        if std <= 1e-12 * mean.abs().max(1.0) {
            col.fill(0.0);
            stats.push(ColumnStats { mean, std: 0.0 });
        } else {
            col.mapv_inplace(|v| (v - mean) / std);
            stats.push(ColumnStats { mean, std });
        }
    }
    Ok((
        Dataset {
            features,
            labels: ds.labels.clone(),
            task: ds.task,
        },
        stats,
    ))
}

/// Applies previously computed column statistics (e.g. to held-out data).
pub fn apply_standardization(ds: &Dataset, stats: &[ColumnStats]) -> Dataset {
    let mut features = ds.features.clone();
    for (mut col, s) in features.axis_iter_mut(Axis(1)).zip(stats) {
        if s.std == 0.0 {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| (v - s.mean) / s.std);
        }
    }
    Dataset {
        features,
        labels: ds.labels.clone(),
        task: ds.task,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Contiguous,
    RoundRobin,
}

impl std::str::FromStr for PartitionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contiguous" => Ok(PartitionMode::Contiguous),
            "round_robin" => Ok(PartitionMode::RoundRobin),
            other => Err(format!("unknown partition mode `{other}`")),
        }
    }
}

/// Disjoint feature groups, one per worker. Worker ids are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerticalPartition {
    groups: Vec<Vec<usize>>,
    active_worker: usize,
}

impl VerticalPartition {
    pub fn new(groups: Vec<Vec<usize>>, active_worker: usize) -> Result<Self, DataError> {
        let q = groups.len();
        if q == 0 {
            return Err(DataError::InvalidPartition("no groups".into()));
        }
        if active_worker == 0 || active_worker > q {
            return Err(DataError::InvalidPartition(format!(
                "active worker {active_worker} outside 1..={q}"
            )));
        }
        let d: usize = groups.iter().map(Vec::len).sum();
        let mut seen = vec![false; d];
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(DataError::InvalidPartition(format!("group {} is empty", g + 1)));
            }
            for &j in group {
                if j >= d || seen[j] {
                    return Err(DataError::InvalidPartition(format!(
                        "feature {j} duplicated or out of range"
                    )));
                }
                seen[j] = true;
            }
        }
        Ok(VerticalPartition {
            groups,
            active_worker,
        })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, worker: usize) -> &[usize] {
        &self.groups[worker - 1]
    }

    pub fn n_workers(&self) -> usize {
        self.groups.len()
    }

    pub fn n_features(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn active_worker(&self) -> usize {
        self.active_worker
    }

    pub fn with_active_worker(self, active_worker: usize) -> Result<Self, DataError> {
        VerticalPartition::new(self.groups, active_worker)
    }
}

/// Splits `d` features across `q` workers. Worker 1 is the active worker.
pub fn partition_features(
    d: usize,
    q: usize,
    mode: PartitionMode,
) -> Result<VerticalPartition, DataError> {
    if q == 0 || q > d {
        return Err(DataError::InvalidPartition(format!(
            "cannot split {d} features across {q} workers"
        )));
    }
    let groups = match mode {
        PartitionMode::Contiguous => {
            let base = d / q;
            let extra = d % q;
            let mut start = 0;
            (0..q)
                .map(|g| {
                    let len = base + usize::from(g < extra);
                    let group = (start..start + len).collect();
                    start += len;
                    group
                })
                .collect()
        }
        PartitionMode::RoundRobin => (0..q)
            .map(|g| (g..d).step_by(q).collect())
            .collect(),
    };
    VerticalPartition::new(groups, 1)
}

/// A dataset split column-wise into per-worker blocks.
#[derive(Debug, Clone)]
pub struct PartitionedData {
    blocks: Vec<Array2<f64>>,
    labels: Array1<f64>,
    task: Task,
    partition: VerticalPartition,
}

impl PartitionedData {
    pub fn new(ds: &Dataset, partition: &VerticalPartition) -> Result<Self, DataError> {
        if ds.n_features() != partition.n_features() {
            return Err(DataError::InvalidPartition(format!(
                "partition covers {} features, dataset has {}",
                partition.n_features(),
                ds.n_features()
            )));
        }
        let blocks = partition
            .groups()
            .iter()
            .map(|g| ds.features.select(Axis(1), g))
            .collect();
        Ok(PartitionedData {
            blocks,
            labels: ds.labels.clone(),
            task: ds.task,
            partition: partition.clone(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_workers(&self) -> usize {
        self.blocks.len()
    }

    /// Local feature columns of `worker` (1-based).
    pub fn block(&self, worker: usize) -> &Array2<f64> {
        &self.blocks[worker - 1]
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn partition(&self) -> &VerticalPartition {
        &self.partition
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub task: Task,
    /// Standard deviation of the additive noise on the linear score.
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, task: Task, seed: u64) -> Self {
        SyntheticSpec {
            n,
            d,
            task,
            noise_std: 1.0,
            seed,
        }
    }
}

/// Synthetic dataset together with the weights that generated it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub true_weights: Array1<f64>,
}

/// Draws standard-normal features and ground-truth weights, then labels each row
/// from the noisy score `x·w* + e`. For classification the score is normalized by
/// `‖w*‖` first so that the noise level is comparable across dimensions.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic, DataError> {
    if spec.n == 0 || spec.d == 0 {
        return Err(DataError::InvalidDataset("n and d must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let true_weights = Array1::from_shape_simple_fn(spec.d, &mut normal);
    let features = Array2::from_shape_simple_fn((spec.n, spec.d), &mut normal);
    let norm = true_weights.dot(&true_weights).sqrt().max(f64::MIN_POSITIVE);
    let labels = features
        .rows()
        .into_iter()
        .map(|row| {
            let score = row.dot(&true_weights);
            let noise = spec.noise_std * normal();
            match spec.task {
                Task::Classification => {
                    if score / norm + noise >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Task::Regression => score + noise,
            }
        })
        .collect::<Array1<f64>>();
    Ok(Synthetic {
        dataset: Dataset::new(features, labels, spec.task)?,
        true_weights,
    })
}
