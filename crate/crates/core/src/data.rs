//! Dense labelled datasets, LIBSVM text I/O and the preprocessing steps
//! applied before training: standardization, train/test splitting and
//! class-size-aware subsampling.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense feature matrix with contiguous class identifiers.
///
/// Rows are stored row-major. Identifiers index `class_names`, which keeps
/// the label strings exactly as they appeared in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset needs at least one feature"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                actual: features.len(),
            });
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value {v}")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label id {l} has no class name ({} classes)",
                class_names.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Row count per class id (length `n_classes`).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset holding the given rows, in the given order. Class names
    /// are kept as is, so ids stay comparable with `self`.
    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset::new(self.dim, features, labels, self.class_names.clone())
    }

    /// Widen to `dim` columns by appending zeros (absent sparse entries).
    pub fn with_dim(&self, dim: usize) -> Result<Dataset> {
        if dim < self.dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.dim,
            });
        }
        if dim == self.dim {
            return Ok(self.clone());
        }
        let mut features = Vec::with_capacity(self.len() * dim);
        for row in self.rows() {
            features.extend_from_slice(row);
            features.resize(features.len() + dim - self.dim, 0.0);
        }
        Dataset::new(dim, features, self.labels.clone(), self.class_names.clone())
    }

    /// Class id whose name denotes the same numeric label as `name`.
    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| same_label(c, name))
    }
}

/// Compares two label strings as LIBSVM does: numerically when both parse,
/// so `+1` and `1` name the same class.
pub fn same_label(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Round-half-up, used for every count computation.
pub(crate) fn round_count(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Parses the `<idx>:<val>` tokens of one sparse line.
/// Indices are 1-based and strictly increasing.
pub(crate) fn parse_sparse_tokens<'a>(
    tokens: impl Iterator<Item = &'a str>,
    line: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for token in tokens {
        let (idx, val) = token
            .split_once(':')
            .ok_or_else(|| Error::parse(line, format!("expected index:value, got `{token}`")))?;
        let idx: i64 = idx
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid index `{idx}`")))?;
        if idx < 1 {
            return Err(Error::parse(line, format!("index must be >= 1, got {idx}")));
        }
        let idx = idx as usize;
        let val: f64 = val
            .parse()
            .map_err(|_| Error::parse(line, format!("non-numeric value `{val}`")))?;
        if !val.is_finite() {
            return Err(Error::parse(line, format!("non-finite value `{val}`")));
        }
        if let Some(&(prev, _)) = entries.last() {
            if idx == prev {
                return Err(Error::parse(line, format!("duplicate index {idx}")));
            }
            if idx < prev {
                return Err(Error::parse(
                    line,
                    format!("indices must increase: {idx} follows {prev}"),
                ));
            }
        }
        entries.push((idx, val));
    }
    Ok(entries)
}

/// Reads LIBSVM sparse data (`<label> <idx>:<val> ...`), densifying to the
/// largest index seen anywhere in the file.
pub fn parse_libsvm_data(reader: impl BufRead) -> Result<Dataset> {
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut sparse_rows = Vec::new();
    let mut dim = 0;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut tokens = line.split_whitespace();
        let Some(label) = tokens.next() else {
            continue;
        };
        if label.parse::<f64>().is_err() {
            return Err(Error::parse(lineno, format!("non-numeric label `{label}`")));
        }
        let entries = parse_sparse_tokens(tokens, lineno)?;
        if let Some(&(last, _)) = entries.last() {
            dim = dim.max(last);
        }
        let id = match class_names.iter().position(|c| c == label) {
            Some(id) => id,
            None => {
                class_names.push(label.to_string());
                class_names.len() - 1
            }
        };
        labels.push(id);
        sparse_rows.push(entries);
    }

    if labels.is_empty() {
        return Err(Error::parse(0, "no samples"));
    }
    if dim == 0 {
        return Err(Error::parse(0, "no feature values in any row"));
    }
    let mut features = vec![0.0; labels.len() * dim];
    for (r, entries) in sparse_rows.iter().enumerate() {
        for &(idx, val) in entries {
            features[r * dim + idx - 1] = val;
        }
    }
    Dataset::new(dim, features, labels, class_names)
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm_data(text.as_bytes())
}

/// Writes LIBSVM sparse data. Zeros are omitted, except that the last
/// column is always written on the first row so the width survives a
/// round trip.
pub fn write_libsvm_data(d: &Dataset, mut w: impl Write) -> std::io::Result<()> {
    for (r, row) in d.rows().enumerate() {
        write!(w, "{}", d.class_names[d.labels[r]])?;
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 || (r == 0 && j + 1 == d.dim) {
                write!(w, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Per-feature shift and scale fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    /// Original column indices retained, ascending.
    pub kept_features: Vec<usize>,
}

/// Fits means and population standard deviations. Constant columns are
/// dropped from `kept_features`.
pub fn standardize_fit(train: &Dataset) -> Result<Standardizer> {
    let n = train.len();
    if n < 2 {
        return Err(Error::invalid("standardization needs at least two rows"));
    }
    let mut means = Vec::new();
    let mut stddevs = Vec::new();
    let mut kept_features = Vec::new();
    for j in 0..train.dim() {
        let column = || train.rows().map(move |r| r[j]);
        let first = train.row(0)[j];
        if column().all(|v| v == first) {
            continue;
        }
        let mean = column().sum::<f64>() / n as f64;
        let var = column().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            means.push(mean);
            stddevs.push(sd);
            kept_features.push(j);
        }
    }
    Ok(Standardizer {
        means,
        stddevs,
        kept_features,
    })
}

pub fn standardize_apply(s: &Standardizer, d: &Dataset) -> Result<Dataset> {
    let Some(&max_col) = s.kept_features.last() else {
        return Err(Error::invalid("standardizer keeps no features"));
    };
    if d.dim() <= max_col {
        return Err(Error::DimensionMismatch {
            expected: max_col + 1,
            actual: d.dim(),
        });
    }
    let width = s.kept_features.len();
    let mut features = Vec::with_capacity(d.len() * width);
    for row in d.rows() {
        for (k, &j) in s.kept_features.iter().enumerate() {
            features.push((row[j] - s.means[k]) / s.stddevs[k]);
        }
    }
    Dataset::new(width, features, d.labels.clone(), d.class_names.clone())
}

/// Random train/test partition. The test part receives `round(f·n)` rows
/// drawn by a seeded shuffle; both parts keep the original row order.
pub fn split(d: &Dataset, f: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::invalid(format!("test fraction {f} outside (0, 1)")));
    }
    let n = d.len();
    let n_test = round_count(f * n as f64);
    if n_test == 0 || n_test >= n {
        return Err(Error::invalid(format!(
            "split of {n} rows at fraction {f} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_rows = order[..n_test].to_vec();
    let mut train_rows = order[n_test..].to_vec();
    test_rows.sort_unstable();
    train_rows.sort_unstable();
    Ok((d.select(&train_rows)?, d.select(&test_rows)?))
}

/// Per-class retention computed by [`subsample_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubsamplePlan {
    /// Exponent of the retention law `alpha(n) = C n^-zeta`.
    pub zeta: f64,
    /// Rows kept for each input class, same order as the input counts.
    pub kept: Vec<usize>,
}

/// Solves for the retention exponent so the kept total matches `f·N`,
/// with the smallest class retained in full.
pub fn subsample_plan(counts: &[usize], f: f64) -> Result<SubsamplePlan> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::invalid(format!("fraction {f} outside (0, 1)")));
    }
    let present: Vec<f64> = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64)
        .collect();
    if present.len() < 2 {
        return Err(Error::invalid(
            "subsampling needs at least two populated classes",
        ));
    }
    let n_min = present.iter().cloned().fold(f64::INFINITY, f64::min);
    let total: f64 = present.iter().sum();
    let target = f * total;
    let kept_total = |zeta: f64| -> f64 {
        present
            .iter()
            .map(|&n| n_min.powf(zeta) * n.powf(1.0 - zeta))
            .sum()
    };

    let floor = present.len() as f64 * n_min;
    if target < floor * (1.0 - 1e-12) {
        return Err(Error::Infeasible(format!(
            "fraction {f} below the minimum {:.6} reachable while keeping the smallest class whole",
            floor / total
        )));
    }

    // kept_total falls monotonically from N at zeta = 0 to n_c n_min at 1.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if kept_total(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let zeta = 0.5 * (lo + hi);
    let kept = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0
            } else {
                let n = c as f64;
                round_count(n_min.powf(zeta) * n.powf(1.0 - zeta)).min(c)
            }
        })
        .collect();
    Ok(SubsamplePlan { zeta, kept })
}

/// Reduces the dataset to roughly a fraction `f` of its rows while
/// preserving the rank order of class sizes.
pub fn subsample(d: &Dataset, f: f64, seed: u64) -> Result<Dataset> {
    let counts = d.class_counts();
    let plan = subsample_plan(&counts, f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (class, &keep) in plan.kept.iter().enumerate() {
        let mut members: Vec<usize> = (0..d.len()).filter(|&r| d.labels[r] == class).collect();
        members.shuffle(&mut rng);
        rows.extend_from_slice(&members[..keep]);
    }
    rows.sort_unstable();
    d.select(&rows)
}
