//! One-vs-one multi-class classification and pairwise probability coupling.

use std::io::{BufRead, Write};

use crate::borders::{
    derive_seed, read_borders_from, train_borders, write_borders, BordersModel, Lines, TrainOptions,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{AgfConfig, AgfOracle, BinaryProblem};
use crate::svm::{pair_index, SvmModel, SvmPairOracle};

/// Pairwise probability differences `r_ij = (p_j - p_i) / (p_i + p_j)`,
/// stored for `i < j` in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseR {
    n_classes: usize,
    values: Vec<f64>,
}

impl PairwiseR {
    pub fn new(n_classes: usize, values: Vec<f64>) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("coupling needs at least two classes"));
        }
        let pairs = n_classes * (n_classes - 1) / 2;
        if values.len() != pairs {
            return Err(Error::DimensionMismatch {
                expected: pairs,
                actual: values.len(),
            });
        }
        if let Some(r) = values.iter().find(|r| r.is_nan() || r.abs() > 1.0) {
            return Err(Error::invalid(format!(
                "pairwise value {r} outside [-1, 1]"
            )));
        }
        Ok(Self { n_classes, values })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// `r_ij`, extended to `i > j` by `r_ji = -r_ij`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.values[pair_index(i, j, self.n_classes)],
            std::cmp::Ordering::Greater => -self.values[pair_index(j, i, self.n_classes)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }
}

/// Dense Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= 1e-14 * scale {
            return Err(Error::Singular(format!("zero pivot in column {col}")));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Class probabilities from pairwise differences.
///
/// Minimizes `sum_i sum_{j != i} (mu_ji p_i - mu_ij p_j)^2` over the
/// simplex, where `mu_ij = (1 - r_ij) / 2` is the pairwise probability of
/// class `i`. The stationarity conditions with a multiplier for the sum
/// constraint form an `(n + 1)`-unknown linear system, solved directly.
pub fn couple_probabilities(r: &PairwiseR) -> Result<Vec<f64>> {
    let n = r.n_classes();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let rij = r.get(i, j);
            a[i][i] += (1.0 + rij) * (1.0 + rij);
            a[i][j] = -(1.0 - rij * rij);
        }
        a[i][n] = 1.0;
        a[n][i] = 1.0;
    }
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = 1.0;
    let mut p = solve_dense(a, rhs)?;
    p.truncate(n);

    if let Some(neg) = p.iter().find(|&&v| v < -1e-10) {
        return Err(Error::Singular(format!(
            "coupled probability {neg} is negative"
        )));
    }
    p.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// One binary borders model per class pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBordersModel {
    class_names: Vec<String>,
    /// Pair models in (0,1), (0,2), .., (1,2), .. order. The model for
    /// (i, j) reports `j` for positive decision values and `i` otherwise.
    pairs: Vec<BordersModel>,
}

impl MultiBordersModel {
    pub fn new(class_names: Vec<String>, pairs: Vec<BordersModel>) -> Result<Self> {
        let n = class_names.len();
        if n < 2 {
            return Err(Error::invalid(
                "multi-class model needs at least two classes",
            ));
        }
        if pairs.len() != n * (n - 1) / 2 {
            return Err(Error::invalid(format!(
                "{} pair models for {n} classes, expected {}",
                pairs.len(),
                n * (n - 1) / 2
            )));
        }
        let dim = pairs[0].dim();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let m = &pairs[k];
                if m.class_minus != i || m.class_plus != j {
                    return Err(Error::invalid(format!(
                        "pair model {k} is for classes ({}, {}), expected ({i}, {j})",
                        m.class_minus, m.class_plus
                    )));
                }
                if m.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: m.dim(),
                    });
                }
                k += 1;
            }
        }
        Ok(Self { class_names, pairs })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].dim()
    }

    pub fn pairs(&self) -> &[BordersModel] {
        &self.pairs
    }

    pub fn pair(&self, i: usize, j: usize) -> &BordersModel {
        &self.pairs[pair_index(i, j, self.n_classes())]
    }

    pub fn total_borders(&self) -> usize {
        self.pairs.iter().map(BordersModel::n_borders).sum()
    }

    /// Pairwise `tanh` probability differences at `x`.
    pub fn pairwise_r(&self, x: &[f64]) -> Result<PairwiseR> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let values = self.pairs.iter().map(|m| m.probability(x)).collect();
        PairwiseR::new(self.n_classes(), values)
    }

    /// Most probable class and the coupled probabilities.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let p = couple_probabilities(&self.pairwise_r(x)?)?;
        Ok((argmax(&p), p))
    }
}

/// Direct SVM prediction by coupling the calibrated pairwise probabilities,
/// without border sampling.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    let (Some(prob_a), Some(prob_b)) = (&model.prob_a, &model.prob_b) else {
        return Err(Error::MissingProbability(
            "model has no probA/probB; retrain with probability estimates enabled (svm-train -b 1)"
                .into(),
        ));
    };
    let dec = model.decision_values(x)?;
    // Positive decision values favour the lower index; r_ij points to j.
    let values = dec
        .iter()
        .zip(prob_a.iter().zip(prob_b))
        .map(|(g, (a, b))| ((a * g + b) / 2.0).tanh())
        .collect();
    let p = couple_probabilities(&PairwiseR::new(model.n_classes(), values)?)?;
    Ok((argmax(&p), p))
}

fn pair_seed(seed: u64, i: usize, j: usize) -> u64 {
    derive_seed(seed, ((i as u64) << 32) | j as u64)
}

/// Border-samples every class pair of a probability-enabled SVM model.
///
/// Training rows are matched to model classes by label value; rows of other
/// classes are ignored. `n_borders` is per pair.
pub fn accelerate_svm(
    model: &SvmModel,
    train: &Dataset,
    n_borders: usize,
    seed: u64,
    opts: &TrainOptions,
) -> Result<MultiBordersModel> {
    if !model.has_probability() {
        return Err(Error::MissingProbability(
            "model has no probA/probB; retrain with probability estimates enabled (svm-train -b 1)"
                .into(),
        ));
    }
    let train = if train.dim() < model.dim {
        train.with_dim(model.dim)?
    } else {
        train.clone()
    };
    let class_map: Vec<Option<usize>> = model.labels.iter().map(|l| train.class_id(l)).collect();
    let n = model.n_classes();
    let mut pairs = Vec::with_capacity(model.n_pairs());
    for i in 0..n {
        for j in i + 1..n {
            let (Some(ci), Some(cj)) = (class_map[i], class_map[j]) else {
                return Err(Error::invalid(format!(
                    "no training rows for class pair ({}, {})",
                    model.labels[i], model.labels[j]
                )));
            };
            let problem = BinaryProblem::from_dataset(&train, ci, cj)?;
            let oracle = SvmPairOracle {
                model,
                plus: j,
                minus: i,
            };
            let mut m = train_borders(&oracle, &problem, n_borders, pair_seed(seed, i, j), opts)?;
            m.class_minus = i;
            m.class_plus = j;
            pairs.push(m);
        }
    }
    MultiBordersModel::new(model.labels.clone(), pairs)
}

/// Border-samples the AGF decision function of every class pair.
pub fn train_agf_multi(
    train: &Dataset,
    config: &AgfConfig,
    n_borders: usize,
    seed: u64,
    opts: &TrainOptions,
) -> Result<MultiBordersModel> {
    let n = train.n_classes();
    if n < 2 {
        return Err(Error::invalid("training data has a single class"));
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let problem = BinaryProblem::from_dataset(train, i, j)?;
            if config.k > problem.len() {
                return Err(Error::invalid(format!(
                    "k = {} exceeds the {} rows of class pair ({}, {})",
                    config.k,
                    problem.len(),
                    train.class_names()[i],
                    train.class_names()[j]
                )));
            }
            let oracle = AgfOracle {
                problem,
                config: *config,
            };
            let mut m = train_borders(
                &oracle,
                &oracle.problem,
                n_borders,
                pair_seed(seed, i, j),
                opts,
            )?;
            m.class_minus = i;
            m.class_plus = j;
            pairs.push(m);
        }
    }
    MultiBordersModel::new(train.class_names().to_vec(), pairs)
}

pub const MULTI_HEADER: &str = "multi-borders v1";

/// Container format: header, class count, class names, then one
/// borders-model record per pair in lexicographic pair order.
pub fn write_multi_borders(m: &MultiBordersModel, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{MULTI_HEADER}")?;
    writeln!(w, "nclass {}", m.n_classes())?;
    writeln!(w, "classes {}", m.class_names.join(" "))?;
    for pair in &m.pairs {
        write_borders(pair, &mut w)?;
    }
    Ok(())
}

pub fn read_multi_borders(reader: impl BufRead) -> Result<MultiBordersModel> {
    let mut lines = Lines::new(reader);
    let header = lines.expect_line("header")?;
    if header.trim() != MULTI_HEADER {
        return Err(Error::parse(
            lines.lineno(),
            format!("unsupported multi-borders version `{}`", header.trim()),
        ));
    }
    let n = match lines.expect_key("nclass")?.as_slice() {
        [n] => lines.parse_usize(n)?,
        _ => return Err(Error::parse(lines.lineno(), "nclass takes one value")),
    };
    let names = lines.expect_key("classes")?;
    if names.len() != n || n < 2 {
        return Err(Error::parse(
            lines.lineno(),
            format!("expected {n} class names, found {}", names.len()),
        ));
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for _ in 0..n * (n - 1) / 2 {
        pairs.push(read_borders_from(&mut lines)?);
    }
    if let Some(extra) = lines.next_line()? {
        return Err(Error::parse(
            lines.lineno(),
            format!("unexpected trailing content `{extra}`"),
        ));
    }
    MultiBordersModel::new(names, pairs).map_err(|e| Error::parse(lines.lineno(), e.to_string()))
}
