//! Pre-trained LIBSVM RBF classifiers: model file I/O, one-vs-one decision
//! values, Platt-calibrated probability differences and their gradients.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::borders::DecisionOracle;
use crate::data::parse_sparse_tokens;
use crate::error::{Error, Result};

/// A `c_svc` model with an RBF kernel, in LIBSVM's own layout.
///
/// Support vectors are grouped by class in `labels` order; `nr_sv[c]` of
/// them belong to class `c`. For the support vector at position `s` in the
/// block of class `c`, `sv_coef[r][s]` is its coefficient in the classifier
/// against class `c2`, where `r = c2` if `c2 < c` and `r = c2 - 1` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub gamma: f64,
    pub labels: Vec<String>,
    pub nr_sv: Vec<usize>,
    /// Width of the stored support vectors (largest sparse index).
    pub dim: usize,
    /// `total_sv × dim`, row-major.
    pub sv: Vec<f64>,
    pub sv_coef: Vec<Vec<f64>>,
    /// One per class pair, in (0,1), (0,2), .., (1,2), .. order.
    pub rho: Vec<f64>,
    pub prob_a: Option<Vec<f64>>,
    pub prob_b: Option<Vec<f64>>,
}

pub(crate) fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl SvmModel {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total_sv(&self) -> usize {
        self.nr_sv.iter().sum()
    }

    pub fn n_pairs(&self) -> usize {
        let n = self.n_classes();
        n * (n - 1) / 2
    }

    pub fn has_probability(&self) -> bool {
        self.prob_a.is_some() && self.prob_b.is_some()
    }

    pub fn support_vector(&self, s: usize) -> &[f64] {
        &self.sv[s * self.dim..(s + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        let count = |what: &str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{what}: expected {expected} entries, found {actual}"
                )))
            }
        };
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        let n = self.n_classes();
        if n < 2 {
            return Err(Error::invalid("model needs at least two classes"));
        }
        count("nr_sv", n, self.nr_sv.len())?;
        count("rho", self.n_pairs(), self.rho.len())?;
        let total = self.total_sv();
        count("support vector values", total * self.dim, self.sv.len())?;
        count("sv_coef rows", n - 1, self.sv_coef.len())?;
        for row in &self.sv_coef {
            count("sv_coef columns", total, row.len())?;
        }
        match (&self.prob_a, &self.prob_b) {
            (Some(a), Some(b)) => {
                count("probA", self.n_pairs(), a.len())?;
                count("probB", self.n_pairs(), b.len())?;
            }
            (None, None) => {}
            _ => return Err(Error::invalid("probA and probB must appear together")),
        }
        Ok(())
    }

    fn starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.nr_sv.len());
        let mut acc = 0;
        for &c in &self.nr_sv {
            starts.push(acc);
            acc += c;
        }
        starts
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() < self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let n = self.n_classes();
        if i == j || i >= n || j >= n {
            return Err(Error::invalid(format!(
                "({i}, {j}) is not a class pair of a {n}-class model"
            )));
        }
        Ok(())
    }

    fn probability_coefficients(&self, p: usize) -> Result<(f64, f64)> {
        match (&self.prob_a, &self.prob_b) {
            (Some(a), Some(b)) => Ok((a[p], b[p])),
            _ => Err(Error::MissingProbability(
                "model has no probA/probB; retrain with probability estimates enabled (svm-train -b 1)"
                    .into(),
            )),
        }
    }

    /// Squared distance to a support vector. Coordinates of `x` beyond the
    /// stored width meet implicit zeros, as in LIBSVM's sparse kernels.
    fn sv_distance2(&self, s: usize, x: &[f64]) -> f64 {
        let sv = self.support_vector(s);
        let head: f64 = sv.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let tail: f64 = x[self.dim..].iter().map(|v| v * v).sum();
        head + tail
    }

    /// RBF kernel value of `x` against every support vector. Computed once
    /// per point and shared by all class pairs.
    pub fn kernel_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok((0..self.total_sv())
            .map(|s| (-self.gamma * self.sv_distance2(s, x)).exp())
            .collect())
    }

    /// Coefficients of the (i, j) classifier as (support vector, weight).
    fn pair_terms(
        &self,
        i: usize,
        j: usize,
        starts: &[usize],
    ) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (si, sj) = (starts[i], starts[j]);
        let block_i = (si..si + self.nr_sv[i]).map(move |s| (s, self.sv_coef[j - 1][s]));
        let block_j = (sj..sj + self.nr_sv[j]).map(move |s| (s, self.sv_coef[i][s]));
        block_i.chain(block_j)
    }

    fn ordered_decision(&self, i: usize, j: usize, kv: &[f64], starts: &[usize]) -> f64 {
        let sum: f64 = self.pair_terms(i, j, starts).map(|(s, c)| c * kv[s]).sum();
        sum - self.rho[pair_index(i, j, self.n_classes())]
    }

    /// Decision value of the (i, j) classifier; positive votes for
    /// `labels[i]`. Swapping `i` and `j` negates it.
    pub fn pair_decision(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        self.check_pair(i, j)?;
        let kv = self.kernel_values(x)?;
        let starts = self.starts();
        Ok(if i < j {
            self.ordered_decision(i, j, &kv, &starts)
        } else {
            -self.ordered_decision(j, i, &kv, &starts)
        })
    }

    /// Decision values for all pairs in model order.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        let kv = self.kernel_values(x)?;
        let starts = self.starts();
        let n = self.n_classes();
        let mut out = Vec::with_capacity(self.n_pairs());
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.ordered_decision(i, j, &kv, &starts));
            }
        }
        Ok(out)
    }

    /// `p(labels[i]) - p(labels[j])` from the Platt sigmoid,
    /// `tanh(-(A g + B) / 2)` with LIBSVM's `probA`, `probB`.
    pub fn pair_probability(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        self.check_pair(i, j)?;
        if i > j {
            return Ok(-self.pair_probability(j, i, x)?);
        }
        let (a, b) = self.probability_coefficients(pair_index(i, j, self.n_classes()))?;
        let g = self.pair_decision(i, j, x)?;
        Ok((-(a * g + b) / 2.0).tanh())
    }

    /// Gradient of [`SvmModel::pair_probability`] with respect to `x`.
    pub fn pair_gradient(&self, i: usize, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_pair(i, j)?;
        if i > j {
            let mut g = self.pair_gradient(j, i, x)?;
            g.iter_mut().for_each(|v| *v = -*v);
            return Ok(g);
        }
        let (a, b) = self.probability_coefficients(pair_index(i, j, self.n_classes()))?;
        let kv = self.kernel_values(x)?;
        let starts = self.starts();
        let g = self.ordered_decision(i, j, &kv, &starts);
        let r = (-(a * g + b) / 2.0).tanh();

        let mut grad = vec![0.0; x.len()];
        for (s, c) in self.pair_terms(i, j, &starts) {
            let w = c * kv[s];
            let sv = self.support_vector(s);
            for (k, gk) in grad.iter_mut().enumerate() {
                let svk = if k < self.dim { sv[k] } else { 0.0 };
                *gk += w * (x[k] - svk);
            }
        }
        let scale = (1.0 - r * r) * (-a / 2.0) * (-2.0 * self.gamma);
        grad.iter_mut().for_each(|v| *v *= scale);
        Ok(grad)
    }

    /// LIBSVM's one-vs-one majority vote; ties go to the lower class index.
    pub fn vote(&self, x: &[f64]) -> Result<usize> {
        let dec = self.decision_values(x)?;
        let n = self.n_classes();
        let mut votes = vec![0usize; n];
        let mut p = 0;
        for i in 0..n {
            for j in i + 1..n {
                if dec[p] > 0.0 {
                    votes[i] += 1;
                } else {
                    votes[j] += 1;
                }
                p += 1;
            }
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        Ok(best)
    }
}

/// Calibrated probability difference of one class pair, positive towards
/// `labels[plus]`.
#[derive(Debug, Clone, Copy)]
pub struct SvmPairOracle<'a> {
    pub model: &'a SvmModel,
    pub plus: usize,
    pub minus: usize,
}

impl DecisionOracle for SvmPairOracle<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.model.pair_probability(self.plus, self.minus, x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.model.pair_gradient(self.plus, self.minus, x)
    }
}

fn parse_list<T: std::str::FromStr>(values: &[&str], line: usize, key: &str) -> Result<Vec<T>> {
    values
        .iter()
        .map(|v| {
            v.parse()
                .map_err(|_| Error::parse(line, format!("bad value `{v}` for {key}")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(values: &[&str], line: usize, key: &str) -> Result<T> {
    match values {
        [v] => v
            .parse()
            .map_err(|_| Error::parse(line, format!("bad value `{v}` for {key}"))),
        _ => Err(Error::parse(line, format!("{key} takes exactly one value"))),
    }
}

/// Reads a LIBSVM model file. Only `c_svc` with `kernel_type rbf` is
/// accepted.
pub fn parse_libsvm_model(reader: impl BufRead) -> Result<SvmModel> {
    let mut gamma = None;
    let mut nr_class: Option<usize> = None;
    let mut total_sv: Option<usize> = None;
    let mut rho = None;
    let mut labels = None;
    let mut nr_sv = None;
    let mut prob_a = None;
    let mut prob_b = None;
    let mut seen_type = false;
    let mut seen_kernel = false;

    let mut lines = reader.lines().enumerate();
    let mut sv_line = None;
    for (i, line) in lines.by_ref() {
        let line = line?;
        let lineno = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, values)) = tokens.split_first() else {
            continue;
        };
        match key {
            "svm_type" => {
                let t: String = parse_one(values, lineno, key)?;
                if t != "c_svc" {
                    return Err(Error::Unsupported(format!(
                        "svm_type {t}; only c_svc is supported"
                    )));
                }
                seen_type = true;
            }
            "kernel_type" => {
                let t: String = parse_one(values, lineno, key)?;
                if t != "rbf" {
                    return Err(Error::Unsupported(format!(
                        "kernel_type {t}; only rbf is supported"
                    )));
                }
                seen_kernel = true;
            }
            "gamma" => gamma = Some(parse_one::<f64>(values, lineno, key)?),
            "nr_class" => nr_class = Some(parse_one(values, lineno, key)?),
            "total_sv" => total_sv = Some(parse_one(values, lineno, key)?),
            "rho" => rho = Some(parse_list::<f64>(values, lineno, key)?),
            "label" => labels = Some(values.iter().map(|s| s.to_string()).collect::<Vec<_>>()),
            "nr_sv" => nr_sv = Some(parse_list::<usize>(values, lineno, key)?),
            "probA" => prob_a = Some(parse_list::<f64>(values, lineno, key)?),
            "probB" => prob_b = Some(parse_list::<f64>(values, lineno, key)?),
            // Kernel parameters of other kernel types carry no meaning for rbf.
            "degree" | "coef0" => {}
            "SV" => {
                sv_line = Some(lineno);
                break;
            }
            other => {
                return Err(Error::parse(
                    lineno,
                    format!("unknown header key `{other}`"),
                ))
            }
        }
    }

    let missing = |key: &str| Error::parse(0, format!("missing header key `{key}`"));
    if !seen_type {
        return Err(missing("svm_type"));
    }
    if !seen_kernel {
        return Err(missing("kernel_type"));
    }
    let sv_line = sv_line.ok_or_else(|| missing("SV"))?;
    let gamma = gamma.ok_or_else(|| missing("gamma"))?;
    let nr_class = nr_class.ok_or_else(|| missing("nr_class"))?;
    let total_sv = total_sv.ok_or_else(|| missing("total_sv"))?;
    let rho = rho.ok_or_else(|| missing("rho"))?;
    let labels = labels.ok_or_else(|| missing("label"))?;
    let nr_sv = nr_sv.ok_or_else(|| missing("nr_sv"))?;

    let mismatch = |what: &str, expected: usize, actual: usize| {
        Error::parse(
            sv_line,
            format!("count mismatch: {what} has {actual} entries, expected {expected}"),
        )
    };
    if labels.len() != nr_class {
        return Err(mismatch("label", nr_class, labels.len()));
    }
    if nr_sv.len() != nr_class {
        return Err(mismatch("nr_sv", nr_class, nr_sv.len()));
    }
    let summed: usize = nr_sv.iter().sum();
    if summed != total_sv {
        return Err(mismatch("nr_sv total", total_sv, summed));
    }
    let pairs = nr_class * nr_class.saturating_sub(1) / 2;
    if rho.len() != pairs {
        return Err(mismatch("rho", pairs, rho.len()));
    }
    for (name, p) in [("probA", &prob_a), ("probB", &prob_b)] {
        if let Some(p) = p {
            if p.len() != pairs {
                return Err(mismatch(name, pairs, p.len()));
            }
        }
    }

    let n_coef = nr_class.saturating_sub(1);
    let mut sv_coef = vec![Vec::with_capacity(total_sv); n_coef];
    let mut sparse = Vec::with_capacity(total_sv);
    let mut dim = 0;
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        let mut tokens = line.split_whitespace().peekable();
        if tokens.peek().is_none() {
            continue;
        }
        if sparse.len() == total_sv {
            return Err(Error::parse(lineno, "more support vectors than total_sv"));
        }
        for row in sv_coef.iter_mut() {
            let tok = tokens
                .next()
                .ok_or_else(|| Error::parse(lineno, "missing sv_coef value"))?;
            row.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("bad sv_coef `{tok}`")))?,
            );
        }
        let entries = parse_sparse_tokens(tokens, lineno)?;
        if let Some(&(last, _)) = entries.last() {
            dim = dim.max(last);
        }
        sparse.push(entries);
    }
    if sparse.len() != total_sv {
        return Err(mismatch("SV block", total_sv, sparse.len()));
    }
    let dim = dim.max(1);
    let mut sv = vec![0.0; total_sv * dim];
    for (s, entries) in sparse.iter().enumerate() {
        for &(idx, val) in entries {
            sv[s * dim + idx - 1] = val;
        }
    }

    let model = SvmModel {
        gamma,
        labels,
        nr_sv,
        dim,
        sv,
        sv_coef,
        rho,
        prob_a,
        prob_b,
    };
    model.validate()?;
    Ok(model)
}

pub fn parse_libsvm_model_str(text: &str) -> Result<SvmModel> {
    parse_libsvm_model(text.as_bytes())
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

/// Writes the model in LIBSVM's text format with round-trip float precision.
pub fn write_libsvm_model(m: &SvmModel, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "svm_type c_svc")?;
    writeln!(w, "kernel_type rbf")?;
    writeln!(w, "gamma {}", m.gamma)?;
    writeln!(w, "nr_class {}", m.n_classes())?;
    writeln!(w, "total_sv {}", m.total_sv())?;
    writeln!(w, "rho {}", join(&m.rho))?;
    writeln!(w, "label {}", m.labels.join(" "))?;
    if let (Some(a), Some(b)) = (&m.prob_a, &m.prob_b) {
        writeln!(w, "probA {}", join(a))?;
        writeln!(w, "probB {}", join(b))?;
    }
    let counts: Vec<String> = m.nr_sv.iter().map(|c| c.to_string()).collect();
    writeln!(w, "nr_sv {}", counts.join(" "))?;
    writeln!(w, "SV")?;
    for s in 0..m.total_sv() {
        let mut line = String::new();
        for row in &m.sv_coef {
            write!(line, "{} ", row[s]).unwrap();
        }
        for (k, &v) in m.support_vector(s).iter().enumerate() {
            if v != 0.0 || (s == 0 && k + 1 == m.dim) {
                write!(line, "{}:{} ", k + 1, v).unwrap();
            }
        }
        writeln!(w, "{}", line.trim_end())?;
    }
    Ok(())
}
