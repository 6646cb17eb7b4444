//! Piecewise-linear border classifier.
//!
//! The border of a binary decision function is sampled by bisecting between
//! pairs of training samples of opposite class. Each root is stored with the
//! gradient at that point; a test point is classified by the normal of its
//! nearest border sample, so the cost grows with the number of border
//! samples and not with the training set.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{squared_distance, BinaryProblem};

/// A differentiable estimate of `p(+1|x) - p(-1|x)`.
pub trait DecisionOracle: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Oracle assembled from a pair of closures.
pub struct FnOracle<V, G> {
    value: V,
    gradient: G,
}

impl<V, G> FnOracle<V, G>
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(value: V, gradient: G) -> Self {
        Self { value, gradient }
    }
}

impl<V, G> DecisionOracle for FnOracle<V, G>
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.value)(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.gradient)(x))
    }
}

/// Oracle with value and gradient negated, swapping the roles of the classes.
pub struct Negated<O>(pub O);

impl<O: DecisionOracle> DecisionOracle for Negated<O> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.0.value(x)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.0.gradient(x)?;
        g.iter_mut().for_each(|v| *v = -*v);
        Ok(g)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central finite-difference gradient with step `1e-5 (1 + |x|)`.
pub fn finite_difference_gradient(oracle: &dyn DecisionOracle, x: &[f64]) -> Result<Vec<f64>> {
    let h = 1e-5 * (1.0 + norm(x));
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = oracle.value(&probe)?;
        probe[j] = x[j] - h;
        let down = oracle.value(&probe)?;
        probe[j] = x[j];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Checks the oracle's gradient against finite differences at each point.
pub fn check_gradient(
    oracle: &dyn DecisionOracle,
    points: &[Vec<f64>],
    rel_tol: f64,
) -> Result<()> {
    for x in points {
        let analytic = oracle.gradient(x)?;
        let numeric = finite_difference_gradient(oracle, x)?;
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        if norm(&diff) > rel_tol * scale + 1e-12 {
            return Err(Error::invalid(format!(
                "oracle gradient {analytic:?} disagrees with finite differences {numeric:?} at {x:?}"
            )));
        }
    }
    Ok(())
}

/// Bisects the oracle to zero along the segment from `x_minus` (negative
/// value) to `x_plus` (positive value).
///
/// Stops once `|value| <= tol`, after 100 halvings, or when the bracket is
/// narrower than `1e-12` of the segment; the last two return the midpoint.
pub fn find_border_point(
    oracle: &dyn DecisionOracle,
    x_plus: &[f64],
    x_minus: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    if x_plus.len() != x_minus.len() {
        return Err(Error::DimensionMismatch {
            expected: x_plus.len(),
            actual: x_minus.len(),
        });
    }
    let f_plus = oracle.value(x_plus)?;
    let f_minus = oracle.value(x_minus)?;
    if !f_plus.is_finite() || !f_minus.is_finite() {
        return Err(Error::RootFinding(
            "non-finite decision value at an endpoint".into(),
        ));
    }
    if !(f_plus > 0.0 && f_minus < 0.0) {
        return Err(Error::RootFinding(format!(
            "endpoints do not bracket a root: {f_plus} at the positive end, {f_minus} at the negative end"
        )));
    }
    let at = |t: f64| -> Vec<f64> {
        x_minus
            .iter()
            .zip(x_plus)
            .map(|(a, b)| a + t * (b - a))
            .collect()
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let point = at(mid);
        let v = oracle.value(&point)?;
        if !v.is_finite() {
            return Err(Error::RootFinding(format!(
                "non-finite decision value at {point:?}"
            )));
        }
        if v.abs() <= tol {
            return Ok(point);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(at(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Residual accepted for a border sample.
    pub tol: f64,
    /// Pair draws allowed per border sample before giving up.
    pub max_attempts: usize,
    /// Border samples whose gradient norm falls below this are redrawn.
    pub min_grad: f64,
    /// Compare the oracle gradient with finite differences at the first
    /// border sample.
    pub check_gradient: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_attempts: 100,
            min_grad: 1e-12,
            check_gradient: true,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for stream `index` under a master seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index)
}

/// Border samples and their gradient normals for one binary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BordersModel {
    dim: usize,
    points: Vec<f64>,
    normals: Vec<f64>,
    /// Class reported for a negative decision value.
    pub class_minus: usize,
    /// Class reported for a positive decision value.
    pub class_plus: usize,
}

impl BordersModel {
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        normals: Vec<f64>,
        class_minus: usize,
        class_plus: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("borders model needs a positive dimension"));
        }
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} point coordinates do not form rows of width {dim}",
                points.len()
            )));
        }
        if normals.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                actual: normals.len(),
            });
        }
        if normals.chunks_exact(dim).any(|v| {
            let n = norm(v);
            n.is_nan() || n <= 0.0
        }) {
            return Err(Error::invalid("border normals must be non-zero"));
        }
        Ok(Self {
            dim,
            points,
            normals,
            class_minus,
            class_plus,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_borders(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the border sample closest to `x`; the lowest index wins ties.
    pub fn nearest(&self, x: &[f64]) -> usize {
        assert_eq!(x.len(), self.dim, "query dimension");
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, b) in self.points.chunks_exact(self.dim).enumerate() {
            let d2 = squared_distance(x, b);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }

    /// `v_i · (x - b_i)` for the nearest border sample `i`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let i = self.nearest(x);
        self.normal(i)
            .iter()
            .zip(x.iter().zip(self.point(i)))
            .map(|(v, (a, b))| v * (a - b))
            .sum()
    }

    /// Probability difference estimate `tanh(decision)`.
    pub fn probability(&self, x: &[f64]) -> f64 {
        self.decision(x).tanh()
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        if self.decision(x) > 0.0 {
            self.class_plus
        } else {
            self.class_minus
        }
    }

    /// Largest `|oracle(b_i)|` over the border samples.
    pub fn max_residual(&self, oracle: &dyn DecisionOracle) -> Result<f64> {
        let mut worst = 0.0_f64;
        for i in 0..self.n_borders() {
            worst = worst.max(oracle.value(self.point(i))?.abs());
        }
        Ok(worst)
    }
}

fn draw_border_sample(
    oracle: &dyn DecisionOracle,
    problem: &BinaryProblem,
    plus: &[usize],
    minus: &[usize],
    rng: &mut ChaCha8Rng,
    opts: &TrainOptions,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    for _ in 0..opts.max_attempts {
        let a = problem.sample(plus[rng.random_range(0..plus.len())]);
        let b = problem.sample(minus[rng.random_range(0..minus.len())]);
        if !(oracle.value(a)? > 0.0 && oracle.value(b)? < 0.0) {
            continue;
        }
        let root = find_border_point(oracle, a, b, opts.tol)?;
        if oracle.value(&root)?.abs() > opts.tol {
            continue;
        }
        let normal = oracle.gradient(&root)?;
        if norm(&normal) < opts.min_grad || normal.iter().any(|v| !v.is_finite()) {
            continue;
        }
        return Ok(Some((root, normal)));
    }
    Ok(None)
}

/// Samples `n_borders` points of the oracle's zero set.
///
/// Each border sample starts from a random +1 and a random -1 training
/// sample. Pairs where the oracle does not change sign, roots that miss the
/// tolerance and vanishing gradients are redrawn. Border sample `i` uses its
/// own RNG stream, so the result does not depend on thread scheduling.
/// The returned model reports class 1 for positive values and 0 otherwise.
pub fn train_borders(
    oracle: &dyn DecisionOracle,
    problem: &BinaryProblem,
    n_borders: usize,
    seed: u64,
    opts: &TrainOptions,
) -> Result<BordersModel> {
    if n_borders == 0 {
        return Err(Error::invalid("number of border samples must be positive"));
    }
    let plus: Vec<usize> = (0..problem.len())
        .filter(|&i| problem.sign(i) > 0.0)
        .collect();
    let minus: Vec<usize> = (0..problem.len())
        .filter(|&i| problem.sign(i) < 0.0)
        .collect();

    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..n_borders)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            draw_border_sample(oracle, problem, &plus, &minus, &mut rng, opts)?.ok_or_else(|| {
                Error::Untrainable(format!(
                    "no border sample after {} pair draws; the decision function may not change sign over the data",
                    opts.max_attempts
                ))
            })
        })
        .collect::<Result<_>>()?;

    if opts.check_gradient {
        check_gradient(oracle, &[samples[0].0.clone()], 1e-3)?;
    }

    let dim = problem.dim();
    let mut points = Vec::with_capacity(n_borders * dim);
    let mut normals = Vec::with_capacity(n_borders * dim);
    for (b, v) in samples {
        points.extend(b);
        normals.extend(v);
    }
    BordersModel::new(dim, points, normals, 0, 1)
}

/// Line reader that skips blank lines and tracks line numbers.
pub(crate) struct Lines<R> {
    inner: std::io::Lines<R>,
    lineno: usize,
}

impl<R: BufRead> Lines<R> {
    pub(crate) fn new(reader: R) -> Self {
        Self {
            inner: reader.lines(),
            lineno: 0,
        }
    }

    pub(crate) fn lineno(&self) -> usize {
        self.lineno
    }

    pub(crate) fn next_line(&mut self) -> Result<Option<String>> {
        for line in self.inner.by_ref() {
            self.lineno += 1;
            let line = line?;
            if !line.trim().is_empty() {
                return Ok(Some(line));
            }
        }
        Ok(None)
    }

    pub(crate) fn expect_line(&mut self, what: &str) -> Result<String> {
        self.next_line()?
            .ok_or_else(|| Error::parse(self.lineno, format!("truncated stream: expected {what}")))
    }

    /// Reads `<key> <values...>` and returns the values.
    pub(crate) fn expect_key(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.expect_line(key)?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(key) {
            return Err(Error::parse(
                self.lineno,
                format!("expected `{key}`, got `{line}`"),
            ));
        }
        Ok(tokens.map(str::to_string).collect())
    }

    pub(crate) fn parse_usize(&self, token: &str) -> Result<usize> {
        token
            .parse()
            .map_err(|_| Error::parse(self.lineno, format!("expected a count, got `{token}`")))
    }
}

pub const BORDERS_HEADER: &str = "borders-model v1";

/// Writes the versioned text form: header, class ids, dimension, count,
/// then one line per border sample holding its point and normal.
pub fn write_borders(m: &BordersModel, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{BORDERS_HEADER}")?;
    writeln!(w, "classes {} {}", m.class_minus, m.class_plus)?;
    writeln!(w, "dim {}", m.dim)?;
    writeln!(w, "nb {}", m.n_borders())?;
    for i in 0..m.n_borders() {
        let mut first = true;
        for v in m.point(i).iter().chain(m.normal(i)) {
            if !first {
                write!(w, " ")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub(crate) fn read_borders_from<R: BufRead>(lines: &mut Lines<R>) -> Result<BordersModel> {
    let header = lines.expect_line("header")?;
    if header.trim() != BORDERS_HEADER {
        return Err(Error::parse(
            lines.lineno(),
            format!("unsupported borders model version `{}`", header.trim()),
        ));
    }
    let classes = lines.expect_key("classes")?;
    if classes.len() != 2 {
        return Err(Error::parse(lines.lineno(), "classes takes two ids"));
    }
    let class_minus = lines.parse_usize(&classes[0])?;
    let class_plus = lines.parse_usize(&classes[1])?;
    let dim = match lines.expect_key("dim")?.as_slice() {
        [d] => lines.parse_usize(d)?,
        _ => return Err(Error::parse(lines.lineno(), "dim takes one value")),
    };
    let nb = match lines.expect_key("nb")?.as_slice() {
        [n] => lines.parse_usize(n)?,
        _ => return Err(Error::parse(lines.lineno(), "nb takes one value")),
    };
    let mut points = Vec::with_capacity(nb * dim);
    let mut normals = Vec::with_capacity(nb * dim);
    for k in 0..nb {
        let line = lines.expect_line(&format!("border sample {} of {nb}", k + 1))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::parse(lines.lineno(), format!("bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != 2 * dim {
            return Err(Error::parse(
                lines.lineno(),
                format!(
                    "dimension mismatch: expected {} values, found {}",
                    2 * dim,
                    values.len()
                ),
            ));
        }
        points.extend_from_slice(&values[..dim]);
        normals.extend_from_slice(&values[dim..]);
    }
    BordersModel::new(dim, points, normals, class_minus, class_plus)
        .map_err(|e| Error::parse(lines.lineno(), e.to_string()))
}

pub fn read_borders(reader: impl BufRead) -> Result<BordersModel> {
    let mut lines = Lines::new(reader);
    let m = read_borders_from(&mut lines)?;
    if let Some(extra) = lines.next_line()? {
        return Err(Error::parse(
            lines.lineno(),
            format!("unexpected trailing content `{extra}`"),
        ));
    }
    Ok(m)
}
