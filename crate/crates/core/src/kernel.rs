//! Gaussian kernel estimators for binary problems.
//!
//! The adaptive Gaussian filter (AGF) picks a bandwidth per query point so
//! that the kernel weights sum to a fixed total `W`, then forms the
//! difference in conditional probabilities from the signed weights.

use crate::borders::DecisionOracle;
use crate::data::Dataset;
use crate::error::{Error, Result};

pub fn gaussian_kernel(distance: f64, sigma: f64) -> f64 {
    (-(distance * distance) / (2.0 * sigma * sigma)).exp()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Parameters of the adaptive Gaussian filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgfConfig {
    /// Total kernel weight the bandwidth is solved for.
    pub weight: f64,
    /// Nearest neighbours entering the kernel sums; 0 uses every sample.
    pub k: usize,
}

impl AgfConfig {
    pub fn new(weight: f64, k: usize) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!(
                "AGF weight must be positive, got {weight}"
            )));
        }
        if k > 0 && weight >= k as f64 {
            return Err(Error::invalid(format!(
                "AGF weight {weight} must be below the neighbour count {k}"
            )));
        }
        Ok(Self { weight, k })
    }
}

/// Samples with class signs in {-1, +1}, both signs present.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryProblem {
    dim: usize,
    samples: Vec<f64>,
    signs: Vec<f64>,
}

impl BinaryProblem {
    pub fn new(dim: usize, samples: Vec<f64>, signs: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("problem needs at least one feature"));
        }
        if samples.len() != dim * signs.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * signs.len(),
                actual: samples.len(),
            });
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::invalid("class signs must be -1 or +1"));
        }
        if !signs.contains(&1.0) || !signs.contains(&-1.0) {
            return Err(Error::invalid("binary problem needs samples of both signs"));
        }
        Ok(Self {
            dim,
            samples,
            signs,
        })
    }

    /// Rows of class `minus` become -1, rows of class `plus` become +1;
    /// other classes are left out.
    pub fn from_dataset(d: &Dataset, minus: usize, plus: usize) -> Result<Self> {
        let mut samples = Vec::new();
        let mut signs = Vec::new();
        for (row, &label) in d.rows().zip(d.labels()) {
            let sign = if label == plus {
                1.0
            } else if label == minus {
                -1.0
            } else {
                continue;
            };
            samples.extend_from_slice(row);
            signs.push(sign);
        }
        if !signs.contains(&1.0) || !signs.contains(&-1.0) {
            return Err(Error::invalid(format!(
                "class pair ({minus}, {plus}) has no rows on one side"
            )));
        }
        Self::new(d.dim(), samples, signs)
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sign(&self, i: usize) -> f64 {
        self.signs[i]
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// The same samples with every class sign flipped.
    pub fn negated(&self) -> Self {
        Self {
            dim: self.dim,
            samples: self.samples.clone(),
            signs: self.signs.iter().map(|s| -s).collect(),
        }
    }
}

/// Solved bandwidth with the samples that entered the kernel sums.
struct Neighbourhood {
    sigma: f64,
    /// (sample index, squared distance, kernel weight)
    members: Vec<(usize, f64, f64)>,
}

fn check_query(x: &[f64], p: &BinaryProblem) -> Result<()> {
    if x.len() != p.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("query point has non-finite coordinates"));
    }
    Ok(())
}

/// Squared distances to the `k` nearest samples (all when `k` is 0),
/// ties resolved by sample index.
fn nearest(x: &[f64], p: &BinaryProblem, k: usize) -> Result<Vec<(usize, f64)>> {
    let mut d2: Vec<(usize, f64)> = (0..p.len())
        .map(|i| (i, squared_distance(x, p.sample(i))))
        .collect();
    if k > 0 {
        if k > d2.len() {
            return Err(Error::invalid(format!(
                "neighbour count {k} exceeds the {} available samples",
                d2.len()
            )));
        }
        if k < d2.len() {
            d2.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d2.truncate(k);
            d2.sort_unstable_by_key(|e| e.0);
        }
    }
    Ok(d2)
}

fn weight_sum(d2: &[(usize, f64)], sigma: f64) -> (f64, f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut sum = 0.0;
    let mut dsum = 0.0;
    for &(_, r2) in d2 {
        let k = (-r2 * inv).exp();
        sum += k;
        dsum += k * r2;
    }
    (sum, dsum / (sigma * sigma * sigma))
}

fn solve_neighbourhood(x: &[f64], p: &BinaryProblem, cfg: &AgfConfig) -> Result<Neighbourhood> {
    check_query(x, p)?;
    let d2 = nearest(x, p, cfg.k)?;
    let w = cfg.weight;
    if d2.len() as f64 <= w {
        return Err(Error::NoBandwidth(format!(
            "weight {w} is not below the {} samples in the kernel sum",
            d2.len()
        )));
    }
    let coincident = d2.iter().filter(|e| e.1 == 0.0).count();
    if coincident as f64 >= w {
        return Err(Error::NoBandwidth(format!(
            "{coincident} samples coincide with the query point, weight is {w}"
        )));
    }
    let (min_d2, max_d2) = d2
        .iter()
        .filter(|e| e.1 > 0.0)
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), e| {
            (lo.min(e.1), hi.max(e.1))
        });

    let residual = |s: f64| weight_sum(&d2, s).0 - w;
    let mut lo = 1e-3 * min_d2.sqrt();
    while residual(lo) >= 0.0 {
        lo *= 0.5;
    }
    let mut hi = 10.0 * max_d2.sqrt();
    let mut doublings = 0;
    while residual(hi) < 0.0 {
        if doublings == 60 {
            return Err(Error::NoBandwidth(format!(
                "weight {w} not reached at bandwidth {hi}"
            )));
        }
        hi *= 2.0;
        doublings += 1;
    }

    // Newton steps, falling back to bisection whenever a step leaves the bracket.
    let mut sigma = (lo * hi).sqrt();
    for _ in 0..200 {
        let (sum, slope) = weight_sum(&d2, sigma);
        let f = sum - w;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = sigma;
        } else {
            hi = sigma;
        }
        let newton = sigma - f / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else if hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        let converged = (next - sigma).abs() <= 1e-15 * sigma || hi - lo <= 1e-15 * hi;
        sigma = next;
        if converged {
            break;
        }
    }
    if residual(sigma).abs() > 1e-10 {
        return Err(Error::RootFinding(format!(
            "bandwidth residual {} exceeds 1e-10",
            residual(sigma)
        )));
    }

    let inv = 1.0 / (2.0 * sigma * sigma);
    let members = d2
        .into_iter()
        .map(|(i, r2)| (i, r2, (-r2 * inv).exp()))
        .collect();
    Ok(Neighbourhood { sigma, members })
}

/// Bandwidth at which the kernel weights around `x` sum to `cfg.weight`.
pub fn solve_bandwidth(x: &[f64], p: &BinaryProblem, cfg: &AgfConfig) -> Result<f64> {
    Ok(solve_neighbourhood(x, p, cfg)?.sigma)
}

/// AGF estimate of `p(+1|x) - p(-1|x)`.
pub fn agf_decision(x: &[f64], p: &BinaryProblem, cfg: &AgfConfig) -> Result<f64> {
    let nb = solve_neighbourhood(x, p, cfg)?;
    let (signed, total) = nb
        .members
        .iter()
        .fold((0.0, 0.0), |(s, t), &(i, _, k)| (s + p.sign(i) * k, t + k));
    Ok(signed / total)
}

/// Gradient of [`agf_decision`], including the term from the bandwidth's
/// dependence on `x` through the weight condition.
pub fn agf_gradient(x: &[f64], p: &BinaryProblem, cfg: &AgfConfig) -> Result<Vec<f64>> {
    let nb = solve_neighbourhood(x, p, cfg)?;
    let dim = p.dim();
    let mut total = 0.0;
    let mut moment = 0.0; // sum K d^2
    let mut pull = vec![0.0; dim]; // sum K (x_k - x)
    for &(i, r2, k) in &nb.members {
        total += k;
        moment += k * r2;
        for (acc, (s, q)) in pull.iter_mut().zip(p.sample(i).iter().zip(x)) {
            *acc += k * (s - q);
        }
    }
    if moment <= 0.0 {
        return Err(Error::Singular(
            "every sample in the kernel sum coincides with the query point".into(),
        ));
    }
    let mut grad = vec![0.0; dim];
    for &(i, r2, k) in &nb.members {
        let yk = p.sign(i) * k;
        for j in 0..dim {
            grad[j] += yk * ((p.sample(i)[j] - x[j]) - r2 * pull[j] / moment);
        }
    }
    let scale = 1.0 / (nb.sigma * nb.sigma * total);
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// Fixed-bandwidth kernel estimate of `p(+1|x) - p(-1|x)`.
pub fn fixed_kernel_decision(x: &[f64], p: &BinaryProblem, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    check_query(x, p)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (signed, total) = (0..p.len()).fold((0.0, 0.0), |(s, t), i| {
        let k = (-squared_distance(x, p.sample(i)) * inv).exp();
        (s + p.sign(i) * k, t + k)
    });
    if total == 0.0 {
        return Err(Error::Singular(format!(
            "all kernel weights underflow at bandwidth {sigma}"
        )));
    }
    Ok(signed / total)
}

/// AGF decision function of a binary problem, usable for border training.
#[derive(Debug, Clone)]
pub struct AgfOracle {
    pub problem: BinaryProblem,
    pub config: AgfConfig,
}

impl DecisionOracle for AgfOracle {
    fn value(&self, x: &[f64]) -> Result<f64> {
        agf_decision(x, &self.problem, &self.config)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        agf_gradient(x, &self.problem, &self.config)
    }
}

/// k-nearest-neighbour vote. Distance ties go to the lower row, vote ties
/// to the lower class id. Returns the class and per-class vote fractions.
pub fn knn_classify(x: &[f64], d: &Dataset, k: usize) -> Result<(usize, Vec<f64>)> {
    if x.len() != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            actual: x.len(),
        });
    }
    if k == 0 || k > d.len() {
        return Err(Error::invalid(format!(
            "k must lie in [1, {}], got {k}",
            d.len()
        )));
    }
    let mut order: Vec<(usize, f64)> = d
        .rows()
        .enumerate()
        .map(|(i, row)| (i, squared_distance(x, row)))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut votes = vec![0usize; d.n_classes()];
    for &(i, _) in &order[..k] {
        votes[d.labels()[i]] += 1;
    }
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    Ok((best, votes.iter().map(|&v| v as f64 / k as f64).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(points: &[&[f64]], signs: &[f64]) -> BinaryProblem {
        let dim = points[0].len();
        let samples = points.iter().flat_map(|p| p.iter().cloned()).collect();
        BinaryProblem::new(dim, samples, signs.to_vec()).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(0.0, 0.3), 1.0);
        assert!((gaussian_kernel(2.0, 2.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((gaussian_kernel(3.0, 1.0) - 0.011108996538242306).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(AgfConfig::new(0.0, 0).is_err());
        assert!(AgfConfig::new(5.0, 5).is_err());
        assert!(AgfConfig::new(4.9, 5).is_ok());
        assert!(AgfConfig::new(40.0, 0).is_ok());
    }

    #[test]
    fn problem_needs_both_signs() {
        assert!(BinaryProblem::new(1, vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(BinaryProblem::new(1, vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn bandwidth_single_sample_inverts() {
        // Pair the sample with a far-away one whose weight is negligible.
        let p = problem(&[&[3.0, 0.0], &[1e6, 0.0]], &[1.0, -1.0]);
        let w = (-0.5f64).exp();
        let sigma = solve_bandwidth(&[0.0, 0.0], &p, &AgfConfig::new(w, 0).unwrap()).unwrap();
        assert!((sigma - 3.0).abs() < 1e-9, "{sigma}");
    }

    #[test]
    fn bandwidth_two_equidistant_samples() {
        let d = 1.7;
        let p = problem(&[&[d, 0.0], &[0.0, -d]], &[1.0, -1.0]);
        let sigma = solve_bandwidth(&[0.0, 0.0], &p, &AgfConfig::new(1.0, 0).unwrap()).unwrap();
        let expected = d / (2.0 * 2f64.ln()).sqrt();
        assert!((sigma - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn bandwidth_without_root() {
        let p = problem(&[&[1.0], &[2.0], &[3.0]], &[1.0, -1.0, 1.0]);
        let cfg = AgfConfig::new(2.0, 0).unwrap();
        // Only one sample in the k = 1 neighbourhood cannot reach W = 2.
        assert!(matches!(
            solve_bandwidth(&[0.0], &p, &AgfConfig { weight: 2.0, k: 1 }),
            Err(Error::NoBandwidth(_))
        ));
        assert!(matches!(
            solve_bandwidth(&[0.0], &p, &AgfConfig { weight: 3.0, k: 0 }),
            Err(Error::NoBandwidth(_))
        ));
        // Two coincident samples already carry weight 2 as sigma -> 0.
        let q = problem(&[&[0.0], &[0.0], &[3.0]], &[1.0, -1.0, 1.0]);
        assert!(matches!(
            solve_bandwidth(&[0.0], &q, &cfg),
            Err(Error::NoBandwidth(_))
        ));
        assert!(solve_bandwidth(&[0.0], &q, &AgfConfig::new(2.5, 0).unwrap()).is_ok());
    }

    #[test]
    fn decision_all_positive_neighbourhood() {
        let p = problem(&[&[0.1], &[0.2], &[0.3], &[50.0]], &[1.0, 1.0, 1.0, -1.0]);
        let r = agf_decision(&[0.0], &p, &AgfConfig::new(1.5, 3).unwrap()).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn decision_mirror_symmetric() {
        let p = problem(
            &[&[-1.0, 0.5], &[1.0, 0.5], &[-2.0, -1.0], &[2.0, -1.0]],
            &[1.0, -1.0, -1.0, 1.0],
        );
        let r = agf_decision(&[0.0, 0.0], &p, &AgfConfig::new(1.2, 0).unwrap()).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_along_symmetric_coordinate() {
        // Reflection of coordinate 1 about x maps the sample set onto itself.
        let p = problem(
            &[&[1.0, 1.0], &[1.0, -1.0], &[-1.5, 2.0], &[-1.5, -2.0]],
            &[1.0, 1.0, -1.0, -1.0],
        );
        let g = agf_gradient(&[0.0, 0.0], &p, &AgfConfig::new(1.5, 0).unwrap()).unwrap();
        assert!(g[1].abs() < 1e-10);
        assert!(g[0] > 0.0);
    }

    #[test]
    fn gradient_sign_in_one_dimension() {
        // -1 lies at +1 and +1 lies at -1: r falls as x grows.
        let p = problem(&[&[1.0], &[-1.0], &[1.3], &[-1.2]], &[-1.0, 1.0, -1.0, 1.0]);
        let cfg = AgfConfig::new(1.5, 0).unwrap();
        let g = agf_gradient(&[0.05], &p, &cfg).unwrap();
        let h = 1e-5;
        let fd = (agf_decision(&[0.05 + h], &p, &cfg).unwrap()
            - agf_decision(&[0.05 - h], &p, &cfg).unwrap())
            / (2.0 * h);
        assert!(g[0] < 0.0);
        assert!((g[0] - fd).abs() <= 1e-6 * fd.abs());
    }

    #[test]
    fn gradient_all_coincident_fails() {
        let p = problem(&[&[0.0], &[0.0], &[0.0]], &[1.0, -1.0, 1.0]);
        assert!(agf_gradient(&[0.0], &p, &AgfConfig::new(2.5, 0).unwrap()).is_err());
    }

    #[test]
    fn fixed_kernel_values() {
        let p = problem(&[&[1.0], &[-2.0]], &[1.0, -1.0]);
        let r = fixed_kernel_decision(&[0.0], &p, 1.0).unwrap();
        let (a, b) = ((-0.5f64).exp(), (-2.0f64).exp());
        assert!((r - (a - b) / (a + b)).abs() < 1e-15);
        assert!((r - 0.635149).abs() < 1e-6);

        let sym = problem(&[&[1.0], &[-1.0]], &[1.0, -1.0]);
        assert_eq!(fixed_kernel_decision(&[0.0], &sym, 0.7).unwrap(), 0.0);
        assert!(fixed_kernel_decision(&[0.0], &sym, 0.0).is_err());
        assert!(fixed_kernel_decision(&[1e3], &sym, 1e-3).is_err());
    }

    fn ab_dataset() -> Dataset {
        Dataset::new(
            2,
            vec![0.0, 0.0, 1.0, 0.0, 5.0, 0.0],
            vec![0, 0, 1],
            vec!["A".into(), "B".into()],
        )
        .unwrap()
    }

    #[test]
    fn knn_hand_example() {
        let d = ab_dataset();
        let (c, frac) = knn_classify(&[0.4, 0.0], &d, 3).unwrap();
        assert_eq!(c, 0);
        assert!((frac[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((frac[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(knn_classify(&[4.0, 0.0], &d, 1).unwrap().0, 1);
        assert!(knn_classify(&[0.0, 0.0], &d, 4).is_err());
    }

    #[test]
    fn knn_vote_tie_goes_to_lower_class() {
        let d = ab_dataset();
        let (c, _) = knn_classify(&[3.0, 0.0], &d, 2).unwrap();
        assert_eq!(c, 0);
    }
}
