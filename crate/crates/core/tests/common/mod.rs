//! Reference implementations shared by the integration tests. None of them
//! call into the library code they check.

#![allow(dead_code)]

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Minimizes `sum_i sum_{j != i} (mu_ji p_i - mu_ij p_j)^2` over the simplex by
/// projected gradient descent, where `mu_ij = (1 - r_ij) / 2` is the pairwise
/// probability of class `i` against `j` and `r` is the full antisymmetric
/// matrix.
pub fn wu_minimizer(r: &[Vec<f64>]) -> Vec<f64> {
    let n = r.len();
    let mu = |i: usize, j: usize| 0.5 * (1.0 - r[i][j]);
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                q[i][i] = (0..n).filter(|&k| k != i).map(|k| mu(k, i).powi(2)).sum();
            } else {
                q[i][j] = -mu(j, i) * mu(i, j);
            }
        }
    }
    let lipschitz = 2.0
        * q.iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..2_000_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| 2.0 * (0..n).map(|j| q[i][j] * p[j]).sum::<f64>())
            .collect();
        let next = project_simplex(
            &p.iter()
                .zip(&grad)
                .map(|(a, g)| a - step * g)
                .collect::<Vec<_>>(),
        );
        let change = next
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        p = next;
        if change < 1e-16 {
            break;
        }
    }
    p
}

/// `(H_prior - H_posterior) / H_prior` written as mutual information over
/// the prior entropy, in base 2.
pub fn uc_by_mutual_information(counts: &[Vec<f64>]) -> f64 {
    let n: f64 = counts.iter().flatten().sum();
    let rows: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..counts[0].len())
        .map(|j| counts.iter().map(|r| r[j]).sum())
        .collect();
    let mut mutual = 0.0;
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                mutual += c / n * (c * n / (rows[i] * cols[j])).log2();
            }
        }
    }
    let prior: f64 = rows
        .iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| -(r / n) * (r / n).log2())
        .sum();
    mutual / prior
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson integral of `f` over `[a, b]` with `m` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Densities of the synthetic classes, written from their definition.
pub fn synth_densities(x: f64, y: f64) -> (f64, f64) {
    let g = |cx: f64, cy: f64| std_normal_pdf(x - cx) * std_normal_pdf(y - cy);
    (g(0.0, 0.0), 0.5 * (g(2.0, 2.0) + g(2.0, -2.0)))
}

/// Bayes accuracy of the synthetic problem by midpoint quadrature of
/// `max(p+, p-) / 2` over a box that holds all but a negligible mass.
pub fn synth_bayes_accuracy() -> f64 {
    let h = 0.01;
    let (x0, x1, y0, y1) = (-9.0, 11.0, -11.0, 11.0);
    let nx = ((x1 - x0) / h) as usize;
    let ny = ((y1 - y0) / h) as usize;
    let mut total = 0.0;
    for a in 0..nx {
        let x = x0 + (a as f64 + 0.5) * h;
        for b in 0..ny {
            let y = y0 + (b as f64 + 0.5) * h;
            let (p, m) = synth_densities(x, y);
            total += 0.5 * p.max(m);
        }
    }
    total * h * h
}
