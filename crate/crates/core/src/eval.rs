//! Skill scores and the classification timing harness.

use std::hint::black_box;
use std::io::Write;
use std::time::{Duration, Instant};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Counts of (true class, estimated class) pairs; rows are the truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(Self {
            n_classes: n,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_labels(truth: &[usize], estimate: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != estimate.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                actual: estimate.len(),
            });
        }
        let mut m = Self::new(n_classes);
        for (&t, &e) in truth.iter().zip(estimate) {
            if t >= n_classes || e >= n_classes {
                return Err(Error::invalid(format!(
                    "class id ({t}, {e}) outside {n_classes} classes"
                )));
            }
            m.add(t, e);
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, estimate: usize) {
        self.counts[truth * self.n_classes + estimate] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, estimate: usize) -> u64 {
        self.counts[truth * self.n_classes + estimate]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n_classes..(truth + 1) * self.n_classes]
    }

    pub fn n_test(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn require_samples(&self) -> Result<f64> {
        match self.n_test() {
            0 => Err(Error::invalid("confusion matrix is empty")),
            n => Ok(n as f64),
        }
    }

    /// Fraction of correct estimates.
    pub fn accuracy(&self) -> Result<f64> {
        let n = self.require_samples()?;
        let hits: u64 = (0..self.n_classes).map(|i| self.get(i, i)).sum();
        Ok(hits as f64 / n)
    }

    /// `(H_prior - H_posterior) / H_prior`: the fraction of the true-class
    /// entropy removed by knowing the estimate. Natural logarithms; the base
    /// cancels in the ratio.
    pub fn uncertainty_coefficient(&self) -> Result<f64> {
        let n = self.require_samples()?;
        let xlogx = |c: f64| if c > 0.0 { c * c.ln() } else { 0.0 };

        let rows: Vec<f64> = (0..self.n_classes)
            .map(|i| self.row(i).iter().sum::<u64>() as f64)
            .collect();
        let cols: Vec<f64> = (0..self.n_classes)
            .map(|j| (0..self.n_classes).map(|i| self.get(i, j)).sum::<u64>() as f64)
            .collect();
        let prior = -rows.iter().map(|&r| xlogx(r / n)).sum::<f64>();
        if prior <= 0.0 {
            return Err(Error::invalid(
                "uncertainty coefficient undefined: only one true class present",
            ));
        }
        let joint: f64 = self.counts.iter().map(|&c| xlogx(c as f64)).sum();
        let marginal: f64 = cols.iter().map(|&c| xlogx(c)).sum();
        let posterior = -(joint - marginal) / n;
        Ok(((prior - posterior) / prior).clamp(0.0, 1.0))
    }
}

/// Wall time of a classifier over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    /// Median over repetitions of total time divided by the number of points.
    pub seconds_per_point: f64,
    pub repetitions: usize,
    pub n_points: usize,
}

/// Per-point time against a model size, with a least-squares line.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingSweep {
    pub sizes: Vec<f64>,
    pub seconds_per_point: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        best = best.min(now - start);
    }
    best
}

/// Times `classify` over every row of `test`.
///
/// A warm-up pass is discarded, then `reps` passes are timed with a
/// monotonic clock and the median is kept. Fails when a pass is shorter
/// than a thousand ticks of the clock; use more points in that case.
pub fn time_classifier<T>(
    mut classify: impl FnMut(&[f64]) -> T,
    test: &Dataset,
    reps: usize,
) -> Result<TimingReport> {
    if reps < 3 {
        return Err(Error::invalid(format!(
            "timing needs at least 3 repetitions, got {reps}"
        )));
    }
    for x in test.rows() {
        black_box(classify(black_box(x)));
    }
    let floor = timer_resolution() * 1000;
    let mut totals = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for x in test.rows() {
            black_box(classify(black_box(x)));
        }
        let elapsed = start.elapsed();
        if elapsed < floor {
            return Err(Error::TimerResolution(format!(
                "a pass over {} points took {elapsed:?}, below the {floor:?} measurable floor",
                test.len()
            )));
        }
        totals.push(elapsed.as_secs_f64());
    }
    totals.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 {
        totals[reps / 2]
    } else {
        0.5 * (totals[reps / 2 - 1] + totals[reps / 2])
    };
    Ok(TimingReport {
        seconds_per_point: median / test.len() as f64,
        repetitions: reps,
        n_points: test.len(),
    })
}

/// Ordinary least squares `y = slope x + intercept` with its R².
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r_squared)
}

/// Times the classifier built for each size and fits time against size.
pub fn time_sweep<C, T>(
    sizes: &[usize],
    test: &Dataset,
    reps: usize,
    mut build: impl FnMut(usize) -> C,
) -> Result<TimingSweep>
where
    C: FnMut(&[f64]) -> T,
{
    if sizes.len() < 2 {
        return Err(Error::invalid("a sweep needs at least two sizes"));
    }
    let mut times = Vec::with_capacity(sizes.len());
    for &size in sizes {
        times.push(time_classifier(build(size), test, reps)?.seconds_per_point);
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let (slope, intercept, r_squared) = fit_line(&xs, &times);
    Ok(TimingSweep {
        sizes: xs,
        seconds_per_point: times,
        slope,
        intercept,
        r_squared,
    })
}

/// Scores of one classification run, printable as a table or as
/// `key=value` lines.
///
/// Key/value schema, one pair per line: `n_test`, `accuracy`, `uc` (only
/// when defined), `classes` (space-separated names), `confusion_row_<i>`
/// (space-separated counts for true class `i`), and when timed
/// `seconds_per_point`, `timing_reps`.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub timing: Option<TimingReport>,
}

impl EvaluationReport {
    pub fn write_key_values(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n_test={}", self.confusion.n_test())?;
        if let Ok(a) = self.confusion.accuracy() {
            writeln!(w, "accuracy={a}")?;
        }
        if let Ok(uc) = self.confusion.uncertainty_coefficient() {
            writeln!(w, "uc={uc}")?;
        }
        writeln!(w, "classes={}", self.class_names.join(" "))?;
        for i in 0..self.confusion.n_classes() {
            let row: Vec<String> = self.confusion.row(i).iter().map(u64::to_string).collect();
            writeln!(w, "confusion_row_{i}={}", row.join(" "))?;
        }
        if let Some(t) = &self.timing {
            writeln!(w, "seconds_per_point={}", t.seconds_per_point)?;
            writeln!(w, "timing_reps={}", t.repetitions)?;
        }
        Ok(())
    }

    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "test points: {}", self.confusion.n_test())?;
        match self.confusion.accuracy() {
            Ok(a) => writeln!(w, "accuracy:    {a:.6}")?,
            Err(_) => writeln!(w, "accuracy:    undefined")?,
        }
        match self.confusion.uncertainty_coefficient() {
            Ok(uc) => writeln!(w, "U.C.:        {uc:.6}")?,
            Err(_) => writeln!(w, "U.C.:        undefined (one true class)")?,
        }
        writeln!(w, "confusion (rows = truth, columns = estimate):")?;
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .chain(std::iter::once(self.confusion.n_test().to_string().len()))
            .max()
            .unwrap_or(1);
        write!(w, "{:>width$}", "")?;
        for name in &self.class_names {
            write!(w, " {name:>width$}")?;
        }
        writeln!(w)?;
        for (i, name) in self.class_names.iter().enumerate() {
            write!(w, "{name:>width$}")?;
            for c in self.confusion.row(i) {
                write!(w, " {c:>width$}")?;
            }
            writeln!(w)?;
        }
        if let Some(t) = &self.timing {
            writeln!(
                w,
                "time per point: {:.3e} s (median of {} passes over {} points)",
                t.seconds_per_point, t.repetitions, t.n_points
            )?;
        }
        Ok(())
    }
}
