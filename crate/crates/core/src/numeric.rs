//! Summation and small numeric helpers shared by the estimators.
//!
//! Every reduction over models, classes or samples goes through
//! [`pairwise_sum`], whose tree shape depends only on the slice length,
//! so results are bit-stable regardless of how callers parallelise.

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation with a fixed split at `len / 2`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise mean; `NaN` for an empty slice.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Pairwise sum of `f(i)` for `i in 0..n` without materialising more than
/// one block at a time on the stack.
pub fn pairwise_sum_by(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn go(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    go(0, n, f)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `ln Σ exp(x_i)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// In-place softmax of a logit row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in row.iter_mut() {
        *v = (*v - max).exp();
    }
    let z = pairwise_sum(row);
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sample mean and unbiased sample standard deviation.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = pairwise_mean(values);
    if n < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1) as f64).sqrt())
}

/// Count, mean and central moment sums `M_p = Σ (x - mean)^p` for p = 2..4.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl Moments {
    /// Two-pass moments of a block.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = pairwise_mean(values);
        let m = |p: i32| pairwise_sum_by(n, &|i| (values[i] - mean).powi(p));
        Self {
            n: n as f64,
            mean,
            m2: m(2),
            m3: m(3),
            m4: m(4),
        }
    }

    /// Pairwise-update merge of two disjoint blocks.
    pub fn merge(&self, o: &Self) -> Self {
        if self.n == 0.0 {
            return *o;
        }
        if o.n == 0.0 {
            return *self;
        }
        let (na, nb) = (self.n, o.n);
        let n = na + nb;
        let d = o.mean - self.mean;
        let (d2, d3, d4) = (d * d, d * d * d, d * d * d * d);
        Self {
            n,
            mean: self.mean + d * nb / n,
            m2: self.m2 + o.m2 + d2 * na * nb / n,
            m3: self.m3 + o.m3 + d3 * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * o.m2 - nb * self.m2) / n,
            m4: self.m4
                + o.m4
                + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
                + 6.0 * d2 * (na * na * o.m2 + nb * nb * self.m2) / (n * n)
                + 4.0 * d * (na * o.m3 - nb * self.m3) / n,
        }
    }

    /// Population variance `M_2 / n`.
    pub fn variance(&self) -> f64 {
        self.m2 / self.n
    }

    /// Standard error of the mean.
    pub fn se_mean(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }

    /// Delta-method standard error of the standard deviation.
    pub fn se_std(&self) -> f64 {
        let (v, m4) = (self.variance(), self.m4 / self.n);
        ((m4 - v * v).max(0.0) / self.n).sqrt() / (2.0 * v.sqrt())
    }
}
