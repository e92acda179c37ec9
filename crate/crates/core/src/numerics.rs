//! Small numerical helpers shared across modules.

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
    abs: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.abs += x.abs();
    }
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
    /// Sum of absolute values of the terms seen so far.
    pub fn abs_total(&self) -> f64 {
        self.abs
    }
}

/// Least-squares line y = a + b x; returns (a, b, standard error of b).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let se = if x.len() > 2 && sxx > 0.0 {
        let rss: f64 = x.iter().zip(y).map(|(&u, &v)| (v - a - b * u).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (a, b, se)
}

pub fn ln_factorial(n: usize) -> f64 {
    statrs::function::factorial::ln_factorial(n as u64)
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_se(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (m, v) = mean_var(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - v * v * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

/// Sample skewness and excess kurtosis with their large-sample standard errors.
pub fn shape_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    (skew, (6.0 / n).sqrt(), kurt, (24.0 / n).sqrt())
}

/// Verdict of the partial-sum divergence detector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DivergenceDiagnostic {
    /// Slope of log(partial-sum increment) against log(cutoff).
    pub increment_slope: f64,
    pub divergent: bool,
}

/// Fit the decay of increments between consecutive partial sums taken at
/// geometrically growing cutoffs. A convergent p-type series has increments
/// decaying like cutoff^{-δ} with δ > 0; borderline and divergent ones do not.
pub fn divergence_diagnostic(cutoffs: &[f64], partial_sums: &[f64]) -> DivergenceDiagnostic {
    let mut lx = vec![];
    let mut ly = vec![];
    for k in 1..cutoffs.len() {
        let inc = partial_sums[k] - partial_sums[k - 1];
        if inc > 0.0 {
            lx.push(cutoffs[k].ln());
            ly.push(inc.ln());
        }
    }
    if lx.len() < 2 {
        return DivergenceDiagnostic { increment_slope: f64::NEG_INFINITY, divergent: false };
    }
    let (_, slope, _) = linear_fit(&lx, &ly);
    DivergenceDiagnostic { increment_slope: slope, divergent: slope > -0.1 }
}
