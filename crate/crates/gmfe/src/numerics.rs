//! Shared numerical helpers: compensated summation, quadrature weights,
//! composite Simpson integration, and ordinary least squares for slope fits.

/// Neumaier-compensated accumulator. Summation order is fixed by the caller,
/// so results are reproducible regardless of thread scheduling.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Trapezoid weights for an arbitrary sorted node vector.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = nodes[k + 1] - nodes[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// Composite Simpson integration of `f` over `[a, b]` with `panels` even.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = if panels % 2 == 0 { panels } else { panels + 1 };
    let h = (b - a) / n as f64;
    let mut acc = CompensatedSum::new();
    acc.add(f(a));
    acc.add(f(b));
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc.add(w * f(a + k as f64 * h));
    }
    acc.value() * h / 3.0
}

/// Composite Simpson on `[a1,b1] x [a2,b2]`.
pub fn simpson2d(f: impl Fn(f64, f64) -> f64, a: (f64, f64), b: (f64, f64), panels: usize) -> f64 {
    simpson(|x| simpson(|y| f(x, y), a.1, b.1, panels), a.0, b.0, panels)
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Two standard errors of the slope estimate.
    pub slope_half_width: f64,
    pub residuals: Vec<f64>,
}

pub fn ols(x: &[f64], y: &[f64]) -> Option<OlsFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let xbar = x.iter().sum::<f64>() / nf;
    let ybar = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|&v| (v - xbar) * (v - xbar)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - xbar) * (b - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| b - (intercept + slope * a)).collect();
    let dof = (n as i64 - 2).max(1) as f64;
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;
    let se = (s2 / sxx).sqrt();
    Some(OlsFit { slope, intercept, slope_half_width: 2.0 * se, residuals })
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
}
