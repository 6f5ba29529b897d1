//! Small numerical helpers shared by the simulators and oracles.

/// Kahan-Babuska (Neumaier) compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Sample mean and 95% normal-approximation confidence half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let (mean, var) = mean_var(values);
    (mean, 1.959_963_984_540_054 * (var / n as f64).sqrt())
}

/// Mean and unbiased variance (zero variance for a single value).
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut s = CompensatedSum::new();
    values.iter().for_each(|&v| s.add(v));
    let mean = s.value() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let mut ss = CompensatedSum::new();
    values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    (mean, ss.value() / (n - 1.0))
}

/// Empirical `q`-quantile: the inverse of the empirical CDF, i.e. the
/// smallest sample `x` with `F_n(x) >= q`. Reorders `values`.
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, x, _) = values.select_nth_unstable_by(rank, f64::total_cmp);
    *x
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Least-squares slope together with its standard error.
pub fn ols_slope_with_error(x: &[f64], y: &[f64]) -> (f64, f64) {
    let slope = ols_slope(x, y);
    let n = x.len() as f64;
    if x.len() < 3 {
        return (slope, f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    (slope, (sse / (n - 2.0) / sxx).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::new();
        let mut naive = 0.0;
        s.add(1.0);
        naive += 1.0;
        for _ in 0..1_000_000 {
            s.add(1e-16);
            naive += 1e-16;
        }
        assert_eq!(naive, 1.0);
        assert!((s.value() - (1.0 + 1e-10)).abs() < 1e-22);
    }

    #[test]
    fn quantile_inverse_ecdf() {
        let mut v = vec![5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(empirical_quantile(&mut v, 0.2), 1.0);
        assert_eq!(empirical_quantile(&mut v, 0.21), 2.0);
        assert_eq!(empirical_quantile(&mut v, 1.0), 5.0);
        assert_eq!(empirical_quantile(&mut v, 0.0), 1.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = (1..20).map(|i| (i as f64).ln()).collect();
        let y: Vec<f64> = x.iter().map(|l| 3.0 - 0.5 * l).collect();
        let (s, e) = ols_slope_with_error(&x, &y);
        assert!((s + 0.5).abs() < 1e-12);
        assert!(e < 1e-10);
    }

    #[test]
    fn mean_ci_of_constant() {
        let (m, h) = mean_ci95(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(h, 0.0);
    }
}
