//! Shared statistical machinery: quadrature, goodness-of-fit statistics,
//! least-squares fits, and streaming accumulators.

use serde::Serialize;

/// Adaptive Simpson quadrature with absolute tolerance `tol` and maximum
/// recursion depth `max_depth`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    rec(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

/// One-sample Kolmogorov–Smirnov statistic of an ascending-sorted sample
/// against a CDF.
pub fn ks_statistic_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let c = cdf(x);
        sup = sup
            .max((c - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - c).abs());
    }
    sup
}

/// Two-sample Kolmogorov–Smirnov statistic (both samples ascending-sorted).
pub fn ks_two_sample_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Weighted least squares of `y = slope·x + intercept`. Weights are inverse
/// variances; pass `None` for the unweighted fit. Returns the slope, the
/// intercept, and the standard error of the slope (from the residual
/// variance for the unweighted case, from the weights otherwise).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let w_of = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w_of).sum();
    let mx: f64 = (0..n).map(|i| w_of(i) * x[i]).sum::<f64>() / sw;
    let my: f64 = (0..n).map(|i| w_of(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w_of(i) * (x[i] - mx) * (x[i] - mx)).sum();
    let sxy: f64 = (0..n).map(|i| w_of(i) * (x[i] - mx) * (y[i] - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if weights.is_some() {
        // Weights are inverse variances: Var(slope) = 1/Sxx.
        (1.0 / sxx).sqrt()
    } else if n > 2 {
        let ss_res: f64 = (0..n)
            .map(|i| {
                let r = y[i] - slope * x[i] - intercept;
                r * r
            })
            .sum();
        (ss_res / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    LineFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Streaming mean/variance accumulator (Welford), with an order-fixed merge
/// (Chan's formula) so ensemble reductions are associative and bit-stable
/// when applied in a fixed order.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Accumulator {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let delta = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count as f64 - 1.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Regularized lower incomplete gamma P(a, x) by series/continued fraction
/// (Numerical Recipes style); used for chi-square tail probabilities.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x < 0.0 || a <= 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 0.0;
    }
    let gln = ln_gamma(a);
    if x < a + 1.0 {
        // Series.
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..500 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        sum * (-x + a * x.ln() - gln).exp()
    } else {
        // Continued fraction for Q, then P = 1 − Q.
        let mut b = x + 1.0 - a;
        let mut c = 1e300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = b + an / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        1.0 - (-x + a * x.ln() - gln).exp() * h
    }
}

/// Lanczos log-gamma.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Upper-tail p-value of a chi-square statistic with `dof` degrees of
/// freedom.
pub fn chi_square_pvalue(stat: f64, dof: f64) -> f64 {
    (1.0 - gamma_p(0.5 * dof, 0.5 * stat)).clamp(0.0, 1.0)
}

/// Poisson pmf.
pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    (k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)).exp()
}

/// Error function via the regularized incomplete gamma,
/// `erf(x) = sgn(x)·P(1/2, x²)`.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * gamma_p(0.5, x * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let f = |x: f64| 3.0 * x * x - 2.0 * x + 1.0;
        let got = adaptive_simpson(&f, -1.0, 2.0, 1e-12, 30);
        // ∫ = x³ − x² + x
        let want = (8.0 - 4.0 + 2.0) - (-1.0 - 1.0 - 1.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ks_detects_uniform_vs_shifted() {
        let n = 2000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!(ks_statistic_sorted(&xs, |x| x.clamp(0.0, 1.0)) < 1e-3);
        assert!(ks_statistic_sorted(&xs, |x| (x * x).clamp(0.0, 1.0)) > 0.2);
    }

    #[test]
    fn two_sample_ks_of_identical_samples_is_small() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert!(ks_two_sample_sorted(&a, &a) < 1e-12);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let fit = linear_fit(&x, &y, None);
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-10);
    }

    #[test]
    fn accumulator_merge_matches_bulk() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let mut whole = Accumulator::default();
        for &x in &xs {
            whole.push(x);
        }
        let mut left = Accumulator::default();
        let mut right = Accumulator::default();
        for &x in &xs[..37] {
            left.push(x);
        }
        for &x in &xs[37..] {
            right.push(x);
        }
        left.merge(&right);
        assert!((left.mean - whole.mean).abs() < 1e-14);
        assert!((left.variance() - whole.variance()).abs() < 1e-13);
    }

    #[test]
    fn chi_square_pvalue_sane() {
        // P(χ²_1 > 3.841) ≈ 0.05
        assert!((chi_square_pvalue(3.841, 1.0) - 0.05).abs() < 2e-3);
        // Median of χ²_2 is 2 ln 2.
        assert!((chi_square_pvalue(2.0 * std::f64::consts::LN_2, 2.0) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gamma_function_values() {
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((gamma_p(0.5, 0.5) - 0.6826894921370859).abs() < 1e-10);
    }
}
