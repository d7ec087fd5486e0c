//! Summary statistics, confidence intervals, a one-sample Kolmogorov–Smirnov
//! test and least-squares line fitting.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn mean<S: Scalar>(xs: &[S]) -> Option<S> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<S>() / S::of(xs.len() as f64))
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev<S: Scalar>(xs: &[S]) -> S {
    if xs.len() < 2 {
        return S::zero();
    }
    let m = mean(xs).unwrap();
    let ss: S = xs.iter().map(|x| (*x - m) * (*x - m)).sum();
    (ss / S::of((xs.len() - 1) as f64)).sqrt()
}

/// Two-sided standard normal quantile for confidence level `level`.
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval<S> {
    pub estimate: S,
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> Interval<S> {
    pub fn contains(&self, x: S) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn half_width(&self) -> S {
        (self.hi - self.lo) / S::of(2.0)
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson<S: Scalar>(successes: u64, n: u64, level: f64) -> Result<Interval<S>> {
    if n == 0 {
        return Err(Error::InvalidArgument("Wilson interval needs at least one sample".into()));
    }
    if successes > n {
        return Err(Error::InvalidArgument(format!("{successes} successes out of {n} samples")));
    }
    let z = z_value(level)?;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let mut lo = (centre - half).max(0.0).min(p);
    let mut hi = (centre + half).min(1.0).max(p);
    if successes == 0 {
        lo = 0.0;
    }
    if successes == n {
        hi = 1.0;
    }
    Ok(Interval {
        estimate: S::of(p),
        lo: S::of(lo),
        hi: S::of(hi),
    })
}

/// Normal-approximation interval for a mean.
pub fn mean_interval<S: Scalar>(xs: &[S], level: f64) -> Result<Interval<S>> {
    let m = mean(xs).ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    let half = S::of(z_value(level)?) * std_dev(xs) / S::of(xs.len() as f64).sqrt();
    Ok(Interval {
        estimate: m,
        lo: m - half,
        hi: m + half,
    })
}

/// Asymptotic Kolmogorov distribution tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of `xs` against a continuous CDF.
pub fn ks_test(xs: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("KS test needs samples".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sqrt_n = n.sqrt();
    // Stephens' small-sample correction.
    let p = kolmogorov_tail((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
    Ok(KsResult {
        statistic: d,
        p_value: p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<S> {
    pub slope: S,
    pub intercept: S,
    pub r2: S,
}

/// Ordinary least squares fit `y ≈ slope·x + intercept`.
pub fn ols<S: Scalar>(xs: &[S], ys: &[S]) -> Result<LineFit<S>> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument("x and y lengths differ".into()));
    }
    let mx = mean(xs).ok_or_else(|| Error::InvalidArgument("no points to fit".into()))?;
    let my = mean(ys).unwrap();
    let sxx: S = xs.iter().map(|x| (*x - mx) * (*x - mx)).sum();
    if sxx <= S::zero() {
        return Err(Error::InvalidArgument("fit needs at least two distinct x values".into()));
    }
    let sxy: S = xs.iter().zip(ys).map(|(x, y)| (*x - mx) * (*y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: S = ys.iter().map(|y| (*y - my) * (*y - my)).sum();
    let ss_res: S = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = *y - (slope * *x + intercept);
            e * e
        })
        .sum();
    let scale = ys.iter().fold(S::zero(), |a, y| a.max(y.abs())).max(S::one());
    let tiny = S::epsilon() * S::of(64.0) * scale * scale * S::of(xs.len() as f64);
    let r2 = if ss_res <= tiny {
        S::one()
    } else if ss_tot <= S::zero() {
        S::zero()
    } else {
        S::one() - ss_res / ss_tot
    };
    Ok(LineFit { slope, intercept, r2 })
}
