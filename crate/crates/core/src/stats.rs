//! Goodness-of-fit tests used by the experiment harness.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

/// Smallest sample accepted by the one-sample tests.
pub const MIN_SAMPLE: usize = 20;
const KS_TERMS: usize = 100;
/// Categories with a smaller expected count are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample of size {0} is below the minimum {MIN_SAMPLE}")]
    SampleTooSmall(usize),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn sorted(sample: &[f64]) -> Result<Vec<f64>, StatsError> {
    if sample.len() < MIN_SAMPLE {
        return Err(StatsError::SampleTooSmall(sample.len()));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `Q(t) = 2 sum_{k >= 1} (-1)^{k-1} exp(-2 k^2 t^2)`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=KS_TERMS {
        let k = k as f64;
        let term = (-2.0 * k * k * t * t).exp();
        sum += if k as usize % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against the standard normal with the
/// asymptotic p-value `Q(sqrt(n) D)`.
pub fn ks_test(sample: &[f64]) -> Result<TestResult, StatsError> {
    let s = sorted(sample)?;
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = normal_cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_survival(n.sqrt() * d),
    })
}

/// Limiting distribution function of the Anderson-Darling statistic
/// (Marsaglia and Marsaglia approximation).
fn ad_limit_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012
                + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z)
                    * z)
    } else {
        (-(1.0776
            - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z)
            .exp())
        .exp()
    }
}

/// One-sample Anderson-Darling test against the standard normal.
pub fn ad_test(sample: &[f64]) -> Result<TestResult, StatsError> {
    let s = sorted(sample)?;
    let n = s.len();
    let nf = n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let lo = normal_cdf(s[i]).clamp(1e-300, 1.0);
        let hi = (1.0 - normal_cdf(s[n - 1 - i])).clamp(1e-300, 1.0);
        acc += (2 * i + 1) as f64 * (lo.ln() + hi.ln());
    }
    let a2 = -nf - acc / nf;
    Ok(TestResult {
        statistic: a2,
        p_value: (1.0 - ad_limit_cdf(a2)).clamp(0.0, 1.0),
    })
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// Pearson goodness of fit of `observed` counts against `expected`
/// probabilities. Categories with expected count below [`MIN_EXPECTED`] are
/// pooled; any observation outside the support rejects outright.
pub fn chi_square_gof<K: Ord + Clone>(
    observed: &BTreeMap<K, u64>,
    expected: &BTreeMap<K, f64>,
) -> ChiSquare {
    let total: u64 = observed.values().sum();
    let t = total as f64;
    if observed
        .keys()
        .any(|k| expected.get(k).is_none_or(|&p| p <= 0.0))
    {
        return ChiSquare {
            statistic: f64::INFINITY,
            df: 0,
            p_value: 0.0,
        };
    }
    let mut cells = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (k, &p) in expected {
        let o = observed.get(k).copied().unwrap_or(0) as f64;
        let e = p * t;
        if e < MIN_EXPECTED {
            pool_o += o;
            pool_e += e;
        } else {
            cells.push((o, e));
        }
    }
    if pool_e > 0.0 {
        if pool_e < MIN_EXPECTED && !cells.is_empty() {
            // fold the small pool into the smallest regular cell
            let m = cells
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            cells[m].0 += pool_o;
            cells[m].1 += pool_e;
        } else {
            cells.push((pool_o, pool_e));
        }
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = cells.len().saturating_sub(1);
    ChiSquare {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
    }
}

/// Chi-square homogeneity test of two samples over a common category set,
/// pooling categories with small expected counts.
pub fn chi_square_homogeneity<K: Ord + Clone>(
    a: &BTreeMap<K, u64>,
    b: &BTreeMap<K, u64>,
) -> ChiSquare {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    let n = (na + nb) as f64;
    let (fa, fb) = (na as f64 / n, nb as f64 / n);
    let mut keys: Vec<&K> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for k in keys {
        let oa = a.get(k).copied().unwrap_or(0) as f64;
        let ob = b.get(k).copied().unwrap_or(0) as f64;
        if (oa + ob) * fa.min(fb) < MIN_EXPECTED {
            pool.0 += oa;
            pool.1 += ob;
        } else {
            cells.push((oa, ob));
        }
    }
    if pool.0 + pool.1 > 0.0 {
        if (pool.0 + pool.1) * fa.min(fb) < MIN_EXPECTED && !cells.is_empty() {
            let last = cells.len() - 1;
            cells[last].0 += pool.0;
            cells[last].1 += pool.1;
        } else {
            cells.push(pool);
        }
    }
    let mut statistic = 0.0;
    for &(oa, ob) in &cells {
        let row = oa + ob;
        let (ea, eb) = (row * fa, row * fb);
        statistic += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = cells.len().saturating_sub(1);
    ChiSquare {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Median of a non-empty sample (mean of the two central values for even
/// sizes).
pub fn median(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Mean and unbiased variance.
pub fn mean_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}
