//! Monte Carlo experiments: law of large numbers, normal fluctuations,
//! simulator equivalence and the case-i expansion residuals.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus;
use crate::embedding::{CharacteristicSpec, CountSampler, EmbeddingError};
use crate::limits::{
    self, EllStar, Hypotheses, LimitContext, LimitsError, ScalingFunctions, SigmaSq,
};
use crate::model::{self, mean_matrix, ModelError, ReplacementLaw};
use crate::rng;
use crate::spectral::{decompose, Regime, SpectralData, SpectralError};
use crate::stats::{self, ChiSquare, StatsError};
use crate::urn;

/// Extra generations grown past `log_rho n` for the martingale estimates.
pub const EXTRA_DEPTH: usize = 10;
/// Upper bound on attempts per requested replicate when rejecting extinct
/// runs.
const MAX_ATTEMPT_FACTOR: u64 = 4;
/// Largest `n` handled by the exact-law comparison.
pub const EXACT_MAX_STEPS: u64 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("only {survivors} of {attempts} replicates survived")]
    TooFewSurvivors { survivors: usize, attempts: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown law {0:?} (neither a file nor a corpus name)")]
    UnknownLaw(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Limits(#[from] LimitsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

/// Reads a law from a JSON file, or from the built-in corpus by name.
pub fn load_law(spec: &str) -> Result<ReplacementLaw, HarnessError> {
    let p = Path::new(spec);
    if p.is_file() {
        return Ok(ReplacementLaw::from_json_file(p)?);
    }
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    corpus::by_name(spec)
        .or_else(|| corpus::by_name(stem))
        .ok_or_else(|| HarnessError::UnknownLaw(spec.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lln,
    Clt,
    Equivalence,
    Expansion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GofTest {
    Ks,
    Ad,
}

/// Centering of `B_j(n)` in the fluctuation statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// `rho u_j n`.
    Linear,
    /// `delta_{j j0} + F^j(F^inv(n))` with the estimated `W^(1)`.
    Full,
}

/// Normalization of the centered count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `sqrt(n) (log_rho n)^{l* + 1/2} Uppsi(T_n)`.
    Theory,
    /// `sqrt(n) Uppsi(T_n)` whatever `l*` is.
    NoLog,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub law: String,
    pub j0: usize,
    pub j: usize,
    pub mode: Mode,
    pub replicates: usize,
    pub steps: u64,
    pub seed: u64,
    pub reject_extinct: bool,
    pub test: GofTest,
    pub alpha: f64,
    /// `None` picks the regime default (full above `sqrt(rho)`).
    pub centering: Option<Centering>,
    pub scale: ScaleMode,
    /// Constant `c` of the law-of-large-numbers threshold
    /// `c (1 + ln n) / sqrt(n)`; `None` means `rho / 2`.
    pub lln_c: Option<f64>,
    /// Added to the candidate limit `rho u_j` (nonzero only for controls).
    pub limit_shift: f64,
    /// Checkpoints of the expansion study.
    pub expansion_steps: Vec<u64>,
    pub samples_path: Option<String>,
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(law: &str, mode: Mode) -> Self {
        ExperimentConfig {
            law: law.to_string(),
            j0: 0,
            j: 0,
            mode,
            replicates: 200,
            steps: 10_000,
            seed: 0,
            reject_extinct: true,
            test: GofTest::Ks,
            alpha: 0.01,
            centering: None,
            scale: ScaleMode::Theory,
            lln_c: None,
            limit_shift: 0.0,
            expansion_steps: vec![256, 4096],
            samples_path: None,
            threads: None,
            timing: false,
        }
    }

    fn validate(&self, law: &ReplacementLaw) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.steps == 0 && self.mode != Mode::Expansion {
            return bad("steps must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.j0 >= law.dim() || self.j >= law.dim() {
            return bad("type index out of range");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Process exit code: 0 on pass, 2 on statistical rejection.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
        }
    }
}

/// One replicate's contribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleRecord {
    pub replicate: u64,
    pub w_hat: Option<f64>,
    pub tau_n: Option<f64>,
    pub b_j: u64,
    pub standardized: f64,
}

pub fn samples_csv(samples: &[SampleRecord]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from("replicate,W_hat,tau_n,B_j,standardized\n");
    for r in samples {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.replicate,
            opt(r.w_hat),
            opt(r.tau_n),
            r.b_j,
            r.standardized
        ));
    }
    s
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    Lln {
        limit: f64,
        median_deviation: f64,
        threshold: f64,
    },
    Clt {
        ell_star: EllStar,
        centering: Centering,
        scale: ScaleMode,
        mean: f64,
        variance: f64,
        truncation: Vec<SigmaSq>,
    },
    Equivalence {
        urn: ChiSquare,
        embedding: ChiSquare,
        exact: bool,
    },
    Expansion {
        steps: Vec<u64>,
        median_abs_residual: Vec<f64>,
        exponent: f64,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub regime: &'static str,
    pub hypotheses: Hypotheses,
    pub survival_fraction: f64,
    pub samples_path: Option<String>,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub verdict: Verdict,
    /// Wall-clock time; recorded only on request so reports stay
    /// reproducible byte for byte.
    pub runtime_ms: Option<u64>,
    pub detail: Detail,
    #[serde(skip)]
    pub samples: Vec<SampleRecord>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Worker pool capped by `threads`, else by `URNFLOW_THREADS`.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let cap = threads.or_else(|| {
        std::env::var("URNFLOW_THREADS")
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .filter(|&n: &usize| n > 0)
    });
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cap {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

/// Runs `attempt` on replicate indices `0, 1, ..` until `want` survivors
/// are collected. Fails when fewer than half of the first `want` attempts
/// survive. Results are ordered by replicate index.
fn collect_survivors<T, F>(
    pool: &rayon::ThreadPool,
    want: usize,
    reject_extinct: bool,
    attempt: F,
) -> Result<(Vec<(u64, T)>, f64), HarnessError>
where
    T: Send,
    F: Fn(u64) -> (bool, T) + Sync,
{
    let run = |lo: u64, hi: u64| -> Vec<(u64, bool, T)> {
        pool.install(|| {
            (lo..hi)
                .into_par_iter()
                .map(|r| {
                    let (s, t) = attempt(r);
                    (r, s, t)
                })
                .collect()
        })
    };
    let mut all = run(0, want as u64);
    let first = all.iter().filter(|x| x.1).count();
    if first * 2 < want {
        return Err(HarnessError::TooFewSurvivors {
            survivors: first,
            attempts: want,
        });
    }
    let mut survivors = first;
    let mut next = want as u64;
    while reject_extinct && survivors < want && next < MAX_ATTEMPT_FACTOR * want as u64 {
        let batch = ((want - survivors) as u64 * 2).max(8);
        let more = run(next, next + batch);
        survivors += more.iter().filter(|x| x.1).count();
        all.extend(more);
        next += batch;
    }
    let attempts = if reject_extinct {
        // attempts up to and including the last survivor that was kept
        let mut kept = 0;
        let mut upto = all.len();
        for (i, x) in all.iter().enumerate() {
            if x.1 {
                kept += 1;
                if kept == want {
                    upto = i + 1;
                    break;
                }
            }
        }
        all.truncate(upto);
        upto
    } else {
        all.len()
    };
    let alive = all.iter().filter(|x| x.1).count();
    let fraction = alive as f64 / attempts as f64;
    let out = all
        .into_iter()
        .filter(|x| !reject_extinct || x.1)
        .map(|(r, _, t)| (r, t))
        .collect();
    Ok((out, fraction))
}

fn write_samples(cfg: &ExperimentConfig, samples: &[SampleRecord]) -> Result<(), HarnessError> {
    if let Some(p) = &cfg.samples_path {
        std::fs::write(p, samples_csv(samples))?;
    }
    Ok(())
}

struct Prepared {
    sd: SpectralData,
    regime: limits::RegimeReport,
}

fn prepare(law: &ReplacementLaw, cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate(law)?;
    let sd = decompose(&mean_matrix(law))?;
    let regime = limits::regime(&sd, law, cfg.j);
    Ok(Prepared { sd, regime })
}

fn elapsed(cfg: &ExperimentConfig, start: Instant) -> Option<u64> {
    cfg.timing.then(|| start.elapsed().as_millis() as u64)
}

/// `max_j |B_j(n)/n - rho u_j|` over surviving replicates; passes when the
/// median is below `c (1 + ln n) / sqrt(n)`. The recorded per-replicate
/// value is the deviation of the observed type `j`.
pub fn run_lln(
    law: &ReplacementLaw,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let Prepared { sd, regime } = prepare(law, cfg)?;
    let pool = thread_pool(cfg.threads)?;
    let n = cfg.steps;
    let limits: Vec<f64> = (0..sd.dim)
        .map(|j| limits::lln_limit(&sd, j) + cfg.limit_shift)
        .collect();
    let (rows, survival_fraction) =
        collect_survivors(&pool, cfg.replicates, cfg.reject_extinct, |r| {
            let mut g = rng::stream(cfg.seed, r);
            let state = urn::sample_b(law, cfg.j0, n, &mut g);
            let dev = state
                .b
                .iter()
                .zip(&limits)
                .map(|(&b, l)| (b as f64 / n as f64 - l).abs())
                .fold(0.0, f64::max);
            (!state.is_extinct(), (state.b[cfg.j], dev))
        })?;
    let samples: Vec<SampleRecord> = rows
        .iter()
        .map(|&(r, (b_j, dev))| SampleRecord {
            replicate: r,
            w_hat: None,
            tau_n: None,
            b_j,
            standardized: dev,
        })
        .collect();
    let devs: Vec<f64> = samples.iter().map(|s| s.standardized).collect();
    let median = stats::median(&devs);
    let nf = n as f64;
    let c = cfg.lln_c.unwrap_or(sd.rho / 2.0);
    let threshold = c * (1.0 + nf.ln()) / nf.sqrt();
    write_samples(cfg, &samples)?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        regime: regime.case,
        hypotheses: regime.hypotheses,
        survival_fraction,
        samples_path: cfg.samples_path.clone(),
        statistic: median,
        p_value: None,
        verdict: Verdict::from(median < threshold),
        runtime_ms: elapsed(cfg, start),
        detail: Detail::Lln {
            limit: limits[cfg.j],
            median_deviation: median,
            threshold,
        },
        samples,
    })
}

/// Everything the fluctuation statistic needs from one law.
pub struct CltSetup<'a> {
    pub sd: &'a SpectralData,
    pub ctx: LimitContext<'a>,
    pub scaling: ScalingFunctions,
    pub profile: limits::VarianceProfile,
}

impl<'a> CltSetup<'a> {
    pub fn new(
        sd: &'a SpectralData,
        law: &'a ReplacementLaw,
        j: usize,
    ) -> Result<Self, HarnessError> {
        let ctx = LimitContext::new(sd, law)?;
        let profile = ctx.urn_profile(j)?;
        let scaling = ScalingFunctions::new(sd, &profile)?;
        Ok(CltSetup {
            sd,
            ctx,
            scaling,
            profile,
        })
    }

    /// Generation to which the embedding is grown for `n` draws.
    pub fn depth_for(&self, n: u64) -> usize {
        ((n.max(2) as f64).ln() / self.sd.rho.ln()).ceil() as usize + EXTRA_DEPTH
    }

    /// Standardized `B_j(n)` of one embedded sample, or `None` after
    /// extinction.
    #[allow(clippy::too_many_arguments)]
    pub fn standardize(
        &self,
        sample: &crate::embedding::EmbeddedSample,
        j0: usize,
        j: usize,
        n: u64,
        centering: Centering,
        scale: ScaleMode,
    ) -> Option<(f64, f64, f64)> {
        let sd = self.sd;
        let tau = sample.tau?;
        let w = sample.w_hat(sd.rho, sd.v.as_slice());
        if !sample.survived || w <= 0.0 {
            return None;
        }
        let nf = n as f64;
        let t = limits::t_n(sd.rho, nf, w);
        let center = match centering {
            Centering::Linear => limits::lln_limit(sd, j) * nf,
            Centering::Full => {
                let w1 = self.ctx.w1_estimate(sample.depth, &sample.z_deep);
                let mut z0 = DVector::zeros(sd.dim);
                z0[j0] = 1.0;
                let s = self.ctx.script_f_inv(nf, &w1, &z0);
                let delta = if j == j0 { 1.0 } else { 0.0 };
                delta
                    + self
                        .ctx
                        .script_f(&CharacteristicSpec::of_type(j, 0.0), s, &w1, &z0)
            }
        };
        let denom = match scale {
            ScaleMode::Theory => self.scaling.clt_scale(nf, t),
            ScaleMode::NoLog => nf.sqrt() * self.scaling.uppsi(t),
        };
        Some(((sample.b[j] as f64 - center) / denom, w, tau))
    }
}

/// Normality test of the standardized fluctuations of `B_j(n)`.
pub fn run_clt(
    law: &ReplacementLaw,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let Prepared { sd, regime } = prepare(law, cfg)?;
    let setup = CltSetup::new(&sd, law, cfg.j)?;
    let pool = thread_pool(cfg.threads)?;
    let centering = cfg.centering.unwrap_or(match regime.regime {
        Regime::Above => Centering::Full,
        _ => Centering::Linear,
    });
    let sampler = CountSampler::new(law);
    let n = cfg.steps;
    let depth = setup.depth_for(n);
    let (rows, survival_fraction) =
        collect_survivors(&pool, cfg.replicates, cfg.reject_extinct, |r| {
            let mut g = rng::stream(cfg.seed, r);
            let s = sampler.sample(cfg.j0, n, depth, &mut g);
            let z = setup.standardize(&s, cfg.j0, cfg.j, n, centering, cfg.scale);
            (z.is_some(), (s.b[cfg.j], z))
        })?;
    let samples: Vec<SampleRecord> = rows
        .into_iter()
        .map(|(r, (b_j, z))| SampleRecord {
            replicate: r,
            w_hat: z.map(|x| x.1),
            tau_n: z.map(|x| x.2),
            b_j,
            standardized: z.map_or(f64::NAN, |x| x.0),
        })
        .collect();
    let values: Vec<f64> = samples
        .iter()
        .map(|s| s.standardized)
        .filter(|x| x.is_finite())
        .collect();
    let result = match cfg.test {
        GofTest::Ks => stats::ks_test(&values)?,
        GofTest::Ad => stats::ad_test(&values)?,
    };
    let (mean, variance) = stats::mean_var(&values);
    write_samples(cfg, &samples)?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        regime: regime.case,
        hypotheses: regime.hypotheses,
        survival_fraction,
        samples_path: cfg.samples_path.clone(),
        statistic: result.statistic,
        p_value: Some(result.p_value),
        verdict: Verdict::from(result.p_value > cfg.alpha),
        runtime_ms: elapsed(cfg, start),
        detail: Detail::Clt {
            ell_star: setup.profile.ell_star,
            centering,
            scale: cfg.scale,
            mean,
            variance,
            truncation: setup.profile.truncation.clone(),
        },
        samples,
    })
}

fn tally(rows: impl IntoIterator<Item = Vec<u64>>) -> BTreeMap<Vec<u64>, u64> {
    let mut m = BTreeMap::new();
    for b in rows {
        *m.entry(b).or_insert(0) += 1;
    }
    m
}

/// Compares `B(n)` from the direct urn simulation and from the embedding,
/// against the exact law for `n <= 4`, against each other otherwise.
/// Extinct runs are kept: the exact law includes frozen trajectories.
pub fn run_equivalence(
    law: &ReplacementLaw,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let Prepared { regime, .. } = prepare(law, cfg)?;
    let pool = thread_pool(cfg.threads)?;
    let n = cfg.steps;
    let r = cfg.replicates as u64;
    let sampler = CountSampler::new(law);
    let (urn_rows, emb_rows): (Vec<_>, Vec<_>) = pool.install(|| {
        (0..r)
            .into_par_iter()
            .map(|i| {
                let mut g = rng::stream(cfg.seed, 2 * i);
                let state = urn::sample_b(law, cfg.j0, n, &mut g);
                let mut h = rng::stream(cfg.seed, 2 * i + 1);
                let emb = sampler.sample(cfg.j0, n, 0, &mut h);
                (state, emb)
            })
            .unzip()
    });
    let alive = urn_rows.iter().filter(|s| !s.is_extinct()).count();
    let samples: Vec<SampleRecord> = urn_rows
        .iter()
        .enumerate()
        .map(|(i, s)| SampleRecord {
            replicate: i as u64,
            w_hat: None,
            tau_n: None,
            b_j: s.b[cfg.j],
            standardized: f64::NAN,
        })
        .collect();
    let urn_counts = tally(urn_rows.into_iter().map(|s| s.b));
    let emb_counts = tally(emb_rows.into_iter().map(|s| s.b));
    let exact = n <= EXACT_MAX_STEPS;
    let (u, e) = if exact {
        let dist = model::exact_distribution(law, cfg.j0, n as usize)?;
        let expected: BTreeMap<Vec<u64>, f64> =
            dist.into_iter().map(|(b, p)| (b, p.to_f64())).collect();
        (
            stats::chi_square_gof(&urn_counts, &expected),
            stats::chi_square_gof(&emb_counts, &expected),
        )
    } else {
        let h = stats::chi_square_homogeneity(&urn_counts, &emb_counts);
        (h, h)
    };
    let p = u.p_value.min(e.p_value);
    write_samples(cfg, &samples)?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        regime: regime.case,
        hypotheses: regime.hypotheses,
        survival_fraction: alive as f64 / r as f64,
        samples_path: cfg.samples_path.clone(),
        statistic: u.statistic.max(e.statistic),
        p_value: Some(p),
        verdict: Verdict::from(p > cfg.alpha),
        runtime_ms: elapsed(cfg, start),
        detail: Detail::Equivalence {
            urn: u,
            embedding: e,
            exact,
        },
        samples,
    })
}

/// Median over surviving replicates of
/// `|B_j(n) - rho u_j n - expansion| / n^{log_rho gamma}` at each of
/// `cfg.expansion_steps`; passes when the last median is below half the
/// first.
pub fn run_expansion(
    law: &ReplacementLaw,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let Prepared { sd, regime } = prepare(law, cfg)?;
    if sd.regime() != Regime::Above {
        return Err(LimitsError::WrongRegime(sd.regime()).into());
    }
    if !regime.gamma_simple {
        return Err(LimitsError::GammaNotSimple.into());
    }
    let steps = cfg.expansion_steps.clone();
    if steps.len() < 2 || steps.contains(&0) {
        return Err(HarnessError::InvalidConfig(
            "expansion needs two positive checkpoints".into(),
        ));
    }
    let pool = thread_pool(cfg.threads)?;
    let sampler = CountSampler::new(law);
    let exponent = sd.gamma.ln() / sd.rho.ln();
    let ru = limits::lln_limit(&sd, cfg.j);
    let residual = |s: &crate::embedding::EmbeddedSample, n: u64| -> Option<f64> {
        let w = s.w_hat(sd.rho, sd.v.as_slice());
        if !s.survived || w <= 0.0 {
            return None;
        }
        let wl: Option<Vec<Complex64>> = sd
            .gamma_set
            .iter()
            .map(|&k| limits::w_lambda_estimate(&sd, k, s.depth, &s.z_deep))
            .collect();
        let nf = n as f64;
        let pred = limits::case_i_expansion(&sd, cfg.j, nf, w, &wl?).ok()?;
        Some((s.b[cfg.j] as f64 - ru * nf - pred) / nf.powf(exponent))
    };
    let (rows, survival_fraction) =
        collect_survivors(&pool, cfg.replicates, cfg.reject_extinct, |r| {
            let mut g = rng::stream(cfg.seed, r);
            let res: Vec<Option<f64>> = steps
                .iter()
                .map(|&n| {
                    let depth = ((n as f64).ln() / sd.rho.ln()).ceil() as usize + EXTRA_DEPTH;
                    residual(&sampler.sample(cfg.j0, n, depth, &mut g), n)
                })
                .collect();
            let ok = res.iter().all(Option::is_some);
            (ok, res)
        })?;
    let medians: Vec<f64> = (0..steps.len())
        .map(|k| {
            let v: Vec<f64> = rows
                .iter()
                .filter_map(|(_, r)| r[k])
                .map(f64::abs)
                .collect();
            stats::median(&v)
        })
        .collect();
    let last = steps.len() - 1;
    let samples: Vec<SampleRecord> = rows
        .iter()
        .map(|(r, res)| SampleRecord {
            replicate: *r,
            w_hat: None,
            tau_n: None,
            b_j: 0,
            standardized: res[last].unwrap_or(f64::NAN),
        })
        .collect();
    write_samples(cfg, &samples)?;
    let ratio = medians[last] / medians[0];
    Ok(ExperimentReport {
        config: cfg.clone(),
        regime: regime.case,
        hypotheses: regime.hypotheses,
        survival_fraction,
        samples_path: cfg.samples_path.clone(),
        statistic: ratio,
        p_value: None,
        verdict: Verdict::from(ratio < 0.5),
        runtime_ms: elapsed(cfg, start),
        detail: Detail::Expansion {
            steps,
            median_abs_residual: medians,
            exponent,
        },
        samples,
    })
}

pub fn run(law: &ReplacementLaw, cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    match cfg.mode {
        Mode::Lln => run_lln(law, cfg),
        Mode::Clt => run_clt(law, cfg),
        Mode::Equivalence => run_equivalence(law, cfg),
        Mode::Expansion => run_expansion(law, cfg),
    }
}

/// Exact law of `B(1..=4)` for the three-type example started from a
/// black ball, as a printable table, and whether it reproduces the known
/// values.
pub fn example_table() -> Result<(String, bool), HarnessError> {
    use num_rational::BigRational;
    let law = corpus::three_type();
    let names = ["black", "white", "green"];
    let mut out = format!(
        "{:>4}  {:>6} {:>6} {:>6}  probability\n",
        "n", names[0], names[1], names[2]
    );
    let mut found = BTreeMap::new();
    for n in 1..=4u64 {
        for (b, p) in model::exact_distribution(&law, 0, n as usize)? {
            out.push_str(&format!(
                "{n:>4}  {:>6} {:>6} {:>6}  {p}\n",
                b[0], b[1], b[2]
            ));
            found.insert((n, b), p.exact().cloned());
        }
    }
    let r = |a: i64, b: i64| Some(BigRational::new(a.into(), b.into()));
    let expect = [
        ((1, vec![2, 0, 1]), r(1, 1)),
        ((2, vec![4, 1, 2]), r(1, 2)),
        ((2, vec![3, 0, 2]), r(1, 2)),
        ((3, vec![5, 1, 3]), r(1, 1)),
        ((4, vec![5, 3, 4]), r(1, 6)),
    ];
    let ok = expect.iter().all(|(k, p)| found.get(k) == Some(p))
        && [1u64, 2, 3]
            .iter()
            .all(|&n| found.keys().filter(|k| k.0 == n).count() == if n == 2 { 2 } else { 1 });
    Ok((out, ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_table_matches() {
        let (table, ok) = example_table().unwrap();
        assert!(ok, "{table}");
        assert!(table.contains("1/6"));
    }

    #[test]
    fn invalid_configs() {
        let law = corpus::case_ii();
        let mut cfg = ExperimentConfig::new("boundary", Mode::Lln);
        cfg.alpha = 1.0;
        assert!(matches!(
            run(&law, &cfg),
            Err(HarnessError::InvalidConfig(_))
        ));
        cfg.alpha = 0.01;
        cfg.j = 5;
        assert!(matches!(
            run(&law, &cfg),
            Err(HarnessError::InvalidConfig(_))
        ));
    }

    #[test]
    fn doubling_lln_is_exact_at_full_generations() {
        let law = corpus::doubling();
        let mut cfg = ExperimentConfig::new("doubling", Mode::Lln);
        cfg.replicates = 4;
        cfg.steps = 1023;
        let rep = run_lln(&law, &cfg).unwrap();
        // B(2^k - 1) = 2^{k+1} - 1
        assert!(rep.samples.iter().all(|s| s.b_j == 2047));
        assert_eq!(rep.verdict, Verdict::Pass);
    }

    #[test]
    fn subcritical_law_has_too_few_survivors() {
        let law = ReplacementLaw::new(1, vec![vec![(vec![0], 0.9), (vec![2], 0.1)]]).unwrap();
        let mut cfg = ExperimentConfig::new("dying", Mode::Lln);
        cfg.replicates = 50;
        cfg.steps = 50;
        assert!(matches!(
            run(&law, &cfg),
            Err(HarnessError::TooFewSurvivors { .. })
        ));
    }

    #[test]
    fn load_by_name_and_stem() {
        assert_eq!(load_law("boundary").unwrap().dim(), 2);
        assert_eq!(load_law("some/dir/below.json").unwrap().dim(), 2);
        assert!(matches!(load_law("nope"), Err(HarnessError::UnknownLaw(_))));
    }
}
