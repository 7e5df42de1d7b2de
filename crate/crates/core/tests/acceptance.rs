//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use urnflow::corpus;
use urnflow::embedding::CharacteristicSpec;
use urnflow::harness::{
    run_clt, run_equivalence, run_expansion, run_lln, Centering, Detail, ExperimentConfig, Mode,
    ScaleMode,
};
use urnflow::limits::{self, LimitContext, ScalingFunctions, EPS_TAIL};
use urnflow::model::{exact_distribution, mean_matrix, Probability, ReplacementLaw};
use urnflow::spectral::{cnorm, decompose, CMat, RMat, SpectralData, EPS_SPEC};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration, bool) {
    let t = Instant::now();
    let o = f();
    let e = t.elapsed();
    (o, e, e <= limit)
}

// ---------------------------------------------------------------- 1

fn golden_example() -> Outcome {
    let law = corpus::three_type();
    let q = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
    let exact = |n: usize| -> Vec<(Vec<u64>, BigRational)> {
        exact_distribution(&law, 0, n)
            .unwrap()
            .into_iter()
            .map(|(b, p)| match p {
                Probability::Exact(r) => (b, r),
                Probability::Approx(_) => panic!("rational law gave a float probability"),
            })
            .collect()
    };
    let d1 = exact(1);
    let d2 = exact(2);
    let d3 = exact(3);
    let d4 = exact(4);
    let ok1 = d1 == vec![(vec![2, 0, 1], q(1, 1))];
    let ok2 = d2.len() == 2
        && d2.contains(&(vec![4, 1, 2], q(1, 2)))
        && d2.contains(&(vec![3, 0, 2], q(1, 2)));
    let ok3 = d3 == vec![(vec![5, 1, 3], q(1, 1))];
    let ok4 = d4.iter().any(|(b, p)| b == &vec![5, 3, 4] && *p == q(1, 6));
    outcome(
        ok1 && ok2 && ok3 && ok4,
        format!("B(1) {ok1}, B(2) {ok2}, B(3) {ok3}, P(B(4)=(5,3,4))=1/6 {ok4}"),
    )
}

// ---------------------------------------------------------------- 2

fn simulator_equivalence() -> Outcome {
    let mut worst = (100usize, String::new());
    let mut all_ok = true;
    for (name, law) in corpus::all() {
        for k in 1..=4u64 {
            let (mut urn_pass, mut emb_pass) = (0, 0);
            for seed in 0..100 {
                let mut cfg = ExperimentConfig::new(name, Mode::Equivalence);
                cfg.replicates = 10_000;
                cfg.steps = k;
                cfg.seed = seed;
                let r = run_equivalence(&law, &cfg).unwrap();
                if let Detail::Equivalence { urn, embedding, .. } = r.detail {
                    urn_pass += usize::from(urn.p_value > 0.01);
                    emb_pass += usize::from(embedding.p_value > 0.01);
                }
            }
            all_ok &= urn_pass >= 95 && emb_pass >= 95;
            for (sim, c) in [("urn", urn_pass), ("embedding", emb_pass)] {
                if c < worst.0 {
                    worst = (c, format!("{name} k={k} {sim}"));
                }
            }
        }
    }
    outcome(
        all_ok,
        format!("fewest non-rejections {}/100 ({})", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------- 3

fn matrix_corpus() -> Vec<RMat> {
    let m = |n: usize, v: &[f64]| RMat::from_row_slice(n, n, v);
    let mut out = vec![
        m(1, &[2.0]),
        m(2, &[3.0, 1.0, 1.0, 3.0]),
        m(2, &[7.0, 2.0, 2.0, 7.0]),
        m(2, &[3.0, 2.0, 2.0, 3.0]),
        m(3, &[1.0, 0.0, 1.0, 0.0, 2.0, 1.0, 2.0, 1.0, 1.0]),
        // defective: eigenvalue -1 with a 2x2 Jordan block
        m(3, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0, 0.0]),
        // defective at 0
        m(3, &[0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]),
        // complex pair 1 + e^{+-2 pi i / 3}
        m(3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0]),
        m(2, &[1.0, 2.0, 3.0, 1.0]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    while out.len() < 25 {
        let n = rng.random_range(2..=5);
        let a = RMat::from_fn(n, n, |_, _| rng.random_range(1..=6) as f64);
        if decompose(&a).is_ok() {
            out.push(a);
        }
    }
    out
}

fn identity_defects(sd: &SpectralData) -> f64 {
    let n = sd.dim;
    let id = CMat::identity(n, n);
    let ac = sd.a_complex();
    let mut sum = CMat::zeros(n, n);
    let mut recon = CMat::zeros(n, n);
    let mut worst: f64 = 0.0;
    for (a, e) in sd.eigs.iter().enumerate() {
        sum += &e.pi;
        recon += &e.pi * e.lambda + &e.nilpotent;
        worst = worst.max(cnorm(&(&e.pi * &e.pi - &e.pi)));
        for (b, f) in sd.eigs.iter().enumerate() {
            if a != b {
                worst = worst.max(cnorm(&(&e.pi * &f.pi)));
            }
        }
        let mut p = CMat::identity(n, n);
        for _ in 0..e.multiplicity {
            p = &p * &e.nilpotent;
        }
        worst = worst.max(cnorm(&p));
        worst = worst.max(cnorm(&((&ac - &id * e.lambda) * &e.pi - &e.nilpotent)));
    }
    worst = worst.max(cnorm(&(sum - &id)));
    worst = worst.max(cnorm(&(recon - &ac)));
    let uv = &sd.u * sd.v.transpose();
    let pr = &sd.eigs[sd.perron_index].pi;
    worst = worst.max((pr.map(|z| z.re) - uv).abs().max() + pr.map(|z| z.im).abs().max());
    worst = worst.max(cnorm(&(&sd.a1 * &sd.a1_inv - &id)));
    worst = worst.max(cnorm(&(&sd.a2 * &sd.a2_inv - &id)));
    worst
}

fn spectral_identities() -> Outcome {
    let corpus = matrix_corpus();
    let mut worst: f64 = 0.0;
    let mut defective = 0;
    for a in &corpus {
        let sd = decompose(a).unwrap();
        defective += usize::from(sd.eigs.iter().any(|e| e.index > 0));
        worst = worst.max(identity_defects(&sd));
    }
    outcome(
        worst <= EPS_SPEC && defective >= 1 && corpus.len() == 25,
        format!(
            "{} matrices, {defective} defective, max defect {worst:.2e}",
            corpus.len()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn law_of_large_numbers() -> Outcome {
    let mut ok = true;
    let mut parts = vec![];
    for (name, law) in corpus::all() {
        let run = |n: u64| {
            let mut cfg = ExperimentConfig::new(name, Mode::Lln);
            cfg.replicates = 200;
            cfg.steps = n;
            cfg.seed = 4;
            run_lln(&law, &cfg).unwrap()
        };
        let (a, b) = (run(10_000), run(100_000));
        let rho = decompose(&mean_matrix(&law)).unwrap().rho;
        let shrink = a.statistic / b.statistic;
        let pass = a.statistic < 0.05 * rho && shrink >= 2.0;
        ok &= pass;
        parts.push(format!(
            "{name}: {:.4} < {:.3}, shrink {shrink:.2}",
            a.statistic,
            0.05 * rho
        ));
    }
    outcome(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 5

fn fluctuations() -> Outcome {
    let count = |name: &str, law: &ReplacementLaw, scale: ScaleMode| -> usize {
        (0..100u64)
            .filter(|&seed| {
                let mut cfg = ExperimentConfig::new(name, Mode::Clt);
                cfg.replicates = 2000;
                cfg.steps = 10_000;
                cfg.seed = seed;
                cfg.centering = Some(Centering::Full);
                cfg.scale = scale;
                run_clt(law, &cfg).unwrap().p_value.unwrap() > 0.01
            })
            .count()
    };
    let below = count("below", &corpus::case_iii(), ScaleMode::Theory);
    let boundary = count("boundary", &corpus::case_ii(), ScaleMode::Theory);
    let control = count("boundary", &corpus::case_ii(), ScaleMode::NoLog);
    outcome(
        below >= 95 && boundary >= 95 && control <= 5,
        format!(
            "non-rejections: below {below}/100, boundary {boundary}/100, boundary without log factor {control}/100"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn expansion_residuals() -> Outcome {
    let mut cfg = ExperimentConfig::new("above", Mode::Expansion);
    cfg.replicates = 500;
    cfg.expansion_steps = vec![256, 4096];
    let r = run_expansion(&corpus::case_i(), &cfg).unwrap();
    let Detail::Expansion {
        median_abs_residual: m,
        ..
    } = &r.detail
    else {
        unreachable!()
    };
    outcome(
        m[1] < 0.5 * m[0],
        format!(
            "median |residual| {:.4} at 256, {:.4} at 4096 (ratio {:.3})",
            m[0],
            m[1],
            m[1] / m[0]
        ),
    )
}

// ---------------------------------------------------------------- 7

fn real(m: &CMat) -> RMat {
    m.map(|z| z.re)
}

fn mean_phi(m: i64, x: f64, c: &DVector<f64>) -> DVector<f64> {
    match m {
        m if m < 0 => DVector::zeros(c.len()),
        0 => c * x,
        _ => c.clone(),
    }
}

/// `sum_k E[Phi(k)] pi A_i^{-k}` summed term by term.
fn x_series(sd: &SpectralData, c: &DVector<f64>, x: f64, pi: &RMat) -> DVector<f64> {
    let n = sd.dim;
    let inv = (&sd.a * pi + (RMat::identity(n, n) - pi))
        .try_inverse()
        .unwrap();
    let mut term = pi.tr_mul(c);
    let mut sum = &term * x;
    for _ in 0..100_000 {
        term = inv.tr_mul(&term);
        sum += &term;
        if term.norm() < 1e-15 * (1.0 + sum.norm()) {
            break;
        }
    }
    sum
}

/// `E|y (L^(i) - A e_i) + f|^2`-type variance of `(Phi + Psi)(k) e_i`.
fn term_variance(
    law: &ReplacementLaw,
    sd: &SpectralData,
    spec: &CharacteristicSpec,
    k: i64,
    r: &DVector<f64>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..sd.dim {
        // enumerate (L outcome, U <= x or not)
        let mut vals = vec![];
        for o in law.column(i) {
            let psi: f64 = (0..sd.dim)
                .map(|t| r[t] * (o.offspring[t] as f64 - sd.a[(t, i)]))
                .sum();
            let phi = spec.a + spec.b * o.offspring[spec.j] as f64;
            match k {
                k if k < 0 => vals.push((o.prob, psi)),
                0 => {
                    vals.push((o.prob * spec.x, phi + psi));
                    vals.push((o.prob * (1.0 - spec.x), psi));
                }
                _ => vals.push((o.prob, phi + psi)),
            }
        }
        let mean: f64 = vals.iter().map(|(p, v)| p * v).sum();
        total += sd.u[i]
            * vals
                .iter()
                .map(|(p, v)| p * (v - mean).powi(2))
                .sum::<f64>();
    }
    total
}

/// `sigma^2` from the definition of `Psi` through `P(k, l)`, over
/// `k_lo..=k_hi`.
fn sigma_oracle(
    law: &ReplacementLaw,
    sd: &SpectralData,
    spec: &CharacteristicSpec,
    k_lo: i64,
    k_hi: i64,
) -> f64 {
    let n = sd.dim;
    let id = RMat::identity(n, n);
    let (p1, p2, p3) = (real(&sd.pi1), real(&sd.pi2), real(&sd.pi3));
    let p12 = &p1 + &p2;
    let inv_on = |p: &RMat| (&sd.a * p + (&id - p)).try_inverse().unwrap();
    let (m1, m12) = (inv_on(&p1), inv_on(&p12));
    let c = DVector::from_fn(n, |i, _| spec.a + spec.b * sd.a[(spec.j, i)]);
    let mut total = 0.0;
    for k in k_lo..=k_hi {
        let mut r = DVector::zeros(n);
        // l < 0: A^l on the projected range is the inverse power
        let (neg_proj, neg_inv) = if k <= 0 { (&p1, &m1) } else { (&p12, &m12) };
        let mut pow = neg_proj.clone();
        for l in 1..200_000i64 {
            pow = neg_inv * pow;
            let e = mean_phi(k + l - 1, spec.x, &c);
            let t = pow.tr_mul(&e);
            r -= &t;
            if k + l - 1 > 0 && t.norm() < 1e-15 * (1.0 + r.norm()) {
                break;
            }
        }
        if k > 0 {
            let mut pow = p3.clone();
            for l in 0..k {
                let e = mean_phi(k - l - 1, spec.x, &c);
                r += pow.tr_mul(&e);
                pow = &sd.a * pow;
            }
        }
        total += sd.rho.powf(-(k as f64)) * term_variance(law, sd, spec, k, &r);
    }
    total
}

fn closed_forms() -> Outcome {
    let grid: Vec<f64> = (0..16).map(|k| k as f64 / 16.0).collect();
    let (mut x_err, mut s_err): (f64, f64) = (0.0, 0.0);
    let mut positivity_ok = true;
    let mut checked = 0;
    for (_, law) in corpus::all() {
        let sd = decompose(&mean_matrix(&law)).unwrap();
        let ctx = LimitContext::new(&sd, &law).unwrap();
        let reg = limits::regime(&sd, &law, 0);
        for j in 0..sd.dim {
            let families = [
                CharacteristicSpec::total(0.0),
                CharacteristicSpec::of_type(j, 0.0),
                CharacteristicSpec {
                    a: -sd.rho * sd.u[j],
                    b: 1.0,
                    j,
                    x: 0.0,
                },
            ];
            for fam in families {
                for &x in &grid {
                    let spec = fam.at(x);
                    let c = limits::mean_row(&sd, &spec);
                    for (i, pi) in [(1, real(&sd.pi1)), (2, real(&sd.pi2))] {
                        let d = (ctx.x_vector(&spec, i) - x_series(&sd, &c, x, &pi)).norm();
                        x_err = x_err.max(d);
                    }
                    let s = ctx.sigma_sq(&spec, EPS_TAIL).unwrap();
                    let o = sigma_oracle(&law, &sd, &spec, s.k_min - 5, s.k_max + 5);
                    s_err = s_err.max((s.value - o).abs() / o.abs().max(1.0));
                }
            }
            let w = limits::w_vector(&sd, j);
            let reg_j = limits::regime(&sd, &law, j);
            if w.norm() > 1e-9 && reg_j.hypotheses.prop44_condition {
                let phi = CharacteristicSpec {
                    a: -sd.rho * sd.u[j],
                    b: 1.0,
                    j,
                    x: 0.0,
                };
                let bound: f64 = (0..sd.dim).map(|i| w[i] * w[i] * sd.u[i]).sum();
                for &x in grid.iter().filter(|&&x| x > 0.0) {
                    let s = ctx.sigma_sq(&phi.at(x), EPS_TAIL).unwrap().value;
                    positivity_ok &= s >= x * (1.0 - x) * bound;
                    checked += 1;
                }
            }
        }
        let _ = reg;
    }
    outcome(
        x_err <= 1e-10 && s_err <= 1e-8 && positivity_ok && checked > 0,
        format!("x-vector gap {x_err:.2e}, sigma^2 gap {s_err:.2e}, positivity {positivity_ok} at {checked} points"),
    )
}

// ---------------------------------------------------------------- 8

fn scaling_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let lambdas = [
        Complex64::new(4.0, 0.0),
        Complex64::new(2.0, 0.0),
        Complex64::new(5.0, 0.0),
        Complex64::new(0.5, 0.0),
        Complex64::new(-1.5, 0.0),
        Complex64::new(0.5, 0.866_025_403_784_438_6),
        Complex64::new(-2.0, 3.0),
    ];
    let mut uppsis = vec![];
    for law in [corpus::case_i(), corpus::case_ii(), corpus::case_iii()] {
        let sd = decompose(&mean_matrix(&law)).unwrap();
        let ctx = LimitContext::new(&sd, &law).unwrap();
        let p = ctx.urn_profile(0).unwrap();
        uppsis.push(ScalingFunctions::new(&sd, &p).unwrap());
    }
    let rel = |a: Complex64, b: Complex64| (a - b).norm() / b.norm().max(1.0);
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-5.0..10.0);
        let rho: f64 = rng.random_range(1.5..10.0);
        for &lambda in &lambdas {
            worst = worst.max(rel(
                limits::l_lambda(lambda, x + 1.0),
                limits::l_lambda(lambda, x),
            ));
            worst = worst.max(rel(
                limits::f_lambda(rho, lambda, x + 1.0),
                limits::f_lambda(rho, lambda, x),
            ));
            let lhs = (lambda.ln() * x).exp() * limits::l_lambda(lambda, x);
            let fl = x.floor();
            let rhs = lambda.powf(fl) * (Complex64::new(1.0, 0.0) + (lambda - 1.0) * (x - fl));
            worst = worst.max(rel(lhs, rhs));
        }
        let y = x.abs();
        worst = worst.max((limits::h(rho, limits::h_inv(rho, y)) - y).abs());
        worst = worst.max((limits::h_inv(rho, limits::h(rho, y)) - y).abs());
        for sf in &uppsis {
            worst = worst.max((sf.uppsi(x + 1.0) - sf.uppsi(x)).abs() / sf.uppsi(x).max(1.0));
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max defect {worst:.2e} over 1000 points"),
    )
}

fn main() {
    type Criterion = (&'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        (
            "exact law of the three-type example",
            Duration::from_secs(1),
            golden_example,
        ),
        (
            "simulators against the exact law",
            Duration::from_secs(120),
            simulator_equivalence,
        ),
        (
            "spectral identities",
            Duration::from_secs(1),
            spectral_identities,
        ),
        (
            "law of large numbers",
            Duration::from_secs(300),
            law_of_large_numbers,
        ),
        (
            "normal fluctuations",
            Duration::from_secs(1800),
            fluctuations,
        ),
        (
            "expansion above sqrt(rho)",
            Duration::from_secs(600),
            expansion_residuals,
        ),
        (
            "closed forms against series",
            Duration::from_secs(10),
            closed_forms,
        ),
        (
            "scaling-function identities",
            Duration::from_secs(1),
            scaling_identities,
        ),
    ];
    let mut failed = 0;
    for (k, (name, limit, f)) in criteria.iter().enumerate() {
        let (o, elapsed, in_time) = timed(*limit, f);
        let ok = o.ok && in_time;
        failed += usize::from(!ok);
        println!(
            "criterion {} [{}] {name}: {} ({:.2}s, limit {}s)",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
