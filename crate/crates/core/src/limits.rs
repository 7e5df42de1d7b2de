//! Closed-form limit theory: centering vectors, variance constants,
//! periodic scaling functions and the regime hypotheses.
//!
//! Row vectors are stored as `DVector`s; `row * M` is computed as `M^T row`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::embedding::CharacteristicSpec;
use crate::model::ReplacementLaw;
use crate::spectral::{CMat, EigenComponent, RMat, Regime, SpectralClass, SpectralData, EPS_SPEC};

/// Relative tolerance of the variance series tail.
pub const EPS_TAIL: f64 = 1e-12;
/// Points of the default `x` grid on `[0, 1)`.
pub const GRID_POINTS: usize = 16;
/// Points of the plot grid on one period.
pub const PLOT_POINTS: usize = 256;
/// Relative level below which a variance constant counts as zero.
pub const VARIANCE_TOL: f64 = 1e-10;
const MAX_SERIES_TERMS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum LimitsError {
    #[error("A_{0} - I is singular on the range of its class projection")]
    SingularResolvent(usize),
    #[error("variance series does not converge (ratio {0})")]
    TailNotConvergent(f64),
    #[error("limiting variance vanishes at y = {0}")]
    DegenerateVariance(f64),
    #[error("an eigenvalue of maximal sub-dominant modulus is not simple")]
    GammaNotSimple,
    #[error("expansion requires the regime above sqrt(rho), found {0}")]
    WrongRegime(Regime),
}

fn vm(r: &DVector<f64>, m: &RMat) -> DVector<f64> {
    m.tr_mul(r)
}

fn realify(m: &CMat) -> RMat {
    m.map(|z| z.re)
}

fn mat_pow(m: &RMat, mut n: u64) -> RMat {
    let mut base = m.clone();
    let mut acc = RMat::identity(m.nrows(), m.ncols());
    while n > 0 {
        if n & 1 == 1 {
            acc = &acc * &base;
        }
        base = &base * &base;
        n >>= 1;
    }
    acc
}

/// `w_j = e_j^T A - rho u_j 1`.
pub fn w_vector(sd: &SpectralData, j: usize) -> DVector<f64> {
    let ru = sd.rho * sd.u[j];
    DVector::from_iterator(sd.dim, (0..sd.dim).map(|i| sd.a[(j, i)] - ru))
}

/// `rho u_j`, the almost sure limit of `B_j(n) / n`.
pub fn lln_limit(sd: &SpectralData, j: usize) -> f64 {
    sd.rho * sd.u[j]
}

/// Mean of `Phi(k)` for `k >= 1`: `a 1 + b e_j^T A`.
pub fn mean_row(sd: &SpectralData, spec: &CharacteristicSpec) -> DVector<f64> {
    DVector::from_iterator(
        sd.dim,
        (0..sd.dim).map(|i| spec.a + spec.b * sd.a[(spec.j, i)]),
    )
}

/// Real operators derived from the spectral data and shared by every
/// closed-form evaluation for one law.
#[derive(Clone, Debug)]
pub struct LimitContext<'a> {
    pub sd: &'a SpectralData,
    pub law: &'a ReplacementLaw,
    /// `pi^(1)`, `pi^(2)`, `pi^(3)`.
    pub pi: [RMat; 3],
    pub a1: RMat,
    pub a2: RMat,
    pub a1_inv: RMat,
    pub a2_inv: RMat,
    /// `(A_i - I)^{-1}` on the range of `pi^(i)`, zero elsewhere.
    pub resolvent: [RMat; 2],
    /// `sum_{t >= 0} A_1^{-t} pi^(1)`.
    geo1: RMat,
    /// `sum_{s >= 1} A^{-s} (pi^(1) + pi^(2))`.
    geo12: RMat,
    /// Geometric decay ratios of the variance series for `k -> +inf` and
    /// `k -> -inf`.
    pub ratio_plus: f64,
    pub ratio_minus: f64,
}

fn restricted_resolvent(a: &RMat, pi: &RMat, which: usize) -> Result<RMat, LimitsError> {
    let n = a.nrows();
    let id = RMat::identity(n, n);
    let m = (a - &id) * pi + (&id - pi);
    if m.determinant().abs() < EPS_SPEC {
        return Err(LimitsError::SingularResolvent(which));
    }
    let inv = m
        .try_inverse()
        .ok_or(LimitsError::SingularResolvent(which))?;
    Ok(inv * pi)
}

/// `sum_{t >= 0} (B pi)^t pi` for `B pi` with spectral radius below one.
fn geometric(b_inv: &RMat, pi: &RMat) -> Option<RMat> {
    let n = pi.nrows();
    let m = b_inv * pi;
    (RMat::identity(n, n) - m).try_inverse().map(|g| g * pi)
}

impl<'a> LimitContext<'a> {
    pub fn new(sd: &'a SpectralData, law: &'a ReplacementLaw) -> Result<Self, LimitsError> {
        let n = sd.dim;
        let id = RMat::identity(n, n);
        let a = &sd.a;
        let pi = [realify(&sd.pi1), realify(&sd.pi2), realify(&sd.pi3)];
        let a1 = realify(&sd.a1);
        let a2 = realify(&sd.a2);
        let a1_inv = realify(&sd.a1_inv);
        let a2_inv = realify(&sd.a2_inv);
        let resolvent = [
            restricted_resolvent(a, &pi[0], 1)?,
            restricted_resolvent(a, &pi[1], 2)?,
        ];
        let geo1 = geometric(&a1_inv, &pi[0]).ok_or(LimitsError::SingularResolvent(1))?;
        let pi12 = &pi[0] + &pi[1];
        let a12 = a * &pi12 + (&id - &pi12);
        let a12_inv = a12.try_inverse().ok_or(LimitsError::SingularResolvent(2))?;
        let geo12 =
            &a12_inv * geometric(&a12_inv, &pi12).ok_or(LimitsError::SingularResolvent(2))?;

        let rho = sd.rho;
        let max_mod = |c: SpectralClass| {
            sd.components(c)
                .map(|e| e.lambda.norm())
                .fold(0.0, f64::max)
        };
        let min_mod = |c: SpectralClass| {
            sd.components(c)
                .map(|e| e.lambda.norm())
                .fold(f64::INFINITY, f64::min)
        };
        let g3 = max_mod(SpectralClass::Below);
        let ratio_plus = (g3 * g3 / rho).max(1.0 / rho);
        let m1 = min_mod(SpectralClass::Above);
        let ratio_minus = if m1.is_finite() { rho / (m1 * m1) } else { 0.0 };
        Ok(LimitContext {
            sd,
            law,
            pi,
            a1,
            a2,
            a1_inv,
            a2_inv,
            resolvent,
            geo1,
            geo12,
            ratio_plus,
            ratio_minus,
        })
    }

    /// `x_i(Phi) = sum_k E[Phi(k)] pi^(i) A_i^{-k}` in closed form,
    /// `c pi^(i) (x I + (A_i - I)^{-1})`. Real because every class is closed
    /// under conjugation. `i` is 1 or 2.
    pub fn x_vector(&self, spec: &CharacteristicSpec, i: usize) -> DVector<f64> {
        let c = mean_row(self.sd, spec);
        let n = self.sd.dim;
        let m = &self.pi[i - 1] * (RMat::identity(n, n) * spec.x + &self.resolvent[i - 1]);
        vm(&c, &m)
    }

    /// `F_n = x_1(Phi) A_1^n W^(1) + x_2(Phi) A_2^n Z_0`.
    pub fn f_n(
        &self,
        spec: &CharacteristicSpec,
        n: u64,
        w1: &DVector<f64>,
        z0: &DVector<f64>,
    ) -> f64 {
        let x1 = self.x_vector(spec, 1);
        let x2 = self.x_vector(spec, 2);
        vm(&x1, &mat_pow(&self.a1, n)).dot(w1) + vm(&x2, &mat_pow(&self.a2, n)).dot(z0)
    }

    /// `F^Phi(t) = F_{floor t}` of `Phi_{{t}}`; affine in `t` between
    /// consecutive integers.
    pub fn script_f(
        &self,
        spec: &CharacteristicSpec,
        t: f64,
        w1: &DVector<f64>,
        z0: &DVector<f64>,
    ) -> f64 {
        let n = t.floor();
        self.f_n(&spec.at(t - n), n as u64, w1, z0)
    }

    /// Inverse of `F^t` located on the first unit interval where it crosses
    /// `target`.
    pub fn script_f_inv(&self, target: f64, w1: &DVector<f64>, z0: &DVector<f64>) -> f64 {
        let total = CharacteristicSpec::total(0.0);
        let mut lo = self.f_n(&total, 0, w1, z0);
        if target <= lo {
            return 0.0;
        }
        let x1 = self.x_vector(&total, 1);
        let x2 = self.x_vector(&total, 2);
        let mut p1 = w1.clone();
        let mut p2 = z0.clone();
        for m in 0..4096u64 {
            p1 = &self.a1 * p1;
            p2 = &self.a2 * p2;
            let hi = x1.dot(&p1) + x2.dot(&p2);
            if hi >= target {
                return m as f64 + (target - lo) / (hi - lo);
            }
            lo = hi;
        }
        f64::INFINITY
    }

    /// `W^(1)` estimated by `A_1^{-D} pi^(1) Z_D`.
    pub fn w1_estimate(&self, depth: usize, z: &[u64]) -> DVector<f64> {
        let zd = DVector::from_iterator(z.len(), z.iter().map(|&x| x as f64));
        mat_pow(&self.a1_inv, depth as u64) * (&self.pi[0] * zd)
    }

    /// Row `r_k` with `Psi(k) = r_k (L - A)`.
    fn psi_rows(&self, spec: &CharacteristicSpec) -> PsiRows {
        let c = mean_row(self.sd, spec);
        PsiRows {
            k_pos_const: -vm(&c, &self.geo12),
            c,
            x: spec.x,
        }
    }

    /// Sum over the law of column `i` (and of the mark for `k = 0`) of the
    /// centered square of `(Phi + Psi)(k) e_i`.
    fn term_variance(&self, spec: &CharacteristicSpec, k: i64, r: &DVector<f64>) -> f64 {
        let sd = self.sd;
        let mut total = 0.0;
        for i in 0..sd.dim {
            let col = self.law.column(i);
            let mean_col: Vec<f64> = (0..sd.dim).map(|t| sd.a[(t, i)]).collect();
            let psi = |o: &[u64]| -> f64 {
                (0..sd.dim)
                    .map(|t| r[t] * (o[t] as f64 - mean_col[t]))
                    .sum()
            };
            let phi = |o: &[u64]| spec.a + spec.b * o[spec.j] as f64;
            let var = if k < 0 {
                // E psi = 0
                col.iter()
                    .map(|o| o.prob * psi(&o.offspring).powi(2))
                    .sum::<f64>()
            } else if k == 0 {
                let mean: f64 = col
                    .iter()
                    .map(|o| o.prob * spec.x * phi(&o.offspring))
                    .sum();
                col.iter()
                    .map(|o| {
                        let p = psi(&o.offspring);
                        let f = phi(&o.offspring);
                        o.prob
                            * (spec.x * (f + p - mean).powi(2)
                                + (1.0 - spec.x) * (p - mean).powi(2))
                    })
                    .sum()
            } else {
                let mean: f64 = col.iter().map(|o| o.prob * phi(&o.offspring)).sum();
                col.iter()
                    .map(|o| o.prob * (phi(&o.offspring) + psi(&o.offspring) - mean).powi(2))
                    .sum()
            };
            total += sd.u[i] * var;
        }
        total
    }

    /// `sigma^2(Phi) = sum_k rho^{-k} Var[Phi(k) + Psi(k)] u`, each side of
    /// the `k` sum stopped once its geometric tail bound falls below
    /// `eps_tail` times the partial sum.
    pub fn sigma_sq(
        &self,
        spec: &CharacteristicSpec,
        eps_tail: f64,
    ) -> Result<SigmaSq, LimitsError> {
        for q in [self.ratio_plus, self.ratio_minus] {
            if q >= 1.0 {
                return Err(LimitsError::TailNotConvergent(q));
            }
        }
        let rho = self.sd.rho;
        let rows = self.psi_rows(spec);
        let n = self.sd.dim;

        // k >= 1
        let mut pow3 = self.pi[2].clone();
        let mut cum3 = RMat::zeros(n, n);
        let mut plus = SeriesSide::new(self.ratio_plus);
        let mut k = 1i64;
        loop {
            let r = &rows.k_pos_const + vm(&rows.c, &(&cum3 + &pow3 * rows.x));
            let t = rho.powi(-(k as i32)) * self.term_variance(spec, k, &r);
            if plus.push(t, eps_tail)? {
                break;
            }
            cum3 += &pow3;
            pow3 = &self.sd.a * pow3;
            k += 1;
        }
        let k_max = k;

        // k <= 0
        let mut p1 = &self.a1_inv * &self.pi[0];
        let mut minus = SeriesSide::new(self.ratio_minus);
        let mut k = 0i64;
        loop {
            let m = &p1 * rows.x + &self.a1_inv * &p1 * &self.geo1;
            let r = -vm(&rows.c, &m);
            let t = rho.powf(-(k as f64)) * self.term_variance(spec, k, &r);
            if minus.push(t, eps_tail)? {
                break;
            }
            p1 = &self.a1_inv * p1;
            k -= 1;
        }
        Ok(SigmaSq {
            value: plus.sum + minus.sum,
            k_min: k,
            k_max,
            tail_plus: plus.bound,
            tail_minus: minus.bound,
        })
    }

    /// `sum_{lambda on the sqrt(rho) circle} Var[x_2(Phi) pi_lambda (A - lambda I)^l L] u`;
    /// complex variances are `E|X - EX|^2`.
    pub fn boundary_noise(&self, spec: &CharacteristicSpec, l: usize) -> f64 {
        let sd = self.sd;
        let x2 = self.x_vector(spec, 2);
        let x2c = DVector::from_iterator(sd.dim, x2.iter().map(|&v| Complex64::new(v, 0.0)));
        let ac = sd.a_complex();
        let mut total = 0.0;
        for comp in sd.components(SpectralClass::On) {
            let shift = &ac - CMat::identity(sd.dim, sd.dim) * comp.lambda;
            let mut m = comp.pi.clone();
            for _ in 0..l {
                m *= &shift;
            }
            let y = m.tr_mul(&x2c);
            total += complex_column_variance(sd, self.law, &y);
        }
        total
    }

    /// `sigma_l^2(Phi) = rho^{-(l+1)} / ((2l+1) (l!)^2) * boundary_noise`.
    ///
    /// The innovation of generation `m` enters `Z_n` through
    /// `A^{n-m}` applied to children of generation `m - 1`, so each
    /// generation contributes `rho^{m-1}` individuals times
    /// `|lambda|^{-2m}`; summing gives the extra `1 / rho`.
    pub fn sigma_l_sq(&self, spec: &CharacteristicSpec, l: usize) -> f64 {
        let fact: f64 = (1..=l).map(|t| t as f64).product();
        let total = self.boundary_noise(spec, l);
        self.sd.rho.powi(-(l as i32 + 1)) / ((2 * l + 1) as f64 * fact * fact) * total
    }

    /// Scale used to decide whether a variance constant vanishes.
    fn variance_scale(&self, spec: &CharacteristicSpec) -> f64 {
        let c = mean_row(self.sd, spec);
        let cov: f64 = (0..self.sd.dim)
            .map(|i| {
                let m = crate::model::covariance(self.law, i);
                self.sd.u[i] * m.trace()
            })
            .sum();
        (1.0 + c.norm_squared()) * (1.0 + cov)
    }
}

struct PsiRows {
    c: DVector<f64>,
    k_pos_const: DVector<f64>,
    x: f64,
}

struct SeriesSide {
    ratio: f64,
    sum: f64,
    recent: [f64; 3],
    count: usize,
    bound: f64,
}

impl SeriesSide {
    fn new(ratio: f64) -> Self {
        SeriesSide {
            ratio,
            sum: 0.0,
            recent: [0.0; 3],
            count: 0,
            bound: f64::INFINITY,
        }
    }

    /// Adds a term; `Ok(true)` once the tail bound is small enough.
    fn push(&mut self, t: f64, eps: f64) -> Result<bool, LimitsError> {
        self.sum += t;
        self.recent[self.count % 3] = t;
        self.count += 1;
        // the square root absorbs polynomial factors from Jordan blocks
        let q = self.ratio.sqrt();
        let last = self.recent.iter().cloned().fold(0.0, f64::max);
        self.bound = last * q / (1.0 - q);
        if self.count >= 4 && self.bound <= eps * self.sum.abs().max(f64::MIN_POSITIVE) {
            return Ok(true);
        }
        if self.count >= 4 && self.sum == 0.0 && last == 0.0 && self.count >= 16 {
            self.bound = 0.0;
            return Ok(true);
        }
        if self.count > MAX_SERIES_TERMS {
            return Err(LimitsError::TailNotConvergent(self.ratio));
        }
        Ok(false)
    }
}

/// Value and truncation diagnostics of `sigma^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SigmaSq {
    pub value: f64,
    pub k_min: i64,
    pub k_max: i64,
    pub tail_plus: f64,
    pub tail_minus: f64,
}

/// `sum_i u_i E|y (L^(i) - A e_i)|^2` for a complex row `y`.
fn complex_column_variance(sd: &SpectralData, law: &ReplacementLaw, y: &DVector<Complex64>) -> f64 {
    (0..sd.dim)
        .map(|i| {
            let var: f64 = law
                .column(i)
                .iter()
                .map(|o| {
                    let z: Complex64 = (0..sd.dim)
                        .map(|t| y[t] * (o.offspring[t] as f64 - sd.a[(t, i)]))
                        .sum();
                    o.prob * z.norm_sqr()
                })
                .sum();
            sd.u[i] * var
        })
        .sum()
}

/// Largest `l` with `sigma_l^2 > 0`, or none (the `-1/2` convention).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EllStar {
    Index(usize),
    None,
}

impl EllStar {
    /// Exponent `l + 1/2` of `log_rho n` in the CLT scale; zero without a
    /// positive `sigma_l`.
    pub fn log_exponent(self) -> f64 {
        match self {
            EllStar::Index(l) => l as f64 + 0.5,
            EllStar::None => 0.0,
        }
    }
}

impl Serialize for EllStar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EllStar::Index(l) => s.serialize_u64(*l as u64),
            EllStar::None => s.serialize_f64(-0.5),
        }
    }
}

/// Variance constants of one characteristic family over `x` in `[0, 1)`.
#[derive(Clone, Debug, Serialize)]
pub struct VarianceProfile {
    pub a: f64,
    pub b: f64,
    pub j: usize,
    pub x_grid: Vec<f64>,
    pub sigma_l: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub ell_star: EllStar,
    /// The largest positive `l` agrees at every grid point.
    pub ell_star_consistent: bool,
    /// Coefficients (increasing degree) of the cubic `y -> Var[G(y)]` on
    /// `[0, 1)`.
    pub variance_poly: [f64; 4],
    /// Largest relative gap between the cubic and direct evaluation on the
    /// grid.
    pub poly_check: f64,
    pub truncation: Vec<SigmaSq>,
}

fn cubic_through(nodes: &[f64; 4], values: &[f64; 4]) -> [f64; 4] {
    let m = DMatrix::from_fn(4, 4, |r, c| nodes[r].powi(c as i32));
    let v = DVector::from_column_slice(values);
    let sol = m.lu().solve(&v).expect("distinct nodes");
    [sol[0], sol[1], sol[2], sol[3]]
}

fn eval_cubic(p: &[f64; 4], y: f64) -> f64 {
    ((p[3] * y + p[2]) * y + p[1]) * y + p[0]
}

impl<'a> LimitContext<'a> {
    /// Profile of `a Phi^t + b Phi^j` on the uniform `grid`-point grid.
    pub fn profile(
        &self,
        a: f64,
        b: f64,
        j: usize,
        grid: usize,
    ) -> Result<VarianceProfile, LimitsError> {
        let base = CharacteristicSpec { a, b, j, x: 0.0 };
        let x_grid: Vec<f64> = (0..grid).map(|k| k as f64 / grid as f64).collect();
        let scale = self.variance_scale(&base);
        let dim = self.sd.dim;
        let sigma_l: Vec<Vec<f64>> = (0..dim)
            .map(|l| {
                x_grid
                    .iter()
                    .map(|&x| self.sigma_l_sq(&base.at(x), l))
                    .collect()
            })
            .collect();
        let mut truncation = Vec::with_capacity(grid);
        let mut sigma = Vec::with_capacity(grid);
        for &x in &x_grid {
            let s = self.sigma_sq(&base.at(x), EPS_TAIL)?;
            sigma.push(s.value);
            truncation.push(s);
        }
        let positive = |v: f64| v > VARIANCE_TOL * scale;
        let top_at = |g: usize| (0..dim).rev().find(|&l| positive(sigma_l[l][g]));
        let tops: Vec<Option<usize>> = (0..grid).map(top_at).collect();
        let ell_star = match tops.iter().flatten().max() {
            Some(&l) => EllStar::Index(l),
            None => EllStar::None,
        };
        let ell_star_consistent = tops.windows(2).all(|w| w[0] == w[1]);
        let nodes = [0.0, 0.25, 0.5, 0.75];
        let direct = |y: f64| -> Result<f64, LimitsError> {
            Ok(match ell_star {
                EllStar::Index(l) => self.sigma_l_sq(&base.at(y), l),
                EllStar::None => self.sigma_sq(&base.at(y), EPS_TAIL)?.value,
            })
        };
        let mut vals = [0.0; 4];
        for (v, &y) in vals.iter_mut().zip(&nodes) {
            *v = direct(y)?;
        }
        let variance_poly = cubic_through(&nodes, &vals);
        let mut poly_check: f64 = 0.0;
        for (g, &x) in x_grid.iter().enumerate() {
            let d = match ell_star {
                EllStar::Index(l) => sigma_l[l][g],
                EllStar::None => sigma[g],
            };
            let gap = (eval_cubic(&variance_poly, x) - d).abs() / d.abs().max(f64::MIN_POSITIVE);
            poly_check = poly_check.max(gap);
        }
        Ok(VarianceProfile {
            a,
            b,
            j,
            x_grid,
            sigma_l,
            sigma,
            ell_star,
            ell_star_consistent,
            variance_poly,
            poly_check,
            truncation,
        })
    }

    /// Profile of `Phi^j - rho u_j Phi^t`, the characteristic behind
    /// `B_j(n) - rho u_j n`.
    pub fn urn_profile(&self, j: usize) -> Result<VarianceProfile, LimitsError> {
        self.profile(-self.sd.rho * self.sd.u[j], 1.0, j, GRID_POINTS)
    }
}

/// `l_lambda(x) = (1 + (lambda - 1){x}) lambda^{-{x}}`.
pub fn l_lambda(lambda: Complex64, x: f64) -> Complex64 {
    let f = x - x.floor();
    (Complex64::new(1.0, 0.0) + (lambda - 1.0) * f) * lambda.powf(-f)
}

/// `h(x) = floor(x) + (rho^{{x}} - 1) / (rho - 1)`.
pub fn h(rho: f64, x: f64) -> f64 {
    let n = x.floor();
    n + (rho.powf(x - n) - 1.0) / (rho - 1.0)
}

/// `h^{-1}(x) = floor(x) + log_rho(1 + (rho - 1){x})`.
pub fn h_inv(rho: f64, x: f64) -> f64 {
    let n = x.floor();
    n + (1.0 + (rho - 1.0) * (x - n)).ln() / rho.ln()
}

/// `log_rho lambda` on the principal branch.
pub fn log_rho(rho: f64, lambda: Complex64) -> Complex64 {
    lambda.ln() / rho.ln()
}

/// `f_lambda(x) = l_lambda(h(x)) / l_rho(h(x))^{log_rho lambda}`.
pub fn f_lambda(rho: f64, lambda: Complex64, x: f64) -> Complex64 {
    let y = h(rho, x);
    let lr = l_lambda(Complex64::new(rho, 0.0), y);
    l_lambda(lambda, y) / lr.powc(log_rho(rho, lambda))
}

/// `T_n = log_rho(n (rho - 1) / W)`.
pub fn t_n(rho: f64, n: f64, w: f64) -> f64 {
    (n * (rho - 1.0) / w).ln() / rho.ln()
}

/// The periodic scale of the urn fluctuations and the time change `h`.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingFunctions {
    pub rho: f64,
    pub ell_star: EllStar,
    pub variance_poly: [f64; 4],
    /// Eigenvalues of maximal sub-dominant modulus.
    pub gamma: Vec<[f64; 2]>,
}

impl ScalingFunctions {
    pub fn new(sd: &SpectralData, profile: &VarianceProfile) -> Result<Self, LimitsError> {
        let fine = (0..PLOT_POINTS).map(|k| k as f64 / PLOT_POINTS as f64);
        for y in profile.x_grid.iter().copied().chain(fine) {
            if eval_cubic(&profile.variance_poly, y) <= 0.0 {
                return Err(LimitsError::DegenerateVariance(y));
            }
        }
        Ok(ScalingFunctions {
            rho: sd.rho,
            ell_star: profile.ell_star,
            variance_poly: profile.variance_poly,
            gamma: sd
                .gamma_set
                .iter()
                .map(|&k| [sd.eigs[k].lambda.re, sd.eigs[k].lambda.im])
                .collect(),
        })
    }

    pub fn l(&self, lambda: Complex64, x: f64) -> Complex64 {
        l_lambda(lambda, x)
    }

    pub fn h(&self, x: f64) -> f64 {
        h(self.rho, x)
    }

    pub fn h_inv(&self, x: f64) -> f64 {
        h_inv(self.rho, x)
    }

    pub fn f(&self, lambda: Complex64, x: f64) -> Complex64 {
        f_lambda(self.rho, lambda, x)
    }

    /// `Var[G(y)] = rho^{floor y} V({y})`.
    pub fn gaussian_variance(&self, y: f64) -> f64 {
        let n = y.floor();
        self.rho.powf(n) * eval_cubic(&self.variance_poly, y - n)
    }

    /// `Uppsi(x) = ((rho - 1) rho^{-{x}} Var[G(h({x}))])^{1/2}`.
    pub fn uppsi(&self, x: f64) -> f64 {
        let f = x - x.floor();
        ((self.rho - 1.0) * self.rho.powf(-f) * self.gaussian_variance(h(self.rho, f))).sqrt()
    }

    /// `sqrt(n) (log_rho n)^{l + 1/2} Uppsi(t)`.
    pub fn clt_scale(&self, n: f64, t: f64) -> f64 {
        let e = self.ell_star.log_exponent();
        let log_n = n.ln() / self.rho.ln();
        n.sqrt() * log_n.powf(e) * self.uppsi(t)
    }

    /// Plot data over one period: `x, Uppsi, Re f, Im f` per `Gamma` entry.
    pub fn plot_csv(&self, points: usize) -> String {
        let mut s = String::from("x,uppsi");
        for (k, _) in self.gamma.iter().enumerate() {
            s.push_str(&format!(",f{k}_re,f{k}_im"));
        }
        s.push('\n');
        for p in 0..points {
            let x = p as f64 / points as f64;
            s.push_str(&format!("{x},{}", self.uppsi(x)));
            for g in &self.gamma {
                let f = self.f(Complex64::new(g[0], g[1]), x);
                s.push_str(&format!(",{},{}", f.re, f.im));
            }
            s.push('\n');
        }
        s
    }
}

/// Nondegeneracy conditions behind the Gaussian limits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Hypotheses {
    pub wj_ulambda_nonzero: bool,
    #[serde(rename = "var_vlambda_L_positive")]
    pub var_vlambda_l_positive: bool,
    pub prop44_condition: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub case: &'static str,
    pub gamma_simple: bool,
    pub hypotheses: Hypotheses,
}

pub fn case_name(r: Regime) -> &'static str {
    match r {
        Regime::Above => "case_i_above",
        Regime::Boundary => "case_ii_boundary",
        Regime::Below => "case_iii_below",
    }
}

fn is_nonzero(x: f64, scale: f64) -> bool {
    x.abs() > 1e-9 * scale.max(1.0)
}

/// Trichotomy case and its hypotheses for the observed type `j`.
pub fn regime(sd: &SpectralData, law: &ReplacementLaw, j: usize) -> RegimeReport {
    let r = sd.regime();
    let class = match r {
        Regime::Above => SpectralClass::Above,
        Regime::Boundary => SpectralClass::On,
        Regime::Below => SpectralClass::Below,
    };
    let w = w_vector(sd, j);
    let wc = DVector::from_iterator(sd.dim, w.iter().map(|&x| Complex64::new(x, 0.0)));
    let scale = sd.rho;
    let relevant: Vec<&EigenComponent> = sd
        .eigs
        .iter()
        .enumerate()
        .filter(|&(k, e)| k != sd.perron_index && e.class == class)
        .map(|(_, e)| e)
        .collect();
    let mut wj_ulambda_nonzero = false;
    let mut var_vlambda_l_positive = false;
    for e in &relevant {
        // rows of pi_lambda span the left generalized eigenspace
        let (w_hits, lefts): (bool, Vec<DVector<Complex64>>) = match (&e.right, &e.left) {
            (Some(ur), Some(vl)) => {
                let wu: Complex64 = wc.iter().zip(ur.iter()).map(|(a, b)| a * b).sum();
                (is_nonzero(wu.norm(), scale), vec![vl.clone()])
            }
            _ => {
                let wp = e.pi.tr_mul(&wc);
                (
                    is_nonzero(wp.norm(), scale),
                    (0..sd.dim).map(|r| e.pi.row(r).transpose()).collect(),
                )
            }
        };
        if w_hits {
            wj_ulambda_nonzero = true;
            for vl in &lefts {
                for i in 0..sd.dim {
                    if is_nonzero(single_column_variance(sd, law, vl, i), scale) {
                        var_vlambda_l_positive = true;
                    }
                }
            }
        }
    }
    let ac = sd.a_complex();
    let mut prop44 = 0.0;
    for e in &sd.eigs {
        let mut row = e.pi.tr_mul(&wc);
        let shift = &ac - CMat::identity(sd.dim, sd.dim) * e.lambda;
        for _ in 0..sd.dim {
            prop44 += (0..sd.dim)
                .map(|i| single_column_variance(sd, law, &row, i))
                .sum::<f64>();
            row = shift.tr_mul(&row);
        }
    }
    RegimeReport {
        regime: r,
        case: case_name(r),
        gamma_simple: sd.gamma_set.iter().all(|&k| sd.eigs[k].simple),
        hypotheses: Hypotheses {
            wj_ulambda_nonzero,
            var_vlambda_l_positive,
            prop44_condition: is_nonzero(prop44, scale),
        },
    }
}

/// `E|y (L^(i) - A e_i)|^2`.
fn single_column_variance(
    sd: &SpectralData,
    law: &ReplacementLaw,
    y: &DVector<Complex64>,
    i: usize,
) -> f64 {
    law.column(i)
        .iter()
        .map(|o| {
            let z: Complex64 = (0..sd.dim)
                .map(|t| y[t] * (o.offspring[t] as f64 - sd.a[(t, i)]))
                .sum();
            o.prob * z.norm_sqr()
        })
        .sum()
}

/// `W_lambda` estimated by `lambda^{-D} v^lambda . Z_D` for the simple
/// eigenvalue at index `k`.
pub fn w_lambda_estimate(
    sd: &SpectralData,
    k: usize,
    depth: usize,
    z: &[u64],
) -> Option<Complex64> {
    let e = &sd.eigs[k];
    let left = e.left.as_ref()?;
    let dot: Complex64 = left.iter().zip(z).map(|(a, &b)| a * b as f64).sum();
    Some(dot * e.lambda.powi(-(depth as i32)))
}

/// `X_lambda = (lambda u_j^lambda - rho u_j sum_i u_i^lambda)
/// ((rho - 1) / W)^{log_rho lambda} W_lambda / (lambda - 1)`.
pub fn x_lambda(
    sd: &SpectralData,
    k: usize,
    j: usize,
    w: f64,
    w_lambda: Complex64,
) -> Option<Complex64> {
    let e = &sd.eigs[k];
    let ur = e.right.as_ref()?;
    let lambda = e.lambda;
    let sum_u: Complex64 = ur.iter().sum();
    let coef = lambda * ur[j] - sum_u * (sd.rho * sd.u[j]);
    let scale = Complex64::new((sd.rho - 1.0) / w, 0.0).powc(log_rho(sd.rho, lambda));
    Some(coef * scale * w_lambda / (lambda - 1.0))
}

/// `sum_{lambda in Gamma} n^{log_rho lambda} f_lambda(T_n) X_lambda`, the
/// predicted `B_j(n) - rho u_j n` above `sqrt(rho)`. `w_lambdas[k]` is the
/// estimate for `sd.gamma_set[k]`.
pub fn case_i_expansion(
    sd: &SpectralData,
    j: usize,
    n: f64,
    w_hat: f64,
    w_lambdas: &[Complex64],
) -> Result<f64, LimitsError> {
    if sd.regime() != Regime::Above {
        return Err(LimitsError::WrongRegime(sd.regime()));
    }
    let t = t_n(sd.rho, n, w_hat);
    let mut total = Complex64::new(0.0, 0.0);
    for (&k, &wl) in sd.gamma_set.iter().zip(w_lambdas) {
        let lambda = sd.eigs[k].lambda;
        let x = x_lambda(sd, k, j, w_hat, wl).ok_or(LimitsError::GammaNotSimple)?;
        let growth = Complex64::new(n, 0.0).powc(log_rho(sd.rho, lambda));
        total += growth * f_lambda(sd.rho, lambda, t) * x;
    }
    // conjugate pairs cancel the imaginary parts
    Ok(total.re)
}

/// Profile JSON document.
#[derive(Serialize)]
pub struct ProfileReport<'p> {
    pub x_grid: &'p [f64],
    pub sigma_l: &'p [Vec<f64>],
    pub sigma: &'p [f64],
    pub ell_star: EllStar,
    pub regime: Regime,
    pub hypotheses: Hypotheses,
    pub truncation: &'p [SigmaSq],
}

impl VarianceProfile {
    pub fn report<'p>(&'p self, reg: &RegimeReport) -> ProfileReport<'p> {
        ProfileReport {
            x_grid: &self.x_grid,
            sigma_l: &self.sigma_l,
            sigma: &self.sigma,
            ell_star: self.ell_star,
            regime: reg.regime,
            hypotheses: reg.hypotheses,
            truncation: &self.truncation,
        }
    }
}
