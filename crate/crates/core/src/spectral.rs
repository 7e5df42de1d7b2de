//! Spectral analysis of the mean replacement matrix.
//!
//! Eigenvalues come from the exact characteristic polynomial (see
//! [`crate::poly`]); spectral projections are evaluated as Hermite
//! interpolation polynomials in `A`, which covers defective matrices without
//! ever forming an eigenvector basis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::poly;

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Matrix-identity tolerance.
pub const EPS_SPEC: f64 = 1e-9;
/// Relative clustering tolerance (multiplied by `max(1, ||A||)`).
pub const EPS_CLUSTER_REL: f64 = 1e-8;
/// Relative tolerance for the `|lambda| = sqrt(rho)` test (multiplied by `sqrt(rho)`).
pub const EPS_CLASS_REL: f64 = 1e-9;
/// Window for `||lambda|^2 - rho|` inside which the boundary class can be forced.
pub const BOUNDARY_FORCE_WINDOW: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix must be square and non-empty")]
    Shape,
    #[error("matrix entry ({0}, {1}) is negative or not finite")]
    InvalidEntry(usize, usize),
    #[error("spectral radius is zero")]
    Degenerate,
    #[error("eigenvalues {a} and {b} are {dist:e} apart, inside the ambiguity window")]
    ClusterAmbiguity {
        a: Complex64,
        b: Complex64,
        dist: f64,
    },
    #[error("|{lambda}| is {gap:e} away from sqrt(rho); class is ambiguous")]
    OnSqrtRhoAmbiguity { lambda: Complex64, gap: f64 },
    #[error("matrix {0} is singular")]
    Singular(&'static str),
}

/// Position of an eigenvalue relative to the `sqrt(rho)` circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Perron,
    AboveSqrtRho,
    OnSqrtRho,
    BelowSqrtRho,
}

/// Which of the three moduli classes a label contributes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpectralClass {
    Above = 1,
    On = 2,
    Below = 3,
}

#[derive(Clone, Debug)]
pub struct EigenComponent {
    pub lambda: Complex64,
    pub multiplicity: usize,
    pub pi: CMat,
    pub nilpotent: CMat,
    /// Nilpotency index `d`: `N^d != 0`, `N^(d+1) = 0`.
    pub index: usize,
    pub class_label: ClassLabel,
    /// Moduli class; for the Perron root this is decided by `|rho|` too.
    pub class: SpectralClass,
    pub simple: bool,
    /// Right eigenvector, present iff simple.
    pub right: Option<CVec>,
    /// Left eigenvector (stored as a column), normalized `left^T right = 1`.
    pub left: Option<CVec>,
}

#[derive(Clone, Debug)]
pub struct Perron {
    pub rho: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// `false` raises the not-primitive warning.
    pub primitive: bool,
}

#[derive(Clone, Debug)]
pub struct SpectralData {
    pub dim: usize,
    pub a: RMat,
    pub rho: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub primitive: bool,
    pub eigs: Vec<EigenComponent>,
    /// Index of the Perron root in `eigs`.
    pub perron_index: usize,
    pub gamma: f64,
    /// Indices into `eigs` attaining `gamma`.
    pub gamma_set: Vec<usize>,
    pub pi1: CMat,
    pub pi2: CMat,
    pub pi3: CMat,
    pub a1: CMat,
    pub a2: CMat,
    pub a1_inv: CMat,
    pub a2_inv: CMat,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SpectralOptions {
    /// Force the boundary class when `||lambda|^2 - rho| < 1e-6`.
    pub assert_on_boundary: bool,
}

#[derive(Clone, Debug)]
pub struct Classification {
    pub sigma1: Vec<Complex64>,
    pub sigma2: Vec<Complex64>,
    pub sigma3: Vec<Complex64>,
    pub gamma: f64,
    pub gamma_set: Vec<Complex64>,
    pub all_gamma_simple: bool,
}

/// Regime of the second-order behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    #[serde(rename = "above")]
    Above,
    #[serde(rename = "boundary")]
    Boundary,
    #[serde(rename = "below")]
    Below,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Above => "above",
            Regime::Boundary => "boundary",
            Regime::Below => "below",
        })
    }
}

fn validate(a: &RMat) -> Result<(), SpectralError> {
    if a.nrows() == 0 || a.nrows() != a.ncols() {
        return Err(SpectralError::Shape);
    }
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let x = a[(i, j)];
            if !x.is_finite() || x < 0.0 {
                return Err(SpectralError::InvalidEntry(i, j));
            }
        }
    }
    Ok(())
}

fn frobenius(a: &RMat) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cnorm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn to_complex(a: &RMat) -> CMat {
    a.map(|x| Complex64::new(x, 0.0))
}

/// `true` when some power `A^m`, `m <= J^2 - 2J + 2`, is entrywise positive.
pub fn is_primitive(a: &RMat) -> bool {
    let n = a.nrows();
    let pattern: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)] > 0.0).collect())
        .collect();
    let bound = n * n + 2 - 2 * n;
    let mut power = pattern.clone();
    for _ in 0..bound {
        if power.iter().all(|row| row.iter().all(|&x| x)) {
            return true;
        }
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for k in 0..n {
                if power[i][k] {
                    for j in 0..n {
                        next[i][j] |= pattern[k][j];
                    }
                }
            }
        }
        power = next;
    }
    power.iter().all(|row| row.iter().all(|&x| x))
}

/// Distinct eigenvalues with algebraic multiplicities.
pub fn eigenvalues(a: &RMat) -> Result<Vec<(Complex64, usize)>, SpectralError> {
    validate(a)?;
    let n = a.nrows();
    let exact: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| poly::rational_from_f64(a[(i, j)]).unwrap_or_else(BigRational::zero))
                .collect()
        })
        .collect();
    let cp = poly::char_poly(&exact);
    let scale = frobenius(a).max(1.0);
    let mut found: Vec<(Complex64, usize)> = Vec::new();
    for (factor, mult) in poly::squarefree(&cp) {
        for z in poly::roots(&factor.to_f64()) {
            found.push((z, mult));
        }
    }
    // A real polynomial: snap near-real roots and pair conjugates exactly.
    for (z, _) in found.iter_mut() {
        if z.im.abs() <= 1e-12 * (1.0 + z.norm()) {
            z.im = 0.0;
        }
    }
    let mut paired = vec![false; found.len()];
    for i in 0..found.len() {
        if paired[i] || found[i].0.im == 0.0 {
            continue;
        }
        let target = found[i].0.conj();
        let partner = (0..found.len())
            .filter(|&k| k != i && !paired[k] && found[k].1 == found[i].1)
            .min_by(|&p, &q| {
                (found[p].0 - target)
                    .norm()
                    .total_cmp(&(found[q].0 - target).norm())
            });
        if let Some(k) = partner {
            let avg = (found[i].0 + found[k].0.conj()) * 0.5;
            let avg = if avg.im < 0.0 { avg.conj() } else { avg };
            found[i].0 = avg;
            found[k].0 = avg.conj();
            paired[i] = true;
            paired[k] = true;
        }
    }

    // Merge clusters closer than eps_cluster; reject those in the ambiguity window.
    let eps_cluster = EPS_CLUSTER_REL * scale;
    let mut merged: Vec<(Complex64, usize)> = Vec::new();
    for (z, m) in found {
        if let Some(slot) = merged
            .iter_mut()
            .find(|(w, _)| (*w - z).norm() < eps_cluster)
        {
            let total = slot.1 + m;
            slot.0 = (slot.0 * slot.1 as f64 + z * m as f64) / total as f64;
            slot.1 = total;
        } else {
            merged.push((z, m));
        }
    }
    for i in 0..merged.len() {
        for k in i + 1..merged.len() {
            let dist = (merged[i].0 - merged[k].0).norm();
            if dist < 10.0 * eps_cluster {
                return Err(SpectralError::ClusterAmbiguity {
                    a: merged[i].0,
                    b: merged[k].0,
                    dist,
                });
            }
        }
    }
    merged.sort_by(|x, y| {
        y.0.norm()
            .total_cmp(&x.0.norm())
            .then(y.0.re.total_cmp(&x.0.re))
            .then(y.0.im.total_cmp(&x.0.im))
    });
    Ok(merged)
}

/// `p(A)` for `p(z) = prod_k (z - mu_k)^{m_k}`.
fn product_poly(a: &CMat, factors: &[(Complex64, usize)]) -> CMat {
    let n = a.nrows();
    let mut out = CMat::identity(n, n);
    for &(mu, m) in factors {
        let shifted = a - CMat::identity(n, n) * mu;
        for _ in 0..m {
            out = &out * &shifted;
        }
    }
    out
}

/// Spectral projection onto the generalized eigenspace of `eigs[target]` via the
/// Hermite interpolation polynomial that is 1 (with vanishing derivatives up to
/// the multiplicity) at the target and 0 to full multiplicity elsewhere.
fn hermite_projection(a: &CMat, eigs: &[(Complex64, usize)], target: usize) -> CMat {
    let n = a.nrows();
    let (lambda, m) = eigs[target];
    let others: Vec<(Complex64, usize)> = eigs
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != target)
        .map(|(_, &e)| e)
        .collect();
    // Taylor coefficients of g(z) = prod (z - mu)^m at z = lambda, truncated to m terms.
    let mut g = vec![Complex64::zero(); m];
    g[0] = Complex64::new(1.0, 0.0);
    for &(mu, mult) in &others {
        let shift = lambda - mu;
        for _ in 0..mult {
            // multiply by (s + shift)
            for k in (0..m).rev() {
                let lower = if k > 0 { g[k - 1] } else { Complex64::zero() };
                g[k] = g[k] * shift + lower;
            }
        }
    }
    // Inverse series of g.
    let mut h = vec![Complex64::zero(); m];
    h[0] = Complex64::new(1.0, 0.0) / g[0];
    for k in 1..m {
        let s: Complex64 = (1..=k).map(|i| g[i] * h[k - i]).sum();
        h[k] = -s * h[0];
    }
    let shifted = a - CMat::identity(n, n) * lambda;
    let mut q = CMat::zeros(n, n);
    let mut power = CMat::identity(n, n);
    for coeff in h {
        q += &power * coeff;
        power = &power * &shifted;
    }
    product_poly(a, &others) * q
}

fn classify_modulus(
    lambda: Complex64,
    rho: f64,
    opts: SpectralOptions,
) -> Result<SpectralClass, SpectralError> {
    let root = rho.sqrt();
    let modulus = lambda.norm();
    let gap = modulus - root;
    if gap.abs() < EPS_CLASS_REL * root {
        return Ok(SpectralClass::On);
    }
    let sq_gap = (modulus * modulus - rho).abs();
    if sq_gap < BOUNDARY_FORCE_WINDOW {
        if opts.assert_on_boundary {
            return Ok(SpectralClass::On);
        }
        return Err(SpectralError::OnSqrtRhoAmbiguity { lambda, gap });
    }
    Ok(if gap > 0.0 {
        SpectralClass::Above
    } else {
        SpectralClass::Below
    })
}

fn nilpotency_index(nil: &CMat, scale: f64) -> usize {
    let mut power = nil.clone();
    let mut d = 0;
    let n = nil.nrows();
    while d <= n {
        let tol = EPS_SPEC * 10.0 * scale.powi(d as i32 + 1);
        if power.iter().all(|z| z.norm() <= tol) {
            return d;
        }
        power = &power * nil;
        d += 1;
    }
    d
}

/// Rank-one factorization `pi = right * left^T` of a simple projection.
fn rank_one_factors(pi: &CMat) -> (CVec, CVec) {
    let n = pi.nrows();
    let col = (0..n)
        .max_by(|&p, &q| pi.column(p).norm().total_cmp(&pi.column(q).norm()))
        .unwrap_or(0);
    let right: CVec = pi.column(col).into_owned();
    let norm = right.norm();
    let right = right / Complex64::new(norm, 0.0);
    let row = (0..n)
        .max_by(|&p, &q| right[p].norm().total_cmp(&right[q].norm()))
        .unwrap_or(0);
    let left: CVec = pi.row(row).transpose() / right[row];
    (right, left)
}

/// Perron root and eigenvectors, with `sum(u) = 1` and `v . u = 1`.
pub fn perron(a: &RMat) -> Result<Perron, SpectralError> {
    let eigs = eigenvalues(a)?;
    perron_from(a, &eigs)
}

fn perron_from(a: &RMat, eigs: &[(Complex64, usize)]) -> Result<Perron, SpectralError> {
    let n = a.nrows();
    let idx = perron_index(eigs)?;
    let rho = eigs[idx].0.re;
    let pi = hermite_projection(&to_complex(a), eigs, idx);
    let ones = DVector::from_element(n, 1.0);
    let pr = pi.map(|z| z.re);
    let mut u = &pr * &ones;
    let su: f64 = u.sum();
    u /= su;
    let mut v = pr.transpose() * &ones;
    let vu = v.dot(&u);
    v /= vu;
    // Clean rounding-level negatives in the nonnegative eigenvectors.
    for x in u.iter_mut().chain(v.iter_mut()) {
        if x.abs() < 1e-14 {
            *x = 0.0;
        }
    }
    Ok(Perron {
        rho,
        u,
        v,
        primitive: is_primitive(a),
    })
}

fn perron_index(eigs: &[(Complex64, usize)]) -> Result<usize, SpectralError> {
    let radius = eigs.iter().map(|e| e.0.norm()).fold(0.0, f64::max);
    if radius == 0.0 {
        return Err(SpectralError::Degenerate);
    }
    eigs.iter()
        .enumerate()
        .filter(|(_, e)| e.0.im == 0.0 && e.0.re > 0.0)
        .max_by(|x, y| x.1 .0.re.total_cmp(&y.1 .0.re))
        .map(|(i, _)| i)
        .ok_or(SpectralError::Degenerate)
}

pub fn decompose(a: &RMat) -> Result<SpectralData, SpectralError> {
    decompose_with(a, SpectralOptions::default())
}

pub fn decompose_with(a: &RMat, opts: SpectralOptions) -> Result<SpectralData, SpectralError> {
    let eigs = eigenvalues(a)?;
    let n = a.nrows();
    let ac = to_complex(a);
    let scale = frobenius(a).max(1.0);
    let perron = perron_from(a, &eigs)?;
    let perron_index = perron_index(&eigs)?;
    let rho = perron.rho;

    let mut comps = Vec::with_capacity(eigs.len());
    for (k, &(lambda, multiplicity)) in eigs.iter().enumerate() {
        let mut pi = hermite_projection(&ac, &eigs, k);
        if lambda.im == 0.0 {
            pi = pi.map(|z| Complex64::new(z.re, 0.0));
        }
        let nilpotent = (&ac - CMat::identity(n, n) * lambda) * &pi;
        let index = nilpotency_index(&nilpotent, scale);
        let class = classify_modulus(lambda, rho, opts)?;
        let class_label = if k == perron_index {
            ClassLabel::Perron
        } else {
            match class {
                SpectralClass::Above => ClassLabel::AboveSqrtRho,
                SpectralClass::On => ClassLabel::OnSqrtRho,
                SpectralClass::Below => ClassLabel::BelowSqrtRho,
            }
        };
        let simple = multiplicity == 1;
        let (right, left) = if simple {
            let (r, l) = rank_one_factors(&pi);
            (Some(r), Some(l))
        } else {
            (None, None)
        };
        comps.push(EigenComponent {
            lambda,
            multiplicity,
            pi,
            nilpotent,
            index,
            class_label,
            class,
            simple,
            right,
            left,
        });
    }
    // The Perron component uses the real, normalized Perron vectors.
    {
        let p = &mut comps[perron_index];
        p.right = Some(perron.u.map(|x| Complex64::new(x, 0.0)));
        p.left = Some(perron.v.map(|x| Complex64::new(x, 0.0)));
    }

    let class_sum = |c: SpectralClass| {
        comps
            .iter()
            .filter(|e| e.class == c)
            .fold(CMat::zeros(n, n), |acc, e| acc + &e.pi)
    };
    let realify = |m: CMat| m.map(|z| Complex64::new(z.re, 0.0));
    let pi1 = realify(class_sum(SpectralClass::Above));
    let pi2 = realify(class_sum(SpectralClass::On));
    let pi3 = realify(class_sum(SpectralClass::Below));
    let id = CMat::identity(n, n);
    let a1 = &ac * &pi1 + (&id - &pi1);
    let a2 = &ac * &pi2 + (&id - &pi2);
    let a1_inv = a1
        .clone()
        .try_inverse()
        .ok_or(SpectralError::Singular("A1"))?;
    let a2_inv = a2
        .clone()
        .try_inverse()
        .ok_or(SpectralError::Singular("A2"))?;

    let gamma = comps
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != perron_index)
        .map(|(_, e)| e.lambda.norm())
        .fold(0.0, f64::max);
    let gamma_tol = EPS_CLASS_REL * rho.sqrt().max(1.0);
    let gamma_set = if comps.len() > 1 {
        comps
            .iter()
            .enumerate()
            .filter(|&(k, e)| k != perron_index && (e.lambda.norm() - gamma).abs() <= gamma_tol)
            .map(|(k, _)| k)
            .collect()
    } else {
        Vec::new()
    };

    Ok(SpectralData {
        dim: n,
        a: a.clone(),
        rho,
        u: perron.u,
        v: perron.v,
        primitive: perron.primitive,
        eigs: comps,
        perron_index,
        gamma,
        gamma_set,
        pi1,
        pi2,
        pi3,
        a1,
        a2,
        a1_inv,
        a2_inv,
    })
}

pub fn classify(sd: &SpectralData) -> Classification {
    let pick = |c: SpectralClass| -> Vec<Complex64> {
        sd.eigs
            .iter()
            .filter(|e| e.class == c)
            .map(|e| e.lambda)
            .collect()
    };
    Classification {
        sigma1: pick(SpectralClass::Above),
        sigma2: pick(SpectralClass::On),
        sigma3: pick(SpectralClass::Below),
        gamma: sd.gamma,
        gamma_set: sd.gamma_set.iter().map(|&k| sd.eigs[k].lambda).collect(),
        all_gamma_simple: sd.gamma_set.iter().all(|&k| sd.eigs[k].simple),
    }
}

impl SpectralData {
    /// Trichotomy case decided by the class of the sub-dominant modulus.
    pub fn regime(&self) -> Regime {
        match self.gamma_set.first().map(|&k| self.eigs[k].class) {
            Some(SpectralClass::Above) => Regime::Above,
            Some(SpectralClass::On) => Regime::Boundary,
            _ => Regime::Below,
        }
    }

    pub fn class_projection(&self, class: SpectralClass) -> &CMat {
        match class {
            SpectralClass::Above => &self.pi1,
            SpectralClass::On => &self.pi2,
            SpectralClass::Below => &self.pi3,
        }
    }

    pub fn a_complex(&self) -> CMat {
        to_complex(&self.a)
    }

    /// `sqrt(rho)` circle classes present.
    pub fn components(&self, class: SpectralClass) -> impl Iterator<Item = &EigenComponent> {
        self.eigs.iter().filter(move |e| e.class == class)
    }

    pub fn report(&self) -> SpectralReport {
        SpectralReport {
            rho: self.rho,
            u: self.u.iter().copied().collect(),
            v: self.v.iter().copied().collect(),
            primitive: self.primitive,
            eigenvalues: self
                .eigs
                .iter()
                .map(|e| EigenReport {
                    re: e.lambda.re,
                    im: e.lambda.im,
                    multiplicity: e.multiplicity,
                    d: e.index,
                    class: e.class_label,
                    simple: e.simple,
                })
                .collect(),
            gamma: self.gamma,
            gamma_set: self
                .gamma_set
                .iter()
                .map(|&k| [self.eigs[k].lambda.re, self.eigs[k].lambda.im])
                .collect(),
            regime: self.regime(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenReport {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
    pub d: usize,
    pub class: ClassLabel,
    pub simple: bool,
}

/// JSON spectral report.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub rho: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub primitive: bool,
    pub eigenvalues: Vec<EigenReport>,
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub gamma_set: Vec<[f64; 2]>,
    pub regime: Regime,
}
