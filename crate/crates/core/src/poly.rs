//! Exact rational polynomials and a complex root finder.
//!
//! The characteristic polynomial of a double-precision matrix is computed
//! exactly (every `f64` is a dyadic rational), split into square-free factors
//! so algebraic multiplicities are exact, and only the simple roots of each
//! factor are located numerically.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Dense polynomial over the rationals, coefficients in increasing degree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatPoly(Vec<BigRational>);

impl RatPoly {
    pub fn new(coeffs: Vec<BigRational>) -> Self {
        let mut p = RatPoly(coeffs);
        p.trim();
        p
    }

    pub fn one() -> Self {
        RatPoly(vec![BigRational::one()])
    }

    fn trim(&mut self) {
        while self.0.last().is_some_and(Zero::is_zero) {
            self.0.pop();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.0
    }

    fn lead(&self) -> &BigRational {
        self.0.last().expect("lead of zero polynomial")
    }

    pub fn monic(&self) -> Self {
        if self.is_zero() {
            return self.clone();
        }
        let l = self.lead().clone();
        RatPoly(self.0.iter().map(|c| c / &l).collect())
    }

    pub fn derivative(&self) -> Self {
        let coeffs = self
            .0
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| c * BigRational::from_integer(BigInt::from(i)))
            .collect();
        RatPoly::new(coeffs)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        let coeffs = (0..n)
            .map(|i| {
                let a = self.0.get(i).cloned().unwrap_or_else(BigRational::zero);
                let b = other.0.get(i).cloned().unwrap_or_else(BigRational::zero);
                a - b
            })
            .collect();
        RatPoly::new(coeffs)
    }

    /// Euclidean division: `self = q * divisor + r` with `deg r < deg divisor`.
    pub fn div_rem(&self, divisor: &Self) -> (Self, Self) {
        assert!(!divisor.is_zero(), "polynomial division by zero");
        let mut rem = self.0.clone();
        let dd = divisor.degree();
        if self.is_zero() || self.degree() < dd {
            return (RatPoly(Vec::new()), self.clone());
        }
        let mut quot = vec![BigRational::zero(); self.degree() - dd + 1];
        let lead = divisor.lead();
        for k in (0..quot.len()).rev() {
            let c = &rem[k + dd] / lead;
            if !c.is_zero() {
                for (i, dc) in divisor.0.iter().enumerate() {
                    rem[k + i] -= &c * dc;
                }
            }
            quot[k] = c;
        }
        rem.truncate(dd);
        (RatPoly::new(quot), RatPoly::new(rem))
    }

    /// Monic greatest common divisor.
    pub fn gcd(&self, other: &Self) -> Self {
        let mut a = self.clone();
        let mut b = other.clone();
        while !b.is_zero() {
            let (_, r) = a.div_rem(&b);
            a = b;
            b = r.monic();
        }
        a.monic()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0
            .iter()
            .map(|c| c.to_f64().unwrap_or(f64::NAN))
            .collect()
    }
}

/// Monic characteristic polynomial `det(zI - A)` by the Faddeev-LeVerrier
/// recursion, carried out in exact rational arithmetic.
pub fn char_poly(a: &[Vec<BigRational>]) -> RatPoly {
    let n = a.len();
    let mut coeffs = vec![BigRational::zero(); n + 1];
    coeffs[n] = BigRational::one();
    let mut m = vec![vec![BigRational::zero(); n]; n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I
        let mut next = vec![vec![BigRational::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = BigRational::zero();
                for l in 0..n {
                    if !a[i][l].is_zero() && !m[l][j].is_zero() {
                        s += &a[i][l] * &m[l][j];
                    }
                }
                if i == j {
                    s += &coeffs[n - k + 1];
                }
                next[i][j] = s;
            }
        }
        m = next;
        let mut tr = BigRational::zero();
        for i in 0..n {
            for l in 0..n {
                if !a[i][l].is_zero() && !m[l][i].is_zero() {
                    tr += &a[i][l] * &m[l][i];
                }
            }
        }
        coeffs[n - k] = -tr / BigRational::from_integer(BigInt::from(k));
    }
    RatPoly::new(coeffs)
}

/// Yun's square-free factorization: returns `(g_i, i)` with `p = c * prod g_i^i`
/// and every `g_i` monic, square-free and pairwise coprime. Factors of degree 0
/// are dropped.
pub fn squarefree(p: &RatPoly) -> Vec<(RatPoly, usize)> {
    let mut out = Vec::new();
    if p.degree() == 0 {
        return out;
    }
    let f = p.monic();
    let fp = f.derivative();
    let a0 = f.gcd(&fp);
    let mut b = f.div_rem(&a0).0;
    let c = fp.div_rem(&a0).0;
    let mut d = c.sub(&b.derivative());
    let mut i = 1;
    while b.degree() > 0 {
        let a = b.gcd(&d);
        let b_next = b.div_rem(&a).0;
        let c_next = d.div_rem(&a).0;
        d = c_next.sub(&b_next.derivative());
        if a.degree() > 0 {
            out.push((a, i));
        }
        b = b_next;
        i += 1;
    }
    out
}

fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::zero();
    let mut dp = Complex64::zero();
    for c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All complex roots of a polynomial with real coefficients (increasing
/// degree) by the Aberth-Ehrlich iteration followed by Newton polishing.
/// Intended for square-free inputs; multiple roots converge only linearly.
pub fn roots(coeffs: &[f64]) -> Vec<Complex64> {
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.last().is_some_and(|x| *x == 0.0) {
        c.pop();
    }
    let deg = c.len().saturating_sub(1);
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let c: Vec<Complex64> = c.iter().map(|x| Complex64::new(x / lead, 0.0)).collect();
    match deg {
        1 => return vec![-c[0]],
        2 => {
            let b = c[1];
            let disc = (b * b - c[0] * 4.0).sqrt();
            // numerically stable pair
            let q = if (b.conj() * disc).re >= 0.0 {
                -(b + disc) * 0.5
            } else {
                -(b - disc) * 0.5
            };
            let r1 = q;
            let r2 = if q.norm() > 0.0 {
                c[0] / q
            } else {
                Complex64::zero()
            };
            return vec![r1, r2];
        }
        _ => {}
    }

    // Cauchy bound for the initial circle.
    let radius = 1.0 + c[..deg].iter().map(|x| x.norm()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> = (0..deg)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / deg as f64 + 0.4;
            Complex64::from_polar(0.5 * radius, theta)
        })
        .collect();
    for _ in 0..1000 {
        let mut max_step: f64 = 0.0;
        for k in 0..deg {
            let (p, dp) = horner(&c, z[k]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulse: Complex64 = (0..deg)
                .filter(|&j| j != k)
                .map(|j| Complex64::one() / (z[k] - z[j]))
                .sum();
            let step = ratio / (Complex64::one() - ratio * repulse);
            if step.is_finite() {
                z[k] -= step;
                max_step = max_step.max(step.norm() / (1.0 + z[k].norm()));
            }
        }
        if max_step < 1e-16 {
            break;
        }
    }
    for zk in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = horner(&c, *zk);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            if step.is_finite() && step.norm() < 1e-6 * (1.0 + zk.norm()) {
                *zk -= step;
            }
        }
    }
    z
}

/// Exact conversion of a finite `f64` to a rational.
pub fn rational_from_f64(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(n))
    }

    fn poly(c: &[i64]) -> RatPoly {
        RatPoly::new(c.iter().map(|&x| r(x)).collect())
    }

    #[test]
    fn char_poly_of_three_type_matrix() {
        let a = vec![
            vec![r(1), r(0), r(2)],
            vec![r(0), r(2), r(1)],
            vec![r(1), r(1), r(1)],
        ];
        // z^3 - 4 z^2 + 2 z + 3
        assert_eq!(char_poly(&a), poly(&[3, 2, -4, 1]));
    }

    #[test]
    fn squarefree_splits_multiplicities() {
        // (z-1)^2 (z-2)^3 (z+3)
        let mut p = poly(&[1]);
        for f in [
            poly(&[-1, 1]),
            poly(&[-1, 1]),
            poly(&[-2, 1]),
            poly(&[-2, 1]),
            poly(&[-2, 1]),
            poly(&[3, 1]),
        ] {
            let mut c = vec![BigRational::zero(); p.degree() + 2];
            for (i, a) in p.coeffs().iter().enumerate() {
                for (j, b) in f.coeffs().iter().enumerate() {
                    c[i + j] += a * b;
                }
            }
            p = RatPoly::new(c);
        }
        let sf = squarefree(&p);
        assert_eq!(
            sf,
            vec![(poly(&[3, 1]), 1), (poly(&[-1, 1]), 2), (poly(&[-2, 1]), 3)]
        );
    }

    #[test]
    fn aberth_finds_complex_roots() {
        // (z^2 + 1)(z - 3)(z + 0.5)
        let c = [-1.5, 2.5, -3.5, 2.5, 1.0];
        let mut rts = roots(&[c[0] * 1.0, c[1], c[2], c[3], c[4]]);
        rts.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        // verify residuals rather than ordering subtleties
        for z in &rts {
            let (p, _) = horner(
                &c.iter()
                    .map(|&x| Complex64::new(x, 0.0))
                    .collect::<Vec<_>>(),
                *z,
            );
            assert!(p.norm() < 1e-12, "residual {p}");
        }
        assert_eq!(rts.len(), 4);
    }
}
