//! Replacement laws: validation, moments, sampling and an exact enumerator
//! for the law of `B(n)` at small `n`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{self, RMat, SpectralError};

/// Tolerance on per-column probability sums.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Default cap on the number of distinct states the enumerator may hold.
pub const DEFAULT_LEAF_BUDGET: usize = 1_000_000;
/// Largest denominator for which an input probability is treated as rational.
pub const MAX_EXACT_DENOMINATOR: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("law must have J >= 1 types")]
    NoTypes,
    #[error("expected {expected} columns, found {found}")]
    ColumnCount { expected: usize, found: usize },
    #[error("column {column} has no outcomes")]
    EmptyColumn { column: usize },
    #[error("column {column}, outcome {outcome}: offspring vector has length {len}, expected {expected}")]
    OffspringLength {
        column: usize,
        outcome: usize,
        len: usize,
        expected: usize,
    },
    #[error("column {column}, outcome {outcome}: probability {prob} outside (0, 1]")]
    BadProbability {
        column: usize,
        outcome: usize,
        prob: f64,
    },
    #[error("column {column}: probabilities sum to {sum}")]
    ProbabilitySum { column: usize, sum: f64 },
    #[error("cannot parse probability {0:?}")]
    ProbabilityParse(String),
    #[error("type index {index} out of range for J = {dim}")]
    TypeIndex { index: usize, dim: usize },
    #[error("enumeration budget exceeded: {leaves} states at step {step}")]
    BudgetExceeded { leaves: usize, step: usize },
    #[error("reading law file: {0}")]
    Io(#[from] std::io::Error),
    #[error("law JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One possible value of a column `L^(j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub offspring: Vec<u64>,
    pub prob: f64,
    /// Exact probability when the input is a small-denominator rational.
    pub exact: Option<BigRational>,
}

/// Finite law of the random replacement matrix with independent columns.
#[derive(Clone, Debug)]
pub struct ReplacementLaw {
    dim: usize,
    columns: Vec<Vec<Outcome>>,
    samplers: Vec<WeightedIndex<f64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProbRepr {
    Num(f64),
    Text(String),
}

#[derive(Deserialize)]
struct OutcomeRepr {
    offspring: Vec<u64>,
    prob: ProbRepr,
}

#[derive(Deserialize)]
struct LawRepr {
    #[serde(rename = "J")]
    dim: usize,
    columns: Vec<Vec<OutcomeRepr>>,
}

#[derive(Serialize)]
struct OutcomeOut<'a> {
    offspring: &'a [u64],
    prob: serde_json::Value,
}

#[derive(Serialize)]
struct LawOut<'a> {
    #[serde(rename = "J")]
    dim: usize,
    columns: Vec<Vec<OutcomeOut<'a>>>,
}

/// The shortest decimal that round-trips to `x`, as an exact rational, when
/// its denominator is at most [`MAX_EXACT_DENOMINATOR`].
fn decimal_rational(x: f64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    if frac.len() > 9 {
        return None;
    }
    let den = 10u64.pow(frac.len() as u32);
    let num: BigInt = format!("{int}{frac}").parse().ok()?;
    let q = BigRational::new(num, BigInt::from(den));
    Some(if x < 0.0 { -q } else { q })
}

fn parse_prob(p: &ProbRepr) -> Result<(f64, Option<BigRational>), ModelError> {
    match p {
        ProbRepr::Num(x) => Ok((*x, decimal_rational(*x))),
        ProbRepr::Text(s) => {
            let bad = || ModelError::ProbabilityParse(s.clone());
            let (num, den) = match s.split_once('/') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (s.trim(), "1"),
            };
            if let (Ok(n), Ok(d)) = (num.parse::<i64>(), den.parse::<i64>()) {
                if d <= 0 {
                    return Err(bad());
                }
                let q = BigRational::new(BigInt::from(n), BigInt::from(d));
                let x = q.to_f64().ok_or_else(bad)?;
                return Ok((x, Some(q)));
            }
            let x: f64 = s.trim().parse().map_err(|_| bad())?;
            parse_prob(&ProbRepr::Num(x))
        }
    }
}

impl ReplacementLaw {
    /// Builds and validates a law from `(offspring, prob)` pairs per column.
    pub fn new(dim: usize, columns: Vec<Vec<(Vec<u64>, f64)>>) -> Result<Self, ModelError> {
        let cols = columns
            .into_iter()
            .map(|col| {
                col.into_iter()
                    .map(|(offspring, prob)| {
                        let (prob, exact) = parse_prob(&ProbRepr::Num(prob))?;
                        Ok(Outcome {
                            offspring,
                            prob,
                            exact,
                        })
                    })
                    .collect::<Result<Vec<_>, ModelError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_outcomes(dim, cols)
    }

    /// Law with a single outcome per column.
    pub fn deterministic(l: &[Vec<u64>]) -> Result<Self, ModelError> {
        let dim = l.len();
        let columns = (0..dim)
            .map(|j| vec![((0..dim).map(|i| l[i][j]).collect(), 1.0)])
            .collect();
        Self::new(dim, columns)
    }

    pub fn from_outcomes(dim: usize, columns: Vec<Vec<Outcome>>) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::NoTypes);
        }
        if columns.len() != dim {
            return Err(ModelError::ColumnCount {
                expected: dim,
                found: columns.len(),
            });
        }
        let mut samplers = Vec::with_capacity(dim);
        for (j, col) in columns.iter().enumerate() {
            if col.is_empty() {
                return Err(ModelError::EmptyColumn { column: j });
            }
            for (k, o) in col.iter().enumerate() {
                if o.offspring.len() != dim {
                    return Err(ModelError::OffspringLength {
                        column: j,
                        outcome: k,
                        len: o.offspring.len(),
                        expected: dim,
                    });
                }
                if !(o.prob > 0.0 && o.prob <= 1.0) {
                    return Err(ModelError::BadProbability {
                        column: j,
                        outcome: k,
                        prob: o.prob,
                    });
                }
            }
            let sum: f64 = col.iter().map(|o| o.prob).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(ModelError::ProbabilitySum { column: j, sum });
            }
            samplers.push(
                WeightedIndex::new(col.iter().map(|o| o.prob)).expect("validated positive weights"),
            );
        }
        Ok(ReplacementLaw {
            dim,
            columns,
            samplers,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let repr: LawRepr = serde_json::from_str(s)?;
        let columns = repr
            .columns
            .iter()
            .map(|col| {
                col.iter()
                    .map(|o| {
                        let (prob, exact) = parse_prob(&o.prob)?;
                        Ok(Outcome {
                            offspring: o.offspring.clone(),
                            prob,
                            exact,
                        })
                    })
                    .collect::<Result<Vec<_>, ModelError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_outcomes(repr.dim, columns)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ModelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let out = LawOut {
            dim: self.dim,
            columns: self
                .columns
                .iter()
                .map(|col| {
                    col.iter()
                        .map(|o| OutcomeOut {
                            offspring: &o.offspring,
                            prob: match &o.exact {
                                Some(q) if !q.is_integer() => {
                                    serde_json::Value::String(q.to_string())
                                }
                                _ => serde_json::json!(o.prob),
                            },
                        })
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&out).expect("law serializes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn column(&self, j: usize) -> &[Outcome] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<Outcome>] {
        &self.columns
    }

    pub fn check_type(&self, j: usize) -> Result<(), ModelError> {
        if j < self.dim {
            Ok(())
        } else {
            Err(ModelError::TypeIndex {
                index: j,
                dim: self.dim,
            })
        }
    }

    /// `true` when every outcome probability has an exact rational form.
    pub fn is_rational(&self) -> bool {
        self.columns.iter().flatten().all(|o| o.exact.is_some())
    }

    pub fn is_deterministic(&self) -> bool {
        self.columns.iter().all(|c| c.len() == 1)
    }

    /// Probability that a column is the zero vector, per type.
    pub fn zero_column_prob(&self, j: usize) -> f64 {
        self.columns[j]
            .iter()
            .filter(|o| o.offspring.iter().all(|&x| x == 0))
            .map(|o| o.prob)
            .sum()
    }

    /// Index of a column-`j` outcome drawn from its law.
    pub fn sample_index<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> usize {
        self.samplers[j].sample(rng)
    }

    /// Offspring vector of a type-`j` ball.
    pub fn sample_column<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> &[u64] {
        &self.columns[j][self.sample_index(j, rng)].offspring
    }

    pub fn mean_column(&self, j: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for o in &self.columns[j] {
            for (mi, &x) in m.iter_mut().zip(&o.offspring) {
                *mi += o.prob * x as f64;
            }
        }
        m
    }
}

/// `A = E[L]`: entry `(i, j)` is the mean number of type-`i` offspring of a
/// type-`j` ball.
pub fn mean_matrix(law: &ReplacementLaw) -> RMat {
    let dim = law.dim();
    let mut a = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for (i, m) in law.mean_column(j).into_iter().enumerate() {
            a[(i, j)] = m;
        }
    }
    a
}

/// Covariance matrix of the column `L^(j)`.
pub fn covariance(law: &ReplacementLaw, j: usize) -> RMat {
    let dim = law.dim();
    let mean = law.mean_column(j);
    let mut c = DMatrix::zeros(dim, dim);
    for o in law.column(j) {
        for r in 0..dim {
            let dr = o.offspring[r] as f64 - mean[r];
            for s in 0..dim {
                c[(r, s)] += o.prob * dr * (o.offspring[s] as f64 - mean[s]);
            }
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub gw1: bool,
    pub gw2: bool,
    pub gw3: bool,
    pub gw4: bool,
    pub moment_2_plus_delta: bool,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn all(&self) -> bool {
        self.gw1 && self.gw2 && self.gw3 && self.gw4 && self.moment_2_plus_delta
    }
}

pub fn check_assumptions(law: &ReplacementLaw) -> AssumptionReport {
    let a = mean_matrix(law);
    let mut notes = Vec::new();
    let gw1 = match spectral::perron(&a) {
        Ok(p) => {
            if p.rho <= 1.0 {
                notes.push(format!("spectral radius {} is not above 1", p.rho));
            }
            p.rho > 1.0
        }
        Err(SpectralError::Degenerate) => {
            notes.push("mean matrix has spectral radius 0".into());
            false
        }
        Err(e) => {
            notes.push(format!("spectral analysis failed: {e}"));
            false
        }
    };
    let gw2 = spectral::is_primitive(&a);
    if !gw2 {
        notes.push("mean matrix is not positively regular".into());
    }
    let dim = law.dim();
    let mut total = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        total += covariance(law, j);
    }
    let gw3 = total.iter().any(|x| x.abs() > PROB_SUM_TOL);
    if !gw3 {
        notes.push("sum of column covariances vanishes".into());
    }
    AssumptionReport {
        gw1,
        gw2,
        gw3,
        gw4: true,
        moment_2_plus_delta: true,
        notes,
    }
}

/// Probability of an enumerated outcome.
#[derive(Clone, Debug, PartialEq)]
pub enum Probability {
    Exact(BigRational),
    Approx(f64),
}

impl Probability {
    pub fn to_f64(&self) -> f64 {
        match self {
            Probability::Exact(q) => q.to_f64().unwrap_or(f64::NAN),
            Probability::Approx(x) => *x,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            Probability::Exact(q) => Some(q),
            Probability::Approx(_) => None,
        }
    }
}

impl std::fmt::Display for Probability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Probability::Exact(q) => write!(f, "{q}"),
            Probability::Approx(x) => write!(f, "{x}"),
        }
    }
}

trait Weight: Clone + Zero + One + std::ops::Mul<Output = Self> + std::ops::AddAssign {
    fn ratio(num: u64, den: u64) -> Self;
    fn wrap(self) -> Probability;
}

impl Weight for BigRational {
    fn ratio(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn wrap(self) -> Probability {
        Probability::Exact(self)
    }
}

impl Weight for f64 {
    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }
    fn wrap(self) -> Probability {
        Probability::Approx(self)
    }
}

/// Urn configuration tracked by the enumerator; the active-urn marker is
/// irrelevant to the law of `B`, so it is not part of the key.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EnumState {
    pub active: Vec<u64>,
    pub passive: Vec<u64>,
    pub b: Vec<u64>,
}

impl EnumState {
    pub fn initial(dim: usize, j0: usize) -> Self {
        let mut e = vec![0; dim];
        e[j0] = 1;
        EnumState {
            active: e.clone(),
            passive: vec![0; dim],
            b: e,
        }
    }
}

fn advance<W: Weight>(
    law: &ReplacementLaw,
    probs: &[Vec<W>],
    states: HashMap<EnumState, W>,
) -> HashMap<EnumState, W> {
    let mut next: HashMap<EnumState, W> = HashMap::with_capacity(states.len() * 2);
    for (s, w) in states {
        let total: u64 = s.active.iter().sum();
        if total == 0 {
            // extinct: frozen
            *next.entry(s).or_insert_with(W::zero) += w;
            continue;
        }
        for (i, &ci) in s.active.iter().enumerate() {
            if ci == 0 {
                continue;
            }
            let pd = w.clone() * W::ratio(ci, total);
            for (o, po) in law.column(i).iter().zip(&probs[i]) {
                let mut t = s.clone();
                t.active[i] -= 1;
                for k in 0..t.b.len() {
                    t.passive[k] += o.offspring[k];
                    t.b[k] += o.offspring[k];
                }
                if t.active.iter().all(|&x| x == 0) {
                    std::mem::swap(&mut t.active, &mut t.passive);
                }
                *next.entry(t).or_insert_with(W::zero) += pd.clone() * po.clone();
            }
        }
    }
    next
}

fn enumerate<W: Weight>(
    law: &ReplacementLaw,
    probs: Vec<Vec<W>>,
    j0: usize,
    n: usize,
    budget: usize,
) -> Result<Vec<(EnumState, Probability)>, ModelError> {
    let mut states = HashMap::new();
    states.insert(EnumState::initial(law.dim(), j0), W::one());
    for step in 1..=n {
        states = advance(law, &probs, states);
        if states.len() > budget {
            return Err(ModelError::BudgetExceeded {
                leaves: states.len(),
                step,
            });
        }
    }
    let mut out: Vec<_> = states.into_iter().map(|(s, w)| (s, w.wrap())).collect();
    out.sort_by(|a, b| {
        (&a.0.b, &a.0.active, &a.0.passive).cmp(&(&b.0.b, &b.0.active, &b.0.passive))
    });
    Ok(out)
}

/// Exact law of the full urn state after `n` draws, starting from one ball
/// of type `j0`. Rational arithmetic is used when every input probability
/// is rational.
pub fn exact_states(
    law: &ReplacementLaw,
    j0: usize,
    n: usize,
    budget: usize,
) -> Result<Vec<(EnumState, Probability)>, ModelError> {
    law.check_type(j0)?;
    if law.is_rational() {
        let probs = law
            .columns()
            .iter()
            .map(|c| {
                c.iter()
                    .map(|o| o.exact.clone().expect("rational law"))
                    .collect()
            })
            .collect();
        enumerate::<BigRational>(law, probs, j0, n, budget)
    } else {
        let probs = law
            .columns()
            .iter()
            .map(|c| c.iter().map(|o| o.prob).collect())
            .collect();
        enumerate::<f64>(law, probs, j0, n, budget)
    }
}

/// Exact law of `B(n)`, sorted by `B`.
pub fn exact_distribution(
    law: &ReplacementLaw,
    j0: usize,
    n: usize,
) -> Result<Vec<(Vec<u64>, Probability)>, ModelError> {
    exact_distribution_with_budget(law, j0, n, DEFAULT_LEAF_BUDGET)
}

pub fn exact_distribution_with_budget(
    law: &ReplacementLaw,
    j0: usize,
    n: usize,
    budget: usize,
) -> Result<Vec<(Vec<u64>, Probability)>, ModelError> {
    let states = exact_states(law, j0, n, budget)?;
    let mut out: Vec<(Vec<u64>, Probability)> = Vec::new();
    for (s, p) in states {
        match out.last_mut() {
            Some((b, acc)) if *b == s.b => {
                *acc = match (&*acc, p) {
                    (Probability::Exact(x), Probability::Exact(y)) => Probability::Exact(x + y),
                    (x, y) => Probability::Approx(x.to_f64() + y.to_f64()),
                };
            }
            _ => out.push((s.b, p)),
        }
    }
    Ok(out)
}

/// CSV with header `B_1,..,B_J,prob`.
pub fn distribution_csv(dist: &[(Vec<u64>, Probability)]) -> String {
    let dim = dist.first().map_or(0, |(b, _)| b.len());
    let mut s: String = (1..=dim).map(|j| format!("B_{j},")).collect();
    s.push_str("prob\n");
    for (b, p) in dist {
        for x in b {
            s.push_str(&format!("{x},"));
        }
        s.push_str(&format!("{}\n", p.to_f64()));
    }
    s
}
