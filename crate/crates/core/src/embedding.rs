//! Galton-Watson embedding of the urn: generation-wise trees with uniform
//! marks, Crump-Mode-Jagers counts and the stopping times `tau_k`.
//!
//! A draw from the active urn is a visit of the current generation in the
//! order of the marks. With `Z` the total count, `tau_k` is the `k`-th jump
//! of `Z^t`, and `B(k) = e_{j0} + Z^j(tau_k)`.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Hypergeometric};
use serde::Serialize;
use thiserror::Error;

use crate::model::ReplacementLaw;
use crate::rng;

/// Default cap on the number of individuals in an explicit tree.
pub const DEFAULT_POPULATION_BUDGET: u64 = 10_000_000;
/// Generation size at which the count-only sampler stops growing.
pub const COUNT_CAP: f64 = 1e15;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("population budget exceeded: {0} individuals")]
    BudgetExceeded(u64),
    #[error("tree of depth {depth} cannot evaluate the count at x = {x}")]
    InsufficientDepth { depth: usize, x: f64 },
    #[error("count {k} is not reached by the tree ({available} individuals)")]
    NotReached { k: u64, available: u64 },
    #[error("invalid characteristic: {0}")]
    InvalidSpec(String),
}

/// `a * Phi^t_x + b * Phi^j_x`; `x >= 0` uses the shifted extension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CharacteristicSpec {
    pub a: f64,
    pub b: f64,
    pub j: usize,
    pub x: f64,
}

impl CharacteristicSpec {
    pub fn new(a: f64, b: f64, j: usize, x: f64) -> Result<Self, EmbeddingError> {
        if a == 0.0 && b == 0.0 {
            return Err(EmbeddingError::InvalidSpec("a and b both vanish".into()));
        }
        if !(x >= 0.0 && x.is_finite()) {
            return Err(EmbeddingError::InvalidSpec(format!(
                "threshold {x} must be finite and >= 0"
            )));
        }
        Ok(CharacteristicSpec { a, b, j, x })
    }

    pub fn total(x: f64) -> Self {
        CharacteristicSpec {
            a: 1.0,
            b: 0.0,
            j: 0,
            x,
        }
    }

    pub fn of_type(j: usize, x: f64) -> Self {
        CharacteristicSpec {
            a: 0.0,
            b: 1.0,
            j,
            x,
        }
    }

    pub fn at(self, x: f64) -> Self {
        CharacteristicSpec { x, ..self }
    }
}

/// One generation of an explicit tree. Members are stored in increasing
/// mark order (ties by insertion index).
#[derive(Clone, Debug)]
pub struct GenerationRecord {
    pub depth: usize,
    pub z: Vec<u64>,
    pub types: Vec<usize>,
    pub marks: Vec<f64>,
    /// Row `i` holds the children by type of the first `i` members, so the
    /// offspring of member `i` is `row(i + 1) - row(i)`.
    prefix: Vec<u64>,
}

impl GenerationRecord {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    fn dim(&self) -> usize {
        self.z.len()
    }

    /// Offspring vector of the `i`-th member in mark order.
    pub fn offspring(&self, i: usize) -> Vec<u64> {
        let d = self.dim();
        (0..d)
            .map(|t| self.prefix[(i + 1) * d + t] - self.prefix[i * d + t])
            .collect()
    }

    /// Children by type of the first `r` members in mark order.
    pub fn children_of_first(&self, r: usize) -> &[u64] {
        let d = self.dim();
        &self.prefix[r * d..(r + 1) * d]
    }

    /// Number of members with mark `<= x`.
    pub fn marked_up_to(&self, x: f64) -> usize {
        self.marks.partition_point(|&m| m <= x)
    }
}

/// Generations `0..=depth` of a multitype Galton-Watson tree, each member's
/// offspring drawn (so `Z_{depth+1}` is known).
#[derive(Clone, Debug)]
pub struct Tree {
    pub j0: usize,
    pub generations: Vec<GenerationRecord>,
}

/// Builds generations `0..=depth` started from one type-`j0` individual.
pub fn simulate_tree_with<R: Rng + ?Sized>(
    law: &ReplacementLaw,
    j0: usize,
    depth: usize,
    budget: u64,
    rng: &mut R,
) -> Result<Tree, EmbeddingError> {
    let dim = law.dim();
    let mut generations = Vec::with_capacity(depth + 1);
    let mut current_types = vec![j0];
    let mut total = 0u64;
    for k in 0..=depth {
        total += current_types.len() as u64;
        if total > budget {
            return Err(EmbeddingError::BudgetExceeded(total));
        }
        let mut members: Vec<(f64, usize, &[u64])> = current_types
            .iter()
            .map(|&t| {
                let mark: f64 = rng.random();
                (mark, t, law.sample_column(t, rng))
            })
            .collect();
        // stable sort keeps insertion order on ties
        members.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut z = vec![0u64; dim];
        let mut prefix = vec![0u64; (members.len() + 1) * dim];
        let mut next_types = Vec::new();
        for (i, &(_, t, off)) in members.iter().enumerate() {
            z[t] += 1;
            for c in 0..dim {
                prefix[(i + 1) * dim + c] = prefix[i * dim + c] + off[c];
            }
        }
        for (c, _) in z.iter().enumerate() {
            let n = prefix[members.len() * dim + c];
            if k < depth {
                next_types.extend(std::iter::repeat_n(c, n as usize));
            }
        }
        generations.push(GenerationRecord {
            depth: k,
            z,
            types: members.iter().map(|m| m.1).collect(),
            marks: members.iter().map(|m| m.0).collect(),
            prefix,
        });
        current_types = next_types;
    }
    Ok(Tree { j0, generations })
}

pub fn simulate_tree(
    law: &ReplacementLaw,
    j0: usize,
    depth: usize,
    seed: u64,
) -> Result<Tree, EmbeddingError> {
    let mut rng = rng::stream(seed, 0);
    simulate_tree_with(law, j0, depth, DEFAULT_POPULATION_BUDGET, &mut rng)
}

impl Tree {
    pub fn depth(&self) -> usize {
        self.generations.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.generations[0].z.len()
    }

    /// `Z_{depth+1}`, the children of the deepest stored generation.
    pub fn next_generation(&self) -> Vec<u64> {
        let g = self.generations.last().expect("nonempty tree");
        g.children_of_first(g.len()).to_vec()
    }

    /// `Z_k` for `k <= depth + 1`.
    pub fn z(&self, k: usize) -> Vec<u64> {
        if k == self.generations.len() {
            self.next_generation()
        } else {
            self.generations[k].z.clone()
        }
    }

    pub fn survived(&self) -> bool {
        self.next_generation().iter().any(|&x| x > 0)
    }

    /// `Z^t(x)`: all individuals of generations below `floor(x)` plus those
    /// of generation `floor(x)` with mark `<= {x}`.
    pub fn count_total(&self, x: impl Into<Position>) -> Result<u64, EmbeddingError> {
        let Position {
            generation: g,
            frac,
        } = x.into();
        if g > self.depth() {
            return Err(EmbeddingError::InsufficientDepth {
                depth: self.depth(),
                x: g as f64 + frac,
            });
        }
        let below: u64 = self.generations[..g].iter().map(|r| r.len() as u64).sum();
        Ok(below + self.generations[g].marked_up_to(frac) as u64)
    }

    /// `Z^j(x)`: type-`j` children of all individuals of generations below
    /// `floor(x)` plus those of generation-`floor(x)` members with mark
    /// `<= {x}`.
    pub fn count_type(&self, j: usize, x: impl Into<Position>) -> Result<u64, EmbeddingError> {
        let Position {
            generation: g,
            frac,
        } = x.into();
        if g > self.depth() {
            return Err(EmbeddingError::InsufficientDepth {
                depth: self.depth(),
                x: g as f64 + frac,
            });
        }
        let below: u64 = self.generations[1..=g].iter().map(|r| r.z[j]).sum();
        let gen = &self.generations[g];
        Ok(below + gen.children_of_first(gen.marked_up_to(frac))[j])
    }

    /// `a Z^t(x) + b Z^j(x)`.
    pub fn cmj_count(&self, spec: &CharacteristicSpec) -> Result<f64, EmbeddingError> {
        let mut s = 0.0;
        if spec.a != 0.0 {
            s += spec.a * self.count_total(spec.x)? as f64;
        }
        if spec.b != 0.0 {
            s += spec.b * self.count_type(spec.j, spec.x)? as f64;
        }
        Ok(s)
    }

    pub fn population(&self) -> u64 {
        self.generations.iter().map(|g| g.len() as u64).sum()
    }

    /// Location of the `k`-th jump of `Z^t`, `k >= 1`.
    pub fn tau(&self, k: u64) -> Result<f64, EmbeddingError> {
        self.tau_position(k).map(Position::value)
    }

    pub fn tau_position(&self, k: u64) -> Result<Position, EmbeddingError> {
        let available = self.population();
        if k == 0 || k > available {
            return Err(EmbeddingError::NotReached { k, available });
        }
        let mut before = 0u64;
        for g in &self.generations {
            let size = g.len() as u64;
            if k <= before + size {
                return Ok(Position {
                    generation: g.depth,
                    frac: g.marks[(k - before - 1) as usize],
                });
            }
            before += size;
        }
        unreachable!("k within population")
    }

    /// `B(k)` read off the tree: the initial ball plus `Z^j(tau_k)` for
    /// every type.
    pub fn b_vector(&self, k: u64) -> Result<Vec<u64>, EmbeddingError> {
        let t = self.tau_position(k)?;
        let mut b = (0..self.dim())
            .map(|j| self.count_type(j, t))
            .collect::<Result<Vec<_>, _>>()?;
        b[self.j0] += 1;
        Ok(b)
    }

    pub fn b_via_embedding(&self, k: u64, j: usize) -> Result<u64, EmbeddingError> {
        Ok(self.b_vector(k)?[j])
    }

    /// `rho^{-D} v . Z_D` at the deepest stored generation.
    pub fn w_hat(&self, rho: f64, v: &[f64]) -> f64 {
        let d = self.depth();
        let z = &self.generations[d].z;
        martingale(rho, d, v, z)
    }

    pub fn summary(&self, rho: f64, v: &[f64]) -> TreeSummary {
        TreeSummary {
            depth: self.depth(),
            z: (0..=self.depth() + 1).map(|k| self.z(k)).collect(),
            w_hat: self.w_hat(rho, v),
            survived: self.survived(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TreeSummary {
    pub depth: usize,
    pub z: Vec<Vec<u64>>,
    pub w_hat: f64,
    pub survived: bool,
}

/// A point `generation + mark` of the time axis, kept as a pair so that
/// mark comparisons are exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Position {
    pub generation: usize,
    pub frac: f64,
}

impl Position {
    pub fn value(self) -> f64 {
        self.generation as f64 + self.frac
    }
}

impl From<f64> for Position {
    fn from(x: f64) -> Self {
        let g = x.floor();
        Position {
            generation: g as usize,
            frac: x - g,
        }
    }
}

fn martingale(rho: f64, depth: usize, v: &[f64], z: &[u64]) -> f64 {
    let dot: f64 = v.iter().zip(z).map(|(a, &b)| a * b as f64).sum();
    dot * rho.powi(-(depth as i32))
}

/// Per-type outcome counts of one generation: `counts[i][o]` individuals of
/// type `i` drew outcome `o` of column `i`.
#[derive(Clone, Debug, PartialEq)]
struct OutcomeCounts {
    counts: Vec<Vec<u64>>,
}

fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let x = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[k] = x;
        left -= x;
        mass -= p;
    }
    out
}

fn multivariate_hypergeometric<R: Rng + ?Sized>(pop: &[u64], draws: u64, rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; pop.len()];
    let mut remaining: u64 = pop.iter().sum();
    let mut left = draws;
    for (k, &c) in pop.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == pop.len() {
            out[k] = left;
            break;
        }
        let x = if c == 0 {
            0
        } else if c == remaining {
            left
        } else {
            Hypergeometric::new(remaining, c, left)
                .expect("valid hypergeometric")
                .sample(rng)
        };
        out[k] = x;
        left -= x;
        remaining -= c;
    }
    out
}

/// Count-only sampler that never materializes individuals: generation sizes
/// by multinomial outcome counts, the partially drawn generation by
/// hypergeometric thinning and `tau_n` from the order statistic of marks.
#[derive(Clone, Debug)]
pub struct EmbeddedSample {
    /// `B(n)` including the initial ball.
    pub b: Vec<u64>,
    /// `tau_n`, or `None` after extinction.
    pub tau: Option<f64>,
    /// Deepest generation index reached and its type counts.
    pub depth: usize,
    pub z_deep: Vec<u64>,
    pub survived: bool,
}

impl EmbeddedSample {
    pub fn w_hat(&self, rho: f64, v: &[f64]) -> f64 {
        martingale(rho, self.depth, v, &self.z_deep)
    }
}

/// Probabilities per column, cached for the count-only sampler.
#[derive(Clone, Debug)]
pub struct CountSampler<'a> {
    law: &'a ReplacementLaw,
    probs: Vec<Vec<f64>>,
}

impl<'a> CountSampler<'a> {
    pub fn new(law: &'a ReplacementLaw) -> Self {
        let probs = law
            .columns()
            .iter()
            .map(|c| c.iter().map(|o| o.prob).collect())
            .collect();
        CountSampler { law, probs }
    }

    fn reproduce<R: Rng + ?Sized>(&self, z: &[u64], rng: &mut R) -> (OutcomeCounts, Vec<u64>) {
        let dim = z.len();
        let mut next = vec![0u64; dim];
        let counts = z
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let oc = multinomial(c, &self.probs[i], rng);
                for (o, &m) in oc.iter().enumerate() {
                    if m > 0 {
                        for (t, x) in next.iter_mut().enumerate() {
                            *x += m * self.law.column(i)[o].offspring[t];
                        }
                    }
                }
                oc
            })
            .collect();
        (OutcomeCounts { counts }, next)
    }

    /// `Z_0, .., Z_depth` of a fresh tree (stops early at extinction).
    pub fn generations<R: Rng + ?Sized>(
        &self,
        j0: usize,
        depth: usize,
        rng: &mut R,
    ) -> Vec<Vec<u64>> {
        let dim = self.law.dim();
        let mut z = vec![0u64; dim];
        z[j0] = 1;
        let mut out = vec![z.clone()];
        for _ in 0..depth {
            if z.iter().all(|&x| x == 0) {
                break;
            }
            z = self.reproduce(&z, rng).1;
            out.push(z.clone());
        }
        out
    }

    /// Samples `B(n)` and `tau_n` through the embedding, then keeps growing
    /// the population until generation `min_depth` (and at least one past
    /// the drawn one) or until a generation exceeds [`COUNT_CAP`].
    pub fn sample<R: Rng + ?Sized>(
        &self,
        j0: usize,
        n: u64,
        min_depth: usize,
        rng: &mut R,
    ) -> EmbeddedSample {
        let dim = self.law.dim();
        let mut z = vec![0u64; dim];
        z[j0] = 1;
        let mut b = vec![0u64; dim];
        b[j0] = 1;
        let mut drawn = 0u64;
        let mut g = 0usize;
        loop {
            let size: u64 = z.iter().sum();
            if size == 0 {
                // extinct before n draws: B frozen at its final value
                return EmbeddedSample {
                    b,
                    tau: None,
                    depth: g,
                    z_deep: z,
                    survived: false,
                };
            }
            let (oc, next) = self.reproduce(&z, rng);
            if drawn + size >= n {
                let r = n - drawn;
                let tau = if r == 0 {
                    // n = 0: nothing drawn
                    0.0
                } else {
                    let u = Beta::new(r as f64, (size - r + 1) as f64)
                        .expect("valid beta")
                        .sample(rng);
                    g as f64 + u
                };
                if r > 0 {
                    let by_type = multivariate_hypergeometric(&z, r, rng);
                    for (i, &c) in by_type.iter().enumerate() {
                        if c == 0 {
                            continue;
                        }
                        let picked = multivariate_hypergeometric(&oc.counts[i], c, rng);
                        for (o, &m) in picked.iter().enumerate() {
                            for (t, x) in b.iter_mut().enumerate() {
                                *x += m * self.law.column(i)[o].offspring[t];
                            }
                        }
                    }
                }
                let mut depth = g + 1;
                let mut z_deep = next;
                while depth < min_depth {
                    let total: u64 = z_deep.iter().sum();
                    if total == 0 || total as f64 > COUNT_CAP {
                        break;
                    }
                    z_deep = self.reproduce(&z_deep, rng).1;
                    depth += 1;
                }
                let survived = z_deep.iter().any(|&x| x > 0);
                return EmbeddedSample {
                    b,
                    tau: Some(tau),
                    depth,
                    z_deep,
                    survived,
                };
            }
            drawn += size;
            for (x, y) in b.iter_mut().zip(&next) {
                *x += y;
            }
            z = next;
            g += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn doubling_tree() {
        let law = corpus::doubling();
        let t = simulate_tree(&law, 0, 6, 1).unwrap();
        for k in 0..=7 {
            assert_eq!(t.z(k), vec![1u64 << k]);
        }
        for n in 0..=6 {
            assert_eq!(t.count_total(n as f64).unwrap(), (1 << n) - 1);
        }
        assert_eq!(t.count_type(0, 2.0).unwrap(), 2 + 4);
    }

    #[test]
    fn three_type_first_generation() {
        let law = corpus::three_type();
        let t = simulate_tree(&law, 0, 3, 5).unwrap();
        assert_eq!(t.z(1), vec![1, 0, 1]);
        assert_eq!(t.b_vector(1).unwrap(), vec![2, 0, 1]);
        assert_eq!(t.b_vector(3).unwrap(), vec![5, 1, 3]);
    }

    #[test]
    fn identity_and_tau_inverse() {
        let law = corpus::case_iii();
        for seed in 0..10 {
            let t = simulate_tree(&law, 1, 5, seed).unwrap();
            for n in 0..5 {
                let lhs = t.count_total((n + 1) as f64).unwrap() - 1;
                let rhs: u64 = (0..2).map(|j| t.count_type(j, n as f64).unwrap()).sum();
                assert_eq!(lhs, rhs);
            }
            for k in 1..=t.population() {
                let tau = t.tau_position(k).unwrap();
                assert_eq!(t.count_total(tau).unwrap(), k);
                if tau.frac > 0.0 {
                    let before = Position {
                        frac: f64::from_bits(tau.frac.to_bits() - 1),
                        ..tau
                    };
                    assert!(t.count_total(before).unwrap() < k);
                }
            }
            assert!(matches!(
                t.tau(t.population() + 1),
                Err(EmbeddingError::NotReached { .. })
            ));
        }
    }

    #[test]
    fn depth_is_checked() {
        let t = simulate_tree(&corpus::case_ii(), 0, 2, 3).unwrap();
        assert!(t.cmj_count(&CharacteristicSpec::total(2.5)).is_ok());
        assert!(matches!(
            t.cmj_count(&CharacteristicSpec::of_type(0, 3.1)),
            Err(EmbeddingError::InsufficientDepth { .. })
        ));
    }

    #[test]
    fn budget_is_enforced() {
        let mut rng = rng::stream(0, 0);
        let r = simulate_tree_with(&corpus::doubling(), 0, 20, 1000, &mut rng);
        assert!(matches!(r, Err(EmbeddingError::BudgetExceeded(_))));
    }

    #[test]
    fn count_sampler_matches_deterministic_law() {
        let law = corpus::three_type();
        let s = CountSampler::new(&law);
        let mut rng = rng::stream(2, 0);
        for (n, b) in [(1, vec![2, 0, 1]), (3, vec![5, 1, 3])] {
            let e = s.sample(0, n, 0, &mut rng);
            assert_eq!(e.b, b);
        }
        let doubling = corpus::doubling();
        let s = CountSampler::new(&doubling);
        let e = s.sample(0, 7, 10, &mut rng);
        // draws 1..7 cover generations 0..2 exactly
        assert_eq!(e.b, vec![15]);
        assert!(e.tau.unwrap() >= 2.0 && e.tau.unwrap() < 3.0);
        assert_eq!(e.depth, 10);
        assert_eq!(e.w_hat(2.0, &[1.0]), 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(CharacteristicSpec::new(0.0, 0.0, 0, 0.5).is_err());
        assert!(CharacteristicSpec::new(1.0, 0.0, 0, -0.5).is_err());
        assert!(CharacteristicSpec::new(1.0, -2.0, 1, 3.5).is_ok());
    }
}
