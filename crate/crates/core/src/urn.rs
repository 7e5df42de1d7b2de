//! Direct simulation of the two alternating urns.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::ReplacementLaw;
use crate::rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UrnError {
    #[error("both urns are empty since draw {0}")]
    AlreadyExtinct(u64),
    #[error("no type-{0} ball in the active urn")]
    NotInUrn(usize),
}

/// State of the urn pair after `draws` draws.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UrnState {
    pub counts_active: Vec<u64>,
    pub counts_passive: Vec<u64>,
    pub active_is_u1: bool,
    /// Balls of each type ever added, the initial ball included.
    pub b: Vec<u64>,
    pub draws: u64,
    pub extinct_at: Option<u64>,
}

impl UrnState {
    /// One ball of type `j0` in the first urn.
    pub fn init(dim: usize, j0: usize) -> Self {
        let mut e = vec![0; dim];
        e[j0] = 1;
        UrnState {
            counts_active: e.clone(),
            counts_passive: vec![0; dim],
            active_is_u1: true,
            b: e,
            draws: 0,
            extinct_at: None,
        }
    }

    pub fn balls_remaining(&self) -> u64 {
        self.counts_active.iter().chain(&self.counts_passive).sum()
    }

    pub fn is_extinct(&self) -> bool {
        self.extinct_at.is_some()
    }

    /// Removes a type-`i` ball from the active urn and deposits `offspring`
    /// in the passive one, swapping urns when the active urn runs dry.
    pub fn apply_draw(&mut self, i: usize, offspring: &[u64]) -> Result<(), UrnError> {
        if let Some(n0) = self.extinct_at {
            return Err(UrnError::AlreadyExtinct(n0));
        }
        if self.counts_active[i] == 0 {
            return Err(UrnError::NotInUrn(i));
        }
        self.counts_active[i] -= 1;
        for ((p, b), &x) in self
            .counts_passive
            .iter_mut()
            .zip(self.b.iter_mut())
            .zip(offspring)
        {
            *p += x;
            *b += x;
        }
        self.draws += 1;
        if self.counts_active.iter().all(|&c| c == 0) {
            std::mem::swap(&mut self.counts_active, &mut self.counts_passive);
            self.active_is_u1 = !self.active_is_u1;
            if self.counts_active.iter().all(|&c| c == 0) {
                self.extinct_at = Some(self.draws);
            }
        }
        debug_assert_eq!(
            self.b.iter().sum::<u64>() - self.draws,
            self.balls_remaining(),
            "ball conservation"
        );
        Ok(())
    }

    /// Type of a ball drawn uniformly from the active urn.
    pub fn draw_type<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: u64 = self.counts_active.iter().sum();
        let mut r = rng.random_range(0..total);
        for (i, &c) in self.counts_active.iter().enumerate() {
            if r < c {
                return i;
            }
            r -= c;
        }
        unreachable!("draw beyond urn content")
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        law: &ReplacementLaw,
        rng: &mut R,
    ) -> Result<(), UrnError> {
        if let Some(n0) = self.extinct_at {
            return Err(UrnError::AlreadyExtinct(n0));
        }
        let i = self.draw_type(rng);
        let offspring = law.sample_column(i, rng);
        self.apply_draw(i, offspring)
    }
}

/// Which step counts are recorded by [`run`].
#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoints {
    /// `n = ceil(rho^(k/2))`, `k = 0, 1, ...`, plus the final step.
    Geometric {
        rho: f64,
    },
    All,
    List(Vec<u64>),
}

impl Checkpoints {
    /// Sorted, deduplicated checkpoints in `0..=n_steps`; `0` and `n_steps`
    /// are always included.
    pub fn resolve(&self, n_steps: u64) -> Vec<u64> {
        let mut pts = match self {
            Checkpoints::All => (0..=n_steps).collect(),
            Checkpoints::List(v) => v.iter().copied().filter(|&n| n <= n_steps).collect(),
            Checkpoints::Geometric { rho } => {
                let mut v = Vec::new();
                if *rho > 1.0 {
                    let mut k = 0;
                    loop {
                        let n = rho.powf(k as f64 / 2.0).ceil();
                        if n > n_steps as f64 {
                            break;
                        }
                        v.push(n as u64);
                        k += 1;
                    }
                }
                v
            }
        };
        pts.push(0);
        pts.push(n_steps);
        pts.sort_unstable();
        pts.dedup();
        pts
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub law: String,
    pub j0: usize,
    pub seed: u64,
    pub records: Vec<(u64, Vec<u64>)>,
    pub last: UrnState,
    pub survived: bool,
}

impl Trajectory {
    /// CSV with header `n,B_1,..,B_J,survived`.
    pub fn to_csv(&self) -> String {
        let dim = self.last.b.len();
        let mut s = String::from("n,");
        for j in 1..=dim {
            s.push_str(&format!("B_{j},"));
        }
        s.push_str("survived\n");
        for (n, b) in &self.records {
            s.push_str(&n.to_string());
            for x in b {
                s.push_str(&format!(",{x}"));
            }
            s.push_str(&format!(",{}\n", self.survived));
        }
        s
    }
}

/// Runs `n_steps` draws (or until extinction, after which `B` is frozen),
/// recording `B` at the requested checkpoints.
pub fn run_with<R: Rng + ?Sized>(
    law: &ReplacementLaw,
    j0: usize,
    n_steps: u64,
    checkpoints: &[u64],
    rng: &mut R,
) -> (UrnState, Vec<(u64, Vec<u64>)>) {
    let mut state = UrnState::init(law.dim(), j0);
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for n in 0..=n_steps {
        if n > 0 && !state.is_extinct() {
            state.step(law, rng).expect("not extinct");
        }
        while next.peek().is_some_and(|&&c| c == n) {
            records.push((n, state.b.clone()));
            next.next();
        }
    }
    (state, records)
}

pub fn run(
    law: &ReplacementLaw,
    law_name: &str,
    j0: usize,
    n_steps: u64,
    checkpoints: &Checkpoints,
    seed: u64,
) -> Trajectory {
    let pts = checkpoints.resolve(n_steps);
    let mut rng = rng::stream(seed, 0);
    let (last, records) = run_with(law, j0, n_steps, &pts, &mut rng);
    Trajectory {
        law: law_name.to_string(),
        j0,
        seed,
        records,
        survived: !last.is_extinct(),
        last,
    }
}

/// `B(n)` of a single run.
pub fn sample_b<R: Rng + ?Sized>(law: &ReplacementLaw, j0: usize, n: u64, rng: &mut R) -> UrnState {
    let mut state = UrnState::init(law.dim(), j0);
    for _ in 0..n {
        if state.is_extinct() {
            break;
        }
        state.step(law, rng).expect("not extinct");
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn init_state() {
        let s = UrnState::init(3, 0);
        assert_eq!(s.b, vec![1, 0, 0]);
        assert_eq!(s.balls_remaining(), 1);
        assert_eq!(UrnState::init(2, 1).b, vec![0, 1]);
    }

    #[test]
    fn three_type_second_draw_by_hand() {
        // types: 0 black, 1 white, 2 green
        let law = corpus::three_type();
        let mut s = UrnState::init(3, 0);
        s.apply_draw(0, &law.column(0)[0].offspring).unwrap();
        assert_eq!(s.b, vec![2, 0, 1]);
        assert_eq!(s.counts_active, vec![1, 0, 1]);
        assert!(!s.active_is_u1);
        let mut green = s.clone();
        green.apply_draw(2, &law.column(2)[0].offspring).unwrap();
        assert_eq!(green.b, vec![4, 1, 2]);
        let mut black = s.clone();
        black.apply_draw(0, &law.column(0)[0].offspring).unwrap();
        assert_eq!(black.b, vec![3, 0, 2]);
    }

    #[test]
    fn three_type_third_step_is_certain() {
        let law = corpus::three_type();
        for seed in 0..20 {
            let t = run(&law, "three_type", 0, 3, &Checkpoints::All, seed);
            assert_eq!(t.records.last().unwrap(), &(3, vec![5, 1, 3]));
        }
    }

    #[test]
    fn extinction_freezes() {
        let law = ReplacementLaw::new(1, vec![vec![(vec![0], 1.0)]]).unwrap();
        let mut rng = rng::stream(1, 0);
        let mut s = UrnState::init(1, 0);
        s.step(&law, &mut rng).unwrap();
        assert_eq!(s.extinct_at, Some(1));
        assert_eq!(s.step(&law, &mut rng), Err(UrnError::AlreadyExtinct(1)));
        let t = run(&law, "dead", 0, 10, &Checkpoints::All, 5);
        assert!(!t.survived);
        assert!(t.records.iter().all(|(_, b)| b == &vec![1]));
    }

    #[test]
    fn zero_steps_records_initial_state() {
        let t = run(
            &corpus::case_ii(),
            "boundary",
            1,
            0,
            &Checkpoints::Geometric { rho: 4.0 },
            0,
        );
        assert_eq!(t.records, vec![(0, vec![0, 1])]);
        assert_eq!(t.to_csv(), "n,B_1,B_2,survived\n0,0,1,true\n");
    }

    #[test]
    fn geometric_checkpoints() {
        let pts = Checkpoints::Geometric { rho: 4.0 }.resolve(20);
        assert_eq!(pts, vec![0, 1, 2, 4, 8, 16, 20]);
        assert_eq!(
            Checkpoints::List(vec![5, 3, 99]).resolve(10),
            vec![0, 3, 5, 10]
        );
    }

    #[test]
    fn seeded_runs_repeat() {
        let law = corpus::case_iii();
        let a = run(
            &law,
            "below",
            0,
            500,
            &Checkpoints::Geometric { rho: 5.0 },
            9,
        );
        let b = run(
            &law,
            "below",
            0,
            500,
            &Checkpoints::Geometric { rho: 5.0 },
            9,
        );
        assert_eq!(a.records, b.records);
        for w in a.records.windows(2) {
            assert!(w[0].1.iter().zip(&w[1].1).all(|(x, y)| x <= y));
        }
    }
}
