//! The candidate search space: definition, enumeration, encoding, sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::arch::{Activation, ArchState};
use crate::error::{Error, Result};

/// Dimension of [`SearchSpace::encode`] output: four normalized ordinals
/// plus a one-hot over the three activations.
pub const ENCODING_DIM: usize = 7;

/// Candidate value lists for the five architecture dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
    pub hidden: Vec<usize>,
    pub intermediate: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl SearchSpace {
    /// Validating constructor: candidate lists non-empty, strictly
    /// increasing where ordinal, and every combination instantiable
    /// (heads divide hidden).
    pub fn new(
        layers: Vec<usize>,
        heads: Vec<usize>,
        hidden: Vec<usize>,
        intermediate: Vec<usize>,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        let space = Self {
            layers,
            heads,
            hidden,
            intermediate,
            activations,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("hidden", &self.hidden),
            ("intermediate", &self.intermediate),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!("search space: empty {name} list")));
            }
            if list.iter().any(|&v| v == 0) {
                return Err(Error::Config(format!("search space: zero in {name} list")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "search space: {name} candidates must be strictly increasing"
                )));
            }
        }
        if self.activations.is_empty() {
            return Err(Error::Config("search space: empty activation list".into()));
        }
        for &h in &self.hidden {
            for &a in &self.heads {
                if h % a != 0 {
                    return Err(Error::Config(format!(
                        "search space: hidden size {h} not divisible by {a} heads"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of states in the cartesian product.
    pub fn size(&self) -> usize {
        self.layers.len()
            * self.heads.len()
            * self.hidden.len()
            * self.intermediate.len()
            * self.activations.len()
    }

    /// All states in canonical order (layers, heads, hidden, intermediate,
    /// activation; each list in its configured order).
    pub fn enumerate(&self) -> Vec<ArchState> {
        let mut out = Vec::with_capacity(self.size());
        for &l in &self.layers {
            for &a in &self.heads {
                for &h in &self.hidden {
                    for &f in &self.intermediate {
                        for &act in &self.activations {
                            out.push(ArchState {
                                hidden_layers: l,
                                attention_heads: a,
                                hidden_size: h,
                                intermediate_size: f,
                                activation: act,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn contains(&self, state: &ArchState) -> bool {
        self.layers.contains(&state.hidden_layers)
            && self.heads.contains(&state.attention_heads)
            && self.hidden.contains(&state.hidden_size)
            && self.intermediate.contains(&state.intermediate_size)
            && self.activations.contains(&state.activation)
    }

    /// 7-dimensional encoding: the four ordinal dimensions normalized by
    /// their largest candidate value, then a one-hot activation. All entries
    /// lie in `[0, 1]`.
    pub fn encode(&self, state: &ArchState) -> Result<Vec<f64>> {
        if !self.contains(state) {
            return Err(Error::Input(format!(
                "state {state} is not in the search space"
            )));
        }
        let norm = |v: usize, list: &[usize]| v as f64 / *list.last().unwrap() as f64;
        let mut enc = vec![
            norm(state.hidden_layers, &self.layers),
            norm(state.attention_heads, &self.heads),
            norm(state.hidden_size, &self.hidden),
            norm(state.intermediate_size, &self.intermediate),
        ];
        for act in Activation::ALL {
            enc.push(if state.activation == act { 1.0 } else { 0.0 });
        }
        Ok(enc)
    }

    /// Uniform sample of `n` distinct states outside `exclude`,
    /// deterministic per seed.
    pub fn sample_random(
        &self,
        n: usize,
        seed: u64,
        exclude: &BTreeSet<ArchState>,
    ) -> Result<Vec<ArchState>> {
        let pool: Vec<ArchState> = self
            .enumerate()
            .into_iter()
            .filter(|s| !exclude.contains(s))
            .collect();
        if n > pool.len() {
            return Err(Error::Input(format!(
                "cannot sample {n} states: only {} available",
                pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = pool;
        pool.shuffle(&mut rng);
        pool.truncate(n);
        Ok(pool)
    }
}

/// The 2400-state production space.
///
/// The hidden-size candidates are {288, 384, 576, 768}: the four widths that
/// make the five advertised dimensions multiply out to 2400 states and that
/// cover every discovered architecture. See README for the derivation.
pub fn paper_space() -> SearchSpace {
    SearchSpace::new(
        vec![3, 4, 6, 10, 12],
        vec![2, 3, 4, 6, 12],
        vec![288, 384, 576, 768],
        vec![384, 512, 576, 768, 1024, 1536, 2048, 3072],
        Activation::ALL.to_vec(),
    )
    .expect("paper space is valid")
}

/// A 24-state space with the same shape but desk-scale widths, for
/// end-to-end distillation tests.
pub fn desk_space() -> SearchSpace {
    SearchSpace::new(
        vec![2, 4],
        vec![2, 4],
        vec![32, 48],
        vec![64],
        Activation::ALL.to_vec(),
    )
    .expect("desk space is valid")
}

/// The fixed desk-scale teacher profile (12 layers, 4 heads, width 64,
/// FFN 128, gelu).
pub fn desk_teacher_arch() -> ArchState {
    ArchState::new(12, 4, 64, 128, Activation::Gelu).expect("desk teacher is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn paper_space_has_2400_states() {
        let space = paper_space();
        assert_eq!(space.size(), 2400);
        assert_eq!(space.enumerate().len(), 2400);
    }

    #[test]
    fn discovered_architectures_are_members() {
        let space = paper_space();
        for s in ["3,12,384,1024,gelu", "4,4,288,768,gelu", "4,12,576,768,gelu"] {
            let state: ArchState = s.parse().unwrap();
            assert!(space.contains(&state), "{s} not in space");
        }
    }

    #[test]
    fn every_state_valid_and_encodings_in_unit_interval() {
        let space = paper_space();
        for state in space.enumerate() {
            state.validate().unwrap();
            let enc = space.encode(&state).unwrap();
            assert_eq!(enc.len(), ENCODING_DIM);
            assert!(enc.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn encoding_rule_example() {
        let space = paper_space();
        let s: ArchState = "3,12,384,1024,gelu".parse().unwrap();
        let enc = space.encode(&s).unwrap();
        assert_eq!(
            enc,
            vec![0.25, 1.0, 0.5, 1024.0 / 3072.0, 1.0, 0.0, 0.0]
        );
        let maxed: ArchState = "12,12,768,3072,relu".parse().unwrap();
        assert_eq!(
            space.encode(&maxed).unwrap()[..4],
            [1.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn encoding_injective_over_space() {
        let space = paper_space();
        let mut seen = BTreeSet::new();
        for state in space.enumerate() {
            let enc = space.encode(&state).unwrap();
            let key: Vec<u64> = enc.iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key), "duplicate encoding for {state}");
        }
    }

    #[test]
    fn encode_rejects_foreign_state() {
        let space = paper_space();
        let foreign = ArchState::new(5, 2, 288, 384, Activation::Gelu).unwrap();
        assert!(matches!(space.encode(&foreign), Err(Error::Input(_))));
    }

    #[test]
    fn sampling_is_deterministic_and_exhaustive() {
        let space = desk_space();
        let none = BTreeSet::new();
        let a = space.sample_random(5, 9, &none).unwrap();
        let b = space.sample_random(5, 9, &none).unwrap();
        assert_eq!(a, b);

        let all = space.sample_random(space.size(), 9, &none).unwrap();
        let unique: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(unique.len(), space.size());

        assert!(space.sample_random(space.size() + 1, 9, &none).is_err());
    }

    #[test]
    fn sampling_respects_exclusions() {
        let space = desk_space();
        let exclude: BTreeSet<ArchState> =
            space.enumerate().into_iter().take(20).collect();
        let got = space.sample_random(4, 3, &exclude).unwrap();
        assert_eq!(got.len(), 4);
        assert!(got.iter().all(|s| !exclude.contains(s)));
    }

    #[test]
    fn marginals_uniform_under_chi_squared() {
        // 10k single-state draws; each dimension's empirical marginal must
        // pass a chi-squared test at alpha = 0.01.
        let space = paper_space();
        let none = BTreeSet::new();
        let mut counts = vec![
            vec![0usize; space.layers.len()],
            vec![0usize; space.heads.len()],
            vec![0usize; space.hidden.len()],
            vec![0usize; space.intermediate.len()],
            vec![0usize; space.activations.len()],
        ];
        let draws = 10_000;
        for i in 0..draws {
            let s = space.sample_random(1, 1000 + i as u64, &none).unwrap()[0];
            counts[0][space.layers.iter().position(|&v| v == s.hidden_layers).unwrap()] += 1;
            counts[1][space.heads.iter().position(|&v| v == s.attention_heads).unwrap()] += 1;
            counts[2][space.hidden.iter().position(|&v| v == s.hidden_size).unwrap()] += 1;
            counts[3][space
                .intermediate
                .iter()
                .position(|&v| v == s.intermediate_size)
                .unwrap()] += 1;
            counts[4][space
                .activations
                .iter()
                .position(|&v| v == s.activation)
                .unwrap()] += 1;
        }
        // Upper 0.01 quantiles of chi-squared for df = k - 1.
        let critical = |df: usize| match df {
            1 => 6.635,
            2 => 9.210,
            3 => 11.345,
            4 => 13.277,
            7 => 18.475,
            _ => panic!("unexpected df {df}"),
        };
        for dim in &counts {
            let k = dim.len();
            let expected = draws as f64 / k as f64;
            let chi2: f64 = dim
                .iter()
                .map(|&c| {
                    let d = c as f64 - expected;
                    d * d / expected
                })
                .sum();
            assert!(
                chi2 < critical(k - 1),
                "chi2 {chi2} exceeds critical for df {}",
                k - 1
            );
        }
    }
}
