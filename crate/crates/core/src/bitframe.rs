//! Bit sequences, permutations and channel noise.
//!
//! A [`BitFrame`] is the key material one party holds. Rounds reorder it
//! with a [`Permutation`] derived from the shared session seed, so both
//! parties arrive at the same reordering without exchanging it.
//!
//! Permutations use *scatter* semantics: applying `p` moves the bit at
//! source index `i` to target index `p[i]`.
//!
//! Two round-permutation generators are provided:
//!
//! * [`gen_shuffle_permutation`]: the interleave table of a perfect
//!   out-shuffle (`[0, h, 1, h + 1, ...]` with `h = ceil(n / 2)`), composed
//!   with itself `round + 1 + (seed mod 7)` times.
//! * [`gen_lcg_permutation`]: each index receives a key from a linear
//!   congruential stream (`a = 1664525`, `c = 1013904223`, `m = 2^32`) and
//!   the permutation is the stable argsort of those keys. The stream's
//!   starting state is derived from `(seed, round)` with [`derive_seed`].
//!
//! Randomness for frame generation and noise comes from [`SeededRng`],
//! a ChaCha8 stream cipher generator, which yields the same stream on every
//! platform for a given `(seed, stream)` pair.

use std::fmt;
use std::ops::Range;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// XOR-fold of a bit slice.
pub fn parity(bits: &[u8]) -> u8 {
    bits.iter().fold(0, |acc, b| acc ^ b)
}

/// A party's key material. Every element is 0 or 1.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitFrame {
    bits: Vec<u8>,
}

impl BitFrame {
    pub fn new(bits: Vec<u8>) -> Result<Self, ConfigError> {
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(ConfigError::InvalidBit { index, value });
        }
        Ok(Self { bits })
    }

    pub fn zeros(length: usize) -> Self {
        Self {
            bits: vec![0; length],
        }
    }

    /// Uniformly random frame of `length` bits.
    pub fn random<R: Rng + ?Sized>(length: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..length).map(|_| rng.gen::<bool>() as u8).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, index: usize) -> u8 {
        self.bits[index]
    }

    pub fn flip(&mut self, index: usize) {
        self.bits[index] ^= 1;
    }

    pub fn parity_of(&self, range: Range<usize>) -> u8 {
        parity(&self.bits[range])
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| b ^ 1).collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

impl fmt::Debug for BitFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitFrame({self})")
    }
}

impl fmt::Display for BitFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            f.write_str(if *b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for BitFrame {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.bytes()
            .enumerate()
            .map(|(index, c)| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                other => Err(ConfigError::InvalidBit { index, value: other }),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|bits| Self { bits })
    }
}

/// A bijection on `[0, len)`, stored as source index -> target index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self, ConfigError> {
        let length = mapping.len();
        let mut seen = vec![false; length];
        for &target in &mapping {
            if target >= length || std::mem::replace(&mut seen[target], true) {
                return Err(ConfigError::NotABijection { length });
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(length: usize) -> Self {
        Self {
            mapping: (0..length).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// Target index of source index `i`.
    pub fn target(&self, source: usize) -> usize {
        self.mapping[source]
    }

    pub fn invert(&self) -> Self {
        invert_permutation(self)
    }

    /// The permutation equivalent to applying `self`, then `next`.
    pub fn then(&self, next: &Permutation) -> Self {
        debug_assert_eq!(self.len(), next.len());
        Self {
            mapping: self.mapping.iter().map(|&t| next.mapping[t]).collect(),
        }
    }
}

/// Scatter `frame` through `p`: output bit at `p[i]` is input bit `i`.
pub fn apply_permutation(frame: &BitFrame, p: &Permutation) -> Result<BitFrame, ConfigError> {
    if frame.len() != p.len() {
        return Err(ConfigError::LengthMismatch {
            expected: frame.len(),
            found: p.len(),
        });
    }
    let mut bits = vec![0; frame.len()];
    for (source, &target) in p.mapping.iter().enumerate() {
        bits[target] = frame.bits[source];
    }
    Ok(BitFrame { bits })
}

pub fn invert_permutation(p: &Permutation) -> Permutation {
    let mut mapping = vec![0; p.len()];
    for (source, &target) in p.mapping.iter().enumerate() {
        mapping[target] = source;
    }
    Permutation { mapping }
}

/// Interleave table of one perfect out-shuffle. The first `ceil(n / 2)`
/// indices form the first half.
pub fn out_shuffle(length: usize) -> Permutation {
    let half = length.div_ceil(2);
    Permutation {
        mapping: (0..length)
            .map(|j| if j % 2 == 0 { j / 2 } else { half + j / 2 })
            .collect(),
    }
}

/// How many out-shuffles make up the permutation of `round`.
pub fn shuffle_applications(round: u32, seed: u64) -> u64 {
    u64::from(round) + 1 + seed % 7
}

pub fn gen_shuffle_permutation(length: usize, round: u32, seed: u64) -> Permutation {
    let step = out_shuffle(length);
    let mut p = Permutation::identity(length);
    for _ in 0..shuffle_applications(round, seed) {
        p = p.then(&step);
    }
    p
}

/// Linear congruential generator `x' = (a x + c) mod m`, with `m <= 2^32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lcg {
    pub a: u64,
    pub c: u64,
    pub m: u64,
}

impl Lcg {
    pub const STANDARD: Lcg = Lcg {
        a: 1_664_525,
        c: 1_013_904_223,
        m: 1 << 32,
    };

    pub fn next(&self, state: u64) -> u64 {
        (self.a.wrapping_mul(state).wrapping_add(self.c)) % self.m
    }

    /// `length` keys: `k_i = next^(i + 1)(state)`.
    pub fn keys(&self, mut state: u64, length: usize) -> Vec<u64> {
        (0..length)
            .map(|_| {
                state = self.next(state);
                state
            })
            .collect()
    }
}

/// Stable argsort of the LCG key stream started at `state`.
pub fn lcg_permutation(length: usize, lcg: Lcg, state: u64) -> Permutation {
    let keys = lcg.keys(state, length);
    let mut order: Vec<usize> = (0..length).collect();
    order.sort_by_key(|&i| keys[i]);
    Permutation { mapping: order }
}

pub fn gen_lcg_permutation(length: usize, round: u32, seed: u64) -> Permutation {
    let state = derive_seed(seed, &[0x4c43_47, u64::from(round)]) % Lcg::STANDARD.m;
    lcg_permutation(length, Lcg::STANDARD, state)
}

/// How each round's permutation is generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationKind {
    Shuffle,
    Lcg,
}

impl PermutationKind {
    pub fn generate(self, length: usize, round: u32, seed: u64) -> Permutation {
        match self {
            PermutationKind::Shuffle => gen_shuffle_permutation(length, round, seed),
            PermutationKind::Lcg => gen_lcg_permutation(length, round, seed),
        }
    }
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit seed from a base seed and a path of labels.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(base), |acc, &label| mix64(acc ^ mix64(label)))
}

/// Deterministic generator: ChaCha8 keyed by `seed`, on stream `stream`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Channel noise applied to Bob's copy of the frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Binary symmetric channel: each bit flips independently.
    Bsc { qber: f64 },
    /// Exactly `count` distinct, uniformly chosen positions flip.
    FixedErrors { count: usize },
}

impl NoiseSpec {
    pub fn validate(&self, length: usize) -> Result<(), ConfigError> {
        match *self {
            NoiseSpec::Bsc { qber } if !(qber > 0.0 && qber < 0.5) => Err(ConfigError::OutOfRange {
                name: "qber",
                value: qber,
                range: "(0, 0.5)",
            }),
            NoiseSpec::FixedErrors { count } if count > length => {
                Err(ConfigError::TooManyErrors { count, length })
            }
            _ => Ok(()),
        }
    }

    /// Expected error rate this noise produces on a frame of `length` bits.
    pub fn nominal_qber(&self, length: usize) -> f64 {
        match *self {
            NoiseSpec::Bsc { qber } => qber,
            NoiseSpec::FixedErrors { count } => count as f64 / length.max(1) as f64,
        }
    }
}

/// Returns the noisy frame and the number of flipped positions.
pub fn apply_noise<R: Rng + ?Sized>(
    frame: &BitFrame,
    spec: NoiseSpec,
    rng: &mut R,
) -> Result<(BitFrame, usize), ConfigError> {
    spec.validate(frame.len())?;
    let mut out = frame.clone();
    let flipped = match spec {
        NoiseSpec::Bsc { qber } => {
            let mut flipped = 0;
            for bit in out.bits.iter_mut() {
                if rng.gen::<f64>() < qber {
                    *bit ^= 1;
                    flipped += 1;
                }
            }
            flipped
        }
        NoiseSpec::FixedErrors { count } => {
            for position in index::sample(rng, frame.len(), count).iter() {
                out.bits[position] ^= 1;
            }
            count
        }
    };
    Ok((out, flipped))
}

pub fn hamming_distance(a: &BitFrame, b: &BitFrame) -> Result<usize, ConfigError> {
    if a.len() != b.len() {
        return Err(ConfigError::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    fn frame(s: &str) -> BitFrame {
        s.parse().unwrap()
    }

    fn perm(m: &[usize]) -> Permutation {
        Permutation::new(m.to_vec()).unwrap()
    }

    fn is_bijection(p: &Permutation) -> bool {
        let mut seen = vec![false; p.len()];
        p.mapping().iter().all(|&t| t < seen.len() && !std::mem::replace(&mut seen[t], true))
    }

    #[test]
    fn parity_examples() {
        assert_eq!(parity(&[1, 0, 1, 1]), 1);
        assert_eq!(parity(&[0; 37]), 0);
        assert_eq!(parity(&[1, 1, 1, 1, 1]), 1);
        assert_eq!(parity(&[]), 0);
    }

    #[test]
    fn rejects_non_binary_values() {
        assert_eq!(
            BitFrame::new(vec![0, 1, 2]),
            Err(ConfigError::InvalidBit { index: 2, value: 2 })
        );
        assert!("01x".parse::<BitFrame>().is_err());
    }

    #[test]
    fn scatter_matches_index_by_index_oracle() {
        let f = frame("101");
        let p = perm(&[2, 0, 1]);
        let out = apply_permutation(&f, &p).unwrap();
        let mut oracle = [9u8; 3];
        for i in 0..3 {
            oracle[p.target(i)] = f.get(i);
        }
        assert_eq!(out.bits(), &oracle);
        assert_eq!(out, frame("011"));
    }

    #[test]
    fn identity_and_length_mismatch() {
        let f = frame("110100");
        assert_eq!(apply_permutation(&f, &Permutation::identity(6)).unwrap(), f);
        assert!(matches!(
            apply_permutation(&f, &Permutation::identity(5)),
            Err(ConfigError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn inverse_matches_brute_force_table() {
        let p = perm(&[2, 0, 1]);
        let mut table = vec![usize::MAX; 3];
        for i in 0..3 {
            for j in 0..3 {
                if p.target(j) == i {
                    table[i] = j;
                }
            }
        }
        assert_eq!(invert_permutation(&p).mapping(), &table[..]);
        assert_eq!(invert_permutation(&p).mapping(), &[1, 2, 0]);
        assert_eq!(Permutation::identity(4).invert(), Permutation::identity(4));
    }

    #[test]
    fn rejects_non_bijective_mapping() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn out_shuffle_enumerated_by_definition() {
        // First half 0..4 and second half 4..8, taken alternately.
        let first: Vec<usize> = (0..4).collect();
        let second: Vec<usize> = (4..8).collect();
        let mut interleave = Vec::new();
        for i in 0..4 {
            interleave.push(first[i]);
            interleave.push(second[i]);
        }
        assert_eq!(out_shuffle(8).mapping(), &interleave[..]);
        assert_eq!(out_shuffle(8).mapping(), &[0, 4, 1, 5, 2, 6, 3, 7]);
        // Odd lengths put the larger half first.
        assert_eq!(out_shuffle(5).mapping(), &[0, 3, 1, 4, 2]);
    }

    #[test]
    fn shuffle_length_one_and_bijections() {
        assert_eq!(gen_shuffle_permutation(1, 0, 99).mapping(), &[0]);
        for length in 1..=64 {
            for round in 0..4 {
                assert!(is_bijection(&gen_shuffle_permutation(length, round, 11)));
            }
        }
    }

    #[test]
    fn shuffle_consecutive_rounds_differ() {
        for length in 3..=64 {
            for seed in 0..7 {
                for round in 0..6 {
                    assert_ne!(
                        gen_shuffle_permutation(length, round, seed),
                        gen_shuffle_permutation(length, round + 1, seed),
                        "length {length} round {round} seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn lcg_keys_and_argsort_match_frozen_values() {
        let lcg = Lcg::STANDARD;
        assert_eq!(
            lcg.keys(1, 4),
            vec![1015568748, 1586005467, 2165703038, 3027450565]
        );
        assert_eq!(lcg_permutation(4, lcg, 1).mapping(), &[0, 1, 2, 3]);
        assert_eq!(lcg_permutation(8, lcg, 1).mapping(), &[4, 0, 1, 5, 2, 7, 3, 6]);
        assert_eq!(lcg_permutation(6, lcg, 12345).mapping(), &[1, 0, 5, 2, 3, 4]);
    }

    #[test]
    fn lcg_argsort_matches_insertion_sort_oracle() {
        for state in [0u64, 1, 7, 0xdead_beef] {
            let keys = Lcg::STANDARD.keys(state, 40);
            let mut order: Vec<usize> = Vec::new();
            for i in 0..keys.len() {
                let at = order.iter().position(|&j| keys[j] > keys[i]).unwrap_or(order.len());
                order.insert(at, i);
            }
            assert_eq!(lcg_permutation(40, Lcg::STANDARD, state).mapping(), &order[..]);
        }
    }

    #[test]
    fn lcg_duplicate_keys_keep_stable_order() {
        let tiny = Lcg { a: 1, c: 1, m: 4 };
        assert_eq!(tiny.keys(0, 6), vec![1, 2, 3, 0, 1, 2]);
        assert_eq!(lcg_permutation(6, tiny, 0).mapping(), &[3, 0, 4, 1, 5, 2]);
    }

    #[test]
    fn lcg_generator_properties() {
        assert_eq!(gen_lcg_permutation(1, 3, 5).mapping(), &[0]);
        for length in 1..=64 {
            assert!(is_bijection(&gen_lcg_permutation(length, 2, 17)));
        }
        assert_eq!(gen_lcg_permutation(100, 1, 9), gen_lcg_permutation(100, 1, 9));
        assert_ne!(gen_lcg_permutation(100, 1, 9), gen_lcg_permutation(100, 2, 9));
    }

    #[test]
    fn fixed_errors_flip_exact_count() {
        let mut rng = SeededRng::new(3);
        let f = BitFrame::random(512, &mut rng);
        let (noisy, flipped) = apply_noise(&f, NoiseSpec::FixedErrors { count: 3 }, &mut rng).unwrap();
        assert_eq!(flipped, 3);
        assert_eq!(hamming_distance(&f, &noisy).unwrap(), 3);
        assert_eq!(
            apply_noise(&f, NoiseSpec::FixedErrors { count: 513 }, &mut rng),
            Err(ConfigError::TooManyErrors { count: 513, length: 512 })
        );
    }

    struct HighDraws;

    impl RngCore for HighDraws {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.fill(0xff)
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
            dest.fill(0xff);
            Ok(())
        }
    }

    #[test]
    fn bsc_with_high_draws_flips_nothing() {
        let f = BitFrame::zeros(1000);
        let (noisy, flipped) = apply_noise(&f, NoiseSpec::Bsc { qber: 0.45 }, &mut HighDraws).unwrap();
        assert_eq!(flipped, 0);
        assert_eq!(noisy, f);
    }

    #[test]
    fn bsc_rejects_out_of_range_qber() {
        let f = BitFrame::zeros(10);
        for qber in [0.0, 0.5, -0.1, 0.7] {
            assert!(apply_noise(&f, NoiseSpec::Bsc { qber }, &mut SeededRng::new(0)).is_err());
        }
    }

    #[test]
    fn bsc_flip_count_matches_binomial_statistics() {
        let (n, q) = (20480usize, 0.02);
        let mean = n as f64 * q;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        let f = BitFrame::zeros(n);
        let trials: Vec<usize> = (0..3)
            .map(|t| apply_noise(&f, NoiseSpec::Bsc { qber: q }, &mut SeededRng::new(100 + t)).unwrap().1)
            .collect();
        let observed = trials.iter().sum::<usize>() as f64 / 3.0;
        assert!((observed - mean).abs() < 5.0 * sigma, "{observed} vs {mean}");

        let many: Vec<f64> = (0..200)
            .map(|t| apply_noise(&f, NoiseSpec::Bsc { qber: q }, &mut SeededRng::new(1000 + t)).unwrap().1 as f64)
            .collect();
        let avg = many.iter().sum::<f64>() / many.len() as f64;
        assert!((avg - mean).abs() < 5.0 * sigma / (many.len() as f64).sqrt());
    }

    #[test]
    fn hamming_examples() {
        let a = frame("1011001");
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&frame("101"), &frame("001")).unwrap(), 1);
        assert_eq!(hamming_distance(&a, &a.complement()).unwrap(), 7);
        assert!(hamming_distance(&a, &frame("10")).is_err());
    }

    #[test]
    fn seeded_rng_is_reproducible() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        // Pinned so a change of generator is noticed.
        assert_eq!(SeededRng::new(0).next_u64(), 0xb585f767a79a3b6c);
        assert_ne!(SeededRng::with_stream(42, 1).next_u64(), xs[0]);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..20 {
            for b in 0..20 {
                assert!(seen.insert(derive_seed(7, &[a, b])));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn permutation_round_trip(seed in any::<u64>(), length in 1usize..300, round in 0u32..8) {
            let mut rng = SeededRng::new(seed);
            let f = BitFrame::random(length, &mut rng);
            for p in [gen_lcg_permutation(length, round, seed), gen_shuffle_permutation(length, round, seed)] {
                let moved = apply_permutation(&f, &p).unwrap();
                prop_assert_eq!(moved.len(), f.len());
                prop_assert_eq!(moved.count_ones(), f.count_ones());
                prop_assert_eq!(parity(moved.bits()), parity(f.bits()));
                prop_assert_eq!(apply_permutation(&moved, &p.invert()).unwrap(), f.clone());
                prop_assert_eq!(p.invert().invert(), p.clone());
            }
        }

        #[test]
        fn large_generated_permutations_are_bijections(seed in any::<u64>(), length in 65usize..5000) {
            prop_assert!(is_bijection(&gen_lcg_permutation(length, 1, seed)));
            prop_assert!(is_bijection(&gen_shuffle_permutation(length, 1, seed)));
        }
    }
}
