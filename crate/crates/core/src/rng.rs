//! Seeded random-bit source with exact bit accounting.
//!
//! Every random decision in this crate is driven by a [`BitSource`], which
//! counts exactly how many bits it has handed out. The counter is what the
//! randomness-budget experiments audit.
//!
//! The base generator is SplitMix64, pinned as a frozen constant of the
//! repository so golden values stay stable: the word stream is
//! `mix(seed + i*GAMMA)` for `i = 1, 2, ...`, and bits are emitted from each
//! word least-significant first. A source can also replay a fixed bit tape,
//! which the exhaustive uniformity tests and forced-configuration tests use.

use crate::{Error, Result};

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent seed from a base seed and a stream key.
///
/// Used by experiment drivers to give each trial its own source, and by
/// noise-injecting operators to key per-call draws.
pub fn split_seed(seed: u64, key: u64) -> u64 {
    mix(seed ^ mix(key.wrapping_mul(GAMMA).wrapping_add(GAMMA)))
}

/// Parse a seed given as decimal or 0x-prefixed hex.
pub fn parse_seed(s: &str) -> Result<u64> {
    let s = s.trim();
    let parsed = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        s.parse()
    };
    parsed.map_err(|_| Error::invalid(format!("seed `{s}` is not decimal or 0x-hex")))
}

enum Backend {
    SplitMix { state: u64 },
    Tape { bits: Vec<u8>, pos: usize },
}

/// Deterministic bit stream with an exact consumed-bit counter.
///
/// Identical seeds and identical call sequences produce identical bit
/// streams and identical counters. A source is single-owner; parallel
/// drivers create independent sources from distinct seeds.
pub struct BitSource {
    seed: u64,
    backend: Backend,
    buf: u64,
    buf_len: u32,
    bits_consumed: u64,
}

impl BitSource {
    pub fn new(seed: u64) -> Self {
        BitSource {
            seed,
            backend: Backend::SplitMix { state: seed },
            buf: 0,
            buf_len: 0,
            bits_consumed: 0,
        }
    }

    /// A source that replays `bits` (each 0 or 1) and panics when exhausted.
    pub fn from_tape(bits: Vec<u8>) -> Self {
        assert!(bits.iter().all(|&b| b <= 1), "tape entries must be 0 or 1");
        BitSource {
            seed: 0,
            backend: Backend::Tape { bits, pos: 0 },
            buf: 0,
            buf_len: 0,
            bits_consumed: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total bits handed out so far.
    pub fn bits_consumed(&self) -> u64 {
        self.bits_consumed
    }

    /// Next single bit of the stream.
    pub fn next_bit(&mut self) -> u8 {
        self.bits_consumed += 1;
        match &mut self.backend {
            Backend::SplitMix { state } => {
                if self.buf_len == 0 {
                    *state = state.wrapping_add(GAMMA);
                    self.buf = mix(*state);
                    self.buf_len = 64;
                }
                let b = (self.buf & 1) as u8;
                self.buf >>= 1;
                self.buf_len -= 1;
                b
            }
            Backend::Tape { bits, pos } => {
                assert!(*pos < bits.len(), "bit tape exhausted at position {pos}");
                let b = bits[*pos];
                *pos += 1;
                b
            }
        }
    }

    /// Next `k` bits as a 0/1 vector. `k = 0` returns an empty vector and
    /// leaves the counter unchanged.
    pub fn next_bits(&mut self, k: usize) -> Vec<u8> {
        (0..k).map(|_| self.next_bit()).collect()
    }

    /// Next `k <= 64` bits packed into a word, bit `i` of the result being
    /// the `i`-th bit drawn.
    pub fn next_bits_u64(&mut self, k: u32) -> u64 {
        assert!(k <= 64);
        let mut w = 0u64;
        for i in 0..k {
            w |= (self.next_bit() as u64) << i;
        }
        w
    }

    /// A ±1 sign: bit 0 maps to +1, bit 1 to −1.
    pub fn next_sign(&mut self) -> i8 {
        1 - 2 * self.next_bit() as i8
    }

    /// Exactly uniform integer in `[0, m)` by rejection sampling on
    /// `ceil(log2 m)` bits per attempt. `m = 1` consumes no bits.
    ///
    /// Expected cost is below `2*ceil(log2 m)` bits. A cap of 128 rejections
    /// aborts with a diagnostic; reaching it means the underlying generator
    /// is broken (probability ≤ 2^-128 otherwise).
    pub fn uniform_int(&mut self, m: u64) -> u64 {
        assert!(m >= 1, "uniform_int requires m >= 1");
        if m == 1 {
            return 0;
        }
        let width = 64 - (m - 1).leading_zeros();
        for _ in 0..128 {
            let v = self.next_bits_u64(width);
            if v < m {
                return v;
            }
        }
        panic!("uniform_int({m}): 128 consecutive rejections; generator is broken");
    }

    /// Uniform `K`-subset of `{1, ..., n}`, sorted ascending.
    ///
    /// A partial Fisher–Yates walk driven by `U_1 ~ Unif([n])`,
    /// `U_2 ~ Unif([n-1])`, ...: the ordered sample is uniform over
    /// injections, so the returned set hits every `K`-subset with
    /// probability exactly `1/C(n,K)`.
    pub fn sample_k_subset(&mut self, n: u64, k: u64) -> Result<Vec<u64>> {
        if k < 1 || k > n {
            return Err(Error::invalid(format!(
                "sample_k_subset requires 1 <= K <= n, got K={k}, n={n}"
            )));
        }
        // Virtual swap table: position -> displaced value, for O(K) memory.
        let mut swapped: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(k as usize);
        for t in 0..k {
            let r = self.uniform_int(n - t);
            let pick = *swapped.get(&r).unwrap_or(&r);
            let last = n - t - 1;
            let last_val = *swapped.get(&last).unwrap_or(&last);
            swapped.insert(r, last_val);
            out.push(pick + 1);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Uniform value in `[0, 1)` with 32 bits of resolution.
    pub fn uniform_f64(&mut self) -> f64 {
        self.next_bits_u64(32) as f64 / (1u64 << 32) as f64
    }

    /// Standard normal via Box–Muller. Experiment-grade, not bit-budgeted
    /// machinery: the perturbation construction itself never calls this.
    pub fn gauss(&mut self) -> f64 {
        let u1 = (self.next_bits_u64(32) as f64 + 1.0) / (1u64 << 32) as f64;
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bits_consumes_nothing() {
        let mut src = BitSource::new(1);
        assert!(src.next_bits(0).is_empty());
        assert_eq!(src.bits_consumed(), 0);
    }

    #[test]
    fn stream_is_prefix_consistent() {
        let mut a = BitSource::new(42);
        let mut b = BitSource::new(42);
        let two_calls: Vec<u8> = [a.next_bits(8), a.next_bits(8)].concat();
        let one_call = b.next_bits(16);
        assert_eq!(two_calls, one_call);
        assert_eq!(a.bits_consumed(), 16);
        assert_eq!(b.bits_consumed(), 16);
    }

    #[test]
    fn golden_first_64_bits_of_seed_42() {
        // Frozen once from the pinned SplitMix64 stream.
        let mut src = BitSource::new(42);
        let word = src.next_bits_u64(64);
        assert_eq!(word, GOLDEN_SEED42_WORD);
        assert_eq!(src.bits_consumed(), 64);
    }

    // Recorded from the generator at freeze time; see golden test above.
    const GOLDEN_SEED42_WORD: u64 = 0x27a53bba2b0bd08f;

    #[test]
    fn uniform_int_singleton_consumes_no_bits() {
        let mut src = BitSource::new(7);
        for _ in 0..100 {
            assert_eq!(src.uniform_int(1), 0);
        }
        assert_eq!(src.bits_consumed(), 0);
    }

    #[test]
    fn uniform_int_two_is_a_fair_bit() {
        let mut src = BitSource::new(3);
        let n = 100_000;
        let ones: u64 = (0..n).map(|_| src.uniform_int(2)).sum();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.01, "freq = {freq}");
        assert_eq!(src.bits_consumed(), n);
    }

    #[test]
    fn uniform_int_six_passes_chi_square() {
        let mut src = BitSource::new(11);
        let n = 100_000usize;
        let mut counts = [0u64; 6];
        for _ in 0..n {
            counts[src.uniform_int(6) as usize] += 1;
        }
        let expected = n as f64 / 6.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let p = crate::stats::chi_square_pvalue(stat, 5);
        assert!(p > 0.001, "chi-square stat {stat}, p = {p}");
    }

    #[test]
    fn subset_full_set_is_identity() {
        let mut src = BitSource::new(5);
        for _ in 0..10 {
            assert_eq!(src.sample_k_subset(5, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn subset_rejects_oversized_k() {
        let mut src = BitSource::new(5);
        assert!(src.sample_k_subset(4, 5).is_err());
        assert!(src.sample_k_subset(4, 0).is_err());
    }

    #[test]
    fn subset_singletons_are_uniform() {
        let mut src = BitSource::new(17);
        let n = 100_000;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            let s = src.sample_k_subset(4, 1).unwrap();
            counts[(s[0] - 1) as usize] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() <= 0.01, "freq = {freq}");
        }
    }

    #[test]
    fn subset_6_choose_3_is_uniform() {
        let mut src = BitSource::new(23);
        let n = 100_000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let s = src.sample_k_subset(6, 3).unwrap();
            *counts.entry(s).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 20);
        let expected = n as f64 / 20.0;
        let stat: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let p = crate::stats::chi_square_pvalue(stat, 19);
        assert!(p > 0.001, "chi-square stat {stat}, p = {p}");
    }

    #[test]
    fn subset_exhaustive_tape_sweep_n4_k2() {
        // n=4 needs one uniform_int(4) (2 bits) and one uniform_int(3)
        // (2 bits, with rejection). Sweeping all tapes of the maximum
        // accepted length and weighting by tape probability must give every
        // 2-subset of [4] probability exactly 1/6.
        let mut probs = std::collections::HashMap::new();
        // Enumerate rejection-free outcomes directly: U1 in [0,4), then the
        // second draw retries on value 3. Tape = U1 bits, then up to R
        // rejected patterns followed by an accepted one.
        fn visit(
            u1: u64,
            rejections: u32,
            u2: u64,
            probs: &mut std::collections::HashMap<Vec<u64>, f64>,
        ) {
            let p = 0.25 * 0.25f64.powi(rejections as i32 + 1);
            let mut src = BitSource::from_tape(tape_for(u1, rejections, u2));
            let s = src.sample_k_subset(4, 2).unwrap();
            *probs.entry(s).or_insert(0.0) += p;
        }
        fn tape_for(u1: u64, rejections: u32, u2: u64) -> Vec<u8> {
            let mut t = vec![(u1 & 1) as u8, ((u1 >> 1) & 1) as u8];
            for _ in 0..rejections {
                t.extend_from_slice(&[1, 1]); // value 3 >= m=3, rejected
            }
            t.extend_from_slice(&[(u2 & 1) as u8, ((u2 >> 1) & 1) as u8]);
            t
        }
        for u1 in 0..4 {
            for rejections in 0..40 {
                for u2 in 0..3 {
                    visit(u1, rejections, u2, &mut probs);
                }
            }
        }
        assert_eq!(probs.len(), 6);
        for (s, p) in probs {
            assert!((p - 1.0 / 6.0).abs() < 1e-12, "subset {s:?} has prob {p}");
        }
    }

    #[test]
    fn subset_bit_budget_stays_within_4k_log2n() {
        for n in [64u64, 256, 1024] {
            let mut src = BitSource::new(split_seed(9, n));
            let k = 8u64;
            let calls = 1000u64;
            for _ in 0..calls {
                src.sample_k_subset(n, k).unwrap();
            }
            let per_call = src.bits_consumed() as f64 / calls as f64;
            let budget = 4.0 * k as f64 * (n as f64).log2();
            assert!(per_call <= budget, "n={n}: {per_call} bits > {budget}");
        }
    }

    #[test]
    fn tape_replays_and_counts() {
        let mut src = BitSource::from_tape(vec![1, 0, 1, 1]);
        assert_eq!(src.next_bits(4), vec![1, 0, 1, 1]);
        assert_eq!(src.bits_consumed(), 4);
    }

    #[test]
    #[should_panic(expected = "tape exhausted")]
    fn tape_exhaustion_panics() {
        let mut src = BitSource::from_tape(vec![0]);
        src.next_bits(2);
    }

    #[test]
    fn parse_seed_accepts_decimal_and_hex() {
        assert_eq!(parse_seed("42").unwrap(), 42);
        assert_eq!(parse_seed("0x2a").unwrap(), 42);
        assert_eq!(parse_seed("0X2A").unwrap(), 42);
        assert!(parse_seed("zzz").is_err());
    }
}
