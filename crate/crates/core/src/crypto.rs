//! Classical primitives: 2-universal Toeplitz hashing, variable-length key
//! padding, syndrome-based information reconciliation, and one-time pads.
//!
//! Bit strings serialize as lowercase hex with an explicit bit length; bit
//! `8k+i` of a string sits at position `i` (LSB first) of byte `k`, i.e.
//! little-endian bit order within bytes.

use num_rational::Ratio;
use rand::Rng as _;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rng::Rng;
use crate::stats::{binary_entropy, choose_saturating};

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("bit length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("seed has {got} bits, expected {want}")]
    BadSeedLength { got: usize, want: usize },
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("decode ball holds {ball} candidates, exceeding the cap {cap}")]
    Resource { ball: u128, cap: u128 },
    #[error("invalid hex payload: {0}")]
    BadHex(String),
    #[error("padded key has no marker bit")]
    BadPadding,
}

/// An immutable bit string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Bits {
    bits: Vec<bool>,
}

impl Bits {
    pub fn new(bits: Vec<bool>) -> Self {
        Bits { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Bits {
            bits: vec![false; len],
        }
    }

    pub fn random(len: usize, rng: &mut Rng) -> Self {
        Bits {
            bits: (0..len).map(|_| rng.gen()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn xor(&self, other: &Bits) -> Result<Bits, CryptoError> {
        if self.len() != other.len() {
            return Err(CryptoError::LengthMismatch(self.len(), other.len()));
        }
        Ok(Bits {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| a ^ b)
                .collect(),
        })
    }

    pub fn hamming_distance(&self, other: &Bits) -> Result<usize, CryptoError> {
        if self.len() != other.len() {
            return Err(CryptoError::LengthMismatch(self.len(), other.len()));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Hex encoding, little-endian bit order within bytes; the final partial
    /// byte is zero-padded in its high bits.
    pub fn to_hex(&self) -> String {
        let mut bytes = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(hex: &str, bit_len: usize) -> Result<Self, CryptoError> {
        if hex.len() != bit_len.div_ceil(8) * 2 {
            return Err(CryptoError::BadHex(format!(
                "{} hex chars for {} bits",
                hex.len(),
                bit_len
            )));
        }
        let mut bytes = Vec::with_capacity(hex.len() / 2);
        for i in (0..hex.len()).step_by(2) {
            let byte = u8::from_str_radix(&hex[i..i + 2], 16)
                .map_err(|e| CryptoError::BadHex(e.to_string()))?;
            bytes.push(byte);
        }
        let bits = (0..bit_len)
            .map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1)
            .collect();
        Ok(Bits { bits })
    }

    /// Packs into u64 words, bit `i` at word `i/64`, position `i%64`.
    pub fn to_words(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.bits.len().div_ceil(64).max(1)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        words
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            hex: &'a str,
            bit_len: usize,
        }
        let hex = self.to_hex();
        Repr {
            hex: &hex,
            bit_len: self.len(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            hex: String,
            bit_len: usize,
        }
        let repr = Repr::deserialize(deserializer)?;
        Bits::from_hex(&repr.hex, repr.bit_len).map_err(D::Error::custom)
    }
}

/// Bitwise XOR of two equal-length strings (the one-time pad).
pub fn otp_xor(a: &Bits, b: &Bits) -> Result<Bits, CryptoError> {
    a.xor(b)
}

/// A Toeplitz hash `h: {0,1}^s → {0,1}^n` defined by an `(s+n-1)`-bit
/// diagonal seed: matrix entry `T[i][j] = seed[s-1+i-j]`.
///
/// The family over uniform seeds is 2-universal and each member is linear:
/// `h(x⊕y) = h(x)⊕h(y)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToeplitzHash {
    input_len: usize,
    output_len: usize,
    seed: Bits,
}

impl ToeplitzHash {
    pub fn new(input_len: usize, output_len: usize, seed: Bits) -> Result<Self, CryptoError> {
        if output_len > input_len {
            return Err(CryptoError::BadParams(format!(
                "output length {output_len} exceeds input length {input_len}"
            )));
        }
        let want = input_len + output_len - 1;
        if seed.len() != want {
            return Err(CryptoError::BadSeedLength {
                got: seed.len(),
                want,
            });
        }
        Ok(ToeplitzHash {
            input_len,
            output_len,
            seed,
        })
    }

    pub fn sample(input_len: usize, output_len: usize, rng: &mut Rng) -> Result<Self, CryptoError> {
        let seed = Bits::random(input_len + output_len - 1, rng);
        ToeplitzHash::new(input_len, output_len, seed)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn seed(&self) -> &Bits {
        &self.seed
    }

    /// GF(2) matrix-vector product of the Toeplitz matrix with `x`.
    pub fn apply(&self, x: &Bits) -> Result<Bits, CryptoError> {
        if x.len() != self.input_len {
            return Err(CryptoError::LengthMismatch(x.len(), self.input_len));
        }
        let s = self.input_len;
        let mut out = vec![false; self.output_len];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = false;
            for j in 0..s {
                acc ^= self.seed.bit(s - 1 + i - j) & x.bit(j);
            }
            *o = acc;
        }
        Ok(Bits::new(out))
    }
}

/// Injective padding of a key of length `≤ max_len` into `max_len + 1` bits:
/// `k ↦ k · 1 · 0^{max_len - |k|}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedKey {
    bits: Bits,
}

impl PaddedKey {
    pub fn pad(key: &Bits, max_len: usize) -> Result<Self, CryptoError> {
        if key.len() > max_len {
            return Err(CryptoError::BadParams(format!(
                "key length {} exceeds maximum {max_len}",
                key.len()
            )));
        }
        let mut bits = key.as_slice().to_vec();
        bits.push(true);
        bits.resize(max_len + 1, false);
        Ok(PaddedKey {
            bits: Bits::new(bits),
        })
    }

    pub fn bits(&self) -> &Bits {
        &self.bits
    }

    /// Inverse of [`PaddedKey::pad`]: strips the trailing `1 0^k` marker.
    pub fn strip(&self) -> Result<Bits, CryptoError> {
        let slice = self.bits.as_slice();
        let marker = slice
            .iter()
            .rposition(|&b| b)
            .ok_or(CryptoError::BadPadding)?;
        Ok(Bits::new(slice[..marker].to_vec()))
    }
}

/// Default cap on the number of candidates a bounded-distance decode may
/// enumerate.
pub const DEFAULT_DECODE_CAP: u128 = 1 << 24;

/// Result of a bounded-distance syndrome decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeOutcome {
    /// Exactly one ball member at the smallest distance matches the
    /// syndrome.
    Unique { key: Bits, distance: usize },
    /// Several ball members at the smallest distance match; the
    /// lexicographically smallest (bit 0 most significant) is returned.
    Ambiguous {
        key: Bits,
        distance: usize,
        ties: usize,
    },
    /// No ball member matches the syndrome.
    NotFound,
}

impl DecodeOutcome {
    pub fn key(&self) -> Option<&Bits> {
        match self {
            DecodeOutcome::Unique { key, .. } | DecodeOutcome::Ambiguous { key, .. } => Some(key),
            DecodeOutcome::NotFound => None,
        }
    }
}

/// A random linear parity-check code for information reconciliation.
///
/// The syndrome has `r = ceil(h2(2ε)·len + log2(1/λ_EC))` bits; decoding
/// searches the Hamming ball of radius `floor(2ε·len)` around the received
/// word for a string with the given syndrome.
#[derive(Debug, Clone)]
pub struct SyndromeCode {
    len: usize,
    redundancy: usize,
    radius: usize,
    cap: u128,
    /// Column `j` of the parity-check matrix, packed into words.
    columns: Vec<Vec<u64>>,
    words: usize,
}

impl SyndromeCode {
    pub fn sample(
        len: usize,
        epsilon: f64,
        lambda_ec: f64,
        cap: u128,
        rng: &mut Rng,
    ) -> Result<Self, CryptoError> {
        if len == 0 {
            return Err(CryptoError::BadParams("empty code".into()));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(CryptoError::BadParams(format!(
                "epsilon {epsilon} outside (0, 0.5)"
            )));
        }
        if !(lambda_ec > 0.0 && lambda_ec <= 1.0) {
            return Err(CryptoError::BadParams(format!(
                "lambda_EC {lambda_ec} outside (0, 1]"
            )));
        }
        let r_exact = binary_entropy(2.0 * epsilon) * len as f64 + (1.0 / lambda_ec).log2();
        let redundancy = r_exact.ceil() as usize;
        if redundancy > len {
            return Err(CryptoError::BadParams(format!(
                "syndrome length {redundancy} exceeds codeword length {len}"
            )));
        }
        let radius = (2.0 * epsilon * len as f64).floor() as usize;
        if radius * 2 >= len {
            return Err(CryptoError::BadParams(format!(
                "decode radius {radius} is not below len/2 = {}",
                len as f64 / 2.0
            )));
        }
        let words = redundancy.div_ceil(64);
        let columns = (0..len)
            .map(|_| {
                let mut col = vec![0u64; words];
                for (w, word) in col.iter_mut().enumerate() {
                    let bits_here = (redundancy - w * 64).min(64);
                    let mask = if bits_here == 64 {
                        u64::MAX
                    } else {
                        (1u64 << bits_here) - 1
                    };
                    *word = rng.gen::<u64>() & mask;
                }
                col
            })
            .collect();
        Ok(SyndromeCode {
            len,
            redundancy,
            radius,
            cap,
            columns,
            words,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn redundancy(&self) -> usize {
        self.redundancy
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Total number of candidates in the decode ball, saturating.
    pub fn ball_size(&self) -> u128 {
        (0..=self.radius)
            .map(|w| choose_saturating(self.len as u64, w as u64))
            .fold(0u128, |a, b| a.saturating_add(b))
    }

    fn syndrome_words(&self, k: &Bits) -> Vec<u64> {
        let mut acc = vec![0u64; self.words];
        for (j, &bit) in k.as_slice().iter().enumerate() {
            if bit {
                for (a, c) in acc.iter_mut().zip(&self.columns[j]) {
                    *a ^= c;
                }
            }
        }
        acc
    }

    /// The r-bit syndrome of an l-bit string (parity-check product).
    pub fn syndrome_of(&self, k: &Bits) -> Result<Bits, CryptoError> {
        if k.len() != self.len {
            return Err(CryptoError::LengthMismatch(k.len(), self.len));
        }
        let words = self.syndrome_words(k);
        Ok(Bits::new(
            (0..self.redundancy)
                .map(|i| (words[i / 64] >> (i % 64)) & 1 == 1)
                .collect(),
        ))
    }

    /// Bounded-distance decode: find the string in the radius ball around
    /// `k_b` whose syndrome equals `syn_a`, enumerating candidates by
    /// increasing Hamming distance.
    pub fn decode(&self, k_b: &Bits, syn_a: &Bits) -> Result<DecodeOutcome, CryptoError> {
        if k_b.len() != self.len {
            return Err(CryptoError::LengthMismatch(k_b.len(), self.len));
        }
        if syn_a.len() != self.redundancy {
            return Err(CryptoError::LengthMismatch(syn_a.len(), self.redundancy));
        }
        let ball = self.ball_size();
        if ball > self.cap {
            return Err(CryptoError::Resource {
                ball,
                cap: self.cap,
            });
        }
        // Residual syndrome the error pattern must explain.
        let mut target = self.syndrome_words(k_b);
        let syn_words = {
            let mut w = vec![0u64; self.words];
            for (i, &b) in syn_a.as_slice().iter().enumerate() {
                if b {
                    w[i / 64] |= 1 << (i % 64);
                }
            }
            w
        };
        for (t, s) in target.iter_mut().zip(&syn_words) {
            *t ^= s;
        }

        let mut hits: Vec<Vec<usize>> = Vec::new();
        for weight in 0..=self.radius {
            let mut positions = Vec::with_capacity(weight);
            let mut acc = vec![0u64; self.words];
            self.enumerate_level(weight, 0, &mut positions, &mut acc, &target, &mut hits);
            if !hits.is_empty() {
                let mut candidates: Vec<Bits> = hits
                    .iter()
                    .map(|pos| {
                        let mut bits = k_b.as_slice().to_vec();
                        for &p in pos {
                            bits[p] = !bits[p];
                        }
                        Bits::new(bits)
                    })
                    .collect();
                // Lexicographic with bit 0 most significant.
                candidates.sort_by(|a, b| a.as_slice().cmp(b.as_slice()));
                let ties = candidates.len();
                let key = candidates.swap_remove(0);
                return Ok(if ties == 1 {
                    DecodeOutcome::Unique {
                        key,
                        distance: weight,
                    }
                } else {
                    DecodeOutcome::Ambiguous {
                        key,
                        distance: weight,
                        ties,
                    }
                });
            }
        }
        Ok(DecodeOutcome::NotFound)
    }

    fn enumerate_level(
        &self,
        remaining: usize,
        start: usize,
        positions: &mut Vec<usize>,
        acc: &mut Vec<u64>,
        target: &[u64],
        hits: &mut Vec<Vec<usize>>,
    ) {
        if remaining == 0 {
            if acc == target {
                hits.push(positions.clone());
            }
            return;
        }
        for j in start..=self.len - remaining {
            for (a, c) in acc.iter_mut().zip(&self.columns[j]) {
                *a ^= c;
            }
            positions.push(j);
            self.enumerate_level(remaining - 1, j + 1, positions, acc, target, hits);
            positions.pop();
            for (a, c) in acc.iter_mut().zip(&self.columns[j]) {
                *a ^= c;
            }
        }
    }
}

/// A finite side-information model for the one-time-pad symmetry self-test:
/// a rational distribution over `Z ∈ {0,1}^s` and a rational conditional
/// distribution over classical side-information labels.
#[derive(Debug, Clone)]
pub struct OtpSideInfo {
    /// `P(Z = z)`, indexed by z; must sum to 1.
    pub z_dist: Vec<Ratio<u64>>,
    /// `P(E = e | Z = z)`, rows indexed by z; each row sums to 1.
    pub cond: Vec<Vec<Ratio<u64>>>,
}

impl OtpSideInfo {
    fn validate(&self, s: usize) -> Result<(), CryptoError> {
        let size = 1usize << s;
        if self.z_dist.len() != size || self.cond.len() != size {
            return Err(CryptoError::BadParams("side-info tables sized wrong".into()));
        }
        let one = Ratio::new(1u64, 1u64);
        if self.z_dist.iter().sum::<Ratio<u64>>() != one {
            return Err(CryptoError::BadParams("Z distribution does not sum to 1".into()));
        }
        for row in &self.cond {
            if row.is_empty() || row.iter().sum::<Ratio<u64>>() != one {
                return Err(CryptoError::BadParams(
                    "conditional row does not sum to 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Verdict of the exact OTP symmetry check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OtpSymmetryVerdict {
    pub equal: bool,
    pub tuples_checked: usize,
}

/// Exactly verifies the ciphertext/pad symmetry of the one-time pad: the
/// joint distribution of `(C, U, Z, E)` with `C = Z⊕U`, `U` uniform, equals
/// the distribution with the roles of `C` and `U` swapped (`C = U`,
/// `U = Z⊕U`). Both sides are computed in rational arithmetic; equality is
/// exact, with zero tolerance.
pub fn otp_symmetry_selftest(
    s: usize,
    info: &OtpSideInfo,
) -> Result<OtpSymmetryVerdict, CryptoError> {
    if s == 0 || s > 3 {
        return Err(CryptoError::BadParams(format!(
            "pad width {s} outside 1..=3"
        )));
    }
    info.validate(s)?;
    let size = 1usize << s;
    let labels = info.cond[0].len();
    let index = |c: usize, u: usize, z: usize, e: usize| ((c * size + u) * size + z) * labels + e;
    let cells = size * size * size * labels;
    let zero = Ratio::new(0u64, 1u64);
    let mut lhs = vec![zero; cells];
    let mut rhs = vec![zero; cells];
    let unif = Ratio::new(1u64, size as u64);
    for z in 0..size {
        for u in 0..size {
            for e in 0..labels {
                let w = unif * info.z_dist[z] * info.cond[z][e];
                lhs[index(z ^ u, u, z, e)] += w;
                rhs[index(u, z ^ u, z, e)] += w;
            }
        }
    }
    Ok(OtpSymmetryVerdict {
        equal: lhs == rhs,
        tuples_checked: cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, PartyTag};

    fn rng(t: u64) -> Rng {
        substream(10, t, PartyTag::Harness)
    }

    #[test]
    fn hex_round_trip() {
        let mut r = rng(0);
        for len in [0usize, 1, 7, 8, 9, 64, 65, 130] {
            let b = Bits::random(len, &mut r);
            let back = Bits::from_hex(&b.to_hex(), len).unwrap();
            assert_eq!(b, back);
        }
        // little-endian within bytes: bit 0 set -> 0x01
        let b = Bits::new(vec![true, false, false, false, false, false, false, false]);
        assert_eq!(b.to_hex(), "01");
    }

    #[test]
    fn zero_seed_hashes_to_zero() {
        let h = ToeplitzHash::new(8, 4, Bits::zeros(11)).unwrap();
        let mut r = rng(1);
        for _ in 0..16 {
            let x = Bits::random(8, &mut r);
            assert_eq!(h.apply(&x).unwrap(), Bits::zeros(4));
        }
    }

    #[test]
    fn toeplitz_is_linear() {
        let mut r = rng(2);
        for _ in 0..64 {
            let h = ToeplitzHash::sample(24, 8, &mut r).unwrap();
            let x = Bits::random(24, &mut r);
            let y = Bits::random(24, &mut r);
            let lhs = h.apply(&x.xor(&y).unwrap()).unwrap();
            let rhs = h.apply(&x).unwrap().xor(&h.apply(&y).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn toeplitz_collision_rate_monte_carlo() {
        // Collision rate over random distinct pairs with random seeds stays
        // within 10% of 2^-n.
        let mut r = rng(3);
        let n = 6usize;
        let trials = 1_000_000u64;
        let mut collisions = 0u64;
        for _ in 0..trials {
            let h = ToeplitzHash::sample(16, n, &mut r).unwrap();
            let x = Bits::random(16, &mut r);
            let mut y = Bits::random(16, &mut r);
            while y == x {
                y = Bits::random(16, &mut r);
            }
            if h.apply(&x).unwrap() == h.apply(&y).unwrap() {
                collisions += 1;
            }
        }
        let rate = collisions as f64 / trials as f64;
        let bound = 2f64.powi(-(n as i32));
        assert!(rate <= bound * 1.1, "collision rate {rate} vs bound {bound}");
    }

    #[test]
    fn exhaustive_two_universality_tiny() {
        // Exact collision probability over all seeds, for every distinct
        // pair, at s=5, n=2.
        let s = 5usize;
        let n = 2usize;
        let seed_bits = s + n - 1;
        for x in 0..(1u32 << s) {
            for y in 0..x {
                let mut collisions = 0u64;
                for seed in 0..(1u32 << seed_bits) {
                    let seed_bits_vec =
                        Bits::new((0..seed_bits).map(|i| (seed >> i) & 1 == 1).collect());
                    let h = ToeplitzHash::new(s, n, seed_bits_vec).unwrap();
                    let xb = Bits::new((0..s).map(|i| (x >> i) & 1 == 1).collect());
                    let yb = Bits::new((0..s).map(|i| (y >> i) & 1 == 1).collect());
                    if h.apply(&xb).unwrap() == h.apply(&yb).unwrap() {
                        collisions += 1;
                    }
                }
                let prob = collisions as f64 / (1u64 << seed_bits) as f64;
                assert!(
                    prob <= 0.25 + 1e-12,
                    "pair ({x},{y}) collides with probability {prob}"
                );
            }
        }
    }

    #[test]
    fn padding_round_trip_exhaustive() {
        let max_len = 16usize;
        for key_len in 0..=max_len {
            for pattern in 0..(1u32 << key_len.min(10)) {
                let key = Bits::new((0..key_len).map(|i| (pattern >> (i % 10)) & 1 == 1).collect());
                let padded = PaddedKey::pad(&key, max_len).unwrap();
                assert_eq!(padded.bits().len(), max_len + 1);
                assert_eq!(padded.strip().unwrap(), key);
            }
        }
    }

    #[test]
    fn padding_is_injective() {
        let max_len = 10usize;
        let mut seen = std::collections::HashSet::new();
        for key_len in 0..=max_len {
            for pattern in 0..(1u64 << key_len) {
                let key = Bits::new((0..key_len).map(|i| (pattern >> i) & 1 == 1).collect());
                let padded = PaddedKey::pad(&key, max_len).unwrap();
                assert!(seen.insert(padded.bits().clone()), "collision at {pattern:b}");
            }
        }
        // 2^{l+1} - 1 keys of length <= l
        assert_eq!(seen.len() as u64, (1u64 << (max_len + 1)) - 1);
    }

    #[test]
    fn otp_basics() {
        let mut r = rng(4);
        let a = Bits::random(32, &mut r);
        let zero = Bits::zeros(32);
        assert_eq!(otp_xor(&a, &zero).unwrap(), a);
        assert_eq!(otp_xor(&a, &a).unwrap(), zero);
        let m = Bits::random(32, &mut r);
        let h = Bits::random(32, &mut r);
        let u = Bits::random(32, &mut r);
        let c = otp_xor(&otp_xor(&m, &h).unwrap(), &u).unwrap();
        let back = otp_xor(&otp_xor(&c, &h).unwrap(), &u).unwrap();
        assert_eq!(back, m);
        assert!(otp_xor(&a, &Bits::zeros(31)).is_err());
    }

    #[test]
    fn syndrome_is_linear_and_zero_on_zero() {
        let mut r = rng(5);
        let code = SyndromeCode::sample(40, 0.05, 0.05, DEFAULT_DECODE_CAP, &mut r).unwrap();
        assert_eq!(
            code.syndrome_of(&Bits::zeros(40)).unwrap(),
            Bits::zeros(code.redundancy())
        );
        for _ in 0..32 {
            let x = Bits::random(40, &mut r);
            let y = Bits::random(40, &mut r);
            let lhs = code.syndrome_of(&x.xor(&y).unwrap()).unwrap();
            let rhs = code
                .syndrome_of(&x)
                .unwrap()
                .xor(&code.syndrome_of(&y).unwrap())
                .unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn syndrome_buckets_average_at_most_expected() {
        // l=12, r=6: exactly 2^{l-r} = 64 strings share a syndrome on
        // average; with a full-rank check matrix every nonempty bucket has
        // the same power-of-two size >= 64.
        let mut r = rng(6);
        // ceil(h2(0.009)*12 + log2(32)) = 6
        let code = SyndromeCode::sample(12, 0.0045, 0.03125, DEFAULT_DECODE_CAP, &mut r).unwrap();
        assert_eq!(code.redundancy(), 6);
        let mut buckets = std::collections::HashMap::new();
        for v in 0..(1u32 << 12) {
            let b = Bits::new((0..12).map(|i| (v >> i) & 1 == 1).collect());
            *buckets.entry(code.syndrome_of(&b).unwrap()).or_insert(0u64) += 1;
        }
        let avg = (1u64 << 12) as f64 / (1u64 << 6) as f64;
        assert_eq!(avg, 64.0);
        for (_, count) in &buckets {
            assert!(*count >= 64, "bucket smaller than 2^(l-r)");
        }
        let total: u64 = buckets.values().sum();
        assert_eq!(total, 1 << 12);
    }

    #[test]
    fn decode_zero_errors_is_identity() {
        let mut r = rng(7);
        for _ in 0..20 {
            let code = SyndromeCode::sample(30, 0.05, 0.01, DEFAULT_DECODE_CAP, &mut r).unwrap();
            let k = Bits::random(30, &mut r);
            let syn = code.syndrome_of(&k).unwrap();
            match code.decode(&k, &syn).unwrap() {
                DecodeOutcome::Unique { key, distance } => {
                    assert_eq!(key, k);
                    assert_eq!(distance, 0);
                }
                other => panic!("expected unique zero-distance decode, got {other:?}"),
            }
        }
    }

    #[test]
    fn decode_corrects_small_errors() {
        let mut r = rng(8);
        let code = SyndromeCode::sample(40, 0.05, 0.01, DEFAULT_DECODE_CAP, &mut r).unwrap();
        assert_eq!(code.radius(), 4);
        let k_a = Bits::random(40, &mut r);
        let syn = code.syndrome_of(&k_a).unwrap();
        for errors in 0..=code.radius() {
            let mut bits = k_a.as_slice().to_vec();
            let mut idx: Vec<usize> = (0..40).collect();
            for i in 0..errors {
                let j = r.gen_range(i..40);
                idx.swap(i, j);
                bits[idx[i]] = !bits[idx[i]];
            }
            let k_b = Bits::new(bits);
            let out = code.decode(&k_b, &syn).unwrap();
            let key = out.key().expect("decode found a candidate");
            // The returned candidate always has the right syndrome and is
            // within the radius.
            assert_eq!(code.syndrome_of(key).unwrap(), syn);
            assert!(key.hamming_distance(&k_b).unwrap() <= code.radius());
        }
    }

    #[test]
    fn decode_not_found_adversarial() {
        // Construct, by exhaustive search at l=10, a syndrome whose coset
        // lies entirely outside the decode ball around k_b.
        let mut r = rng(9);
        let code = SyndromeCode::sample(10, 0.05, 0.5, DEFAULT_DECODE_CAP, &mut r).unwrap();
        assert_eq!(code.radius(), 1);
        let k_b = Bits::zeros(10);
        let mut far_syndrome = None;
        'outer: for v in 0..(1u32 << code.redundancy()) {
            let syn = Bits::new((0..code.redundancy()).map(|i| (v >> i) & 1 == 1).collect());
            let mut min_dist = usize::MAX;
            for cand in 0..(1u32 << 10) {
                let c = Bits::new((0..10).map(|i| (cand >> i) & 1 == 1).collect());
                if code.syndrome_of(&c).unwrap() == syn {
                    min_dist = min_dist.min(c.hamming_distance(&k_b).unwrap());
                }
            }
            if min_dist != usize::MAX && min_dist > code.radius() {
                far_syndrome = Some(syn);
                break 'outer;
            }
        }
        let syn = far_syndrome.expect("an uncovered syndrome exists at these sizes");
        assert_eq!(code.decode(&k_b, &syn).unwrap(), DecodeOutcome::NotFound);
    }

    #[test]
    fn decode_respects_cap() {
        let mut r = rng(10);
        let code = SyndromeCode::sample(60, 0.05, 0.01, 1 << 10, &mut r).unwrap();
        let k = Bits::random(60, &mut r);
        let syn = code.syndrome_of(&k).unwrap();
        match code.decode(&k, &syn) {
            Err(CryptoError::Resource { ball, cap }) => {
                assert!(ball > cap);
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn otp_symmetry_exact_cases() {
        // s=1, P(Z=0)=0.7, trivial side info
        let info = OtpSideInfo {
            z_dist: vec![Ratio::new(7, 10), Ratio::new(3, 10)],
            cond: vec![vec![Ratio::new(1, 1)], vec![Ratio::new(1, 1)]],
        };
        let v = otp_symmetry_selftest(1, &info).unwrap();
        assert!(v.equal);
        assert_eq!(v.tuples_checked, 2 * 2 * 2);

        // s=2, Z uniform
        let info = OtpSideInfo {
            z_dist: vec![Ratio::new(1, 4); 4],
            cond: vec![vec![Ratio::new(1, 2), Ratio::new(1, 2)]; 4],
        };
        assert!(otp_symmetry_selftest(2, &info).unwrap().equal);

        // s=3, Z deterministic
        let mut z_dist = vec![Ratio::new(0, 1); 8];
        z_dist[5] = Ratio::new(1, 1);
        let info = OtpSideInfo {
            z_dist,
            cond: vec![vec![Ratio::new(1, 3), Ratio::new(2, 3)]; 8],
        };
        assert!(otp_symmetry_selftest(3, &info).unwrap().equal);
    }
}
