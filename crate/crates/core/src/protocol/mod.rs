//! The executable ECD protocol: honest Alice's state machine, the
//! authenticated leaky channel, the temporarily private randomness source,
//! Bob/Eve role interfaces, the two statistical tests, and the phase-3
//! decryption.
//!
//! One run is strictly sequential with a deterministic event order;
//! independent runs on independent rng substreams may execute in parallel.

pub mod transcript;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{
    Bits, CryptoError, DecodeOutcome, PaddedKey, SyndromeCode, ToeplitzHash, DEFAULT_DECODE_CAP,
};
use crate::devices::{DeviceArray, DeviceError, RawAnswer3};
use crate::games::{GameError, Trit};
use crate::rng::{Rng, Streams};
use crate::stats::ln_choose;
use transcript::{Party, Payload, TimeTag, Transcript, TranscriptEvent};

/// Guard against float dust when comparing real-valued thresholds that are
/// mathematically integral.
const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("message has {got} bits, parameters say n = {want}")]
    MessageLength { got: usize, want: usize },
    #[error("protocol-order error: {0}")]
    OutOfSchedule(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Protocol parameters `(n, l, α, γ, ε, λ_com, λ_CI, λ_EC)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Message length in bits.
    pub n: usize,
    /// Number of box pairs.
    pub l: usize,
    /// Anchoring probability (each index joins `S` with probability 1-α).
    pub alpha: f64,
    /// Test-subset fraction; `|T| = round(γl)`.
    pub gamma: f64,
    /// Noise tolerance.
    pub epsilon: f64,
    pub lambda_com: f64,
    pub lambda_ci: f64,
    pub lambda_ec: f64,
}

impl ProtocolParams {
    /// `|T| = round(γl)`.
    pub fn t_size(&self) -> usize {
        (self.gamma * self.l as f64).round() as usize
    }

    pub fn gamma_l(&self) -> f64 {
        self.gamma * self.l as f64
    }

    /// Validates ranges and the `l ≥ 4/(1-2γ)²` requirement; returns
    /// warnings for degenerate-but-legal corners (e.g. a non-negligible
    /// chance of an empty `S\T`).
    pub fn validate(&self) -> Result<Vec<String>, ProtocolError> {
        if self.n == 0 {
            return Err(ProtocolError::InvalidParams("n must be positive".into()));
        }
        if self.l == 0 {
            return Err(ProtocolError::InvalidParams("l must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(ProtocolError::InvalidParams(format!(
                "alpha {} outside (0, 1/2)",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(ProtocolError::InvalidParams(format!(
                "gamma {} outside (0, 1/2)",
                self.gamma
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(ProtocolError::InvalidParams(format!(
                "epsilon {} outside [0, 1)",
                self.epsilon
            )));
        }
        for (name, v) in [
            ("lambda_com", self.lambda_com),
            ("lambda_CI", self.lambda_ci),
            ("lambda_EC", self.lambda_ec),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ProtocolError::InvalidParams(format!(
                    "{name} = {v} outside (0, 1]"
                )));
            }
        }
        let min_l = 4.0 / (1.0 - 2.0 * self.gamma).powi(2);
        if (self.l as f64) < min_l - THRESHOLD_EPS {
            return Err(ProtocolError::InvalidParams(format!(
                "l = {} below 4/(1-2γ)² = {min_l:.3}",
                self.l
            )));
        }
        let mut warnings = Vec::new();
        let p_empty = self.prob_empty_s_minus_t();
        if p_empty > 1e-9 {
            warnings.push(format!(
                "Pr[S\\T = ∅] = {p_empty:.3e} exceeds 1e-9; the deletion test may pass vacuously"
            ));
        }
        Ok(warnings)
    }

    /// `Pr[S ⊆ T]`: `S\T` can only be empty via the `|S| ≤ γl` fallback
    /// where `T` is drawn from all of `[l]`.
    pub fn prob_empty_s_minus_t(&self) -> f64 {
        let l = self.l as u64;
        let t = self.t_size() as u64;
        let cutoff = self.gamma_l().floor() as u64;
        let p = 1.0 - self.alpha;
        let mut total = 0.0f64;
        for s in 0..=cutoff.min(t) {
            // P(|S| = s)
            let ln_binom =
                ln_choose(l, s) + s as f64 * p.ln() + (l - s) as f64 * (1.0 - p).ln();
            // P(S ⊆ T | |S| = s) for T uniform of size t over [l]
            let ln_cover = ln_choose(l - s, t - s) - ln_choose(l, t);
            total += (ln_binom + ln_cover).exp();
        }
        total
    }
}

/// When Alice transmits `y'_{\overline{T}}`: with the deletion request
/// (default), with the test set, or with the ciphertext. The early variants
/// support the self-deletion flavour of the protocol; the OTPs make the
/// change irrelevant to security.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YprimeTiming {
    #[default]
    WithDeletionRequest,
    WithTestSet,
    WithCiphertext,
}

/// Per-run options that are not protocol parameters proper.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub yprime_timing: YprimeTiming,
    /// Enumeration cap for the bounded-distance decode.
    pub decode_cap: u128,
    /// Simulator mode: publish `C1 = u1` instead of `m ⊕ h(K^A) ⊕ u1`.
    /// The message never enters the run in this mode.
    pub dummy_c1: bool,
    /// Echoed into the outcome for reporting.
    pub report_seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            yprime_timing: YprimeTiming::WithDeletionRequest,
            decode_cap: DEFAULT_DECODE_CAP,
            dummy_c1: false,
            report_seed: 0,
        }
    }
}

/// Everything the temporarily private randomness source hands Alice,
/// revealed publicly at `t5'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomnessRecord {
    /// Sorted indices of `S` (each index joins independently with
    /// probability 1-α).
    pub s_set: Vec<usize>,
    /// Sorted indices of `T`; `T ⊆ S` unless `|S| ≤ γl`, in which case the
    /// fallback draws `T ⊆ [l]` (sampled for transcript completeness, never
    /// used because the run aborts).
    pub t_set: Vec<usize>,
    /// Alice's box inputs on `S`, aligned with `s_set`.
    pub x_s: Vec<Trit>,
    /// First-round challenge trits on `S`, aligned with `s_set`.
    pub y_s: Vec<Trit>,
    /// Sorted complement of `T`.
    pub tbar_set: Vec<usize>,
    /// Deletion challenges on `\overline{T}`, aligned with `tbar_set`;
    /// `y'_i ≠ y_i` wherever both are defined.
    pub y_prime: Vec<Trit>,
    /// Toeplitz seed for the `(l+1 → n)` privacy-amplification hash.
    pub hash_seed: Bits,
    /// One-time pad for `C1` (n bits).
    pub u1: Bits,
    /// One-time pad for `C2` (`|syn(K^A)|` bits; empty when the run aborts
    /// before reconciliation is set up).
    pub u2: Bits,
    /// The logical time at which the source goes public.
    pub reveal_time: TimeTag,
}

impl RandomnessRecord {
    fn position_in(set: &[usize], i: usize) -> Option<usize> {
        set.binary_search(&i).ok()
    }

    pub fn x_of(&self, i: usize) -> Option<Trit> {
        Self::position_in(&self.s_set, i).map(|p| self.x_s[p])
    }

    pub fn y_of(&self, i: usize) -> Option<Trit> {
        Self::position_in(&self.s_set, i).map(|p| self.y_s[p])
    }

    pub fn y_prime_of(&self, i: usize) -> Option<Trit> {
        Self::position_in(&self.tbar_set, i).map(|p| self.y_prime[p])
    }

    pub fn in_s(&self, i: usize) -> bool {
        Self::position_in(&self.s_set, i).is_some()
    }

    pub fn in_t(&self, i: usize) -> bool {
        Self::position_in(&self.t_set, i).is_some()
    }

    /// Indices of `S \ T`, sorted.
    pub fn s_minus_t(&self) -> Vec<usize> {
        self.s_set
            .iter()
            .copied()
            .filter(|&i| !self.in_t(i))
            .collect()
    }
}

fn uniform_subset(pool: &[usize], size: usize, rng: &mut Rng) -> Vec<usize> {
    use rand::Rng as _;
    assert!(size <= pool.len(), "subset larger than pool");
    let mut items: Vec<usize> = pool.to_vec();
    for i in 0..size {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
    let mut chosen: Vec<usize> = items[..size].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Draws `R` (and the reconciliation code if the run will need one) from the
/// source stream. The syndrome is over `K^A ∈ {0,1}^{|S|}`, so the code and
/// `u2` exist only when `|S| > γl`.
pub fn draw_randomness(
    params: &ProtocolParams,
    options: &RunOptions,
    rng: &mut Rng,
) -> Result<(RandomnessRecord, Option<SyndromeCode>), ProtocolError> {
    use rand::Rng as _;
    let l = params.l;
    let s_set: Vec<usize> = (0..l)
        .filter(|_| rng.gen::<f64>() < 1.0 - params.alpha)
        .collect();
    let t = params.t_size();
    let s_large = s_set.len() as f64 > params.gamma_l() + THRESHOLD_EPS;
    let t_set = if s_large {
        uniform_subset(&s_set, t.min(s_set.len()), rng)
    } else {
        let pool: Vec<usize> = (0..l).collect();
        uniform_subset(&pool, t, rng)
    };
    let x_s: Vec<Trit> = s_set.iter().map(|_| Trit::uniform(rng)).collect();
    let y_s: Vec<Trit> = s_set.iter().map(|_| Trit::uniform(rng)).collect();
    let tbar_set: Vec<usize> = (0..l).filter(|i| t_set.binary_search(i).is_err()).collect();
    let y_prime: Vec<Trit> = tbar_set
        .iter()
        .map(|&i| match s_set.binary_search(&i) {
            Ok(p) => Trit::uniform_excluding(y_s[p], rng),
            Err(_) => Trit::uniform(rng),
        })
        .collect();
    let hash_seed = Bits::random(l + params.n, rng); // (l+1) + n - 1
    let code = if s_large {
        Some(
            SyndromeCode::sample(
                s_set.len(),
                params.epsilon.max(f64::MIN_POSITIVE),
                params.lambda_ec,
                options.decode_cap,
                rng,
            )
            .map_err(|e| {
                ProtocolError::InvalidParams(format!(
                    "reconciliation code not constructible at |S| = {}: {e}",
                    s_set.len()
                ))
            })?,
        )
    } else {
        None
    };
    let u1 = Bits::random(params.n, rng);
    let u2 = Bits::random(code.as_ref().map_or(0, |c| c.redundancy()), rng);
    Ok((
        RandomnessRecord {
            s_set,
            t_set,
            x_s,
            y_s,
            tbar_set,
            y_prime,
            hash_seed,
            u1,
            u2,
            reveal_time: TimeTag::T5Prime,
        },
        code,
    ))
}

/// Bob's side of the protocol. Implementations must not base round-one or
/// deletion answers on the ciphertext register if they are to preserve the
/// per-seed message-independence of `(O, F)`; the shipped roles never read
/// `C1` before the flag is fixed.
pub trait BobRole {
    /// Step 6–7: round-one answers for the test set `(i, y_i)`.
    fn respond_test(
        &mut self,
        queries: &[(usize, Trit)],
        device: &mut dyn DeviceArray,
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, ProtocolError>;

    /// Steps 24–25: deletion-challenge answers for `(i, y'_i)`, `i ∈
    /// \overline{T}`.
    fn respond_deletion(
        &mut self,
        queries: &[(usize, Trit)],
        device: &mut dyn DeviceArray,
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, ProtocolError>;

    /// Steps 33–34 (after `R` is public): produce `K^B`, one bit per index
    /// of `S` in sorted order.
    fn derive_key(
        &mut self,
        randomness: &RandomnessRecord,
        device: &mut dyn DeviceArray,
        rng: &mut Rng,
    ) -> Result<Bits, ProtocolError>;

    /// Channel traffic addressed to Bob.
    fn observe(&mut self, _event: &TranscriptEvent) {}
}

/// Honest Bob: queries the boxes exactly as the protocol prescribes and
/// remembers his test-round outputs for key derivation.
#[derive(Default)]
pub struct HonestBob {
    kept: std::collections::HashMap<usize, RawAnswer3>,
}

impl HonestBob {
    /// The answers retained so far, keyed by instance.
    pub fn kept_map(&self) -> &std::collections::HashMap<usize, RawAnswer3> {
        &self.kept
    }
}

impl BobRole for HonestBob {
    fn respond_test(
        &mut self,
        queries: &[(usize, Trit)],
        device: &mut dyn DeviceArray,
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, ProtocolError> {
        let answers = device.bob_query(queries, rng)?;
        for ((i, _), b) in queries.iter().zip(&answers) {
            self.kept.insert(*i, *b);
        }
        Ok(answers)
    }

    fn respond_deletion(
        &mut self,
        queries: &[(usize, Trit)],
        device: &mut dyn DeviceArray,
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, ProtocolError> {
        Ok(device.bob_second_round(queries, rng)?)
    }

    fn derive_key(
        &mut self,
        randomness: &RandomnessRecord,
        device: &mut dyn DeviceArray,
        rng: &mut Rng,
    ) -> Result<Bits, ProtocolError> {
        // Measure the still-unmeasured boxes: y on S∩\overline{T}, uniform
        // junk elsewhere outside S (outputs discarded).
        let fresh: Vec<(usize, Trit)> = randomness
            .tbar_set
            .iter()
            .filter_map(|&i| randomness.y_of(i).map(|y| (i, y)))
            .collect();
        let fresh_answers = device.bob_query(&fresh, rng)?;
        for ((i, _), b) in fresh.iter().zip(&fresh_answers) {
            self.kept.insert(*i, *b);
        }
        let junk: Vec<(usize, Trit)> = (0..device.len())
            .filter(|i| !randomness.in_s(*i) && !self.kept.contains_key(i))
            .map(|i| (i, Trit::uniform(rng)))
            .collect();
        let _ = device.bob_query(&junk, rng)?;
        let bits: Vec<bool> = randomness
            .s_set
            .iter()
            .map(|&i| {
                let x = randomness.x_of(i).expect("i in S");
                self.kept
                    .get(&i)
                    .map(|b| b.bit(x))
                    .expect("honest Bob measured every box in S")
            })
            .collect();
        Ok(Bits::new(bits))
    }
}

/// Eve's in-run role: she supplies the device out of band and passively
/// taps the channel here.
pub trait EveRole {
    fn observe(&mut self, _event: &TranscriptEvent) {}
}

/// The honest (purely listening) Eve.
#[derive(Default)]
pub struct PassiveEve;

impl EveRole for PassiveEve {}

/// Result of phase-1/phase-2 decode work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeReport {
    Unique { distance: usize },
    Ambiguous { distance: usize, ties: usize },
    NotFound,
    ResourceExceeded { ball: String, cap: String },
    Skipped,
}

/// The `(O, F, M̃)` outputs plus bookkeeping of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// `O = ⊤` iff true.
    pub accepted: bool,
    /// `F`; present iff `O = ⊤` and `D = 1`. `true` is ✓.
    pub flag: Option<bool>,
    /// Present iff `O = ⊤`; `0^n` on the deletion branch.
    pub m_tilde: Option<Bits>,
    /// Phase-1 match count over `T` (absent when the `|S| ≤ γl` fallback
    /// skipped the test exchange).
    pub test_matches: Option<usize>,
    pub test_size: usize,
    /// Phase-2 match count over `S\T`.
    pub deletion_matches: Option<usize>,
    pub deletion_size: Option<usize>,
    /// Deletion test passed on an empty `S\T`.
    pub deletion_vacuous: bool,
    pub s_size: usize,
    pub k_a: Option<Bits>,
    pub k_b: Option<Bits>,
    pub decode: DecodeReport,
    pub seed: u64,
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct MatchCounts {
            test: Option<usize>,
            test_size: usize,
            deletion: Option<usize>,
            deletion_size: Option<usize>,
            s_size: usize,
            deletion_vacuous: bool,
        }
        let mut st = serializer.serialize_struct("Outcome", 6)?;
        st.serialize_field("O", if self.accepted { "⊤" } else { "⊥" })?;
        st.serialize_field(
            "F",
            &self.flag.map(|f| if f { "✓" } else { "✗" }),
        )?;
        st.serialize_field("M_tilde_hex", &self.m_tilde.as_ref().map(|m| m.to_hex()))?;
        st.serialize_field(
            "match_counts",
            &MatchCounts {
                test: self.test_matches,
                test_size: self.test_size,
                deletion: self.deletion_matches,
                deletion_size: self.deletion_size,
                s_size: self.s_size,
                deletion_vacuous: self.deletion_vacuous,
            },
        )?;
        st.serialize_field("decode_report", &self.decode)?;
        st.serialize_field("seed", &self.seed)?;
        st.end()
    }
}

/// A completed run: outputs, the full event log, and the revealed
/// randomness.
pub struct ProtocolRun {
    pub outcome: Outcome,
    pub transcript: Transcript,
    pub randomness: RandomnessRecord,
    pub code: Option<SyndromeCode>,
    pub warnings: Vec<String>,
}

fn legal_match(a: &RawAnswer3, b: &RawAnswer3, x: Trit, y: Trit) -> bool {
    // Parity-illegal Bob answers are forced losses.
    if b.as_bob().is_none() {
        return false;
    }
    a.bit(y) == b.bit(x)
}

/// Phase-1 test (protocol step 8): `⊤` iff `|S| > γl` and at least
/// `ceil((1-ε)|T|)` matches `a_i[y_i] = b_i[x_i]` over `T`. Returns the
/// verdict and the match count.
pub fn alice_test_phase1(
    a_t: &[RawAnswer3],
    b_t: &[RawAnswer3],
    x_t: &[Trit],
    y_t: &[Trit],
    s_size: usize,
    params: &ProtocolParams,
) -> (bool, usize) {
    assert_eq!(a_t.len(), b_t.len());
    assert_eq!(a_t.len(), x_t.len());
    assert_eq!(a_t.len(), y_t.len());
    let matches = a_t
        .iter()
        .zip(b_t)
        .zip(x_t.iter().zip(y_t))
        .filter(|((a, b), (x, y))| legal_match(a, b, **x, **y))
        .count();
    let threshold = ((1.0 - params.epsilon) * a_t.len() as f64 - THRESHOLD_EPS).ceil() as usize;
    let s_large = s_size as f64 > params.gamma_l() + THRESHOLD_EPS;
    (s_large && matches >= threshold, matches)
}

/// Phase-2 deletion test (protocol step 26): `✓` iff at least
/// `ceil((1-2ε)|S\T|)` matches `a_i[y'_i] = b'_i[x_i]` over `S\T`. An empty
/// `S\T` passes vacuously (and is flagged by the caller).
pub fn alice_deletion_test(
    a_st: &[RawAnswer3],
    b_prime_st: &[RawAnswer3],
    x_st: &[Trit],
    y_prime_st: &[Trit],
    params: &ProtocolParams,
) -> (bool, usize) {
    assert_eq!(a_st.len(), b_prime_st.len());
    let matches = a_st
        .iter()
        .zip(b_prime_st)
        .zip(x_st.iter().zip(y_prime_st))
        .filter(|((a, b), (x, y))| legal_match(a, b, **x, **y))
        .count();
    let threshold =
        ((1.0 - 2.0 * params.epsilon) * a_st.len() as f64 - THRESHOLD_EPS).ceil() as usize;
    (matches >= threshold, matches)
}

/// Phase-3 decryption (protocol steps 33–37): reconcile `K^A` from `K^B`
/// and the syndrome, then unmask `C1`. On a failed decode the message is
/// computed from `K^B` itself and the failure is reported.
pub fn bob_decrypt(
    c1: &Bits,
    c2: &Bits,
    randomness: &RandomnessRecord,
    k_b: &Bits,
    code: &SyndromeCode,
    max_key_len: usize,
) -> Result<(Bits, DecodeReport), ProtocolError> {
    let syn_a = c2.xor(&randomness.u2)?;
    let (key, report) = match code.decode(k_b, &syn_a) {
        Ok(DecodeOutcome::Unique { key, distance }) => (key, DecodeReport::Unique { distance }),
        Ok(DecodeOutcome::Ambiguous {
            key,
            distance,
            ties,
        }) => (key, DecodeReport::Ambiguous { distance, ties }),
        Ok(DecodeOutcome::NotFound) => (k_b.clone(), DecodeReport::NotFound),
        Err(CryptoError::Resource { ball, cap }) => (
            k_b.clone(),
            DecodeReport::ResourceExceeded {
                ball: ball.to_string(),
                cap: cap.to_string(),
            },
        ),
        Err(e) => return Err(e.into()),
    };
    let hash = ToeplitzHash::new(max_key_len + 1, c1.len(), randomness.hash_seed.clone())?;
    let digest = hash.apply(PaddedKey::pad(&key, max_key_len)?.bits())?;
    let m_tilde = c1.xor(&digest)?.xor(&randomness.u1)?;
    Ok((m_tilde, report))
}

/// Runs the full protocol with honest Alice, drawing `R` from the source
/// stream.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    params: &ProtocolParams,
    device: &mut dyn DeviceArray,
    bob: &mut dyn BobRole,
    eve: &mut dyn EveRole,
    message: &Bits,
    deletion: bool,
    streams: &mut Streams,
    options: &RunOptions,
) -> Result<ProtocolRun, ProtocolError> {
    let warnings = params.validate()?;
    let (randomness, code) = draw_randomness(params, options, &mut streams.source)?;
    run_with_randomness(
        params, device, bob, eve, message, deletion, streams, options, randomness, code, warnings,
    )
}

/// Runs the protocol with an externally fixed randomness record (used by the
/// simulator-fidelity comparisons, which enumerate pads exhaustively).
#[allow(clippy::too_many_arguments)]
pub fn run_with_randomness(
    params: &ProtocolParams,
    device: &mut dyn DeviceArray,
    bob: &mut dyn BobRole,
    eve: &mut dyn EveRole,
    message: &Bits,
    deletion: bool,
    streams: &mut Streams,
    options: &RunOptions,
    randomness: RandomnessRecord,
    code: Option<SyndromeCode>,
    warnings: Vec<String>,
) -> Result<ProtocolRun, ProtocolError> {
    if message.len() != params.n {
        return Err(ProtocolError::MessageLength {
            got: message.len(),
            want: params.n,
        });
    }
    let mut transcript = Transcript::new();
    let emit = |transcript: &mut Transcript,
                    bob: &mut dyn BobRole,
                    eve: &mut dyn EveRole,
                    ev: TranscriptEvent| {
        if matches!(ev.receiver, Party::Bob | Party::All) {
            bob.observe(&ev);
        }
        if matches!(ev.receiver, Party::Eve | Party::All) {
            eve.observe(&ev);
        }
        transcript.record(ev);
    };
    // Channel send: the delivered message plus Eve's mandatory copy.
    macro_rules! send {
        ($tag:expr, $eve_tag:expr, $from:expr, $to:expr, $payload:expr) => {{
            let payload = $payload;
            emit(
                &mut transcript,
                bob,
                eve,
                TranscriptEvent {
                    time_tag: $tag,
                    sender: $from,
                    receiver: $to,
                    payload: payload.clone(),
                },
            );
            emit(
                &mut transcript,
                bob,
                eve,
                TranscriptEvent {
                    time_tag: $eve_tag,
                    sender: $from,
                    receiver: Party::Eve,
                    payload,
                },
            );
        }};
    }

    // Box distribution (Eve's interference point).
    device.prepare(params.l, &mut streams.eve);
    for receiver in [Party::Alice, Party::Bob] {
        emit(
            &mut transcript,
            bob,
            eve,
            TranscriptEvent {
                time_tag: TimeTag::T1DoublePrime,
                sender: Party::Eve,
                receiver,
                payload: Payload::BoxesDelivered { count: params.l },
            },
        );
    }

    // Alice queries every box: protocol inputs on S, private junk elsewhere.
    let mut a_all: Vec<RawAnswer3> = Vec::with_capacity(params.l);
    for i in 0..params.l {
        let x = randomness
            .x_of(i)
            .unwrap_or_else(|| Trit::uniform(&mut streams.alice_private));
        a_all.push(device.alice_query(i, x, &mut streams.device)?);
    }

    let s_size = randomness.s_set.len();
    let s_large = s_size as f64 > params.gamma_l() + THRESHOLD_EPS;
    let y_prime_for_wire: Vec<Trit> = randomness.y_prime.clone();

    let (accepted, test_matches) = if s_large {
        let t_queries: Vec<(usize, Trit)> = randomness
            .t_set
            .iter()
            .map(|&i| (i, randomness.y_of(i).expect("T ⊆ S here")))
            .collect();
        send!(
            TimeTag::T1Prime,
            TimeTag::T1Prime,
            Party::Alice,
            Party::Bob,
            Payload::TestSet {
                t_set: randomness.t_set.clone(),
                y_t: t_queries.iter().map(|q| q.1).collect(),
                y_prime_early: (options.yprime_timing == YprimeTiming::WithTestSet)
                    .then(|| y_prime_for_wire.clone()),
            }
        );
        let b_t = bob.respond_test(&t_queries, device, &mut streams.bob)?;
        if b_t.len() != t_queries.len() {
            return Err(ProtocolError::OutOfSchedule(format!(
                "Bob answered {} of {} test queries",
                b_t.len(),
                t_queries.len()
            )));
        }
        send!(
            TimeTag::T1Prime,
            TimeTag::T1Prime,
            Party::Bob,
            Party::Alice,
            Payload::TestAnswers {
                b_t: b_t.iter().map(|b| b.0).collect(),
            }
        );
        let a_t: Vec<RawAnswer3> = randomness.t_set.iter().map(|&i| a_all[i]).collect();
        let x_t: Vec<Trit> = randomness
            .t_set
            .iter()
            .map(|&i| randomness.x_of(i).expect("T ⊆ S"))
            .collect();
        let y_t: Vec<Trit> = t_queries.iter().map(|q| q.1).collect();
        let (ok, matches) = alice_test_phase1(&a_t, &b_t, &x_t, &y_t, s_size, params);
        (ok, Some(matches))
    } else {
        // |S| ≤ γl: T was sampled for transcript completeness but the test
        // exchange is skipped and the run aborts.
        (false, None)
    };

    send!(
        TimeTag::T1,
        TimeTag::T1,
        Party::Alice,
        Party::Bob,
        Payload::Verdict { accept: accepted }
    );

    if !accepted {
        // The source still goes public at t5'.
        emit(
            &mut transcript,
            bob,
            eve,
            TranscriptEvent {
                time_tag: TimeTag::T5Prime,
                sender: Party::Source,
                receiver: Party::All,
                payload: Payload::Reveal {
                    randomness: randomness.clone(),
                },
            },
        );
        transcript
            .check_invariants()
            .map_err(ProtocolError::OutOfSchedule)?;
        return Ok(ProtocolRun {
            outcome: Outcome {
                accepted: false,
                flag: None,
                m_tilde: None,
                test_matches,
                test_size: randomness.t_set.len(),
                deletion_matches: None,
                deletion_size: None,
                deletion_vacuous: false,
                s_size,
                k_a: None,
                k_b: None,
                decode: DecodeReport::Skipped,
                seed: options.report_seed,
            },
            transcript,
            randomness,
            code,
            warnings,
        });
    }

    // K^A and the ciphertext.
    let code = code.ok_or_else(|| {
        ProtocolError::InvalidParams("accepting run without a reconciliation code".into())
    })?;
    let k_a = Bits::new(
        randomness
            .s_set
            .iter()
            .enumerate()
            .map(|(p, &i)| a_all[i].bit(randomness.y_s[p]))
            .collect(),
    );
    let hash = ToeplitzHash::new(params.l + 1, params.n, randomness.hash_seed.clone())?;
    let digest = hash.apply(PaddedKey::pad(&k_a, params.l)?.bits())?;
    let c1 = if options.dummy_c1 {
        randomness.u1.clone()
    } else {
        message.xor(&digest)?.xor(&randomness.u1)?
    };
    let c2 = code.syndrome_of(&k_a)?.xor(&randomness.u2)?;
    send!(
        TimeTag::T2,
        TimeTag::T2,
        Party::Alice,
        Party::Bob,
        Payload::Ciphertext {
            c1: c1.clone(),
            c2: c2.clone(),
            y_prime_early: (options.yprime_timing == YprimeTiming::WithCiphertext)
                .then(|| y_prime_for_wire.clone()),
        }
    );

    // Phase 2.
    send!(
        TimeTag::T3,
        TimeTag::T3DotEve,
        Party::Alice,
        Party::Bob,
        Payload::DeletionRequest {
            delete: deletion,
            y_prime: (deletion && options.yprime_timing == YprimeTiming::WithDeletionRequest)
                .then(|| y_prime_for_wire.clone()),
        }
    );
    emit(
        &mut transcript,
        bob,
        eve,
        TranscriptEvent {
            time_tag: TimeTag::T3DotBob,
            sender: Party::Bob,
            receiver: Party::Bob,
            payload: Payload::DeletionDecision { delete: deletion },
        },
    );

    let mut flag = None;
    let mut deletion_matches = None;
    let mut deletion_size = None;
    let mut deletion_vacuous = false;
    if deletion {
        let challenges: Vec<(usize, Trit)> = randomness
            .tbar_set
            .iter()
            .zip(&randomness.y_prime)
            .map(|(&i, &y)| (i, y))
            .collect();
        let b_prime = bob.respond_deletion(&challenges, device, &mut streams.bob)?;
        if b_prime.len() != challenges.len() {
            return Err(ProtocolError::OutOfSchedule(format!(
                "Bob answered {} of {} deletion challenges",
                b_prime.len(),
                challenges.len()
            )));
        }
        send!(
            TimeTag::T4Prime,
            TimeTag::T4Prime,
            Party::Bob,
            Party::Alice,
            Payload::DeletionAnswers {
                b_prime: b_prime.iter().map(|b| b.0).collect(),
            }
        );
        // Test over S\T only.
        let mut a_st = Vec::new();
        let mut b_st = Vec::new();
        let mut x_st = Vec::new();
        let mut yp_st = Vec::new();
        for (pos, &i) in randomness.tbar_set.iter().enumerate() {
            if randomness.in_s(i) {
                a_st.push(a_all[i]);
                b_st.push(b_prime[pos]);
                x_st.push(randomness.x_of(i).expect("i in S"));
                yp_st.push(randomness.y_prime[pos]);
            }
        }
        let (ok, matches) = alice_deletion_test(&a_st, &b_st, &x_st, &yp_st, params);
        deletion_vacuous = a_st.is_empty();
        flag = Some(ok);
        deletion_matches = Some(matches);
        deletion_size = Some(a_st.len());
    }

    // Phase 3: the source goes public.
    emit(
        &mut transcript,
        bob,
        eve,
        TranscriptEvent {
            time_tag: TimeTag::T5Prime,
            sender: Party::Source,
            receiver: Party::All,
            payload: Payload::Reveal {
                randomness: randomness.clone(),
            },
        },
    );

    let (m_tilde, k_b, decode) = if deletion {
        (Some(Bits::zeros(params.n)), None, DecodeReport::Skipped)
    } else {
        let k_b = bob.derive_key(&randomness, device, &mut streams.bob)?;
        if k_b.len() != s_size {
            return Err(ProtocolError::OutOfSchedule(format!(
                "Bob derived a {}-bit key for |S| = {s_size}",
                k_b.len()
            )));
        }
        let (m_tilde, report) = bob_decrypt(&c1, &c2, &randomness, &k_b, &code, params.l)?;
        (Some(m_tilde), Some(k_b), report)
    };

    transcript
        .check_invariants()
        .map_err(ProtocolError::OutOfSchedule)?;
    Ok(ProtocolRun {
        outcome: Outcome {
            accepted: true,
            flag,
            m_tilde,
            test_matches,
            test_size: randomness.t_set.len(),
            deletion_matches,
            deletion_size,
            deletion_vacuous,
            s_size,
            k_a: Some(k_a),
            k_b,
            decode,
            seed: options.report_seed,
        },
        transcript,
        randomness,
        code: Some(code),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::NoisyBoxArray;
    use crate::stats::{binomial_cdf, hoeffding_halfwidth};

    fn params_small() -> ProtocolParams {
        ProtocolParams {
            n: 16,
            l: 60,
            alpha: 0.25,
            gamma: 0.2,
            epsilon: 0.05,
            lambda_com: 0.25,
            lambda_ci: 0.25,
            lambda_ec: 0.01,
        }
    }

    fn run_honest(
        params: &ProtocolParams,
        epsilon_device: f64,
        message: &Bits,
        deletion: bool,
        seed: u64,
        trial: u64,
    ) -> ProtocolRun {
        let mut device = NoisyBoxArray::new(params.l, epsilon_device);
        let mut bob = HonestBob::default();
        let mut eve = PassiveEve;
        let mut streams = Streams::for_trial(seed, trial);
        run_protocol(
            params,
            &mut device,
            &mut bob,
            &mut eve,
            message,
            deletion,
            &mut streams,
            &RunOptions::default(),
        )
        .expect("honest run completes")
    }

    #[test]
    fn params_validation() {
        let mut p = params_small();
        assert!(p.validate().is_ok());
        p.alpha = 0.5;
        assert!(p.validate().is_err());
        let mut p = params_small();
        p.gamma = 0.45; // needs l >= 400
        assert!(p.validate().is_err());
        let mut p = params_small();
        p.lambda_ec = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn phase1_test_thresholds() {
        let params = params_small();
        let a = RawAnswer3([false, false, false]);
        let b_match = RawAnswer3([true, false, false]); // b[x]=a[y]=0 for x,y=1
        let b_miss = RawAnswer3([false, true, false]); // b[1]=1 != 0
        let t = params.t_size();
        let x = vec![Trit::new(1).unwrap(); t];
        let y = vec![Trit::new(1).unwrap(); t];
        // all matches, |S| > γl
        let (ok, m) = alice_test_phase1(&vec![a; t], &vec![b_match; t], &x, &y, 40, &params);
        assert!(ok);
        assert_eq!(m, t);
        // |S| ≤ γl aborts regardless
        let (ok, _) = alice_test_phase1(&vec![a; t], &vec![b_match; t], &x, &y, 12, &params);
        assert!(!ok);
        // boundary: exactly ceil((1-ε)|T|) matches is inclusive
        let threshold = ((1.0 - params.epsilon) * t as f64 - 1e-9).ceil() as usize;
        let mut b = vec![b_match; threshold];
        b.extend(vec![b_miss; t - threshold]);
        let (ok, m) = alice_test_phase1(&vec![a; t], &b, &x, &y, 40, &params);
        assert!(ok);
        assert_eq!(m, threshold);
        // one fewer fails
        let mut b = vec![b_match; threshold - 1];
        b.extend(vec![b_miss; t - threshold + 1]);
        let (ok, _) = alice_test_phase1(&vec![a; t], &b, &x, &y, 40, &params);
        assert!(!ok);
        // parity-illegal answers are forced mismatches
        let illegal = RawAnswer3([false, false, false]);
        let (_, m) = alice_test_phase1(&vec![a; t], &vec![illegal; t], &x, &y, 40, &params);
        assert_eq!(m, 0);
    }

    #[test]
    fn honest_noiseless_decryption_is_exact() {
        let params = params_small();
        let msg = Bits::from_hex("a5c3", 16).unwrap();
        for trial in 0..10 {
            let run = run_honest(&params, 0.0, &msg, false, 100, trial);
            assert!(run.outcome.accepted);
            assert_eq!(run.outcome.m_tilde.as_ref().unwrap(), &msg);
            assert!(matches!(run.outcome.decode, DecodeReport::Unique { distance: 0 }));
            assert_eq!(run.outcome.k_a, run.outcome.k_b);
        }
    }

    #[test]
    fn honest_deletion_always_accepts_and_zeroes() {
        let params = params_small();
        let msg = Bits::from_hex("ffff", 16).unwrap();
        for trial in 0..10 {
            let run = run_honest(&params, 0.0, &msg, true, 101, trial);
            assert!(run.outcome.accepted);
            assert_eq!(run.outcome.flag, Some(true));
            assert_eq!(run.outcome.m_tilde.as_ref().unwrap(), &Bits::zeros(16));
            assert!(run.outcome.k_b.is_none());
        }
    }

    #[test]
    fn noisy_honest_runs_mostly_accept_and_decrypt() {
        let params = params_small();
        let msg = Bits::from_hex("1234", 16).unwrap();
        let trials = 200u64;
        let mut accepted = 0u64;
        let mut correct = 0u64;
        for trial in 0..trials {
            let run = run_honest(&params, params.epsilon, &msg, false, 102, trial);
            if run.outcome.accepted {
                accepted += 1;
                correct += (run.outcome.m_tilde.as_ref().unwrap() == &msg) as u64;
            }
        }
        // |T|=12 with per-instance win 0.975: p_top ≈ 0.975^12 + slack; at
        // threshold ceil(0.95*12)=12 all must match: ≈ 0.738.
        let rate = accepted as f64 / trials as f64;
        assert!(rate > 0.6, "acceptance {rate}");
        let dec = correct as f64 / accepted as f64;
        assert!(dec > 0.9, "decryption success {dec}");
    }

    #[test]
    fn abort_rate_matches_binomial_tail_at_zero_noise() {
        // ε = 0: the match test cannot fail, so abort ⇔ |S| ≤ γl.
        let params = ProtocolParams {
            n: 8,
            l: 40,
            alpha: 0.25,
            gamma: 0.2,
            epsilon: 0.0,
            lambda_com: 0.25,
            lambda_ci: 0.25,
            lambda_ec: 0.9,
        };
        let msg = Bits::zeros(8);
        let trials = 400u64;
        let mut aborts = 0u64;
        for trial in 0..trials {
            let run = run_honest(&params, 0.0, &msg, false, 103, trial);
            aborts += (!run.outcome.accepted) as u64;
        }
        let oracle = binomial_cdf(40, 0.75, 8); // ≈ 1e-15
        let rate = aborts as f64 / trials as f64;
        assert!(
            (rate - oracle).abs() <= hoeffding_halfwidth(trials),
            "abort rate {rate} vs oracle {oracle}"
        );
    }

    #[test]
    fn transcript_passes_invariants_and_taps_everything() {
        let params = params_small();
        let msg = Bits::zeros(16);
        let run = run_honest(&params, 0.05, &msg, true, 104, 0);
        run.transcript.check_invariants().unwrap();
        // every channel message has an Eve copy with identical payload
        let channel = run.transcript.channel_messages();
        assert!(!channel.is_empty());
        let eve_payloads: Vec<_> = run
            .transcript
            .eve_view()
            .into_iter()
            .map(|e| e.payload.clone())
            .collect();
        for msg in channel {
            assert!(eve_payloads.contains(&msg.payload));
        }
    }

    #[test]
    fn message_independence_of_o_f_per_seed() {
        let params = params_small();
        let m1 = Bits::from_hex("dead", 16).unwrap();
        let m0 = Bits::zeros(16);
        for trial in 0..50 {
            for d in [false, true] {
                let run1 = run_honest(&params, params.epsilon, &m1, d, 105, trial);
                let run0 = run_honest(&params, params.epsilon, &m0, d, 105, trial);
                assert_eq!(run1.outcome.accepted, run0.outcome.accepted);
                assert_eq!(run1.outcome.flag, run0.outcome.flag);
                assert_eq!(run1.outcome.test_matches, run0.outcome.test_matches);
                assert_eq!(run1.outcome.deletion_matches, run0.outcome.deletion_matches);
            }
        }
    }

    #[test]
    fn early_yprime_variants_still_work() {
        let params = params_small();
        let msg = Bits::from_hex("0f0f", 16).unwrap();
        for timing in [YprimeTiming::WithTestSet, YprimeTiming::WithCiphertext] {
            let mut device = NoisyBoxArray::new(params.l, 0.0);
            let mut bob = HonestBob::default();
            let mut eve = PassiveEve;
            let mut streams = Streams::for_trial(106, 0);
            let options = RunOptions {
                yprime_timing: timing,
                ..RunOptions::default()
            };
            let run = run_protocol(
                &params,
                &mut device,
                &mut bob,
                &mut eve,
                &msg,
                true,
                &mut streams,
                &options,
            )
            .unwrap();
            assert!(run.outcome.accepted);
            assert_eq!(run.outcome.flag, Some(true));
        }
    }

    #[test]
    fn outcome_serializes_to_spec_shape() {
        let params = params_small();
        let run = run_honest(&params, 0.0, &Bits::zeros(16), false, 107, 0);
        let v = serde_json::to_value(&run.outcome).unwrap();
        for key in ["O", "F", "M_tilde_hex", "match_counts", "decode_report", "seed"] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(v["O"], "⊤");
    }

    #[test]
    fn randomness_record_constraints() {
        let params = params_small();
        let mut rng = crate::rng::substream(108, 0, crate::rng::PartyTag::Source);
        for _ in 0..50 {
            let (r, code) = draw_randomness(&params, &RunOptions::default(), &mut rng).unwrap();
            assert_eq!(r.t_set.len(), params.t_size());
            let s_large = r.s_set.len() as f64 > params.gamma_l();
            if s_large {
                assert!(r.t_set.iter().all(|i| r.in_s(*i)), "T ⊆ S");
                assert!(code.is_some());
            }
            // y'_i ≠ y_i on S ∩ \overline{T}
            for (pos, &i) in r.tbar_set.iter().enumerate() {
                if let Some(y) = r.y_of(i) {
                    assert_ne!(r.y_prime[pos], y);
                }
            }
            // u2 sized to the syndrome
            if let Some(c) = &code {
                assert_eq!(r.u2.len(), c.redundancy());
            }
        }
    }
}
