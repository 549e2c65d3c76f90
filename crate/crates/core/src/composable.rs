//! The ideal ECD functionality (all four honesty cases), the simulators
//! that wrap it into a real-protocol-shaped system, and a Monte-Carlo
//! distinguishing-advantage harness.
//!
//! Time is logical: the driver feeds inputs and releases outputs in the
//! schedule order `t1', t1'' ≤ t1 ≤ t2 ≤ t3 ≤ ṫ3, ẗ3 ≤ t4' ≤ t4 < t5`,
//! fixing `t1' ≤ t1''` and `ṫ3 ≤ ẗ3` by convention.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Bits, PaddedKey, ToeplitzHash};
use crate::devices::NoisyBoxArray;
use crate::games::Trit;
use crate::protocol::transcript::{Payload, TranscriptEvent};
use crate::protocol::{
    run_protocol, BobRole, EveRole, HonestBob, PassiveEve, ProtocolError, ProtocolParams,
    ProtocolRun, RandomnessRecord, RunOptions,
};
use crate::rng::{substream, PartyTag, Rng, Streams};
use crate::stats::hoeffding_halfwidth;

#[derive(Debug, Error)]
pub enum ComposableError {
    #[error("functionality input out of order: {0}")]
    OutOfOrder(String),
    #[error("input {0} is not available in this honesty case")]
    WrongInterface(&'static str),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Which parties are dishonest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HonestyCase {
    AllHonest,
    DishonestBob,
    DishonestEve,
    DishonestBobEve,
}

impl HonestyCase {
    pub fn bob_dishonest(self) -> bool {
        matches!(self, HonestyCase::DishonestBob | HonestyCase::DishonestBobEve)
    }

    pub fn eve_dishonest(self) -> bool {
        matches!(self, HonestyCase::DishonestEve | HonestyCase::DishonestBobEve)
    }

    pub fn label(self) -> &'static str {
        match self {
            HonestyCase::AllHonest => "all_honest",
            HonestyCase::DishonestBob => "dishonest_bob",
            HonestyCase::DishonestEve => "dishonest_eve",
            HonestyCase::DishonestBobEve => "dishonest_bob_eve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IdealPhase {
    AwaitAborts,
    AwaitMessage,
    AwaitDeletion,
    AwaitFlag,
    Deliver,
    Stopped,
}

/// The ideal `ECD_n` functionality. Inputs arrive through the typed methods
/// in schedule order; outputs are gated exactly as in the four-case figure:
/// everything after `O` requires `O = ⊤`, and the `F` input/output exists
/// only when `D = 1`.
pub struct IdealEcd {
    case: HonestyCase,
    n: usize,
    phase: IdealPhase,
    o_b: Option<bool>,
    o_e: Option<bool>,
    o: Option<bool>,
    m: Option<Bits>,
    d: Option<bool>,
    f: Option<bool>,
}

impl IdealEcd {
    pub fn new(case: HonestyCase, n: usize) -> Self {
        IdealEcd {
            case,
            n,
            phase: IdealPhase::AwaitAborts,
            o_b: None,
            o_e: None,
            o: None,
            m: None,
            d: None,
            f: None,
        }
    }

    /// Dishonest Bob's abort input at `t1'`.
    pub fn input_abort_bob(&mut self, o_b: bool) -> Result<(), ComposableError> {
        if !self.case.bob_dishonest() {
            return Err(ComposableError::WrongInterface("O^B"));
        }
        if self.phase != IdealPhase::AwaitAborts || self.o_b.is_some() {
            return Err(ComposableError::OutOfOrder("O^B after t1".into()));
        }
        self.o_b = Some(o_b);
        Ok(())
    }

    /// Dishonest Eve's abort input at `t1''` (by convention after `t1'`).
    pub fn input_abort_eve(&mut self, o_e: bool) -> Result<(), ComposableError> {
        if !self.case.eve_dishonest() {
            return Err(ComposableError::WrongInterface("O^E"));
        }
        if self.phase != IdealPhase::AwaitAborts || self.o_e.is_some() {
            return Err(ComposableError::OutOfOrder("O^E after t1".into()));
        }
        if self.case.bob_dishonest() && self.o_b.is_none() {
            return Err(ComposableError::OutOfOrder("O^E before O^B".into()));
        }
        self.o_e = Some(o_e);
        Ok(())
    }

    /// The abort decision released to Alice and Bob at `t1`:
    /// `O = O^B ∧ O^E` with honest parties contributing `⊤`.
    pub fn output_abort(&mut self) -> Result<bool, ComposableError> {
        if self.phase != IdealPhase::AwaitAborts {
            return Err(ComposableError::OutOfOrder("O requested twice".into()));
        }
        if self.case.bob_dishonest() && self.o_b.is_none() {
            return Err(ComposableError::OutOfOrder("O before O^B".into()));
        }
        if self.case.eve_dishonest() && self.o_e.is_none() {
            return Err(ComposableError::OutOfOrder("O before O^E".into()));
        }
        let o = self.o_b.unwrap_or(true) && self.o_e.unwrap_or(true);
        self.o = Some(o);
        self.phase = if o {
            IdealPhase::AwaitMessage
        } else {
            IdealPhase::Stopped
        };
        Ok(o)
    }

    /// Alice's message at `t2`.
    pub fn input_message(&mut self, m: Bits) -> Result<(), ComposableError> {
        if self.phase != IdealPhase::AwaitMessage {
            return Err(ComposableError::OutOfOrder("M out of schedule".into()));
        }
        if m.len() != self.n {
            return Err(ComposableError::Protocol(ProtocolError::MessageLength {
                got: m.len(),
                want: self.n,
            }));
        }
        self.m = Some(m);
        self.phase = IdealPhase::AwaitDeletion;
        Ok(())
    }

    /// Alice's deletion decision at `t3`; echoed to Bob at `ṫ3` (and Eve at
    /// `ẗ3` when she is dishonest).
    pub fn input_deletion(&mut self, d: bool) -> Result<(), ComposableError> {
        if self.phase != IdealPhase::AwaitDeletion {
            return Err(ComposableError::OutOfOrder("D out of schedule".into()));
        }
        self.d = Some(d);
        self.phase = if d && self.case.bob_dishonest() {
            IdealPhase::AwaitFlag
        } else {
            IdealPhase::Deliver
        };
        Ok(())
    }

    pub fn deletion_to_bob(&self) -> Result<bool, ComposableError> {
        self.d
            .ok_or_else(|| ComposableError::OutOfOrder("D echo before t3".into()))
    }

    pub fn deletion_to_eve(&self) -> Result<bool, ComposableError> {
        if !self.case.eve_dishonest() {
            return Err(ComposableError::WrongInterface("D to Eve"));
        }
        self.deletion_to_bob()
    }

    /// Dishonest Bob's flag input at `t4'` (only when `D = 1`).
    pub fn input_flag(&mut self, f: bool) -> Result<(), ComposableError> {
        if self.phase != IdealPhase::AwaitFlag {
            return Err(ComposableError::OutOfOrder("F input out of schedule".into()));
        }
        self.f = Some(f);
        self.phase = IdealPhase::Deliver;
        Ok(())
    }

    /// The flag released to Alice at `t4` (only when `D = 1`); honest Bob
    /// always deletes, so his flag is ✓.
    pub fn output_flag(&self) -> Result<Option<bool>, ComposableError> {
        if self.phase != IdealPhase::Deliver {
            return Err(ComposableError::OutOfOrder("F output out of schedule".into()));
        }
        Ok(match self.d {
            Some(true) => Some(if self.case.bob_dishonest() {
                self.f.expect("flag phase completed")
            } else {
                true
            }),
            _ => None,
        })
    }

    /// `M̃` released to Bob at `t5`: `M` if `D ∧ F = 0`, else `0^n`
    /// (✗ counts as 0 for the AND).
    pub fn output_m_tilde(&mut self) -> Result<Bits, ComposableError> {
        if self.phase != IdealPhase::Deliver {
            return Err(ComposableError::OutOfOrder("M̃ before schedule".into()));
        }
        self.phase = IdealPhase::Stopped;
        let d = self.d.expect("deletion set");
        let f = if self.case.bob_dishonest() {
            self.f.unwrap_or(true)
        } else {
            true
        };
        let m = self.m.clone().expect("message set");
        Ok(if d && f { Bits::zeros(self.n) } else { m })
    }
}

/// All inputs one driver pass feeds the ideal functionality.
#[derive(Debug, Clone)]
pub struct IdealRunInputs {
    pub o_b: Option<bool>,
    pub o_e: Option<bool>,
    pub m: Bits,
    pub d: bool,
    /// Dishonest Bob's flag (required iff Bob dishonest, `O = ⊤`, `D = 1`).
    pub f: Option<bool>,
}

/// Scheduled outputs of one ideal run.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealRunOutputs {
    pub o: bool,
    pub d_to_bob: Option<bool>,
    pub d_to_eve: Option<bool>,
    pub f_to_alice: Option<bool>,
    pub m_tilde: Option<Bits>,
}

/// Drives [`IdealEcd`] through one full schedule.
pub fn ideal_run(
    case: HonestyCase,
    n: usize,
    inputs: &IdealRunInputs,
) -> Result<IdealRunOutputs, ComposableError> {
    let mut ideal = IdealEcd::new(case, n);
    if case.bob_dishonest() {
        ideal.input_abort_bob(
            inputs
                .o_b
                .ok_or(ComposableError::WrongInterface("missing O^B"))?,
        )?;
    } else if inputs.o_b.is_some() {
        return Err(ComposableError::WrongInterface("O^B"));
    }
    if case.eve_dishonest() {
        ideal.input_abort_eve(
            inputs
                .o_e
                .ok_or(ComposableError::WrongInterface("missing O^E"))?,
        )?;
    } else if inputs.o_e.is_some() {
        return Err(ComposableError::WrongInterface("O^E"));
    }
    let o = ideal.output_abort()?;
    if !o {
        return Ok(IdealRunOutputs {
            o,
            d_to_bob: None,
            d_to_eve: None,
            f_to_alice: None,
            m_tilde: None,
        });
    }
    ideal.input_message(inputs.m.clone())?;
    ideal.input_deletion(inputs.d)?;
    let d_to_bob = Some(ideal.deletion_to_bob()?);
    let d_to_eve = case.eve_dishonest().then(|| inputs.d);
    if case.bob_dishonest() && inputs.d {
        ideal.input_flag(
            inputs
                .f
                .ok_or(ComposableError::WrongInterface("missing F"))?,
        )?;
    }
    let f_to_alice = ideal.output_flag()?;
    let m_tilde = Some(ideal.output_m_tilde()?);
    Ok(IdealRunOutputs {
        o,
        d_to_bob,
        d_to_eve,
        f_to_alice,
        m_tilde,
    })
}

/// Everything the distinguisher observes across one run of either system.
/// Fields absent for a given honesty case stay `None` in both worlds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct View {
    pub o: bool,
    /// Eve taps of the phase-1 exchange (dishonest Eve or Bob).
    pub test_set: Option<(Vec<usize>, Vec<Trit>)>,
    pub test_answers: Option<Vec<[bool; 3]>>,
    pub ciphertext: Option<(Bits, Bits)>,
    pub deletion_message: Option<(bool, Option<Vec<Trit>>)>,
    pub deletion_answers: Option<Vec<[bool; 3]>>,
    /// `F` at Alice's outer interface (when `D = 1`).
    pub flag: Option<bool>,
    /// The revealed `R` (the simulator releases a patched `U1`).
    pub revealed: Option<RandomnessRecord>,
    /// Honest Bob's decrypted output at `t5`.
    pub m_tilde: Option<Bits>,
}

/// Records the channel traffic the dishonest parties are entitled to see.
#[derive(Default)]
struct Tap {
    test_set: Option<(Vec<usize>, Vec<Trit>)>,
    test_answers: Option<Vec<[bool; 3]>>,
    ciphertext: Option<(Bits, Bits)>,
    deletion_message: Option<(bool, Option<Vec<Trit>>)>,
    deletion_answers: Option<Vec<[bool; 3]>>,
}

impl Tap {
    fn ingest(&mut self, event: &TranscriptEvent) {
        match &event.payload {
            Payload::TestSet {
                t_set,
                y_t,
                y_prime_early: _,
            } => self.test_set = Some((t_set.clone(), y_t.clone())),
            Payload::TestAnswers { b_t } => self.test_answers = Some(b_t.clone()),
            Payload::Ciphertext { c1, c2, .. } => self.ciphertext = Some((c1.clone(), c2.clone())),
            Payload::DeletionRequest { delete, y_prime } => {
                self.deletion_message = Some((*delete, y_prime.clone()))
            }
            Payload::DeletionAnswers { b_prime } => self.deletion_answers = Some(b_prime.clone()),
            _ => {}
        }
    }
}

struct TappingEve {
    tap: Tap,
}

impl EveRole for TappingEve {
    fn observe(&mut self, event: &TranscriptEvent) {
        self.tap.ingest(event);
    }
}

/// A distinguisher strategy: supplies `(M, D)`, then guesses which system
/// it interacted with from the observed view. Fresh state per trial.
pub trait DistinguisherStrategy {
    fn name(&self) -> &'static str;
    /// Chooses the message and deletion inputs for this trial.
    fn choose(&mut self, n: usize, rng: &mut Rng) -> (Bits, bool);
    /// `true` means "guess 0"; the advantage compares `P[G = 0]` across the
    /// two systems.
    fn guess(&mut self, view: &View, rng: &mut Rng) -> bool;
}

/// Configuration shared by the real and ideal systems.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub params: ProtocolParams,
    pub case: HonestyCase,
    /// Noise of the (honest-strategy) boxes used in the harness.
    pub device_epsilon: f64,
    pub options: RunOptions,
}

fn assemble_view(
    config: &SystemConfig,
    run: &ProtocolRun,
    tap: Tap,
    patched_u1: Option<Bits>,
    flag_override: Option<Option<bool>>,
    m_tilde_override: Option<Option<Bits>>,
) -> View {
    let dishonest_any = config.case.bob_dishonest() || config.case.eve_dishonest();
    let mut revealed = run.randomness.clone();
    if let Some(u1) = patched_u1 {
        revealed.u1 = u1;
    }
    let flag = match flag_override {
        Some(f) => f,
        None => run.outcome.flag,
    };
    let m_tilde = match m_tilde_override {
        Some(m) => m,
        None => run.outcome.m_tilde.clone(),
    };
    View {
        o: run.outcome.accepted,
        test_set: if dishonest_any { tap.test_set } else { None },
        test_answers: if dishonest_any { tap.test_answers } else { None },
        ciphertext: if dishonest_any { tap.ciphertext } else { None },
        deletion_message: if dishonest_any {
            tap.deletion_message
        } else {
            None
        },
        deletion_answers: if dishonest_any {
            tap.deletion_answers
        } else {
            None
        },
        flag,
        revealed: dishonest_any.then_some(revealed),
        // Bob's decrypted output is an outer-interface register only when he
        // is honest.
        m_tilde: if config.case.bob_dishonest() {
            None
        } else {
            m_tilde
        },
    }
}

/// One run of the real system `Π^{honest} F^real`: the actual protocol with
/// the distinguisher's inputs, viewed through the interfaces the honesty
/// case grants.
pub fn run_real(
    config: &SystemConfig,
    message: &Bits,
    deletion: bool,
    streams: &mut Streams,
) -> Result<View, ComposableError> {
    let mut device = NoisyBoxArray::new(config.params.l, config.device_epsilon);
    let mut bob = HonestBob::default();
    let mut eve = TappingEve { tap: Tap::default() };
    let run = run_protocol(
        &config.params,
        &mut device,
        &mut bob,
        &mut eve,
        message,
        deletion,
        streams,
        &config.options,
    )?;
    Ok(assemble_view(config, &run, eve.tap, None, None, None))
}

/// One run of the composed system `F^ideal Σ`: the ideal functionality with
/// the case's simulator attached. The simulator runs the protocol internally
/// with a dummy ciphertext `C1 = u1` and patches the released `U1` to
/// `M̃ ⊕ h(K^A) ⊕ u1` once the functionality discloses `M̃` (for the
/// honest-Bob simulator, to `0^n ⊕ h(K^A) ⊕ u1` always).
pub fn run_ideal_with_simulator(
    config: &SystemConfig,
    message: &Bits,
    deletion: bool,
    streams: &mut Streams,
) -> Result<View, ComposableError> {
    let case = config.case;
    if case == HonestyCase::AllHonest {
        // Trivial simulator: the ideal functionality alone.
        let outputs = ideal_run(
            case,
            config.params.n,
            &IdealRunInputs {
                o_b: None,
                o_e: None,
                m: message.clone(),
                d: deletion,
                f: None,
            },
        )?;
        return Ok(View {
            o: outputs.o,
            test_set: None,
            test_answers: None,
            ciphertext: None,
            deletion_message: None,
            deletion_answers: None,
            flag: outputs.f_to_alice,
            revealed: None,
            m_tilde: outputs.m_tilde,
        });
    }

    // Simulated protocol run with the dummy ciphertext.
    let mut options = config.options.clone();
    options.dummy_c1 = true;
    let mut device = NoisyBoxArray::new(config.params.l, config.device_epsilon);
    let mut bob = HonestBob::default();
    let mut eve = TappingEve { tap: Tap::default() };
    let run = run_protocol(
        &config.params,
        &mut device,
        &mut bob,
        &mut eve,
        message, // never read in dummy mode
        deletion,
        streams,
        &options,
    )?;

    // Feed the simulated outcome into the functionality.
    let inputs = IdealRunInputs {
        o_b: case.bob_dishonest().then_some(run.outcome.accepted),
        o_e: case.eve_dishonest().then_some(run.outcome.accepted),
        m: message.clone(),
        d: deletion,
        f: if case.bob_dishonest() && run.outcome.accepted && deletion {
            Some(run.outcome.flag.expect("deletion branch sets the flag"))
        } else {
            None
        },
    };
    let outputs = ideal_run(case, config.params.n, &inputs)?;

    // Patch U1 so the released R is consistent with the dummy ciphertext.
    let patched_u1 = if outputs.o {
        let k_a = run.outcome.k_a.as_ref().expect("accepting run has K^A");
        let hash = ToeplitzHash::new(
            config.params.l + 1,
            config.params.n,
            run.randomness.hash_seed.clone(),
        )
        .map_err(ProtocolError::from)?;
        let digest = hash
            .apply(
                PaddedKey::pad(k_a, config.params.l)
                    .map_err(ProtocolError::from)?
                    .bits(),
            )
            .map_err(ProtocolError::from)?;
        let target = if case.bob_dishonest() {
            // Whatever the functionality disclosed to (simulated dishonest)
            // Bob: m when D∧F = 0, 0^n when the deletion certificate stands.
            outputs.m_tilde.clone().expect("accepting run delivers M̃")
        } else {
            // Honest-Bob simulator never learns m.
            Bits::zeros(config.params.n)
        };
        Some(
            target
                .xor(&digest)
                .and_then(|t| t.xor(&run.randomness.u1))
                .map_err(ProtocolError::from)?,
        )
    } else {
        None
    };

    let flag_override = Some(outputs.f_to_alice);
    let m_tilde_override = Some(if case.bob_dishonest() {
        None
    } else {
        outputs.m_tilde.clone()
    });
    Ok(assemble_view(
        config,
        &run,
        eve.tap,
        patched_u1,
        flag_override,
        m_tilde_override,
    ))
}

/// One row of an advantage report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub distinguisher_name: String,
    pub case: String,
    pub trials: u64,
    pub p_real: f64,
    pub p_ideal: f64,
    pub advantage: f64,
    pub ci_halfwidth: f64,
}

impl AdvantageReport {
    pub fn csv_header() -> &'static str {
        "distinguisher_name,case,trials,p_real,p_ideal,advantage,ci_halfwidth"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.distinguisher_name,
            self.case,
            self.trials,
            self.p_real,
            self.p_ideal,
            self.advantage,
            self.ci_halfwidth
        )
    }
}

/// Estimates `|P[G=0 | real] - P[G=0 | ideal+simulator]|` over `trials`
/// independent runs of each system, with the 99% Hoeffding half-width
/// reported per side.
pub fn estimate_advantage<F>(
    config: &SystemConfig,
    make_distinguisher: F,
    trials: u64,
    master_seed: u64,
) -> Result<AdvantageReport, ComposableError>
where
    F: Fn() -> Box<dyn DistinguisherStrategy> + Sync,
{
    let name = make_distinguisher().name().to_string();
    let count = |ideal_world: bool, seed_lane: u64| -> Result<u64, ComposableError> {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut d = make_distinguisher();
                let mut harness = substream(master_seed, seed_lane * trials + t, PartyTag::Harness);
                let (m, del) = d.choose(config.params.n, &mut harness);
                let mut streams = Streams::for_trial(master_seed, seed_lane * trials + t);
                let view = if ideal_world {
                    run_ideal_with_simulator(config, &m, del, &mut streams)?
                } else {
                    run_real(config, &m, del, &mut streams)?
                };
                Ok(d.guess(&view, &mut harness) as u64)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))
    };
    let real_zero = count(false, 0)?;
    let ideal_zero = count(true, 1)?;
    let p_real = real_zero as f64 / trials as f64;
    let p_ideal = ideal_zero as f64 / trials as f64;
    Ok(AdvantageReport {
        distinguisher_name: name,
        case: config.case.label().to_string(),
        trials,
        p_real,
        p_ideal,
        advantage: (p_real - p_ideal).abs(),
        ci_halfwidth: hoeffding_halfwidth(trials),
    })
}

/// The stock distinguisher library: the supremum over all distinguishers is
/// not computable, so the harness reports per-distinguisher advantages for
/// these named strategies.
pub mod distinguishers {
    use super::*;
    use sha2::{Digest, Sha256};

    /// Outputs a constant guess; advantage is exactly 0.
    pub struct ConstantGuess;

    impl DistinguisherStrategy for ConstantGuess {
        fn name(&self) -> &'static str {
            "constant"
        }

        fn choose(&mut self, n: usize, _rng: &mut Rng) -> (Bits, bool) {
            (Bits::zeros(n), false)
        }

        fn guess(&mut self, _view: &View, _rng: &mut Rng) -> bool {
            true
        }
    }

    /// Guesses from the abort decision alone.
    pub struct AbortWatcher;

    impl DistinguisherStrategy for AbortWatcher {
        fn name(&self) -> &'static str {
            "abort_watcher"
        }

        fn choose(&mut self, n: usize, rng: &mut Rng) -> (Bits, bool) {
            (Bits::random(n, rng), false)
        }

        fn guess(&mut self, view: &View, _rng: &mut Rng) -> bool {
            view.o
        }
    }

    /// On the `D = 0` honest branch, checks whether Bob's output equals the
    /// message that was fed in.
    pub struct MtildeChecker {
        m: Option<Bits>,
    }

    impl MtildeChecker {
        pub fn new() -> Self {
            MtildeChecker { m: None }
        }
    }

    impl Default for MtildeChecker {
        fn default() -> Self {
            Self::new()
        }
    }

    impl DistinguisherStrategy for MtildeChecker {
        fn name(&self) -> &'static str {
            "m_tilde_checker"
        }

        fn choose(&mut self, n: usize, rng: &mut Rng) -> (Bits, bool) {
            let m = Bits::random(n, rng);
            self.m = Some(m.clone());
            (m, false)
        }

        fn guess(&mut self, view: &View, _rng: &mut Rng) -> bool {
            view.m_tilde.as_ref() == self.m.as_ref()
        }
    }

    /// On the `D = 1` branch, guesses from the deletion flag.
    pub struct FlagCorrelator;

    impl DistinguisherStrategy for FlagCorrelator {
        fn name(&self) -> &'static str {
            "flag_correlator"
        }

        fn choose(&mut self, n: usize, rng: &mut Rng) -> (Bits, bool) {
            (Bits::random(n, rng), true)
        }

        fn guess(&mut self, view: &View, _rng: &mut Rng) -> bool {
            view.flag == Some(true)
        }
    }

    /// Hashes the entire serialized view down to one bit; a canary for any
    /// systematic bit-level difference between the two worlds.
    pub struct TranscriptHasher {
        delete: bool,
    }

    impl TranscriptHasher {
        pub fn new(delete: bool) -> Self {
            TranscriptHasher { delete }
        }
    }

    impl DistinguisherStrategy for TranscriptHasher {
        fn name(&self) -> &'static str {
            "transcript_hasher"
        }

        fn choose(&mut self, n: usize, rng: &mut Rng) -> (Bits, bool) {
            (Bits::random(n, rng), self.delete)
        }

        fn guess(&mut self, view: &View, _rng: &mut Rng) -> bool {
            let bytes = serde_json::to_vec(view).expect("view serializes");
            let digest = Sha256::digest(&bytes);
            digest[0] & 1 == 0
        }
    }

    /// The full library, as factories.
    pub type Factory = Box<dyn Fn() -> Box<dyn DistinguisherStrategy> + Sync + Send>;

    pub fn library(delete_for_hasher: bool) -> Vec<Factory> {
        vec![
            Box::new(|| Box::new(ConstantGuess)),
            Box::new(|| Box::new(AbortWatcher)),
            Box::new(|| Box::new(MtildeChecker::new())),
            Box::new(|| Box::new(FlagCorrelator)),
            Box::new(move || Box::new(TranscriptHasher::new(delete_for_hasher))),
        ]
    }
}

/// Exhaustive small-register simulator-fidelity check for the dishonest
/// Bob+Eve case in the `D = 0` branch.
///
/// With every other random choice held fixed (same substreams), the real
/// system's released pair `(C1, U1) = (m ⊕ h(K^A) ⊕ u1, u1)` and the
/// simulator's `(u1, m ⊕ h(K^A) ⊕ u1)` trace out identical multisets as
/// `u1` ranges over all of `{0,1}^n` — the ciphertext/pad swap. The check
/// enumerates `u1` exhaustively per seed and compares the full released
/// views as multisets; equality is exact.
pub fn simulator_swap_multiset_check(
    config: &SystemConfig,
    message: &Bits,
    seeds: u64,
    master_seed: u64,
) -> Result<bool, ComposableError> {
    use crate::protocol::{draw_randomness, run_with_randomness};
    assert!(config.params.n <= 12, "exhaustive pad enumeration only");
    for seed in 0..seeds {
        let mut source = substream(master_seed, seed, PartyTag::Source);
        let (base_record, code) = draw_randomness(&config.params, &config.options, &mut source)?;
        let mut real_views: Vec<String> = Vec::new();
        let mut ideal_views: Vec<String> = Vec::new();
        for pad in 0..(1u64 << config.params.n) {
            let u1 = Bits::new((0..config.params.n).map(|i| (pad >> i) & 1 == 1).collect());
            let mut record = base_record.clone();
            record.u1 = u1;
            for ideal_world in [false, true] {
                let mut device = NoisyBoxArray::new(config.params.l, config.device_epsilon);
                let mut bob = HonestBob::default();
                let mut eve = TappingEve { tap: Tap::default() };
                let mut streams = Streams::for_trial(master_seed, seed);
                let mut options = config.options.clone();
                options.dummy_c1 = ideal_world;
                let run = run_with_randomness(
                    &config.params,
                    &mut device,
                    &mut bob,
                    &mut eve,
                    message,
                    false,
                    &mut streams,
                    &options,
                    record.clone(),
                    code.clone(),
                    Vec::new(),
                )?;
                let view = if ideal_world {
                    let inputs = IdealRunInputs {
                        o_b: Some(run.outcome.accepted),
                        o_e: Some(run.outcome.accepted),
                        m: message.clone(),
                        d: false,
                        f: None,
                    };
                    let outputs = ideal_run(HonestyCase::DishonestBobEve, config.params.n, &inputs)?;
                    let patched = if outputs.o {
                        let k_a = run.outcome.k_a.as_ref().expect("accepted");
                        let hash = ToeplitzHash::new(
                            config.params.l + 1,
                            config.params.n,
                            run.randomness.hash_seed.clone(),
                        )
                        .map_err(ProtocolError::from)?;
                        let digest = hash
                            .apply(
                                PaddedKey::pad(k_a, config.params.l)
                                    .map_err(ProtocolError::from)?
                                    .bits(),
                            )
                            .map_err(ProtocolError::from)?;
                        Some(
                            outputs
                                .m_tilde
                                .clone()
                                .expect("accepted run delivers M̃")
                                .xor(&digest)
                                .and_then(|t| t.xor(&run.randomness.u1))
                                .map_err(ProtocolError::from)?,
                        )
                    } else {
                        None
                    };
                    assemble_view(config, &run, eve.tap, patched, Some(outputs.f_to_alice), Some(None))
                } else {
                    assemble_view(config, &run, eve.tap, None, None, None)
                };
                let serialized = serde_json::to_string(&view).expect("view serializes");
                if ideal_world {
                    ideal_views.push(serialized);
                } else {
                    real_views.push(serialized);
                }
            }
        }
        real_views.sort();
        ideal_views.sort();
        if real_views != ideal_views {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Small parameters for exact simulator-fidelity work (n = 3, l = 6).
pub fn tiny_params() -> ProtocolParams {
    ProtocolParams {
        n: 3,
        l: 6,
        alpha: 0.3,
        gamma: 0.09,
        epsilon: 0.001,
        lambda_com: 1.0,
        lambda_ci: 1.0,
        lambda_ec: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(n: usize, v: u64) -> Bits {
        Bits::new((0..n).map(|i| (v >> i) & 1 == 1).collect())
    }

    #[test]
    fn ideal_all_honest_cases() {
        // D=0: O=⊤, no flag, M̃ = M
        let m = msg(8, 0xa5);
        let out = ideal_run(
            HonestyCase::AllHonest,
            8,
            &IdealRunInputs {
                o_b: None,
                o_e: None,
                m: m.clone(),
                d: false,
                f: None,
            },
        )
        .unwrap();
        assert!(out.o);
        assert_eq!(out.f_to_alice, None);
        assert_eq!(out.m_tilde, Some(m.clone()));
        assert_eq!(out.d_to_eve, None);
        // D=1: F=✓, M̃ = 0^n
        let out = ideal_run(
            HonestyCase::AllHonest,
            8,
            &IdealRunInputs {
                o_b: None,
                o_e: None,
                m,
                d: true,
                f: None,
            },
        )
        .unwrap();
        assert_eq!(out.f_to_alice, Some(true));
        assert_eq!(out.m_tilde, Some(Bits::zeros(8)));
    }

    #[test]
    fn ideal_dishonest_bob_abort_stops_everything() {
        let out = ideal_run(
            HonestyCase::DishonestBob,
            4,
            &IdealRunInputs {
                o_b: Some(false),
                o_e: None,
                m: msg(4, 3),
                d: false,
                f: None,
            },
        )
        .unwrap();
        assert!(!out.o);
        assert_eq!(out.m_tilde, None);
        assert_eq!(out.f_to_alice, None);
    }

    #[test]
    fn ideal_flag_gates_message_release() {
        // Dishonest Bob, D=1, F=✗: he keeps the message.
        let m = msg(4, 9);
        let out = ideal_run(
            HonestyCase::DishonestBob,
            4,
            &IdealRunInputs {
                o_b: Some(true),
                o_e: None,
                m: m.clone(),
                d: true,
                f: Some(false),
            },
        )
        .unwrap();
        assert_eq!(out.f_to_alice, Some(false));
        assert_eq!(out.m_tilde, Some(m));
        // F=✓: dummy string.
        let out = ideal_run(
            HonestyCase::DishonestBob,
            4,
            &IdealRunInputs {
                o_b: Some(true),
                o_e: None,
                m: msg(4, 9),
                d: true,
                f: Some(true),
            },
        )
        .unwrap();
        assert_eq!(out.m_tilde, Some(Bits::zeros(4)));
    }

    #[test]
    fn ideal_combined_abort_is_conjunction() {
        for (ob, oe, expect) in [(true, true, true), (true, false, false), (false, true, false)] {
            let out = ideal_run(
                HonestyCase::DishonestBobEve,
                4,
                &IdealRunInputs {
                    o_b: Some(ob),
                    o_e: Some(oe),
                    m: msg(4, 1),
                    d: false,
                    f: None,
                },
            )
            .unwrap();
            assert_eq!(out.o, expect);
        }
    }

    #[test]
    fn ideal_rejects_out_of_order_and_wrong_interface() {
        let mut ideal = IdealEcd::new(HonestyCase::AllHonest, 4);
        assert!(matches!(
            ideal.input_abort_bob(true),
            Err(ComposableError::WrongInterface(_))
        ));
        assert!(matches!(
            ideal.input_message(msg(4, 0)),
            Err(ComposableError::OutOfOrder(_))
        ));
        let mut ideal = IdealEcd::new(HonestyCase::DishonestBobEve, 4);
        // O^E before O^B violates the fixed convention.
        assert!(matches!(
            ideal.input_abort_eve(true),
            Err(ComposableError::OutOfOrder(_))
        ));
    }

    #[test]
    fn deterministic_given_inputs_all_honest() {
        for d in [false, true] {
            let m = msg(6, 0x2b);
            let a = ideal_run(
                HonestyCase::AllHonest,
                6,
                &IdealRunInputs {
                    o_b: None,
                    o_e: None,
                    m: m.clone(),
                    d,
                    f: None,
                },
            )
            .unwrap();
            let b = ideal_run(
                HonestyCase::AllHonest,
                6,
                &IdealRunInputs {
                    o_b: None,
                    o_e: None,
                    m,
                    d,
                    f: None,
                },
            )
            .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn simulator_swap_exact_at_tiny_sizes() {
        let config = SystemConfig {
            params: tiny_params(),
            case: HonestyCase::DishonestBobEve,
            device_epsilon: 0.001,
            options: RunOptions::default(),
        };
        let ok = simulator_swap_multiset_check(&config, &msg(3, 0b101), 40, 900).unwrap();
        assert!(ok, "swap multisets diverged");
    }

    #[test]
    fn advantage_is_symmetric_and_zero_for_constant() {
        let config = SystemConfig {
            params: tiny_params(),
            case: HonestyCase::DishonestBobEve,
            device_epsilon: 0.001,
            options: RunOptions::default(),
        };
        let report = estimate_advantage(
            &config,
            || Box::new(distinguishers::ConstantGuess),
            500,
            901,
        )
        .unwrap();
        assert_eq!(report.advantage, 0.0);
        assert_eq!(report.p_real, 1.0);
        assert_eq!(report.p_ideal, 1.0);
    }

    #[test]
    fn transcript_hasher_sees_nothing_in_d0_branch() {
        let config = SystemConfig {
            params: tiny_params(),
            case: HonestyCase::DishonestBobEve,
            device_epsilon: 0.001,
            options: RunOptions::default(),
        };
        let report = estimate_advantage(
            &config,
            || Box::new(distinguishers::TranscriptHasher::new(false)),
            4000,
            902,
        )
        .unwrap();
        assert!(
            report.advantage <= 2.0 * report.ci_halfwidth,
            "advantage {} vs ci {}",
            report.advantage,
            report.ci_halfwidth
        );
    }
}
