//! The magic square game `MS` and its anchored variants: input samplers, win
//! predicates, repeated-game threshold evaluation and a classical-value
//! brute-forcer.
//!
//! `MS`: Alice and Bob receive uniform trits `x`, `y`; Alice outputs an
//! even-parity 3-bit string `a`, Bob an odd-parity `b`; they win iff
//! `a[y] = b[x]`.
//!
//! `MSB_α` is a two-round variant where Bob is later given `(x, y)` for a
//! fresh `y ≠ y'` (or the anchor `⊥` with probability α) and must guess
//! `a[y]`. `MSE_α` is a three-player variant where Eve must guess the common
//! bit when probed.

use num_rational::Ratio;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, PartyTag, Rng};
use crate::stats::Estimate;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("trit value {0} out of range")]
    BadTrit(u8),
    #[error("answer bits {0:?} have wrong parity (expected {1})")]
    BadParity([bool; 3], &'static str),
    #[error("second-round guess must be present exactly when the probe is")]
    GuessPresenceMismatch,
    #[error("threshold {t} exceeds instance count {l}")]
    BadThreshold { t: usize, l: usize },
    #[error("anchoring probability {0} not in (0,1)")]
    BadAlpha(f64),
    #[error("operation unsupported for game {0:?}")]
    UnsupportedGame(GameTag),
}

/// A trit in `{0, 1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trit(u8);

impl Trit {
    pub fn new(v: u8) -> Result<Self, GameError> {
        if v > 2 {
            return Err(GameError::BadTrit(v));
        }
        Ok(Trit(v))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> [Trit; 3] {
        [Trit(0), Trit(1), Trit(2)]
    }

    pub fn uniform(rng: &mut Rng) -> Trit {
        Trit(rng.gen_range(0..3u8))
    }

    /// Uniform over the two trits different from `avoid`.
    pub fn uniform_excluding(avoid: Trit, rng: &mut Rng) -> Trit {
        let r = rng.gen_range(0..2u8);
        let v = (avoid.0 + 1 + r) % 3;
        Trit(v)
    }
}

fn parity(bits: [bool; 3]) -> bool {
    bits[0] ^ bits[1] ^ bits[2]
}

/// Alice's 3-bit answer; parity `a[0]⊕a[1]⊕a[2] = 0` enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AliceAnswer([bool; 3]);

impl AliceAnswer {
    pub fn new(bits: [bool; 3]) -> Result<Self, GameError> {
        if parity(bits) {
            return Err(GameError::BadParity(bits, "even"));
        }
        Ok(AliceAnswer(bits))
    }

    pub fn bit(self, i: Trit) -> bool {
        self.0[i.index()]
    }

    pub fn bits(self) -> [bool; 3] {
        self.0
    }

    /// The four even-parity strings.
    pub fn all() -> [AliceAnswer; 4] {
        [
            AliceAnswer([false, false, false]),
            AliceAnswer([false, true, true]),
            AliceAnswer([true, false, true]),
            AliceAnswer([true, true, false]),
        ]
    }
}

/// Bob's 3-bit answer; parity `b[0]⊕b[1]⊕b[2] = 1` enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BobAnswer([bool; 3]);

impl BobAnswer {
    pub fn new(bits: [bool; 3]) -> Result<Self, GameError> {
        if !parity(bits) {
            return Err(GameError::BadParity(bits, "odd"));
        }
        Ok(BobAnswer(bits))
    }

    pub fn bit(self, i: Trit) -> bool {
        self.0[i.index()]
    }

    pub fn bits(self) -> [bool; 3] {
        self.0
    }

    /// The four odd-parity strings.
    pub fn all() -> [BobAnswer; 4] {
        [
            BobAnswer([true, false, false]),
            BobAnswer([false, true, false]),
            BobAnswer([false, false, true]),
            BobAnswer([true, true, true]),
        ]
    }
}

/// One `MS` question pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsQuestion {
    pub x: Trit,
    pub y: Trit,
}

/// One `MS` answer pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsAnswer {
    pub a: AliceAnswer,
    pub b: BobAnswer,
}

/// Bob's (or Eve's) second-round input: the anchor `⊥` or a probe `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Round2Input {
    Anchor,
    Probe { x: Trit, y: Trit },
}

/// `MS` win condition: `a[y] = b[x]`.
pub fn ms_predicate(q: MsQuestion, ans: MsAnswer) -> bool {
    ans.a.bit(q.y) == ans.b.bit(q.x)
}

/// `MSB_α` win condition: first-round match, and either the anchor was drawn
/// or the second-round guess `c` equals `a[y]`.
pub fn msb_predicate(
    x: Trit,
    y_prime: Trit,
    a: AliceAnswer,
    b_prime: BobAnswer,
    z: Round2Input,
    c: Option<bool>,
) -> Result<bool, GameError> {
    let first = a.bit(y_prime) == b_prime.bit(x);
    match (z, c) {
        (Round2Input::Anchor, None) => Ok(first),
        (Round2Input::Probe { y, .. }, Some(guess)) => Ok(first && a.bit(y) == guess),
        _ => Err(GameError::GuessPresenceMismatch),
    }
}

/// `MSE_α` win condition: `a[y] = b[x]`, and either the anchor was drawn or
/// Eve's guess `c` equals the common bit.
pub fn mse_predicate(
    x: Trit,
    y: Trit,
    a: AliceAnswer,
    b: BobAnswer,
    z: Round2Input,
    c: Option<bool>,
) -> Result<bool, GameError> {
    let common = a.bit(y) == b.bit(x);
    match (z, c) {
        (Round2Input::Anchor, None) => Ok(common),
        (Round2Input::Probe { .. }, Some(guess)) => {
            Ok(common && guess == a.bit(y) && guess == b.bit(x))
        }
        _ => Err(GameError::GuessPresenceMismatch),
    }
}

/// Which base game a repeated-game spec refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameTag {
    Ms,
    Msb,
    Mse,
}

/// A threshold repetition `G^{t/l}` of a base game with anchoring
/// probability α.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RepeatedGameSpec {
    pub game: GameTag,
    pub instances: usize,
    pub threshold: usize,
    pub alpha: f64,
}

impl RepeatedGameSpec {
    pub fn new(game: GameTag, instances: usize, threshold: usize, alpha: f64) -> Result<Self, GameError> {
        if threshold > instances {
            return Err(GameError::BadThreshold {
                t: threshold,
                l: instances,
            });
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(GameError::BadAlpha(alpha));
        }
        Ok(RepeatedGameSpec {
            game,
            instances,
            threshold,
            alpha,
        })
    }
}

/// Inputs for one instance of a (possibly two-round) game.
#[derive(Debug, Clone, Copy)]
pub struct InstanceInput {
    /// `(x, y)` for MS/MSE; `(x, y')` for MSB's first round.
    pub question: MsQuestion,
    /// Second-round input; `None` for plain MS.
    pub round2: Option<Round2Input>,
}

/// Samples the per-instance input tuples for a repeated game.
///
/// All first-round inputs are i.i.d. uniform trits. For MSB the probe carries
/// `(x, y)` with `y ≠ y'`; for MSE it carries `(x, y)` itself. The anchor is
/// drawn with probability α, independently of the first-round inputs.
pub fn sample_inputs(spec: &RepeatedGameSpec, rng: &mut Rng) -> Vec<InstanceInput> {
    (0..spec.instances)
        .map(|_| {
            let x = Trit::uniform(rng);
            let y1 = Trit::uniform(rng);
            let question = MsQuestion { x, y: y1 };
            let round2 = match spec.game {
                GameTag::Ms => None,
                GameTag::Msb => {
                    // Draw the probe challenge first so the rng stream shape
                    // does not depend on the anchor coin.
                    let y = Trit::uniform_excluding(y1, rng);
                    let anchored = rng.gen::<f64>() < spec.alpha;
                    Some(if anchored {
                        Round2Input::Anchor
                    } else {
                        Round2Input::Probe { x, y }
                    })
                }
                GameTag::Mse => {
                    let anchored = rng.gen::<f64>() < spec.alpha;
                    Some(if anchored {
                        Round2Input::Anchor
                    } else {
                        Round2Input::Probe { x, y: y1 }
                    })
                }
            };
            InstanceInput { question, round2 }
        })
        .collect()
}

/// A strategy playing all `l` instances of a repeated game; it may keep
/// arbitrary internal state between the two rounds.
pub trait StrategyRole {
    /// First-round answers, one per instance.
    fn first_round(&mut self, inputs: &[MsQuestion], rng: &mut Rng) -> Vec<MsAnswer>;

    /// Second-round guesses; entry `i` must be `Some` exactly when
    /// `inputs[i]` is a probe. Not called for plain MS.
    fn second_round(&mut self, inputs: &[Round2Input], _rng: &mut Rng) -> Vec<Option<bool>> {
        inputs
            .iter()
            .map(|z| match z {
                Round2Input::Anchor => None,
                Round2Input::Probe { .. } => Some(false),
            })
            .collect()
    }
}

/// Evaluates whether one sampled play of `spec` with `strategy` wins (at
/// least `threshold` instances satisfy the predicate).
pub fn play_once(
    spec: &RepeatedGameSpec,
    strategy: &mut dyn StrategyRole,
    rng: &mut Rng,
) -> Result<bool, GameError> {
    let inputs = sample_inputs(spec, rng);
    let questions: Vec<MsQuestion> = inputs.iter().map(|i| i.question).collect();
    let answers = strategy.first_round(&questions, rng);
    assert_eq!(answers.len(), inputs.len(), "strategy answered wrong length");
    let guesses = if spec.game == GameTag::Ms {
        vec![None; inputs.len()]
    } else {
        let round2: Vec<Round2Input> = inputs.iter().map(|i| i.round2.unwrap()).collect();
        strategy.second_round(&round2, rng)
    };
    let mut wins = 0usize;
    for ((input, ans), guess) in inputs.iter().zip(&answers).zip(&guesses) {
        let won = match spec.game {
            GameTag::Ms => ms_predicate(input.question, *ans),
            GameTag::Msb => msb_predicate(
                input.question.x,
                input.question.y,
                ans.a,
                ans.b,
                input.round2.unwrap(),
                *guess,
            )?,
            GameTag::Mse => mse_predicate(
                input.question.x,
                input.question.y,
                ans.a,
                ans.b,
                input.round2.unwrap(),
                *guess,
            )?,
        };
        wins += won as usize;
    }
    Ok(wins >= spec.threshold)
}

/// Monte-Carlo estimate of the winning probability of `spec` under the
/// strategies produced by `make_strategy`, with a 99% Hoeffding interval.
/// Trials run in parallel on independent substreams; the estimate depends
/// only on `master_seed`.
pub fn evaluate_repeated<F>(
    spec: &RepeatedGameSpec,
    make_strategy: F,
    trials: u64,
    master_seed: u64,
) -> Result<Estimate, GameError>
where
    F: Fn() -> Box<dyn StrategyRole> + Sync,
{
    let wins = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(master_seed, t, PartyTag::Harness);
            let mut strategy = make_strategy();
            play_once(spec, strategy.as_mut(), &mut rng).map(u64::from)
        })
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    Ok(Estimate::from_counts(wins, trials))
}

/// A strategy that loses every instance: Bob answers `b` with
/// `b[x] ≠ a[y]` by construction is not possible without knowing both
/// inputs, so this one simply fixes mismatched constants.
pub struct AlwaysLose;

impl StrategyRole for AlwaysLose {
    fn first_round(&mut self, inputs: &[MsQuestion], _rng: &mut Rng) -> Vec<MsAnswer> {
        inputs
            .iter()
            .map(|q| {
                // a = 000 so a[y] = 0; choose b with b[x] = 1.
                let a = AliceAnswer::new([false, false, false]).unwrap();
                let mut bits = [false, false, false];
                bits[q.x.index()] = true;
                let b = BobAnswer::new(bits).unwrap();
                MsAnswer { a, b }
            })
            .collect()
    }
}

/// A synthetic i.i.d. strategy that wins each instance independently with
/// probability `p` (it cheats by reading both inputs; useful as a calibrated
/// reference for threshold statistics).
pub struct IidWin {
    pub p: f64,
}

impl StrategyRole for IidWin {
    fn first_round(&mut self, inputs: &[MsQuestion], rng: &mut Rng) -> Vec<MsAnswer> {
        inputs
            .iter()
            .map(|q| {
                let a = AliceAnswer::all()[rng.gen_range(0..4)];
                let win = rng.gen::<f64>() < self.p;
                let target = if win { a.bit(q.y) } else { !a.bit(q.y) };
                let b = BobAnswer::all()
                    .into_iter()
                    .filter(|b| b.bit(q.x) == target)
                    .nth(rng.gen_range(0..2))
                    .expect("two odd-parity strings share any fixed bit");
                MsAnswer { a, b }
            })
            .collect()
    }
}

/// A deterministic classical strategy pair: one answer per input trit.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicPair {
    pub alice: [AliceAnswer; 3],
    pub bob: [BobAnswer; 3],
}

impl DeterministicPair {
    /// Fraction of the 9 input pairs this pair wins, as an exact rational.
    pub fn value(&self) -> Ratio<u64> {
        let mut wins = 0u64;
        for x in Trit::all() {
            for y in Trit::all() {
                let a = self.alice[x.index()];
                let b = self.bob[y.index()];
                wins += (a.bit(y) == b.bit(x)) as u64;
            }
        }
        Ratio::new(wins, 9)
    }
}

/// All 64 deterministic Alice strategies (functions from trits to
/// even-parity answers).
pub fn alice_strategies() -> Vec<[AliceAnswer; 3]> {
    let all = AliceAnswer::all();
    let mut out = Vec::with_capacity(64);
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out.push([all[i], all[j], all[k]]);
            }
        }
    }
    out
}

/// All 64 deterministic Bob strategies.
pub fn bob_strategies() -> Vec<[BobAnswer; 3]> {
    let all = BobAnswer::all();
    let mut out = Vec::with_capacity(64);
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out.push([all[i], all[j], all[k]]);
            }
        }
    }
    out
}

/// Result of the classical brute force: the exact value and how many of the
/// 64×64 deterministic pairs attain it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassicalValue {
    pub value: Ratio<u64>,
    pub optimal_pairs: usize,
}

/// Brute-forces the classical value of `MS` over all deterministic strategy
/// pairs. Only the single-round game is supported.
pub fn classical_value_bruteforce(game: GameTag) -> Result<ClassicalValue, GameError> {
    if game != GameTag::Ms {
        return Err(GameError::UnsupportedGame(game));
    }
    Ok(classical_value_with_relabeling([0, 1, 2]))
}

/// Brute force with Alice's input trit relabeled by a permutation; used to
/// check the game's symmetry. `perm[x]` is the row Alice actually plays when
/// her input is `x`.
pub fn classical_value_with_relabeling(perm: [usize; 3]) -> ClassicalValue {
    let mut best = Ratio::new(0u64, 9);
    let mut count = 0usize;
    for alice in alice_strategies() {
        for bob in bob_strategies() {
            let relabeled = [alice[perm[0]], alice[perm[1]], alice[perm[2]]];
            let v = DeterministicPair {
                alice: relabeled,
                bob,
            }
            .value();
            if v > best {
                best = v;
                count = 1;
            } else if v == best {
                count += 1;
            }
        }
    }
    ClassicalValue {
        value: best,
        optimal_pairs: count,
    }
}
