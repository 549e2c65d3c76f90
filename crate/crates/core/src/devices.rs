//! Untrusted-device models compatible with the magic square game: the ideal
//! Mermin–Peres strategy on two EPR pairs, exactly-calibrated noisy i.i.d.
//! boxes, adversarial device plug-ins, and a no-signalling checker.
//!
//! Each box pair is simulated on its own four qubits (Alice holds 0,1 and
//! Bob holds 2,3; the EPR pairs are (0,2) and (1,3)); instances are never
//! joined into one global tensor product. Honest arrays sample outcomes from
//! Born-branch tables enumerated once from the quantum model, which keeps
//! large honest experiments cheap while staying distribution-exact.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng as _;
use thiserror::Error;

use crate::games::{AliceAnswer, BobAnswer, MsAnswer, MsQuestion, StrategyRole, Trit};
use crate::qsim::{
    self, measure_observable, pauli, project_branch, DensityOperator, Outcome, PmObservable,
    StateVector,
};
use crate::rng::Rng;
use crate::stats::tv_distance;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("instance {0}: side already consumed in round one")]
    AlreadyQueried(usize),
    #[error("instance {0}: calibrated noisy boxes require Alice's query first")]
    AliceFirst(usize),
    #[error("instance {0}: measurement depth exhausted")]
    DepthExceeded(usize),
    #[error("instance index {0} out of range")]
    BadIndex(usize),
    #[error("insufficient samples for a no-signalling verdict: {0}")]
    InsufficientSamples(usize),
    #[error("sample shapes disagree")]
    ShapeMismatch,
}

/// The sign-corrected Mermin–Peres observable grid on two qubits. Entry
/// `(r, c)` is the observable Alice measures for row input `r` at position
/// `c` (and dually for Bob's columns). Every row multiplies to `+I`, every
/// column to `-I`, and entries within one row or column commute.
pub fn mp_grid() -> &'static [[PmObservable; 3]; 3] {
    static GRID: OnceLock<[[PmObservable; 3]; 3]> = OnceLock::new();
    GRID.get_or_init(|| {
        let m = |m: DMatrix<Complex64>| PmObservable::new(m).expect("grid entries are valid");
        let neg = |m: DMatrix<Complex64>| m * Complex64::new(-1.0, 0.0);
        [
            [
                m(pauli::kron(&[pauli::i2(), pauli::z()])),
                m(pauli::kron(&[pauli::z(), pauli::i2()])),
                m(pauli::kron(&[pauli::z(), pauli::z()])),
            ],
            [
                m(pauli::kron(&[pauli::x(), pauli::i2()])),
                m(pauli::kron(&[pauli::i2(), pauli::x()])),
                m(pauli::kron(&[pauli::x(), pauli::x()])),
            ],
            [
                m(neg(pauli::kron(&[pauli::x(), pauli::z()]))),
                m(neg(pauli::kron(&[pauli::z(), pauli::x()]))),
                m(pauli::kron(&[pauli::y(), pauli::y()])),
            ],
        ]
    })
}

/// The two-EPR-pair shared state |Φ⟩ = EPR(0,2) ⊗ EPR(1,3) as a state
/// vector on qubits (A1, A2, B1, B2).
pub fn two_epr_pairs() -> StateVector {
    static STATE: OnceLock<StateVector> = OnceLock::new();
    STATE
        .get_or_init(|| {
            let dim = 16usize;
            let mut amps = nalgebra::DVector::zeros(dim);
            for i in 0..2usize {
                for j in 0..2usize {
                    // |i j i j⟩ with qubit 0 as the most significant bit
                    let idx = (i << 3) | (j << 2) | (i << 1) | j;
                    amps[idx] = Complex64::new(0.5, 0.0);
                }
            }
            StateVector::new(amps).expect("EPR pair construction is normalized")
        })
        .clone()
}

fn alice_row_observable(r: Trit, c: usize) -> PmObservable {
    let grid = mp_grid();
    let full = qsim::embed_operator(grid[r.index()][c].matrix(), &[0, 1], 4)
        .expect("embedding the grid entry");
    PmObservable::new(full).expect("embedded observable is valid")
}

fn bob_col_observable(r: usize, c: Trit) -> PmObservable {
    let grid = mp_grid();
    // Grid entries equal their own transpose here, so Bob measures the same
    // matrices on his half and outcomes agree with Alice's at the
    // intersection.
    let full = qsim::embed_operator(grid[r][c.index()].matrix(), &[2, 3], 4)
        .expect("embedding the grid entry");
    PmObservable::new(full).expect("embedded observable is valid")
}

/// One magic-square box pair holding the shared 4-qubit state and the two
/// measurement banks; tracks consumption of each side's round-one query and
/// retains post-measurement states for later challenges.
pub struct BoxPair {
    state: DensityOperator,
    alice_done: bool,
    bob_done: bool,
}

impl Default for BoxPair {
    fn default() -> Self {
        Self::ideal()
    }
}

impl BoxPair {
    /// A fresh pair implementing the ideal strategy.
    pub fn ideal() -> Self {
        BoxPair {
            state: two_epr_pairs().to_density(),
            alice_done: false,
            bob_done: false,
        }
    }

    pub fn state(&self) -> &DensityOperator {
        &self.state
    }

    /// Measures the three commuting observables of row `x` on Alice's half.
    pub fn query_alice(&mut self, x: Trit, rng: &mut Rng) -> Result<AliceAnswer, DeviceError> {
        if self.alice_done {
            return Err(DeviceError::AlreadyQueried(0));
        }
        self.alice_done = true;
        let mut bits = [false; 3];
        for (c, bit) in bits.iter_mut().enumerate() {
            let obs = alice_row_observable(x, c);
            let (outcome, post) =
                measure_observable(&self.state, &obs, rng).expect("grid measurement");
            *bit = outcome.bit();
            self.state = post;
        }
        Ok(AliceAnswer::new(bits).expect("row product +I gives even parity"))
    }

    /// Measures the three commuting observables of column `y` on Bob's half.
    pub fn query_bob(&mut self, y: Trit, rng: &mut Rng) -> Result<BobAnswer, DeviceError> {
        if self.bob_done {
            return Err(DeviceError::AlreadyQueried(0));
        }
        self.bob_done = true;
        Ok(self.measure_bob_column(y, rng))
    }

    /// Second-round challenge response: measures column `y'` on the current
    /// (possibly post-measurement) state. Unlike round one this may follow an
    /// earlier measurement of the same side.
    pub fn second_round_deletion_response(&mut self, y_prime: Trit, rng: &mut Rng) -> BobAnswer {
        self.measure_bob_column(y_prime, rng)
    }

    fn measure_bob_column(&mut self, y: Trit, rng: &mut Rng) -> BobAnswer {
        let mut bits = [false; 3];
        for (r, bit) in bits.iter_mut().enumerate() {
            let obs = bob_col_observable(r, y);
            let (outcome, post) =
                measure_observable(&self.state, &obs, rng).expect("grid measurement");
            *bit = outcome.bit();
            self.state = post;
        }
        BobAnswer::new(bits).expect("column product -I gives odd parity")
    }
}

fn bits_to_alice(bits: [bool; 3]) -> AliceAnswer {
    AliceAnswer::new(bits).expect("even parity by construction")
}

fn bits_to_bob(bits: [bool; 3]) -> BobAnswer {
    BobAnswer::new(bits).expect("odd parity by construction")
}

/// Exact Born probabilities for Alice measuring row `x` and Bob measuring
/// column `y` on a fresh ideal pair: list of `(a, b, probability)` over the
/// support.
pub fn ms_joint_distribution(x: Trit, y: Trit) -> &'static Vec<(AliceAnswer, BobAnswer, f64)> {
    static TABLES: OnceLock<HashMap<(u8, u8), Vec<(AliceAnswer, BobAnswer, f64)>>> =
        OnceLock::new();
    let tables = TABLES.get_or_init(|| {
        let mut map = HashMap::new();
        for x in Trit::all() {
            for y in Trit::all() {
                map.insert((x.index() as u8, y.index() as u8), enumerate_pair(x, y));
            }
        }
        map
    });
    &tables[&(x.index() as u8, y.index() as u8)]
}

fn enumerate_pair(x: Trit, y: Trit) -> Vec<(AliceAnswer, BobAnswer, f64)> {
    let root = two_epr_pairs().to_density();
    let mut out = Vec::new();
    let mut stack: Vec<(usize, [bool; 6], f64, DensityOperator)> = vec![(0, [false; 6], 1.0, root)];
    while let Some((depth, bits, prob, state)) = stack.pop() {
        if depth == 6 {
            out.push((
                bits_to_alice([bits[0], bits[1], bits[2]]),
                bits_to_bob([bits[3], bits[4], bits[5]]),
                prob,
            ));
            continue;
        }
        let obs = if depth < 3 {
            alice_row_observable(x, depth)
        } else {
            bob_col_observable(depth - 3, y)
        };
        for outcome in [Outcome::Plus, Outcome::Minus] {
            if let Some((p, post)) = project_branch(&state, &obs, outcome).expect("branching") {
                let mut next = bits;
                next[depth] = outcome.bit();
                stack.push((depth + 1, next, prob * p, post));
            }
        }
    }
    out
}

/// Exact Born probabilities for the sequence: Alice row `x`, then Bob column
/// `y1`, then Bob column `y2` on the post-measurement state. Backs the
/// measure-early attack oracle.
pub fn sequential_joint_distribution(
    x: Trit,
    y1: Trit,
    y2: Trit,
) -> &'static Vec<(AliceAnswer, BobAnswer, BobAnswer, f64)> {
    type Table = Vec<(AliceAnswer, BobAnswer, BobAnswer, f64)>;
    static TABLES: OnceLock<HashMap<(u8, u8, u8), Table>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| {
        let mut map = HashMap::new();
        for x in Trit::all() {
            for y1 in Trit::all() {
                for y2 in Trit::all() {
                    map.insert(
                        (x.index() as u8, y1.index() as u8, y2.index() as u8),
                        enumerate_triple(x, y1, y2),
                    );
                }
            }
        }
        map
    });
    &tables[&(x.index() as u8, y1.index() as u8, y2.index() as u8)]
}

fn enumerate_triple(x: Trit, y1: Trit, y2: Trit) -> Vec<(AliceAnswer, BobAnswer, BobAnswer, f64)> {
    let root = two_epr_pairs().to_density();
    let mut out = Vec::new();
    let mut stack: Vec<(usize, [bool; 9], f64, DensityOperator)> = vec![(0, [false; 9], 1.0, root)];
    while let Some((depth, bits, prob, state)) = stack.pop() {
        if depth == 9 {
            out.push((
                bits_to_alice([bits[0], bits[1], bits[2]]),
                bits_to_bob([bits[3], bits[4], bits[5]]),
                bits_to_bob([bits[6], bits[7], bits[8]]),
                prob,
            ));
            continue;
        }
        let obs = match depth {
            0..=2 => alice_row_observable(x, depth),
            3..=5 => bob_col_observable(depth - 3, y1),
            _ => bob_col_observable(depth - 6, y2),
        };
        for outcome in [Outcome::Plus, Outcome::Minus] {
            if let Some((p, post)) = project_branch(&state, &obs, outcome).expect("branching") {
                let mut next = bits;
                next[depth] = outcome.bit();
                stack.push((depth + 1, next, prob * p, post));
            }
        }
    }
    out
}

fn sample_from<'a, T, F>(rng: &mut Rng, entries: &'a [T], prob: F) -> &'a T
where
    F: Fn(&T) -> f64,
{
    let mut u: f64 = rng.gen();
    for e in entries {
        u -= prob(e);
        if u <= 0.0 {
            return e;
        }
    }
    entries.last().expect("nonempty distribution")
}

/// Side information an adversarial device hands to Eve.
#[derive(Debug, Clone)]
pub enum SideInfo {
    None,
    /// Arbitrary classical record (e.g. planted strategies).
    Classical(Vec<u8>),
}

/// A raw 3-bit device output; parity is *not* enforced so adversarial
/// devices can emit illegal answers (the protocol maps those to forced
/// losses).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawAnswer3(pub [bool; 3]);

impl RawAnswer3 {
    pub fn from_alice(a: AliceAnswer) -> Self {
        RawAnswer3(a.bits())
    }

    pub fn from_bob(b: BobAnswer) -> Self {
        RawAnswer3(b.bits())
    }

    pub fn bit(&self, i: Trit) -> bool {
        self.0[i.index()]
    }

    /// `Some` iff the bits have even parity.
    pub fn as_alice(&self) -> Option<AliceAnswer> {
        AliceAnswer::new(self.0).ok()
    }

    /// `Some` iff the bits have odd parity.
    pub fn as_bob(&self) -> Option<BobAnswer> {
        BobAnswer::new(self.0).ok()
    }
}

/// The array of `l` box pairs a protocol run consumes. Implementations are
/// either honest (calibrated noisy boxes) or adversarial plug-ins supplied
/// by Eve.
pub trait DeviceArray {
    /// Eve fabricates the boxes. Called once before any query.
    fn prepare(&mut self, instances: usize, rng: &mut Rng);

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Alice presses row `x` on her box `i`.
    fn alice_query(&mut self, i: usize, x: Trit, rng: &mut Rng) -> Result<RawAnswer3, DeviceError>;

    /// Bob presses the given columns on the listed boxes (his round-one
    /// queries; he may supply any subset first, see the no-signalling
    /// assumption).
    fn bob_query(
        &mut self,
        queries: &[(usize, Trit)],
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, DeviceError>;

    /// Bob's second-round (deletion challenge) queries; may target boxes he
    /// has already measured.
    fn bob_second_round(
        &mut self,
        queries: &[(usize, Trit)],
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, DeviceError>;

    /// Whatever Eve retained about the fabricated boxes.
    fn eve_side_information(&self) -> SideInfo {
        SideInfo::None
    }
}

#[derive(Debug, Clone, Default)]
struct NoisyInstance {
    alice: Option<(Trit, AliceAnswer)>,
    /// Bob's ideal (pre-noise) measurement chain, most recent last.
    bob_chain: Vec<(Trit, BobAnswer)>,
}

/// Honest i.i.d. boxes: each instance wins `MS` with probability exactly
/// `1 - ε/2`. Noise is classical post-processing of the ideal joint output:
/// with probability `ε/2`, Bob's report has `b[x]` flipped together with one
/// other uniformly chosen bit (parity preserved, instance lost).
///
/// Outcomes are sampled from the exact Born tables of the ideal strategy, so
/// the distribution matches the per-instance quantum simulation exactly;
/// up to two sequential Bob measurements per instance are supported (enough
/// for the deletion flow and the measure-early attack).
pub struct NoisyBoxArray {
    epsilon: f64,
    instances: Vec<NoisyInstance>,
}

impl NoisyBoxArray {
    /// `0 <= ε < 1`; `ε = 0` reproduces the ideal strategy exactly.
    pub fn new(instances: usize, epsilon: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&epsilon),
            "epsilon {epsilon} outside [0,1)"
        );
        NoisyBoxArray {
            epsilon,
            instances: vec![NoisyInstance::default(); instances],
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn corrupt(&self, ideal: BobAnswer, x: Trit, rng: &mut Rng) -> RawAnswer3 {
        let mut bits = ideal.bits();
        if self.epsilon > 0.0 && rng.gen::<f64>() < self.epsilon / 2.0 {
            bits[x.index()] = !bits[x.index()];
            let others: Vec<usize> = (0..3).filter(|&i| i != x.index()).collect();
            let other = others[rng.gen_range(0..2)];
            bits[other] = !bits[other];
        }
        RawAnswer3(bits)
    }

    fn bob_measure(
        &mut self,
        i: usize,
        y: Trit,
        rng: &mut Rng,
    ) -> Result<RawAnswer3, DeviceError> {
        if i >= self.instances.len() {
            return Err(DeviceError::BadIndex(i));
        }
        let (x, a) = self.instances[i]
            .alice
            .ok_or(DeviceError::AliceFirst(i))?;
        let chain_len = self.instances[i].bob_chain.len();
        let ideal = match chain_len {
            0 => {
                let table = ms_joint_distribution(x, y);
                let mass: f64 = table
                    .iter()
                    .filter(|(ta, _, _)| *ta == a)
                    .map(|(_, _, p)| p)
                    .sum();
                let conditional: Vec<(BobAnswer, f64)> = table
                    .iter()
                    .filter(|(ta, _, _)| *ta == a)
                    .map(|(_, b, p)| (*b, p / mass))
                    .collect();
                sample_from(rng, &conditional, |e| e.1).0
            }
            1 => {
                let (y1, b1) = self.instances[i].bob_chain[0];
                let table = sequential_joint_distribution(x, y1, y);
                let mass: f64 = table
                    .iter()
                    .filter(|(ta, tb, _, _)| *ta == a && *tb == b1)
                    .map(|(_, _, _, p)| p)
                    .sum();
                let conditional: Vec<(BobAnswer, f64)> = table
                    .iter()
                    .filter(|(ta, tb, _, _)| *ta == a && *tb == b1)
                    .map(|(_, _, b2, p)| (*b2, p / mass))
                    .collect();
                sample_from(rng, &conditional, |e| e.1).0
            }
            _ => return Err(DeviceError::DepthExceeded(i)),
        };
        self.instances[i].bob_chain.push((y, ideal));
        Ok(self.corrupt(ideal, x, rng))
    }
}

impl DeviceArray for NoisyBoxArray {
    fn prepare(&mut self, instances: usize, _rng: &mut Rng) {
        self.instances = vec![NoisyInstance::default(); instances];
    }

    fn len(&self) -> usize {
        self.instances.len()
    }

    fn alice_query(&mut self, i: usize, x: Trit, rng: &mut Rng) -> Result<RawAnswer3, DeviceError> {
        if i >= self.instances.len() {
            return Err(DeviceError::BadIndex(i));
        }
        if self.instances[i].alice.is_some() {
            return Err(DeviceError::AlreadyQueried(i));
        }
        // Marginal of `a` is the same for every Bob column (no-signalling);
        // sample from the (x, column 0) table. Keep the entry order fixed:
        // per-seed reproducibility must not depend on map iteration.
        let table = ms_joint_distribution(x, Trit::new(0).unwrap());
        let mut entries: Vec<(AliceAnswer, f64)> =
            AliceAnswer::all().iter().map(|a| (*a, 0.0)).collect();
        for (a, _, p) in table {
            let slot = entries
                .iter_mut()
                .find(|(ta, _)| ta == a)
                .expect("all even-parity answers enumerated");
            slot.1 += p;
        }
        let a = sample_from(rng, &entries, |e| e.1).0;
        self.instances[i].alice = Some((x, a));
        Ok(RawAnswer3::from_alice(a))
    }

    fn bob_query(
        &mut self,
        queries: &[(usize, Trit)],
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, DeviceError> {
        queries
            .iter()
            .map(|&(i, y)| {
                if !self.instances.get(i).map_or(false, |inst| inst.bob_chain.is_empty()) {
                    if i >= self.instances.len() {
                        return Err(DeviceError::BadIndex(i));
                    }
                    return Err(DeviceError::AlreadyQueried(i));
                }
                self.bob_measure(i, y, rng)
            })
            .collect()
    }

    fn bob_second_round(
        &mut self,
        queries: &[(usize, Trit)],
        rng: &mut Rng,
    ) -> Result<Vec<RawAnswer3>, DeviceError> {
        queries
            .iter()
            .map(|&(i, y)| self.bob_measure(i, y, rng))
            .collect()
    }
}

/// The ideal strategy as a repeated-game player: one fresh quantum box pair
/// per instance, queried through the full density-matrix path.
pub struct IdealMsStrategy;

impl StrategyRole for IdealMsStrategy {
    fn first_round(&mut self, inputs: &[MsQuestion], rng: &mut Rng) -> Vec<MsAnswer> {
        inputs
            .iter()
            .map(|q| {
                let mut pair = BoxPair::ideal();
                let a = pair.query_alice(q.x, rng).expect("fresh pair");
                let b = pair.query_bob(q.y, rng).expect("fresh pair");
                MsAnswer { a, b }
            })
            .collect()
    }
}

/// Report of a no-signalling comparison between two query orders.
#[derive(Debug, Clone)]
pub struct NoSignallingReport {
    /// Largest per-instance total-variation deviation between the output
    /// marginals under the two orders.
    pub max_deviation: f64,
    /// Index of the instance attaining the maximum.
    pub worst_instance: usize,
    pub pass: bool,
}

/// Minimum sample count for a meaningful verdict at the 0.02 threshold.
pub const NO_SIGNALLING_MIN_SAMPLES: usize = 1000;
/// Default total-variation threshold for the checker.
pub const NO_SIGNALLING_THRESHOLD: f64 = 0.02;

/// Compares Bob-side output marginals sampled under two different query
/// orders. Each element of `order_a` / `order_b` is one trial's outputs
/// across all instances. Fails when any instance's marginal moves by more
/// than `threshold` in total variation.
pub fn no_signalling_check(
    order_a: &[Vec<BobAnswer>],
    order_b: &[Vec<BobAnswer>],
    threshold: f64,
) -> Result<NoSignallingReport, DeviceError> {
    if order_a.len() < NO_SIGNALLING_MIN_SAMPLES || order_b.len() < NO_SIGNALLING_MIN_SAMPLES {
        return Err(DeviceError::InsufficientSamples(
            order_a.len().min(order_b.len()),
        ));
    }
    let instances = order_a[0].len();
    if order_a.iter().chain(order_b).any(|s| s.len() != instances) {
        return Err(DeviceError::ShapeMismatch);
    }
    let all = BobAnswer::all();
    let index_of = |b: &BobAnswer| all.iter().position(|x| x == b).expect("odd parity answer");
    let mut max_deviation: f64 = 0.0;
    let mut worst_instance = 0usize;
    for i in 0..instances {
        let mut ca = [0u64; 4];
        let mut cb = [0u64; 4];
        for s in order_a {
            ca[index_of(&s[i])] += 1;
        }
        for s in order_b {
            cb[index_of(&s[i])] += 1;
        }
        let tv = tv_distance(&ca, &cb);
        if tv > max_deviation {
            max_deviation = tv;
            worst_instance = i;
        }
    }
    Ok(NoSignallingReport {
        max_deviation,
        worst_instance,
        pass: max_deviation <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::ms_predicate;
    use crate::rng::{substream, PartyTag};
    use approx::assert_relative_eq;

    fn rng(t: u64) -> Rng {
        substream(20, t, PartyTag::Harness)
    }

    fn trit(v: u8) -> Trit {
        Trit::new(v).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let grid = mp_grid();
        let id = DMatrix::<Complex64>::identity(4, 4);
        for r in 0..3 {
            let prod = grid[r][0].matrix() * grid[r][1].matrix() * grid[r][2].matrix();
            let dev = (&prod - &id).iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(dev < 1e-9, "row {r} product deviates by {dev}");
        }
        for c in 0..3 {
            let prod = grid[0][c].matrix() * grid[1][c].matrix() * grid[2][c].matrix();
            let dev = (&prod + &id).iter().map(|x| x.norm()).fold(0.0, f64::max);
            assert!(dev < 1e-9, "column {c} product deviates by {dev}");
        }
        // intra-row and intra-column commutation
        for i in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let (ra, rb) = (grid[i][a].matrix(), grid[i][b].matrix());
                    let comm = ra * rb - rb * ra;
                    assert!(comm.iter().map(|c| c.norm()).fold(0.0, f64::max) < 1e-9);
                    let (ca, cb) = (grid[a][i].matrix(), grid[b][i].matrix());
                    let comm = ca * cb - cb * ca;
                    assert!(comm.iter().map(|c| c.norm()).fold(0.0, f64::max) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ideal_pair_always_wins() {
        let mut r = rng(0);
        for _ in 0..200 {
            for x in Trit::all() {
                for y in Trit::all() {
                    let mut pair = BoxPair::ideal();
                    let a = pair.query_alice(x, &mut r).unwrap();
                    let b = pair.query_bob(y, &mut r).unwrap();
                    assert!(ms_predicate(MsQuestion { x, y }, MsAnswer { a, b }));
                }
            }
        }
    }

    #[test]
    fn double_query_is_an_error() {
        let mut r = rng(1);
        let mut pair = BoxPair::ideal();
        pair.query_alice(trit(0), &mut r).unwrap();
        assert!(matches!(
            pair.query_alice(trit(1), &mut r),
            Err(DeviceError::AlreadyQueried(_))
        ));
    }

    #[test]
    fn joint_tables_are_uniform_over_winning_pairs() {
        for x in Trit::all() {
            for y in Trit::all() {
                let table = ms_joint_distribution(x, y);
                let total: f64 = table.iter().map(|(_, _, p)| p).sum();
                assert_relative_eq!(total, 1.0, epsilon = 1e-9);
                let mut support = 0usize;
                for (a, b, p) in table {
                    if *p > 1e-12 {
                        support += 1;
                        assert!(
                            ms_predicate(MsQuestion { x, y }, MsAnswer { a: *a, b: *b }),
                            "support on losing pair"
                        );
                        assert_relative_eq!(*p, 0.125, epsilon = 1e-9);
                    }
                }
                assert_eq!(support, 8, "4 alice answers x 2 consistent bob answers");
            }
        }
    }

    #[test]
    fn alice_marginal_uniform_for_every_input() {
        for x in Trit::all() {
            for y in Trit::all() {
                let table = ms_joint_distribution(x, y);
                let mut marginal: HashMap<AliceAnswer, f64> = HashMap::new();
                for (a, _, p) in table {
                    *marginal.entry(*a).or_insert(0.0) += p;
                }
                assert_eq!(marginal.len(), 4);
                for (_, p) in marginal {
                    assert_relative_eq!(p, 0.25, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn deferred_measurement_consistency() {
        // Bob-first enumeration must give the same joint distribution as
        // Alice-first; compare the (x,y) table against one computed with the
        // measurement order reversed.
        for x in Trit::all() {
            for y in Trit::all() {
                let forward = ms_joint_distribution(x, y);
                let root = two_epr_pairs().to_density();
                let mut reversed: HashMap<(AliceAnswer, BobAnswer), f64> = HashMap::new();
                let mut stack = vec![(0usize, [false; 6], 1.0f64, root)];
                while let Some((depth, bits, prob, state)) = stack.pop() {
                    if depth == 6 {
                        let b = bits_to_bob([bits[0], bits[1], bits[2]]);
                        let a = bits_to_alice([bits[3], bits[4], bits[5]]);
                        *reversed.entry((a, b)).or_insert(0.0) += prob;
                        continue;
                    }
                    let obs = if depth < 3 {
                        bob_col_observable(depth, y)
                    } else {
                        alice_row_observable(x, depth - 3)
                    };
                    for outcome in [Outcome::Plus, Outcome::Minus] {
                        if let Some((p, post)) = project_branch(&state, &obs, outcome).unwrap() {
                            let mut next = bits;
                            next[depth] = outcome.bit();
                            stack.push((depth + 1, next, prob * p, post));
                        }
                    }
                }
                for (a, b, p) in forward {
                    let q = reversed.get(&(*a, *b)).copied().unwrap_or(0.0);
                    assert_relative_eq!(*p, q, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn row_measurement_order_does_not_matter() {
        // Measuring a row's three observables in a permuted order leaves the
        // joint outcome distribution unchanged (they commute).
        let x = trit(1);
        let y = trit(2);
        let root = two_epr_pairs().to_density();
        for perm in [[1usize, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let mut dist: HashMap<(AliceAnswer, BobAnswer), f64> = HashMap::new();
            let mut stack = vec![(0usize, [false; 6], 1.0f64, root.clone())];
            while let Some((depth, bits, prob, state)) = stack.pop() {
                if depth == 6 {
                    let a = bits_to_alice([bits[0], bits[1], bits[2]]);
                    let b = bits_to_bob([bits[3], bits[4], bits[5]]);
                    *dist.entry((a, b)).or_insert(0.0) += prob;
                    continue;
                }
                let obs = if depth < 3 {
                    alice_row_observable(x, perm[depth])
                } else {
                    bob_col_observable(depth - 3, y)
                };
                for outcome in [Outcome::Plus, Outcome::Minus] {
                    if let Some((p, post)) = project_branch(&state, &obs, outcome).unwrap() {
                        let mut next = bits;
                        // write the permuted position
                        if depth < 3 {
                            next[perm[depth]] = outcome.bit();
                        } else {
                            next[depth] = outcome.bit();
                        }
                        stack.push((depth + 1, next, prob * p, post));
                    }
                }
            }
            for (a, b, p) in ms_joint_distribution(x, y) {
                let q = dist.get(&(*a, *b)).copied().unwrap_or(0.0);
                assert_relative_eq!(*p, q, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sequential_table_marginal_matches_pairwise() {
        for x in Trit::all() {
            for y1 in Trit::all() {
                for y2 in Trit::all() {
                    let seq = sequential_joint_distribution(x, y1, y2);
                    let total: f64 = seq.iter().map(|(_, _, _, p)| p).sum();
                    assert_relative_eq!(total, 1.0, epsilon = 1e-9);
                    let mut marginal: HashMap<(AliceAnswer, BobAnswer), f64> = HashMap::new();
                    for (a, b1, _, p) in seq {
                        *marginal.entry((*a, *b1)).or_insert(0.0) += p;
                    }
                    for (a, b, p) in ms_joint_distribution(x, y1) {
                        let q = marginal.get(&(*a, *b)).copied().unwrap_or(0.0);
                        assert_relative_eq!(*p, q, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn noisy_array_respects_alice_first_and_consumption() {
        let mut r = rng(2);
        let mut arr = NoisyBoxArray::new(2, 0.1);
        assert!(matches!(
            arr.bob_query(&[(0, trit(0))], &mut r),
            Err(DeviceError::AliceFirst(0))
        ));
        arr.alice_query(0, trit(1), &mut r).unwrap();
        assert!(matches!(
            arr.alice_query(0, trit(1), &mut r),
            Err(DeviceError::AlreadyQueried(0))
        ));
        arr.bob_query(&[(0, trit(2))], &mut r).unwrap();
        assert!(matches!(
            arr.bob_query(&[(0, trit(2))], &mut r),
            Err(DeviceError::AlreadyQueried(0))
        ));
        // second round on the measured box is allowed once more
        arr.bob_second_round(&[(0, trit(0))], &mut r).unwrap();
        assert!(matches!(
            arr.bob_second_round(&[(0, trit(0))], &mut r),
            Err(DeviceError::DepthExceeded(0))
        ));
    }

    #[test]
    fn zero_noise_array_always_wins() {
        let mut r = rng(3);
        let mut arr = NoisyBoxArray::new(512, 0.0);
        for i in 0..512 {
            let x = Trit::uniform(&mut r);
            let y = Trit::uniform(&mut r);
            let a = arr.alice_query(i, x, &mut r).unwrap().as_alice().unwrap();
            let b = arr.bob_query(&[(i, y)], &mut r).unwrap()[0].as_bob().unwrap();
            assert!(ms_predicate(MsQuestion { x, y }, MsAnswer { a, b }));
        }
    }

    #[test]
    fn noisy_calibration_and_parity() {
        let mut r = rng(4);
        let n = 40_000usize;
        let mut arr = NoisyBoxArray::new(n, 0.1);
        let mut wins = 0u64;
        for i in 0..n {
            let x = Trit::uniform(&mut r);
            let y = Trit::uniform(&mut r);
            let a = arr.alice_query(i, x, &mut r).unwrap().as_alice().unwrap();
            let braw = arr.bob_query(&[(i, y)], &mut r).unwrap()[0];
            // corruption preserves parity
            let b = braw.as_bob().expect("noise preserves odd parity");
            wins += ms_predicate(MsQuestion { x, y }, MsAnswer { a, b }) as u64;
        }
        let rate = wins as f64 / n as f64;
        assert!((rate - 0.95).abs() < 0.005, "win rate {rate}");
    }

    #[test]
    fn second_round_unmeasured_box_always_accepts() {
        let mut r = rng(5);
        let mut arr = NoisyBoxArray::new(400, 0.0);
        for i in 0..400 {
            let x = Trit::uniform(&mut r);
            let y_prime = Trit::uniform(&mut r);
            let a = arr.alice_query(i, x, &mut r).unwrap().as_alice().unwrap();
            let b = arr.bob_second_round(&[(i, y_prime)], &mut r).unwrap()[0]
                .as_bob()
                .unwrap();
            assert_eq!(a.bit(y_prime), b.bit(x));
        }
    }

    #[test]
    fn second_round_noisy_calibration() {
        let mut r = rng(6);
        let n = 40_000usize;
        let mut arr = NoisyBoxArray::new(n, 0.1);
        let mut wins = 0u64;
        for i in 0..n {
            let x = Trit::uniform(&mut r);
            let y_prime = Trit::uniform(&mut r);
            let a = arr.alice_query(i, x, &mut r).unwrap().as_alice().unwrap();
            let b = arr.bob_second_round(&[(i, y_prime)], &mut r).unwrap()[0]
                .as_bob()
                .unwrap();
            wins += (a.bit(y_prime) == b.bit(x)) as u64;
        }
        let rate = wins as f64 / n as f64;
        assert!((rate - 0.95).abs() < 0.005, "acceptance rate {rate}");
    }

    #[test]
    fn measured_then_challenged_is_bounded_away_from_one() {
        // A box measured at y != y' and then challenged at y' accepts with
        // the exact probability given by the sequential Born table; the
        // quantum BoxPair path must agree, and the value is strictly below 1.
        let x = trit(0);
        let y = trit(1);
        let y_prime = trit(2);
        let table = sequential_joint_distribution(x, y, y_prime);
        let exact: f64 = table
            .iter()
            .filter(|(a, _, b2, _)| a.bit(y_prime) == b2.bit(x))
            .map(|(_, _, _, p)| p)
            .sum();
        assert!(exact < 0.999, "sequential acceptance {exact} not bounded away from 1");
        let mut r = rng(7);
        let trials = 20_000u64;
        let mut hits = 0u64;
        for _ in 0..trials {
            let mut pair = BoxPair::ideal();
            let a = pair.query_alice(x, &mut r).unwrap();
            let _b1 = pair.query_bob(y, &mut r).unwrap();
            let b2 = pair.second_round_deletion_response(y_prime, &mut r);
            hits += (a.bit(y_prime) == b2.bit(x)) as u64;
        }
        let rate = hits as f64 / trials as f64;
        assert!(
            (rate - exact).abs() < 0.015,
            "empirical {rate} vs exact {exact}"
        );
    }

    #[test]
    fn instance_outcomes_are_independent() {
        // Chi-square independence of (instance 2i wins, instance 2i+1 wins)
        // across pairs of a noisy array.
        let mut r = rng(8);
        let n = 20_000usize;
        let mut arr = NoisyBoxArray::new(2 * n, 0.2);
        let mut counts = [[0u64; 2]; 2];
        for pair_idx in 0..n {
            let mut w = [false; 2];
            for (k, slot) in w.iter_mut().enumerate() {
                let i = 2 * pair_idx + k;
                let x = Trit::uniform(&mut r);
                let y = Trit::uniform(&mut r);
                let a = arr.alice_query(i, x, &mut r).unwrap().as_alice().unwrap();
                let b = arr.bob_query(&[(i, y)], &mut r).unwrap()[0].as_bob().unwrap();
                *slot = ms_predicate(MsQuestion { x, y }, MsAnswer { a, b });
            }
            counts[w[0] as usize][w[1] as usize] += 1;
        }
        let total = n as f64;
        let row: [f64; 2] = [counts[0][0] as f64 + counts[0][1] as f64, counts[1][0] as f64 + counts[1][1] as f64];
        let col: [f64; 2] = [counts[0][0] as f64 + counts[1][0] as f64, counts[0][1] as f64 + counts[1][1] as f64];
        let mut stat = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let expected = row[i] * col[j] / total;
                let diff = counts[i][j] as f64 - expected;
                stat += diff * diff / expected;
            }
        }
        let p = crate::stats::chi_square_pvalue(stat, 1.0);
        assert!(p > 0.001, "independence rejected: chi2={stat}, p={p}");
    }

    #[test]
    fn no_signalling_detects_planted_leak() {
        // Build synthetic samples: per trial, two instances. Under order A
        // instance 1 is queried first and leaks its input parity into
        // instance 2's output; under order B instance 2 answers before the
        // leak exists.
        let mut r = rng(9);
        let trials = 20_000usize;
        let all = BobAnswer::all();
        let mut order_a = Vec::with_capacity(trials);
        let mut order_b = Vec::with_capacity(trials);
        for _ in 0..trials {
            let x1 = Trit::uniform(&mut r);
            let honest1 = all[r.gen_range(0..4)];
            let honest2 = all[r.gen_range(0..4)];
            // leak: instance 2 echoes a function of x1
            let leaked2 = if x1.index() % 2 == 0 { all[0] } else { all[1] };
            order_a.push(vec![honest1, leaked2]);
            order_b.push(vec![honest1, honest2]);
        }
        let report = no_signalling_check(&order_a, &order_b, NO_SIGNALLING_THRESHOLD).unwrap();
        assert!(!report.pass);
        assert!(report.max_deviation >= 0.2, "deviation {}", report.max_deviation);
        assert_eq!(report.worst_instance, 1);
    }

    #[test]
    fn no_signalling_passes_identical_behaviors() {
        let mut r = rng(10);
        let trials = 100_000usize;
        let all = BobAnswer::all();
        let samples: Vec<Vec<BobAnswer>> = (0..trials)
            .map(|_| vec![all[r.gen_range(0..4)], all[r.gen_range(0..4)]])
            .collect();
        let report = no_signalling_check(&samples, &samples, NO_SIGNALLING_THRESHOLD).unwrap();
        assert!(report.pass);
        assert_eq!(report.max_deviation, 0.0);
        // independent product behaviour passes too
        let more: Vec<Vec<BobAnswer>> = (0..trials)
            .map(|_| vec![all[r.gen_range(0..4)], all[r.gen_range(0..4)]])
            .collect();
        let report = no_signalling_check(&samples, &more, NO_SIGNALLING_THRESHOLD).unwrap();
        assert!(report.pass, "deviation {}", report.max_deviation);
        // insufficient samples
        assert!(matches!(
            no_signalling_check(&samples[..10], &more[..10], NO_SIGNALLING_THRESHOLD),
            Err(DeviceError::InsufficientSamples(_))
        ));
    }
}
