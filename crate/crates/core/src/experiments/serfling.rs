//! Monte-Carlo check of the sampling-without-replacement bound: for any
//! string `Z` independent of the uniformly drawn test subset `T` of size
//! `γl`, the joint event (test passes ∧ remainder fails) has probability at
//! most `2^{-2ε²γl}` — for *every* generator, including adversarial ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, PartyTag, Rng};
use crate::stats::Estimate;

/// A source of (possibly adversarial, non-i.i.d.) binary strings; the draw
/// must not depend on `T`.
pub trait ZGenerator: Sync {
    fn name(&self) -> String;
    fn generate(&self, l: usize, rng: &mut Rng) -> Vec<bool>;
}

/// Constant all-ones: the remainder never fails.
pub struct AllOnes;

impl ZGenerator for AllOnes {
    fn name(&self) -> String {
        "all_ones".into()
    }

    fn generate(&self, l: usize, _rng: &mut Rng) -> Vec<bool> {
        vec![true; l]
    }
}

/// Constant all-zeros: the test never passes (for ε < 1).
pub struct AllZeros;

impl ZGenerator for AllZeros {
    fn name(&self) -> String {
        "all_zeros".into()
    }

    fn generate(&self, l: usize, _rng: &mut Rng) -> Vec<bool> {
        vec![false; l]
    }
}

/// I.i.d. Bernoulli(p) entries.
pub struct Iid(pub f64);

impl ZGenerator for Iid {
    fn name(&self) -> String {
        format!("iid_{}", self.0)
    }

    fn generate(&self, l: usize, rng: &mut Rng) -> Vec<bool> {
        use rand::Rng as _;
        (0..l).map(|_| rng.gen::<f64>() < self.0).collect()
    }
}

/// A planted block: exactly `ones` ones packed at the front. Deterministic,
/// hence trivially independent of `T`; block structure is the classic
/// adversarial shape for sampling bounds.
pub struct Block {
    pub ones: usize,
}

impl ZGenerator for Block {
    fn name(&self) -> String {
        format!("block_{}", self.ones)
    }

    fn generate(&self, l: usize, _rng: &mut Rng) -> Vec<bool> {
        (0..l).map(|i| i < self.ones.min(l)).collect()
    }
}

/// Exactly `ones` ones at uniformly random positions (count fixed
/// adversarially, placement random but independent of `T`).
pub struct FixedCount {
    pub ones: usize,
}

impl ZGenerator for FixedCount {
    fn name(&self) -> String {
        format!("fixed_count_{}", self.ones)
    }

    fn generate(&self, l: usize, rng: &mut Rng) -> Vec<bool> {
        use rand::Rng as _;
        let mut idx: Vec<usize> = (0..l).collect();
        for i in 0..self.ones.min(l) {
            let j = rng.gen_range(i..l);
            idx.swap(i, j);
        }
        let mut z = vec![false; l];
        for &i in &idx[..self.ones.min(l)] {
            z[i] = true;
        }
        z
    }
}

/// The stock generator suite for `(l, γ, ε)`: constants, i.i.d. rates
/// straddling the thresholds, and knife-edge counts placed to maximize the
/// joint event.
pub fn standard_generators(l: usize, gamma: f64, epsilon: f64) -> Vec<Box<dyn ZGenerator>> {
    let t = (gamma * l as f64).round() as usize;
    let knife = ((1.0 - epsilon) * t as f64 + (1.0 - 2.0 * epsilon) * (l - t) as f64) as usize;
    vec![
        Box::new(AllOnes),
        Box::new(AllZeros),
        Box::new(Iid(1.0 - epsilon / 2.0)),
        Box::new(Iid(1.0 - 1.5 * epsilon)),
        Box::new(Block { ones: knife.min(l) }),
        Box::new(FixedCount { ones: knife.min(l) }),
        Box::new(FixedCount {
            ones: (knife + t / 2).min(l),
        }),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SerflingRow {
    pub generator: String,
    pub violation: Estimate,
    pub bound: f64,
    /// `violation ≤ bound` within the interval.
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SerflingReport {
    pub l: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub t_size: usize,
    pub trials: u64,
    pub rows: Vec<SerflingRow>,
    pub all_ok: bool,
}

/// Runs the Monte-Carlo check for one generator: draws `T` uniform of size
/// `round(γl)` and `Z` from the generator, counts the joint event
/// `(Σ_T Z ≥ (1-ε)|T|) ∧ (Σ_{\overline{T}} Z < (1-2ε)(l-|T|))`.
pub fn serfling_mc_check(
    l: usize,
    gamma: f64,
    epsilon: f64,
    generator: &dyn ZGenerator,
    trials: u64,
    master_seed: u64,
) -> SerflingRow {
    let t_size = (gamma * l as f64).round() as usize;
    let test_threshold = (1.0 - epsilon) * t_size as f64 - 1e-9;
    let rest_threshold = (1.0 - 2.0 * epsilon) * (l - t_size) as f64 - 1e-9;
    let hits = (0..trials)
        .into_par_iter()
        .map(|trial| {
            use rand::Rng as _;
            let mut rng = substream(master_seed, trial, PartyTag::Harness);
            let z = generator.generate(l, &mut rng);
            assert_eq!(z.len(), l);
            // uniform subset of size t
            let mut idx: Vec<usize> = (0..l).collect();
            for i in 0..t_size {
                let j = rng.gen_range(i..l);
                idx.swap(i, j);
            }
            let mut in_t = vec![false; l];
            for &i in &idx[..t_size] {
                in_t[i] = true;
            }
            let t_sum = idx[..t_size].iter().filter(|&&i| z[i]).count();
            let rest_sum = z.iter().enumerate().filter(|(i, b)| !in_t[*i] && **b).count();
            let joint = (t_sum as f64 >= test_threshold) && ((rest_sum as f64) < rest_threshold);
            joint as u64
        })
        .sum();
    let bound = 2f64.powf(-2.0 * epsilon * epsilon * t_size as f64);
    let violation = Estimate::from_counts(hits, trials);
    SerflingRow {
        generator: generator.name(),
        ok: violation.lower() <= bound,
        violation,
        bound,
    }
}

/// Runs the whole suite.
pub fn serfling_suite(
    l: usize,
    gamma: f64,
    epsilon: f64,
    trials: u64,
    master_seed: u64,
) -> SerflingReport {
    let generators = standard_generators(l, gamma, epsilon);
    let rows: Vec<SerflingRow> = generators
        .iter()
        .enumerate()
        .map(|(k, g)| serfling_mc_check(l, gamma, epsilon, g.as_ref(), trials, master_seed + k as u64))
        .collect();
    let all_ok = rows.iter().all(|r| r.ok);
    SerflingReport {
        l,
        gamma,
        epsilon,
        t_size: (gamma * l as f64).round() as usize,
        trials,
        rows,
        all_ok,
    }
}
