//! Completeness and correctness experiments: honest-party Monte-Carlo runs
//! checked against the two completeness bounds
//! (`p_⊤ ≥ (1-2^{-(1-2γ)²l/8})(1-2^{-ε²γl/8})` and
//! `p_⊤(1-p_✓|⊤) ≤ 2·2^{-2ε²γl}`) and the reconciliation success bound
//! (`≥ 1 - (4·2^{-2ε²γl}/p_⊤ + λ_EC/2)`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crypto::Bits;
use crate::devices::NoisyBoxArray;
use crate::protocol::{run_protocol, HonestBob, PassiveEve, ProtocolError, ProtocolParams, RunOptions};
use crate::rng::Streams;
use crate::stats::Estimate;

/// The two completeness bounds at given parameters.
pub fn completeness_bounds(params: &ProtocolParams) -> (f64, f64) {
    let l = params.l as f64;
    let gl = params.gamma_l();
    let p_top_lower = (1.0 - 2f64.powf(-(1.0 - 2.0 * params.gamma).powi(2) * l / 8.0))
        * (1.0 - 2f64.powf(-params.epsilon.powi(2) * gl / 8.0));
    let abort_flag_upper = 2.0 * 2f64.powf(-2.0 * params.epsilon.powi(2) * gl);
    (p_top_lower, abort_flag_upper)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub params: ProtocolParams,
    pub trials: u64,
    /// `p̂_⊤`.
    pub p_top: Estimate,
    /// `p̂_✓|⊤` (conditional on acceptance; trials count = acceptances).
    pub p_flag_given_top: Option<Estimate>,
    /// Direct estimate of `p_⊤(1 - p_✓|⊤) = Pr[⊤ ∧ ✗]`.
    pub top_and_reject: Estimate,
    pub p_top_lower_bound: f64,
    pub top_and_reject_upper_bound: f64,
    /// Bound verdicts within the 99% intervals.
    pub p_top_ok: bool,
    pub top_and_reject_ok: bool,
}

/// Honest-party completeness: runs the protocol with `D = 1` and compares
/// `p̂_⊤` and `p̂_⊤(1-p̂_✓|⊤)` against the completeness bounds within their
/// confidence intervals.
pub fn completeness_experiment(
    params: &ProtocolParams,
    trials: u64,
    master_seed: u64,
) -> Result<CompletenessReport, ProtocolError> {
    params.validate()?;
    let msg = Bits::zeros(params.n);
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(u64, u64), ProtocolError> {
            let mut device = NoisyBoxArray::new(params.l, params.epsilon);
            let mut bob = HonestBob::default();
            let mut eve = PassiveEve;
            let mut streams = Streams::for_trial(master_seed, t);
            let run = run_protocol(
                params,
                &mut device,
                &mut bob,
                &mut eve,
                &msg,
                true,
                &mut streams,
                &RunOptions::default(),
            )?;
            let top = run.outcome.accepted as u64;
            let flag = (run.outcome.flag == Some(true)) as u64;
            Ok((top, top * flag))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let (tops, flags) = counts;
    let p_top = Estimate::from_counts(tops, trials);
    let top_and_reject = Estimate::from_counts(tops - flags, trials);
    let p_flag_given_top = (tops > 0).then(|| Estimate::from_counts(flags, tops));
    let (p_top_lower_bound, top_and_reject_upper_bound) = completeness_bounds(params);
    Ok(CompletenessReport {
        params: *params,
        trials,
        p_top,
        p_flag_given_top,
        top_and_reject,
        p_top_lower_bound,
        top_and_reject_upper_bound,
        p_top_ok: p_top.upper() >= p_top_lower_bound,
        top_and_reject_ok: top_and_reject.lower() <= top_and_reject_upper_bound,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectnessReport {
    pub params: ProtocolParams,
    pub trials: u64,
    pub p_top: Estimate,
    /// `Pr[M̃ = M | ⊤]`.
    pub decrypt_given_top: Option<Estimate>,
    /// The reconciliation success bound `1 - (4·2^{-2ε²γl}/p̂_⊤ + λ_EC/2)`
    /// evaluated at the observed `p̂_⊤` (may be vacuous, i.e. negative, at
    /// desk-scale parameters).
    pub bound: f64,
    pub bound_vacuous: bool,
    pub ok: bool,
    /// How the decodes ended, for the report: (unique, ambiguous, not_found,
    /// resource_exceeded).
    pub decode_kinds: (u64, u64, u64, u64),
}

/// Honest-party correctness: `D = 0` runs must decrypt `M̃ = M` at the
/// reconciliation bound rate, conditioned on acceptance.
pub fn correctness_experiment(
    params: &ProtocolParams,
    trials: u64,
    master_seed: u64,
) -> Result<CorrectnessReport, ProtocolError> {
    use crate::protocol::DecodeReport;
    params.validate()?;
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(u64, u64, [u64; 4]), ProtocolError> {
            let mut harness = crate::rng::substream(master_seed, t, crate::rng::PartyTag::Harness);
            let msg = Bits::random(params.n, &mut harness);
            let mut device = NoisyBoxArray::new(params.l, params.epsilon);
            let mut bob = HonestBob::default();
            let mut eve = PassiveEve;
            let mut streams = Streams::for_trial(master_seed, t);
            let run = run_protocol(
                params,
                &mut device,
                &mut bob,
                &mut eve,
                &msg,
                false,
                &mut streams,
                &RunOptions::default(),
            )?;
            let mut kinds = [0u64; 4];
            if run.outcome.accepted {
                match run.outcome.decode {
                    DecodeReport::Unique { .. } => kinds[0] += 1,
                    DecodeReport::Ambiguous { .. } => kinds[1] += 1,
                    DecodeReport::NotFound => kinds[2] += 1,
                    DecodeReport::ResourceExceeded { .. } => kinds[3] += 1,
                    DecodeReport::Skipped => {}
                }
            }
            let top = run.outcome.accepted as u64;
            let good =
                (run.outcome.accepted && run.outcome.m_tilde.as_ref() == Some(&msg)) as u64;
            Ok((top, good, kinds))
        })
        .try_reduce(
            || (0, 0, [0; 4]),
            |a, b| {
                Ok((
                    a.0 + b.0,
                    a.1 + b.1,
                    [
                        a.2[0] + b.2[0],
                        a.2[1] + b.2[1],
                        a.2[2] + b.2[2],
                        a.2[3] + b.2[3],
                    ],
                ))
            },
        )?;
    let (tops, good, kinds) = counts;
    let p_top = Estimate::from_counts(tops, trials);
    let decrypt_given_top = (tops > 0).then(|| Estimate::from_counts(good, tops));
    let serfling_term = 4.0 * 2f64.powf(-2.0 * params.epsilon.powi(2) * params.gamma_l());
    let bound = if tops > 0 {
        1.0 - (serfling_term / p_top.rate + params.lambda_ec / 2.0)
    } else {
        f64::NEG_INFINITY
    };
    let ok = match &decrypt_given_top {
        Some(est) => est.upper() >= bound,
        None => true,
    };
    Ok(CorrectnessReport {
        params: *params,
        trials,
        p_top,
        decrypt_given_top,
        bound,
        bound_vacuous: bound <= 0.0,
        ok,
        decode_kinds: (kinds[0], kinds[1], kinds[2], kinds[3]),
    })
}
