//! Parameter selection: given security targets `(λ_com, λ_CI, λ_EC)`, a
//! message length, noise and anchoring, pick the smallest box count `l` and
//! the matching `γ` that satisfy the completeness and secrecy side
//! conditions, or report infeasibility naming the binding constraint.

use serde::{Deserialize, Serialize};

use super::ConstantsConfig;
use crate::stats::binary_entropy;

/// Search cap on the box count.
pub const L_CAP: u64 = 1 << 40;

/// Security targets and environment for a feasibility search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParameterRequest {
    pub lambda_com: f64,
    pub lambda_ci: f64,
    pub lambda_ec: f64,
    pub n: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub constants: ConstantsConfig,
}

/// Outcome of the feasibility search, with every side condition reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterReport {
    pub request: ParameterRequest,
    pub feasible: bool,
    /// Binding constraint when infeasible.
    pub binding: Option<String>,
    /// Chosen box count (smallest feasible), when feasible.
    pub l: Option<u64>,
    pub gamma: Option<f64>,
    pub t_size: Option<u64>,
    /// `γ·l·ε²`, the l-independent numerator of the γ choice.
    pub gamma_l_eps_sq: f64,
    pub h2_two_eps: f64,
    /// min{d_E(c_Eα-2ε)³α², d_B(c_Bα-ε)³α²} against h2(2ε).
    pub rate_floor: f64,
    pub alphaeps_ok: bool,
    pub gamma_below_half: Option<bool>,
    pub combound_ok: Option<bool>,
    pub nbound_e_ok: Option<bool>,
    pub nbound_b_ok: Option<bool>,
    /// The two n-bound right-hand sides at the chosen l.
    pub nbound_e_value: Option<f64>,
    pub nbound_b_value: Option<f64>,
}

struct Derived {
    gamma_num: f64, // γ·l·ε²
    rate_e: f64,    // d_E (c_Eα - 2ε)³ α²
    rate_b: f64,    // d_B (c_Bα - ε)³ α²
    h2: f64,
}

fn derive(req: &ParameterRequest) -> Derived {
    let c = &req.constants;
    let gamma_num = (8.0 * (2.0 / req.lambda_com).log2())
        .max(0.5 * (32.0 / req.lambda_ci).log2())
        .max(0.5 * (8.0 / req.lambda_ec).log2());
    let rate_e = c.d_e * (c.c_e_alpha(req.alpha) - 2.0 * req.epsilon).powi(3) * req.alpha.powi(2);
    let rate_b = c.d_b * (c.c_b_alpha(req.alpha) - req.epsilon).powi(3) * req.alpha.powi(2);
    Derived {
        gamma_num,
        rate_e,
        rate_b,
        h2: binary_entropy((2.0 * req.epsilon).min(1.0)),
    }
}

fn gamma_at(d: &Derived, eps: f64, l: u64) -> f64 {
    d.gamma_num / (eps * eps * l as f64)
}

struct Conditions {
    gamma: f64,
    gamma_below_half: bool,
    combound_ok: bool,
    nbound_e: f64,
    nbound_b: f64,
}

fn conditions_at(req: &ParameterRequest, d: &Derived, l: u64) -> Conditions {
    let gamma = gamma_at(d, req.epsilon, l);
    let lf = l as f64;
    let gamma_l = gamma * lf; // = gamma_num / ε²
    let combound_ok = gamma < 0.5
        && (1.0 - 2.0 * gamma).powi(2) * lf / 8.0 >= (2.0 / req.lambda_com).log2();
    let tail = (1.0 / req.lambda_ec).log2() + 2.0 * (2.0 / req.lambda_ci).log2();
    let nbound_e = d.rate_e * lf - 2.0 * d.gamma_num - 2.0 * gamma_l - d.h2 * lf - tail;
    let nbound_b = d.rate_b * (1.0 - gamma) * lf - gamma_l - d.h2 * lf - tail;
    Conditions {
        gamma,
        gamma_below_half: gamma < 0.5,
        combound_ok,
        nbound_e,
        nbound_b,
    }
}

fn feasible_at(req: &ParameterRequest, d: &Derived, l: u64) -> bool {
    let c = conditions_at(req, d, l);
    c.gamma_below_half
        && c.combound_ok
        && c.nbound_e >= req.n as f64
        && c.nbound_b >= req.n as f64
}

/// Searches for the smallest `l ≤ 2^40` meeting all side conditions with
/// `γ` set by its closed form. When the rate floor condition
/// `min{...} > h2(2ε)` fails, no `l` can work and the report says so.
pub fn choose_parameters(req: &ParameterRequest) -> Result<ParameterReport, String> {
    req.constants.validate()?;
    for (name, v) in [
        ("lambda_com", req.lambda_com),
        ("lambda_CI", req.lambda_ci),
        ("lambda_EC", req.lambda_ec),
    ] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(format!("{name} = {v} outside (0,1]"));
        }
    }
    if !(req.epsilon > 0.0 && req.epsilon < 1.0) {
        return Err(format!("epsilon = {} outside (0,1)", req.epsilon));
    }
    if !(req.alpha > 0.0 && req.alpha < 0.5) {
        return Err(format!("alpha = {} outside (0,1/2)", req.alpha));
    }
    if req.n == 0 {
        return Err("n must be positive".into());
    }
    let d = derive(req);
    let rate_floor = d.rate_e.min(d.rate_b);
    let alphaeps_ok = rate_floor > d.h2;
    let base = ParameterReport {
        request: *req,
        feasible: false,
        binding: None,
        l: None,
        gamma: None,
        t_size: None,
        gamma_l_eps_sq: d.gamma_num,
        h2_two_eps: d.h2,
        rate_floor,
        alphaeps_ok,
        gamma_below_half: None,
        combound_ok: None,
        nbound_e_ok: None,
        nbound_b_ok: None,
        nbound_e_value: None,
        nbound_b_value: None,
    };
    if !alphaeps_ok {
        return Ok(ParameterReport {
            binding: Some(format!(
                "rate floor min{{d_E(c_Eα-2ε)³α², d_B(c_Bα-ε)³α²}} = {rate_floor:.3e} \
                 does not exceed h2(2ε) = {:.6}",
                d.h2
            )),
            ..base
        });
    }
    if !feasible_at(req, &d, L_CAP) {
        let c = conditions_at(req, &d, L_CAP);
        let binding = if !c.gamma_below_half {
            "gamma < 1/2 at the search cap"
        } else if !c.combound_ok {
            "completeness bound 2^{-(1-2γ)²l/8} ≤ λ_com/2 at the search cap"
        } else if c.nbound_e < req.n as f64 {
            "Eve-side n bound at the search cap"
        } else {
            "Bob-side n bound at the search cap"
        };
        return Ok(ParameterReport {
            binding: Some(binding.to_string()),
            gamma_below_half: Some(c.gamma_below_half),
            combound_ok: Some(c.combound_ok),
            nbound_e_ok: Some(c.nbound_e >= req.n as f64),
            nbound_b_ok: Some(c.nbound_b >= req.n as f64),
            nbound_e_value: Some(c.nbound_e),
            nbound_b_value: Some(c.nbound_b),
            ..base
        });
    }
    // All conditions are monotone in l once the rate floor holds; bisect for
    // the first feasible l.
    let mut lo = 1u64;
    let mut hi = L_CAP;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible_at(req, &d, mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let l = lo;
    let c = conditions_at(req, &d, l);
    Ok(ParameterReport {
        feasible: true,
        l: Some(l),
        gamma: Some(c.gamma),
        t_size: Some((c.gamma * l as f64).round() as u64),
        gamma_below_half: Some(c.gamma_below_half),
        combound_ok: Some(c.combound_ok),
        nbound_e_ok: Some(c.nbound_e >= req.n as f64),
        nbound_b_ok: Some(c.nbound_b >= req.n as f64),
        nbound_e_value: Some(c.nbound_e),
        nbound_b_value: Some(c.nbound_b),
        ..base
    })
}
