//! Guessing probability of a classical value from side information: exact
//! for classical side information, bracketed for small quantum side
//! information (pretty-good-measurement lower bound; Helstrom exactly for
//! two labels, the Barnum–Knill square-root bound otherwise).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qsim::{hermitian_eigenvalues, DensityOperator};

/// Side-information hard cap: two qubits per label.
pub const MAX_SIDE_QUBITS: usize = 2;

#[derive(Debug, Error)]
pub enum GuessingError {
    #[error("side information exceeds {MAX_SIDE_QUBITS} qubits")]
    OversizedSideInfo,
    #[error("distribution is empty or not normalized (total {0})")]
    BadDistribution(f64),
    #[error("label states have mismatched dimensions")]
    DimensionMismatch,
}

/// A classical-quantum ensemble over guess targets.
pub enum GuessEnsemble {
    /// `joint[k][e] = P(K = k, E = e)` for classical side information.
    Classical { joint: Vec<Vec<f64>> },
    /// `(p_k, ρ_k)` for quantum side information of at most two qubits.
    Quantum { labeled: Vec<(f64, DensityOperator)> },
}

/// Lower and upper bounds on the optimal guessing probability. For
/// classical side information the two coincide (the value is exact).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuessingReport {
    pub lower: f64,
    pub upper: f64,
    pub method: String,
}

fn hermitian_sqrt_inv(mat: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = mat.clone().symmetric_eigen();
    let dim = mat.nrows();
    let mut d = DMatrix::zeros(dim, dim);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        d[(i, i)] = if v > 1e-12 {
            Complex64::new(1.0 / v.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Optimal guessing probability of `K` from the side information.
///
/// Classical case: `Σ_e max_k P(k, e)`, exactly. Quantum case: the
/// pretty-good measurement gives the lower bound; the upper bound is the
/// Helstrom value for two labels (exact) and `min(1, √p_PGM)` otherwise.
pub fn guessing_probability(ensemble: &GuessEnsemble) -> Result<GuessingReport, GuessingError> {
    match ensemble {
        GuessEnsemble::Classical { joint } => {
            if joint.is_empty() || joint[0].is_empty() {
                return Err(GuessingError::BadDistribution(0.0));
            }
            let cols = joint[0].len();
            if joint.iter().any(|row| row.len() != cols) {
                return Err(GuessingError::DimensionMismatch);
            }
            let total: f64 = joint.iter().flatten().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(GuessingError::BadDistribution(total));
            }
            let value: f64 = (0..cols)
                .map(|e| {
                    joint
                        .iter()
                        .map(|row| row[e])
                        .fold(0.0f64, f64::max)
                })
                .sum();
            Ok(GuessingReport {
                lower: value,
                upper: value,
                method: "classical_exact".into(),
            })
        }
        GuessEnsemble::Quantum { labeled } => {
            if labeled.is_empty() {
                return Err(GuessingError::BadDistribution(0.0));
            }
            let dim = labeled[0].1.dim();
            if labeled.iter().any(|(_, rho)| rho.dim() != dim) {
                return Err(GuessingError::DimensionMismatch);
            }
            if labeled[0].1.qubits() > MAX_SIDE_QUBITS {
                return Err(GuessingError::OversizedSideInfo);
            }
            let total: f64 = labeled.iter().map(|(p, _)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(GuessingError::BadDistribution(total));
            }
            // Weighted states p_k ρ_k and the average state.
            let weighted: Vec<DMatrix<Complex64>> = labeled
                .iter()
                .map(|(p, rho)| rho.matrix() * Complex64::new(*p, 0.0))
                .collect();
            let mut avg = DMatrix::zeros(dim, dim);
            for w in &weighted {
                avg += w;
            }
            let root = hermitian_sqrt_inv(&avg);
            // p_PGM = Σ_k Tr[(ρ̄^{-1/2} p_kρ_k ρ̄^{-1/2}) p_kρ_k]
            let pgm: f64 = weighted
                .iter()
                .map(|w| {
                    let m = &root * w * &root;
                    (m * w).trace().re
                })
                .sum::<f64>()
                .clamp(0.0, 1.0);
            let (upper, method) = if labeled.len() == 2 {
                // Helstrom: p_opt = p_1 + Σ eig_+(p_0ρ_0 - p_1ρ_1), exact.
                let diff = &weighted[0] - &weighted[1];
                let positive: f64 = hermitian_eigenvalues(&diff)
                    .into_iter()
                    .filter(|v| *v > 0.0)
                    .sum();
                (
                    (labeled[1].0 + positive).clamp(0.0, 1.0),
                    "pgm_and_helstrom".to_string(),
                )
            } else {
                // Barnum–Knill: p_PGM ≥ p_opt².
                (pgm.sqrt().min(1.0), "pgm_and_sqrt".to_string())
            };
            Ok(GuessingReport {
                lower: pgm.min(upper),
                upper,
                method,
            })
        }
    }
}

/// Brute-force oracle: maximum over all deterministic guessing functions
/// `g: E → K`. Exponential in `|E|`; intended for label spaces up to 2^12.
pub fn classical_bruteforce_oracle(joint: &[Vec<f64>]) -> f64 {
    let k_count = joint.len();
    let e_count = joint[0].len();
    let states = (k_count as u64).pow(e_count as u32);
    assert!(states <= 1 << 12, "oracle space too large");
    let mut best = 0.0f64;
    for g in 0..states {
        let mut code = g;
        let mut value = 0.0;
        for e in 0..e_count {
            let k = (code % k_count as u64) as usize;
            code /= k_count as u64;
            value += joint[k][e];
        }
        best = best.max(value);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::StateVector;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn independent_side_info_gives_uniform_guessing() {
        // uniform K over 4, E independent
        let joint = vec![vec![0.125, 0.125]; 4];
        let report = guessing_probability(&GuessEnsemble::Classical { joint }).unwrap();
        assert_relative_eq!(report.lower, 0.25, epsilon = 1e-12);
        assert_relative_eq!(report.upper, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn revealing_side_info_gives_certainty() {
        // E = K
        let joint = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        let report = guessing_probability(&GuessEnsemble::Classical { joint }).unwrap();
        assert_relative_eq!(report.lower, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn classical_matches_bruteforce_oracle() {
        let mut rng = crate::rng::substream(700, 0, crate::rng::PartyTag::Harness);
        use rand::Rng as _;
        for _ in 0..50 {
            let k = rng.gen_range(2..=4usize);
            let e = rng.gen_range(2..=5usize);
            let mut joint: Vec<Vec<f64>> =
                (0..k).map(|_| (0..e).map(|_| rng.gen::<f64>()).collect()).collect();
            let total: f64 = joint.iter().flatten().sum();
            for row in &mut joint {
                for v in row {
                    *v /= total;
                }
            }
            let report = guessing_probability(&GuessEnsemble::Classical { joint: joint.clone() })
                .unwrap();
            let oracle = classical_bruteforce_oracle(&joint);
            assert_relative_eq!(report.lower, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn two_pure_states_match_helstrom() {
        // K uniform bit; side info |0⟩ vs |+⟩. Optimal = cos²(π/8); the PGM
        // achieves it for two symmetric pure states, so lower = upper.
        let zero = StateVector::basis(1, 0).to_density();
        let plus = StateVector::new(DVector::from_vec(vec![
            Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        ]))
        .unwrap()
        .to_density();
        let report = guessing_probability(&GuessEnsemble::Quantum {
            labeled: vec![(0.5, zero), (0.5, plus)],
        })
        .unwrap();
        let helstrom = 0.5 * (1.0 + (0.5f64).sqrt());
        let cos2 = (std::f64::consts::PI / 8.0).cos().powi(2);
        assert_relative_eq!(helstrom, cos2, epsilon = 1e-12);
        assert!(report.lower <= cos2 + 1e-9 && cos2 <= report.upper + 1e-9);
        assert_relative_eq!(report.upper, cos2, epsilon = 1e-9);
        assert_relative_eq!(report.lower, cos2, epsilon = 1e-6);
    }

    #[test]
    fn orthogonal_states_are_perfectly_distinguishable() {
        let zero = StateVector::basis(1, 0).to_density();
        let one = StateVector::basis(1, 1).to_density();
        let report = guessing_probability(&GuessEnsemble::Quantum {
            labeled: vec![(0.5, zero), (0.5, one)],
        })
        .unwrap();
        assert_relative_eq!(report.lower, 1.0, epsilon = 1e-9);
        assert_relative_eq!(report.upper, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn oversized_side_info_is_rejected() {
        let big = DensityOperator::maximally_mixed(3);
        assert!(matches!(
            guessing_probability(&GuessEnsemble::Quantum {
                labeled: vec![(0.5, big.clone()), (0.5, big)],
            }),
            Err(GuessingError::OversizedSideInfo)
        ));
    }

    #[test]
    fn pgm_brackets_hold_for_multiple_labels() {
        let mut rng = crate::rng::substream(701, 0, crate::rng::PartyTag::Harness);
        for _ in 0..20 {
            let labeled: Vec<(f64, DensityOperator)> = (0..3)
                .map(|_| (1.0 / 3.0, crate::qsim::random::density(2, &mut rng)))
                .collect();
            let report = guessing_probability(&GuessEnsemble::Quantum { labeled }).unwrap();
            assert!(report.lower <= report.upper + 1e-9);
            // guessing at random achieves 1/3
            assert!(report.upper >= 1.0 / 3.0 - 1e-9);
        }
    }
}
