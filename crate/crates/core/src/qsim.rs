//! Minimal dense complex linear algebra for quantum states of up to six
//! qubits: unitaries, ±1-observable measurements with post-states, partial
//! trace and trace distance.
//!
//! Conventions: qubit 0 is the leftmost tensor factor (most significant bit
//! of a computational-basis index). Observable outcome `+1` maps to bit `0`,
//! `-1` to bit `1`. All values are immutable after construction; operations
//! that "change" a state return a fresh one.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use thiserror::Error;

use crate::rng::Rng;

/// Numerical tolerance for structural invariants (hermiticity, trace,
/// unitarity, norms).
pub const TOL: f64 = 1e-9;
/// Floor below which a measurement branch is treated as impossible.
pub const BRANCH_FLOOR: f64 = 1e-12;
/// Largest supported register, in qubits.
pub const MAX_QUBITS: usize = 6;

#[derive(Debug, Error)]
pub enum QsimError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("dimension {0} is not a power of two or exceeds {MAX_QUBITS} qubits")]
    BadDimension(usize),
    #[error("matrix is not Hermitian within tolerance (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not unitary within tolerance (max deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("observable does not square to identity (max deviation {0:.3e})")]
    NotInvolution(f64),
    #[error("state is not normalized (trace/norm deviation {0:.3e})")]
    NotNormalized(f64),
    #[error("state has negative eigenvalue {0:.3e}")]
    NegativeEigenvalue(f64),
    #[error("bad qubit subset: {0}")]
    BadSubset(String),
}

fn check_qubit_dimension(dim: usize) -> Result<usize, QsimError> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(QsimError::BadDimension(dim));
    }
    let q = dim.trailing_zeros() as usize;
    if q > MAX_QUBITS {
        return Err(QsimError::BadDimension(dim));
    }
    Ok(q)
}

fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// A pure state on `q` qubits: `2^q` complex amplitudes with unit norm.
#[derive(Debug, Clone)]
pub struct StateVector {
    amps: DVector<Complex64>,
}

impl StateVector {
    pub fn new(amps: DVector<Complex64>) -> Result<Self, QsimError> {
        check_qubit_dimension(amps.len())?;
        let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > TOL {
            return Err(QsimError::NotNormalized((norm_sq - 1.0).abs()));
        }
        Ok(StateVector { amps })
    }

    /// |b⟩ for a computational-basis index `b` on `q` qubits.
    pub fn basis(q: usize, b: usize) -> Self {
        let dim = 1usize << q;
        assert!(b < dim);
        let mut amps = DVector::zeros(dim);
        amps[b] = Complex64::new(1.0, 0.0);
        StateVector { amps }
    }

    pub fn qubits(&self) -> usize {
        self.amps.len().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    /// The rank-one density operator |ψ⟩⟨ψ|.
    pub fn to_density(&self) -> DensityOperator {
        let m = &self.amps * self.amps.adjoint();
        DensityOperator { mat: m }
    }

    pub fn tensor(&self, other: &StateVector) -> StateVector {
        StateVector {
            amps: self.amps.kronecker(&other.amps),
        }
    }
}

/// A density operator: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    mat: DMatrix<Complex64>,
}

impl DensityOperator {
    /// Validates all invariants (hermiticity, trace one, positivity).
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self, QsimError> {
        if mat.nrows() != mat.ncols() {
            return Err(QsimError::DimensionMismatch(mat.nrows(), mat.ncols()));
        }
        check_qubit_dimension(mat.nrows())?;
        let herm_dev = max_abs_diff(&mat, &mat.adjoint());
        if herm_dev > TOL {
            return Err(QsimError::NotHermitian(herm_dev));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TOL || tr.im.abs() > TOL {
            return Err(QsimError::NotNormalized(((tr.re - 1.0).powi(2) + tr.im.powi(2)).sqrt()));
        }
        let eigs = hermitian_eigenvalues(&mat);
        if let Some(&min) = eigs
            .iter()
            .min_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"))
        {
            if min < -TOL {
                return Err(QsimError::NegativeEigenvalue(min));
            }
        }
        Ok(DensityOperator { mat })
    }

    /// The maximally mixed state on `q` qubits.
    pub fn maximally_mixed(q: usize) -> Self {
        let dim = 1usize << q;
        let mat = DMatrix::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0);
        DensityOperator { mat }
    }

    pub fn qubits(&self) -> usize {
        self.mat.nrows().trailing_zeros() as usize
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    /// Mixes `self` into a convex combination; used by tests building fuzzed
    /// states.
    pub fn mix(parts: &[(f64, DensityOperator)]) -> Result<Self, QsimError> {
        assert!(!parts.is_empty());
        let dim = parts[0].1.dim();
        let mut mat = DMatrix::zeros(dim, dim);
        for (w, p) in parts {
            if p.dim() != dim {
                return Err(QsimError::DimensionMismatch(p.dim(), dim));
            }
            mat += &p.mat * Complex64::new(*w, 0.0);
        }
        DensityOperator::new(mat)
    }
}

/// A ±1-valued observable: Hermitian with `M^2 = I`.
#[derive(Debug, Clone)]
pub struct PmObservable {
    mat: DMatrix<Complex64>,
}

impl PmObservable {
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self, QsimError> {
        if mat.nrows() != mat.ncols() {
            return Err(QsimError::DimensionMismatch(mat.nrows(), mat.ncols()));
        }
        check_qubit_dimension(mat.nrows())?;
        let herm_dev = max_abs_diff(&mat, &mat.adjoint());
        if herm_dev > TOL {
            return Err(QsimError::NotHermitian(herm_dev));
        }
        let sq = &mat * &mat;
        let id = DMatrix::identity(mat.nrows(), mat.ncols());
        let dev = max_abs_diff(&sq, &id);
        if dev > TOL {
            return Err(QsimError::NotInvolution(dev));
        }
        Ok(PmObservable { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    /// Projector onto the `+1` (true) or `-1` (false) eigenspace:
    /// `(I ± M)/2`.
    pub fn projector(&self, plus: bool) -> DMatrix<Complex64> {
        let id = DMatrix::identity(self.dim(), self.dim());
        let sign = if plus { 1.0 } else { -1.0 };
        (id + &self.mat * Complex64::new(sign, 0.0)) * Complex64::new(0.5, 0.0)
    }
}

/// Outcome of a ±1 measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    /// Bit convention: `+1 → 0`, `-1 → 1`.
    pub fn bit(self) -> bool {
        matches!(self, Outcome::Minus)
    }

    pub fn sign(self) -> f64 {
        match self {
            Outcome::Plus => 1.0,
            Outcome::Minus => -1.0,
        }
    }
}

/// Eigenvalues of a Hermitian matrix, via nalgebra's symmetric
/// eigendecomposition.
pub fn hermitian_eigenvalues(mat: &DMatrix<Complex64>) -> Vec<f64> {
    let eig = mat.clone().symmetric_eigen();
    eig.eigenvalues.iter().copied().collect()
}

/// Born probability of the `+1` branch: `Tr(P_+ ρ)`.
pub fn plus_probability(state: &DensityOperator, obs: &PmObservable) -> Result<f64, QsimError> {
    if state.dim() != obs.dim() {
        return Err(QsimError::DimensionMismatch(state.dim(), obs.dim()));
    }
    let p = (obs.projector(true) * state.matrix()).trace();
    Ok(p.re.clamp(0.0, 1.0))
}

/// Measures a ±1 observable, sampling from the Born rule, and returns the
/// outcome together with the normalized post-measurement state. If the
/// probability of the sampled branch is below [`BRANCH_FLOOR`] the other
/// branch is returned instead.
pub fn measure_observable(
    state: &DensityOperator,
    obs: &PmObservable,
    rng: &mut Rng,
) -> Result<(Outcome, DensityOperator), QsimError> {
    let p_plus = plus_probability(state, obs)?;
    let mut outcome = if rng.gen::<f64>() < p_plus {
        Outcome::Plus
    } else {
        Outcome::Minus
    };
    let mut p = match outcome {
        Outcome::Plus => p_plus,
        Outcome::Minus => 1.0 - p_plus,
    };
    if p < BRANCH_FLOOR {
        outcome = match outcome {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        };
        p = 1.0 - p;
    }
    let proj = obs.projector(matches!(outcome, Outcome::Plus));
    let post = (&proj * state.matrix() * &proj) / Complex64::new(p, 0.0);
    // Clean up the tiny hermiticity drift from the projection arithmetic.
    let post = (post.clone() + post.adjoint()) * Complex64::new(0.5, 0.0);
    Ok((outcome, DensityOperator { mat: post }))
}

/// Projects onto a chosen branch, returning its exact Born probability and
/// the normalized post-state, or `None` when the branch probability is below
/// the floor. This deterministic variant backs exhaustive branch-enumeration
/// oracles.
pub fn project_branch(
    state: &DensityOperator,
    obs: &PmObservable,
    outcome: Outcome,
) -> Result<Option<(f64, DensityOperator)>, QsimError> {
    let p_plus = plus_probability(state, obs)?;
    let p = match outcome {
        Outcome::Plus => p_plus,
        Outcome::Minus => 1.0 - p_plus,
    };
    if p < BRANCH_FLOOR {
        return Ok(None);
    }
    let proj = obs.projector(matches!(outcome, Outcome::Plus));
    let post = (&proj * state.matrix() * &proj) / Complex64::new(p, 0.0);
    let post = (post.clone() + post.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(Some((p, DensityOperator { mat: post })))
}

/// Trace distance `(1/2)·Σ|eig(a - b)|`, half the 1-norm of the difference.
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> Result<f64, QsimError> {
    if a.dim() != b.dim() {
        return Err(QsimError::DimensionMismatch(a.dim(), b.dim()));
    }
    let diff = a.matrix() - b.matrix();
    let eigs = hermitian_eigenvalues(&diff);
    Ok(0.5 * eigs.iter().map(|e| e.abs()).sum::<f64>())
}

/// Tensor product of two density operators.
pub fn tensor(a: &DensityOperator, b: &DensityOperator) -> DensityOperator {
    DensityOperator {
        mat: a.matrix().kronecker(b.matrix()),
    }
}

/// Partial trace over the qubits listed in `trace_out` (indices into the
/// state's qubits, 0 = leftmost factor). The remaining qubits keep their
/// relative order.
pub fn partial_trace(
    state: &DensityOperator,
    trace_out: &[usize],
) -> Result<DensityOperator, QsimError> {
    let q = state.qubits();
    let mut seen = vec![false; q];
    for &t in trace_out {
        if t >= q {
            return Err(QsimError::BadSubset(format!("qubit {t} out of range for {q} qubits")));
        }
        if seen[t] {
            return Err(QsimError::BadSubset(format!("qubit {t} listed twice")));
        }
        seen[t] = true;
    }
    let kept: Vec<usize> = (0..q).filter(|i| !seen[*i]).collect();
    let kq = kept.len();
    let kdim = 1usize << kq;
    let tdim = 1usize << trace_out.len();
    // Index helpers: bit of qubit i in a basis index is at position q-1-i.
    let assemble = |kept_bits: usize, traced_bits: usize| -> usize {
        let mut idx = 0usize;
        for (pos, &qb) in kept.iter().enumerate() {
            let bit = (kept_bits >> (kq - 1 - pos)) & 1;
            idx |= bit << (q - 1 - qb);
        }
        for (pos, &qb) in trace_out.iter().enumerate() {
            let bit = (traced_bits >> (trace_out.len() - 1 - pos)) & 1;
            idx |= bit << (q - 1 - qb);
        }
        idx
    };
    let mut out = DMatrix::zeros(kdim, kdim);
    for r in 0..kdim {
        for c in 0..kdim {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..tdim {
                acc += state.matrix()[(assemble(r, t), assemble(c, t))];
            }
            out[(r, c)] = acc;
        }
    }
    Ok(DensityOperator { mat: out })
}

/// Embeds an operator acting on the listed qubits (in the order given) into
/// the full `2^q`-dimensional space.
pub fn embed_operator(
    op: &DMatrix<Complex64>,
    qubits: &[usize],
    total_qubits: usize,
) -> Result<DMatrix<Complex64>, QsimError> {
    let sub_dim = 1usize << qubits.len();
    if op.nrows() != sub_dim || op.ncols() != sub_dim {
        return Err(QsimError::DimensionMismatch(op.nrows(), sub_dim));
    }
    let mut seen = vec![false; total_qubits];
    for &t in qubits {
        if t >= total_qubits {
            return Err(QsimError::BadSubset(format!(
                "qubit {t} out of range for {total_qubits} qubits"
            )));
        }
        if seen[t] {
            return Err(QsimError::BadSubset(format!("qubit {t} listed twice")));
        }
        seen[t] = true;
    }
    let dim = 1usize << total_qubits;
    let sub_index = |full: usize| -> usize {
        let mut s = 0usize;
        for (pos, &qb) in qubits.iter().enumerate() {
            let bit = (full >> (total_qubits - 1 - qb)) & 1;
            s |= bit << (qubits.len() - 1 - pos);
        }
        s
    };
    let rest_mask = |full: usize| -> usize {
        let mut m = full;
        for &qb in qubits {
            m &= !(1usize << (total_qubits - 1 - qb));
        }
        m
    };
    let mut out = DMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            if rest_mask(r) == rest_mask(c) {
                out[(r, c)] = op[(sub_index(r), sub_index(c))];
            }
        }
    }
    Ok(out)
}

/// Applies a unitary to the listed qubits of a state: `ρ ↦ U ρ U†`.
pub fn apply_unitary(
    state: &DensityOperator,
    unitary: &DMatrix<Complex64>,
    qubits: &[usize],
) -> Result<DensityOperator, QsimError> {
    let sub_dim = 1usize << qubits.len();
    if unitary.nrows() != sub_dim || unitary.ncols() != sub_dim {
        return Err(QsimError::DimensionMismatch(unitary.nrows(), sub_dim));
    }
    let prod = unitary.adjoint() * unitary;
    let dev = max_abs_diff(&prod, &DMatrix::identity(sub_dim, sub_dim));
    if dev > TOL {
        return Err(QsimError::NotUnitary(dev));
    }
    let full = embed_operator(unitary, qubits, state.qubits())?;
    let mat = &full * state.matrix() * full.adjoint();
    Ok(DensityOperator { mat })
}

/// 2x2 Pauli matrices and the identity.
pub mod pauli {
    use super::*;

    pub fn i2() -> DMatrix<Complex64> {
        DMatrix::identity(2, 2)
    }

    pub fn x() -> DMatrix<Complex64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        )
    }

    pub fn y() -> DMatrix<Complex64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, 0.0),
            ],
        )
    }

    pub fn z() -> DMatrix<Complex64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(-1.0, 0.0),
            ],
        )
    }

    /// Kronecker product of a list of small matrices, left to right.
    pub fn kron(factors: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
        assert!(!factors.is_empty());
        let mut acc = factors[0].clone();
        for f in &factors[1..] {
            acc = acc.kronecker(f);
        }
        acc
    }
}

/// Test-support constructions: random unitaries, observables and states.
pub mod random {
    use super::*;

    /// Haar-ish random unitary via QR of a complex Gaussian matrix.
    pub fn unitary(dim: usize, rng: &mut Rng) -> DMatrix<Complex64> {
        use rand::Rng as _;
        let g = DMatrix::from_fn(dim, dim, |_, _| {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            let r = (-2.0 * u1.ln()).sqrt();
            Complex64::new(r * (std::f64::consts::TAU * u2).cos(), {
                let u3: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u4: f64 = rng.gen();
                (-2.0 * u3.ln()).sqrt() * (std::f64::consts::TAU * u4).sin()
            })
        });
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        // Fix the phase ambiguity so columns are well-conditioned.
        for j in 0..dim {
            let d = r[(j, j)];
            if d.norm() > 0.0 {
                let phase = d / Complex64::new(d.norm(), 0.0);
                for i in 0..dim {
                    q[(i, j)] *= phase;
                }
            }
        }
        q
    }

    /// Random ±1 observable: `U† D U` with random diagonal signs (at least
    /// one of each sign when dim > 1, to avoid the trivial ±I).
    pub fn pm_observable(qubits: usize, rng: &mut Rng) -> PmObservable {
        use rand::Rng as _;
        let dim = 1usize << qubits;
        let u = unitary(dim, rng);
        let mut diag = DMatrix::zeros(dim, dim);
        loop {
            let mut plus = 0;
            for i in 0..dim {
                let s: bool = rng.gen();
                diag[(i, i)] = Complex64::new(if s { 1.0 } else { -1.0 }, 0.0);
                plus += s as usize;
            }
            if dim == 1 || (plus > 0 && plus < dim) {
                break;
            }
        }
        let m = u.adjoint() * diag * &u;
        let m = (m.clone() + m.adjoint()) * Complex64::new(0.5, 0.0);
        PmObservable::new(m).expect("constructed observable is valid")
    }

    /// Random density operator: mixture of a few random pure states.
    pub fn density(qubits: usize, rng: &mut Rng) -> DensityOperator {
        use rand::Rng as _;
        let dim = 1usize << qubits;
        let parts: usize = rng.gen_range(1..=3);
        let mut weights: Vec<f64> = (0..parts).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mut mat = DMatrix::zeros(dim, dim);
        for w in weights {
            let u = unitary(dim, rng);
            let col = u.column(0).into_owned();
            mat += (&col * col.adjoint()) * Complex64::new(w, 0.0);
        }
        let mat = (mat.clone() + mat.adjoint()) * Complex64::new(0.5, 0.0);
        DensityOperator::new(mat).expect("constructed density is valid")
    }
}
