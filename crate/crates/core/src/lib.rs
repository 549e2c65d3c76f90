//! Simulator and analysis toolkit for a device-independent
//! encryption-with-certified-deletion (ECD) protocol.
//!
//! The crate is organized around the protocol stack, bottom up:
//!
//! * [`qsim`] — dense complex linear algebra for states of up to six qubits:
//!   ±1-observable measurements with post-states, partial trace, distances.
//! * [`games`] — the magic square game `MS` and its anchored variants
//!   `MSB_α` / `MSE_α`: input samplers, win predicates, repeated-game
//!   threshold evaluation and a classical-value brute-forcer.
//! * [`devices`] — untrusted-box models: the ideal Mermin–Peres strategy,
//!   calibrated noisy i.i.d. boxes, adversarial device plug-ins and a
//!   no-signalling checker.
//! * [`crypto`] — classical primitives: 2-universal Toeplitz hashing,
//!   variable-length key padding, syndrome-based information reconciliation
//!   and one-time pads.
//! * [`protocol`] — the executable three-party ECD protocol: party state
//!   machines, authenticated leaky channel, temporarily-private randomness,
//!   event timeline and the two statistical tests.
//! * [`composable`] — the ideal ECD functionality, its simulators, and a
//!   Monte-Carlo distinguishing-advantage harness.
//! * [`experiments`] — parameter selection, bound-checking experiments,
//!   Serfling Monte-Carlo, guessing-probability computation and an attack
//!   library against the deletion test.

pub mod composable;
pub mod crypto;
pub mod devices;
pub mod experiments;
pub mod games;
pub mod protocol;
pub mod qsim;
pub mod rng;
pub mod stats;
