//! Reproducible random streams.
//!
//! Every experiment derives its randomness from a single 64-bit master seed.
//! Substreams are keyed by `(master_seed, trial_index, party_tag)`: the three
//! values are hashed with SHA-256 into a ChaCha12 key, so streams for
//! different trials or parties never overlap and results are independent of
//! scheduling or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// The stream cipher RNG used everywhere in this crate.
pub type Rng = ChaCha12Rng;

/// Which party (or subsystem) a substream belongs to.
///
/// The tag is part of the derivation key, so e.g. Alice's randomness in trial
/// 17 is the same no matter what the other parties consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartyTag {
    /// The temporarily private randomness source feeding Alice.
    Source,
    /// Alice's private randomness (box inputs outside `S`).
    AlicePrivate,
    /// Bob's local randomness.
    Bob,
    /// Eve's local randomness (device fabrication included).
    Eve,
    /// The devices' measurement randomness.
    Device,
    /// Harness-level randomness (distinguishers, test generators).
    Harness,
}

impl PartyTag {
    fn label(self) -> &'static [u8] {
        match self {
            PartyTag::Source => b"source",
            PartyTag::AlicePrivate => b"alice-private",
            PartyTag::Bob => b"bob",
            PartyTag::Eve => b"eve",
            PartyTag::Device => b"device",
            PartyTag::Harness => b"harness",
        }
    }
}

/// Derives the substream for `(master_seed, trial_index, tag)`.
pub fn substream(master_seed: u64, trial_index: u64, tag: PartyTag) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"certdel.substream.v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update(trial_index.to_le_bytes());
    hasher.update(tag.label());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// The per-run bundle of streams a protocol execution consumes.
///
/// Keeping the parties on separate streams makes runs insensitive to how much
/// randomness any one party consumes; in particular the `(O, F)` outcome of a
/// run depends on the message only through registers that never feed back
/// into random draws.
pub struct Streams {
    /// Stream for the temporarily private randomness source.
    pub source: Rng,
    /// Stream for Alice's private (never revealed) randomness.
    pub alice_private: Rng,
    /// Stream for Bob's local choices.
    pub bob: Rng,
    /// Stream for Eve's local choices.
    pub eve: Rng,
    /// Stream for device measurement outcomes.
    pub device: Rng,
}

impl Streams {
    /// Streams for one trial of one experiment.
    pub fn for_trial(master_seed: u64, trial_index: u64) -> Self {
        Streams {
            source: substream(master_seed, trial_index, PartyTag::Source),
            alice_private: substream(master_seed, trial_index, PartyTag::AlicePrivate),
            bob: substream(master_seed, trial_index, PartyTag::Bob),
            eve: substream(master_seed, trial_index, PartyTag::Eve),
            device: substream(master_seed, trial_index, PartyTag::Device),
        }
    }
}
