//! Timestamped event log of a protocol run: every channel message (with
//! Eve's mandatory copy), box deliveries, and the final randomness reveal.
//!
//! Time is logical. Tags are ranked so that
//! `t1', t1'' ≤ t1 ≤ t2 ≤ t3 ≤ ṫ3, ẗ3 ≤ t4' ≤ t4 < t5' ≤ t5`;
//! `t1'`/`t1''` and `ṫ3`/`ẗ3` are mutually unordered and share a rank.

use serde::{Deserialize, Serialize};

use crate::crypto::Bits;
use crate::games::Trit;
use crate::protocol::RandomnessRecord;

/// Logical time tags of the ideal-functionality schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeTag {
    #[serde(rename = "t1'")]
    T1Prime,
    #[serde(rename = "t1''")]
    T1DoublePrime,
    #[serde(rename = "t1")]
    T1,
    #[serde(rename = "t2")]
    T2,
    #[serde(rename = "t3")]
    T3,
    #[serde(rename = "t3.")]
    T3DotBob,
    #[serde(rename = "t3..")]
    T3DotEve,
    #[serde(rename = "t4'")]
    T4Prime,
    #[serde(rename = "t4")]
    T4,
    #[serde(rename = "t5'")]
    T5Prime,
    #[serde(rename = "t5")]
    T5,
}

impl TimeTag {
    /// Monotone rank; tags sharing a rank are mutually unordered.
    pub fn rank(self) -> u8 {
        match self {
            TimeTag::T1Prime | TimeTag::T1DoublePrime => 0,
            TimeTag::T1 => 1,
            TimeTag::T2 => 2,
            TimeTag::T3 => 3,
            TimeTag::T3DotBob | TimeTag::T3DotEve => 4,
            TimeTag::T4Prime => 5,
            TimeTag::T4 => 6,
            TimeTag::T5Prime => 7,
            TimeTag::T5 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Alice,
    Bob,
    Eve,
    /// The temporarily private randomness source.
    Source,
    /// Broadcast (reveal) audience.
    All,
}

/// A raw 3-bit answer as carried on the wire (parity not guaranteed).
pub type WireAnswer = [bool; 3];

/// Typed payloads; the serialized transcript carries their canonical JSON
/// bytes as hex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    BoxesDelivered {
        count: usize,
    },
    /// `(T, y_T)`, optionally carrying `y'_{\overline{T}}` early (protocol
    /// variant).
    TestSet {
        t_set: Vec<usize>,
        y_t: Vec<Trit>,
        y_prime_early: Option<Vec<Trit>>,
    },
    /// `b_T`.
    TestAnswers {
        b_t: Vec<WireAnswer>,
    },
    /// Alice's accept/abort verdict.
    Verdict {
        accept: bool,
    },
    /// `C = (C1, C2)`, optionally carrying `y'` early (protocol variant).
    Ciphertext {
        c1: Bits,
        c2: Bits,
        y_prime_early: Option<Vec<Trit>>,
    },
    /// Phase-2 opening: `0` or `(1, y'_{\overline{T}})`.
    DeletionRequest {
        delete: bool,
        y_prime: Option<Vec<Trit>>,
    },
    /// Bob's acknowledgement of the deletion decision (the `D` output of
    /// the functionality schedule).
    DeletionDecision {
        delete: bool,
    },
    /// `b'_{\overline{T}}`.
    DeletionAnswers {
        b_prime: Vec<WireAnswer>,
    },
    /// The source's reveal of `R` at `t5'`.
    Reveal {
        randomness: RandomnessRecord,
    },
}

impl Payload {
    /// Canonical byte encoding (JSON) of the payload, as bits.
    pub fn to_bits(&self) -> Bits {
        let bytes = serde_json::to_vec(self).expect("payload serializes");
        Bits::new(
            bytes
                .iter()
                .flat_map(|byte| (0..8).map(move |i| (byte >> i) & 1 == 1))
                .collect(),
        )
    }
}

/// One transcript entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEvent {
    pub time_tag: TimeTag,
    pub sender: Party,
    pub receiver: Party,
    pub payload: Payload,
}

impl Serialize for TranscriptEvent {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            time_tag: TimeTag,
            sender: Party,
            receiver: Party,
            payload_hex: String,
            bit_len: usize,
        }
        let bits = self.payload.to_bits();
        Repr {
            time_tag: self.time_tag,
            sender: self.sender,
            receiver: self.receiver,
            payload_hex: bits.to_hex(),
            bit_len: bits.len(),
        }
        .serialize(serializer)
    }
}

/// The ordered event log. Recording enforces the non-decreasing time-tag
/// rank; Eve's copies of channel traffic are explicit events addressed to
/// [`Party::Eve`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct Transcript {
    events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript { events: Vec::new() }
    }

    /// Appends an event; panics on a time-ordering violation (that is a
    /// harness bug, not an adversarial input).
    pub fn record(&mut self, event: TranscriptEvent) {
        if let Some(last) = self.events.last() {
            assert!(
                event.time_tag.rank() >= last.time_tag.rank(),
                "transcript ordering violated: {:?} after {:?}",
                event.time_tag,
                last.time_tag
            );
        }
        self.events.push(event);
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    /// Everything Eve sees: her channel copies and broadcasts.
    pub fn eve_view(&self) -> Vec<&TranscriptEvent> {
        self.events
            .iter()
            .filter(|e| e.receiver == Party::Eve || e.receiver == Party::All)
            .collect()
    }

    /// Channel messages between Alice and Bob (either direction).
    pub fn channel_messages(&self) -> Vec<&TranscriptEvent> {
        self.events
            .iter()
            .filter(|e| {
                matches!(
                    (e.sender, e.receiver),
                    (Party::Alice, Party::Bob) | (Party::Bob, Party::Alice)
                )
            })
            .collect()
    }

    /// Checks that tags are non-decreasing and that every Alice↔Bob message
    /// has an identical-payload copy addressed to Eve.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut last = 0u8;
        for e in &self.events {
            if e.time_tag.rank() < last {
                return Err(format!("tag {:?} out of order", e.time_tag));
            }
            last = e.time_tag.rank();
        }
        let taps: Vec<&TranscriptEvent> = self
            .events
            .iter()
            .filter(|e| e.receiver == Party::Eve)
            .collect();
        for msg in self.channel_messages() {
            let copied = taps.iter().any(|t| t.payload == msg.payload);
            if !copied {
                return Err(format!(
                    "channel message at {:?} lacks an Eve copy",
                    msg.time_tag
                ));
            }
        }
        Ok(())
    }
}
