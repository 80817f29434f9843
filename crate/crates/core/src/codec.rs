//! Messages crossing the decoder/rescorer boundary, and byte accounting.
//!
//! Both indices a request needs travel packed in one `u64`: the RNNLM
//! context index in the high `rnn_bits` bits, the small-LM state index in
//! the rest.
//!
//! Wire layout, little-endian, 16 bytes each way:
//!
//! ```text
//! request:  packed (u64) | word id (u32) | frame (u32)
//! response: delta (f32)  | packed successor (u64) | zero padding (4)
//! ```
//!
//! The baseline the ledger compares against ships the full serialized
//! context element in place of each 16-byte message.

use crate::error::{Error, Result};

pub const DEFAULT_RNN_BITS: u32 = 32;
pub const REQUEST_BYTES: u64 = 16;
pub const RESPONSE_BYTES: u64 = 16;

fn check_bits(rnn_bits: u32) -> Result<()> {
    if (1..=63).contains(&rnn_bits) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rnn_bits {rnn_bits} outside 1..=63")))
    }
}

pub fn pack(rnnlm_index: u64, smalllm_index: u64, rnn_bits: u32) -> Result<u64> {
    check_bits(rnn_bits)?;
    let small_bits = 64 - rnn_bits;
    if rnnlm_index >> rnn_bits != 0 {
        return Err(Error::IndexOverflow {
            which: "rnnlm",
            value: rnnlm_index,
            bits: rnn_bits,
        });
    }
    if smalllm_index >> small_bits != 0 {
        return Err(Error::IndexOverflow {
            which: "small-lm",
            value: smalllm_index,
            bits: small_bits,
        });
    }
    Ok((rnnlm_index << small_bits) | smalllm_index)
}

pub fn unpack(value: u64, rnn_bits: u32) -> (u64, u64) {
    let small_bits = 64 - rnn_bits.clamp(1, 63);
    (value >> small_bits, value & ((1u64 << small_bits) - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RescoreRequest {
    pub packed: u64,
    pub word: u32,
    pub frame: u32,
}

impl RescoreRequest {
    pub fn to_bytes(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[0..8].copy_from_slice(&self.packed.to_le_bytes());
        b[8..12].copy_from_slice(&self.word.to_le_bytes());
        b[12..16].copy_from_slice(&self.frame.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; 16]) -> Self {
        RescoreRequest {
            packed: u64::from_le_bytes(b[0..8].try_into().unwrap()),
            word: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            frame: u32::from_le_bytes(b[12..16].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoreResponse {
    /// RNNLM log-probability minus small-LM log-probability.
    pub delta: f32,
    pub next_packed: u64,
}

impl RescoreResponse {
    pub fn to_bytes(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[0..4].copy_from_slice(&self.delta.to_le_bytes());
        b[4..12].copy_from_slice(&self.next_packed.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; 16]) -> Self {
        RescoreResponse {
            delta: f32::from_le_bytes(b[0..4].try_into().unwrap()),
            next_packed: u64::from_le_bytes(b[4..12].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferLedger {
    pub context_bytes: u64,
    pub requests: u64,
    pub bytes_indexed: u64,
    pub bytes_full_baseline: u64,
}

impl TransferLedger {
    pub fn new(context_bytes: u64) -> Self {
        TransferLedger {
            context_bytes,
            ..Default::default()
        }
    }

    pub fn record(&mut self) {
        self.requests += 1;
        self.bytes_indexed += REQUEST_BYTES + RESPONSE_BYTES;
        self.bytes_full_baseline += 2 * self.context_bytes;
    }

    pub fn merge(&mut self, other: &TransferLedger) {
        self.requests += other.requests;
        self.bytes_indexed += other.bytes_indexed;
        self.bytes_full_baseline += other.bytes_full_baseline;
    }
}

/// Baseline bytes over indexed bytes when each direction would otherwise
/// carry `context_bytes`.
pub fn reduction_ratio(ledger: &TransferLedger, context_bytes: u64) -> Result<f64> {
    if ledger.requests == 0 {
        return Err(Error::InvalidArgument("no requests recorded".into()));
    }
    let baseline = ledger.requests * 2 * context_bytes;
    Ok(baseline as f64 / ledger.bytes_indexed as f64)
}
