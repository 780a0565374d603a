//! Simulated ledger with hash-locked, time-locked transactions, the
//! plaintext reference cipher matching the in-circuit crypto, and the
//! canonical payload framing that makes wrong-key decryption detectable.
//!
//! Time is a logical block height. A transaction escrows the payer's funds
//! at submission, pays the payee when a correct SHA-256 preimage arrives by
//! the (inclusive) deadline, and refunds the payer once the height passes
//! it. Revealed preimages land on the public log — that is precisely how a
//! buyer learns decryption keys after settling.

use crate::bristol::ctr_decrypt_plain;
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxState {
    Open,
    Redeemed,
    Refunded,
}

/// A hash- and time-locked payment.
#[derive(Debug, Clone)]
pub struct HashLockTx {
    pub id: u64,
    pub payer: String,
    pub payee: String,
    /// Non-negative price units, escrowed while the tx is open.
    pub amount: u64,
    pub lock_hash: [u8; 32],
    /// Last height at which redemption is still accepted.
    pub deadline_height: u64,
    pub state: TxState,
    pub revealed_preimage: Option<[u8; 32]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogEvent {
    Submitted,
    Redeemed,
    Refunded,
}

/// Append-only public record of every settlement event.
#[derive(Debug, Clone)]
pub struct LogRecord {
    pub height: u64,
    pub tx: u64,
    pub event: LogEvent,
    pub amount: u64,
    pub lock_hash: [u8; 32],
    pub preimage: Option<[u8; 32]>,
}

/// Single-writer ledger: block height, account balances, transactions and
/// their public log.
#[derive(Debug, Default)]
pub struct Ledger {
    height: u64,
    accounts: HashMap<String, u64>,
    txs: Vec<HashLockTx>,
    log: Vec<LogRecord>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Credit an account out of thin air (initial funding only).
    pub fn fund(&mut self, account: &str, amount: u64) {
        *self.accounts.entry(account.into()).or_insert(0) += amount;
    }

    pub fn balance(&self, account: &str) -> u64 {
        self.accounts.get(account).copied().unwrap_or(0)
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn tx(&self, id: u64) -> Result<&HashLockTx> {
        self.txs.get(id as usize).ok_or(Error::UnknownTx(id))
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Funds currently held in open transactions.
    pub fn escrowed(&self) -> u64 {
        self.txs.iter().filter(|t| t.state == TxState::Open).map(|t| t.amount).sum()
    }

    /// Every unit in the system: balances plus escrow. Conserved by all
    /// operations except [`fund`](Self::fund).
    pub fn total_units(&self) -> u64 {
        self.accounts.values().sum::<u64>() + self.escrowed()
    }

    fn record(&mut self, tx: u64, event: LogEvent) {
        let t = &self.txs[tx as usize];
        self.log.push(LogRecord {
            height: self.height,
            tx,
            event,
            amount: t.amount,
            lock_hash: t.lock_hash,
            preimage: t.revealed_preimage,
        });
    }

    /// Escrow `amount` from `payer` behind `lock_hash` until
    /// `deadline_height` (inclusive). Returns the transaction id.
    pub fn submit_hashlock(
        &mut self,
        payer: &str,
        payee: &str,
        amount: u64,
        lock_hash: [u8; 32],
        deadline_height: u64,
    ) -> Result<u64> {
        if deadline_height < self.height {
            return Err(Error::InvalidParameter(format!(
                "deadline {deadline_height} already passed at height {}",
                self.height
            )));
        }
        let balance = self.balance(payer);
        if balance < amount {
            return Err(Error::InsufficientFunds(format!(
                "{payer} holds {balance} of the {amount} required"
            )));
        }
        *self.accounts.entry(payer.into()).or_insert(0) -= amount;
        let id = self.txs.len() as u64;
        self.txs.push(HashLockTx {
            id,
            payer: payer.into(),
            payee: payee.into(),
            amount,
            lock_hash,
            deadline_height,
            state: TxState::Open,
            revealed_preimage: None,
        });
        self.record(id, LogEvent::Submitted);
        Ok(id)
    }

    /// Attempt redemption. `Ok(true)` settles the tx and credits the payee;
    /// `Ok(false)` means the preimage does not match and nothing changed.
    /// Unknown, already-settled, and expired transactions are errors.
    pub fn redeem(&mut self, id: u64, preimage: &[u8; 32]) -> Result<bool> {
        let height = self.height;
        let t = self.txs.get_mut(id as usize).ok_or(Error::UnknownTx(id))?;
        if t.state != TxState::Open {
            return Err(Error::TxSettled(id));
        }
        if height > t.deadline_height {
            return Err(Error::DeadlinePassed(id));
        }
        if hash_key(preimage) != t.lock_hash {
            return Ok(false);
        }
        t.state = TxState::Redeemed;
        t.revealed_preimage = Some(*preimage);
        let (payee, amount) = (t.payee.clone(), t.amount);
        *self.accounts.entry(payee).or_insert(0) += amount;
        self.record(id, LogEvent::Redeemed);
        Ok(true)
    }

    /// Advance the block height and refund every open transaction whose
    /// deadline is now in the past. Returns the refunded tx ids.
    pub fn advance_and_refund(&mut self, blocks: u64) -> Result<Vec<u64>> {
        if blocks == 0 {
            return Err(Error::InvalidParameter("must advance at least one block".into()));
        }
        self.height += blocks;
        let mut refunded = Vec::new();
        for id in 0..self.txs.len() {
            let t = &mut self.txs[id];
            if t.state == TxState::Open && t.deadline_height < self.height {
                t.state = TxState::Refunded;
                let (payer, amount) = (t.payer.clone(), t.amount);
                *self.accounts.entry(payer).or_insert(0) += amount;
                self.record(id as u64, LogEvent::Refunded);
                refunded.push(id as u64);
            }
        }
        Ok(refunded)
    }

    /// The public log as line-delimited records:
    /// `height tx event amount lock-hash-hex preimage-hex`.
    pub fn export_log(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            let event = match r.event {
                LogEvent::Submitted => "submitted",
                LogEvent::Redeemed => "redeemed",
                LogEvent::Refunded => "refunded",
            };
            let preimage = r.preimage.map_or_else(|| "-".into(), hex);
            let _ = writeln!(
                out,
                "{} {} {event} {} {} {preimage}",
                r.height,
                r.tx,
                r.amount,
                hex(r.lock_hash)
            );
        }
        out
    }
}

pub fn hex(bytes: [u8; 32]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// The lock hash of a key: reference SHA-256 over the 32 key bytes. The
/// in-circuit hashing must open to exactly this digest.
pub fn hash_key(key: &[u8; 32]) -> [u8; 32] {
    Sha256::digest(key).into()
}

/// Reference AES-256-CTR encryption: counter blocks are the big-endian
/// `nonce + block_index`. Must be byte-identical to what the two-party
/// circuit evaluation opens for the same key, nonce, and data.
pub fn encrypt_data(key: &[u8; 32], nonce: u128, data: &[u8]) -> Vec<u8> {
    ctr_decrypt_plain(key, nonce, data)
}

/// CTR decryption is the same keystream XOR.
pub fn decrypt_data(key: &[u8; 32], nonce: u128, ciphertext: &[u8]) -> Vec<u8> {
    ctr_decrypt_plain(key, nonce, ciphertext)
}

/// Magic prefix of a canonically framed dataset payload.
pub const FRAME_MAGIC: [u8; 4] = *b"SMDS";

/// Frame payload bytes for encryption: magic, little-endian length, the
/// payload, then a CRC32 of the payload. A decryption with the wrong key
/// fails one of those checks with overwhelming probability.
pub fn frame_payload(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

/// Validate a frame and return the payload, or describe what broke.
pub fn unframe_payload(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 16 {
        return Err(Error::BadPayload(format!("{} bytes is too short for a frame", bytes.len())));
    }
    if bytes[..4] != FRAME_MAGIC {
        return Err(Error::BadPayload("bad magic; wrong key or corrupted data".into()));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    if bytes.len() != len + 16 {
        return Err(Error::BadPayload(format!(
            "declared payload of {len} bytes does not fit a {}-byte frame",
            bytes.len()
        )));
    }
    let payload = &bytes[12..12 + len];
    let want = u32::from_le_bytes(bytes[12 + len..].try_into().unwrap());
    if crc32fast::hash(payload) != want {
        return Err(Error::BadPayload("checksum mismatch; wrong key or corrupted data".into()));
    }
    Ok(payload.to_vec())
}

/// Split a price budget proportionally to the positive part of each owner's
/// value: `max(0, round(budget · vᵢ / Σⱼ max(0, vⱼ)))`. Owners with
/// non-positive values get no offer; if no value is positive, nobody does.
/// Independent rounding may leave the total a few units off the budget.
pub fn price_offers(budget: u64, values: &[f64]) -> Vec<u64> {
    let positive: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if positive <= 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                0
            } else {
                (budget as f64 * v / positive).round() as u64
            }
        })
        .collect()
}
