//! Desk-scale simulator for privacy-preserving data valuation and fair payment.
//!
//! A buyer wants to price the datasets of `N` owners by their Shapley value
//! under a learned data-utility model, without ever seeing the raw data, and
//! then pay each owner through hash-locked transactions whose keys unlock
//! ciphertexts produced inside the same secure computation.
//!
//! The crate is organised bottom-up:
//!
//! * [`ring`] — fixed-point encoding over `Z_{2^k}` and additive secret
//!   sharing, including the two-party to n-party share conversion.
//! * [`net`] — simulated transport: latency/bandwidth cost accounting,
//!   rounds, and per-link byte counters.
//! * [`engine`] — semi-honest arithmetic MPC with a trusted dealer (Beaver
//!   triples, square pairs, truncation pairs) plus a plaintext fixed-point
//!   interpreter that any shared computation must match bit for bit.
//! * [`bristol`] — Bristol-fashion boolean circuits: parser, plaintext and
//!   shared two-party evaluation, and synthesis of AES-256 / SHA-256 gate
//!   lists used for in-circuit encryption and key hashing.
//! * [`model`] — the data-utility model (feature extractor, per-sample
//!   transform, mean readout, scoring head) with plaintext training and a
//!   backend-generic forward pass that runs on shares.
//! * [`valuation`] — utility-dataset construction, the logistic-regression
//!   proxy, exact and Monte Carlo Shapley values, leave-one-out values, and
//!   market-scenario generation with per-owner noise schedules.
//! * [`payment`] — hash-locked transaction ledger, AES-256-CTR reference
//!   cipher, and the canonical dataset framing used to detect wrong-key
//!   decryption.
//! * [`market`] — orchestration: plaintext pipeline, full secure protocol
//!   run, removal-curve experiments, cost benchmarks, and the key=value
//!   config surface used by the CLI.

pub mod bristol;
pub mod engine;
pub mod error;
pub mod market;
pub mod model;
pub mod net;
pub mod payment;
pub mod ring;
pub mod tensor;
pub mod valuation;

pub use error::{Error, Result};
