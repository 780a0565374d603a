//! Fixed-point arithmetic over `Z_{2^k}` and additive secret sharing.
//!
//! Reals are embedded as `round(x * 2^f) mod 2^k` with a two's-complement
//! signed reading, so ring addition and multiplication-then-truncation act
//! like fixed-point arithmetic as long as values stay inside the headroom
//! budget enforced by [`FixCfg::new`]. A secret is split into `n` additive
//! pieces that are individually uniform; any proper subset carries no
//! information. [`convert_2_to_n`] lifts a two-party sharing to an n-party
//! sharing by having each of the two holders re-share its piece.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ring element, already reduced modulo `2^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct RingVal(pub u64);

/// Ring and fixed-point parameters: `k` total bits, `f` fraction bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixCfg {
    k: u32,
    f: u32,
}

impl Default for FixCfg {
    fn default() -> Self {
        FixCfg { k: 64, f: 16 }
    }
}

impl FixCfg {
    /// Eight headroom bits on top of the doubled fraction width keep one
    /// product-plus-truncation inside the ring, so `2f + 8 <= k` is required.
    pub fn new(k: u32, f: u32) -> Result<Self> {
        if k == 0 || k > 64 {
            return Err(Error::InvalidParameter(format!(
                "ring width k={k} outside 1..=64"
            )));
        }
        if f == 0 || f >= k {
            return Err(Error::InvalidParameter(format!(
                "fraction bits f={f} must satisfy 0 < f < k={k}"
            )));
        }
        if 2 * f + 8 > k {
            return Err(Error::InvalidParameter(format!(
                "insufficient headroom: 2*{f} + 8 > {k}"
            )));
        }
        Ok(FixCfg { k, f })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn f(&self) -> u32 {
        self.f
    }

    pub fn mask(&self) -> u64 {
        if self.k == 64 {
            u64::MAX
        } else {
            (1u64 << self.k) - 1
        }
    }

    /// Bytes needed to transmit one ring element.
    pub fn elem_bytes(&self) -> usize {
        (self.k as usize).div_ceil(8)
    }

    pub fn reduce(&self, v: u64) -> RingVal {
        RingVal(v & self.mask())
    }

    pub fn add(&self, a: RingVal, b: RingVal) -> RingVal {
        self.reduce(a.0.wrapping_add(b.0))
    }

    pub fn sub(&self, a: RingVal, b: RingVal) -> RingVal {
        self.reduce(a.0.wrapping_sub(b.0))
    }

    pub fn neg(&self, a: RingVal) -> RingVal {
        self.reduce(a.0.wrapping_neg())
    }

    pub fn mul(&self, a: RingVal, b: RingVal) -> RingVal {
        self.reduce(a.0.wrapping_mul(b.0))
    }

    /// Multiply by a public (signed) integer constant.
    pub fn mul_const(&self, a: RingVal, c: i64) -> RingVal {
        self.reduce(a.0.wrapping_mul(c as u64))
    }

    /// Two's-complement signed reading of a ring element.
    pub fn to_signed(&self, v: RingVal) -> i64 {
        if self.k == 64 {
            v.0 as i64
        } else if v.0 >> (self.k - 1) & 1 == 1 {
            (v.0 | !self.mask()) as i64
        } else {
            v.0 as i64
        }
    }

    pub fn from_signed(&self, s: i64) -> RingVal {
        self.reduce(s as u64)
    }

    /// Embed a real as `round(x * 2^f)`; requires `|x| < 2^(k-f-1)`.
    pub fn fx_encode(&self, x: f64) -> Result<RingVal> {
        let bound = (self.k - self.f - 1) as i32;
        if !x.is_finite() || x.abs() >= 2f64.powi(bound) {
            return Err(Error::FixedPointRange {
                value: x,
                k: self.k,
                f: self.f,
            });
        }
        let scaled = (x * 2f64.powi(self.f as i32)).round();
        let s = scaled as i128;
        if s.abs() >= 1i128 << (self.k - 1) {
            return Err(Error::FixedPointRange {
                value: x,
                k: self.k,
                f: self.f,
            });
        }
        Ok(self.from_signed(s as i64))
    }

    pub fn fx_decode(&self, v: RingVal) -> f64 {
        self.to_signed(v) as f64 / 2f64.powi(self.f as i32)
    }

    /// Floor division of the signed reading by `2^t` (arithmetic shift).
    pub fn shift_down(&self, v: RingVal, t: u32) -> RingVal {
        self.from_signed(self.to_signed(v) >> t)
    }

    pub fn random(&self, rng: &mut impl Rng) -> RingVal {
        self.reduce(rng.gen::<u64>())
    }
}

/// A full additive sharing of one secret: exactly one piece per party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareSet {
    party_count: usize,
    pieces: Vec<RingVal>,
}

impl ShareSet {
    /// Assemble a share set, refusing piece lists that do not cover every
    /// party.
    pub fn from_pieces(party_count: usize, pieces: Vec<RingVal>) -> Result<Self> {
        if party_count < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 parties, got {party_count}"
            )));
        }
        if pieces.len() != party_count {
            return Err(Error::IncompleteShares {
                expected: party_count,
                got: pieces.len(),
            });
        }
        Ok(ShareSet {
            party_count,
            pieces,
        })
    }

    pub fn party_count(&self) -> usize {
        self.party_count
    }

    pub fn pieces(&self) -> &[RingVal] {
        &self.pieces
    }

    pub fn piece(&self, party: usize) -> RingVal {
        self.pieces[party]
    }
}

/// Split `x` into `n` additive pieces, the first `n-1` drawn uniformly.
pub fn share_n(x: RingVal, n: usize, cfg: &FixCfg, rng: &mut impl Rng) -> Result<ShareSet> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 parties, got {n}"
        )));
    }
    let mut pieces = Vec::with_capacity(n);
    let mut acc = RingVal(0);
    for _ in 0..n - 1 {
        let p = cfg.random(rng);
        acc = cfg.add(acc, p);
        pieces.push(p);
    }
    pieces.push(cfg.sub(x, acc));
    ShareSet::from_pieces(n, pieces)
}

/// Sum the pieces back into the secret.
pub fn reconstruct(s: &ShareSet, cfg: &FixCfg) -> RingVal {
    s.pieces
        .iter()
        .fold(RingVal(0), |acc, &p| cfg.add(acc, p))
}

/// Lift a two-party sharing `a + b = x` to an `n`-party sharing: each holder
/// re-shares its piece into `n` sub-pieces and party `k` adds the two
/// sub-pieces addressed to it. No party ever handles the plain secret.
pub fn convert_2_to_n(
    a: RingVal,
    b: RingVal,
    n: usize,
    cfg: &FixCfg,
    rng: &mut impl Rng,
) -> Result<Vec<RingVal>> {
    let sa = share_n(a, n, cfg, rng)?;
    let sb = share_n(b, n, cfg, rng)?;
    Ok((0..n)
        .map(|k| cfg.add(sa.piece(k), sb.piece(k)))
        .collect())
}

/// Deterministic generator for a bare seed.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Deterministic child generator: independent streams for ("dealer",
/// "party-3", ...) derived from one run seed.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_encoding_basics() {
        let cfg = FixCfg::default();
        assert_eq!(cfg.fx_encode(0.0).unwrap(), RingVal(0));
        assert_eq!(cfg.fx_encode(1.0).unwrap(), RingVal(1 << 16));
        // -1.5 * 2^16 = -98304, two's complement in Z_{2^64}.
        assert_eq!(
            cfg.fx_encode(-1.5).unwrap(),
            RingVal(0u64.wrapping_sub(98304))
        );
        assert_eq!(cfg.fx_decode(RingVal(1 << 16)), 1.0);
    }

    #[test]
    fn encode_decode_within_half_ulp() {
        let cfg = FixCfg::default();
        let mut rng = seeded_rng(7);
        for _ in 0..10_000 {
            let x: f64 = rng.gen_range(-1e9..1e9);
            let y = cfg.fx_decode(cfg.fx_encode(x).unwrap());
            assert!((x - y).abs() <= 2f64.powi(-17), "x={x} y={y}");
        }
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let cfg = FixCfg::default();
        let bound = 2f64.powi(47);
        assert!(matches!(
            cfg.fx_encode(bound),
            Err(Error::FixedPointRange { .. })
        ));
        assert!(matches!(
            cfg.fx_encode(-bound * 2.0),
            Err(Error::FixedPointRange { .. })
        ));
        assert!(cfg.fx_encode(bound - 1.0).is_ok());
        assert!(matches!(
            cfg.fx_encode(f64::NAN),
            Err(Error::FixedPointRange { .. })
        ));
    }

    #[test]
    fn cfg_validation() {
        assert!(FixCfg::new(64, 16).is_ok());
        assert!(FixCfg::new(40, 16).is_ok()); // exactly 2f + 8 = k
        assert!(FixCfg::new(39, 16).is_err());
        assert!(FixCfg::new(64, 0).is_err());
        assert!(FixCfg::new(8, 8).is_err());
        assert!(FixCfg::new(65, 16).is_err());
    }

    #[test]
    fn reconstruct_wraps() {
        let cfg = FixCfg::default();
        let s = ShareSet::from_pieces(2, vec![RingVal(1), RingVal(u64::MAX)]).unwrap();
        assert_eq!(reconstruct(&s, &cfg), RingVal(0));
    }

    #[test]
    fn share_set_must_be_complete() {
        assert!(matches!(
            ShareSet::from_pieces(3, vec![RingVal(1), RingVal(2)]),
            Err(Error::IncompleteShares {
                expected: 3,
                got: 2
            })
        ));
        assert!(ShareSet::from_pieces(1, vec![RingVal(1)]).is_err());
    }

    #[test]
    fn share_roundtrip_many_party_counts() {
        let cfg = FixCfg::default();
        let small = FixCfg::new(40, 16).unwrap();
        let mut rng = seeded_rng(42);
        for n in 2..=16 {
            for cfg in [&cfg, &small] {
                let x = cfg.random(&mut rng);
                let s = share_n(x, n, cfg, &mut rng).unwrap();
                assert_eq!(s.party_count(), n);
                assert_eq!(reconstruct(&s, cfg), x);
            }
        }
        assert!(share_n(RingVal(5), 1, &cfg, &mut rng).is_err());
    }

    #[test]
    fn convert_2_to_n_preserves_secret() {
        let cfg = FixCfg::default();
        let mut rng = seeded_rng(3);
        // 10 + (2^64 - 3) = 7 mod 2^64.
        let pieces = convert_2_to_n(RingVal(10), RingVal(u64::MAX - 2), 5, &cfg, &mut rng).unwrap();
        let s = ShareSet::from_pieces(5, pieces).unwrap();
        assert_eq!(reconstruct(&s, &cfg), RingVal(7));

        for n in 2..=12 {
            let x = cfg.random(&mut rng);
            let a = cfg.random(&mut rng);
            let b = cfg.sub(x, a);
            let pieces = convert_2_to_n(a, b, n, &cfg, &mut rng).unwrap();
            let s = ShareSet::from_pieces(n, pieces).unwrap();
            assert_eq!(reconstruct(&s, &cfg), x);
        }
    }

    /// Any proper subset of pieces should look uniform. Chi-squared over the
    /// low nibble of the first piece (and of a two-piece partial sum) with 16
    /// bins and 10^4 draws; 30.578 is the df=15 critical value at p = 0.01.
    #[test]
    fn piece_low_bits_uniform() {
        let cfg = FixCfg::default();
        let mut rng = seeded_rng(11);
        let x = cfg.fx_encode(1234.5).unwrap();
        let mut bins_single = [0u32; 16];
        let mut bins_pair = [0u32; 16];
        let trials = 10_000;
        for _ in 0..trials {
            let s = share_n(x, 3, &cfg, &mut rng).unwrap();
            bins_single[(s.piece(0).0 & 0xf) as usize] += 1;
            bins_pair[(cfg.add(s.piece(0), s.piece(1)).0 & 0xf) as usize] += 1;
        }
        let expected = trials as f64 / 16.0;
        for bins in [bins_single, bins_pair] {
            let chi2: f64 = bins
                .iter()
                .map(|&o| {
                    let d = o as f64 - expected;
                    d * d / expected
                })
                .sum();
            assert!(chi2 < 30.578, "chi2 = {chi2}");
        }
    }

    #[test]
    fn derived_rngs_are_independent_streams() {
        let mut a = derive_rng(1, "dealer");
        let mut b = derive_rng(1, "party-0");
        let mut a2 = derive_rng(1, "dealer");
        assert_eq!(a.gen::<u64>(), a2.gen::<u64>());
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn small_ring_sign_handling() {
        let cfg = FixCfg::new(40, 16).unwrap();
        let v = cfg.fx_encode(-2.25).unwrap();
        assert_eq!(cfg.fx_decode(v), -2.25);
        assert_eq!(v.0 >> 40, 0, "reduced mod 2^40");
        assert_eq!(cfg.to_signed(cfg.from_signed(-5)), -5);
    }
}
