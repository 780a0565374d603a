//! Trusted dealer: the offline-phase stand-in that hands out correlated
//! randomness (Beaver triples, square pairs, truncation pairs, boolean
//! triples). Consumption is counted per kind so tests can compare against
//! the statically predictable demand of a circuit, and an optional budget
//! turns over-consumption into an error instead of silently minting more.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::ring::{share_n, FixCfg, RingVal};
use crate::tensor::Tensor;

/// How many of each correlated-randomness kind were issued (or may be).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DealerCounts {
    /// Arithmetic multiplication triples (one per scalar product).
    pub triples: u64,
    /// Square pairs `(a, a^2)`.
    pub square_pairs: u64,
    /// Truncation pairs `(r, r >> f)`.
    pub trunc_pairs: u64,
    /// Boolean AND triples (one per AND gate evaluation).
    pub bit_triples: u64,
}

/// One batch of boolean Beaver triples, bit-packed 64 per word. Boolean
/// two-party evaluation consumes them in order.
#[derive(Debug, Clone)]
pub struct BitTriples {
    pub a: (Vec<u64>, Vec<u64>),
    pub b: (Vec<u64>, Vec<u64>),
    pub c: (Vec<u64>, Vec<u64>),
    pub len_bits: u64,
}

pub struct Dealer {
    rng: ChaCha20Rng,
    cfg: FixCfg,
    party_count: usize,
    issued: DealerCounts,
    budget: Option<DealerCounts>,
}

impl Dealer {
    pub fn new(rng: ChaCha20Rng, cfg: FixCfg, party_count: usize) -> Self {
        Dealer {
            rng,
            cfg,
            party_count,
            issued: DealerCounts::default(),
            budget: None,
        }
    }

    /// Fail with `DealerExhausted` once any counter would exceed `budget`.
    pub fn set_budget(&mut self, budget: DealerCounts) {
        self.budget = Some(budget);
    }

    pub fn issued(&self) -> DealerCounts {
        self.issued
    }

    pub fn party_count(&self) -> usize {
        self.party_count
    }

    fn charge(&mut self, kind: &'static str, take: impl Fn(&DealerCounts) -> u64) -> Result<()> {
        if let Some(budget) = &self.budget {
            if take(&self.issued) > take(budget) {
                return Err(Error::DealerExhausted { kind });
            }
        }
        Ok(())
    }

    fn deal_shares(&mut self, values: &[RingVal]) -> Vec<Tensor<RingVal>> {
        let n = self.party_count;
        let mut pieces: Vec<Vec<RingVal>> = vec![Vec::with_capacity(values.len()); n];
        for &v in values {
            let s = share_n(v, n, &self.cfg, &mut self.rng).expect("party_count >= 2");
            for (k, piece) in s.pieces().iter().enumerate() {
                pieces[k].push(*piece);
            }
        }
        pieces
            .into_iter()
            .map(|p| Tensor::new(vec![values.len()], p).expect("lengths agree"))
            .collect()
    }

    /// `count` multiplication triples with `c = a * b` in the ring; returns
    /// per-party piece tensors for a, b, c.
    #[allow(clippy::type_complexity)]
    pub fn triples(
        &mut self,
        count: usize,
    ) -> Result<(Vec<Tensor<RingVal>>, Vec<Tensor<RingVal>>, Vec<Tensor<RingVal>>)> {
        self.issued.triples += count as u64;
        self.charge("arithmetic triples", |c| c.triples)?;
        let mut a = Vec::with_capacity(count);
        let mut b = Vec::with_capacity(count);
        let mut c = Vec::with_capacity(count);
        for _ in 0..count {
            let av = self.cfg.random(&mut self.rng);
            let bv = self.cfg.random(&mut self.rng);
            a.push(av);
            b.push(bv);
            c.push(self.cfg.mul(av, bv));
        }
        Ok((self.deal_shares(&a), self.deal_shares(&b), self.deal_shares(&c)))
    }

    /// `count` square pairs `(a, a^2)`.
    pub fn square_pairs(
        &mut self,
        count: usize,
    ) -> Result<(Vec<Tensor<RingVal>>, Vec<Tensor<RingVal>>)> {
        self.issued.square_pairs += count as u64;
        self.charge("square pairs", |c| c.square_pairs)?;
        let mut a = Vec::with_capacity(count);
        let mut c = Vec::with_capacity(count);
        for _ in 0..count {
            let av = self.cfg.random(&mut self.rng);
            a.push(av);
            c.push(self.cfg.mul(av, av));
        }
        Ok((self.deal_shares(&a), self.deal_shares(&c)))
    }

    /// `count` truncation pairs `(r, r >> t)` with `r` uniform and the shift
    /// arithmetic (signed reading).
    pub fn trunc_pairs(
        &mut self,
        count: usize,
        t: u32,
    ) -> Result<(Vec<Tensor<RingVal>>, Vec<Tensor<RingVal>>)> {
        self.issued.trunc_pairs += count as u64;
        self.charge("truncation pairs", |c| c.trunc_pairs)?;
        let mut r = Vec::with_capacity(count);
        let mut rt = Vec::with_capacity(count);
        for _ in 0..count {
            let rv = self.cfg.random(&mut self.rng);
            r.push(rv);
            rt.push(self.cfg.shift_down(rv, t));
        }
        Ok((self.deal_shares(&r), self.deal_shares(&rt)))
    }

    /// Boolean AND triples for two-party circuit evaluation, packed 64 per
    /// word: `a & b = c`, each XOR-shared between the two parties.
    pub fn bit_triples(&mut self, count_bits: u64) -> Result<BitTriples> {
        self.issued.bit_triples += count_bits;
        self.charge("boolean triples", |c| c.bit_triples)?;
        let words = (count_bits as usize).div_ceil(64);
        let mut t = BitTriples {
            a: (Vec::with_capacity(words), Vec::with_capacity(words)),
            b: (Vec::with_capacity(words), Vec::with_capacity(words)),
            c: (Vec::with_capacity(words), Vec::with_capacity(words)),
            len_bits: count_bits,
        };
        for _ in 0..words {
            let a: u64 = self.rng.gen();
            let b: u64 = self.rng.gen();
            let c = a & b;
            let a0: u64 = self.rng.gen();
            let b0: u64 = self.rng.gen();
            let c0: u64 = self.rng.gen();
            t.a.0.push(a0);
            t.a.1.push(a ^ a0);
            t.b.0.push(b0);
            t.b.1.push(b ^ b0);
            t.c.0.push(c0);
            t.c.1.push(c ^ c0);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::derive_rng;

    #[test]
    fn triples_multiply_correctly() {
        let cfg = FixCfg::default();
        let mut d = Dealer::new(derive_rng(1, "dealer"), cfg, 3);
        let (a, b, c) = d.triples(64).unwrap();
        for i in 0..64 {
            let ra = (0..3).fold(RingVal(0), |acc, p| cfg.add(acc, a[p].data()[i]));
            let rb = (0..3).fold(RingVal(0), |acc, p| cfg.add(acc, b[p].data()[i]));
            let rc = (0..3).fold(RingVal(0), |acc, p| cfg.add(acc, c[p].data()[i]));
            assert_eq!(cfg.mul(ra, rb), rc);
        }
        assert_eq!(d.issued().triples, 64);
    }

    #[test]
    fn square_and_trunc_pairs_consistent() {
        let cfg = FixCfg::default();
        let mut d = Dealer::new(derive_rng(2, "dealer"), cfg, 2);
        let (a, c) = d.square_pairs(32).unwrap();
        let (r, rt) = d.trunc_pairs(32, 16).unwrap();
        for i in 0..32 {
            let ra = cfg.add(a[0].data()[i], a[1].data()[i]);
            let rc = cfg.add(c[0].data()[i], c[1].data()[i]);
            assert_eq!(cfg.mul(ra, ra), rc);
            let rr = cfg.add(r[0].data()[i], r[1].data()[i]);
            let rrt = cfg.add(rt[0].data()[i], rt[1].data()[i]);
            assert_eq!(cfg.shift_down(rr, 16), rrt);
        }
    }

    #[test]
    fn bit_triples_satisfy_and_relation() {
        let cfg = FixCfg::default();
        let mut d = Dealer::new(derive_rng(3, "dealer"), cfg, 2);
        let t = d.bit_triples(130).unwrap();
        assert_eq!(t.a.0.len(), 3);
        for w in 0..3 {
            let a = t.a.0[w] ^ t.a.1[w];
            let b = t.b.0[w] ^ t.b.1[w];
            let c = t.c.0[w] ^ t.c.1[w];
            assert_eq!(a & b, c);
        }
        assert_eq!(d.issued().bit_triples, 130);
    }

    #[test]
    fn budget_exhaustion_is_an_error() {
        let cfg = FixCfg::default();
        let mut d = Dealer::new(derive_rng(4, "dealer"), cfg, 2);
        d.set_budget(DealerCounts {
            triples: 10,
            ..DealerCounts::default()
        });
        assert!(d.triples(10).is_ok());
        assert!(matches!(
            d.triples(1),
            Err(Error::DealerExhausted {
                kind: "arithmetic triples"
            })
        ));
        // Square pairs have budget 0 under this budget.
        assert!(d.square_pairs(1).is_err());
    }
}
