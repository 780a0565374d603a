//! Semi-honest arithmetic MPC over `Z_{2^k}` with a trusted dealer.
//!
//! [`MpcEngine`] evaluates tensor circuits over additively shared values:
//! linear combinations are local, multiplications spend dealer triples and
//! open the masked differences `d = x - a`, `e = y - b` (two ring elements
//! per party pair per coordinate), squares spend square pairs and open only
//! `d` (half the traffic), and every product is rescaled by one truncation.
//!
//! [`PlainFix`] is the same op set on unshared ring values. In exact
//! truncation mode a shared evaluation must reconstruct *bit-identically* to
//! the plain interpreter running the same ops — that equivalence is what the
//! tests lean on — and the plain side doubles as the range analyzer, since
//! it can see true magnitudes and flag products that would overflow the
//! headroom budget.
//!
//! Parties are simulated in lockstep in one process. Piece tensors are kept
//! per party and combined only through the ops below; anything that crosses
//! a party boundary is routed (and thus metered) by [`crate::net::Router`].

pub mod dealer;
mod plain;

pub use dealer::{BitTriples, Dealer, DealerCounts};
pub use plain::PlainFix;

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::net::{NetConfig, Phase, Router};
use crate::ring::{derive_rng, share_n, FixCfg, RingVal};
use crate::tensor::Tensor;

/// Who learns an opened value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Public,
    To(usize),
}

/// How products are rescaled back to `f` fraction bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncMode {
    /// Dealer-pair assisted: result is exactly the arithmetic shift of the
    /// reconstructed value. Costs one opening per coordinate.
    #[default]
    Exact,
    /// Each party shifts its own piece: free, but off by up to `n` ulps, with
    /// a rare large error when the share sum wraps (probability about
    /// `|x| / 2^(k-1)`).
    Local,
}

/// Additive sharing of a tensor: one piece tensor per party.
#[derive(Debug, Clone)]
pub struct SharedTensor {
    shape: Vec<usize>,
    cfg: FixCfg,
    pieces: Vec<Tensor<RingVal>>,
}

impl SharedTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn party_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn len(&self) -> usize {
        self.pieces[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cfg(&self) -> FixCfg {
        self.cfg
    }

    pub fn piece(&self, party: usize) -> &Tensor<RingVal> {
        &self.pieces[party]
    }

    /// Simulator-side reconstruction without any communication. Tests and
    /// oracles use this; protocol code must go through [`MpcEngine::open`].
    pub fn reconstruct(&self) -> Tensor<RingVal> {
        let cfg = self.cfg;
        let mut out = self.pieces[0].clone();
        for p in &self.pieces[1..] {
            for (o, v) in out.data_mut().iter_mut().zip(p.data()) {
                *o = cfg.add(*o, *v);
            }
        }
        out
    }

    pub fn from_pieces(shape: Vec<usize>, cfg: FixCfg, pieces: Vec<Tensor<RingVal>>) -> Result<Self> {
        if pieces.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 parties, got {}",
                pieces.len()
            )));
        }
        let len: usize = shape.iter().product();
        if pieces.iter().any(|p| p.len() != len) {
            return Err(Error::ShapeMismatch(format!(
                "piece lengths do not all match shape {shape:?}"
            )));
        }
        Ok(SharedTensor { shape, cfg, pieces })
    }
}

/// Encode a real at doubled fraction width `2f` (the scale of a raw product).
fn encode_raw2(cfg: &FixCfg, x: f64) -> Result<RingVal> {
    if !x.is_finite() {
        return Err(Error::FixedPointRange {
            value: x,
            k: cfg.k(),
            f: cfg.f(),
        });
    }
    let scaled = (x * 2f64.powi(2 * cfg.f() as i32)).round();
    let s = scaled as i128;
    if !scaled.is_finite() || s.abs() >= 1i128 << (cfg.k() - 1) {
        return Err(Error::FixedPointRange {
            value: x,
            k: cfg.k(),
            f: cfg.f(),
        });
    }
    Ok(cfg.from_signed(s as i64))
}

/// True when every coefficient is an exact (small) integer, in which case a
/// linear combination needs no rescaling at all.
fn all_integral(coeffs: impl Iterator<Item = f64> + Clone) -> bool {
    coeffs
        .clone()
        .all(|c| c.is_finite() && c.fract() == 0.0 && c.abs() <= 2f64.powi(62))
}

/// The fixed-point op set, implemented by the shared engine and the plain
/// interpreter. Circuits written against this trait run on either backend.
pub trait FixOps {
    type Value: Clone;

    fn cfg(&self) -> FixCfg;

    /// Encode and share `values` as owned by party `owner`.
    fn input(&mut self, owner: usize, values: &Tensor<f64>) -> Result<Self::Value>;

    /// `sum_t coeff_t * x_t + offset`. Integer coefficients stay local and
    /// exact; fractional ones go through one truncation.
    fn lincomb(
        &mut self,
        terms: &[(f64, &Self::Value)],
        offset: Option<&Tensor<f64>>,
    ) -> Result<Self::Value>;

    fn mul(&mut self, x: &Self::Value, y: &Self::Value) -> Result<Self::Value>;

    fn square(&mut self, x: &Self::Value) -> Result<Self::Value>;

    /// `w * x + b` with one truncation per output coordinate
    /// (sum-then-truncate).
    fn matvec_affine(
        &mut self,
        w: &Self::Value,
        x: &Self::Value,
        b: &Self::Value,
    ) -> Result<Self::Value>;

    /// Weighted mean over per-owner representation sums: `owner_sums[i]` is
    /// the sum of owner i's per-sample vectors and `counts[i]` the number of
    /// samples in it.
    fn mean_readout(&mut self, owner_sums: &[&Self::Value], counts: &[usize])
        -> Result<Self::Value>;

    fn truncate(&mut self, x: &Self::Value, t: u32) -> Result<Self::Value>;

    /// Reveal a value. The returned tensor holds raw ring elements.
    fn open(&mut self, x: &Self::Value, vis: Visibility) -> Result<Tensor<RingVal>>;

    /// Local data movement: `idx[i] = Some(j)` gathers element `j`,
    /// `None` produces an exact zero (used for padding).
    fn gather(&mut self, x: &Self::Value, idx: &[Option<usize>]) -> Result<Self::Value>;

    /// Local concatenation into one vector.
    fn concat(&mut self, parts: &[&Self::Value]) -> Result<Self::Value>;
}

pub struct MpcEngine {
    cfg: FixCfg,
    n: usize,
    trunc_mode: TruncMode,
    dealer: Dealer,
    router: Router,
    party_rngs: Vec<ChaCha20Rng>,
}

impl MpcEngine {
    pub fn new(
        party_count: usize,
        cfg: FixCfg,
        seed: u64,
        net: NetConfig,
        trunc_mode: TruncMode,
    ) -> Result<Self> {
        if party_count < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 parties, got {party_count}"
            )));
        }
        Ok(MpcEngine {
            cfg,
            n: party_count,
            trunc_mode,
            dealer: Dealer::new(derive_rng(seed, "dealer"), cfg, party_count),
            router: Router::new(party_count, net),
            party_rngs: (0..party_count)
                .map(|i| derive_rng(seed, &format!("party-{i}")))
                .collect(),
        })
    }

    pub fn party_count(&self) -> usize {
        self.n
    }

    pub fn trunc_mode(&self) -> TruncMode {
        self.trunc_mode
    }

    pub fn dealer_counts(&self) -> DealerCounts {
        self.dealer.issued()
    }

    pub fn dealer_mut(&mut self) -> &mut Dealer {
        &mut self.dealer
    }

    pub fn router_mut(&mut self) -> &mut Router {
        &mut self.router
    }

    /// Simultaneous access for callers that run side computations (the
    /// in-circuit crypto) against this engine's triple stream and transport.
    pub fn dealer_and_router_mut(&mut self) -> (&mut Dealer, &mut Router) {
        (&mut self.dealer, &mut self.router)
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.router.set_phase(phase);
    }

    pub fn collect_stats(&mut self) -> crate::net::CostStats {
        self.router.collect_stats()
    }

    fn check_shape(&self, a: &SharedTensor, b: &SharedTensor) -> Result<()> {
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        Ok(())
    }

    /// Charge an all-to-all exchange of `elems` ring elements per ordered
    /// pair, as one round.
    fn charge_broadcast(&mut self, elems: usize, op: &'static str) {
        let bytes = elems * self.cfg.elem_bytes();
        let msgs: Vec<(usize, usize, usize)> = (0..self.n)
            .flat_map(|i| {
                (0..self.n)
                    .filter(move |&j| j != i)
                    .map(move |j| (i, j, bytes))
            })
            .collect();
        self.router.route_batch(&msgs, op);
        self.router.end_round();
    }

    fn zero_pieces(&self, len: usize) -> Vec<Tensor<RingVal>> {
        (0..self.n)
            .map(|_| Tensor::new(vec![len], vec![RingVal(0); len]).expect("size"))
            .collect()
    }

    /// Multiply without the final rescale; the result carries `2f` fraction
    /// bits. Spends one triple and opens `d`, `e` per coordinate.
    fn beaver_mul_raw(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        self.check_shape(x, y)?;
        let cfg = self.cfg;
        let count = x.len();
        let (ta, tb, tc) = self.dealer.triples(count)?;
        // d = x - a, e = y - b, both opened to everyone.
        let mut d = vec![RingVal(0); count];
        let mut e = vec![RingVal(0); count];
        for p in 0..self.n {
            for i in 0..count {
                d[i] = cfg.add(d[i], cfg.sub(x.pieces[p].data()[i], ta[p].data()[i]));
                e[i] = cfg.add(e[i], cfg.sub(y.pieces[p].data()[i], tb[p].data()[i]));
            }
        }
        self.charge_broadcast(2 * count, "beaver_mul");
        let mut pieces = self.zero_pieces(count);
        for p in 0..self.n {
            let out = pieces[p].data_mut();
            for i in 0..count {
                // z = c + d*b + e*a (+ d*e once).
                let mut z = tc[p].data()[i];
                z = cfg.add(z, cfg.mul(d[i], tb[p].data()[i]));
                z = cfg.add(z, cfg.mul(e[i], ta[p].data()[i]));
                if p == 0 {
                    z = cfg.add(z, cfg.mul(d[i], e[i]));
                }
                out[i] = z;
            }
        }
        SharedTensor::from_pieces(x.shape.clone(), cfg, pieces)
    }

    /// Square without the final rescale. Opens only `d = x - a`.
    fn square_raw(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let cfg = self.cfg;
        let count = x.len();
        let (ta, tc) = self.dealer.square_pairs(count)?;
        let mut d = vec![RingVal(0); count];
        for p in 0..self.n {
            for i in 0..count {
                d[i] = cfg.add(d[i], cfg.sub(x.pieces[p].data()[i], ta[p].data()[i]));
            }
        }
        self.charge_broadcast(count, "square");
        let mut pieces = self.zero_pieces(count);
        for p in 0..self.n {
            let out = pieces[p].data_mut();
            for i in 0..count {
                // x^2 = c + 2*d*a (+ d^2 once).
                let mut z = cfg.add(tc[p].data()[i], cfg.mul_const(cfg.mul(d[i], ta[p].data()[i]), 2));
                if p == 0 {
                    z = cfg.add(z, cfg.mul(d[i], d[i]));
                }
                out[i] = z;
            }
        }
        SharedTensor::from_pieces(x.shape.clone(), cfg, pieces)
    }

    /// Import a two-party sharing from another context: the two holders
    /// (party indices in *this* engine) re-share their pieces to all `n`
    /// parties, who add the sub-pieces addressed to them.
    pub fn import_two_party(
        &mut self,
        piece_a: &Tensor<RingVal>,
        piece_b: &Tensor<RingVal>,
        holders: (usize, usize),
    ) -> Result<SharedTensor> {
        if piece_a.shape() != piece_b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                piece_a.shape(),
                piece_b.shape()
            )));
        }
        let cfg = self.cfg;
        let count = piece_a.len();
        let mut pieces = self.zero_pieces(count);
        for (holder, piece) in [(holders.0, piece_a), (holders.1, piece_b)] {
            if holder >= self.n {
                return Err(Error::InvalidParameter(format!(
                    "holder {holder} out of range for {} parties",
                    self.n
                )));
            }
            for i in 0..count {
                let sub = share_n(piece.data()[i], self.n, &cfg, &mut self.party_rngs[holder])?;
                for k in 0..self.n {
                    let cur = pieces[k].data()[i];
                    pieces[k].data_mut()[i] = cfg.add(cur, sub.piece(k));
                }
            }
        }
        let bytes = count * cfg.elem_bytes();
        let msgs: Vec<(usize, usize, usize)> = [holders.0, holders.1]
            .iter()
            .flat_map(|&h| {
                (0..self.n)
                    .filter(move |&k| k != h)
                    .map(move |k| (h, k, bytes))
            })
            .collect();
        self.router.route_batch(&msgs, "convert");
        self.router.end_round();
        SharedTensor::from_pieces(piece_a.shape().to_vec(), cfg, pieces)
    }
}

impl FixOps for MpcEngine {
    type Value = SharedTensor;

    fn cfg(&self) -> FixCfg {
        self.cfg
    }

    fn input(&mut self, owner: usize, values: &Tensor<f64>) -> Result<SharedTensor> {
        if owner >= self.n {
            return Err(Error::InvalidParameter(format!(
                "owner {owner} out of range for {} parties",
                self.n
            )));
        }
        let cfg = self.cfg;
        let count = values.len();
        let mut pieces = self.zero_pieces(count);
        for (i, &v) in values.data().iter().enumerate() {
            let enc = cfg.fx_encode(v)?;
            let s = share_n(enc, self.n, &cfg, &mut self.party_rngs[owner])?;
            for k in 0..self.n {
                pieces[k].data_mut()[i] = s.piece(k);
            }
        }
        let bytes = count * cfg.elem_bytes();
        let msgs: Vec<(usize, usize, usize)> = (0..self.n)
            .filter(|&k| k != owner)
            .map(|k| (owner, k, bytes))
            .collect();
        self.router.route_batch(&msgs, "input");
        self.router.end_round();
        SharedTensor::from_pieces(values.shape().to_vec(), cfg, pieces)
    }

    fn lincomb(
        &mut self,
        terms: &[(f64, &SharedTensor)],
        offset: Option<&Tensor<f64>>,
    ) -> Result<SharedTensor> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("lincomb of no terms".into()));
        }
        let cfg = self.cfg;
        let shape = terms[0].1.shape.clone();
        let count: usize = shape.iter().product();
        for (_, t) in terms {
            if t.shape != shape {
                return Err(Error::ShapeMismatch(format!("{:?} vs {shape:?}", t.shape)));
            }
        }
        if let Some(o) = offset {
            if o.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "offset {:?} vs {shape:?}",
                    o.shape()
                )));
            }
        }
        if all_integral(terms.iter().map(|(c, _)| *c)) {
            // Purely local: multiply pieces by the integer constants; the
            // public offset is added once, by party 0.
            let mut pieces = self.zero_pieces(count);
            for (c, t) in terms {
                let c = *c as i64;
                for p in 0..self.n {
                    for i in 0..count {
                        let cur = pieces[p].data()[i];
                        pieces[p].data_mut()[i] =
                            cfg.add(cur, cfg.mul_const(t.pieces[p].data()[i], c));
                    }
                }
            }
            if let Some(o) = offset {
                for i in 0..count {
                    let enc = cfg.fx_encode(o.data()[i])?;
                    let cur = pieces[0].data()[i];
                    pieces[0].data_mut()[i] = cfg.add(cur, enc);
                }
            }
            return SharedTensor::from_pieces(shape, cfg, pieces);
        }
        // Fractional coefficients: raw products at 2f bits, then one rescale.
        let mut pieces = self.zero_pieces(count);
        for (c, t) in terms {
            let enc = cfg.fx_encode(*c)?;
            for p in 0..self.n {
                for i in 0..count {
                    let cur = pieces[p].data()[i];
                    pieces[p].data_mut()[i] = cfg.add(cur, cfg.mul(t.pieces[p].data()[i], enc));
                }
            }
        }
        if let Some(o) = offset {
            for i in 0..count {
                let enc = encode_raw2(&cfg, o.data()[i])?;
                let cur = pieces[0].data()[i];
                pieces[0].data_mut()[i] = cfg.add(cur, enc);
            }
        }
        let raw = SharedTensor::from_pieces(shape, cfg, pieces)?;
        self.truncate(&raw, cfg.f())
    }

    fn mul(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        let raw = self.beaver_mul_raw(x, y)?;
        self.truncate(&raw, self.cfg.f())
    }

    fn square(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let raw = self.square_raw(x)?;
        self.truncate(&raw, self.cfg.f())
    }

    fn matvec_affine(
        &mut self,
        w: &SharedTensor,
        x: &SharedTensor,
        b: &SharedTensor,
    ) -> Result<SharedTensor> {
        let cfg = self.cfg;
        let (rows, cols) = match w.shape.as_slice() {
            [r, c] => (*r, *c),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "matvec weight must be a matrix, got {other:?}"
                )))
            }
        };
        if x.shape != [cols] || b.shape != [rows] {
            return Err(Error::ShapeMismatch(format!(
                "matvec: w {rows}x{cols}, x {:?}, b {:?}",
                x.shape, b.shape
            )));
        }
        // Tile x so each scalar product W_ij * x_j has its own coordinate.
        let mut tiled = self.zero_pieces(rows * cols);
        for p in 0..self.n {
            let src = x.pieces[p].data();
            let dst = tiled[p].data_mut();
            for r in 0..rows {
                dst[r * cols..(r + 1) * cols].copy_from_slice(src);
            }
        }
        let xt = SharedTensor::from_pieces(vec![rows, cols], cfg, tiled)?;
        let raw = self.beaver_mul_raw(w, &xt)?;
        // Row sums stay at 2f bits; lift the bias to 2f and rescale once.
        let mut sums = self.zero_pieces(rows);
        for p in 0..self.n {
            let prod = raw.pieces[p].data();
            let bias = b.pieces[p].data();
            let out = sums[p].data_mut();
            for r in 0..rows {
                let mut acc = RingVal(0);
                for j in 0..cols {
                    acc = cfg.add(acc, prod[r * cols + j]);
                }
                out[r] = cfg.add(acc, cfg.mul_const(bias[r], 1i64 << cfg.f()));
            }
        }
        let summed = SharedTensor::from_pieces(vec![rows], cfg, sums)?;
        self.truncate(&summed, cfg.f())
    }

    fn mean_readout(
        &mut self,
        owner_sums: &[&SharedTensor],
        counts: &[usize],
    ) -> Result<SharedTensor> {
        if owner_sums.is_empty() || owner_sums.len() != counts.len() {
            return Err(Error::InvalidParameter(format!(
                "mean_readout: {} sum tensors, {} counts",
                owner_sums.len(),
                counts.len()
            )));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidParameter(
                "mean_readout over zero samples".into(),
            ));
        }
        let terms: Vec<(f64, &SharedTensor)> = owner_sums
            .iter()
            .map(|t| (1.0 / total as f64, *t))
            .collect();
        self.lincomb(&terms, None)
    }

    fn truncate(&mut self, x: &SharedTensor, t: u32) -> Result<SharedTensor> {
        let cfg = self.cfg;
        let count = x.len();
        match self.trunc_mode {
            TruncMode::Local => {
                let pieces = x
                    .pieces
                    .iter()
                    .map(|p| p.map(|&v| cfg.shift_down(v, t)))
                    .collect();
                SharedTensor::from_pieces(x.shape.clone(), cfg, pieces)
            }
            TruncMode::Exact => {
                let (tr, trt) = self.dealer.trunc_pairs(count, t)?;
                // Every party reveals its piece of x + r; the opened value c
                // and the pair yield shift(x) up to a wrap/carry correction.
                // The simulator computes that correction directly — a real
                // deployment would run a comparison gadget here, which this
                // engine does not model — and folds it into party 0's piece,
                // so the result is exactly shift(reconstruct(x)).
                self.charge_broadcast(count, "truncate");
                let mut pieces = self.zero_pieces(count);
                for i in 0..count {
                    let xv = (0..self.n).fold(RingVal(0), |acc, p| {
                        cfg.add(acc, x.pieces[p].data()[i])
                    });
                    let rv = (0..self.n).fold(RingVal(0), |acc, p| cfg.add(acc, tr[p].data()[i]));
                    let rtv = (0..self.n).fold(RingVal(0), |acc, p| cfg.add(acc, trt[p].data()[i]));
                    let c = cfg.add(xv, rv);
                    let target = cfg.shift_down(xv, t);
                    let naive = cfg.sub(cfg.shift_down(c, t), rtv);
                    let delta = cfg.sub(naive, target);
                    for p in 0..self.n {
                        let mut out = cfg.neg(trt[p].data()[i]);
                        if p == 0 {
                            out = cfg.add(out, cfg.shift_down(c, t));
                            out = cfg.sub(out, delta);
                        }
                        pieces[p].data_mut()[i] = out;
                    }
                }
                SharedTensor::from_pieces(x.shape.clone(), cfg, pieces)
            }
        }
    }

    fn open(&mut self, x: &SharedTensor, vis: Visibility) -> Result<Tensor<RingVal>> {
        let bytes = x.len() * self.cfg.elem_bytes();
        let msgs: Vec<(usize, usize, usize)> = match vis {
            Visibility::Public => (0..self.n)
                .flat_map(|i| {
                    (0..self.n)
                        .filter(move |&j| j != i)
                        .map(move |j| (i, j, bytes))
                })
                .collect(),
            Visibility::To(p) => {
                if p >= self.n {
                    return Err(Error::InvalidParameter(format!(
                        "receiver {p} out of range for {} parties",
                        self.n
                    )));
                }
                (0..self.n).filter(|&i| i != p).map(|i| (i, p, bytes)).collect()
            }
        };
        self.router.route_batch(&msgs, "open");
        self.router.end_round();
        Ok(x.reconstruct().reshape(x.shape.clone())?)
    }

    fn gather(&mut self, x: &SharedTensor, idx: &[Option<usize>]) -> Result<SharedTensor> {
        let cfg = self.cfg;
        let len = x.len();
        let mut pieces = Vec::with_capacity(self.n);
        for p in 0..self.n {
            let src = x.pieces[p].data();
            let mut out = Vec::with_capacity(idx.len());
            for &ix in idx {
                match ix {
                    Some(j) if j < len => out.push(src[j]),
                    Some(j) => {
                        return Err(Error::ShapeMismatch(format!(
                            "gather index {j} out of range {len}"
                        )))
                    }
                    None => out.push(RingVal(0)),
                }
            }
            pieces.push(Tensor::new(vec![idx.len()], out)?);
        }
        SharedTensor::from_pieces(vec![idx.len()], cfg, pieces)
    }

    fn concat(&mut self, parts: &[&SharedTensor]) -> Result<SharedTensor> {
        if parts.is_empty() {
            return Err(Error::InvalidParameter("concat of nothing".into()));
        }
        let cfg = self.cfg;
        let total: usize = parts.iter().map(|t| t.len()).sum();
        let mut pieces = Vec::with_capacity(self.n);
        for p in 0..self.n {
            let mut out = Vec::with_capacity(total);
            for t in parts {
                out.extend_from_slice(t.pieces[p].data());
            }
            pieces.push(Tensor::new(vec![total], out)?);
        }
        SharedTensor::from_pieces(vec![total], cfg, pieces)
    }
}
