//! Plaintext fixed-point interpreter: the reference semantics for the
//! shared engine. It runs the same op set on bare ring values with identical
//! rounding, so an exact-mode shared evaluation must reconstruct to exactly
//! what this interpreter computes. Because it sees true magnitudes it also
//! performs range analysis, rejecting products and sums that would exceed
//! the signed headroom of the ring — the shared engine cannot detect that.

use super::{all_integral, encode_raw2, FixOps, Visibility};
use crate::error::{Error, Result};
use crate::ring::{FixCfg, RingVal};
use crate::tensor::Tensor;

pub struct PlainFix {
    cfg: FixCfg,
    check_ranges: bool,
}

impl PlainFix {
    pub fn new(cfg: FixCfg) -> Self {
        PlainFix {
            cfg,
            check_ranges: true,
        }
    }

    /// Disable overflow analysis (intermediates may then wrap silently, just
    /// like in the shared engine).
    pub fn unchecked(cfg: FixCfg) -> Self {
        PlainFix {
            cfg,
            check_ranges: false,
        }
    }

    fn guard(&self, v: i128) -> Result<()> {
        if self.check_ranges && v.abs() >= 1i128 << (self.cfg.k() - 1) {
            return Err(Error::FixedPointRange {
                value: v as f64 / 2f64.powi(2 * self.cfg.f() as i32),
                k: self.cfg.k(),
                f: self.cfg.f(),
            });
        }
        Ok(())
    }

    fn signed(&self, v: RingVal) -> i128 {
        self.cfg.to_signed(v) as i128
    }
}

impl FixOps for PlainFix {
    type Value = Tensor<RingVal>;

    fn cfg(&self) -> FixCfg {
        self.cfg
    }

    fn input(&mut self, _owner: usize, values: &Tensor<f64>) -> Result<Tensor<RingVal>> {
        let mut out = Vec::with_capacity(values.len());
        for &v in values.data() {
            out.push(self.cfg.fx_encode(v)?);
        }
        Tensor::new(values.shape().to_vec(), out)
    }

    fn lincomb(
        &mut self,
        terms: &[(f64, &Tensor<RingVal>)],
        offset: Option<&Tensor<f64>>,
    ) -> Result<Tensor<RingVal>> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("lincomb of no terms".into()));
        }
        let cfg = self.cfg;
        let shape = terms[0].1.shape().to_vec();
        let count = terms[0].1.len();
        for (_, t) in terms {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{:?} vs {shape:?}",
                    t.shape()
                )));
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
            let mut out = vec![RingVal(0); count];
            let mut exact = vec![0i128; count];
            for (c, t) in terms {
                let ci = *c as i64;
                for i in 0..count {
                    out[i] = cfg.add(out[i], cfg.mul_const(t.data()[i], ci));
                    exact[i] += ci as i128 * self.signed(t.data()[i]);
                }
            }
            if let Some(o) = offset {
                for i in 0..count {
                    let enc = cfg.fx_encode(o.data()[i])?;
                    out[i] = cfg.add(out[i], enc);
                    exact[i] += self.signed(enc);
                }
            }
            for &v in &exact {
                self.guard(v)?;
            }
            return Tensor::new(shape, out);
        }
        let mut out = vec![RingVal(0); count];
        let mut exact = vec![0i128; count];
        for (c, t) in terms {
            let enc = cfg.fx_encode(*c)?;
            for i in 0..count {
                out[i] = cfg.add(out[i], cfg.mul(t.data()[i], enc));
                exact[i] += self.signed(enc) * self.signed(t.data()[i]);
            }
        }
        if let Some(o) = offset {
            for i in 0..count {
                let enc = encode_raw2(&cfg, o.data()[i])?;
                out[i] = cfg.add(out[i], enc);
                exact[i] += self.signed(enc);
            }
        }
        for &v in &exact {
            self.guard(v)?;
        }
        let raw = Tensor::new(shape, out)?;
        self.truncate(&raw, cfg.f())
    }

    fn mul(&mut self, x: &Tensor<RingVal>, y: &Tensor<RingVal>) -> Result<Tensor<RingVal>> {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let cfg = self.cfg;
        let mut out = Vec::with_capacity(x.len());
        for (&a, &b) in x.data().iter().zip(y.data()) {
            self.guard(self.signed(a) * self.signed(b))?;
            out.push(cfg.mul(a, b));
        }
        let raw = Tensor::new(x.shape().to_vec(), out)?;
        self.truncate(&raw, cfg.f())
    }

    fn square(&mut self, x: &Tensor<RingVal>) -> Result<Tensor<RingVal>> {
        let cfg = self.cfg;
        let mut out = Vec::with_capacity(x.len());
        for &a in x.data() {
            let s = self.signed(a);
            self.guard(s * s)?;
            out.push(cfg.mul(a, a));
        }
        let raw = Tensor::new(x.shape().to_vec(), out)?;
        self.truncate(&raw, cfg.f())
    }

    fn matvec_affine(
        &mut self,
        w: &Tensor<RingVal>,
        x: &Tensor<RingVal>,
        b: &Tensor<RingVal>,
    ) -> Result<Tensor<RingVal>> {
        let cfg = self.cfg;
        let (rows, cols) = match w.shape() {
            [r, c] => (*r, *c),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "matvec weight must be a matrix, got {other:?}"
                )))
            }
        };
        if x.shape() != [cols] || b.shape() != [rows] {
            return Err(Error::ShapeMismatch(format!(
                "matvec: w {rows}x{cols}, x {:?}, b {:?}",
                x.shape(),
                b.shape()
            )));
        }
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = RingVal(0);
            let mut exact = 0i128;
            for j in 0..cols {
                let wv = w.data()[r * cols + j];
                let xv = x.data()[j];
                exact += self.signed(wv) * self.signed(xv);
                acc = cfg.add(acc, cfg.mul(wv, xv));
            }
            let bias = cfg.mul_const(b.data()[r], 1i64 << cfg.f());
            exact += self.signed(b.data()[r]) << cfg.f();
            self.guard(exact)?;
            out.push(cfg.add(acc, bias));
        }
        let raw = Tensor::new(vec![rows], out)?;
        self.truncate(&raw, cfg.f())
    }

    fn mean_readout(
        &mut self,
        owner_sums: &[&Tensor<RingVal>],
        counts: &[usize],
    ) -> Result<Tensor<RingVal>> {
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
        let terms: Vec<(f64, &Tensor<RingVal>)> = owner_sums
            .iter()
            .map(|t| (1.0 / total as f64, *t))
            .collect();
        self.lincomb(&terms, None)
    }

    fn truncate(&mut self, x: &Tensor<RingVal>, t: u32) -> Result<Tensor<RingVal>> {
        Ok(x.map(|&v| self.cfg.shift_down(v, t)))
    }

    fn open(&mut self, x: &Tensor<RingVal>, _vis: Visibility) -> Result<Tensor<RingVal>> {
        Ok(x.clone())
    }

    fn gather(&mut self, x: &Tensor<RingVal>, idx: &[Option<usize>]) -> Result<Tensor<RingVal>> {
        let mut out = Vec::with_capacity(idx.len());
        for &ix in idx {
            match ix {
                Some(j) if j < x.len() => out.push(x.data()[j]),
                Some(j) => {
                    return Err(Error::ShapeMismatch(format!(
                        "gather index {j} out of range {}",
                        x.len()
                    )))
                }
                None => out.push(RingVal(0)),
            }
        }
        Tensor::new(vec![idx.len()], out)
    }

    fn concat(&mut self, parts: &[&Tensor<RingVal>]) -> Result<Tensor<RingVal>> {
        if parts.is_empty() {
            return Err(Error::InvalidParameter("concat of nothing".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(p.data());
        }
        Ok(Tensor::vector(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_analysis_catches_overflow() {
        let cfg = FixCfg::default();
        let mut p = PlainFix::new(cfg);
        // The raw square of x carries 2f fraction bits, so |x^2| must stay
        // under 2^(k - 2f - 1) = 2^31: the boundary is at |x| = 2^15.5.
        let big = p.input(0, &Tensor::vector(vec![2f64.powi(16)])).unwrap();
        assert!(matches!(
            p.square(&big),
            Err(Error::FixedPointRange { .. })
        ));
        let ok = p.input(0, &Tensor::vector(vec![2f64.powi(15)])).unwrap();
        assert!(p.square(&ok).is_ok());
        // The unchecked interpreter wraps instead.
        let mut u = PlainFix::unchecked(cfg);
        let big = u.input(0, &Tensor::vector(vec![2f64.powi(16)])).unwrap();
        assert!(u.square(&big).is_ok());
    }

    #[test]
    fn plain_matvec_is_fixed_point_not_float() {
        let cfg = FixCfg::default();
        let mut p = PlainFix::new(cfg);
        let w = p
            .input(0, &Tensor::new(vec![1, 2], vec![0.5, 0.25]).unwrap())
            .unwrap();
        let x = p.input(0, &Tensor::vector(vec![3.0, 5.0])).unwrap();
        let b = p.input(0, &Tensor::vector(vec![0.125])).unwrap();
        let out = p.matvec_affine(&w, &x, &b).unwrap();
        // 0.5*3 + 0.25*5 + 0.125 = 2.875, representable exactly at f=16.
        assert_eq!(cfg.fx_decode(out.data()[0]), 2.875);
    }
}
