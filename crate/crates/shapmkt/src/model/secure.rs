//! Secure evaluation of the utility model over any fixed-point backend.
//!
//! Everything here is generic over [`FixOps`], so the same code drives the
//! share-based engine and the plaintext fixed-point interpreter used as its
//! oracle. The buyer feeds the weights in as her inputs; samples arrive as
//! inputs of whoever owns them; convolutions become gather + matvec on
//! im2col patches; the final sigmoid is *not* evaluated here — callers apply
//! it in the clear to the opened pre-sigmoid score.

use super::{ConvSpec, FcLayer, Layer, UtilityModel};
use crate::engine::FixOps;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum FixLayer<V> {
    Fc { w: V, b: V },
    Conv { spec: ConvSpec, w: V, b: V },
    Square,
}

/// The utility model with weights encoded into a fixed-point backend.
#[derive(Debug, Clone)]
pub struct FixModel<V> {
    pub extractor: Vec<FixLayer<V>>,
    pub trans: (V, V),
    pub network: Vec<(V, V)>,
    pub label_aware: bool,
    pub classes: usize,
}

fn input_fc<F: FixOps>(ops: &mut F, owner: usize, fc: &FcLayer) -> Result<(F::Value, F::Value)> {
    let w = ops.input(owner, &fc.w)?;
    let b = ops.input(owner, &Tensor::vector(fc.b.clone()))?;
    Ok((w, b))
}

/// Encode all weights as inputs of `owner` (the buyer).
pub fn load_model<F: FixOps>(
    ops: &mut F,
    m: &UtilityModel,
    owner: usize,
) -> Result<FixModel<F::Value>> {
    m.validate()?;
    let mut extractor = Vec::with_capacity(m.extractor.len());
    for layer in &m.extractor {
        extractor.push(match layer {
            Layer::Fc(fc) => {
                let (w, b) = input_fc(ops, owner, fc)?;
                FixLayer::Fc { w, b }
            }
            Layer::Conv(cv) => {
                let w = ops.input(owner, &cv.w)?;
                let b = ops.input(owner, &Tensor::vector(cv.b.clone()))?;
                FixLayer::Conv { spec: cv.spec, w, b }
            }
            Layer::Square => FixLayer::Square,
        });
    }
    Ok(FixModel {
        extractor,
        trans: input_fc(ops, owner, &m.trans)?,
        network: m.network.iter().map(|fc| input_fc(ops, owner, fc)).collect::<Result<_>>()?,
        label_aware: m.label_aware,
        classes: m.classes,
    })
}

/// Per-sample representation φ from a flat (encoded) feature vector; the
/// one-hot label value is required when the model is label-aware.
pub fn secure_repr<F: FixOps>(
    ops: &mut F,
    fm: &FixModel<F::Value>,
    x: &F::Value,
    one_hot: Option<&F::Value>,
) -> Result<F::Value> {
    let mut h = x.clone();
    for layer in &fm.extractor {
        h = match layer {
            FixLayer::Fc { w, b } => ops.matvec_affine(w, &h, b)?,
            FixLayer::Square => ops.square(&h)?,
            FixLayer::Conv { spec, w, b } => {
                // One matvec per output position on the gathered patch, then
                // a permutation from position-major to channel-major.
                let positions = spec.positions();
                let mut per_pos = Vec::with_capacity(positions);
                for p in 0..positions {
                    let col = ops.gather(&h, &spec.patch_indices(p))?;
                    per_pos.push(ops.matvec_affine(w, &col, b)?);
                }
                let refs: Vec<&F::Value> = per_pos.iter().collect();
                let cat = ops.concat(&refs)?;
                let mut perm = Vec::with_capacity(spec.out_len());
                for ch in 0..spec.out_ch {
                    for p in 0..positions {
                        perm.push(Some(p * spec.out_ch + ch));
                    }
                }
                ops.gather(&cat, &perm)?
            }
        };
    }
    if fm.label_aware {
        let oh = one_hot.ok_or_else(|| {
            Error::InvalidParameter("label-aware model given an unlabeled sample".into())
        })?;
        h = ops.concat(&[&h, oh])?;
    }
    ops.matvec_affine(&fm.trans.0, &h, &fm.trans.1)
}

/// Network stack on a mean representation; returns the (still hidden)
/// pre-sigmoid score.
pub fn secure_network<F: FixOps>(
    ops: &mut F,
    fm: &FixModel<F::Value>,
    mean: &F::Value,
) -> Result<F::Value> {
    let mut h = mean.clone();
    for (w, b) in &fm.network {
        h = ops.matvec_affine(w, &h, b)?;
    }
    Ok(h)
}

/// Mean readout over per-owner φ sums followed by the network stack.
pub fn secure_mean_score<F: FixOps>(
    ops: &mut F,
    fm: &FixModel<F::Value>,
    owner_sums: &[&F::Value],
    counts: &[usize],
) -> Result<F::Value> {
    let mean = ops.mean_readout(owner_sums, counts)?;
    secure_network(ops, fm, &mean)
}

/// Score one coalition whose encoded samples are already in the backend:
/// φ per sample, an exact local sum, mean readout, network. Returns the
/// pre-sigmoid score, not yet opened.
pub fn secure_score<F: FixOps>(
    ops: &mut F,
    fm: &FixModel<F::Value>,
    samples: &[(F::Value, Option<F::Value>)],
) -> Result<F::Value> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("secure score of an empty coalition".into()));
    }
    let mut phis = Vec::with_capacity(samples.len());
    for (x, oh) in samples {
        phis.push(secure_repr(ops, fm, x, oh.as_ref())?);
    }
    let terms: Vec<(f64, &F::Value)> = phis.iter().map(|p| (1.0, p)).collect();
    let sum = ops.lincomb(&terms, None)?;
    secure_mean_score(ops, fm, &[&sum], &[samples.len()])
}
