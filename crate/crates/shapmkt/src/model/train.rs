//! Plaintext training of the utility model.
//!
//! Each epoch alternates two phases: with the extractor frozen, several SGD
//! steps update the trans and network layers; then with those frozen, one
//! step updates the extractor. Gradients are derived analytically through
//! the mean readout and the square activations; stability with squares comes
//! from gradient clipping and weight decay rather than from any change to
//! the architecture.
//!
//! Models whose extractor starts with a dense layer train against inputs
//! divided by the training data's per-feature spread, and that scaling is
//! folded into the layer's weights afterwards: step sizes stop depending on
//! the data's raw magnitude, while the returned model still consumes raw
//! features. The features keep their natural offset — the square activation
//! draws its linear terms from a nonzero operating point, and centering
//! would erase those at initialization. Convolutions share weights across
//! positions, so they train on raw inputs instead.

use rand::Rng;

use super::{FcLayer, Layer, SetExample, SetSample, UtilityModel};
use crate::error::{Error, Result};
use crate::ring::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// SGD steps on trans+network per epoch (the extractor gets one).
    pub inner_steps: usize,
    pub lr_head: f64,
    pub lr_extractor: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global L2 gradient clip per phase step.
    pub clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            inner_steps: 5,
            lr_head: 0.05,
            lr_extractor: 0.01,
            batch_size: 16,
            momentum: 0.9,
            weight_decay: 1e-4,
            clip: 5.0,
            seed: 7,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("inner_steps", self.inner_steps as f64),
            ("lr_head", self.lr_head),
            ("lr_extractor", self.lr_extractor),
            ("batch_size", self.batch_size as f64),
            ("clip", self.clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter("bad momentum or weight decay".into()));
        }
        Ok(())
    }
}

/// Gradient (or velocity) buffer shaped like one dense/conv layer.
#[derive(Debug, Clone)]
pub(crate) struct FcGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl FcGrad {
    fn zeros_like(w_len: usize, b_len: usize) -> Self {
        FcGrad { w: vec![0.0; w_len], b: vec![0.0; b_len] }
    }

    fn sq_norm(&self) -> f64 {
        self.w.iter().chain(&self.b).map(|g| g * g).sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Grads {
    /// Aligned with the extractor layers; `None` for activations.
    pub extractor: Vec<Option<FcGrad>>,
    pub trans: FcGrad,
    pub network: Vec<FcGrad>,
    pub loss: f64,
}

fn grad_slots(m: &UtilityModel) -> Grads {
    Grads {
        extractor: m
            .extractor
            .iter()
            .map(|l| match l {
                Layer::Fc(fc) => Some(FcGrad::zeros_like(fc.w.len(), fc.b.len())),
                Layer::Conv(cv) => Some(FcGrad::zeros_like(cv.w.len(), cv.b.len())),
                Layer::Square => None,
            })
            .collect(),
        trans: FcGrad::zeros_like(m.trans.w.len(), m.trans.b.len()),
        network: m.network.iter().map(|fc| FcGrad::zeros_like(fc.w.len(), fc.b.len())).collect(),
        loss: 0.0,
    }
}

/// Visit every trainable parameter in a fixed order.
fn visit_params(m: &mut UtilityModel, mut f: impl FnMut(&mut f64)) {
    for layer in &mut m.extractor {
        match layer {
            Layer::Fc(fc) => {
                fc.w.data_mut().iter_mut().for_each(&mut f);
                fc.b.iter_mut().for_each(&mut f);
            }
            Layer::Conv(cv) => {
                cv.w.data_mut().iter_mut().for_each(&mut f);
                cv.b.iter_mut().for_each(&mut f);
            }
            Layer::Square => {}
        }
    }
    m.trans.w.data_mut().iter_mut().for_each(&mut f);
    m.trans.b.iter_mut().for_each(&mut f);
    for fc in &mut m.network {
        fc.w.data_mut().iter_mut().for_each(&mut f);
        fc.b.iter_mut().for_each(&mut f);
    }
}

/// The analytic gradients flattened in [`visit_params`] order.
fn flat_grads(g: &Grads) -> Vec<f64> {
    let mut out = Vec::new();
    for slot in g.extractor.iter().flatten() {
        out.extend_from_slice(&slot.w);
        out.extend_from_slice(&slot.b);
    }
    out.extend_from_slice(&g.trans.w);
    out.extend_from_slice(&g.trans.b);
    for fc in &g.network {
        out.extend_from_slice(&fc.w);
        out.extend_from_slice(&fc.b);
    }
    out
}

/// Compare every analytic gradient against a central finite difference of
/// the batch loss at step `h`; returns the worst relative error. A
/// diagnostic for validating the backward pass after model changes.
pub fn gradient_check(m: &UtilityModel, data: &[SetExample], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let batch: Vec<&SetExample> = data.iter().collect();
    let analytic = flat_grads(&batch_grads(m, &batch)?);
    let mut worst: f64 = 0.0;
    for (idx, &g) in analytic.iter().enumerate() {
        let mut probe = m.clone();
        let mut nudge = |delta: f64| -> Result<f64> {
            let mut i = 0;
            visit_params(&mut probe, |p| {
                if i == idx {
                    *p += delta;
                }
                i += 1;
            });
            Ok(batch_grads(&probe, &batch)?.loss)
        };
        let up = nudge(h)?;
        let down = nudge(-2.0 * h)?; // from +h back to -h
        let numeric = (up - down) / (2.0 * h);
        let rel = (g - numeric).abs() / f64::max(1e-6, g.abs().max(numeric.abs()));
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Activations recorded on the way up through the extractor for one sample.
struct SampleTrace {
    /// `acts[0]` is the input; `acts[i+1]` the output of extractor layer i.
    acts: Vec<Vec<f64>>,
    /// im2col columns per conv layer (empty for others).
    cols: Vec<Vec<Vec<f64>>>,
    /// Trans input (extractor output plus optional one-hot).
    trans_in: Vec<f64>,
}

fn trace_sample(m: &UtilityModel, sample: &super::SetSample) -> Result<SampleTrace> {
    let mut acts = vec![sample.features.clone()];
    let mut cols = Vec::with_capacity(m.extractor.len());
    for layer in &m.extractor {
        let h = acts.last().expect("seeded with the input");
        let (next, col) = match layer {
            Layer::Fc(fc) => (fc.forward(h)?, Vec::new()),
            Layer::Conv(cv) => {
                let (out, c) = cv.forward(h)?;
                (out, c)
            }
            Layer::Square => (h.iter().map(|v| v * v).collect(), Vec::new()),
        };
        acts.push(next);
        cols.push(col);
    }
    let mut trans_in = acts.last().expect("non-empty").clone();
    if m.label_aware {
        let label = sample.label.ok_or_else(|| {
            Error::InvalidParameter("label-aware model given an unlabeled sample".into())
        })?;
        trans_in.extend(m.one_hot(label)?);
    }
    Ok(SampleTrace { acts, cols, trans_in })
}

fn fc_backward(fc: &FcLayer, input: &[f64], delta: &[f64], grad: &mut FcGrad) -> Vec<f64> {
    let (out, inp) = (fc.out_dim(), fc.in_dim());
    let w = fc.w.data();
    let mut dx = vec![0.0; inp];
    for r in 0..out {
        let d = delta[r];
        grad.b[r] += d;
        let row = &w[r * inp..(r + 1) * inp];
        let grow = &mut grad.w[r * inp..(r + 1) * inp];
        for c in 0..inp {
            grow[c] += d * input[c];
            dx[c] += row[c] * d;
        }
    }
    dx
}

/// Mean squared-error loss and its analytic gradients over a batch. Clipping
/// and weight decay are applied by the optimizer, not here, so the result is
/// exactly the loss gradient (which the finite-difference check relies on).
pub(crate) fn batch_grads(m: &UtilityModel, batch: &[&SetExample]) -> Result<Grads> {
    let mut g = grad_slots(m);
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        if ex.samples.is_empty() {
            return Err(Error::InvalidParameter("training coalition is empty".into()));
        }
        let traces: Vec<SampleTrace> =
            ex.samples.iter().map(|s| trace_sample(m, s)).collect::<Result<_>>()?;
        let count = ex.samples.len() as f64;

        // Forward through trans (per sample), mean, network.
        let phis: Vec<Vec<f64>> =
            traces.iter().map(|t| m.trans.forward(&t.trans_in)).collect::<Result<_>>()?;
        let mut mean = vec![0.0; m.trans.out_dim()];
        for phi in &phis {
            for (a, v) in mean.iter_mut().zip(phi) {
                *a += v / count;
            }
        }
        let mut net_acts = vec![mean.clone()];
        for fc in &m.network {
            let next = fc.forward(net_acts.last().expect("seeded"))?;
            net_acts.push(next);
        }
        let pre = net_acts.last().expect("non-empty")[0];
        let y = super::sigmoid(pre);
        g.loss += scale * (y - ex.utility) * (y - ex.utility);

        // Backward: through the sigmoid and the linear network stack.
        let dpre = scale * 2.0 * (y - ex.utility) * y * (1.0 - y);
        let mut delta = vec![dpre];
        for (i, fc) in m.network.iter().enumerate().rev() {
            delta = fc_backward(fc, &net_acts[i], &delta, &mut g.network[i]);
        }

        // delta is now dL/d(mean); each sample's φ contributes 1/count.
        for (trace, _phi) in traces.iter().zip(&phis) {
            let dphi: Vec<f64> = delta.iter().map(|d| d / count).collect();
            let mut dh = fc_backward(&m.trans, &trace.trans_in, &dphi, &mut g.trans);
            dh.truncate(m.extractor_out_dim()?); // one-hot part gets no gradient

            for (i, layer) in m.extractor.iter().enumerate().rev() {
                match layer {
                    Layer::Fc(fc) => {
                        let slot = g.extractor[i].as_mut().expect("fc has a grad slot");
                        dh = fc_backward(fc, &trace.acts[i], &dh, slot);
                    }
                    Layer::Square => {
                        for (d, a) in dh.iter_mut().zip(&trace.acts[i]) {
                            *d *= 2.0 * a;
                        }
                    }
                    Layer::Conv(cv) => {
                        let slot = g.extractor[i].as_mut().expect("conv has a grad slot");
                        let s = &cv.spec;
                        let (positions, patch) = (s.positions(), s.patch_len());
                        let w = cv.w.data();
                        let mut dx = vec![0.0; s.in_ch * s.in_h * s.in_w];
                        for p in 0..positions {
                            let col = &trace.cols[i][p];
                            let idx = s.patch_indices(p);
                            for ch in 0..s.out_ch {
                                let d = dh[ch * positions + p];
                                slot.b[ch] += d;
                                let row = &w[ch * patch..(ch + 1) * patch];
                                let grow = &mut slot.w[ch * patch..(ch + 1) * patch];
                                for j in 0..patch {
                                    grow[j] += d * col[j];
                                    if let Some(x_j) = idx[j] {
                                        dx[x_j] += row[j] * d;
                                    }
                                }
                            }
                        }
                        dh = dx;
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Mean squared error of the model on a set of examples.
pub fn batch_loss(m: &UtilityModel, data: &[SetExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("loss over no examples".into()));
    }
    let mut loss = 0.0;
    for ex in data {
        let (_, u) = m.score_coalition(&ex.samples)?;
        loss += (u - ex.utility) * (u - ex.utility);
    }
    Ok(loss / data.len() as f64)
}

/// A blown-up parameter is divergence even while the sigmoid keeps the loss
/// itself finite.
fn params_finite(m: &UtilityModel) -> bool {
    let fc_ok = |fc: &FcLayer| fc.w.data().iter().chain(&fc.b).all(|v| v.is_finite());
    m.extractor.iter().all(|l| match l {
        Layer::Fc(fc) => fc_ok(fc),
        Layer::Conv(cv) => cv.w.data().iter().chain(&cv.b).all(|v| v.is_finite()),
        Layer::Square => true,
    }) && fc_ok(&m.trans)
        && m.network.iter().all(fc_ok)
}

struct Velocities {
    extractor: Vec<Option<FcGrad>>,
    trans: FcGrad,
    network: Vec<FcGrad>,
}

fn sgd_update(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, cfg: &TrainConfig, scale: f64) {
    for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = cfg.momentum * *vi + scale * gi + cfg.weight_decay * *wi;
        *wi -= lr * *vi;
    }
}

fn update_fc(fc: &mut FcLayer, g: &FcGrad, v: &mut FcGrad, lr: f64, cfg: &TrainConfig, scale: f64) {
    sgd_update(fc.w.data_mut(), &g.w, &mut v.w, lr, cfg, scale);
    sgd_update(&mut fc.b, &g.b, &mut v.b, lr, cfg, scale);
}

fn clip_scale(sq_norm: f64, clip: f64) -> f64 {
    let norm = sq_norm.sqrt();
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

/// Per-feature spread (root mean square about the mean) over every sample
/// in the dataset. Constant features get scale 1 so dividing by the spread
/// is a no-op rather than a division by zero. `None` if any sample
/// disagrees with `dim` (the shape error then surfaces from the forward
/// pass instead).
fn input_spread(data: &[SetExample], dim: usize) -> Option<Vec<f64>> {
    let mut mu = vec![0.0; dim];
    let mut count = 0.0;
    for s in data.iter().flat_map(|ex| &ex.samples) {
        if s.features.len() != dim {
            return None;
        }
        for (m, v) in mu.iter_mut().zip(&s.features) {
            *m += v;
        }
        count += 1.0;
    }
    mu.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; dim];
    for s in data.iter().flat_map(|ex| &ex.samples) {
        for ((a, v), m) in var.iter_mut().zip(&s.features).zip(&mu) {
            *a += (v - m) * (v - m) / count;
        }
    }
    Some(var.iter().map(|&v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect())
}

/// Rewrite `fc` in place so that the new `fc(x)` equals the trained
/// `fc(x/sd)`. Exact because the layer is linear in its input.
fn fold_input_scaling(fc: &mut FcLayer, sd: &[f64]) {
    let (out, inp) = (fc.out_dim(), fc.in_dim());
    let w = fc.w.data_mut();
    for r in 0..out {
        for c in 0..inp {
            w[r * inp + c] /= sd[c];
        }
    }
}

/// Train in place; returns the per-epoch full-dataset loss history.
pub fn train_utility(
    m: &mut UtilityModel,
    data: &[SetExample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    m.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("no training examples".into()));
    }
    for ex in data {
        if !(0.0..=1.0).contains(&ex.utility) {
            return Err(Error::InvalidParameter(format!(
                "training utility {} outside [0, 1]",
                ex.utility
            )));
        }
    }
    let spread = match m.extractor.first() {
        Some(Layer::Fc(fc)) => input_spread(data, fc.in_dim()),
        _ => None,
    };
    let scaled: Vec<SetExample>;
    let data: &[SetExample] = if let Some(sd) = &spread {
        scaled = data
            .iter()
            .map(|ex| SetExample {
                samples: ex
                    .samples
                    .iter()
                    .map(|s| {
                        let f = s.features.iter().zip(sd).map(|(v, d)| v / d).collect();
                        SetSample::new(f, s.label)
                    })
                    .collect(),
                utility: ex.utility,
            })
            .collect();
        &scaled
    } else {
        data
    };
    let mut rng = derive_rng(cfg.seed, "utility training");
    let mut vel = {
        let z = grad_slots(m);
        Velocities { extractor: z.extractor, trans: z.trans, network: z.network }
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Phase one: trans + network, extractor frozen.
        for _ in 0..cfg.inner_steps {
            let batch = sample_batch(data, cfg.batch_size, &mut rng);
            let g = batch_grads(m, &batch)?;
            let sq = g.trans.sq_norm() + g.network.iter().map(FcGrad::sq_norm).sum::<f64>();
            let scale = clip_scale(sq, cfg.clip);
            update_fc(&mut m.trans, &g.trans, &mut vel.trans, cfg.lr_head, cfg, scale);
            for (fc, (gg, vv)) in
                m.network.iter_mut().zip(g.network.iter().zip(vel.network.iter_mut()))
            {
                update_fc(fc, gg, vv, cfg.lr_head, cfg, scale);
            }
        }
        // Phase two: one step on the extractor.
        let batch = sample_batch(data, cfg.batch_size, &mut rng);
        let g = batch_grads(m, &batch)?;
        let sq: f64 = g.extractor.iter().flatten().map(FcGrad::sq_norm).sum();
        let scale = clip_scale(sq, cfg.clip);
        for (layer, (gg, vv)) in
            m.extractor.iter_mut().zip(g.extractor.iter().zip(vel.extractor.iter_mut()))
        {
            let (Some(gg), Some(vv)) = (gg, vv) else { continue };
            match layer {
                Layer::Fc(fc) => update_fc(fc, gg, vv, cfg.lr_extractor, cfg, scale),
                Layer::Conv(cv) => {
                    sgd_update(cv.w.data_mut(), &gg.w, &mut vv.w, cfg.lr_extractor, cfg, scale);
                    sgd_update(&mut cv.b, &gg.b, &mut vv.b, cfg.lr_extractor, cfg, scale);
                }
                Layer::Square => {}
            }
        }

        let loss = batch_loss(m, data)?;
        if !loss.is_finite() || !params_finite(m) {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
    }
    if let Some(sd) = &spread {
        if let Some(Layer::Fc(fc)) = m.extractor.first_mut() {
            fold_input_scaling(fc, sd);
        }
    }
    Ok(history)
}

fn sample_batch<'d>(
    data: &'d [SetExample],
    batch_size: usize,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> Vec<&'d SetExample> {
    (0..batch_size.min(data.len())).map(|_| &data[rng.gen_range(0..data.len())]).collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_model;
    use super::super::{build_preset, SetExample, SetSample};
    use super::*;
    use crate::ring::seeded_rng;

    fn toy_batch(seed: u64, n: usize, d: usize) -> Vec<SetExample> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| {
                let size = rng.gen_range(1..=4);
                let samples = (0..size)
                    .map(|_| SetSample::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(), None))
                    .collect();
                SetExample { samples, utility: rng.gen_range(0.05..0.95) }
            })
            .collect()
    }

    /// Every parameter's analytic gradient must match central finite
    /// differences to 1e-4 relative error.
    #[test]
    fn gradients_match_finite_differences() {
        let m = tiny_model();
        let data = toy_batch(21, 4, 3);
        let batch: Vec<&SetExample> = data.iter().collect();
        let analytic = batch_grads(&m, &batch).unwrap();

        let h = 1e-5;
        let mut checked = 0usize;
        let mut probe = |get: &dyn Fn(&UtilityModel) -> f64,
                         set: &dyn Fn(&mut UtilityModel, f64),
                         g: f64| {
            let base = get(&m);
            let mut mp = m.clone();
            set(&mut mp, base + h);
            let up = batch_grads(&mp, &batch).unwrap().loss;
            set(&mut mp, base - h);
            let dn = batch_grads(&mp, &batch).unwrap().loss;
            let numeric = (up - dn) / (2.0 * h);
            let rel = (g - numeric).abs() / f64::max(1e-6, g.abs().max(numeric.abs()));
            assert!(rel < 1e-4, "gradient mismatch: analytic {g}, numeric {numeric}");
            checked += 1;
        };

        // Extractor fc.
        let ex = analytic.extractor[0].as_ref().unwrap();
        for i in 0..6 {
            probe(
                &|m| match &m.extractor[0] {
                    super::super::Layer::Fc(fc) => fc.w.data()[i],
                    _ => unreachable!(),
                },
                &|m, v| {
                    if let super::super::Layer::Fc(fc) = &mut m.extractor[0] {
                        fc.w.data_mut()[i] = v;
                    }
                },
                ex.w[i],
            );
        }
        for i in 0..2 {
            probe(
                &|m| match &m.extractor[0] {
                    super::super::Layer::Fc(fc) => fc.b[i],
                    _ => unreachable!(),
                },
                &|m, v| {
                    if let super::super::Layer::Fc(fc) = &mut m.extractor[0] {
                        fc.b[i] = v;
                    }
                },
                ex.b[i],
            );
        }
        // Trans and network.
        for i in 0..4 {
            probe(&|m| m.trans.w.data()[i], &|m, v| m.trans.w.data_mut()[i] = v, analytic.trans.w[i]);
        }
        for i in 0..2 {
            probe(&|m| m.trans.b[i], &|m, v| m.trans.b[i] = v, analytic.trans.b[i]);
            probe(
                &|m| m.network[0].w.data()[i],
                &|m, v| m.network[0].w.data_mut()[i] = v,
                analytic.network[0].w[i],
            );
        }
        probe(&|m| m.network[0].b[0], &|m, v| m.network[0].b[0] = v, analytic.network[0].b[0]);
        assert_eq!(checked, 6 + 2 + 4 + 2 + 2 + 1);
    }

    /// Same check through a convolution (padding included) to cover the
    /// im2col backward path.
    #[test]
    fn conv_gradients_match_finite_differences() {
        use super::super::{ConvLayer, ConvSpec, FcLayer, Layer, UtilityModel};
        use crate::tensor::Tensor;
        let mut rng = seeded_rng(31);
        let spec = ConvSpec { in_ch: 1, in_h: 4, in_w: 4, out_ch: 2, kernel: 3, stride: 2, pad: 1 };
        assert_eq!(spec.out_h(), 2);
        let mut rnd = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect() };
        let m = UtilityModel {
            preset: "toy-conv".into(),
            input_shape: vec![1, 4, 4],
            classes: 2,
            label_aware: false,
            extractor: vec![
                Layer::Conv(ConvLayer {
                    spec,
                    w: Tensor::new(vec![2, 9], rnd(18)).unwrap(),
                    b: rnd(2),
                }),
                Layer::Square,
            ],
            trans: FcLayer { w: Tensor::new(vec![3, 8], rnd(24)).unwrap(), b: rnd(3) },
            network: vec![FcLayer { w: Tensor::new(vec![1, 3], rnd(3)).unwrap(), b: rnd(1) }],
            frac_bits: 16,
            empty_utility: 0.5,
        };
        m.validate().unwrap();
        let data = toy_batch(33, 3, 16);
        let batch: Vec<&SetExample> = data.iter().collect();
        let analytic = batch_grads(&m, &batch).unwrap();
        let conv_g = analytic.extractor[0].as_ref().unwrap();

        let h = 1e-5;
        for i in 0..18 {
            let mut mp = m.clone();
            let base = match &mp.extractor[0] {
                Layer::Conv(cv) => cv.w.data()[i],
                _ => unreachable!(),
            };
            let set = |mp: &mut UtilityModel, v: f64| {
                if let Layer::Conv(cv) = &mut mp.extractor[0] {
                    cv.w.data_mut()[i] = v;
                }
            };
            set(&mut mp, base + h);
            let up = batch_grads(&mp, &batch).unwrap().loss;
            set(&mut mp, base - h);
            let dn = batch_grads(&mp, &batch).unwrap().loss;
            let numeric = (up - dn) / (2.0 * h);
            let g = conv_g.w[i];
            let rel = (g - numeric).abs() / f64::max(1e-6, g.abs().max(numeric.abs()));
            assert!(rel < 1e-4, "conv w[{i}]: analytic {g}, numeric {numeric}");
        }
    }

    #[test]
    fn constant_targets_are_fit_to_high_precision() {
        let mut m = build_preset("mlp-synthetic", 5, 2, 17).unwrap();
        let mut data = toy_batch(18, 40, 5);
        for ex in &mut data {
            ex.utility = 0.37;
        }
        let cfg = TrainConfig { epochs: 120, ..TrainConfig::default() };
        let history = train_utility(&mut m, &data, &cfg).unwrap();
        let final_loss = *history.last().unwrap();
        assert!(final_loss < 1e-4, "constant fit stalled at {final_loss}");
    }

    #[test]
    fn training_rejects_bad_inputs_and_reports_divergence() {
        let mut m = build_preset("mlp-synthetic", 3, 2, 1).unwrap();
        assert!(train_utility(&mut m, &[], &TrainConfig::default()).is_err());
        let bad = vec![SetExample {
            samples: vec![SetSample::new(vec![0.0; 3], None)],
            utility: 1.5,
        }];
        assert!(train_utility(&mut m, &bad, &TrainConfig::default()).is_err());

        // An absurd learning rate on square activations blows up; the error
        // says when.
        let data = toy_batch(19, 20, 3);
        let cfg = TrainConfig { lr_head: 1e6, lr_extractor: 1e6, clip: 1e12, ..Default::default() };
        match train_utility(&mut m, &data, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    /// Utility planted as the clipped mean of feature 0 must be learnable.
    #[test]
    fn planted_function_is_learned() {
        let mut rng = seeded_rng(23);
        let mut gen = |n: usize| -> Vec<SetExample> {
            (0..n)
                .map(|_| {
                    let size = rng.gen_range(2..=10);
                    let samples: Vec<SetSample> = (0..size)
                        .map(|_| {
                            SetSample::new((0..6).map(|_| rng.gen_range(0.0..1.0)).collect(), None)
                        })
                        .collect();
                    let mean0 =
                        samples.iter().map(|s| s.features[0]).sum::<f64>() / size as f64;
                    SetExample { samples, utility: mean0.clamp(0.05, 0.95) }
                })
                .collect()
        };
        let train = gen(250);
        let test = gen(60);
        let mut m = build_preset("mlp-synthetic", 6, 2, 29).unwrap();
        let cfg = TrainConfig { epochs: 150, ..TrainConfig::default() };
        let history = train_utility(&mut m, &train, &cfg).unwrap();
        let mse = batch_loss(&m, &test).unwrap();
        assert!(
            mse < 1e-2,
            "planted-function test MSE {mse}; train loss path {:?}",
            &history[history.len().saturating_sub(5)..]
        );
        // The loss history trends down: the last epoch beats the first.
        assert!(history.last().unwrap() < history.first().unwrap());
    }
}
