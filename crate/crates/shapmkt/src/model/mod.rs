//! The learned data-utility model: a permutation-invariant set function that
//! maps a coalition of samples to a utility score in [0, 1].
//!
//! The architecture has three stages. A per-sample feature extractor (dense
//! or convolutional layers with square activations) produces an embedding; a
//! single "trans" layer turns each embedding into a representation φ; the
//! representations are averaged over the coalition and a small stack of
//! linear "network" layers maps the mean to a scalar, squashed by a sigmoid.
//! Averaging is what makes the score independent of sample order and of how
//! samples are split among owners — and it is why the secure evaluation can
//! run everything up to φ pairwise between the buyer and one owner, and only
//! the cheap tail jointly.
//!
//! Square activations (instead of ReLU) and the detached final sigmoid keep
//! the whole secure path inside the fixed-point arithmetic the share engine
//! supports. Convolutions are expressed as matrix–vector products on
//! image-to-column patches so the secure path reuses one primitive.

mod io;
mod secure;
mod train;

pub use io::{model_from_text, model_to_text, read_model, save_model};
pub use secure::{
    load_model, secure_mean_score, secure_network, secure_repr, secure_score, FixLayer, FixModel,
};
pub use train::{batch_loss, gradient_check, train_utility, TrainConfig};

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::derive_rng;
use crate::tensor::Tensor;

/// A dense layer `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub w: Tensor<f64>,
    pub b: Vec<f64>,
}

impl FcLayer {
    pub fn out_dim(&self) -> usize {
        self.b.len()
    }

    pub fn in_dim(&self) -> usize {
        self.w.len() / self.b.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.w.matvec(x)?;
        for (yi, bi) in y.iter_mut().zip(&self.b) {
            *yi += bi;
        }
        Ok(y)
    }
}

/// Geometry of a convolution evaluated as im2col patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Number of output spatial positions.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Patch length: entries of one im2col column.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_ch * self.positions()
    }

    /// Flat input indices of the patch at output position `p` (row-major
    /// over output positions); `None` marks zero padding.
    pub fn patch_indices(&self, p: usize) -> Vec<Option<usize>> {
        let (oy, ox) = (p / self.out_w(), p % self.out_w());
        let mut idx = Vec::with_capacity(self.patch_len());
        for c in 0..self.in_ch {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                    let inside =
                        iy >= 0 && iy < self.in_h as isize && ix >= 0 && ix < self.in_w as isize;
                    idx.push(inside.then(|| c * self.in_h * self.in_w + iy as usize * self.in_w + ix as usize));
                }
            }
        }
        idx
    }
}

/// A convolution layer; weights are `out_ch × patch_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub w: Tensor<f64>,
    pub b: Vec<f64>,
}

impl ConvLayer {
    /// Forward pass returning the channel-major output and the im2col
    /// columns (one per position), which the backward pass reuses.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let s = &self.spec;
        if x.len() != s.in_ch * s.in_h * s.in_w {
            return Err(Error::ShapeMismatch(format!(
                "conv input: expected {} values, got {}",
                s.in_ch * s.in_h * s.in_w,
                x.len()
            )));
        }
        let positions = s.positions();
        let mut cols = Vec::with_capacity(positions);
        let mut out = vec![0.0; s.out_ch * positions];
        for p in 0..positions {
            let col: Vec<f64> = s
                .patch_indices(p)
                .iter()
                .map(|i| i.map_or(0.0, |j| x[j]))
                .collect();
            let y = self.w.matvec(&col)?;
            for ch in 0..s.out_ch {
                out[ch * positions + p] = y[ch] + self.b[ch];
            }
            cols.push(col);
        }
        Ok((out, cols))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Fc(FcLayer),
    Conv(ConvLayer),
    Square,
}

/// One sample of a coalition: flat features plus an optional class label
/// (required when the model is label-aware).
#[derive(Debug, Clone, PartialEq)]
pub struct SetSample {
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

impl SetSample {
    pub fn new(features: Vec<f64>, label: Option<usize>) -> Self {
        SetSample { features, label }
    }
}

/// A training example for the utility model: a coalition and its measured
/// utility in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SetExample {
    pub samples: Vec<SetSample>,
    pub utility: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityModel {
    pub preset: String,
    /// `[d]` for flat features or `[channels, height, width]` for images.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    /// Concatenate a one-hot label to the extractor output before trans.
    pub label_aware: bool,
    pub extractor: Vec<Layer>,
    pub trans: FcLayer,
    pub network: Vec<FcLayer>,
    /// Fraction bits the secure evaluation should use for this model.
    pub frac_bits: u32,
    /// Utility assigned to the empty coalition (no samples to score).
    pub empty_utility: f64,
}

fn init_fc(out: usize, inp: usize, rng: &mut rand_chacha::ChaCha20Rng) -> FcLayer {
    let a = (1.0 / inp as f64).sqrt();
    let w = Tensor::new(vec![out, inp], (0..out * inp).map(|_| rng.gen_range(-a..a)).collect())
        .expect("shape matches data");
    FcLayer { w, b: vec![0.0; out] }
}

fn init_conv(spec: ConvSpec, rng: &mut rand_chacha::ChaCha20Rng) -> ConvLayer {
    let a = (1.0 / spec.patch_len() as f64).sqrt();
    let w = Tensor::new(
        vec![spec.out_ch, spec.patch_len()],
        (0..spec.out_ch * spec.patch_len()).map(|_| rng.gen_range(-a..a)).collect(),
    )
    .expect("shape matches data");
    ConvLayer { spec, w, b: vec![0.0; spec.out_ch] }
}

/// Build one of the stock architectures with seeded random weights.
///
/// * `mnist-like`: 28×28 grayscale; conv 1→16 (4×4, stride 2, pad 1) +
///   square, trans 3136→512, network 512→256→1.
/// * `cifar-like`: 32×32 RGB; conv 3→16 and 16→32 (5×5, stride 2, pad 2),
///   each squared, trans 2048→512, network 512→256→1.
/// * `mlp-synthetic`: flat features; dense d→32 + square, trans 32→32,
///   network 32→16→1.
///
/// `feature_dim` is only read by `mlp-synthetic`.
pub fn build_preset(
    name: &str,
    feature_dim: usize,
    classes: usize,
    seed: u64,
) -> Result<UtilityModel> {
    if classes == 0 {
        return Err(Error::InvalidParameter("class count must be positive".into()));
    }
    let mut rng = derive_rng(seed, "model init");
    let m = match name {
        "mnist-like" => {
            let spec = ConvSpec { in_ch: 1, in_h: 28, in_w: 28, out_ch: 16, kernel: 4, stride: 2, pad: 1 };
            UtilityModel {
                preset: name.into(),
                input_shape: vec![1, 28, 28],
                classes,
                label_aware: false,
                extractor: vec![Layer::Conv(init_conv(spec, &mut rng)), Layer::Square],
                trans: init_fc(512, 3136, &mut rng),
                network: vec![init_fc(256, 512, &mut rng), init_fc(1, 256, &mut rng)],
                frac_bits: 16,
                empty_utility: 1.0 / classes as f64,
            }
        }
        "cifar-like" => {
            let s1 = ConvSpec { in_ch: 3, in_h: 32, in_w: 32, out_ch: 16, kernel: 5, stride: 2, pad: 2 };
            let s2 = ConvSpec { in_ch: 16, in_h: 16, in_w: 16, out_ch: 32, kernel: 5, stride: 2, pad: 2 };
            UtilityModel {
                preset: name.into(),
                input_shape: vec![3, 32, 32],
                classes,
                label_aware: false,
                extractor: vec![
                    Layer::Conv(init_conv(s1, &mut rng)),
                    Layer::Square,
                    Layer::Conv(init_conv(s2, &mut rng)),
                    Layer::Square,
                ],
                trans: init_fc(512, 2048, &mut rng),
                network: vec![init_fc(256, 512, &mut rng), init_fc(1, 256, &mut rng)],
                frac_bits: 16,
                empty_utility: 1.0 / classes as f64,
            }
        }
        "mlp-synthetic" => {
            if feature_dim == 0 {
                return Err(Error::InvalidParameter(
                    "mlp-synthetic needs a positive feature dimension".into(),
                ));
            }
            UtilityModel {
                preset: name.into(),
                input_shape: vec![feature_dim],
                classes,
                label_aware: false,
                extractor: vec![Layer::Fc(init_fc(32, feature_dim, &mut rng)), Layer::Square],
                trans: init_fc(32, 32, &mut rng),
                network: vec![init_fc(16, 32, &mut rng), init_fc(1, 16, &mut rng)],
                frac_bits: 16,
                empty_utility: 1.0 / classes as f64,
            }
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown preset {other:?} (expected mnist-like, cifar-like or mlp-synthetic)"
            )))
        }
    };
    m.validate()?;
    Ok(m)
}

impl UtilityModel {
    /// Flat length of the extractor output (before any one-hot concat).
    pub fn extractor_out_dim(&self) -> Result<usize> {
        enum S {
            Flat(usize),
            Image(usize, usize, usize),
        }
        let mut s = match self.input_shape.as_slice() {
            [d] => S::Flat(*d),
            [c, h, w] => S::Image(*c, *h, *w),
            other => {
                return Err(Error::ModelFormat(format!("unsupported input shape {other:?}")))
            }
        };
        for (i, layer) in self.extractor.iter().enumerate() {
            s = match (layer, s) {
                (Layer::Fc(fc), S::Flat(d)) if fc.in_dim() == d => S::Flat(fc.out_dim()),
                (Layer::Fc(fc), S::Image(c, h, w)) if fc.in_dim() == c * h * w => {
                    S::Flat(fc.out_dim())
                }
                (Layer::Conv(cv), S::Image(c, h, w))
                    if (cv.spec.in_ch, cv.spec.in_h, cv.spec.in_w) == (c, h, w) =>
                {
                    S::Image(cv.spec.out_ch, cv.spec.out_h(), cv.spec.out_w())
                }
                (Layer::Square, keep) => keep,
                _ => {
                    return Err(Error::ModelFormat(format!(
                        "extractor layer {i} does not accept the preceding output shape"
                    )))
                }
            };
        }
        Ok(match s {
            S::Flat(d) => d,
            S::Image(c, h, w) => c * h * w,
        })
    }

    /// Input width of the trans layer (extractor output plus one-hot).
    pub fn trans_in_dim(&self) -> Result<usize> {
        Ok(self.extractor_out_dim()? + if self.label_aware { self.classes } else { 0 })
    }

    /// Check every dimension chain; errors name the offending layer.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.empty_utility) {
            return Err(Error::ModelFormat("empty-set utility outside [0, 1]".into()));
        }
        let want = self.trans_in_dim()?;
        if self.trans.in_dim() != want {
            return Err(Error::ModelFormat(format!(
                "trans layer expects {} inputs but the extractor provides {want}",
                self.trans.in_dim()
            )));
        }
        let mut d = self.trans.out_dim();
        for (i, fc) in self.network.iter().enumerate() {
            if fc.in_dim() != d {
                return Err(Error::ModelFormat(format!(
                    "network layer {i} expects {} inputs but receives {d}",
                    fc.in_dim()
                )));
            }
            d = fc.out_dim();
        }
        if d != 1 {
            return Err(Error::ModelFormat(format!(
                "last network layer must produce a scalar, produces {d}"
            )));
        }
        Ok(())
    }

    /// Replace the trans layer with one that also consumes a one-hot label.
    pub fn enable_label_awareness(&mut self, seed: u64) -> Result<()> {
        if self.label_aware {
            return Ok(());
        }
        self.label_aware = true;
        let mut rng = derive_rng(seed, "label-aware trans");
        self.trans = init_fc(self.trans.out_dim(), self.trans_in_dim()?, &mut rng);
        self.validate()
    }

    pub fn one_hot(&self, label: usize) -> Result<Vec<f64>> {
        if label >= self.classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        let mut v = vec![0.0; self.classes];
        v[label] = 1.0;
        Ok(v)
    }

    /// The trans input for one sample: extractor output, with the one-hot
    /// label appended in label-aware mode.
    pub(crate) fn trans_input(&self, sample: &SetSample) -> Result<Vec<f64>> {
        let mut h = sample.features.clone();
        for layer in &self.extractor {
            h = match layer {
                Layer::Fc(fc) => fc.forward(&h)?,
                Layer::Conv(cv) => cv.forward(&h)?.0,
                Layer::Square => h.iter().map(|v| v * v).collect(),
            };
        }
        if self.label_aware {
            let label = sample.label.ok_or_else(|| {
                Error::InvalidParameter("label-aware model given an unlabeled sample".into())
            })?;
            h.extend(self.one_hot(label)?);
        }
        Ok(h)
    }

    /// Per-sample representation φ.
    pub fn forward_repr(&self, sample: &SetSample) -> Result<Vec<f64>> {
        self.trans.forward(&self.trans_input(sample)?)
    }

    /// Mean representation over a coalition.
    pub fn mean_repr(&self, samples: &[SetSample]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("mean over an empty coalition".into()));
        }
        let mut acc = vec![0.0; self.trans.out_dim()];
        for s in samples {
            for (a, v) in acc.iter_mut().zip(self.forward_repr(s)?) {
                *a += v;
            }
        }
        let inv = 1.0 / samples.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }

    /// Apply the network stack to a mean representation; returns the
    /// pre-sigmoid score.
    pub fn network_forward(&self, mean: &[f64]) -> Result<f64> {
        let mut h = mean.to_vec();
        for fc in &self.network {
            h = fc.forward(&h)?;
        }
        Ok(h[0])
    }

    /// Score a coalition: `(pre_sigmoid, utility)`. The empty coalition gets
    /// the configured constant.
    pub fn score_coalition(&self, samples: &[SetSample]) -> Result<(f64, f64)> {
        if samples.is_empty() {
            return Ok((logit(self.empty_utility), self.empty_utility));
        }
        let pre = self.network_forward(&self.mean_repr(samples)?)?;
        Ok((pre, sigmoid(pre)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::seeded_rng;
    use approx::assert_abs_diff_eq;

    pub(super) fn tiny_model() -> UtilityModel {
        // extractor fc 3→2 + square, trans 2→2, network 2→1: small enough to
        // trace by hand and to finite-difference everywhere.
        let ex = FcLayer {
            w: Tensor::new(vec![2, 3], vec![0.5, -0.25, 0.125, 0.0, 1.0, -0.5]).unwrap(),
            b: vec![0.1, -0.2],
        };
        let trans = FcLayer {
            w: Tensor::new(vec![2, 2], vec![1.0, 0.5, -0.5, 0.25]).unwrap(),
            b: vec![0.0, 0.3],
        };
        let net = FcLayer {
            w: Tensor::new(vec![1, 2], vec![0.75, -1.25]).unwrap(),
            b: vec![0.05],
        };
        let m = UtilityModel {
            preset: "toy".into(),
            input_shape: vec![3],
            classes: 2,
            label_aware: false,
            extractor: vec![Layer::Fc(ex), Layer::Square],
            trans,
            network: vec![net],
            frac_bits: 16,
            empty_utility: 0.5,
        };
        m.validate().unwrap();
        m
    }

    #[test]
    fn preset_dimension_chains() {
        let mnist = build_preset("mnist-like", 0, 10, 1).unwrap();
        assert_eq!(mnist.extractor_out_dim().unwrap(), 3136);
        assert_eq!(mnist.trans.in_dim(), 3136);
        assert_eq!(mnist.trans.out_dim(), 512);
        assert_eq!(mnist.network[0].in_dim(), 512);
        assert_eq!(mnist.network[1].out_dim(), 1);

        // Two stride-2 5×5 convolutions on 32×32×3 leave 32 channels of 8×8.
        let cifar = build_preset("cifar-like", 0, 10, 1).unwrap();
        assert_eq!(cifar.extractor_out_dim().unwrap(), 32 * 8 * 8);
        assert_eq!(cifar.trans.in_dim(), 2048);

        let mlp = build_preset("mlp-synthetic", 10, 2, 1).unwrap();
        assert_eq!(mlp.extractor_out_dim().unwrap(), 32);
        let (_, u) = mlp
            .score_coalition(&[SetSample::new(vec![0.1; 10], Some(0))])
            .unwrap();
        assert!((0.0..=1.0).contains(&u));

        assert!(build_preset("resnet", 0, 10, 1).is_err());
    }

    #[test]
    fn zero_weights_give_zero_representation() {
        let mut m = build_preset("mlp-synthetic", 4, 2, 3).unwrap();
        for layer in &mut m.extractor {
            if let Layer::Fc(fc) = layer {
                fc.w.data_mut().fill(0.0);
                fc.b.fill(0.0);
            }
        }
        m.trans.w.data_mut().fill(0.0);
        m.trans.b.fill(0.0);
        let phi = m.forward_repr(&SetSample::new(vec![1.0, -2.0, 3.0, 0.5], None)).unwrap();
        assert!(phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_trace_matches() {
        let m = tiny_model();
        let x = SetSample::new(vec![1.0, 2.0, -1.0], None);
        // extractor: W x + b = (0.5 - 0.5 - 0.125 + 0.1, 0 + 2 + 0.5 - 0.2)
        //   = (-0.025, 2.3); squared = (0.000625, 5.29)
        // trans: (1.0*0.000625 + 0.5*5.29, -0.5*0.000625 + 0.25*5.29 + 0.3)
        //   = (2.645625, 1.6221875)
        let phi = m.forward_repr(&x).unwrap();
        assert_abs_diff_eq!(phi[0], 2.645625, epsilon = 1e-12);
        assert_abs_diff_eq!(phi[1], 1.6221875, epsilon = 1e-12);
        // network: 0.75*2.645625 - 1.25*1.6221875 + 0.05 = 0.0064843750
        let (pre, u) = m.score_coalition(std::slice::from_ref(&x)).unwrap();
        assert_abs_diff_eq!(pre, 0.006484375, epsilon = 1e-12);
        assert_abs_diff_eq!(u, sigmoid(0.006484375), epsilon = 1e-15);
    }

    #[test]
    fn permuting_features_with_permuted_weights_fixes_phi() {
        let m = build_preset("mlp-synthetic", 6, 2, 9).unwrap();
        let x: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
        let phi = m.forward_repr(&SetSample::new(x.clone(), None)).unwrap();

        // Rotate features left by two and rotate the first layer's weight
        // columns the same way.
        let perm: Vec<usize> = (0..6).map(|i| (i + 2) % 6).collect();
        let mut m2 = m.clone();
        if let Layer::Fc(fc) = &mut m2.extractor[0] {
            let old = fc.w.clone();
            let (rows, cols) = (fc.out_dim(), fc.in_dim());
            for r in 0..rows {
                for (c, &pc) in perm.iter().enumerate() {
                    fc.w.data_mut()[r * cols + c] = old.data()[r * cols + pc];
                }
            }
        }
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let phi2 = m2.forward_repr(&SetSample::new(xp, None)).unwrap();
        for (a, b) in phi.iter().zip(&phi2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn score_is_permutation_and_duplication_invariant() {
        let m = build_preset("mlp-synthetic", 5, 2, 11).unwrap();
        let mut rng = seeded_rng(13);
        let samples: Vec<SetSample> = (0..7)
            .map(|_| SetSample::new((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(), Some(0)))
            .collect();
        let (pre, _) = m.score_coalition(&samples).unwrap();

        let mut reversed = samples.clone();
        reversed.reverse();
        let (pre_rev, _) = m.score_coalition(&reversed).unwrap();
        assert_abs_diff_eq!(pre, pre_rev, epsilon = 1e-9);

        let doubled: Vec<SetSample> = samples.iter().chain(&samples).cloned().collect();
        let (pre_dup, _) = m.score_coalition(&doubled).unwrap();
        assert_abs_diff_eq!(pre, pre_dup, epsilon = 1e-9);
    }

    #[test]
    fn empty_coalition_scores_the_configured_constant() {
        let m = build_preset("mlp-synthetic", 4, 4, 5).unwrap();
        let (pre, u) = m.score_coalition(&[]).unwrap();
        assert_abs_diff_eq!(u, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(sigmoid(pre), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn label_awareness_widens_trans_and_requires_labels() {
        let mut m = build_preset("mlp-synthetic", 4, 3, 5).unwrap();
        m.enable_label_awareness(6).unwrap();
        assert_eq!(m.trans.in_dim(), 32 + 3);
        let ok = m.forward_repr(&SetSample::new(vec![0.1; 4], Some(2)));
        assert!(ok.is_ok());
        let missing = m.forward_repr(&SetSample::new(vec![0.1; 4], None));
        assert!(matches!(missing, Err(Error::InvalidParameter(_))));
        let bad = m.forward_repr(&SetSample::new(vec![0.1; 4], Some(3)));
        assert!(matches!(bad, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn conv_patch_indices_cover_padding() {
        let spec = ConvSpec { in_ch: 1, in_h: 4, in_w: 4, out_ch: 1, kernel: 3, stride: 1, pad: 1 };
        assert_eq!(spec.out_h(), 4);
        // Top-left position: the first row and column of the patch fall in
        // the padding.
        let idx = spec.patch_indices(0);
        assert_eq!(idx.len(), 9);
        assert_eq!(idx[0], None);
        assert_eq!(idx[4], Some(0)); // center hits pixel (0, 0)
        assert_eq!(idx[8], Some(5)); // bottom-right hits pixel (1, 1)
    }
}
