//! Frozen feature encoder, the content and style representations built on it,
//! and the perceptual loss terms.
//!
//! The encoder is four `reflection pad → 3×3 conv → relu` stages with 8, 16,
//! 32 and 64 channels; stages two to four downsample by 2. Each stage output is
//! a style tap, and the third doubles as the content tap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Result};
use crate::io::weights::WeightFile;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Seed used to generate the checked-in encoder weights.
pub const ENCODER_SEED: u64 = 0x5747_1f00;

static DEFAULT_ENCODER: &[u8] = include_bytes!("../assets/encoder.mnw");

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    weight: Tensor<f32>,
    bias: Tensor<f32>,
    stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualEncoder {
    stages: Vec<Stage>,
}

/// Encoder activations at the content tap, `[N, C, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentFeatures(pub Tensor<f32>);

#[derive(Clone, Debug, PartialEq)]
pub struct SignatureLayer {
    pub mean: Tensor<f32>,
    pub std: Tensor<f32>,
}

/// Per-channel means and standard deviations at every style tap of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleSignature {
    pub layers: Vec<SignatureLayer>,
}

impl StyleSignature {
    /// All means then all stds, layer by layer: `[m1, s1, m2, s2, ...]`.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.mean.data());
            out.extend_from_slice(l.std.data());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { content: 1.0, style: 250.0, tv: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if ![self.content, self.style, self.tv].iter().all(|w| w.is_finite() && *w >= 0.0) {
            bail!(Usage, "loss weights must be finite and non-negative: {self:?}");
        }
        Ok(())
    }
}

/// Unweighted loss terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub total: f64,
}

/// Encoder outputs recorded on a tape.
pub struct TapeFeatures {
    pub content: Var,
    /// `(mean, std)` per style tap, each `[N, C]`.
    pub style: Vec<(Var, Var)>,
}

/// Loss terms recorded on a tape.
pub struct TapeLoss {
    pub content: Var,
    pub style: Var,
    pub tv: Var,
    pub total: Var,
}

impl PerceptualEncoder {
    pub const CHANNELS: [usize; 4] = [8, 16, 32, 64];
    pub const CONTENT_TAP: usize = 2;
    pub const MIN_SIZE: usize = 16;

    /// Random He-scaled filters and small biases from a seeded generator.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let stages = Self::CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let fan_in = (cin * 9) as f64;
                let scale = (2.0 / fan_in).sqrt();
                let weight = Tensor::from_fn(&[cout, cin, 3, 3], |_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (z * scale) as f32
                });
                let bias = Tensor::from_fn(&[cout], |_| rng.random_range(-0.05..0.05f32));
                cin = cout;
                Stage { weight, bias, stride: if i == 0 { 1 } else { 2 } }
            })
            .collect();
        Self { stages }
    }

    /// The encoder shipped with the crate.
    pub fn builtin() -> Self {
        let file = WeightFile::from_bytes(DEFAULT_ENCODER).expect("embedded encoder weights are valid");
        Self::from_weights(&file).expect("embedded encoder weights match the architecture")
    }

    pub fn to_weights(&self) -> Result<WeightFile> {
        let mut f = WeightFile::new();
        for (i, s) in self.stages.iter().enumerate() {
            f.insert(format!("encoder.{i}.weight"), s.weight.clone())?;
            f.insert(format!("encoder.{i}.bias"), s.bias.clone())?;
        }
        Ok(f)
    }

    pub fn from_weights(file: &WeightFile) -> Result<Self> {
        let mut cin = 3;
        let mut stages = Vec::new();
        for (i, &cout) in Self::CHANNELS.iter().enumerate() {
            let weight = file.expect(&format!("encoder.{i}.weight"), &[cout, cin, 3, 3])?.clone();
            let bias = file.expect(&format!("encoder.{i}.bias"), &[cout])?.clone();
            weight.check_finite("encoder weight")?;
            stages.push(Stage { weight, bias, stride: if i == 0 { 1 } else { 2 } });
            cin = cout;
        }
        Ok(Self { stages })
    }

    pub fn style_tap_count(&self) -> usize {
        self.stages.len()
    }

    /// Length of a flattened [`StyleSignature`].
    pub fn signature_len(&self) -> usize {
        2 * Self::CHANNELS.iter().sum::<usize>()
    }

    pub fn encode_on_tape<T: Scalar>(&self, tape: &mut Tape<T>, image: Var) -> Result<TapeFeatures> {
        let (_, c, h, w) = tape.value(image).dims4()?;
        if c != 3 {
            bail!(Dimension, "encoder expects 3 channels, got {c}");
        }
        if h < Self::MIN_SIZE || w < Self::MIN_SIZE {
            bail!(Dimension, "image {h}x{w} is smaller than the encoder minimum {}", Self::MIN_SIZE);
        }
        let mut x = image;
        let mut style = Vec::with_capacity(self.stages.len());
        let mut content = None;
        for (i, s) in self.stages.iter().enumerate() {
            let wv = tape.constant(s.weight.cast());
            let bv = tape.constant(s.bias.cast());
            let padded = tape.reflection_pad(x, 1)?;
            let y = tape.conv2d(padded, wv, bv, s.stride)?;
            x = tape.relu(y)?;
            style.push(tape.channel_mean_std(x)?);
            if i == Self::CONTENT_TAP {
                content = Some(x);
            }
        }
        Ok(TapeFeatures { content: content.expect("content tap is inside the stage list"), style })
    }

    /// Content features for the whole batch and one signature per image.
    pub fn encode(&self, image: &Tensor<f32>) -> Result<(ContentFeatures, Vec<StyleSignature>)> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(image.clone());
        let f = self.encode_on_tape(&mut tape, x)?;
        let n = image.dims4()?.0;
        let mut sigs = Vec::with_capacity(n);
        for i in 0..n {
            let mut layers = Vec::with_capacity(f.style.len());
            for &(m, s) in &f.style {
                let c = tape.value(m).dims2()?.1;
                layers.push(SignatureLayer {
                    mean: tape.value(m).select0(i)?.reshape(&[c])?,
                    std: tape.value(s).select0(i)?.reshape(&[c])?,
                });
            }
            sigs.push(StyleSignature { layers });
        }
        Ok((ContentFeatures(tape.value(f.content).clone()), sigs))
    }

    /// Encodes a single image.
    pub fn encode_one(&self, image: &Tensor<f32>) -> Result<(ContentFeatures, StyleSignature)> {
        if image.dims4()?.0 != 1 {
            bail!(Dimension, "encode_one expects a batch of one, got {:?}", image.shape());
        }
        let (c, mut s) = self.encode(image)?;
        Ok((c, s.remove(0)))
    }

    /// Records `λc·content + λs·style + tv·TV` for a batch of transferred
    /// images against per-image content features and a shared style target.
    pub fn loss_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        transferred: Var,
        content_target: &Tensor<f32>,
        style_target: &StyleSignature,
        weights: &LossWeights,
    ) -> Result<TapeLoss> {
        let feats = self.encode_on_tape(tape, transferred)?;
        let n = tape.value(transferred).dims4()?.0;
        let target = tape.constant(content_target.cast());
        let content = tape.sq_dist(feats.content, target)?;
        let style = style_loss_on_tape(tape, &feats.style, style_target, n)?;
        let tv = tape.total_variation(transferred)?;
        let a = tape.scale(content, weights.content)?;
        let b = tape.scale(style, weights.style)?;
        let c = tape.scale(tv, weights.tv)?;
        let ab = tape.add(a, b)?;
        let total = tape.add(ab, c)?;
        Ok(TapeLoss { content, style, tv, total })
    }
}

/// `Σ_layers ‖Δmean‖² + ‖Δstd‖²`, summed over the batch, against one target
/// signature broadcast to every image.
pub fn style_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    taps: &[(Var, Var)],
    target: &StyleSignature,
    batch: usize,
) -> Result<Var> {
    if taps.len() != target.layers.len() {
        bail!(Structural, "style signature has {} layers, encoder has {}", target.layers.len(), taps.len());
    }
    let mut acc: Option<Var> = None;
    for (&(m, s), layer) in taps.iter().zip(&target.layers) {
        for (v, t) in [(m, &layer.mean), (s, &layer.std)] {
            let c = t.len();
            if tape.value(v).shape() != [batch, c] {
                bail!(Structural, "style layer shape {:?} vs target {c}", tape.value(v).shape());
            }
            let tiled = Tensor::from_fn(&[batch, c], |i| T::from_f64(t.data()[i % c] as f64));
            let tv = tape.constant(tiled);
            let d = tape.sq_dist(v, tv)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, d)?,
                None => d,
            });
        }
    }
    acc.ok_or_else(|| crate::error::Error::Structural("empty style signature".into()))
}

/// Sum of squared differences between two content feature maps.
pub fn content_loss(a: &ContentFeatures, b: &ContentFeatures) -> Result<f64> {
    a.0.same_shape(&b.0)?;
    Ok(a.0.data().iter().zip(b.0.data()).map(|(&p, &q)| ((p - q) as f64).powi(2)).sum())
}

/// Squared distance between two signatures, summed over layers.
pub fn style_loss(a: &StyleSignature, b: &StyleSignature) -> Result<f64> {
    if a.layers.len() != b.layers.len() {
        bail!(Structural, "signature layer counts differ: {} vs {}", a.layers.len(), b.layers.len());
    }
    let mut total = 0.0;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        la.mean.same_shape(&lb.mean)?;
        la.std.same_shape(&lb.std)?;
        for (x, y) in [(&la.mean, &lb.mean), (&la.std, &lb.std)] {
            total += x.data().iter().zip(y.data()).map(|(&p, &q)| ((p - q) as f64).powi(2)).sum::<f64>();
        }
    }
    Ok(total)
}

/// Squared anisotropic total variation, normalised per image by `C·H·W`.
pub fn tv_loss(image: &Tensor<f32>) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(image.cast());
    let v = tape.total_variation(x)?;
    tape.value(v).item()
}

/// Weighted perceptual loss of `transferred` against a content image and a
/// style signature, summed over the batch.
pub fn total_loss(
    encoder: &PerceptualEncoder,
    transferred: &Tensor<f32>,
    content_image: &Tensor<f32>,
    style: &StyleSignature,
    weights: &LossWeights,
) -> Result<(f64, LossBreakdown)> {
    weights.validate()?;
    transferred.same_shape(content_image)?;
    let (target, _) = encoder.encode(content_image)?;
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(transferred.clone());
    let l = encoder.loss_on_tape(&mut tape, x, &target.0, style, weights)?;
    let read = |v: Var| tape.value(v).item().map(|x| x as f64);
    let b = LossBreakdown { content: read(l.content)?, style: read(l.style)?, tv: read(l.tv)?, total: read(l.total)? };
    Ok((b.total, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(mean: &[f32], std: &[f32]) -> SignatureLayer {
        SignatureLayer {
            mean: Tensor::new(&[mean.len()], mean.to_vec()).unwrap(),
            std: Tensor::new(&[std.len()], std.to_vec()).unwrap(),
        }
    }

    #[test]
    fn builtin_matches_seeded_generation() {
        assert_eq!(PerceptualEncoder::builtin(), PerceptualEncoder::seeded(ENCODER_SEED));
    }

    #[test]
    fn content_loss_examples() {
        let a = ContentFeatures(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
        let b = ContentFeatures(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        assert_eq!(content_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(content_loss(&a, &b).unwrap(), 2.0);
        let c = ContentFeatures(Tensor::new(&[3], vec![0.0; 3]).unwrap());
        assert!(content_loss(&a, &c).is_err());
    }

    #[test]
    fn style_loss_examples() {
        let a = StyleSignature { layers: vec![layer(&[0.0, 0.0], &[1.0, 2.0])] };
        let b = StyleSignature { layers: vec![layer(&[1.0, 1.0], &[1.0, 2.0])] };
        assert_eq!(style_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(style_loss(&a, &b).unwrap(), 2.0);
        assert_eq!(style_loss(&b, &a).unwrap(), 2.0);
        let two = StyleSignature { layers: vec![layer(&[0.0], &[1.0]); 2] };
        assert!(style_loss(&a, &two).is_err());
    }

    #[test]
    fn tv_loss_examples() {
        let t = Tensor::new(&[1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(tv_loss(&t).unwrap(), 0.5);
        assert_eq!(tv_loss(&Tensor::full(&[1, 3, 4, 4], 0.7)).unwrap(), 0.0);
    }

    #[test]
    fn loss_weights_defaults() {
        let w = LossWeights::default();
        assert_eq!((w.content, w.style, w.tv), (1.0, 250.0, 10.0));
        assert!(LossWeights { content: -1.0, ..w }.validate().is_err());
    }
}
