//! Walking the space of generated networks through their hidden states:
//! interpolation between styles, textures from noise, the identity network,
//! and textures from random hidden states.
//!
//! Nothing here modifies the meta network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};
use crate::metanet::{hidden_of, meta_forward, weights_from_hidden, HiddenState, MetaNetParams};
use crate::perceptual::PerceptualEncoder;
use crate::tensor::Tensor;
use crate::transformnet::{transform_forward, FixedWeights, TransformArch, TransformWeights};

/// Noise image parameters for texture visualisation.
pub const NOISE_MEAN: f64 = 0.5;
pub const NOISE_STD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationSpec {
    pub h1: HiddenState,
    pub h2: HiddenState,
    pub alphas: Vec<f32>,
}

impl InterpolationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.h1.len() != self.h2.len() {
            bail!(Dimension, "hidden states differ in length: {} vs {}", self.h1.len(), self.h2.len());
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            bail!(Usage, "alphas must lie in [0, 1]: {:?}", self.alphas);
        }
        if self.alphas.windows(2).any(|w| w[0] > w[1]) {
            bail!(Usage, "alphas must be sorted ascending: {:?}", self.alphas);
        }
        Ok(())
    }
}

/// `(1 − α)·h1 + α·h2`. The endpoints return copies of the inputs so they are
/// exact even for signed zeros.
pub fn lerp_hidden(h1: &HiddenState, h2: &HiddenState, alpha: f32) -> Result<HiddenState> {
    if h1.len() != h2.len() {
        bail!(Dimension, "hidden states differ in length: {} vs {}", h1.len(), h2.len());
    }
    if alpha == 0.0 {
        return Ok(h1.clone());
    }
    if alpha == 1.0 {
        return Ok(h2.clone());
    }
    let data = h1.0.data().iter().zip(h2.0.data()).map(|(&a, &b)| (1.0 - alpha) * a + alpha * b).collect();
    Ok(HiddenState(Tensor::new(h1.0.shape(), data)?))
}

/// One set of generated weights per alpha.
pub fn interpolate(params: &MetaNetParams, arch: &TransformArch, spec: &InterpolationSpec) -> Result<Vec<TransformWeights>> {
    spec.validate()?;
    spec.alphas
        .iter()
        .map(|&a| weights_from_hidden(params, arch, &lerp_hidden(&spec.h1, &spec.h2, a)?))
        .collect()
}

/// Seeded Gaussian noise with mean 0.5 and std 0.25, clamped to `[0, 1]`.
pub fn noise_image(seed: u64, size: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(NOISE_MEAN, NOISE_STD).expect("valid parameters");
    Tensor::from_fn(&[1, 3, size, size], |_| normal.sample(&mut rng).clamp(0.0, 1.0) as f32)
}

/// The network's response to noise: its texture.
pub fn texture_visualize(
    arch: &TransformArch,
    fixed: &FixedWeights,
    generated: &TransformWeights,
    seed: u64,
    size: usize,
) -> Result<Tensor<f32>> {
    transform_forward(arch, fixed, generated, &noise_image(seed, size))
}

/// Feeds the content image in as its own style.
pub fn identity_network(
    params: &MetaNetParams,
    arch: &TransformArch,
    encoder: &PerceptualEncoder,
    content: &Tensor<f32>,
) -> Result<(TransformWeights, HiddenState)> {
    meta_forward(params, arch, encoder, content)
}

/// Per-coordinate mean and standard deviation of hidden states.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl HiddenStats {
    pub fn fit(states: &[HiddenState]) -> Result<Self> {
        let Some(first) = states.first() else {
            bail!(Usage, "cannot fit hidden statistics to zero states");
        };
        let n = first.len();
        if states.iter().any(|s| s.len() != n) {
            bail!(Dimension, "hidden states differ in length");
        }
        let count = states.len() as f64;
        let mut mean = vec![0.0f64; n];
        for s in states {
            for (m, &v) in mean.iter_mut().zip(s.0.data()) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0f64; n];
        for s in states {
            for ((acc, &v), m) in var.iter_mut().zip(s.0.data()).zip(&mean) {
                *acc += (v as f64 - m).powi(2);
            }
        }
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var.iter().map(|&v| (v / count).sqrt() as f32).collect(),
        })
    }

    /// Hidden states of every style image.
    pub fn from_styles(params: &MetaNetParams, encoder: &PerceptualEncoder, styles: &[Tensor<f32>]) -> Result<Self> {
        let states = styles.iter().map(|s| hidden_of(params, encoder, s)).collect::<Result<Vec<_>>>()?;
        Self::fit(&states)
    }

    /// `mean + scale · std · z` with `z` standard normal; `scale = 0` returns
    /// the mean exactly.
    pub fn sample(&self, seed: u64, scale: f32) -> Result<HiddenState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0f32, 1.0).expect("valid parameters");
        let data = if scale == 0.0 {
            self.mean.clone()
        } else {
            self.mean.iter().zip(&self.std).map(|(&m, &s)| m + scale * s * z.sample(&mut rng)).collect()
        };
        Ok(HiddenState(Tensor::new(&[self.mean.len()], data)?))
    }
}

/// Weights decoded from a random on-manifold hidden state, with their texture.
pub fn random_texture(
    params: &MetaNetParams,
    arch: &TransformArch,
    fixed: &FixedWeights,
    stats: &HiddenStats,
    seed: u64,
    scale: f32,
    size: usize,
) -> Result<(TransformWeights, HiddenState, Tensor<f32>)> {
    let h = stats.sample(seed, scale)?;
    let w = weights_from_hidden(params, arch, &h)?;
    let img = texture_visualize(arch, fixed, &w, seed, size)?;
    Ok((w, h, img))
}

/// `<op>_<tag>.ppm`, the naming used for every exploration output.
pub fn output_name(op: &str, tag: impl std::fmt::Display) -> String {
    format!("{op}_{tag}.ppm")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(v: &[f32]) -> HiddenState {
        HiddenState(Tensor::new(&[v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn midpoint_is_exact() {
        assert_eq!(lerp_hidden(&hs(&[0.0, 2.0]), &hs(&[2.0, 0.0]), 0.5).unwrap(), hs(&[1.0, 1.0]));
    }

    #[test]
    fn endpoints_keep_signed_zero() {
        let a = hs(&[-0.0, 1.0]);
        let b = hs(&[3.0, -0.0]);
        assert_eq!(lerp_hidden(&a, &b, 0.0).unwrap().0.data()[0].to_bits(), (-0.0f32).to_bits());
        assert_eq!(lerp_hidden(&a, &b, 1.0).unwrap().0.data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn spec_validation() {
        let spec = InterpolationSpec { h1: hs(&[1.0]), h2: hs(&[1.0, 2.0]), alphas: vec![0.0] };
        assert!(spec.validate().is_err());
        let spec = InterpolationSpec { h1: hs(&[1.0]), h2: hs(&[2.0]), alphas: vec![0.5, 0.2] };
        assert!(spec.validate().is_err());
        let spec = InterpolationSpec { h1: hs(&[1.0]), h2: hs(&[2.0]), alphas: vec![0.0, 1.5] };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn noise_is_seeded_and_clamped() {
        let a = noise_image(3, 32);
        assert_eq!(a, noise_image(3, 32));
        assert_ne!(a, noise_image(4, 32));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = a.data().iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn zero_scale_sample_is_the_mean() {
        let stats = HiddenStats::fit(&[hs(&[1.0, 0.1]), hs(&[0.0, 0.3]), hs(&[0.5, 0.7])]).unwrap();
        assert_eq!(stats.sample(9, 0.0).unwrap().0.data(), &stats.mean[..]);
        assert_eq!(stats.sample(9, 1.0).unwrap(), stats.sample(9, 1.0).unwrap());
    }
}
