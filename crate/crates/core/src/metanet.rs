//! The meta network: style image → style features → hidden state → filters.
//!
//! The hidden vector is split into equal groups, one per generated conv layer,
//! and each group is decoded by its own affine map into that layer's filter
//! and bias. Changing one group therefore changes exactly one layer.

use rand::Rng;

use crate::error::{bail, Result};
use crate::io::weights::WeightFile;
use crate::perceptual::PerceptualEncoder;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::transformnet::{LayerWeights, TransformArch, TransformWeights};

/// Hidden units per generated layer at desk scale.
pub const DEFAULT_GROUP: usize = 16;

/// Smallest feature spread [`MetaNetParams::whiten_inputs`] divides by.
const WHITEN_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaNetParams {
    pub group: usize,
    /// `[hidden, features]`
    pub fc1_weight: Tensor<f32>,
    pub fc1_bias: Tensor<f32>,
    /// One `[params_l, group]` decoder per generated layer.
    pub fc2: Vec<LayerWeights>,
}

/// Bottleneck embedding of one style, `group × layers` long.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState(pub Tensor<f32>);

impl HiddenState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// View as `[layers, group]`.
    pub fn groups(&self, group: usize) -> impl Iterator<Item = &[f32]> {
        self.0.data().chunks(group)
    }
}

/// Parameter handles registered on a tape.
pub struct MetaTapeParams {
    pub fc1: (Var, Var),
    pub fc2: Vec<(Var, Var)>,
}

impl MetaNetParams {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases.
    pub fn init(arch: &TransformArch, feature_dim: usize, group: usize, rng: &mut impl Rng) -> Self {
        let layers = arch.generated_count();
        let hidden = group * layers;
        fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
            let a = (1.0 / fan_in as f32).sqrt();
            Tensor::from_fn(shape, |_| rng.random_range(-a..a))
        }
        let fc1_weight = uniform(rng, &[hidden, feature_dim], feature_dim);
        let fc2 = arch
            .layers(crate::transformnet::Role::Generated)
            .map(|c| {
                // The decoder bias holds an ordinary random filter (zero conv
                // bias), so the generated network is usable before training.
                let fan_in = if c.transposed { c.out_ch } else { c.in_ch } * c.kernel * c.kernel;
                let a = (1.0 / fan_in as f32).sqrt();
                let filter = c.filter_len();
                let bias = Tensor::from_fn(&[c.param_count()], |i| if i < filter { rng.random_range(-a..a) } else { 0.0 });
                // Style-dependent part starts at about a quarter of the filter scale.
                let weight = Tensor::from_fn(&[c.param_count(), group], |_| rng.random_range(-a..a) / (group as f32).sqrt());
                LayerWeights { weight, bias }
            })
            .collect();
        Self { group, fc1_weight, fc1_bias: Tensor::zeros(&[hidden]), fc2 }
    }

    /// Folds a per-feature standardisation over `features` (one `[1, F]` row
    /// per style) into fc1, so `fc1(f) == W·(f − μ)/σ + b` for the current `W`, `b`.
    /// Raw style features differ little between styles; without this the
    /// hidden states of different styles start almost identical.
    pub fn whiten_inputs(&mut self, features: &[Tensor<f32>]) -> Result<()> {
        let f = self.feature_dim();
        if features.is_empty() {
            bail!(Usage, "cannot whiten against zero styles");
        }
        if let Some(bad) = features.iter().find(|t| t.len() != f) {
            bail!(Dimension, "style features have {} entries, expected {f}", bad.len());
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0f64; f];
        for t in features {
            mean.iter_mut().zip(t.data()).for_each(|(m, &v)| *m += v as f64 / n);
        }
        let mut var = vec![0.0f64; f];
        for t in features {
            var.iter_mut().zip(t.data()).zip(&mean).for_each(|((s, &v), m)| *s += (v as f64 - m).powi(2) / n);
        }
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(WHITEN_FLOOR)).collect();
        let hidden = self.hidden_dim();
        let w = self.fc1_weight.data_mut();
        let b = self.fc1_bias.data_mut();
        for r in 0..hidden {
            let row = &mut w[r * f..(r + 1) * f];
            let mut shift = 0.0f64;
            for ((x, s), m) in row.iter_mut().zip(&scale).zip(&mean) {
                let scaled = *x as f64 * s;
                shift += scaled * m;
                *x = scaled as f32;
            }
            b[r] = (b[r] as f64 - shift) as f32;
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1_bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.fc1_weight.shape()[1]
    }

    pub fn validate(&self, arch: &TransformArch) -> Result<()> {
        let layers: Vec<_> = arch.layers(crate::transformnet::Role::Generated).collect();
        if self.fc2.len() != layers.len() || self.hidden_dim() != self.group * layers.len() {
            bail!(
                Structural,
                "meta params decode {} layers from {} hidden units (group {}); arch {:?} generates {}",
                self.fc2.len(),
                self.hidden_dim(),
                self.group,
                arch.name,
                layers.len()
            );
        }
        if self.fc1_weight.shape() != [self.hidden_dim(), self.feature_dim()] {
            bail!(Structural, "fc1 weight shape {:?}", self.fc1_weight.shape());
        }
        for (c, l) in layers.iter().zip(&self.fc2) {
            if l.weight.shape() != [c.param_count(), self.group] || l.bias.shape() != [c.param_count()] {
                bail!(Structural, "fc2 decoder for {} has shape {:?}", c.name, l.weight.shape());
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<f32>> {
        [&self.fc1_weight, &self.fc1_bias].into_iter().chain(self.fc2.iter().flat_map(|l| [&l.weight, &l.bias]))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        [&mut self.fc1_weight, &mut self.fc1_bias]
            .into_iter()
            .chain(self.fc2.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]))
    }

    pub fn write_into(&self, arch: &TransformArch, file: &mut WeightFile) -> Result<()> {
        self.validate(arch)?;
        file.insert("meta.fc1.weight", self.fc1_weight.clone())?;
        file.insert("meta.fc1.bias", self.fc1_bias.clone())?;
        for (c, l) in arch.layers(crate::transformnet::Role::Generated).zip(&self.fc2) {
            file.insert(format!("meta.fc2.{}.weight", c.name), l.weight.clone())?;
            file.insert(format!("meta.fc2.{}.bias", c.name), l.bias.clone())?;
        }
        Ok(())
    }

    pub fn read_from(arch: &TransformArch, file: &WeightFile) -> Result<Self> {
        let Some(w1) = file.get("meta.fc1.weight") else {
            bail!(Structural, "missing tensor \"meta.fc1.weight\"");
        };
        let (hidden, features) = w1.dims2()?;
        let layers = arch.generated_count();
        if layers == 0 || hidden % layers != 0 {
            bail!(Structural, "hidden dim {hidden} does not split over {layers} generated layers");
        }
        let group = hidden / layers;
        let fc2 = arch
            .layers(crate::transformnet::Role::Generated)
            .map(|c| {
                Ok(LayerWeights {
                    weight: file.expect(&format!("meta.fc2.{}.weight", c.name), &[c.param_count(), group])?.clone(),
                    bias: file.expect(&format!("meta.fc2.{}.bias", c.name), &[c.param_count()])?.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let params = Self {
            group,
            fc1_weight: file.expect("meta.fc1.weight", &[hidden, features])?.clone(),
            fc1_bias: file.expect("meta.fc1.bias", &[hidden])?.clone(),
            fc2,
        };
        params.validate(arch)?;
        Ok(params)
    }

    pub fn on_tape<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> MetaTapeParams {
        let fc1 = (tape.leaf(self.fc1_weight.cast(), trainable), tape.leaf(self.fc1_bias.cast(), trainable));
        let fc2 = self.fc2.iter().map(|l| (tape.leaf(l.weight.cast(), trainable), tape.leaf(l.bias.cast(), trainable))).collect();
        MetaTapeParams { fc1, fc2 }
    }
}

/// Flattened style signature of a single image, `[1, F]`.
pub fn style_features(encoder: &PerceptualEncoder, style_image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, sig) = encoder.encode_one(style_image)?;
    let flat = sig.flatten();
    let n = flat.len();
    Tensor::new(&[1, n], flat)
}

/// `h = relu(fc1(features))`.
pub fn hidden_on_tape<T: Scalar>(tape: &mut Tape<T>, p: &MetaTapeParams, features: Var) -> Result<Var> {
    let h = tape.fully_connected(features, p.fc1.0, p.fc1.1)?;
    tape.relu(h)
}

/// Decodes each hidden group into its layer's `(filter, bias)`.
pub fn generate_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    arch: &TransformArch,
    p: &MetaTapeParams,
    group: usize,
    hidden: Var,
) -> Result<Vec<(Var, Var)>> {
    let layers: Vec<_> = arch.layers(crate::transformnet::Role::Generated).collect();
    let (rows, width) = tape.value(hidden).dims2()?;
    if rows != 1 || width != group * layers.len() || p.fc2.len() != layers.len() {
        bail!(
            Dimension,
            "hidden state {:?} does not match {} layers of group {group}",
            tape.value(hidden).shape(),
            layers.len()
        );
    }
    let mut out = Vec::with_capacity(layers.len());
    for (l, (spec, &(w, b))) in layers.iter().zip(&p.fc2).enumerate() {
        let slice = tape.narrow(hidden, l * group, group)?;
        let flat = tape.fully_connected(slice, w, b)?;
        let filt = tape.narrow(flat, 0, spec.filter_len())?;
        let filt = tape.reshape(filt, &spec.filter_shape())?;
        let bias = tape.narrow(flat, spec.filter_len(), spec.out_ch)?;
        let bias = tape.reshape(bias, &[spec.out_ch])?;
        out.push((filt, bias));
    }
    Ok(out)
}

fn collect_weights(tape: &Tape<f32>, handles: &[(Var, Var)]) -> TransformWeights {
    TransformWeights {
        layers: handles
            .iter()
            .map(|&(w, b)| LayerWeights { weight: tape.value(w).clone(), bias: tape.value(b).clone() })
            .collect(),
    }
}

/// Hidden state of a style image.
pub fn hidden_of(params: &MetaNetParams, encoder: &PerceptualEncoder, style_image: &Tensor<f32>) -> Result<HiddenState> {
    let feats = style_features(encoder, style_image)?;
    if feats.shape()[1] != params.feature_dim() {
        bail!(Structural, "style features have {} entries, meta network expects {}", feats.shape()[1], params.feature_dim());
    }
    let mut tape = Tape::<f32>::new();
    let p = params.on_tape(&mut tape, false);
    let f = tape.constant(feats);
    let h = hidden_on_tape(&mut tape, &p, f)?;
    let n = params.hidden_dim();
    Ok(HiddenState(tape.value(h).clone().reshape(&[n])?))
}

/// Applies only the decoding stage to a stored hidden state.
pub fn weights_from_hidden(params: &MetaNetParams, arch: &TransformArch, h: &HiddenState) -> Result<TransformWeights> {
    params.validate(arch)?;
    if h.len() != params.hidden_dim() {
        bail!(Dimension, "hidden state has {} entries, expected {}", h.len(), params.hidden_dim());
    }
    let mut tape = Tape::<f32>::new();
    let p = params.on_tape(&mut tape, false);
    let hv = tape.constant(h.0.clone().reshape(&[1, h.len()])?);
    let handles = generate_on_tape(&mut tape, arch, &p, params.group, hv)?;
    Ok(collect_weights(&tape, &handles))
}

/// One forward pass from a style image to a full set of generated filters.
pub fn meta_forward(
    params: &MetaNetParams,
    arch: &TransformArch,
    encoder: &PerceptualEncoder,
    style_image: &Tensor<f32>,
) -> Result<(TransformWeights, HiddenState)> {
    params.validate(arch)?;
    FORWARD_CALLS.with(|c| c.set(c.get() + 1));
    let h = hidden_of(params, encoder, style_image)?;
    let w = weights_from_hidden(params, arch, &h)?;
    Ok((w, h))
}

thread_local! {
    static FORWARD_CALLS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of [`meta_forward`] calls made so far on this thread.
pub fn meta_forward_calls() -> usize {
    FORWARD_CALLS.with(|c| c.get())
}
