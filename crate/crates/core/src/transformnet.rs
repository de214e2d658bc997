//! The image transformation network whose interior filters are supplied per
//! call.
//!
//! Layout follows the fast architecture: a large reflection pad, a fixed 9×9
//! input conv, two stride-2 convs, unpadded residual blocks that each shrink
//! the map by 4, two stride-2 transposed convs and a fixed 9×9 output conv.
//! The pad is sized so the residual shrinkage exactly cancels it and the
//! output has the input's spatial size.

use rand::Rng;

use crate::error::{bail, Result};
use crate::io::weights::{self, WeightFile};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Trained with the meta network, frozen at inference.
    Fixed,
    /// Produced by the meta network for each style.
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub transposed: bool,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub role: Role,
    /// Position among the layers sharing this role.
    pub slot: usize,
}

impl ConvSpec {
    pub fn filter_shape(&self) -> [usize; 4] {
        if self.transposed {
            [self.in_ch, self.out_ch, self.kernel, self.kernel]
        } else {
            [self.out_ch, self.in_ch, self.kernel, self.kernel]
        }
    }

    pub fn filter_len(&self) -> usize {
        self.filter_shape().iter().product()
    }

    /// Filter plus bias entries.
    pub fn param_count(&self) -> usize {
        self.filter_len() + self.out_ch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Post {
    None,
    Relu,
    NormRelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    ReflectionPad(usize),
    /// Reflection pad by `kernel / 2`, then the conv.
    Conv { layer: usize, post: Post },
    Residual { first: usize, second: usize },
    /// Stride-2 transposed conv (pad 1, output pad 1) followed by norm and relu.
    Deconv { layer: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformArch {
    pub name: String,
    pub input_size: usize,
    pub pad: usize,
    pub base_width: usize,
    pub convs: Vec<ConvSpec>,
    pub stages: Vec<Stage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub fixed: usize,
    pub generated: usize,
    /// Size of a weight file holding every fixed and generated tensor.
    pub serialized_bytes: usize,
}

impl TransformArch {
    pub const PRESETS: [&'static str; 2] = ["desk-64", "fast-449k"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-64" => Self::build(name, 64, 24, 4, 3),
            "fast-449k" => Self::build(name, 256, 40, 8, 5),
            other => bail!(Usage, "unknown arch preset {other:?} (known: {:?})", Self::PRESETS),
        }
    }

    /// An architecture with no layers at all.
    pub fn empty(input_size: usize) -> Self {
        Self { name: "empty".into(), input_size, pad: 0, base_width: 0, convs: vec![], stages: vec![] }
    }

    /// Fast-net layout with `blocks` residual blocks at width `4·base`.
    pub fn build(name: &str, input_size: usize, pad: usize, base: usize, blocks: usize) -> Result<Self> {
        let mut convs: Vec<ConvSpec> = Vec::new();
        let mut counts = [0usize; 2];
        let mut add = |name: String, transposed, in_ch, out_ch, kernel, stride, role: Role| {
            let slot = &mut counts[(role == Role::Generated) as usize];
            convs.push(ConvSpec { name, transposed, in_ch, out_ch, kernel, stride, role, slot: *slot });
            *slot += 1;
            convs.len() - 1
        };
        let mut stages = vec![Stage::ReflectionPad(pad)];
        let l = add("conv_in".into(), false, 3, base, 9, 1, Role::Fixed);
        stages.push(Stage::Conv { layer: l, post: Post::Relu });
        let l = add("down1".into(), false, base, 2 * base, 3, 2, Role::Generated);
        stages.push(Stage::Conv { layer: l, post: Post::NormRelu });
        let l = add("down2".into(), false, 2 * base, 4 * base, 3, 2, Role::Generated);
        stages.push(Stage::Conv { layer: l, post: Post::NormRelu });
        for b in 0..blocks {
            let first = add(format!("res{b}.conv1"), false, 4 * base, 4 * base, 3, 1, Role::Generated);
            let second = add(format!("res{b}.conv2"), false, 4 * base, 4 * base, 3, 1, Role::Generated);
            stages.push(Stage::Residual { first, second });
        }
        let l = add("up1".into(), true, 4 * base, 2 * base, 3, 2, Role::Generated);
        stages.push(Stage::Deconv { layer: l });
        let l = add("up2".into(), true, 2 * base, base, 3, 2, Role::Generated);
        stages.push(Stage::Deconv { layer: l });
        let l = add("conv_out".into(), false, base, 3, 9, 1, Role::Fixed);
        stages.push(Stage::Conv { layer: l, post: Post::None });
        let arch = Self { name: name.into(), input_size, pad, base_width: base, convs, stages };
        let chain = arch.shape_chain()?;
        let out = chain.last().map(|(_, s)| *s).unwrap_or([3, input_size, input_size]);
        if out != [3, input_size, input_size] {
            bail!(
                Structural,
                "arch {name:?}: output {out:?} does not match input 3x{input_size}x{input_size}; the pad must equal 8 x blocks"
            );
        }
        Ok(arch)
    }

    pub fn layers(&self, role: Role) -> impl Iterator<Item = &ConvSpec> {
        self.convs.iter().filter(move |c| c.role == role)
    }

    pub fn generated_count(&self) -> usize {
        self.layers(Role::Generated).count()
    }

    /// Activation shape after every stage, starting with the input.
    pub fn shape_chain(&self) -> Result<Vec<(String, [usize; 3])>> {
        let mut s = [3, self.input_size, self.input_size];
        let mut out = vec![("input".to_string(), s)];
        for stage in &self.stages {
            let label = match *stage {
                Stage::ReflectionPad(p) => {
                    s = [s[0], s[1] + 2 * p, s[2] + 2 * p];
                    format!("reflection pad {p}")
                }
                Stage::Conv { layer, .. } => {
                    let c = &self.convs[layer];
                    let padded = s[1] + 2 * (c.kernel / 2);
                    if s[0] != c.in_ch || padded < c.kernel {
                        bail!(Structural, "layer {} cannot take {s:?}", c.name);
                    }
                    let e = (padded - c.kernel) / c.stride + 1;
                    s = [c.out_ch, e, e];
                    format!("{}x{}x{} conv, stride {}", c.out_ch, c.kernel, c.kernel, c.stride)
                }
                Stage::Residual { first, .. } => {
                    let c = &self.convs[first];
                    if s[0] != c.in_ch || s[1] < 5 {
                        bail!(Structural, "residual block {} cannot take {s:?}", c.name);
                    }
                    s = [s[0], s[1] - 4, s[2] - 4];
                    format!("residual block, {} filters", c.out_ch)
                }
                Stage::Deconv { layer } => {
                    let c = &self.convs[layer];
                    if s[0] != c.in_ch {
                        bail!(Structural, "layer {} cannot take {s:?}", c.name);
                    }
                    s = [c.out_ch, 2 * s[1], 2 * s[2]];
                    format!("{}x{}x{} deconv, stride {}", c.out_ch, c.kernel, c.kernel, c.stride)
                }
            };
            out.push((label, s));
        }
        Ok(out)
    }

    pub fn count_params(&self) -> ParamCount {
        let sum = |role| self.layers(role).map(ConvSpec::param_count).sum();
        let serialized_bytes = weights::OVERHEAD_BYTES
            + self
                .convs
                .iter()
                .map(|c| {
                    let prefix = tensor_prefix(c);
                    weights::entry_bytes(&format!("{prefix}.weight"), &c.filter_shape())
                        + weights::entry_bytes(&format!("{prefix}.bias"), &[c.out_ch])
                })
                .sum::<usize>();
        ParamCount { fixed: sum(Role::Fixed), generated: sum(Role::Generated), serialized_bytes }
    }
}

fn tensor_prefix(c: &ConvSpec) -> String {
    match c.role {
        Role::Fixed => format!("fixed.{}", c.name),
        Role::Generated => format!("gen.{}", c.name),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

/// Filters and biases for every layer of one role, in arch order.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleWeights<const GENERATED: bool> {
    pub layers: Vec<LayerWeights>,
}

/// The per-style filters: the output of the meta network.
pub type TransformWeights = RoleWeights<true>;
/// The input and output convs, shared by every style.
pub type FixedWeights = RoleWeights<false>;

impl<const GENERATED: bool> RoleWeights<GENERATED> {
    pub const ROLE: Role = if GENERATED { Role::Generated } else { Role::Fixed };

    pub fn zeros(arch: &TransformArch) -> Self {
        let layers = arch
            .layers(Self::ROLE)
            .map(|c| LayerWeights { weight: Tensor::zeros(&c.filter_shape()), bias: Tensor::zeros(&[c.out_ch]) })
            .collect();
        Self { layers }
    }

    /// Uniform `±sqrt(1/fan_in)` filters. The output conv starts a tenth as
    /// large with bias 0.5 so untrained networks emit mid-grey.
    pub fn init(arch: &TransformArch, rng: &mut impl Rng) -> Self {
        let layers = arch
            .layers(Self::ROLE)
            .map(|c| {
                let fan_in = (if c.transposed { c.out_ch } else { c.in_ch } * c.kernel * c.kernel) as f32;
                let is_out = c.name == "conv_out";
                let a = fan_in.recip().sqrt() * if is_out { 0.1 } else { 1.0 };
                let weight = Tensor::from_fn(&c.filter_shape(), |_| rng.random_range(-a..a));
                let bias = Tensor::full(&[c.out_ch], if is_out { 0.5 } else { 0.0 });
                LayerWeights { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self, arch: &TransformArch) -> Result<()> {
        let specs: Vec<_> = arch.layers(Self::ROLE).collect();
        if specs.len() != self.layers.len() {
            bail!(Structural, "arch {:?} has {} {:?} layers, weights have {}", arch.name, specs.len(), Self::ROLE, self.layers.len());
        }
        for (c, l) in specs.iter().zip(&self.layers) {
            if l.weight.shape() != c.filter_shape() || l.bias.shape() != [c.out_ch] {
                bail!(
                    Structural,
                    "layer {}: weight {:?} bias {:?}, expected {:?} and [{}]",
                    c.name,
                    l.weight.shape(),
                    l.bias.shape(),
                    c.filter_shape(),
                    c.out_ch
                );
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn write_into(&self, arch: &TransformArch, file: &mut WeightFile) -> Result<()> {
        self.validate(arch)?;
        for (c, l) in arch.layers(Self::ROLE).zip(&self.layers) {
            let prefix = tensor_prefix(c);
            file.insert(format!("{prefix}.weight"), l.weight.clone())?;
            file.insert(format!("{prefix}.bias"), l.bias.clone())?;
        }
        Ok(())
    }

    pub fn read_from(arch: &TransformArch, file: &WeightFile) -> Result<Self> {
        let layers = arch
            .layers(Self::ROLE)
            .map(|c| {
                let prefix = tensor_prefix(c);
                Ok(LayerWeights {
                    weight: file.expect(&format!("{prefix}.weight"), &c.filter_shape())?.clone(),
                    bias: file.expect(&format!("{prefix}.bias"), &[c.out_ch])?.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Registers every tensor on `tape`, as parameters or constants.
    pub fn on_tape<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|l| (tape.leaf(l.weight.cast(), trainable), tape.leaf(l.bias.cast(), trainable)))
            .collect()
    }
}

/// `centercrop(x, 4) + IN(conv2(relu(IN(conv1(x)))))` with unpadded 3×3 convs.
pub fn residual_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    first: (Var, Var),
    second: (Var, Var),
) -> Result<Var> {
    let (_, _, h, w) = tape.value(x).dims4()?;
    if h < 5 || w < 5 {
        bail!(Dimension, "residual block needs at least 5x5 input, got {h}x{w}");
    }
    let y = tape.conv2d(x, first.0, first.1, 1)?;
    let y = tape.instance_norm(y)?;
    let y = tape.relu(y)?;
    let y = tape.conv2d(y, second.0, second.1, 1)?;
    let y = tape.instance_norm(y)?;
    let skip = tape.center_crop(x, 4)?;
    tape.add(skip, y)
}

/// Records the transformation network on `tape`. `fixed` and `generated` hold
/// `(filter, bias)` handles in arch order for their role.
pub fn forward_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    arch: &TransformArch,
    fixed: &[(Var, Var)],
    generated: &[(Var, Var)],
    content: Var,
) -> Result<Var> {
    let (_, c, h, w) = tape.value(content).dims4()?;
    if c != 3 || h != arch.input_size || w != arch.input_size {
        bail!(
            Dimension,
            "arch {:?} takes 3x{n}x{n} input, got {c}x{h}x{w}",
            arch.name,
            n = arch.input_size
        );
    }
    if fixed.len() != arch.layers(Role::Fixed).count() || generated.len() != arch.generated_count() {
        bail!(Structural, "weight handle counts do not match arch {:?}", arch.name);
    }
    let handle = |layer: usize| {
        let spec = &arch.convs[layer];
        match spec.role {
            Role::Fixed => fixed[spec.slot],
            Role::Generated => generated[spec.slot],
        }
    };
    let mut x = content;
    for stage in &arch.stages {
        x = match *stage {
            Stage::ReflectionPad(p) => tape.reflection_pad(x, p)?,
            Stage::Conv { layer, post } => {
                let spec = &arch.convs[layer];
                let (fw, fb) = handle(layer);
                let padded = tape.reflection_pad(x, spec.kernel / 2)?;
                let y = tape.conv2d(padded, fw, fb, spec.stride)?;
                match post {
                    Post::None => y,
                    Post::Relu => tape.relu(y)?,
                    Post::NormRelu => {
                        let y = tape.instance_norm(y)?;
                        tape.relu(y)?
                    }
                }
            }
            Stage::Residual { first, second } => residual_block(tape, x, handle(first), handle(second))?,
            Stage::Deconv { layer } => {
                let (fw, fb) = handle(layer);
                let y = tape.conv_transpose2d(x, fw, fb, 2, 1, 1)?;
                let y = tape.instance_norm(y)?;
                tape.relu(y)?
            }
        };
    }
    tape.clamp(x, 0.0, 1.0)
}

/// Applies the network to a batch of content images.
pub fn transform_forward(
    arch: &TransformArch,
    fixed: &FixedWeights,
    generated: &TransformWeights,
    content: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    fixed.validate(arch)?;
    generated.validate(arch)?;
    let mut tape = Tape::<f32>::new();
    let f = fixed.on_tape(&mut tape, false);
    let g = generated.on_tape(&mut tape, false);
    let x = tape.constant(content.clone());
    let y = forward_on_tape(&mut tape, arch, &f, &g, x)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fast_preset_matches_reference_table() {
        let arch = TransformArch::preset("fast-449k").unwrap();
        let shapes: Vec<[usize; 3]> = arch.shape_chain().unwrap().into_iter().map(|(_, s)| s).collect();
        let expected = [
            [3, 256, 256],
            [3, 336, 336],
            [8, 336, 336],
            [16, 168, 168],
            [32, 84, 84],
            [32, 80, 80],
            [32, 76, 76],
            [32, 72, 72],
            [32, 68, 68],
            [32, 64, 64],
            [16, 128, 128],
            [8, 256, 256],
            [3, 256, 256],
        ];
        assert_eq!(shapes, expected);
        assert_eq!(arch.generated_count(), 14);
    }

    #[test]
    fn desk_preset_chain() {
        let arch = TransformArch::preset("desk-64").unwrap();
        let shapes: Vec<[usize; 3]> = arch.shape_chain().unwrap().into_iter().map(|(_, s)| s).collect();
        let expected = [
            [3, 64, 64],
            [3, 112, 112],
            [4, 112, 112],
            [8, 56, 56],
            [16, 28, 28],
            [16, 24, 24],
            [16, 20, 20],
            [16, 16, 16],
            [8, 32, 32],
            [4, 64, 64],
            [3, 64, 64],
        ];
        assert_eq!(shapes, expected);
    }

    #[test]
    fn inconsistent_pad_is_rejected() {
        assert!(matches!(TransformArch::build("bad", 64, 10, 4, 3), Err(crate::Error::Structural(_))));
        assert!(TransformArch::preset("nope").is_err());
    }

    #[test]
    fn first_and_last_convs_are_fixed() {
        let arch = TransformArch::preset("desk-64").unwrap();
        assert_eq!(arch.convs.first().unwrap().role, Role::Fixed);
        assert_eq!(arch.convs.last().unwrap().role, Role::Fixed);
        let n = arch.convs.len();
        assert!(arch.convs[1..n - 1].iter().all(|c| c.role == Role::Generated));
    }

    #[test]
    fn empty_arch_counts() {
        let c = TransformArch::empty(64).count_params();
        assert_eq!(c, ParamCount { fixed: 0, generated: 0, serialized_bytes: weights::OVERHEAD_BYTES });
    }

    #[test]
    fn zero_generated_weights_give_constant_image() {
        let arch = TransformArch::preset("desk-64").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fixed = FixedWeights::init(&arch, &mut rng);
        let gen = TransformWeights::zeros(&arch);
        let content = Tensor::from_fn(&[2, 3, 64, 64], |i| ((i * 7919) % 255) as f32 / 255.0);
        let out = transform_forward(&arch, &fixed, &gen, &content).unwrap();
        assert_eq!(out.shape(), content.shape());
        let plane = 64 * 64;
        for (k, ch) in out.data().chunks(plane).enumerate() {
            let want = fixed.layers[1].bias.data()[k % 3].clamp(0.0, 1.0);
            assert!(ch.iter().all(|&v| v == want));
        }
    }
}
