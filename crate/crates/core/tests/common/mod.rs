#![allow(dead_code)]

use metastyle::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Builds a scalar loss on a fresh tape from the given inputs, which are
/// registered as parameters in order.
pub type Builder<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

pub fn eval_loss(build: &Builder, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars).expect("loss builds");
    tape.value(loss).item().unwrap()
}

/// Norm-wise relative error between the tape's gradients and central
/// differences with step `h`, over every element of every input.
pub fn gradcheck(build: &Builder, inputs: &[Tensor<f64>], h: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars).expect("loss builds");
    let grads = tape.backward(loss).expect("backward");

    let mut diff2 = 0.0;
    let mut ana2 = 0.0;
    let mut num2 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("gradient for every param");
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval_loss(build, &plus) - eval_loss(build, &minus)) / (2.0 * h);
            let a = analytic.data()[i];
            diff2 += (a - numeric).powi(2);
            ana2 += a * a;
            num2 += numeric * numeric;
        }
    }
    let scale = ana2.sqrt().max(num2.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff2.sqrt() / scale
    }
}

/// Contracts an arbitrary-shaped output with fixed random weights so every
/// output element contributes to the scalar loss.
pub fn contract(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed ^ 0x5eed);
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(uniform(&mut r, &shape, -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<Builder<'static>>,
}

/// One random instance of every differentiable primitive.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let mut cases = Vec::new();
    macro_rules! case {
        ($name:expr, [$($input:expr),*], $body:expr) => {
            cases.push(Case { name: $name, inputs: vec![$($input),*], build: Box::new($body) });
        };
    }
    case!("conv2d", [uniform(&mut r, &[2, 2, 5, 6], -1.0, 1.0), uniform(&mut r, &[3, 2, 3, 2], -1.0, 1.0), uniform(&mut r, &[3], -1.0, 1.0)], move |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 2)?;
        contract(t, y, seed)
    });
    case!("conv_transpose2d", [uniform(&mut r, &[2, 2, 3, 3], -1.0, 1.0), uniform(&mut r, &[2, 3, 3, 3], -1.0, 1.0), uniform(&mut r, &[3], -1.0, 1.0)], move |t, v| {
        let y = t.conv_transpose2d(v[0], v[1], v[2], 2, 1, 1)?;
        contract(t, y, seed)
    });
    case!("reflection_pad", [uniform(&mut r, &[1, 2, 4, 3], -1.0, 1.0)], move |t, v| {
        let y = t.reflection_pad(v[0], 2)?;
        contract(t, y, seed)
    });
    case!("instance_norm", [uniform(&mut r, &[2, 2, 3, 4], -1.0, 1.0)], move |t, v| {
        let y = t.instance_norm(v[0])?;
        contract(t, y, seed)
    });
    case!("relu", [uniform(&mut r, &[3, 7], -1.0, 1.0)], move |t, v| {
        let y = t.relu(v[0])?;
        contract(t, y, seed)
    });
    case!("fully_connected", [uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[5, 4], -1.0, 1.0), uniform(&mut r, &[5], -1.0, 1.0)], move |t, v| {
        let y = t.fully_connected(v[0], v[1], v[2])?;
        contract(t, y, seed)
    });
    case!("channel_mean_std", [uniform(&mut r, &[2, 3, 3, 3], -1.0, 1.0)], move |t, v| {
        let (m, s) = t.channel_mean_std(v[0])?;
        let a = contract(t, m, seed)?;
        let b = contract(t, s, seed + 1)?;
        t.add(a, b)
    });
    case!("elementwise", [uniform(&mut r, &[2, 3], -1.0, 1.0), uniform(&mut r, &[2, 3], -1.0, 1.0)], move |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let p = t.mul(d, v[1])?;
        let q = t.scale(p, -1.5)?;
        contract(t, q, seed)
    });
    case!("sq_dist", [uniform(&mut r, &[2, 4], -1.0, 1.0), uniform(&mut r, &[2, 4], -1.0, 1.0)], move |t, v| t.sq_dist(v[0], v[1]));
    case!("center_crop", [uniform(&mut r, &[1, 2, 6, 7], -1.0, 1.0)], move |t, v| {
        let y = t.center_crop(v[0], 4)?;
        contract(t, y, seed)
    });
    case!("clamp", [uniform(&mut r, &[2, 5], -0.45, 1.45)], move |t, v| {
        let y = t.clamp(v[0], 0.0, 1.0)?;
        contract(t, y, seed)
    });
    case!("reshape_narrow_concat", [uniform(&mut r, &[2, 6], -1.0, 1.0), uniform(&mut r, &[2, 2], -1.0, 1.0)], move |t, v| {
        let a = t.narrow(v[0], 1, 3)?;
        let c = t.concat(&[a, v[1]])?;
        let c = t.reshape(c, &[10])?;
        contract(t, c, seed)
    });
    case!("total_variation", [uniform(&mut r, &[2, 2, 4, 3], 0.0, 1.0)], move |t, v| t.total_variation(v[0]));
    cases
}

/// Relative error of directional derivatives `∇L·v` against central
/// differences along `dirs` random unit-scale directions; the worst is
/// returned. Used where per-element differencing would be too slow.
pub fn dircheck(build: &Builder, inputs: &[Tensor<f64>], h: f64, dirs: usize, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars).expect("loss builds");
    let grads = tape.backward(loss).expect("backward");
    let mut r = rng(seed ^ 0xd1ec);
    let mut worst: f64 = 0.0;
    for _ in 0..dirs {
        let v: Vec<Tensor<f64>> = inputs.iter().map(|t| uniform(&mut r, t.shape(), -1.0, 1.0)).collect();
        let analytic: f64 = vars.iter().zip(&v).map(|(&x, d)| grads.get(x).unwrap().dot(d).unwrap()).sum();
        let shifted = |s: f64| -> Vec<Tensor<f64>> {
            inputs
                .iter()
                .zip(&v)
                .map(|(t, d)| Tensor::new(t.shape(), t.data().iter().zip(d.data()).map(|(a, b)| a + s * b).collect()).unwrap())
                .collect()
        };
        let numeric = (eval_loss(build, &shifted(h)) - eval_loss(build, &shifted(-h))) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

/// The full training objective on a miniature architecture: meta network →
/// generated filters → transformation network → perceptual loss with every
/// term switched on. Inputs are the meta parameters, the shared layers and
/// the content image, all differentiated at once.
pub fn composite_case(seed: u64) -> Case {
    use metastyle::metanet::{generate_on_tape, hidden_on_tape, style_features, MetaNetParams, MetaTapeParams};
    use metastyle::perceptual::{LossWeights, PerceptualEncoder};
    use metastyle::transformnet::{forward_on_tape, FixedWeights, TransformArch};

    let arch = TransformArch::build("mini", 16, 8, 2, 1).unwrap();
    let encoder = PerceptualEncoder::seeded(seed);
    let mut r = rng(seed);
    let group = 4;
    let params = MetaNetParams::init(&arch, encoder.signature_len(), group, &mut r);
    let fixed = FixedWeights::init(&arch, &mut r);
    let style = Tensor::<f32>::from_fn(&[1, 3, 16, 16], |_| r.random_range(0.0..1.0));
    let content = uniform(&mut r, &[2, 3, 16, 16], 0.1, 0.9);
    let features = style_features(&encoder, &style).unwrap();
    let (_, signature) = encoder.encode_one(&style).unwrap();
    let (target, _) = encoder.encode(&content.cast()).unwrap();

    let mut inputs: Vec<Tensor<f64>> = params.tensors().map(|t| t.cast()).collect();
    let n_meta = inputs.len();
    inputs.extend(fixed.tensors().map(|t| t.cast()));
    inputs.push(content);
    let build = move |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let pairs = |s: &[Var]| s.chunks(2).map(|c| (c[0], c[1])).collect::<Vec<_>>();
        let p = MetaTapeParams { fc1: (v[0], v[1]), fc2: pairs(&v[2..n_meta]) };
        let f = t.constant(features.cast());
        let h = hidden_on_tape(t, &p, f)?;
        let g = generate_on_tape(t, &arch, &p, group, h)?;
        let x = v[v.len() - 1];
        let fx = pairs(&v[n_meta..v.len() - 1]);
        let y = forward_on_tape(t, &arch, &fx, &g, x)?;
        let l = encoder.loss_on_tape(t, y, &target.0, &signature, &LossWeights::default())?;
        Ok(l.total)
    };
    Case { name: "composite_loss", inputs, build: Box::new(build) }
}
