//! Closed-form toy problems for the three ways of attacking
//! `min_x ‖f(x) − a‖² + λ‖h(x) − b‖²`:
//!
//! 1. descend on `x` for one fixed `(a, b)`;
//! 2. learn a network `a ↦ x` for a fixed `b`;
//! 3. learn a hypernetwork `b ↦ (a ↦ x)` that emits the second network's
//!    weights in one forward pass.
//!
//! With `f = h = identity` the optimum is `(a + λb) / (1 + λ)`, which every
//! learned answer is scored against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{bail, Result};
use crate::io::config::csv_string;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Differentiable maps available for `f` and `h`.
#[derive(Clone, Debug, PartialEq)]
pub enum ToyMap {
    Identity,
    /// `x ↦ A·x` with `A` row-major `d×d`.
    Linear(Vec<f64>),
    /// `x ↦ x ∘ x`
    Quadratic,
}

impl ToyMap {
    pub const REGISTRY: [&'static str; 3] = ["identity", "linear", "quadratic"];

    /// Looks a map up by name; `linear` needs its matrix.
    pub fn by_name(name: &str, matrix: Option<Vec<f64>>) -> Result<Self> {
        match (name, matrix) {
            ("identity", None) => Ok(Self::Identity),
            ("quadratic", None) => Ok(Self::Quadratic),
            ("linear", Some(m)) => Ok(Self::Linear(m)),
            ("linear", None) => bail!(Usage, "the linear map needs a matrix"),
            (n, Some(_)) if Self::REGISTRY.contains(&n) => bail!(Usage, "map {n:?} takes no matrix"),
            (n, _) => bail!(Usage, "unknown toy map {n:?}; known: {:?}", Self::REGISTRY),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => x.to_vec(),
            Self::Quadratic => x.iter().map(|v| v * v).collect(),
            Self::Linear(a) => {
                let d = x.len();
                (0..d).map(|i| (0..d).map(|j| a[i * d + j] * x[j]).sum()).collect()
            }
        }
    }

    /// `Jᵀ·r` at `x`.
    fn vjp(&self, x: &[f64], r: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => r.to_vec(),
            Self::Quadratic => x.iter().zip(r).map(|(x, r)| 2.0 * x * r).collect(),
            Self::Linear(a) => {
                let d = x.len();
                (0..d).map(|j| (0..d).map(|i| a[i * d + j] * r[i]).sum()).collect()
            }
        }
    }

    fn on_tape(&self, tape: &mut Tape<f32>, x: Var) -> Result<Var> {
        match self {
            Self::Identity => Ok(x),
            Self::Quadratic => tape.mul(x, x),
            Self::Linear(a) => {
                let d = tape.value(x).dims2()?.1;
                let w = tape.constant(Tensor::from_f64s(&[d, d], a)?);
                let b = tape.constant(Tensor::zeros(&[d]));
                tape.fully_connected(x, w, b)
            }
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        if let Self::Linear(a) = self {
            if a.len() != d * d {
                bail!(Dimension, "linear map has {} entries, expected {d}×{d}", a.len());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyObjective {
    pub f: ToyMap,
    pub h: ToyMap,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub lambda: f64,
}

impl ToyObjective {
    pub fn identity(a: Vec<f64>, b: Vec<f64>, lambda: f64) -> Self {
        Self { f: ToyMap::Identity, h: ToyMap::Identity, a, b, lambda }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.b.len() != d {
            bail!(Dimension, "a has {d} entries and b has {}", self.b.len());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            bail!(Usage, "lambda must be finite and non-negative, got {}", self.lambda);
        }
        self.f.check(d)?;
        self.h.check(d)
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        sq(&self.f.apply(x), &self.a) + self.lambda * sq(&self.h.apply(x), &self.b)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let rf: Vec<f64> = self.f.apply(x).iter().zip(&self.a).map(|(p, q)| 2.0 * (p - q)).collect();
        let rh: Vec<f64> = self.h.apply(x).iter().zip(&self.b).map(|(p, q)| 2.0 * self.lambda * (p - q)).collect();
        self.f.vjp(x, &rf).iter().zip(self.h.vjp(x, &rh)).map(|(p, q)| p + q).collect()
    }

    /// The exact minimiser; only defined for identity maps.
    pub fn closed_form(&self) -> Result<Vec<f64>> {
        if self.f != ToyMap::Identity || self.h != ToyMap::Identity {
            bail!(Usage, "closed form needs identity f and h");
        }
        self.validate()?;
        Ok(closed_form(&self.a, &self.b, self.lambda))
    }
}

fn sq(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(a + λb) / (1 + λ)` componentwise.
pub fn closed_form(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| (a + lambda * b) / (1.0 + lambda)).collect()
}

/// Plain gradient descent from `x = 0`. Aborts if the loss climbs past ten
/// times the best value seen.
pub fn solve_situation1(obj: &ToyObjective, steps: usize, step_size: f64) -> Result<Vec<f64>> {
    obj.validate()?;
    let mut x = vec![0.0; obj.dim()];
    let mut best = obj.loss(&x);
    for t in 0..steps {
        let g = obj.grad(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step_size * gi;
        }
        let l = obj.loss(&x);
        if !l.is_finite() || l > 10.0 * best.max(f64::MIN_POSITIVE) {
            bail!(Numeric, "gradient descent diverged at step {t}: loss {l} vs best {best}");
        }
        best = best.min(l);
    }
    Ok(x)
}

/// Brute-force minimiser over `[lo, hi]` at spacing `step`, for `d = 1`.
pub fn grid_search_1d(obj: &ToyObjective, lo: f64, hi: f64, step: f64) -> Result<f64> {
    obj.validate()?;
    if obj.dim() != 1 {
        bail!(Dimension, "grid search is one-dimensional, objective has d = {}", obj.dim());
    }
    let n = ((hi - lo) / step).round() as usize;
    let (mut best_x, mut best_l) = (lo, f64::INFINITY);
    for i in 0..=n {
        let x = lo + i as f64 * step;
        let l = obj.loss(&[x]);
        if l < best_l {
            (best_x, best_l) = (x, l);
        }
    }
    Ok(best_x)
}

/// Two hidden ReLU layers, `d → width → width → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyMapNet {
    /// `(weight [out, in], bias [out])` per layer.
    pub layers: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl ToyMapNet {
    pub fn shapes(d: usize, width: usize) -> [(usize, usize); 3] {
        [(width, d), (width, width), (d, width)]
    }

    pub fn param_count(d: usize, width: usize) -> usize {
        Self::shapes(d, width).iter().map(|(o, i)| o * i + o).sum()
    }

    pub fn init(d: usize, width: usize, rng: &mut impl Rng) -> Self {
        let layers = Self::shapes(d, width)
            .iter()
            .map(|&(o, i)| {
                let a = (2.0 / i as f32).sqrt();
                (Tensor::from_fn(&[o, i], |_| rng.random_range(-a..a)), Tensor::zeros(&[o]))
            })
            .collect();
        Self { layers }
    }

    fn flat(&self) -> Vec<f32> {
        self.layers.iter().flat_map(|(w, b)| w.data().iter().chain(b.data()).copied()).collect()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].0.shape()[1]
    }

    /// Applies the network to each row of `a`.
    pub fn apply(&self, a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::<f32>::new();
        let handles: Vec<_> = self.layers.iter().map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone()))).collect();
        let x = tape.constant(rows_tensor(a)?);
        let y = map_on_tape(&mut tape, &handles, x)?;
        Ok(tensor_rows(tape.value(y)))
    }
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor<f32>> {
    let d = rows.first().map_or(0, Vec::len);
    Tensor::from_f64s(&[rows.len(), d], &rows.concat())
}

fn tensor_rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let d = t.shape()[1];
    t.data().chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn map_on_tape(tape: &mut Tape<f32>, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.fully_connected(h, w, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Batch loss `mean_i ‖f(x_i) − a_i‖² + λ‖h(x_i) − b_i‖²`.
fn toy_loss_on_tape(tape: &mut Tape<f32>, f: &ToyMap, h: &ToyMap, x: Var, a: Var, b: Var, lambda: f64) -> Result<Var> {
    let n = tape.value(x).dims2()?.0;
    let fx = f.on_tape(tape, x)?;
    let hx = h.on_tape(tape, x)?;
    let lf = tape.sq_dist(fx, a)?;
    let lh = tape.sq_dist(hx, b)?;
    let lh = tape.scale(lh, lambda)?;
    let l = tape.add(lf, lh)?;
    tape.scale(l, 1.0 / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f32,
    pub width: usize,
    /// Hypernetwork hidden width.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self { iterations: 5000, batch: 16, lr: 1e-3, width: 16, hidden: 32, seed: 0 }
    }
}

/// Uniform draws from `[-1, 1]^d`.
pub fn sample_box(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn adam_step(state: &mut AdamState, params: &mut [Tensor<f32>], tape: &Tape<f32>, leaves: &[Var], loss: Var) -> Result<f64> {
    let l = tape.value(loss).item()? as f64;
    if !l.is_finite() {
        bail!(Numeric, "toy loss became {l}");
    }
    let g = tape.backward(loss)?;
    let grads: Vec<&Tensor<f32>> = leaves.iter().map(|&v| g.get(v).expect("leaf gradient")).collect();
    let mut refs: Vec<&mut Tensor<f32>> = params.iter_mut().collect();
    state.step(&mut refs, &grads)?;
    Ok(l)
}

/// Learns `a ↦ x` for a fixed `b0` from the sampled `a` values.
pub fn train_situation2(
    f: &ToyMap,
    h: &ToyMap,
    b0: &[f64],
    lambda: f64,
    train_a: &[Vec<f64>],
    net: ToyMapNet,
    config: &ToyTrainConfig,
) -> Result<ToyMapNet> {
    let d = b0.len();
    if train_a.is_empty() || train_a.iter().any(|a| a.len() != d) || net.dim() != d {
        bail!(Dimension, "training inputs must be non-empty and {d}-dimensional");
    }
    let mut params: Vec<Tensor<f32>> = net.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect();
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &params.iter().collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let b_rows = vec![b0.to_vec(); config.batch];
    for _ in 0..config.iterations {
        let batch: Vec<Vec<f64>> = (0..config.batch).map(|_| train_a[rng.random_range(0..train_a.len())].clone()).collect();
        let mut tape = Tape::<f32>::new();
        let leaves: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let handles: Vec<_> = leaves.chunks(2).map(|c| (c[0], c[1])).collect();
        let a = tape.constant(rows_tensor(&batch)?);
        let b = tape.constant(rows_tensor(&b_rows)?);
        let x = map_on_tape(&mut tape, &handles, a)?;
        let loss = toy_loss_on_tape(&mut tape, f, h, x, a, b, lambda)?;
        adam_step(&mut adam, &mut params, &tape, &leaves, loss)?;
    }
    let layers = params.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    Ok(ToyMapNet { layers })
}

/// `b ↦ ToyMapNet` in one forward pass: `relu(fc1(b))` followed by a single
/// affine map onto the flattened map-network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyHyperNet {
    pub d: usize,
    pub width: usize,
    pub fc1: (Tensor<f32>, Tensor<f32>),
    pub fc2: (Tensor<f32>, Tensor<f32>),
}

impl ToyHyperNet {
    /// The output bias starts at an ordinary map-network initialisation, so
    /// an untrained hypernetwork already emits a usable (random) network.
    pub fn init(d: usize, width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let p = ToyMapNet::param_count(d, width);
        let a1 = (1.0 / d as f32).sqrt();
        let a2 = 0.1 * (1.0 / hidden as f32).sqrt();
        let fc1 = (Tensor::from_fn(&[hidden, d], |_| rng.random_range(-a1..a1)), Tensor::zeros(&[hidden]));
        let w2 = Tensor::from_fn(&[p, hidden], |_| rng.random_range(-a2..a2));
        let b2 = Tensor::new(&[p], ToyMapNet::init(d, width, rng).flat()).expect("param count");
        Self { d, width, fc1, fc2: (w2, b2) }
    }

    fn tensors(&self) -> Vec<Tensor<f32>> {
        vec![self.fc1.0.clone(), self.fc1.1.clone(), self.fc2.0.clone(), self.fc2.1.clone()]
    }

    fn from_tensors(d: usize, width: usize, t: &[Tensor<f32>]) -> Self {
        Self { d, width, fc1: (t[0].clone(), t[1].clone()), fc2: (t[2].clone(), t[3].clone()) }
    }

    fn emit_on_tape(&self, tape: &mut Tape<f32>, p: &[Var], b: Var) -> Result<Vec<(Var, Var)>> {
        let h = tape.fully_connected(b, p[0], p[1])?;
        let h = tape.relu(h)?;
        let flat = tape.fully_connected(h, p[2], p[3])?;
        let mut out = Vec::new();
        let mut at = 0;
        for (o, i) in ToyMapNet::shapes(self.d, self.width) {
            let w = tape.narrow(flat, at, o * i)?;
            let w = tape.reshape(w, &[o, i])?;
            let bias = tape.narrow(flat, at + o * i, o)?;
            let bias = tape.reshape(bias, &[o])?;
            at += o * i + o;
            out.push((w, bias));
        }
        Ok(out)
    }

    /// The map network for one `b`, from a single forward pass.
    pub fn emit(&self, b: &[f64]) -> Result<ToyMapNet> {
        if b.len() != self.d {
            bail!(Dimension, "b has {} entries, hypernetwork expects {}", b.len(), self.d);
        }
        let mut tape = Tape::<f32>::new();
        let p: Vec<Var> = self.tensors().into_iter().map(|t| tape.constant(t)).collect();
        let bv = tape.constant(rows_tensor(&[b.to_vec()])?);
        let handles = self.emit_on_tape(&mut tape, &p, bv)?;
        let layers = handles.iter().map(|&(w, b)| (tape.value(w).clone(), tape.value(b).clone())).collect();
        Ok(ToyMapNet { layers })
    }
}

/// Trains the hypernetwork: each iteration draws one `b` and a batch of `a`.
pub fn train_situation3(
    f: &ToyMap,
    h: &ToyMap,
    lambda: f64,
    train_a: &[Vec<f64>],
    train_b: &[Vec<f64>],
    hyper: ToyHyperNet,
    config: &ToyTrainConfig,
) -> Result<ToyHyperNet> {
    let d = hyper.d;
    if train_a.is_empty() || train_b.is_empty() || train_a.iter().chain(train_b).any(|v| v.len() != d) {
        bail!(Dimension, "training inputs must be non-empty and {d}-dimensional");
    }
    let mut params = hyper.tensors();
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &params.iter().collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.iterations {
        let b0 = train_b[rng.random_range(0..train_b.len())].clone();
        let batch: Vec<Vec<f64>> = (0..config.batch).map(|_| train_a[rng.random_range(0..train_a.len())].clone()).collect();
        let mut tape = Tape::<f32>::new();
        let leaves: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let bv = tape.constant(rows_tensor(&[b0.clone()])?);
        let net = ToyHyperNet::from_tensors(d, hyper.width, &params).emit_on_tape(&mut tape, &leaves, bv)?;
        let a = tape.constant(rows_tensor(&batch)?);
        let b = tape.constant(rows_tensor(&vec![b0; config.batch])?);
        let x = map_on_tape(&mut tape, &net, a)?;
        let loss = toy_loss_on_tape(&mut tape, f, h, x, a, b, lambda)?;
        adam_step(&mut adam, &mut params, &tape, &leaves, loss)?;
    }
    Ok(ToyHyperNet::from_tensors(d, hyper.width, &params))
}

/// Aggregate relative gap `Σ(L(x) − L(x*)) / (Σ L(x*) + 1e-9)` of identity
/// objectives over `(a, b, x)` triples.
pub fn relative_gap(pairs: &[(Vec<f64>, Vec<f64>)], xs: &[Vec<f64>], lambda: f64) -> f64 {
    let (mut excess, mut opt) = (0.0, 0.0);
    for ((a, b), x) in pairs.iter().zip(xs) {
        let obj = ToyObjective::identity(a.clone(), b.clone(), lambda);
        let best = obj.loss(&closed_form(a, b, lambda));
        excess += obj.loss(x) - best;
        opt += best;
    }
    excess / (opt + 1e-9)
}

/// Held-out gap of a map network for a fixed `b0`.
pub fn situation2_gap(net: &ToyMapNet, b0: &[f64], lambda: f64, held_out: &[Vec<f64>]) -> Result<f64> {
    let xs = net.apply(held_out)?;
    let pairs: Vec<_> = held_out.iter().map(|a| (a.clone(), b0.to_vec())).collect();
    Ok(relative_gap(&pairs, &xs, lambda))
}

/// Held-out gap of a hypernetwork: one emitted map network per pair.
pub fn situation3_gap(hyper: &ToyHyperNet, lambda: f64, held_out: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut xs = Vec::with_capacity(held_out.len());
    for (a, b) in held_out {
        xs.push(hyper.emit(b)?.apply(std::slice::from_ref(a))?.remove(0));
    }
    Ok(relative_gap(held_out, &xs, lambda))
}

/// Relative reconstruction error `Σ‖net(a) − a‖ / Σ‖a‖`.
pub fn identity_error(net: &ToyMapNet, held_out: &[Vec<f64>]) -> Result<f64> {
    let xs = net.apply(held_out)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let err: f64 = xs.iter().zip(held_out).map(|(x, a)| norm(&x.iter().zip(a).map(|(p, q)| p - q).collect::<Vec<_>>())).sum();
    Ok(err / held_out.iter().map(|a| norm(a)).sum::<f64>())
}

/// One row of the suite report.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyResult {
    pub case: String,
    pub seed: u64,
    /// Case-specific error measure; compared against `threshold`.
    pub gap: f64,
    pub threshold: f64,
    pub steps: usize,
}

impl ToyResult {
    pub fn passed(&self) -> bool {
        self.gap <= self.threshold
    }
}

pub fn results_csv(results: &[ToyResult]) -> String {
    let rows: Vec<Vec<String>> =
        results.iter().map(|r| vec![r.case.clone(), r.seed.to_string(), format!("{:e}", r.gap), r.steps.to_string()]).collect();
    csv_string(&["case", "seed", "gap", "steps"], &rows)
}

/// Situation 1 against the closed form on `count` random instances with
/// `d ≤ 8` and `λ ∈ [0, 10]`; reports the worst absolute deviation.
pub fn situation1_oracle(seed: u64, count: usize, steps: usize) -> Result<ToyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let d = rng.random_range(1..=8);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lambda = rng.random_range(0.0..10.0);
        let obj = ToyObjective::identity(a, b, lambda);
        // Contraction factor 1 − 2η(1 + λ) = 1/2 for every instance.
        let x = solve_situation1(&obj, steps, 0.25 / (1.0 + lambda))?;
        let exact = obj.closed_form()?;
        worst = x.iter().zip(&exact).map(|(p, q)| (p - q).abs()).fold(worst, f64::max);
    }
    Ok(ToyResult { case: "situation1-identity".into(), seed, gap: worst, threshold: 1e-6, steps })
}

/// Situation 1 with a linear `f` in one dimension against a grid search.
pub fn situation1_grid(seed: u64) -> Result<ToyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obj = ToyObjective {
        f: ToyMap::Linear(vec![rng.random_range(0.5..2.0)]),
        h: ToyMap::Identity,
        a: vec![rng.random_range(-1.0..1.0)],
        b: vec![rng.random_range(-1.0..1.0)],
        lambda: rng.random_range(0.0..5.0),
    };
    let steps = 2000;
    let x = solve_situation1(&obj, steps, 0.05)?;
    let grid = grid_search_1d(&obj, -3.0, 3.0, 1e-4)?;
    Ok(ToyResult { case: "situation1-linear-grid".into(), seed, gap: (x[0] - grid).abs(), threshold: 1e-4, steps })
}

/// Situation 2 with `λ = 0`: the network must learn `a ↦ a`.
pub fn situation2_identity(seed: u64, config: &ToyTrainConfig) -> Result<ToyResult> {
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = sample_box(&mut rng, 512, d);
    let held = sample_box(&mut rng, 200, d);
    let net = ToyMapNet::init(d, config.width, &mut rng);
    let cfg = ToyTrainConfig { seed, ..config.clone() };
    let net = train_situation2(&ToyMap::Identity, &ToyMap::Identity, &[0.0; 2], 0.0, &train, net, &cfg)?;
    Ok(ToyResult { case: "situation2-lambda0".into(), seed, gap: identity_error(&net, &held)?, threshold: 0.05, steps: config.iterations })
}

/// Situation 2 with `λ = 1` against the closed-form optimum value.
pub fn situation2_oracle(seed: u64, config: &ToyTrainConfig) -> Result<ToyResult> {
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b0: Vec<f64> = sample_box(&mut rng, 1, d).remove(0);
    let train = sample_box(&mut rng, 512, d);
    let held = sample_box(&mut rng, 200, d);
    let net = ToyMapNet::init(d, config.width, &mut rng);
    let cfg = ToyTrainConfig { seed, ..config.clone() };
    let net = train_situation2(&ToyMap::Identity, &ToyMap::Identity, &b0, 1.0, &train, net, &cfg)?;
    Ok(ToyResult { case: "situation2-lambda1".into(), seed, gap: situation2_gap(&net, &b0, 1.0, &held)?, threshold: 0.05, steps: config.iterations })
}

/// Situation 3 with `λ = 1`, `d = 2`, `a, b ∈ [−1, 1]²` and 200 held-out pairs.
pub fn situation3_oracle(seed: u64, config: &ToyTrainConfig) -> Result<ToyResult> {
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_a = sample_box(&mut rng, 512, d);
    let train_b = sample_box(&mut rng, 512, d);
    let held: Vec<_> = sample_box(&mut rng, 200, d).into_iter().zip(sample_box(&mut rng, 200, d)).collect();
    let hyper = ToyHyperNet::init(d, config.width, config.hidden, &mut rng);
    let cfg = ToyTrainConfig { seed, ..config.clone() };
    let hyper = train_situation3(&ToyMap::Identity, &ToyMap::Identity, 1.0, &train_a, &train_b, hyper, &cfg)?;
    Ok(ToyResult { case: "situation3-hyper".into(), seed, gap: situation3_gap(&hyper, 1.0, &held)?, threshold: 0.10, steps: config.iterations })
}

/// Every oracle check for the identity objective family.
pub fn identity_suite(seed: u64) -> Result<Vec<ToyResult>> {
    let config = ToyTrainConfig::default();
    let cf = |a: f64, b: f64, l: f64, want: f64, name: &str| ToyResult {
        case: name.into(),
        seed,
        gap: (closed_form(&[a], &[b], l)[0] - want).abs(),
        threshold: 1e-12,
        steps: 0,
    };
    Ok(vec![
        cf(0.0, 1.0, 1.0, 0.5, "closed-form-symmetric"),
        cf(2.0, 0.0, 250.0, 2.0 / 251.0, "closed-form-heavy-lambda"),
        cf(0.7, -3.0, 0.0, 0.7, "closed-form-lambda0"),
        situation1_oracle(seed, 100, 200)?,
        situation1_grid(seed)?,
        situation2_identity(seed, &config)?,
        situation2_oracle(seed, &config)?,
        situation3_oracle(seed, &config)?,
    ])
}
