//! Training loops: the meta network, the per-style baseline, pixel-space
//! descent, and the fixed-content mapping that is expected to fail.
//!
//! All network trainers share one loop. The model is held as an ordered
//! [`WeightFile`] so that Adam moments, checkpoints and the final structured
//! weights all use the same tensor order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{bail, Error, Result};
use crate::io::weights::WeightFile;
use crate::metanet::{generate_on_tape, hidden_on_tape, style_features, MetaNetParams, MetaTapeParams};
use crate::perceptual::{LossWeights, PerceptualEncoder, StyleSignature, TapeLoss};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transformnet::{forward_on_tape, FixedWeights, TransformArch, TransformWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Consecutive updates spent on one style.
    pub k: usize,
    /// Content images per update.
    pub m: usize,
    /// Number of Adam updates.
    pub iterations: usize,
    pub lr: f32,
    pub weights: LossWeights,
    pub seed: u64,
    /// Save a checkpoint every this many updates; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub content_dir: Option<PathBuf>,
    pub style_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 20,
            m: 8,
            iterations: 2000,
            lr: 1e-3,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            content_dir: None,
            style_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 {
            bail!(Usage, "k and m must be at least 1 (k={}, m={})", self.k, self.m);
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bail!(Usage, "learning rate must be positive, got {}", self.lr);
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            bail!(Usage, "checkpoint interval set without a checkpoint directory");
        }
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub style_id: usize,
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub total: f64,
}

/// One record per update, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<TraceRecord>,
}

impl LossTrace {
    pub const HEADER: &'static str = "iteration,style_id,content_loss,style_loss,tv_loss,total";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    /// Mean total over `window` records starting at `start`.
    pub fn window_mean(&self, start: usize, window: usize) -> Option<f64> {
        let end = start.checked_add(window)?;
        let slice = self.records.get(start..end)?;
        (window > 0).then(|| slice.iter().map(|r| r.total).sum::<f64>() / window as f64)
    }

    /// Floats are written with Rust's shortest round-trip formatting, so
    /// [`LossTrace::from_csv`] recovers every value exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.iteration, r.style_id, r.content, r.style, r.tv, r.total);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::HEADER) {
            bail!(Format, "trace CSV must start with {:?}", Self::HEADER);
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("trace CSV line {}: {line:?}", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(TraceRecord {
                iteration: f[0].parse().map_err(|_| bad())?,
                style_id: f[1].parse().map_err(|_| bad())?,
                content: num(f[2])?,
                style: num(f[3])?,
                tv: num(f[4])?,
                total: num(f[5])?,
            });
        }
        Ok(Self { records })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Which network a run trains; stored in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Meta,
    PerStyle,
    FixedContent,
}

impl RunKind {
    fn tag(self) -> &'static str {
        match self {
            RunKind::Meta => "meta",
            RunKind::PerStyle => "per-style",
            RunKind::FixedContent => "fixed-content",
        }
    }
}

/// Mutable state of a run: everything needed to continue it bit-exactly.
#[derive(Clone, Debug)]
pub struct RunState {
    pub kind: RunKind,
    pub iteration: usize,
    pub model: WeightFile,
    pub adam: AdamState,
    pub trace: LossTrace,
    rng: ChaCha8Rng,
    /// Styles still to visit this epoch, consumed from the back.
    queue: Vec<usize>,
    current_style: usize,
}

impl RunState {
    fn new(kind: RunKind, model: WeightFile, config: &TrainConfig) -> Self {
        let refs: Vec<&Tensor<f32>> = model.iter().map(|(_, t)| t).collect();
        let adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &refs);
        Self {
            kind,
            iteration: 0,
            model,
            adam,
            trace: LossTrace::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            queue: Vec::new(),
            current_style: 0,
        }
    }

    /// Next style index; reshuffles once every style has been seen.
    fn next_style(&mut self, count: usize) -> usize {
        if self.queue.is_empty() {
            self.queue = (0..count).collect();
            self.queue.shuffle(&mut self.rng);
        }
        self.queue.pop().expect("non-empty style corpus")
    }

    fn sample_batch(&mut self, count: usize, m: usize) -> Vec<usize> {
        (0..m).map(|_| self.rng.random_range(0..count)).collect()
    }

    /// Writes `model.mnw`, `optim.mnw`, `state.txt` and `trace.csv` into `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.model.save(dir.join("model.mnw"))?;
        let mut optim = WeightFile::new();
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            optim.insert(format!("adam.m.{i}"), m.clone())?;
            optim.insert(format!("adam.v.{i}"), v.clone())?;
        }
        optim.save(dir.join("optim.mnw"))?;
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let queue: Vec<String> = self.queue.iter().map(|q| q.to_string()).collect();
        let state = format!(
            "kind = {}\niteration = {}\nadam_step = {}\nrng_seed = {seed}\nrng_stream = {}\nrng_word_pos = {}\nstyle_queue = {}\ncurrent_style = {}\n",
            self.kind.tag(),
            self.iteration,
            self.adam.step,
            self.rng.get_stream(),
            self.rng.get_word_pos(),
            queue.join(","),
            self.current_style,
        );
        fs::write(dir.join("state.txt"), state)?;
        self.trace.write_csv(dir.join("trace.csv"))
    }

    /// Restores a checkpoint written by [`RunState::save_checkpoint`].
    pub fn load_checkpoint(dir: impl AsRef<Path>, config: &TrainConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let model = WeightFile::load(dir.join("model.mnw"))?;
        let optim = WeightFile::load(dir.join("optim.mnw"))?;
        let text = fs::read_to_string(dir.join("state.txt"))?;
        let kv = crate::io::config::parse_pairs(&text)?;
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Format(format!("checkpoint state lacks {k:?}")));
        let num = |k: &str| get(k)?.parse::<u128>().map_err(|_| Error::Format(format!("checkpoint field {k:?} is not a number")));
        let kind = match get("kind")? {
            "meta" => RunKind::Meta,
            "per-style" => RunKind::PerStyle,
            "fixed-content" => RunKind::FixedContent,
            other => bail!(Format, "unknown run kind {other:?}"),
        };
        let seed_hex = get("rng_seed")?;
        if seed_hex.len() != 64 {
            bail!(Format, "rng_seed must be 64 hex digits");
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| Error::Format("bad rng_seed".into()))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(num("rng_stream")? as u64);
        rng.set_word_pos(num("rng_word_pos")?);
        let queue = match get("style_queue")? {
            "" => Vec::new(),
            q => q.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| Error::Format("bad style_queue".into()))?,
        };
        let mut adam = AdamState::new(
            AdamConfig { lr: config.lr, ..AdamConfig::default() },
            &model.iter().map(|(_, t)| t).collect::<Vec<_>>(),
        );
        adam.step = num("adam_step")? as u64;
        for i in 0..model.len() {
            let shape = adam.m[i].shape().to_vec();
            adam.m[i] = optim.expect(&format!("adam.m.{i}"), &shape)?.clone();
            adam.v[i] = optim.expect(&format!("adam.v.{i}"), &shape)?.clone();
        }
        let trace = LossTrace::from_csv(&fs::read_to_string(dir.join("trace.csv"))?)?;
        let iteration = num("iteration")? as usize;
        if trace.len() != iteration {
            bail!(Format, "checkpoint trace has {} records for iteration {iteration}", trace.len());
        }
        Ok(Self {
            kind,
            iteration,
            model,
            adam,
            trace,
            rng,
            queue,
            current_style: num("current_style")? as usize,
        })
    }
}

/// Precomputed encoder outputs for a corpus; the encoder never changes.
struct Targets {
    content: Vec<Tensor<f32>>,
    signatures: Vec<StyleSignature>,
    features: Vec<Tensor<f32>>,
}

fn encode_contents(encoder: &PerceptualEncoder, images: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    images.iter().map(|c| Ok(encoder.encode_one(c)?.0 .0)).collect()
}

fn encode_styles(encoder: &PerceptualEncoder, images: &[Tensor<f32>]) -> Result<(Vec<StyleSignature>, Vec<Tensor<f32>>)> {
    let mut sigs = Vec::with_capacity(images.len());
    let mut feats = Vec::with_capacity(images.len());
    for s in images {
        sigs.push(encoder.encode_one(s)?.1);
        feats.push(style_features(encoder, s)?);
    }
    Ok((sigs, feats))
}

fn pairs(vars: &[Var]) -> Vec<(Var, Var)> {
    vars.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

fn read_loss(tape: &Tape<f32>, l: &TapeLoss, iteration: usize, style_id: usize) -> Result<TraceRecord> {
    let get = |v: Var| tape.value(v).item().map(f64::from);
    Ok(TraceRecord { iteration, style_id, content: get(l.content)?, style: get(l.style)?, tv: get(l.tv)?, total: get(l.total)? })
}

/// Shared update loop. `build` records the loss of one update on a fresh
/// tape given the model's leaves and returns it with the style id it used.
fn run_loop(
    state: &mut RunState,
    config: &TrainConfig,
    mut build: impl FnMut(&mut RunState, &mut Tape<f32>, &[Var]) -> Result<(TapeLoss, usize)>,
) -> Result<()> {
    while state.iteration < config.iterations {
        let t = state.iteration;
        let mut tape = Tape::<f32>::new();
        let leaves: Vec<Var> = state.model.iter().map(|(_, p)| tape.param(p.clone())).collect();
        let diagnose = |state: &RunState, e: Error| match e {
            Error::Numeric(msg) => {
                let last = state.trace.records.last().map_or("none".to_string(), |r| format!("{r:?}"));
                Error::Numeric(format!("training aborted at iteration {t}: {msg}; last finite record: {last}"))
            }
            e => e,
        };
        let (loss, style_id) = match build(state, &mut tape, &leaves) {
            Ok(v) => v,
            Err(e) => return Err(diagnose(state, e)),
        };
        let record = read_loss(&tape, &loss, t, style_id)?;
        if !record.total.is_finite() {
            return Err(diagnose(state, Error::Numeric(format!("non-finite loss {record:?}"))));
        }
        let mut grads = match tape.backward(loss.total) {
            Ok(g) => g,
            Err(e) => return Err(diagnose(state, e)),
        };
        let grads: Vec<Tensor<f32>> =
            leaves.iter().map(|&v| grads.take(v).expect("every parameter leaf receives a gradient")).collect();
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        let mut params: Vec<&mut Tensor<f32>> = state.model.tensors_mut().collect();
        state.adam.step(&mut params, &grad_refs)?;
        state.trace.records.push(record);
        state.iteration += 1;
        if config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                state.save_checkpoint(dir)?;
            }
        }
    }
    Ok(())
}

/// Meta network and fixed layers, trained jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaModel {
    pub params: MetaNetParams,
    pub fixed: FixedWeights,
}

impl MetaModel {
    /// Fresh model with fc1 whitened against the training styles.
    pub fn init(
        arch: &TransformArch,
        encoder: &PerceptualEncoder,
        styles: &[Tensor<f32>],
        group: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = MetaNetParams::init(arch, encoder.signature_len(), group, rng);
        params.whiten_inputs(&encode_styles(encoder, styles)?.1)?;
        Ok(Self { params, fixed: FixedWeights::init(arch, rng) })
    }

    pub fn to_weights(&self, arch: &TransformArch) -> Result<WeightFile> {
        let mut f = WeightFile::new();
        self.params.write_into(arch, &mut f)?;
        self.fixed.write_into(arch, &mut f)?;
        Ok(f)
    }

    pub fn from_weights(arch: &TransformArch, f: &WeightFile) -> Result<Self> {
        Ok(Self { params: MetaNetParams::read_from(arch, f)?, fixed: FixedWeights::read_from(arch, f)? })
    }
}

/// A complete transformation network owned by one style.
#[derive(Clone, Debug, PartialEq)]
pub struct OwnedNetwork {
    pub fixed: FixedWeights,
    pub generated: TransformWeights,
}

impl OwnedNetwork {
    pub fn init(arch: &TransformArch, rng: &mut impl Rng) -> Self {
        let fixed = FixedWeights::init(arch, rng);
        Self { fixed, generated: TransformWeights::init(arch, rng) }
    }

    pub fn to_weights(&self, arch: &TransformArch) -> Result<WeightFile> {
        let mut f = WeightFile::new();
        self.fixed.write_into(arch, &mut f)?;
        self.generated.write_into(arch, &mut f)?;
        Ok(f)
    }

    pub fn from_weights(arch: &TransformArch, f: &WeightFile) -> Result<Self> {
        Ok(Self { fixed: FixedWeights::read_from(arch, f)?, generated: TransformWeights::read_from(arch, f)? })
    }
}

fn check_corpus(name: &str, images: &[Tensor<f32>]) -> Result<()> {
    if images.is_empty() {
        bail!(Usage, "{name} corpus is empty");
    }
    Ok(())
}

/// The meta-network training loop over a content and a style corpus.
pub struct MetaTrainer<'a> {
    pub config: TrainConfig,
    arch: &'a TransformArch,
    encoder: &'a PerceptualEncoder,
    contents: &'a [Tensor<f32>],
    targets: Targets,
    group: usize,
    pub state: RunState,
}

impl<'a> MetaTrainer<'a> {
    pub fn new(
        config: TrainConfig,
        model: &MetaModel,
        arch: &'a TransformArch,
        encoder: &'a PerceptualEncoder,
        contents: &'a [Tensor<f32>],
        styles: &[Tensor<f32>],
    ) -> Result<Self> {
        let state = RunState::new(RunKind::Meta, model.to_weights(arch)?, &config);
        Self::with_state(config, state, model.params.group, arch, encoder, contents, styles)
    }

    /// Continues from a checkpoint directory.
    pub fn resume(
        config: TrainConfig,
        dir: impl AsRef<Path>,
        arch: &'a TransformArch,
        encoder: &'a PerceptualEncoder,
        contents: &'a [Tensor<f32>],
        styles: &[Tensor<f32>],
    ) -> Result<Self> {
        let state = RunState::load_checkpoint(dir, &config)?;
        if state.kind != RunKind::Meta {
            bail!(Usage, "checkpoint holds a {} run, not a meta run", state.kind.tag());
        }
        let group = MetaNetParams::read_from(arch, &state.model)?.group;
        Self::with_state(config, state, group, arch, encoder, contents, styles)
    }

    fn with_state(
        config: TrainConfig,
        state: RunState,
        group: usize,
        arch: &'a TransformArch,
        encoder: &'a PerceptualEncoder,
        contents: &'a [Tensor<f32>],
        styles: &[Tensor<f32>],
    ) -> Result<Self> {
        config.validate()?;
        check_corpus("content", contents)?;
        check_corpus("style", styles)?;
        let (signatures, features) = encode_styles(encoder, styles)?;
        let targets = Targets { content: encode_contents(encoder, contents)?, signatures, features };
        Ok(Self { config, arch, encoder, contents, targets, group, state })
    }

    pub fn run(&mut self) -> Result<()> {
        let Self { config, arch, encoder, contents, targets, group, state } = self;
        let (k, m, n_styles) = (config.k, config.m, targets.signatures.len());
        let n_meta = 2 + 2 * arch.generated_count();
        run_loop(state, config, |st, tape, leaves| {
            if st.iteration % k == 0 {
                st.current_style = st.next_style(n_styles);
            }
            let s = st.current_style;
            let batch = st.sample_batch(contents.len(), m);
            let p = MetaTapeParams { fc1: (leaves[0], leaves[1]), fc2: pairs(&leaves[2..n_meta]) };
            let fixed = pairs(&leaves[n_meta..]);
            let feats = tape.constant(targets.features[s].clone());
            let h = hidden_on_tape(tape, &p, feats)?;
            let gen = generate_on_tape(tape, arch, &p, *group, h)?;
            let x = tape.constant(Tensor::stack(&batch.iter().map(|&i| contents[i].clone()).collect::<Vec<_>>())?);
            let y = forward_on_tape(tape, arch, &fixed, &gen, x)?;
            let target = Tensor::stack(&batch.iter().map(|&i| targets.content[i].clone()).collect::<Vec<_>>())?;
            Ok((encoder.loss_on_tape(tape, y, &target, &targets.signatures[s], &config.weights)?, s))
        })
    }

    pub fn model(&self) -> Result<MetaModel> {
        MetaModel::from_weights(self.arch, &self.state.model)
    }
}

/// Runs [`MetaTrainer`] to completion.
pub fn train_meta(
    config: &TrainConfig,
    model: &MetaModel,
    arch: &TransformArch,
    encoder: &PerceptualEncoder,
    contents: &[Tensor<f32>],
    styles: &[Tensor<f32>],
) -> Result<(MetaModel, LossTrace)> {
    let mut t = MetaTrainer::new(config.clone(), model, arch, encoder, contents, styles)?;
    t.run()?;
    Ok((t.model()?, t.state.trace.clone()))
}

/// Trains one transformation network for a single style (`k` is ignored).
pub fn train_per_style(
    config: &TrainConfig,
    init: &OwnedNetwork,
    arch: &TransformArch,
    encoder: &PerceptualEncoder,
    style: &Tensor<f32>,
    contents: &[Tensor<f32>],
) -> Result<(OwnedNetwork, LossTrace)> {
    config.validate()?;
    check_corpus("content", contents)?;
    let mut state = RunState::new(RunKind::PerStyle, init.to_weights(arch)?, config);
    let content_targets = encode_contents(encoder, contents)?;
    let (_, signature) = encoder.encode_one(style)?;
    let n_fixed = 2 * init.fixed.layers.len();
    run_loop(&mut state, config, |st, tape, leaves| {
        let batch = st.sample_batch(contents.len(), config.m);
        let x = tape.constant(Tensor::stack(&batch.iter().map(|&i| contents[i].clone()).collect::<Vec<_>>())?);
        let y = forward_on_tape(tape, arch, &pairs(&leaves[..n_fixed]), &pairs(&leaves[n_fixed..]), x)?;
        let target = Tensor::stack(&batch.iter().map(|&i| content_targets[i].clone()).collect::<Vec<_>>())?;
        Ok((encoder.loss_on_tape(tape, y, &target, &signature, &config.weights)?, 0))
    })?;
    Ok((OwnedNetwork::from_weights(arch, &state.model)?, state.trace))
}

/// Gradient descent on the pixels of an image initialised to `content`.
/// Use `tv = 0` in `weights` for the plain perceptual objective.
pub fn gatys_descent(
    encoder: &PerceptualEncoder,
    content: &Tensor<f32>,
    style: &Tensor<f32>,
    steps: usize,
    step_size: f32,
    weights: &LossWeights,
) -> Result<(Tensor<f32>, LossTrace)> {
    weights.validate()?;
    let (target, _) = encoder.encode(content)?;
    let (_, signature) = encoder.encode_one(style)?;
    let mut image = content.clone();
    let mut trace = LossTrace::default();
    for t in 0..steps {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(image.clone());
        let loss = encoder.loss_on_tape(&mut tape, x, &target.0, &signature, weights)?;
        let record = read_loss(&tape, &loss, t, 0)?;
        let g = tape.backward(loss.total)?;
        let g = g.get(x).expect("pixel gradient");
        for (p, &d) in image.data_mut().iter_mut().zip(g.data()) {
            *p -= step_size * d;
        }
        image.check_finite("image")
            .map_err(|e| Error::Numeric(format!("pixel descent diverged at step {t}: {e}")))?;
        trace.records.push(record);
    }
    Ok((image, trace))
}

/// Outcome of the fixed-content mapping experiment.
#[derive(Clone, Debug)]
pub struct FixedContentReport {
    pub status: &'static str,
    pub network: OwnedNetwork,
    pub trace: LossTrace,
    /// `(style id, network output for that style image)`
    pub samples: Vec<(usize, Tensor<f32>)>,
}

impl FixedContentReport {
    pub const STATUS: &'static str = "expected-failure";

    pub fn summary(&self) -> String {
        let first = self.trace.window_mean(0, 1).unwrap_or(f64::NAN);
        let last = self.trace.records.last().map_or(f64::NAN, |r| r.total);
        format!(
            "experiment,status,iterations,first_total,last_total,samples\nfixed-content,{},{},{first},{last},{}\n",
            self.status,
            self.trace.len(),
            self.samples.len()
        )
    }
}

/// Trains a network that maps a style image to a stylised version of one
/// fixed content image. This direct mapping is known not to work; the
/// report is labelled accordingly and carries the outputs for inspection.
pub fn train_fixed_content(
    config: &TrainConfig,
    init: &OwnedNetwork,
    arch: &TransformArch,
    encoder: &PerceptualEncoder,
    content: &Tensor<f32>,
    styles: &[Tensor<f32>],
) -> Result<FixedContentReport> {
    config.validate()?;
    check_corpus("style", styles)?;
    let mut state = RunState::new(RunKind::FixedContent, init.to_weights(arch)?, config);
    let (target, _) = encoder.encode_one(content)?;
    let (signatures, _) = encode_styles(encoder, styles)?;
    let n_fixed = 2 * init.fixed.layers.len();
    run_loop(&mut state, config, |st, tape, leaves| {
        let s = st.next_style(styles.len());
        let x = tape.constant(styles[s].clone());
        let y = forward_on_tape(tape, arch, &pairs(&leaves[..n_fixed]), &pairs(&leaves[n_fixed..]), x)?;
        Ok((encoder.loss_on_tape(tape, y, &target.0, &signatures[s], &config.weights)?, s))
    })?;
    let network = OwnedNetwork::from_weights(arch, &state.model)?;
    let samples = styles
        .iter()
        .enumerate()
        .map(|(i, s)| Ok((i, crate::transformnet::transform_forward(arch, &network.fixed, &network.generated, s)?)))
        .collect::<Result<_>>()?;
    Ok(FixedContentReport { status: FixedContentReport::STATUS, network, trace: state.trace, samples })
}
