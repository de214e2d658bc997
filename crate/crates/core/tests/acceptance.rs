//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so criteria execute in order
//! on one thread and wall-clock limits mean what they say.
//!
//! A FAIL line is a result, not a crash: the binary exits non-zero on failed
//! criteria only with `ACCEPTANCE_STRICT=1`. Errors always exit non-zero.

mod common;

use std::time::{Duration, Instant};

use metastyle::cli::bench_report;
use metastyle::corpus::DeskCorpus;
use metastyle::explore::{identity_network, interpolate, lerp_hidden, texture_visualize, InterpolationSpec};
use metastyle::io::ppm::{decode_ppm, encode_ppm};
use metastyle::io::WeightFile;
use metastyle::metanet::{hidden_of, meta_forward, weights_from_hidden, HiddenState, DEFAULT_GROUP};
use metastyle::perceptual::{content_loss, style_loss, total_loss, PerceptualEncoder};
use metastyle::toylab::{situation1_oracle, situation3_oracle, ToyTrainConfig};
use metastyle::trainer::{train_fixed_content, train_meta, train_per_style, MetaModel, MetaTrainer, OwnedNetwork, TrainConfig};
use metastyle::transformnet::{transform_forward, FixedWeights, TransformArch, TransformWeights};
use metastyle::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("criterion {n}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

/// Everything criterion 3 produces that later criteria reuse.
struct Desk {
    arch: TransformArch,
    encoder: PerceptualEncoder,
    corpus: DeskCorpus,
    config: TrainConfig,
    init: MetaModel,
    model: MetaModel,
    trace: metastyle::trainer::LossTrace,
    per_style_ms: f64,
}

fn mean_loss(d: &Desk, fixed: &FixedWeights, gen: &TransformWeights, style: &Tensor<f32>) -> Result<f64> {
    let (_, sig) = d.encoder.encode_one(style)?;
    let mut sum = 0.0;
    for c in &d.corpus.eval_content {
        let y = transform_forward(&d.arch, fixed, gen, c)?;
        sum += total_loss(&d.encoder, &y, c, &sig, &d.config.weights)?.0;
    }
    Ok(sum / d.corpus.eval_content.len() as f64)
}

fn gradient_suite(r: &mut Report) {
    let t = Instant::now();
    let mut worst = (0.0f64, "");
    let mut checks = 0;
    for seed in 0..20 {
        for case in common::primitive_cases(seed) {
            let e = common::gradcheck(&*case.build, &case.inputs, 1e-4);
            if e > worst.0 {
                worst = (e, case.name);
            }
            checks += 1;
        }
        let case = common::composite_case(seed);
        let e = common::dircheck(&*case.build, &case.inputs, 1e-7, 3, seed);
        if e > worst.0 {
            worst = (e, case.name);
        }
        checks += 1;
    }
    let elapsed = t.elapsed();
    let pass = worst.0 <= 1e-5 && elapsed <= Duration::from_secs(120);
    r.line(1, pass, format!("{checks} checks over 20 seeds, worst rel. error {:.2e} ({}), {:.1}s", worst.0, worst.1, elapsed.as_secs_f64()));
}

fn toylab(r: &mut Report) -> Result<()> {
    let t = Instant::now();
    let s1 = situation1_oracle(SEED, 100, 200)?;
    let s3 = situation3_oracle(SEED, &ToyTrainConfig::default())?;
    let elapsed = t.elapsed();
    let pass = s1.gap <= 1e-6 && s3.gap <= 0.10 && s3.steps == 5000 && elapsed <= Duration::from_secs(300);
    r.line(
        2,
        pass,
        format!("situation 1 max deviation {:.2e} over 100 instances, situation 3 held-out gap {:.4} after {} iterations, {:.1}s", s1.gap, s3.gap, s3.steps, elapsed.as_secs_f64()),
    );
    Ok(())
}

fn meta_vs_per_style(r: &mut Report) -> Result<Desk> {
    let t = Instant::now();
    let arch = TransformArch::preset("desk-64")?;
    let encoder = PerceptualEncoder::builtin();
    let corpus = DeskCorpus::desk(SEED);
    let config = TrainConfig { m: 4, seed: SEED, ..TrainConfig::default() };
    let init = MetaModel::init(&arch, &encoder, &corpus.styles, DEFAULT_GROUP, &mut ChaCha8Rng::seed_from_u64(SEED))?;
    let (model, trace) = train_meta(&config, &init, &arch, &encoder, &corpus.content, &corpus.styles)?;
    let mut d = Desk { arch, encoder, corpus, config, init, model, trace, per_style_ms: 0.0 };

    let zero = TransformWeights::zeros(&d.arch);
    let mut worst = (0.0f64, 0.0f64);
    let mut per_style_ms = Vec::new();
    let mut details = Vec::new();
    for (i, style) in d.corpus.held_out.iter().enumerate() {
        let (gen, _) = meta_forward(&d.model.params, &d.arch, &d.encoder, style)?;
        let meta = mean_loss(&d, &d.model.fixed, &gen, style)?;
        let base = mean_loss(&d, &d.model.fixed, &zero, style)?;
        let start = OwnedNetwork::init(&d.arch, &mut ChaCha8Rng::seed_from_u64(SEED + 100 + i as u64));
        let ts = Instant::now();
        let (net, _) = train_per_style(&d.config, &start, &d.arch, &d.encoder, style, &d.corpus.content)?;
        per_style_ms.push(ts.elapsed().as_secs_f64() * 1e3);
        let per = mean_loss(&d, &net.fixed, &net.generated, style)?;
        worst = (worst.0.max(meta / per), worst.1.max(meta / base));
        details.push(format!("style {i}: meta {meta:.1}, per-style {per:.1}, zero {base:.1}"));
    }
    d.per_style_ms = per_style_ms.iter().sum::<f64>() / per_style_ms.len() as f64;
    let elapsed = t.elapsed();
    let pass = worst.0 <= 1.5 && worst.1 <= 0.5 && elapsed <= Duration::from_secs(30 * 60);
    r.line(
        3,
        pass,
        format!(
            "worst meta/per-style {:.3} (≤ 1.5), worst meta/zero {:.3} (≤ 0.5); {}; {:.0}s",
            worst.0,
            worst.1,
            details.join("; "),
            elapsed.as_secs_f64()
        ),
    );
    let first = d.trace.window_mean(0, 50).unwrap_or(f64::NAN);
    let last = d.trace.window_mean(d.trace.len().saturating_sub(50), 50).unwrap_or(f64::NAN);
    println!("  meta training: mean total over first 50 updates {first:.1}, last 50 {last:.1} (ratio {:.3})", last / first);
    Ok(d)
}

fn encode_speed(r: &mut Report, d: &Desk) -> Result<()> {
    let report = bench_report(&d.model, &d.arch, &d.encoder, &d.corpus.held_out[0], &d.corpus.eval_content[0], Some(d.per_style_ms), 0)?;
    let ratio = report.encode_ratio();
    r.line(
        4,
        ratio <= 1.0 / 50.0 && report.meta_forward_calls == 1,
        format!(
            "encode {:.1} ms with {} meta forward pass vs per-style training {:.0} ms: ratio {ratio:.2e} (≤ 2e-2)",
            report.encode.as_secs_f64() * 1e3,
            report.meta_forward_calls,
            d.per_style_ms
        ),
    );
    Ok(())
}

fn interpolation(r: &mut Report, d: &Desk) -> Result<()> {
    let p = &d.model.params;
    let h1 = hidden_of(p, &d.encoder, &d.corpus.held_out[0])?;
    let h2 = hidden_of(p, &d.encoder, &d.corpus.held_out[1])?;
    let ws = interpolate(p, &d.arch, &InterpolationSpec { h1: h1.clone(), h2: h2.clone(), alphas: vec![0.0, 0.5, 1.0] })?;
    let ends = ws[0] == weights_from_hidden(p, &d.arch, &h1)? && ws[2] == weights_from_hidden(p, &d.arch, &h2)?;
    let mid = lerp_hidden(&h1, &h2, 0.5)?;
    let exact_mid = mid.0.data().iter().zip(h1.0.data()).zip(h2.0.data()).all(|((m, a), b)| *m == (a + b) / 2.0);
    let hs = |v: [f32; 2]| HiddenState(Tensor::new(&[2], v.to_vec()).expect("two entries"));
    let toy = lerp_hidden(&hs([0.0, 2.0]), &hs([2.0, 0.0]), 0.5)? == hs([1.0, 1.0]);
    r.line(5, ends && exact_mid && toy, format!("endpoints bit-exact: {ends}; midpoint exact: {exact_mid}; [0,2]/[2,0] → [1,1]: {toy}"));
    Ok(())
}

fn determinism(r: &mut Report, d: &Desk) -> Result<()> {
    let (again, trace) = train_meta(&d.config, &d.init, &d.arch, &d.encoder, &d.corpus.content, &d.corpus.styles)?;
    let traces = trace.to_csv() == d.trace.to_csv() && again == d.model;

    let file = d.model.to_weights(&d.arch)?;
    let bytes = file.to_bytes()?;
    let weights = WeightFile::from_bytes(&bytes)?.to_bytes()? == bytes;
    let ppm = encode_ppm(&d.corpus.content[0])?;
    let image = encode_ppm(&decode_ppm(&ppm)?)? == ppm && decode_ppm(&ppm)? == d.corpus.content[0];

    let dir = tempfile::tempdir()?;
    let short = TrainConfig { iterations: 60, ..d.config.clone() };
    let (full, full_trace) = train_meta(&short, &d.init, &d.arch, &d.encoder, &d.corpus.content, &d.corpus.styles)?;
    let first = TrainConfig { iterations: 30, checkpoint_every: 30, checkpoint_dir: Some(dir.path().to_path_buf()), ..d.config.clone() };
    MetaTrainer::new(first, &d.init, &d.arch, &d.encoder, &d.corpus.content, &d.corpus.styles)?.run()?;
    let mut resumed = MetaTrainer::resume(short, dir.path(), &d.arch, &d.encoder, &d.corpus.content, &d.corpus.styles)?;
    resumed.run()?;
    let resume = resumed.state.trace.to_csv() == full_trace.to_csv() && resumed.model()? == full;

    r.line(
        6,
        traces && weights && image && resume,
        format!("repeat 2000-update run identical: {traces}; weight file round trip: {weights}; PPM round trip: {image}; resume at 30 of 60 identical: {resume}"),
    );
    Ok(())
}

fn texture_and_identity(r: &mut Report, d: &Desk) -> Result<()> {
    let styles = &d.corpus.styles;
    let sigs: Vec<_> = styles.iter().map(|s| d.encoder.encode_one(s).map(|x| x.1)).collect::<Result<_>>()?;
    let (mut wins, mut pairs) = (0, 0);
    for (i, s) in styles.iter().enumerate() {
        let (gen, _) = meta_forward(&d.model.params, &d.arch, &d.encoder, s)?;
        let tex = texture_visualize(&d.arch, &d.model.fixed, &gen, SEED + i as u64, d.arch.input_size)?;
        let (_, ts) = d.encoder.encode_one(&tex)?;
        let own = style_loss(&ts, &sigs[i])?;
        for (j, other) in sigs.iter().enumerate() {
            if j != i {
                pairs += 1;
                wins += usize::from(own < style_loss(&ts, other)?);
            }
        }
    }
    let tex_rate = wins as f64 / pairs as f64;

    let gens: Vec<_> = styles.iter().map(|s| meta_forward(&d.model.params, &d.arch, &d.encoder, s).map(|x| x.0)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut id_wins, mut all_wins) = (0, 0);
    for c in &d.corpus.eval_content {
        let (target, _) = d.encoder.encode_one(c)?;
        let preserve = |gen: &TransformWeights| -> Result<f64> {
            let y = transform_forward(&d.arch, &d.model.fixed, gen, c)?;
            content_loss(&d.encoder.encode_one(&y)?.0, &target)
        };
        let (id, _) = identity_network(&d.model.params, &d.arch, &d.encoder, c)?;
        let own = preserve(&id)?;
        let others = gens.iter().map(preserve).collect::<Result<Vec<_>>>()?;
        id_wins += usize::from(own < others[rng.random_range(0..styles.len())]);
        all_wins += others.iter().filter(|&&o| own < o).count();
    }
    let id_rate = id_wins as f64 / d.corpus.eval_content.len() as f64;
    r.line(
        7,
        tex_rate >= 0.8 && id_rate >= 0.8,
        format!("texture closer to own style on {wins}/{pairs} pairs ({tex_rate:.2}); identity network preserves content better on {id_wins}/{} images ({id_rate:.2})", d.corpus.eval_content.len()),
    );
    println!(
        "  identity network against every training style: better on {all_wins}/{} image-style pairs",
        d.corpus.eval_content.len() * styles.len()
    );
    Ok(())
}

fn fixed_content(r: &mut Report, d: &Desk) -> Result<()> {
    let config = TrainConfig { iterations: 40, ..d.config.clone() };
    let init = OwnedNetwork::init(&d.arch, &mut ChaCha8Rng::seed_from_u64(SEED));
    let report = train_fixed_content(&config, &init, &d.arch, &d.encoder, &d.corpus.content[0], &d.corpus.styles)?;
    let pass = report.status == "expected-failure" && !report.samples.is_empty() && report.trace.len() == 40;
    r.line(8, pass, format!("status {}, {} samples, {} updates", report.status, report.samples.len(), report.trace.len()));
    Ok(())
}

fn run(r: &mut Report) -> Result<()> {
    gradient_suite(r);
    toylab(r)?;
    let desk = meta_vs_per_style(r)?;
    encode_speed(r, &desk)?;
    interpolation(r, &desk)?;
    determinism(r, &desk)?;
    texture_and_identity(r, &desk)?;
    fixed_content(r, &desk)?;
    Ok(())
}

fn main() {
    let mut report = Report { failed: 0 };
    let t = Instant::now();
    if let Err(e) = run(&mut report) {
        println!("acceptance aborted: {e}");
        std::process::exit(1);
    }
    println!("acceptance: {} of 8 criteria failed, {:.0}s total", report.failed, t.elapsed().as_secs_f64());
    if report.failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
