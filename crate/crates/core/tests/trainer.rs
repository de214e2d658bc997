use metastyle::corpus::{content_image, style_image};
use metastyle::metanet::meta_forward;
use metastyle::perceptual::{total_loss, LossWeights, PerceptualEncoder};
use metastyle::trainer::*;
use metastyle::transformnet::{transform_forward, TransformArch};
use metastyle::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 16;

struct Fixture {
    arch: TransformArch,
    encoder: PerceptualEncoder,
    contents: Vec<Tensor<f32>>,
    styles: Vec<Tensor<f32>>,
    model: MetaModel,
}

fn fixture() -> Fixture {
    let arch = TransformArch::build("mini", SIZE, 8, 2, 1).unwrap();
    let encoder = PerceptualEncoder::builtin();
    let contents: Vec<_> = (0..4).map(|i| content_image(i, SIZE)).collect();
    let styles: Vec<_> = (0..3).map(|i| style_image(100 + i, SIZE)).collect();
    let model = MetaModel::init(&arch, &encoder, &styles, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    Fixture { arch, encoder, contents, styles, model }
}

fn config(iterations: usize) -> TrainConfig {
    TrainConfig { k: 3, m: 2, iterations, seed: 11, ..TrainConfig::default() }
}

#[test]
fn zero_iterations_return_the_input_model() {
    let f = fixture();
    let (out, trace) = train_meta(&config(0), &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    assert_eq!(out, f.model);
    assert!(trace.is_empty());
}

#[test]
fn meta_training_is_deterministic() {
    let f = fixture();
    let a = train_meta(&config(7), &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    let b = train_meta(&config(7), &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    assert_eq!(a.1.to_csv(), b.1.to_csv());
    assert_eq!(a.0, b.0);
    let c = train_meta(&TrainConfig { seed: 12, ..config(7) }, &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn trace_is_ordered_and_styles_rotate_every_k() {
    let f = fixture();
    let (_, trace) = train_meta(&config(9), &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    assert!(trace.records.iter().enumerate().all(|(i, r)| r.iteration == i));
    let ids: Vec<usize> = trace.records.iter().map(|r| r.style_id).collect();
    for chunk in ids.chunks(3) {
        assert!(chunk.iter().all(|&s| s == chunk[0]), "{ids:?}");
    }
    // Without replacement: the first three blocks visit every style once.
    let mut firsts: Vec<usize> = ids.chunks(3).map(|c| c[0]).collect();
    firsts.sort();
    assert_eq!(firsts, vec![0, 1, 2]);
    assert_eq!(LossTrace::from_csv(&trace.to_csv()).unwrap(), trace);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let full = train_meta(&config(8), &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();

    let cfg = TrainConfig { checkpoint_every: 5, checkpoint_dir: Some(dir.path().to_path_buf()), ..config(5) };
    let mut first = MetaTrainer::new(cfg, &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    first.run().unwrap();
    drop(first);

    let mut resumed = MetaTrainer::resume(config(8), dir.path(), &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    assert_eq!(resumed.state.iteration, 5);
    resumed.run().unwrap();
    assert_eq!(resumed.state.trace.to_csv(), full.1.to_csv());
    assert_eq!(resumed.model().unwrap(), full.0);
}

#[test]
fn empty_corpora_are_usage_errors() {
    let f = fixture();
    let err = train_meta(&config(1), &f.model, &f.arch, &f.encoder, &[], &f.styles).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "{err}");
    let err = train_meta(&config(1), &f.model, &f.arch, &f.encoder, &f.contents, &[]).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "{err}");
    let init = OwnedNetwork::init(&f.arch, &mut ChaCha8Rng::seed_from_u64(0));
    let err = train_per_style(&config(1), &init, &f.arch, &f.encoder, &f.styles[0], &[]).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "{err}");
}

#[test]
fn invalid_config_is_rejected() {
    let f = fixture();
    for bad in [TrainConfig { k: 0, ..config(1) }, TrainConfig { m: 0, ..config(1) }, TrainConfig { lr: -1.0, ..config(1) }] {
        let err = train_meta(&bad, &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }
}

#[test]
fn divergence_aborts_with_the_last_finite_record() {
    let f = fixture();
    let init = OwnedNetwork::init(&f.arch, &mut ChaCha8Rng::seed_from_u64(0));
    let cfg = TrainConfig { lr: 1e30, ..config(20) };
    let err = train_per_style(&cfg, &init, &f.arch, &f.encoder, &f.styles[0], &f.contents).unwrap_err();
    let Error::Numeric(msg) = &err else { panic!("expected a numeric error, got {err}") };
    assert!(msg.contains("training aborted at iteration"), "{msg}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn training_leaves_the_encoder_untouched() {
    let f = fixture();
    let before = f.encoder.to_weights().unwrap().to_bytes().unwrap();
    train_meta(&config(2), &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    assert_eq!(f.encoder.to_weights().unwrap().to_bytes().unwrap(), before);
}

fn mean_loss(f: &Fixture, net: &OwnedNetwork, style: &Tensor<f32>) -> f64 {
    let (_, sig) = f.encoder.encode_one(style).unwrap();
    let w = LossWeights::default();
    f.contents
        .iter()
        .map(|c| {
            let y = transform_forward(&f.arch, &net.fixed, &net.generated, c).unwrap();
            total_loss(&f.encoder, &y, c, &sig, &w).unwrap().0
        })
        .sum::<f64>()
        / f.contents.len() as f64
}

#[test]
fn per_style_training_beats_the_untrained_network() {
    let f = fixture();
    let init = OwnedNetwork::init(&f.arch, &mut ChaCha8Rng::seed_from_u64(5));
    let cfg = TrainConfig { iterations: 500, ..config(500) };
    let (net, trace) = train_per_style(&cfg, &init, &f.arch, &f.encoder, &f.styles[0], &f.contents).unwrap();
    assert_eq!(trace.len(), 500);
    assert!(trace.records.iter().all(|r| r.style_id == 0));
    let (before, after) = (mean_loss(&f, &init, &f.styles[0]), mean_loss(&f, &net, &f.styles[0]));
    assert!(after < before, "before {before} after {after}");
    let again = train_per_style(&cfg, &init, &f.arch, &f.encoder, &f.styles[0], &f.contents).unwrap();
    assert_eq!(again.1, trace);
}

#[test]
fn meta_training_reduces_the_loss_of_generated_networks() {
    let f = fixture();
    let cfg = TrainConfig { iterations: 300, ..config(300) };
    let (trained, _) = train_meta(&cfg, &f.model, &f.arch, &f.encoder, &f.contents, &f.styles).unwrap();
    let net_for = |m: &MetaModel, s: &Tensor<f32>| OwnedNetwork {
        fixed: m.fixed.clone(),
        generated: meta_forward(&m.params, &f.arch, &f.encoder, s).unwrap().0,
    };
    for s in &f.styles {
        let before = mean_loss(&f, &net_for(&f.model, s), s);
        let after = mean_loss(&f, &net_for(&trained, s), s);
        assert!(after < before, "before {before} after {after}");
    }
}

#[test]
fn gatys_zero_steps_is_the_content_image() {
    let f = fixture();
    let (img, trace) = gatys_descent(&f.encoder, &f.contents[0], &f.styles[0], 0, 1e-3, &LossWeights { tv: 0.0, ..LossWeights::default() }).unwrap();
    assert_eq!(img, f.contents[0]);
    assert!(trace.is_empty());
}

#[test]
fn gatys_loss_keeps_falling() {
    let f = fixture();
    let w = LossWeights { tv: 0.0, ..LossWeights::default() };
    let (_, trace) = gatys_descent(&f.encoder, &f.contents[1], &f.styles[1], 200, 1e-3, &w).unwrap();
    let early = trace.window_mean(10, 20).unwrap();
    let late = trace.window_mean(180, 20).unwrap();
    assert!(late <= early, "steps 10..30: {early}, steps 180..200: {late}");
    assert!(trace.records[199].total <= trace.records[19].total);
}

#[test]
fn fixed_content_run_is_labelled_and_emits_samples() {
    let f = fixture();
    let init = OwnedNetwork::init(&f.arch, &mut ChaCha8Rng::seed_from_u64(9));
    let report = train_fixed_content(&config(6), &init, &f.arch, &f.encoder, &f.contents[0], &f.styles).unwrap();
    assert_eq!(report.status, "expected-failure");
    assert_eq!(report.samples.len(), f.styles.len());
    assert_eq!(report.trace.len(), 6);
    assert!(report.summary().contains("fixed-content,expected-failure,6,"));
    let again = train_fixed_content(&config(6), &init, &f.arch, &f.encoder, &f.contents[0], &f.styles).unwrap();
    assert_eq!(again.trace, report.trace);
}
