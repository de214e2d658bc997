use metastyle::toylab::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_descent_matches_the_closed_form() {
    for seed in 0..3 {
        let r = situation1_oracle(seed, 100, 200).unwrap();
        assert!(r.gap <= 1e-6, "seed {seed}: {}", r.gap);
    }
}

#[test]
fn linear_case_matches_grid_search() {
    for seed in 0..5 {
        let r = situation1_grid(seed).unwrap();
        assert!(r.passed(), "seed {seed}: {}", r.gap);
    }
}

#[test]
fn quadratic_descent_is_stationary() {
    let obj = ToyObjective { f: ToyMap::Quadratic, ..ToyObjective::identity(vec![0.8, -0.3], vec![0.1, 0.4], 0.5) };
    let x = solve_situation1(&obj, 3000, 0.05).unwrap();
    assert!(obj.grad(&x).iter().all(|g| g.abs() < 1e-9), "{:?}", obj.grad(&x));
}

#[test]
fn zero_lambda_learns_the_identity_map() {
    let r = situation2_identity(4, &ToyTrainConfig::default()).unwrap();
    assert!(r.gap <= 0.05, "{}", r.gap);
}

#[test]
fn trained_map_is_far_better_than_untrained() {
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let b0 = sample_box(&mut rng, 1, d).remove(0);
    let train = sample_box(&mut rng, 512, d);
    let held = sample_box(&mut rng, 200, d);
    let net = ToyMapNet::init(d, 16, &mut rng);
    let before = situation2_gap(&net, &b0, 1.0, &held).unwrap();
    let cfg = ToyTrainConfig { seed: 8, ..ToyTrainConfig::default() };
    let trained = train_situation2(&ToyMap::Identity, &ToyMap::Identity, &b0, 1.0, &train, net, &cfg).unwrap();
    let after = situation2_gap(&trained, &b0, 1.0, &held).unwrap();
    assert!(after <= 0.05, "{after}");
    assert!(after * 10.0 < before, "before {before} after {after}");
}

#[test]
fn hypernetwork_reaches_the_oracle_in_one_pass() {
    let r = situation3_oracle(0, &ToyTrainConfig::default()).unwrap();
    assert!(r.gap <= 0.10, "{}", r.gap);
}

#[test]
fn point_mass_b_reduces_to_situation_two() {
    let d = 2;
    let cfg = ToyTrainConfig { seed: 2, ..ToyTrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b0 = sample_box(&mut rng, 1, d).remove(0);
    let train = sample_box(&mut rng, 512, d);
    let held = sample_box(&mut rng, 200, d);

    let net = ToyMapNet::init(d, cfg.width, &mut ChaCha8Rng::seed_from_u64(20));
    let s2 = train_situation2(&ToyMap::Identity, &ToyMap::Identity, &b0, 1.0, &train, net, &cfg).unwrap();
    let gap2 = situation2_gap(&s2, &b0, 1.0, &held).unwrap();

    let hyper = ToyHyperNet::init(d, cfg.width, cfg.hidden, &mut ChaCha8Rng::seed_from_u64(20));
    let s3 = train_situation3(&ToyMap::Identity, &ToyMap::Identity, 1.0, &train, std::slice::from_ref(&b0), hyper, &cfg).unwrap();
    let pairs: Vec<_> = held.iter().map(|a| (a.clone(), b0.clone())).collect();
    let gap3 = situation3_gap(&s3, 1.0, &pairs).unwrap();

    assert!(gap3 <= 2.0 * gap2 && gap2 <= 2.0 * gap3, "situation 2: {gap2}, situation 3: {gap3}");
}

#[test]
fn toy_training_is_deterministic() {
    let cfg = ToyTrainConfig { iterations: 300, ..ToyTrainConfig::default() };
    assert_eq!(situation3_oracle(5, &cfg).unwrap(), situation3_oracle(5, &cfg).unwrap());
    assert_eq!(situation2_oracle(5, &cfg).unwrap(), situation2_oracle(5, &cfg).unwrap());
}

#[test]
fn suite_passes_and_reports_csv() {
    let results = identity_suite(0).unwrap();
    assert!(results.iter().all(ToyResult::passed), "{results:?}");
    let csv = results_csv(&results);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("case,seed,gap,steps"));
    assert_eq!(lines.count(), results.len());
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = ToyMapNet::init(2, 4, &mut rng);
    let bad = vec![vec![0.0; 3]];
    assert!(train_situation2(&ToyMap::Identity, &ToyMap::Identity, &[0.0, 0.0], 1.0, &bad, net, &ToyTrainConfig::default()).is_err());
    let hyper = ToyHyperNet::init(2, 4, 8, &mut rng);
    assert!(hyper.emit(&[1.0]).is_err());
}
