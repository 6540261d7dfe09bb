use tfponet::harness::{
    generate, read_config, run_eval, run_gen_data, run_oracle, run_train, train, Dataset, LossContext, RunConfig, Split, TrainingState,
};
use tfponet::Error;

fn small(name: &str) -> RunConfig {
    RunConfig { n_train: 20, n_test: 3, steps: 100, batch_size: 10, ..RunConfig::desk(name).unwrap() }
}

#[test]
fn dataset_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, test) = run_gen_data(&small("1d-high-contrast"), dir.path(), true).unwrap();
    let data = Dataset::read(&test).unwrap();
    assert!(data.reference.is_some() && data.oracle.is_some());
    let again = dir.path().join("again.tfpo");
    data.write(&again).unwrap();
    assert_eq!(std::fs::read(&test).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(Dataset::read(&again).unwrap(), data);
}

#[test]
fn container_rejects_other_versions_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let (train_path, _) = run_gen_data(&small("1d-smooth"), dir.path(), false).unwrap();
    let mut bytes = std::fs::read(&train_path).unwrap();
    let bad = dir.path().join("bad.tfpo");
    std::fs::write(&bad, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(Dataset::read(&bad), Err(Error::Format(_))));
    bytes[8] = 99;
    std::fs::write(&bad, &bytes).unwrap();
    assert!(matches!(Dataset::read(&bad), Err(Error::VersionMismatch { found: 99, .. })));
}

#[test]
fn training_is_bitwise_deterministic() {
    let config = small("1d-smooth");
    let data = generate(&config, Split::Train, false, false).unwrap();
    let (a, ta) = train(&config, &data, None).unwrap();
    let (b, tb) = train(&config, &data, None).unwrap();
    assert_eq!(ta.len(), 100);
    let bits = |s: &TrainingState| s.net.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert!(ta.iter().zip(&tb).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let config = small("2d-interface");
    let config = RunConfig { steps: 6, batch_size: 4, n_train: 8, ..config };
    let data = generate(&config, Split::Train, false, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (straight, _) = train(&config, &data, None).unwrap();
    let ctx = LossContext::new(&config, &data).unwrap();
    let mut state = TrainingState::new(&config, &ctx, &data).unwrap();
    state.run(&ctx, 3, None).unwrap();
    state.save(&dir.path().join("c.tfpo")).unwrap();
    let mut resumed = TrainingState::load(&dir.path().join("c.tfpo")).unwrap();
    resumed.run(&ctx, 3, None).unwrap();
    assert_eq!(straight.net.params(), resumed.net.params());
    assert_eq!(straight.optimizer.step, resumed.optimizer.step);
}

#[test]
fn desk_training_reduces_loss_a_thousandfold() {
    let config = RunConfig::desk("1d-smooth").unwrap();
    let data = generate(&config, Split::Train, false, true).unwrap();
    let (_, trace) = train(&config, &data, None).unwrap();
    let (first, last) = (trace[0].loss, trace.last().unwrap().loss);
    assert!(last < 1e-3 * first, "loss {first:e} -> {last:e}");
}

#[test]
fn single_sample_loss_drops_a_hundredfold() {
    let config = RunConfig { n_train: 1, batch_size: 1, steps: 5000, ..RunConfig::desk("1d-smooth").unwrap() };
    let data = generate(&config, Split::Train, false, false).unwrap();
    let (_, trace) = train(&config, &data, None).unwrap();
    let first = trace[0].loss;
    let best = trace.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    assert!(best < 1e-2 * first, "loss {first:e} -> {best:e}");
}

#[test]
fn mismatched_dataset_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let (train_path, _) = run_gen_data(&small("1d-smooth"), dir.path(), false).unwrap();
    let other = small("1d-singular");
    let err = run_train(&other, &train_path, &dir.path().join("run")).unwrap_err();
    assert!(matches!(err, Error::MeshMismatch(_)), "{err}");
    assert!(!dir.path().join("run/checkpoint.tfpo").exists());
    let coarse = RunConfig { train_resolution: [16, 1], ..small("1d-smooth") };
    assert!(matches!(run_train(&coarse, &train_path, &dir.path().join("run")), Err(Error::MeshMismatch(_))));
}

#[test]
fn eval_without_references_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { steps: 2, ..small("1d-smooth") };
    let (train_path, _) = run_gen_data(&config, dir.path(), false).unwrap();
    run_train(&config, &train_path, &dir.path().join("run")).unwrap();
    let err = run_eval(&dir.path().join("run/checkpoint.tfpo"), &train_path, &dir.path().join("eval")).unwrap_err();
    assert!(matches!(err, Error::MissingReference));
    assert!(matches!(run_oracle(&config, &train_path, &dir.path().join("oracle")), Err(Error::MissingReference)));
}

#[test]
fn manifest_rerun_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { steps: 30, ..small("1d-singular") };
    let (train_path, test_path) = run_gen_data(&config, &dir.path().join("data"), false).unwrap();
    run_train(&config, &train_path, &dir.path().join("a")).unwrap();
    let again = read_config(&dir.path().join("a/manifest.json")).unwrap();
    assert_eq!(again, config);
    run_train(&again, &train_path, &dir.path().join("b")).unwrap();
    let ea = run_eval(&dir.path().join("a/checkpoint.tfpo"), &test_path, &dir.path().join("ea")).unwrap();
    let eb = run_eval(&dir.path().join("b/checkpoint.tfpo"), &test_path, &dir.path().join("eb")).unwrap();
    assert_eq!(ea, eb);
    assert_eq!(std::fs::read(dir.path().join("ea/summary.json")).unwrap(), std::fs::read(dir.path().join("eb/summary.json")).unwrap());
    let profile = std::fs::read_to_string(dir.path().join("ea/profile_0.csv")).unwrap();
    assert!(profile.starts_with("x,y,side,reference,prediction,error\n"));
    let errors = std::fs::read_to_string(dir.path().join("ea/errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 1 + config.n_test);
}

#[test]
fn zero_samples_is_a_config_error() {
    let config = RunConfig { n_train: 0, ..small("1d-smooth") };
    let err = run_gen_data(&config, tempfile::tempdir().unwrap().path(), false).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 2);
}
