//! End-to-end runs at small scale.

use collapse_lab::data_model::{sample_latents, DataModelConfig, WordLaw};
use collapse_lab::diagnostics::{collapse_report, embedding_norm_stats};
use collapse_lab::network::{NetworkKind, Weights};
use collapse_lab::trainer::{make_dataset, sgd_train, test_accuracy, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_run(kind: NetworkKind, law: WordLaw, seed: u64) -> (f64, collapse_lab::trainer::TrainOutcome, DataModelConfig) {
    let cfg = DataModelConfig::with_law(3, 8, 4, 30, &law, 0.001).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents = sample_latents(&cfg, true, &mut rng).unwrap();
    let ds = make_dataset(&latents, &cfg, 10, &mut rng).unwrap();
    let tc = TrainConfig {
        d: 16,
        batch_size: 20,
        max_epochs: 300,
        seed,
        ..TrainConfig::default()
    };
    let out = sgd_train(kind, &ds, &tc).unwrap();
    let acc = test_accuracy(kind, &out.weights, &latents, &cfg).unwrap();
    (acc, out, cfg)
}

#[test]
fn plain_network_learns_uniform_task() {
    let (acc, out, _) = small_run(NetworkKind::Plain, WordLaw::Uniform, 1);
    assert!(acc >= 0.95, "accuracy {acc}");
    let last = out.history.last().unwrap().train_risk;
    assert!(last < 0.5 * out.initial_risk);
    assert!(out.max_abs_entry < 1e3);
}

#[test]
fn layer_norm_network_learns_and_aligns_concepts() {
    let kind = NetworkKind::layer_norm(1e-8).unwrap();
    let (acc, out, cfg) = small_run(kind, WordLaw::Zipf, 2);
    assert!(acc >= 0.95, "accuracy {acc}");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let latents = sample_latents(&cfg, true, &mut rng).unwrap();
    let report = collapse_report(kind, &out.weights, &latents, &cfg, 4).unwrap();
    // rare words keep part of their random init at this budget
    assert!(report.alignment.within_mean > 0.8, "{:?}", report.alignment);
    assert!(report.alignment.cross_mean < 0.0, "{:?}", report.alignment);
}

#[test]
fn training_is_bitwise_reproducible() {
    let (_, a, _) = small_run(NetworkKind::Plain, WordLaw::Zipf, 5);
    let (_, b, _) = small_run(NetworkKind::Plain, WordLaw::Zipf, 5);
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.history, b.history);
    let (_, c, _) = small_run(NetworkKind::Plain, WordLaw::Zipf, 6);
    assert_ne!(a.weights, c.weights);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (acc, out, cfg) = small_run(NetworkKind::Plain, WordLaw::Uniform, 3);
    let bytes = out.weights.to_bytes(NetworkKind::Plain);
    let (back, kind) = Weights::from_bytes(&bytes).unwrap();
    assert_eq!(kind, NetworkKind::Plain);
    assert_eq!(back, out.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let latents = sample_latents(&cfg, true, &mut rng).unwrap();
    assert_eq!(test_accuracy(kind, &back, &latents, &cfg).unwrap(), acc);
    let stats = embedding_norm_stats(back.w(), Some(cfg.s_c()));
    assert_eq!(stats.per_rank.len(), cfg.s_c());
}
