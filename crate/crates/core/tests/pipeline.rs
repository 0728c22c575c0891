use folkvae::corpus::{Dataset, DESK_CORPUS};
use folkvae::euclid::EuclideanSpec;
use folkvae::vae::{density_map, encode, init_params, train, Model, ModelConfig, ModelParams, TrainingConfig, HEATMAP_BINS};
use folkvae::workflow::{run_pipeline, Session};

fn small() -> ModelConfig {
    ModelConfig { encoder_hidden: 32, decoder_hidden: 32, ..ModelConfig::default() }
}

fn trained(dataset: &Dataset, epochs: usize) -> Model {
    let config = small();
    let training = TrainingConfig { epochs, ..TrainingConfig::default() };
    let (params, report) = train(dataset, &config, &training, |_| {}).unwrap();
    assert_eq!(report.epochs.len(), epochs);
    Model { config, training, params, corpus_fingerprint: dataset.fingerprint() }
}

#[test]
fn zero_epochs_return_initial_params() {
    let dataset = Dataset::from_abc(DESK_CORPUS, 1).unwrap();
    let training = TrainingConfig { epochs: 0, ..TrainingConfig::default() };
    let (params, report) = train(&dataset, &small(), &training, |_| {}).unwrap();
    assert_eq!(params, init_params(&small()).unwrap());
    assert!(report.epochs.is_empty());
}

#[test]
fn desk_corpus_meets_size_floor() {
    let dataset = Dataset::from_abc(DESK_CORPUS, 1).unwrap();
    assert!(dataset.len() >= 300, "{}", dataset.len());
    assert_eq!(dataset.train.len(), dataset.len() * 9 / 10);
}

#[test]
fn short_training_is_deterministic_and_round_trips() {
    let dataset = Dataset::from_abc(DESK_CORPUS, 3).unwrap();
    let mut epochs_seen = Vec::new();
    let config = small();
    let training = TrainingConfig { epochs: 2, ..TrainingConfig::default() };
    let (params, _) = train(&dataset, &config, &training, |e| epochs_seen.push(e.epoch)).unwrap();
    assert_eq!(epochs_seen, vec![1, 2]);
    let a = Model { config, training, params, corpus_fingerprint: dataset.fingerprint() };
    let b = trained(&dataset, 2);
    assert_eq!(a.to_bytes(), b.to_bytes());

    let bytes = a.to_bytes();
    let loaded = Model::load_for_corpus(&bytes, &dataset.fingerprint()).unwrap();
    assert_eq!(loaded.params, a.params);
    for example in dataset.validation.iter().take(20) {
        assert_eq!(encode(&loaded.params, &example.tokens), encode(&a.params, &example.tokens));
    }
}

#[test]
fn seeds_change_the_model() {
    let dataset = Dataset::from_abc(DESK_CORPUS, 1).unwrap();
    let training = TrainingConfig { epochs: 1, ..TrainingConfig::default() };
    let (a, _) = train(&dataset, &small(), &training, |_| {}).unwrap();
    let (b, _) = train(&dataset, &ModelConfig { seed: 2, ..small() }, &training, |_| {}).unwrap();
    assert_ne!(a, b);
}

#[test]
fn heatmap_conserves_measures() {
    let dataset = Dataset::from_abc(DESK_CORPUS, 1).unwrap();
    let model = trained(&dataset, 1);
    let measures: Vec<_> = dataset.all().map(|e| &e.tokens).collect();
    let map = density_map(&model.params, measures.iter().copied(), 0, 1).unwrap();
    assert_eq!(map.total(), dataset.len() as u64);
    assert_eq!(map.counts.len(), HEATMAP_BINS);

    let zero = ModelParams::zeros(&small());
    let map = density_map(&zero, measures.iter().copied(), 2, 3).unwrap();
    assert_eq!(map.counts[16][16], dataset.len() as u64);
}

#[test]
fn pipeline_on_a_trained_model_is_repeatable() {
    let dataset = Dataset::from_abc(DESK_CORPUS, 1).unwrap();
    let model = trained(&dataset, 1);
    let mut session = Session::new("s", "m");
    session
        .set_layers(vec![
            EuclideanSpec::new(3, 7, 2).unwrap(),
            EuclideanSpec::new(4, 16, 0).unwrap(),
            EuclideanSpec::new(2, 5, 2).unwrap(),
        ])
        .unwrap();
    session.set_length(2).unwrap();
    let first = run_pipeline(&mut session, &model, 1).unwrap();
    let second = run_pipeline(&mut session, &model, 1).unwrap();
    assert_eq!(first, second);
    assert_eq!(session.history.len(), 2);
    assert!((0.0..=1.0).contains(&first.divergence));
}
