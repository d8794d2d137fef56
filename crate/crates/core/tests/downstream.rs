use std::collections::BTreeMap;

use topoprior::ablation::{jobs_for, run_controls, Control, ControlData, ControlJob};
use topoprior::backbone::{train_backbone, BackboneConfig, BackboneTrainConfig};
use topoprior::corpus::{slice_windows, WindowSpec};
use topoprior::experiment::{planted_setup, PlantedExperiment};
use topoprior::forecast::{SeriesFeatures, Variant};
use topoprior::manifold::knn_weight_graph;
use topoprior::sheaf::{neural_sheaf_train, spectral_coordinates, NeuralSheafConfig, SpectralOptions};
use topoprior::synth::ar1_corpus;
use topoprior::{Error, Execution};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Measured over corpus seeds 0 to 4 (adapter seeds 0 to 2): spectral wins on
/// one draw by 1.0%, the learned sheaf on four by 0.1% to 0.8%.
#[test]
#[ignore = "ordering does not hold reliably on the planted corpus at desk scale"]
fn spectral_coordinates_match_or_beat_the_learned_sheaf_downstream() {
    let cfg = PlantedExperiment {
        seeds: vec![0, 1, 2],
        ..PlantedExperiment::default()
    };
    let setup = planted_setup(&cfg, Execution::Parallel).unwrap();
    let corpus = &setup.corpus;
    let warm = spectral_coordinates(corpus, corpus.group_labels(), &SpectralOptions::default(), Execution::Parallel)
        .unwrap();
    let neural_cfg = NeuralSheafConfig::default();
    let graph = knn_weight_graph(corpus, Some(neural_cfg.knn_k), Execution::Parallel).unwrap();
    let learned = neural_sheaf_train(corpus, &graph, &warm, &neural_cfg).unwrap();

    let score = |features: &SeriesFeatures| {
        let data = ControlData {
            corpus,
            windows: &setup.windows,
            features,
            group_fingerprints: &setup.group_fingerprints,
            cache: &setup.cache,
        };
        let table = run_controls(&data, &jobs_for(&[Control::TdaSheaf], &cfg.adapter), &cfg.seeds, Execution::Parallel)
            .unwrap();
        median(table.rows[0].per_seed_mae.clone())
    };
    let spectral = score(&setup.features);
    let neural = score(&SeriesFeatures {
        sheaf: Some(learned.coordinates.coords),
        ..setup.features.clone()
    });
    assert!(spectral <= neural, "spectral {spectral} vs neural {neural}");
}

#[test]
fn controls_leave_real_fingerprints_untouched_and_require_one_config() {
    let cfg = PlantedExperiment {
        seeds: vec![0],
        adapter: topoprior::adapter::AdapterConfig {
            epochs: 1,
            ..PlantedExperiment::default().adapter
        },
        ..PlantedExperiment::default()
    };
    let setup = planted_setup(&cfg, Execution::Sequential).unwrap();
    let before_features = setup.features.clone();
    let before_groups: BTreeMap<String, Vec<f64>> = setup.group_fingerprints.clone();
    let data = ControlData {
        corpus: &setup.corpus,
        windows: &setup.windows,
        features: &setup.features,
        group_fingerprints: &setup.group_fingerprints,
        cache: &setup.cache,
    };
    run_controls(&data, &jobs_for(&Control::ALL, &cfg.adapter), &cfg.seeds, Execution::Sequential).unwrap();
    assert_eq!(setup.features, before_features);
    assert_eq!(setup.group_fingerprints, before_groups);

    let mut jobs = jobs_for(&[Control::Vanilla], &cfg.adapter);
    jobs.push(ControlJob {
        control: Control::Tda,
        config: topoprior::adapter::AdapterConfig {
            hidden_dim: cfg.adapter.hidden_dim + 1,
            ..cfg.adapter.clone()
        },
    });
    assert!(matches!(
        run_controls(&data, &jobs, &cfg.seeds, Execution::Sequential),
        Err(Error::Contract(_))
    ));
}

#[test]
fn backbone_training_loss_falls_on_ar1() {
    for seed in 0..3 {
        let corpus = ar1_corpus(12, 120, 0.8, seed).unwrap();
        let windows = slice_windows(&corpus, &WindowSpec::rolling(16, 4).with_stride(2)).unwrap();
        let model = BackboneConfig {
            d_model: 16,
            layers: 1,
            heads: 2,
            head_dim: 8,
            ffn_dim: 32,
            dropout: 0.0,
            ..BackboneConfig::desk(16, 4)
        };
        let training = BackboneTrainConfig {
            epochs: 5,
            patience: None,
            ..BackboneTrainConfig::default()
        };
        let trained = train_backbone(
            &corpus,
            &windows,
            &SeriesFeatures::default(),
            &model,
            Variant::Vanilla,
            &training,
            seed,
        )
        .unwrap();
        let losses: Vec<f64> = trained.log.iter().map(|e| e.train_loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses[4] < losses[0], "seed {seed}: {losses:?}");
    }
}
