use indexmap::IndexMap;
use oncode::graph_data::VolumeSeries;
use oncode::model::*;
use oncode::numkit::{gradient_check, ParamSet, Tensor};
use oncode::synth::{generate_cohort, Cohort, SynthConfig};

fn tiny(noise: f64, experiments: usize) -> Cohort {
    generate_cohort(&SynthConfig {
        genes: 20,
        tumors: 3,
        drugs: 4,
        druggable_genes: 4,
        experiments,
        noise,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder.hidden = 8;
    c.volume.hidden = 6;
    c.node.hidden = 12;
    c.node.decoder_hidden = 6;
    c
}

fn all_samples(c: &Cohort) -> Vec<Sample> {
    prepare_samples(
        &c.dataset,
        &(0..c.dataset.experiments.len()).collect::<Vec<_>>(),
    )
    .unwrap()
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let c = tiny(0.1, 5);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let p0 = model.init_dynamics(1);
    let out = train_dynamics(&model, &p0, &all_samples(&c), &train_config(0), 1).unwrap();
    assert_eq!(out.params, p0);
    assert!(out.losses.is_empty());
}

#[test]
fn tiny_cohort_loss_halves() {
    let c = tiny(0.1, 5);
    let model = Model::new(ModelConfig::default(), &c.dataset).unwrap();
    let samples = all_samples(&c);
    let p0 = model.init_dynamics(0);
    let out = train_dynamics(&model, &p0, &samples, &train_config(200), 0).unwrap();
    let pairs: Vec<_> = samples.iter().map(|s| (s, None)).collect();
    let before = dynamics_loss(&model, &p0, &pairs).unwrap();
    let after = dynamics_loss(&model, &out.params, &pairs).unwrap();
    assert!(after <= 0.5 * before, "{before} -> {after}");
}

#[test]
fn single_instance_is_fit_exactly() {
    let c = tiny(0.0, 3);
    let model = Model::new(ModelConfig::default(), &c.dataset).unwrap();
    let samples = all_samples(&c)[..1].to_vec();
    let out = train_dynamics(
        &model,
        &model.init_dynamics(4),
        &samples,
        &train_config(500),
        4,
    )
    .unwrap();
    let mse = dynamics_loss(&model, &out.params, &[(&samples[0], None)]).unwrap();
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn same_seed_trains_identically() {
    let c = tiny(0.1, 5);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let samples = all_samples(&c);
    let cfg = TrainConfig {
        epochs: 5,
        windows: vec![7.0, 14.0],
        batch_size: 2,
        chunk_size: 1,
        ..TrainConfig::default()
    };
    let a = train_dynamics(&model, &model.init_dynamics(9), &samples, &cfg, 9).unwrap();
    let b = train_dynamics(&model, &model.init_dynamics(9), &samples, &cfg, 9).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.losses, b.losses);
    let other = train_dynamics(&model, &model.init_dynamics(9), &samples, &cfg, 10).unwrap();
    assert_ne!(a.losses, other.losses);
}

#[test]
fn halving_the_step_barely_moves_a_trained_model() {
    let c = tiny(0.1, 5);
    let cfg = small_config();
    let model = Model::new(cfg.clone(), &c.dataset).unwrap();
    let samples = all_samples(&c);
    let out = train_dynamics(
        &model,
        &model.init_dynamics(2),
        &samples,
        &train_config(60),
        2,
    )
    .unwrap();
    let mut fine_cfg = cfg;
    fine_cfg.node.step /= 2.0;
    let fine = Model::new(fine_cfg, &c.dataset).unwrap();
    for s in &samples {
        let grid = s.series.times();
        let a = model
            .predict_trajectory(&out.params, s, Some(14.0), grid)
            .unwrap()
            .volumes;
        let b = fine
            .predict_trajectory(&out.params, s, Some(14.0), grid)
            .unwrap()
            .volumes;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-3 * y.abs(), "{x} vs {y}");
        }
    }
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let c = tiny(0.1, 3);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let mut sample = all_samples(&c).swap_remove(0);
    let t = sample.series.times()[..3].to_vec();
    let v = sample.series.volumes()[..3].to_vec();
    sample.series = VolumeSeries::new(t, v).unwrap();
    let params = model.init_dynamics(5);
    let inputs: IndexMap<String, Tensor> =
        params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let report = gradient_check(
        &inputs,
        |tape, b| dynamics_loss_tape(&model, tape, &b.as_bound(), &[(&sample, Some(2.0))]),
        1e-5,
        1e-4,
    )
    .unwrap();
    let worst = report
        .inputs
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .unwrap();
    assert!(report.passed(), "{} at {:e}", worst.name, worst.rel_error);
}

#[test]
fn checkpoint_roundtrip_gives_identical_predictions() {
    let c = tiny(0.1, 5);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let samples = all_samples(&c);
    let out = train_dynamics(
        &model,
        &model.init_dynamics(3),
        &samples,
        &train_config(3),
        3,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint {
        meta: CheckpointMeta {
            kind: CheckpointKind::Dynamics,
            model: model.config.clone(),
            vocabulary: model.vocabulary.clone(),
            seed: 3,
            fold: None,
        },
        params: out.params.clone(),
    };
    save_checkpoint(&ck, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    let restored = Model::for_checkpoint(&back.meta, &c.dataset).unwrap();
    for s in &samples {
        let a = model
            .predict_trajectory(&out.params, s, Some(7.0), s.series.times())
            .unwrap();
        let b = restored
            .predict_trajectory(&back.params, s, Some(7.0), s.series.times())
            .unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.volumes), bits(&b.volumes));
    }
}

#[test]
fn checkpoint_refuses_other_vocabulary() {
    let c = tiny(0.1, 5);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let mut meta = CheckpointMeta {
        kind: CheckpointKind::Dynamics,
        model: model.config.clone(),
        vocabulary: model.vocabulary.clone(),
        seed: 0,
        fold: None,
    };
    meta.vocabulary.drugs[0] = "OTHER".into();
    let err = Model::for_checkpoint(&meta, &c.dataset)
        .unwrap_err()
        .to_string();
    assert!(err.contains("drug"), "{err}");
}

#[test]
fn without_graph_encoder_there_are_no_encoder_tensors() {
    let c = tiny(0.1, 5);
    let mut cfg = small_config();
    cfg.use_graph_encoder = false;
    let model = Model::new(cfg, &c.dataset).unwrap();
    let p = model.init_dynamics(0);
    assert!(p.names().all(|n| !n.starts_with("enc.")));
    assert!(model.init_classifier(0).is_err());
    let with = Model::new(small_config(), &c.dataset).unwrap();
    assert!(with.init_dynamics(0).names().any(|n| n.starts_with("enc.")));
    assert!(with.beta_dim() > model.beta_dim());
}

#[test]
fn mismatched_parameters_are_rejected() {
    let c = tiny(0.1, 5);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let mut p = model.init_dynamics(0);
    let name = p.names().next().unwrap().clone();
    p.insert(&name, Tensor::zeros(1, 1));
    assert!(train_dynamics(&model, &p, &all_samples(&c), &train_config(1), 0).is_err());
    assert!(train_dynamics(
        &model,
        &ParamSet::new(),
        &all_samples(&c),
        &train_config(1),
        0
    )
    .is_err());
}

#[test]
fn classifier_learns_training_labels() {
    let c = tiny(0.1, 6);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let samples = all_samples(&c);
    let p0 = model.init_classifier(0).unwrap();
    let before = classifier_cross_entropy(&model, &p0, &samples).unwrap();
    let out = train_classifier(&model, &p0, &samples, &train_config(100), 0).unwrap();
    let after = classifier_cross_entropy(&model, &out.params, &samples).unwrap();
    assert!(after < before, "{before} -> {after}");
    let (labels, probs) = classifier_scores(&model, &out.params, &samples).unwrap();
    assert_eq!(labels.len(), probs.len());
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn evaluation_scores_points_after_the_window() {
    let c = tiny(0.1, 5);
    let model = Model::new(small_config(), &c.dataset).unwrap();
    let samples = all_samples(&c);
    let p = model.init_dynamics(0);
    let ev = evaluate_dynamics(&model, &p, &samples, Some(14.0)).unwrap();
    assert_eq!(ev.predictions.len(), samples.len());
    for pr in &ev.predictions {
        assert!(pr.tgi_predicted.is_some());
        let csv = pr.trajectory_csv();
        assert!(csv.starts_with(TRAJECTORY_CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + pr.times.len());
    }
    let short = evaluate_dynamics(&model, &p, &samples, Some(2.0)).unwrap();
    assert!(short.predictions.iter().all(|p| p.tgi_predicted.is_none()));
    assert!(short.tgi_regression.is_none());
}
