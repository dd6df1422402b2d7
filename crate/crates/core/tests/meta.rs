use dccdi::cli::ExperimentConfig;
use dccdi::fewshot::{gen_synth, Dataset, SynthConfig};
use dccdi::meta::{
    evaluate_baseline, meta_test_dccdi, stage2_train, BaselineHead, DccdiParams, EvalParams, Model,
};

/// Source classes for training and disjoint classes drawn through the same
/// mixer for testing.
fn split_pool(separation: f64, seed: u64) -> (Dataset, Dataset) {
    let cfg = SynthConfig {
        num_classes: 84,
        separation,
        visual_noise: 1.0,
        seed,
        mixer_seed: Some(11),
        ..ExperimentConfig::default().source_synth()
    };
    let (ds, _) = gen_synth(&cfg).unwrap();
    let (train, test): (Vec<_>, Vec<_>) = ds.samples().iter().cloned().partition(|s| s.label < 64);
    (Dataset::new(train).unwrap(), Dataset::new(test).unwrap())
}

fn params(episodes: usize, seed: u64) -> EvalParams {
    EvalParams {
        episodes,
        way: 5,
        shots: 5,
        queries: 15,
        seed,
        threads: 1,
    }
}

#[test]
fn stage2_beats_the_untrained_trunk_on_held_out_classes() {
    let cfg = ExperimentConfig::default();
    let mut gains = Vec::new();
    for seed in 0..3 {
        let (train, test) = split_pool(2.0, 500 + seed);
        let init = Model::new(&cfg.model, seed).unwrap();
        let mut p2 = cfg.stage2_params();
        p2.seed = seed;
        let (trained, _) = stage2_train(&init, &train, &p2).unwrap();
        let before = evaluate_baseline(&init, &test, BaselineHead::Prototypical, &params(600, seed)).unwrap();
        let after = evaluate_baseline(&trained, &test, BaselineHead::Prototypical, &params(600, seed)).unwrap();
        gains.push(after.mean_accuracy - before.mean_accuracy);
    }
    for g in &gains {
        assert!(*g >= 0.05, "gains {gains:?}");
    }
}

#[test]
fn inseparable_classes_sit_at_chance() {
    let cfg = SynthConfig {
        separation: 0.0,
        samples_per_class: 400,
        ..ExperimentConfig::default().target_synth()
    };
    let (ds, _) = gen_synth(&cfg).unwrap();
    let model = Model::new(&ExperimentConfig::default().model, 3).unwrap();
    let r = evaluate_baseline(&model, &ds, BaselineHead::Prototypical, &params(600, 3)).unwrap();
    assert!((r.mean_accuracy - 0.2).abs() <= r.ci95, "{} ± {}", r.mean_accuracy, r.ci95);
}

#[test]
fn interval_halves_when_episodes_quadruple() {
    let cfg = ExperimentConfig::default();
    let ds = cfg.target_dataset().unwrap();
    let model = Model::new(&cfg.model, 0).unwrap();
    let small = evaluate_baseline(&model, &ds, BaselineHead::Prototypical, &params(400, 7)).unwrap();
    let large = evaluate_baseline(&model, &ds, BaselineHead::Prototypical, &params(1600, 7)).unwrap();
    let ratio = small.ci95 / large.ci95;
    assert!((ratio - 2.0).abs() <= 0.4, "ratio {ratio}");
}

#[test]
fn meta_test_leaves_the_model_alone() {
    let cfg = ExperimentConfig::default();
    let ds = cfg.target_dataset().unwrap();
    let model = Model::new(&cfg.model, 1).unwrap();
    let before = serde_json::to_string(&model).unwrap();
    let d = DccdiParams::default();
    let a = meta_test_dccdi(&model, &ds, &params(20, 1), &d).unwrap();
    assert_eq!(serde_json::to_string(&model).unwrap(), before);
    let b = meta_test_dccdi(&model, &ds, &params(20, 1), &d).unwrap();
    assert_eq!(a, b);
}

#[test]
fn untrained_projection_still_evaluates_deterministically() {
    let cfg = ExperimentConfig::default();
    let ds = cfg.target_dataset().unwrap();
    let model = Model::new(&cfg.model, 2).unwrap();
    let d = DccdiParams {
        cca_steps: 0,
        ..DccdiParams::default()
    };
    let a = meta_test_dccdi(&model, &ds, &params(15, 4), &d).unwrap();
    let b = meta_test_dccdi(&model, &ds, &params(15, 4), &d).unwrap();
    assert_eq!(a.accuracies, b.accuracies);
    assert!(a.accuracies.iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn episode_accuracies_do_not_depend_on_the_run_length() {
    // episodes are seeded by index, so a longer run extends a shorter one
    let cfg = ExperimentConfig::default();
    let ds = cfg.target_dataset().unwrap();
    let model = Model::new(&cfg.model, 0).unwrap();
    let short = evaluate_baseline(&model, &ds, BaselineHead::Matching, &params(30, 9)).unwrap();
    let long = evaluate_baseline(&model, &ds, BaselineHead::Matching, &params(90, 9)).unwrap();
    assert_eq!(short.accuracies[..], long.accuracies[..30]);
}
