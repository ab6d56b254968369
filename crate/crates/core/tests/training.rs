mod common;

use common::DirectLoop;
use gradlex::checkpoint::Checkpoint;
use gradlex::data::{AugmentConfig, SyntheticSpec};
use gradlex::evolution::{run_training, RunConfig, Trainer};
use gradlex::nn::Architecture;
use gradlex::optim::MomentumPolicy;
use gradlex::selection::Strategy;

fn blobs() -> gradlex::data::Dataset {
    SyntheticSpec::gaussian_blobs(96, 5, 3, 4, 1.0).generate().unwrap()
}

fn base() -> RunConfig {
    RunConfig {
        generations: 3,
        batch_size: 16,
        seed: 9,
        augment: AugmentConfig::disabled(),
        model: Architecture::MlpSmall { hidden: 8 },
        ..RunConfig::default()
    }
}

#[test]
fn baseline_equals_direct_loop_with_augmentation() {
    let ds = blobs();
    let augment = AugmentConfig {
        enabled: true,
        crop_padding: 1,
        hflip_prob: 0.5,
    };
    let cfg = RunConfig {
        strategy: Strategy::SgdBaseline,
        augment,
        model: Architecture::ConvSmall { channels: 2 },
        ..base()
    };
    let out = run_training(&cfg, &ds).unwrap();
    let oracle = DirectLoop {
        seed: cfg.seed,
        epochs: cfg.generations,
        batch_size: cfg.batch_size,
        momentum: cfg.momentum,
        lr_max: cfg.lr_max,
        lr_min: cfg.lr_min,
        augment,
    }
    .train(&ds, &cfg.model);
    assert_eq!(out.parent.model, oracle);
}

#[test]
fn population_of_one_equals_baseline() {
    let ds = blobs();
    let baseline = run_training(&RunConfig { strategy: Strategy::SgdBaseline, ..base() }, &ds).unwrap();
    for strategy in [Strategy::Lexicase, Strategy::Random, Strategy::Tournament] {
        let one = run_training(&RunConfig { strategy, population: 1, ..base() }, &ds).unwrap();
        assert_eq!(one.checkpoint().to_bytes(), baseline.checkpoint().to_bytes(), "{strategy}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let ds = blobs();
    let runs: Vec<Vec<u8>> = [1, 3]
        .iter()
        .map(|&workers| {
            let cfg = RunConfig { population: 4, workers, ..base() };
            run_training(&cfg, &ds).unwrap().checkpoint().to_bytes()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ds = blobs();
    let dir = tempfile::tempdir().unwrap();
    for policy in [MomentumPolicy::ResetEachGeneration, MomentumPolicy::Inherit] {
        let full_cfg = RunConfig { population: 3, generations: 6, momentum_policy: policy, ..base() };
        let full = run_training(&full_cfg, &ds).unwrap();

        // An interrupted run keeps the full run's schedule.
        let half_cfg = RunConfig {
            generations: 3,
            lr_horizon: Some(full_cfg.default_horizon(ds.len())),
            ..full_cfg.clone()
        };
        let half = run_training(&half_cfg, &ds).unwrap();
        let path = dir.path().join("half.lxgd");
        half.checkpoint().save(&path).unwrap();

        let trainer = Trainer::new(&full_cfg, &ds).unwrap();
        let (parent, start) = trainer.resume_parent(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(start, 3);
        let resumed = trainer.run(parent, start, |_| Ok(())).unwrap();
        assert_eq!(resumed.checkpoint().to_bytes(), full.checkpoint().to_bytes(), "{policy}");
        assert_eq!(resumed.records, full.records[3..].iter().cloned().map(|mut r| {
            r.wall_time_ms = resumed.records[(r.generation - 3) as usize].wall_time_ms;
            r
        }).collect::<Vec<_>>());
    }
}

#[test]
fn no_momentum_equals_zero_momentum() {
    let ds = blobs();
    let none = run_training(
        &RunConfig { population: 3, momentum_policy: MomentumPolicy::NoMomentum, ..base() },
        &ds,
    )
    .unwrap();
    let zero = run_training(
        &RunConfig { population: 3, momentum_policy: MomentumPolicy::Inherit, momentum: 0.0, ..base() },
        &ds,
    )
    .unwrap();
    assert_eq!(none.parent.model, zero.parent.model);
    let reset = run_training(&RunConfig { population: 3, ..base() }, &ds).unwrap();
    assert_ne!(reset.parent.model, none.parent.model);
}

#[test]
fn records_serialize_as_json_lines() {
    let ds = blobs();
    let out = run_training(&RunConfig { population: 2, ..base() }, &ds).unwrap();
    for r in &out.records {
        let line = serde_json::to_string(r).unwrap();
        assert!(!line.contains('\n'));
        let back: gradlex::evolution::GenerationRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(&back, r);
        assert_eq!(r.train_accuracy.len(), 2);
    }
}

#[test]
fn lexicase_fits_two_moons_and_records_repeat() {
    let ds = SyntheticSpec::two_moons(400, 3, 0.1).generate().unwrap();
    let cfg = RunConfig {
        population: 4,
        generations: gradlex::evolution::parity_generations(80, 4),
        batch_size: 32,
        model: Architecture::MlpSmall { hidden: 32 },
        ..base()
    };
    let strip = |out: &gradlex::evolution::TrainingOutcome| -> Vec<serde_json::Value> {
        out.records
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_ms");
                v
            })
            .collect()
    };
    let a = run_training(&cfg, &ds).unwrap();
    let b = run_training(&cfg, &ds).unwrap();
    let c = run_training(&RunConfig { workers: 4, ..cfg.clone() }, &ds).unwrap();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a), strip(&c));
    let report = gradlex::analysis::evaluate(&a.parent.model, &ds).unwrap();
    assert!(report.accuracy >= 0.95, "train accuracy {}", report.accuracy);
}
