use csnet_core::checkpoint::Checkpoint;
use csnet_core::csnet::{CsNetHyper, LossConfig, LossVariant};
use csnet_core::pointcloud::{Dataset, DatasetSpec};
use csnet_core::train::{SubsetSource, TrainConfig, Trainer};

fn data(per_class: usize, points: usize) -> Dataset {
    Dataset::generate(&DatasetSpec {
        per_class,
        points_per_cloud: points,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn small(source: SubsetSource, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        k: 16,
        hyper: CsNetHyper {
            g: 4,
            c: 8,
            ..CsNetHyper::default()
        },
        source,
        ..TrainConfig::default()
    }
}

#[test]
fn joint_training_lowers_the_loss() {
    let ds = data(5, 64);
    let mut trainer = Trainer::new(small(SubsetSource::Csnet, 10, 1), ds.num_classes()).unwrap();
    let report = trainer.fit(&ds.train, &[], |_| {}).unwrap();
    let (first, last) = (&report.epochs[0], &report.epochs[9]);
    assert!(last.train_loss < first.train_loss, "{} -> {}", first.train_loss, last.train_loss);
    assert!(report.epochs.iter().all(|e| e.train_loss.is_finite() && e.test_accuracy.is_none()));
}

#[test]
fn full_clouds_are_learned() {
    let ds = data(20, 128);
    let cfg = TrainConfig {
        augment: false,
        ..small(SubsetSource::Full, 15, 2)
    };
    let mut trainer = Trainer::new(cfg, ds.num_classes()).unwrap();
    let report = trainer.fit(&ds.train, &ds.test, |_| {}).unwrap();
    let acc = report.final_test_accuracy().unwrap();
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn seeded_runs_are_identical() {
    let ds = data(5, 64);
    let run = || {
        let mut t = Trainer::new(small(SubsetSource::Csnet, 2, 7), ds.num_classes()).unwrap();
        let report = t.fit(&ds.train, &ds.test, |_| {}).unwrap();
        (report, t.checkpoint(&ds.class_names).to_bytes().unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn saved_pipelines_predict_the_same() {
    let ds = data(5, 64);
    let dir = tempfile::tempdir().unwrap();
    for source in [SubsetSource::Csnet, SubsetSource::Baseline("random".into()), SubsetSource::Full] {
        let mut trainer = Trainer::new(small(source.clone(), 1, 3), ds.num_classes()).unwrap();
        trainer.fit(&ds.train, &[], |_| {}).unwrap();
        let before = trainer.pipeline.evaluate(&ds.test).unwrap();
        let path = dir.path().join("model.ckpt");
        trainer.checkpoint(&ds.class_names).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.meta.class_names, ds.class_names);
        let after = loaded.pipeline().unwrap().evaluate(&ds.test).unwrap();
        assert_eq!(before, after, "{source:?}");
        assert_eq!(after.confusion.iter().flatten().sum::<usize>(), ds.test.len());
    }
}

#[test]
fn emd_only_training_leaves_the_classifier_untouched() {
    let ds = data(3, 64);
    let cfg = TrainConfig {
        loss: LossConfig {
            alpha: 1.0,
            beta: 0.0,
            variant: LossVariant::Emd,
        },
        ..small(SubsetSource::Csnet, 2, 4)
    };
    let mut trainer = Trainer::new(cfg, ds.num_classes()).unwrap();
    let before = trainer.pipeline.clone();
    trainer.fit(&ds.train, &[], |_| {}).unwrap();
    assert_eq!(before.classifier, trainer.pipeline.classifier);
    assert_eq!(before.csnet, trainer.pipeline.csnet);
}

#[test]
fn invalid_configs_and_inputs() {
    let ds = data(2, 64);
    assert!(Trainer::new(small(SubsetSource::Full, 0, 0), 8).is_err());
    assert!(Trainer::new(small(SubsetSource::Baseline("csnet".into()), 1, 0), 8).is_err());
    assert!(Trainer::new(small(SubsetSource::Full, 1, 0), 1).is_err());
    let mut t = Trainer::new(small(SubsetSource::Full, 1, 0), 8).unwrap();
    assert!(t.run_epoch(&[], 1).is_err());
    assert!(t.pipeline.evaluate(&[]).is_err());
    let mut too_big = Trainer::new(TrainConfig { k: 65, ..small(SubsetSource::Csnet, 1, 0) }, 8).unwrap();
    assert!(too_big.run_epoch(&ds.train, 1).is_err());
}
