use std::path::Path;
use std::time::Instant;

use seaice_core::model::Regime;
use seaice_core::store::{Catalog, SplitYears};
use seaice_core::synth::{generate, SynthConfig};
use seaice_core::train::{
    finetune, pretrain_then_finetune, train_s, RegionData, TrainConfig, TrainData, BEST_WEIGHTS, LAST_WEIGHTS,
    METRICS_FILE,
};
use seaice_core::Error;

fn data(size: usize, weather: bool) -> TrainData {
    let (grid, catalog) = generate(&SynthConfig::new(0, 3, size, size)).unwrap();
    TrainData::new(
        vec![RegionData {
            catalog,
            land: grid.land_mask,
        }],
        SplitYears::default(),
        weather,
    )
    .unwrap()
}

fn config(regime: Regime, d_out: usize, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(regime, d_out);
    c.epochs = epochs;
    c.pretrain_epochs = epochs;
    c.finetune_epochs = epochs;
    c.lr = 1e-3;
    c.base_channels = 4;
    c
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn two_epochs_reduce_loss_on_32x32() {
    let d = data(32, true);
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Regime::S, 3, 2);
    c.base_channels = 8;
    let t = Instant::now();
    let r = train_s(&c, &d, dir.path(), false).unwrap();
    eprintln!("2 epochs at 32x32: {:.1}s", t.elapsed().as_secs_f64());
    assert_eq!(r.history.len(), 2);
    let last = r.history.last().unwrap().train_loss;
    assert!(last < r.first_step_loss, "{last} vs initial {}", r.first_step_loss);
    for f in [BEST_WEIGHTS, LAST_WEIGHTS, METRICS_FILE, "manifest.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("dataset_hash = "));
    assert!(manifest.contains("channels = sic_t-6,"));
}

#[test]
fn same_seed_same_trajectory_and_weights() {
    let d = data(16, true);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = config(Regime::S, 3, 2);
    let ra = train_s(&c, &d, a.path(), false).unwrap();
    let rb = train_s(&c, &d, b.path(), false).unwrap();
    assert_eq!(ra.history, rb.history);
    assert_eq!(read(&a.path().join(LAST_WEIGHTS)), read(&b.path().join(LAST_WEIGHTS)));
    assert_eq!(read(&a.path().join(METRICS_FILE)), read(&b.path().join(METRICS_FILE)));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let d = data(16, false);
    let (full, part) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut c = config(Regime::S, 3, 3);
    c.include_weather = false;
    let uninterrupted = train_s(&c, &d, full.path(), false).unwrap();

    let mut first = c.clone();
    first.epochs = 1;
    train_s(&first, &d, part.path(), false).unwrap();
    let resumed = train_s(&c, &d, part.path(), true).unwrap();
    assert_eq!(resumed.history, uninterrupted.history);
    assert_eq!(read(&full.path().join(LAST_WEIGHTS)), read(&part.path().join(LAST_WEIGHTS)));
    assert_eq!(read(&full.path().join(BEST_WEIGHTS)), read(&part.path().join(BEST_WEIGHTS)));

    let mut other = c.clone();
    other.include_weather = true;
    let d2 = data(16, true);
    match train_s(&other, &d2, part.path(), true) {
        Err(Error::Incompatible(fields)) => assert!(fields.contains(&"include_weather".to_string())),
        r => panic!("expected incompatibility, got {:?}", r.err()),
    }
}

#[test]
fn empty_training_split_is_a_config_error() {
    let (grid, catalog) = generate(&SynthConfig::new(0, 2, 16, 16)).unwrap();
    // Two simulated years are 2020 and 2021: nothing up to 2019.
    let r = TrainData::new(
        vec![RegionData {
            catalog,
            land: grid.land_mask,
        }],
        SplitYears::default(),
        true,
    );
    assert!(matches!(r, Err(Error::Config(_))));
    assert!(matches!(
        TrainData::new(Vec::new(), SplitYears::default(), true),
        Err(Error::Config(_))
    ));
    let empty = Catalog::from_stacks(Vec::new());
    assert!(empty.is_err() || empty.unwrap().is_empty());
}

#[test]
fn finetune_requires_a_pretrained_checkpoint() {
    let d = data(16, false);
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Regime::R, 3, 1);
    c.include_weather = false;
    let missing = dir.path().join("nothing-here");
    assert!(matches!(
        finetune(&c, &d, &missing, dir.path(), false),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn curriculum_writes_both_stages() {
    let d = data(16, true);
    let dir = tempfile::tempdir().unwrap();
    let c = config(Regime::R, 3, 1);
    let (s1, s2) = pretrain_then_finetune(&c, &d, dir.path(), false).unwrap();
    assert!(dir.path().join("pretrain").join(BEST_WEIGHTS).exists());
    assert!(dir.path().join(BEST_WEIGHTS).exists());
    assert_eq!(s1.history.len(), 1);
    assert_eq!(s2.history.len(), 1);
    assert!(s2.initial_val_mae.is_finite());
    let m = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(m.contains("regime = r"));
    assert!(m.contains("stage = r"));
}

#[test]
fn merged_regions_train_together() {
    let mk = |region: &str, seed| {
        let mut s = SynthConfig::new(seed, 3, 16, 16);
        s.region = region.into();
        let (grid, catalog) = generate(&s).unwrap();
        RegionData {
            catalog,
            land: grid.land_mask,
        }
    };
    let d = TrainData::new(vec![mk("barents", 1), mk("laptev", 2)], SplitYears::default(), true).unwrap();
    assert_eq!(d.prep.regions.len(), 2);
    assert!(d.dataset_hash.starts_with("barents:"));
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Regime::S, 2, 1);
    c.regions = vec!["barents".into(), "laptev".into()];
    let r = train_s(&c, &d, dir.path(), false).unwrap();
    assert!(r.best_val_mae.is_finite());
}
