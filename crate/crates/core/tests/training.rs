//! Training loop behavior: resume, averaging, abort on non-finite values and
//! best-epoch selection.

use tempfile::TempDir;
use uses_core::datasim::{make_example, make_separation_example, LoadedExample, MixSpec, SeparationSpec};
use uses_core::losses::LossConfig;
use uses_core::model::{load_checkpoint, UsesConfig, UsesModel};
use uses_core::training::{Task, TrainConfig, Trainer};
use uses_core::UsesError;

fn micro(outputs: usize) -> UsesConfig {
    UsesConfig {
        embed_dim: 8,
        bottleneck_dim: 8,
        num_blocks: 1,
        num_spatial_blocks: 1,
        tac_hidden: 8,
        mem_tokens: 2,
        heads: 2,
        num_outputs: outputs,
        ..UsesConfig::default()
    }
}

fn loss_cfg() -> LossConfig {
    LossConfig {
        mr_windows: vec![64, 128],
        ..LossConfig::default()
    }
}

fn train_cfg(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        peak_lr: 1e-3,
        warmup_steps: 2,
        batch_size: 2,
        chunk_seconds: 0.5,
        samples_per_epoch: 4,
        max_epochs,
        max_channels: 2,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn examples() -> Vec<LoadedExample> {
    [(0.0, 1, 1), (400.0, 2, 2), (0.0, 2, 3)]
        .into_iter()
        .map(|(t60_ms, num_channels, seed)| {
            let spec = MixSpec {
                snr_db: 5.0,
                t60_ms,
                num_channels,
                duration_s: 0.5,
                seed,
                ..MixSpec::default()
            };
            LoadedExample::Enhance(make_example(&spec).unwrap())
        })
        .collect()
}

fn trainer(max_epochs: usize) -> Trainer<f32> {
    Trainer::new(UsesModel::new(micro(1), 9).unwrap(), train_cfg(max_epochs), loss_cfg()).unwrap()
}

fn bits(model: &UsesModel<f32>) -> Vec<u32> {
    model.params().iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = examples();
    let mut straight = trainer(3);
    straight.fit(&data, &data, None, None).unwrap();

    let dir = TempDir::new().unwrap();
    let mut first = trainer(1);
    first.fit(&data, &data, Some(dir.path()), None).unwrap();
    let mut resumed = Trainer::<f32>::resume(dir.path(), train_cfg(3), loss_cfg()).unwrap();
    assert_eq!(resumed.state.step, 2);
    assert_eq!(resumed.optimizer().steps, 2);
    resumed.fit(&data, &data, Some(dir.path()), None).unwrap();

    assert_eq!(resumed.state, straight.state);
    assert_eq!(bits(&resumed.model), bits(&straight.model));
}

#[test]
fn duplicated_batch_gives_the_same_update() {
    let data = examples();
    let mut a = trainer(1);
    let mut b = trainer(1);
    let la = a.train_step(&data[..1]).unwrap();
    let lb = b.train_step(&[data[0].clone(), data[0].clone()]).unwrap();
    assert_eq!(la, lb);
    assert_eq!(bits(&a.model), bits(&b.model));
}

#[test]
fn non_finite_input_aborts_and_keeps_the_last_checkpoint() {
    let data = examples();
    let dir = TempDir::new().unwrap();
    let mut t = trainer(1);
    t.fit(&data, &data, Some(dir.path()), None).unwrap();
    let saved = bits(&t.model);

    let mut poisoned = data.clone();
    if let LoadedExample::Enhance(m) = &mut poisoned[0] {
        m.mixture.channel_mut(0)[10] = f64::NAN;
    }
    let mut resumed = Trainer::<f32>::resume(dir.path(), train_cfg(2), loss_cfg()).unwrap();
    let err = resumed.fit(&poisoned, &data, Some(dir.path()), None).unwrap_err();
    assert!(matches!(err, UsesError::NonFinite { .. }), "{err}");
    let on_disk = load_checkpoint::<f32>(dir.path().join("last.uses"), None).unwrap();
    assert_eq!(bits(&on_disk), saved);
}

#[test]
fn best_checkpoint_is_validation_argmin() {
    let data = examples();
    let dir = TempDir::new().unwrap();
    let mut t = trainer(4);
    let report = t.fit(&data, &data, Some(dir.path()), None).unwrap();
    let hist = &report.state.val_history;
    assert_eq!(hist.len(), 4);
    let argmin = (0..hist.len()).min_by(|&a, &b| hist[a].total_cmp(&hist[b])).unwrap();
    assert_eq!(report.state.best_epoch, Some(argmin + 1));
    let best = load_checkpoint::<f32>(dir.path().join("best.uses"), None).unwrap();
    let evaluated = Trainer::new(best, train_cfg(4), loss_cfg()).unwrap().evaluate(&data).unwrap();
    assert!((evaluated - hist[argmin]).abs() <= 1e-6 * hist[argmin].abs().max(1.0));
}

#[test]
fn separation_task_trains_with_pit() {
    let ex = make_separation_example(&SeparationSpec { duration_s: 0.5, ..SeparationSpec::default() }).unwrap();
    let data = vec![LoadedExample::Separate(ex)];
    let cfg = TrainConfig { task: Task::Separate, ..train_cfg(1) };
    let mut t = Trainer::new(UsesModel::<f32>::new(micro(2), 1).unwrap(), cfg.clone(), loss_cfg()).unwrap();
    let loss = t.train_step(&data).unwrap();
    assert!(loss.is_finite());

    let single = UsesModel::<f32>::new(micro(1), 1).unwrap();
    assert!(Trainer::new(single, cfg, loss_cfg()).is_err());
    let two = UsesModel::<f32>::new(micro(2), 1).unwrap();
    assert!(Trainer::new(two, train_cfg(1), loss_cfg()).is_err());
}
