use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;
use uses_core::datasim::{load_manifest, LoadedExample};
use uses_core::model::UsesModel;
use uses_core::training::Trainer;
use uses_core::Result;

use crate::config::CliConfig;

pub const LOG_FILE: &str = "train_log.jsonl";

pub struct Args<'a> {
    pub config: Option<&'a Path>,
    pub data: &'a Path,
    pub val: Option<&'a Path>,
    pub out: &'a Path,
    pub resume: bool,
    pub seed: Option<u64>,
}

/// Loads every example of a manifest, resolving paths against its directory.
pub fn load_examples(manifest: &Path) -> Result<Vec<LoadedExample>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    load_manifest(manifest)?.iter().map(|e| e.load(base)).collect()
}

pub fn run(args: Args<'_>) -> Result<()> {
    let mut cfg = match args.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.loss.validate()?;

    let train = load_examples(args.data)?;
    let val = match args.val {
        Some(p) => load_examples(p)?,
        None => {
            log::warn!("no validation manifest; validating on the training data");
            train.clone()
        }
    };
    std::fs::create_dir_all(args.out)?;
    let mut trainer = if args.resume {
        let t = Trainer::<f32>::resume(args.out, cfg.train.clone(), cfg.loss.clone())?;
        if *t.model.config() != cfg.model {
            log::warn!("resumed checkpoint's model config differs from the given one; using the checkpoint's");
        }
        log::info!("resuming at step {} epoch {}", t.state.step, t.state.epoch);
        t
    } else {
        let model = UsesModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
        Trainer::new(model, cfg.train.clone(), cfg.loss.clone())?
    };
    log::info!(
        "{} parameters, {} training and {} validation examples",
        trainer.model.param_count(),
        train.len(),
        val.len()
    );

    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume)
        .truncate(!args.resume)
        .open(args.out.join(LOG_FILE))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "{}", json!({"config": cfg, "resume": args.resume}))?;
    let report = trainer.fit(&train, &val, Some(args.out), Some(&mut log))?;
    log.flush()?;
    log::info!(
        "finished at step {} epoch {}, best validation loss {:?} (epoch {:?})",
        report.state.step,
        report.state.epoch,
        report.state.best_val(),
        report.state.best_epoch
    );
    Ok(())
}
