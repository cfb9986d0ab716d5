//! The training loop: chunked examples, per-example gradients averaged over
//! a batch, clipped Adam updates on the warmup/plateau schedule, validation
//! every epoch and checkpoints of the last and best states.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datasim::{chunk, shuffle_channels, LoadedExample, SeparationExample};
use crate::dsp::{variance_normalize, AudioBuffer};
use crate::error::{Result, UsesError};
use crate::losses::{LossConfig, MultiResL1};
use crate::model::checkpoint::{decode_container, encode_container, write_atomic};
use crate::model::{load_checkpoint, save_checkpoint, MemoryMode, UsesModel};
use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::training::adam::{clip_global_norm, Adam, AdamParams};
use crate::training::config::{Task, TrainConfig};
use crate::training::schedule::{lr_with_halvings, PlateauTracker};

pub const LAST_CHECKPOINT: &str = "last.uses";
pub const LAST_STATE: &str = "last.state";
pub const BEST_CHECKPOINT: &str = "best.uses";

/// Progress that a resumed run continues from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    /// Optimizer updates applied.
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub halvings: usize,
    pub plateau: PlateauTracker,
    pub val_history: Vec<f64>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: Option<usize>,
}

impl TrainState {
    pub fn best_val(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_history[e - 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub state: TrainState,
    /// Mean loss of the last batch.
    pub last_loss: f64,
}

fn slice(audio: &AudioBuffer, start: usize, len: usize) -> Result<AudioBuffer> {
    let end = (start + len).min(audio.len());
    let channels = (0..audio.channels())
        .map(|c| {
            let mut v = audio.channel(c)[start..end].to_vec();
            v.resize(len, 0.0);
            v
        })
        .collect();
    AudioBuffer::new(channels, audio.sample_rate())
}

/// Splits every example into `seconds`-long pieces (last one zero-padded).
pub fn chunk_examples(examples: &[LoadedExample], seconds: f64) -> Result<Vec<LoadedExample>> {
    let mut out = Vec::new();
    for ex in examples {
        match ex {
            LoadedExample::Enhance(m) => out.extend(chunk(m, seconds)?.into_iter().map(LoadedExample::Enhance)),
            LoadedExample::Separate(s) => {
                let rate = s.mixture.sample_rate();
                let len = (seconds * rate as f64).round() as usize;
                if len == 0 {
                    return Err(UsesError::Config(format!("chunk length must be positive, got {seconds} s")));
                }
                for start in (0..s.mixture.len()).step_by(len) {
                    out.push(LoadedExample::Separate(SeparationExample {
                        mixture: slice(&s.mixture, start, len)?,
                        sources: slice(&s.sources, start, len)?,
                        spec: s.spec.clone(),
                    }));
                }
            }
        }
    }
    Ok(out)
}

/// Conditioning group an example is trained and validated with.
pub fn example_mode(ex: &LoadedExample) -> MemoryMode {
    match ex {
        LoadedExample::Enhance(m) => m.mode(),
        LoadedExample::Separate(_) => MemoryMode::Denoise,
    }
}

/// Loss of one example on `tape`. Inputs and targets share the mixture's
/// variance normalization.
pub fn example_loss<T: Scalar>(
    model: &UsesModel<T>,
    tape: &mut Tape<T>,
    bound: &[Var],
    ex: &LoadedExample,
    task: Task,
    mr: &MultiResL1,
) -> Result<Var> {
    let mode = example_mode(ex);
    let (mixture, target) = match (ex, task) {
        (LoadedExample::Enhance(m), Task::Enhance) => (&m.mixture, m.target(mode)?),
        (LoadedExample::Separate(s), Task::Separate) => (&s.mixture, s.sources.clone()),
        _ => {
            return Err(UsesError::Config(format!(
                "example kind does not match the {task:?} task"
            )))
        }
    };
    let (normalized, scale) = variance_normalize(mixture);
    let target = target.map(|v| v / scale);
    let wave = tape.constant(normalized.to_tensor()?);
    let out = model.forward(tape, bound, wave, mixture.sample_rate(), mode)?;
    let reference = tape.constant(target.to_tensor()?);
    let loss = match task {
        Task::Enhance => {
            let est = tape.narrow(out, 0, 0, 1)?;
            mr.loss(tape, est, reference)?.loss
        }
        Task::Separate => {
            let (s_out, s_ref) = (tape.shape(out)[0], target.channels());
            if s_out != s_ref {
                return Err(UsesError::Shape(format!(
                    "model has {s_out} outputs, example has {s_ref} sources"
                )));
            }
            tape.pit_si_snr_loss(out, reference)?.0
        }
    };
    let v = tape.value(loss).item().as_f64();
    if !v.is_finite() {
        return Err(UsesError::NonFinite {
            node: "loss".into(),
            op: format!("{task:?}"),
            detail: format!("{v}"),
        });
    }
    Ok(loss)
}

pub struct Trainer<T: Scalar> {
    pub model: UsesModel<T>,
    pub cfg: TrainConfig,
    pub state: TrainState,
    loss: MultiResL1,
    opt: Adam<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: UsesModel<T>, cfg: TrainConfig, loss_cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.task == Task::Enhance && model.config().num_outputs != 1 {
            return Err(UsesError::Config(format!(
                "enhancement training needs num_outputs = 1, got {}",
                model.config().num_outputs
            )));
        }
        if cfg.task == Task::Separate && model.config().num_outputs < 2 {
            return Err(UsesError::Config("separation training needs num_outputs >= 2".into()));
        }
        let opt = Adam::new(model.params())?;
        Ok(Trainer {
            model,
            cfg,
            state: TrainState::default(),
            loss: MultiResL1::new(loss_cfg)?,
            opt,
        })
    }

    pub fn optimizer(&self) -> &Adam<T> {
        &self.opt
    }

    fn adam_params(&self) -> AdamParams {
        AdamParams {
            beta1: self.cfg.adam_beta1,
            beta2: self.cfg.adam_beta2,
            eps: self.cfg.adam_eps,
        }
    }

    /// Learning rate of the next update.
    pub fn next_lr(&self) -> f64 {
        lr_with_halvings(self.state.step + 1, self.state.halvings, &self.cfg)
    }

    /// One update from the mean gradient over `batch`. Returns the mean loss.
    pub fn train_step(&mut self, batch: &[LoadedExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(UsesError::Empty("empty batch".into()));
        }
        let mut sum: Vec<Tensor<T>> = self
            .model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        for ex in batch {
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape, true);
            let loss = example_loss(&self.model, &mut tape, &bound, ex, self.cfg.task, &self.loss)?;
            total += tape.value(loss).item().as_f64();
            let grads = tape.backward(loss)?;
            for (acc, v) in sum.iter_mut().zip(&bound) {
                if let Some(g) = grads.get(*v) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
            }
        }
        let inv = T::of(1.0 / batch.len() as f64);
        for g in sum.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * inv);
        }
        clip_global_norm(&mut sum, self.cfg.grad_clip);
        let lr = self.next_lr();
        let names: Vec<String> = self.model.specs().iter().map(|s| s.name.clone()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let hp = self.adam_params();
        self.opt.step(self.model.params_mut(), &sum, &names, lr, hp)?;
        self.state.step += 1;
        Ok(total / batch.len() as f64)
    }

    /// Mean loss over `examples` without gradients.
    pub fn evaluate(&self, examples: &[LoadedExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(UsesError::Empty("no validation examples".into()));
        }
        let mut total = 0.0;
        for ex in examples {
            let mut tape = Tape::no_grad();
            let bound = self.model.bind(&mut tape, false);
            let loss = example_loss(&self.model, &mut tape, &bound, ex, self.cfg.task, &self.loss)?;
            total += tape.value(loss).item().as_f64();
        }
        Ok(total / examples.len() as f64)
    }

    /// Chunk indices for the coming epoch: shuffled passes over all chunks
    /// until `samples_per_epoch` are drawn.
    fn epoch_order(&self, chunks: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.state.epoch as u64 + 1);
        let mut order = Vec::with_capacity(self.cfg.samples_per_epoch);
        while order.len() < self.cfg.samples_per_epoch {
            let mut pass: Vec<usize> = (0..chunks).collect();
            pass.shuffle(&mut rng);
            order.extend(pass);
        }
        order.truncate(self.cfg.samples_per_epoch);
        order
    }

    fn augment(&self, ex: &LoadedExample, draw: u64) -> Result<LoadedExample> {
        Ok(match ex {
            LoadedExample::Enhance(m) => {
                let seed = self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(draw);
                LoadedExample::Enhance(shuffle_channels(m, seed, self.cfg.max_channels)?)
            }
            other => other.clone(),
        })
    }

    /// Trains until `max_epochs` or `max_steps`. With `out_dir`, the last
    /// state is saved after every epoch and the best model whenever the
    /// validation loss reaches a new minimum.
    pub fn fit(
        &mut self,
        train: &[LoadedExample],
        val: &[LoadedExample],
        out_dir: Option<&Path>,
        mut log: Option<&mut dyn Write>,
    ) -> Result<TrainReport> {
        let chunks = chunk_examples(train, self.cfg.chunk_seconds)?;
        let val_chunks = chunk_examples(val, self.cfg.chunk_seconds)?;
        if chunks.is_empty() {
            return Err(UsesError::Empty("no training examples".into()));
        }
        let mut last_loss = f64::NAN;
        let step_limit = self.cfg.max_steps.unwrap_or(usize::MAX);
        while self.state.epoch < self.cfg.max_epochs && self.state.step < step_limit {
            let order = self.epoch_order(chunks.len());
            let draws_before = (self.state.epoch * self.cfg.samples_per_epoch) as u64;
            for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
                if self.state.step >= step_limit {
                    break;
                }
                let batch = idx
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| {
                        let draw = draws_before + (b * self.cfg.batch_size + i) as u64;
                        self.augment(&chunks[k], draw)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let lr = self.next_lr();
                last_loss = self.train_step(&batch)?;
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}", json!({"step": self.state.step, "lr": lr, "loss": last_loss}))?;
                }
                log::debug!("step {} lr {lr:.3e} loss {last_loss:.5}", self.state.step);
            }
            let val_loss = self.evaluate(&val_chunks)?;
            self.state.epoch += 1;
            self.state.val_history.push(val_loss);
            if self.state.plateau.observe(val_loss, self.cfg.plateau_patience) {
                self.state.halvings += 1;
            }
            let improved = self.state.best_val().map_or(true, |b| val_loss < b);
            if improved {
                self.state.best_epoch = Some(self.state.epoch);
            }
            if let Some(w) = log.as_deref_mut() {
                writeln!(
                    w,
                    "{}",
                    json!({"epoch": self.state.epoch, "val_loss": val_loss, "halvings": self.state.halvings})
                )?;
                w.flush()?;
            }
            log::info!(
                "epoch {} step {} val_loss {val_loss:.5} halvings {}",
                self.state.epoch,
                self.state.step,
                self.state.halvings
            );
            if let Some(dir) = out_dir {
                if improved {
                    save_checkpoint(dir.join(BEST_CHECKPOINT), &self.model)?;
                }
                self.save(dir)?;
            }
        }
        Ok(TrainReport {
            state: self.state.clone(),
            last_loss,
        })
    }

    /// Writes the model and the optimizer/schedule state into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir.join(LAST_CHECKPOINT), &self.model)?;
        let header = serde_json::to_string(&json!({
            "state": self.state,
            "adam_steps": self.opt.steps,
            "train": self.cfg,
        }))?;
        let names: Vec<(String, &Tensor<T>)> = self
            .model
            .specs()
            .iter()
            .zip(self.opt.m.iter().zip(&self.opt.v))
            .flat_map(|(s, (m, v))| [(format!("m.{}", s.name), m), (format!("v.{}", s.name), v)])
            .collect();
        let refs: Vec<(&str, &Tensor<T>)> = names.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        write_atomic(&dir.join(LAST_STATE), &encode_container(&header, &refs))
    }

    /// Restores a run saved by [`Trainer::save`]. `cfg` replaces the stored
    /// training config (so a resumed run may extend `max_epochs`).
    pub fn resume(dir: &Path, cfg: TrainConfig, loss_cfg: LossConfig) -> Result<Self> {
        let model = load_checkpoint::<T>(dir.join(LAST_CHECKPOINT), None)?;
        let mut trainer = Trainer::new(model, cfg, loss_cfg)?;
        let path: PathBuf = dir.join(LAST_STATE);
        let bytes = std::fs::read(&path)?;
        let (header, tensors) = decode_container(&bytes)
            .map_err(|e| UsesError::Checkpoint(format!("{}: {e}", path.display())))?;
        #[derive(Deserialize)]
        struct Header {
            state: TrainState,
            adam_steps: u64,
        }
        let h: Header = serde_json::from_str(&header)
            .map_err(|e| UsesError::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
        let specs = trainer.model.specs();
        if tensors.len() != 2 * specs.len() {
            return Err(UsesError::Checkpoint(format!(
                "{}: {} optimizer tensors for {} parameters",
                path.display(),
                tensors.len(),
                specs.len()
            )));
        }
        for (i, spec) in specs.iter().enumerate() {
            let (mn, m) = &tensors[2 * i];
            let (vn, v) = &tensors[2 * i + 1];
            if *mn != format!("m.{}", spec.name) || *vn != format!("v.{}", spec.name) || m.shape() != spec.shape.as_slice() || v.shape() != spec.shape.as_slice() {
                return Err(UsesError::Checkpoint(format!(
                    "{}: optimizer state does not match parameter {}",
                    path.display(),
                    spec.name
                )));
            }
            trainer.opt.m[i] = m.cast();
            trainer.opt.v[i] = v.cast();
        }
        trainer.opt.steps = h.adam_steps;
        trainer.state = h.state;
        Ok(trainer)
    }
}
