//! Optimization loop over L1 loss with resumable state.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::config::{lr_at, TrainConfig};
use crate::arch::{load_checkpoint_for, save_checkpoint, ModelGraph, RecordOptions};
use crate::autograd::Tape;
use crate::data::{sample_batch_with, Dataset, SampleBatch};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Zero-based index of the step that produced `loss`.
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
}

pub struct Trainer {
    pub model: ModelGraph,
    pub cfg: TrainConfig,
    pub adam: AdamState<f32>,
    /// Number of completed steps.
    pub step: u64,
}

const STATE_MAGIC: &[u8; 8] = b"PDANOPTS";
const STATE_VERSION: u32 = 1;

impl Trainer {
    pub fn new(model: ModelGraph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&model.params);
        Ok(Trainer { model, cfg, adam, step: 0 })
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            eps: self.cfg.eps,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.cfg.steps_per_epoch
    }

    /// The batch used by step `step`. Each step owns an independent random
    /// stream derived from the seed, so resuming needs only the step index.
    pub fn batch_for(&self, data: &Dataset, step: u64) -> Result<SampleBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step);
        sample_batch_with(data, self.cfg.batch_size, self.cfg.patch_size, self.cfg.augment, &mut rng)
    }

    /// Runs one forward/backward/update cycle.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepRecord> {
        if data.scale != self.model.config.scale {
            return Err(Error::ConfigMismatch(format!(
                "dataset scale {} vs model scale {}",
                data.scale, self.model.config.scale
            )));
        }
        let epoch = self.epoch();
        let lr = lr_at(epoch, &self.cfg);
        let batch = self.batch_for(data, self.step)?;
        let mut tape = Tape::new();
        let input = tape.constant(batch.lr);
        let rec = self.model.record(
            &self.model.params,
            &mut tape,
            input,
            RecordOptions {
                param_grads: true,
                bn_mode: BatchNormMode::Training,
            },
        )?;
        let target = tape.constant(batch.hr);
        let loss_var = tape.l1_loss(rec.output, target)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step)));
        }
        let mut grads = tape.backward(loss_var)?;
        let per_param: Vec<Option<Tensor<f32>>> = self
            .adam
            .ids
            .iter()
            .map(|id| grads.take(rec.param_vars[id.0]))
            .collect();
        let adam_cfg = self.adam_config();
        self.adam.step(&adam_cfg, &mut self.model.params, &per_param, lr)?;
        self.model.apply_bn_updates(&rec.bn_updates);
        let record = StepRecord {
            step: self.step,
            epoch,
            lr,
            loss,
        };
        self.step += 1;
        Ok(record)
    }

    /// Trains until `self.step == until`, calling `sink` after every step.
    pub fn run_until(
        &mut self,
        data: &Dataset,
        until: u64,
        mut sink: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        let mut history = Vec::new();
        while self.step < until {
            let r = self.train_step(data)?;
            sink(self, &r)?;
            history.push(r);
        }
        Ok(history)
    }

    /// Writes step counter and Adam moments (checksummed).
    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(self.adam.ids.len() as u32).to_le_bytes());
        for (k, id) in self.adam.ids.iter().enumerate() {
            let name = &self.model.params.entry(*id).name;
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(self.adam.m[k].len() as u32).to_le_bytes());
            for t in [&self.adam.m[k], &self.adam.v[k]] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, out)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load_state(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = fs::read(path)?;
        if bytes.len() < 32 || &bytes[..8] != STATE_MAGIC {
            return Err(Error::Integrity("not an optimizer state file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::Integrity("optimizer state checksum mismatch".into()));
        }
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body
                .get(pos..pos + n)
                .ok_or_else(|| Error::Integrity("truncated optimizer state".into()))?;
            pos += n;
            Ok(s)
        };
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != STATE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: STATE_VERSION,
            });
        }
        let step = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let t = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut adam = AdamState::new(&self.model.params);
        if count != adam.ids.len() {
            return Err(Error::ConfigMismatch(format!(
                "optimizer state holds {count} tensors, model has {}",
                adam.ids.len()
            )));
        }
        for k in 0..count {
            let name_len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            let name = take(name_len)?.to_vec();
            let expected = &self.model.params.entry(adam.ids[k]).name;
            if name != expected.as_bytes() {
                return Err(Error::ConfigMismatch(format!("optimizer state tensor {k} is not '{expected}'")));
            }
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            if len != adam.m[k].len() {
                return Err(Error::ConfigMismatch(format!("optimizer state size for '{expected}'")));
            }
            for dst in [&mut adam.m[k], &mut adam.v[k]] {
                let raw = take(4 * len)?;
                for (d, c) in dst.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                    *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                }
            }
        }
        if pos != body.len() {
            return Err(Error::Integrity("trailing bytes in optimizer state".into()));
        }
        adam.t = t;
        self.adam = adam;
        self.step = step;
        Ok(())
    }
}

/// Files of a training run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.pdan")
    }

    pub fn state(&self) -> PathBuf {
        self.root.join("optimizer.state")
    }

    pub fn epoch_checkpoint(&self, epoch: u64) -> PathBuf {
        self.root.join(format!("model_epoch{epoch:04}.pdan"))
    }
}

/// Trains for `cfg.epochs`, logging every step to `train_log.csv` and
/// writing a checkpoint plus optimizer state at each epoch boundary. With
/// `resume` the run continues from the directory's latest state.
pub fn train_in_dir(
    dir: &RunDir,
    config_text: &str,
    model: ModelGraph,
    cfg: TrainConfig,
    data: &Dataset,
    resume: bool,
) -> Result<Trainer> {
    fs::create_dir_all(&dir.root)?;
    let mut trainer = if resume {
        let model = load_checkpoint_for(dir.checkpoint(), &model.config)?;
        let mut t = Trainer::new(model, cfg)?;
        t.load_state(dir.state())?;
        truncate_log(&dir.log(), t.step)?;
        t
    } else {
        fs::write(dir.config(), config_text)?;
        fs::write(dir.log(), "step,epoch,lr,loss\n")?;
        Trainer::new(model, cfg)?
    };
    let mut log = OpenOptions::new().append(true).open(dir.log())?;
    let total = trainer.cfg.total_steps();
    trainer.run_until(data, total, |t, r| {
        writeln!(log, "{},{},{:e},{:.9}", r.step, r.epoch, r.lr, r.loss)?;
        if t.step % t.cfg.steps_per_epoch == 0 {
            log.flush()?;
            let epoch = t.step / t.cfg.steps_per_epoch;
            save_checkpoint(&t.model, dir.checkpoint())?;
            fs::copy(dir.checkpoint(), dir.epoch_checkpoint(epoch))?;
            t.save_state(dir.state())?;
            log::info!("epoch {epoch} done, loss {:.6}", r.loss);
        }
        Ok(())
    })?;
    Ok(trainer)
}

/// Drops log rows at or beyond `step` so a resumed run does not duplicate
/// them.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step))
        .map(|(_, l)| l)
        .collect();
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}
