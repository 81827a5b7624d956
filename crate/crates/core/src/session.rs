//! File-level training runs: datasets in, checkpoints and a loss log out.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::dataset::{Domain, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{ArchitectureSpec, DiscriminatorSpec};
use crate::tensor::Tensor;
use crate::train::{LossRecord, Trainer, TrainingConfig, LOSS_CSV_HEADER};

pub const LOSS_LOG_NAME: &str = "losses.csv";
pub const FINAL_CHECKPOINT_NAME: &str = "model.safetensors";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    /// Every record in the log, including those before a resume point.
    pub records: Vec<LossRecord>,
}

pub fn epoch_checkpoint_path(out_dir: &Path, epoch: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.safetensors"))
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut text = String::from(LOSS_CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_CSV_HEADER) {
        return Err(Error::Param(format!("{} lacks the loss log header", path.display())));
    }
    lines.filter(|l| !l.trim().is_empty()).map(LossRecord::parse_csv_row).collect()
}

fn load_domain(ds: &DomainDataset, expected: Domain, side: usize) -> Result<Vec<Tensor<f32>>> {
    if ds.domain() != expected {
        return Err(Error::Dataset(format!("expected a {expected} dataset, got {}", ds.domain())));
    }
    if ds.is_empty() {
        return Err(Error::Dataset(format!("{expected} dataset is empty")));
    }
    Ok(ds.load_images(Some(side))?.iter().map(|im| im.to_network()).collect())
}

fn drive(mut trainer: Trainer, v: &DomainDataset, r: &DomainDataset, out_dir: &Path, mut records: Vec<LossRecord>) -> Result<TrainOutcome> {
    let spec = trainer.model.spec;
    if spec.height != spec.width {
        return Err(Error::Spec("dataset images are resized to square inputs".into()));
    }
    let vi = load_domain(v, Domain::Virtual, spec.height)?;
    let ri = load_domain(r, Domain::Real, spec.height)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let log = out_dir.join(LOSS_LOG_NAME);
    let every = trainer.config.checkpoint_every;
    let pending = RefCell::new(Vec::new());
    let result = trainer.run(
        &vi,
        &ri,
        |rec| {
            pending.borrow_mut().push(*rec);
            Ok(())
        },
        |t| {
            records.append(&mut pending.borrow_mut());
            write_loss_log(&log, &records)?;
            if every > 0 && t.epoch % every == 0 {
                save_checkpoint(t, &epoch_checkpoint_path(out_dir, t.epoch))?;
            }
            Ok(())
        },
    );
    if let Err(e) = result {
        records.append(&mut pending.borrow_mut());
        let _ = write_loss_log(&log, &records);
        return Err(e);
    }
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT_NAME);
    save_checkpoint(&trainer, &final_checkpoint)?;
    write_loss_log(&log, &records)?;
    Ok(TrainOutcome {
        final_checkpoint,
        loss_log: log,
        records,
    })
}

/// Trains from scratch and writes checkpoints plus the loss log to `out_dir`.
pub fn train_to_dir(
    v: &DomainDataset,
    r: &DomainDataset,
    spec: ArchitectureSpec,
    disc_spec: DiscriminatorSpec,
    cfg: TrainingConfig,
    w: LossWeights,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    drive(Trainer::new(spec, disc_spec, cfg, w)?, v, r, out_dir, Vec::new())
}

/// Continues from a checkpoint up to `cfg.epochs`. Rows of an existing loss
/// log in `out_dir` before the checkpoint's step are kept.
pub fn resume_to_dir(
    checkpoint: &Path,
    v: &DomainDataset,
    r: &DomainDataset,
    cfg: TrainingConfig,
    w: LossWeights,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let trainer = Checkpoint::read(checkpoint)?.trainer(cfg, w)?;
    let log = out_dir.join(LOSS_LOG_NAME);
    let prior = if log.exists() {
        read_loss_log(&log)?.into_iter().filter(|r| r.step < trainer.step).collect()
    } else {
        Vec::new()
    };
    drive(trainer, v, r, out_dir, prior)
}
