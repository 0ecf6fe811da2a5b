//! The epoch loop: augmentation, batching, forward/backward, Adam with the
//! scheduled lr, per-epoch validation, best-model tracking, metrics, and
//! checkpointing.

pub mod adam;
pub mod checkpoint;
pub mod metrics;
pub mod schedule;

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;

pub use adam::AdamState;
pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use metrics::{write_metrics_csv, MetricRow, METRICS_HEADER};
pub use schedule::{current_lr, ScheduleMode, ScheduleSpec, ScheduleState};

use crate::data::{augment, batches, AugmentPolicy, LabeledDataset};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::scalar::Scalar;
use crate::tensor::Tape;
use crate::SeededRng;

/// Everything a run carries between epochs; checkpoints serialize all of it.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub network: Network<F>,
    pub adam: AdamState<F>,
    pub schedule: ScheduleState,
    /// Completed epochs; also the next epoch index to run.
    pub epochs_done: u64,
    /// Cumulative batches over the whole run.
    pub batch_count: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub best_val_error: f64,
    /// Snapshot of the parameters behind `best_val_error`, in
    /// `Network::params` order.
    pub best_params: Option<Vec<crate::tensor::Tensor<F>>>,
    pub history: Vec<MetricRow>,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(network: Network<F>, schedule: ScheduleSpec, batch_size: usize, seed: u64) -> Self {
        let adam = AdamState::new(network.params().into_iter().map(|(_, t)| t));
        TrainState {
            adam,
            schedule: ScheduleState::new(schedule),
            network,
            epochs_done: 0,
            batch_count: 0,
            batch_size,
            seed,
            best_val_error: f64::INFINITY,
            best_params: None,
            history: Vec::new(),
        }
    }
}

/// Every draw for epoch e comes from a generator keyed by (seed, e), so a
/// resumed run consumes exactly the stream the uninterrupted run would have.
/// Per-epoch draw order: batch shuffle, then per batch the augmentation
/// offsets image by image followed by any dropout masks.
fn epoch_rng(seed: u64, epoch: u64) -> SeededRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    SeededRng::from_seed(key)
}

/// Mean cross-entropy and error rate (1 − accuracy, accuracy being the
/// fraction of samples whose argmax logit is the label). Dropout is off and
/// nothing is augmented or shuffled.
pub fn evaluate<F: Scalar>(
    network: &Network<F>,
    data: &LabeledDataset<F>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let mut rng = SeededRng::seed_from_u64(0);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (images, labels) in batches(data, batch_size, false, &mut rng)? {
        let n = labels.len();
        let mut tape = Tape::<F>::new();
        let vars = network.leaves(&mut tape, false);
        let x = tape.leaf(images, false);
        let logits = network.forward(&mut tape, &vars, x, false, &mut rng)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        loss_sum += tape.value(loss).data()[0].as_f64() * n as f64;
        let out = tape.value(logits);
        let (_, classes) = out.dims2()?;
        for (row, &label) in labels.iter().enumerate() {
            let scores = &out.data()[row * classes..(row + 1) * classes];
            let mut arg = 0;
            for (j, &s) in scores.iter().enumerate() {
                if s > scores[arg] {
                    arg = j;
                }
            }
            if arg == label {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, 1.0 - correct as f64 / n))
}

/// Runs epochs `state.epochs_done..epochs`. Each epoch shuffles, augments
/// (when a policy is given), steps Adam with the schedule's current lr per
/// batch, evaluates on `val`, snapshots the parameters on strict validation
/// improvement, and appends one metric row. With `out_dir` set, metrics.csv
/// and last.ckpt are rewritten after every epoch, so a later divergence
/// abort leaves the last completed epoch's checkpoint behind.
pub fn fit<F: Scalar>(
    state: &mut TrainState<F>,
    train: &LabeledDataset<F>,
    val: &LabeledDataset<F>,
    epochs: u64,
    augment_policy: Option<&AugmentPolicy>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let want = state.network.spec.input;
    for (split, ds) in [("train", train), ("val", val)] {
        if ds.image_dims() != want {
            return Err(Error::config(format!(
                "{split} images are {:?} but the network wants {want:?}",
                ds.image_dims()
            )));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in state.epochs_done..epochs {
        state.schedule.epoch_started(epoch);
        let mut rng = epoch_rng(state.seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches_run = 0u64;
        let mut batch_in_epoch = 0u64;
        for (images, labels) in batches(train, state.batch_size, true, &mut rng)? {
            let images = match augment_policy {
                Some(policy) => augment(&images, policy, &mut rng)?,
                None => images,
            };
            let mut tape = Tape::<F>::new();
            let vars = state.network.leaves(&mut tape, true);
            let x = tape.leaf(images, false);
            let logits = state.network.forward(&mut tape, &vars, x, true, &mut rng)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let loss_val = tape.value(loss).data()[0].as_f64();
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "training loss {loss_val} at epoch {epoch}, batch {batch_in_epoch}; \
                     the checkpoint of the last completed epoch is preserved"
                )));
            }
            tape.backward(loss)?;
            let grads = state.network.gradients(&tape, &vars)?;
            let lr = state.schedule.lr();
            let mut named = state.network.params_mut();
            state.adam.step(&mut named, &grads, lr, state.batch_count)?;
            state.schedule.batch_finished(epoch);
            state.batch_count += 1;
            batch_in_epoch += 1;
            batches_run += 1;
            loss_sum += loss_val;
        }

        let train_loss = loss_sum / batches_run as f64;
        let (val_loss, val_error) = evaluate(&state.network, val, state.batch_size)?;
        state.schedule.validation_measured(val_error);
        if val_error < state.best_val_error {
            state.best_val_error = val_error;
            state.best_params = Some(
                state
                    .network
                    .params()
                    .into_iter()
                    .map(|(_, t)| t.clone())
                    .collect(),
            );
        }
        state.epochs_done = epoch + 1;
        state.history.push(MetricRow {
            epoch,
            batch_count: state.batch_count,
            lr: state.schedule.lr(),
            train_loss,
            val_loss,
            val_error,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if let Some(dir) = out_dir {
            write_metrics_csv(&dir.join("metrics.csv"), &state.history)?;
            checkpoint_save(state, &dir.join("last.ckpt"))?;
        }
    }
    Ok(())
}
