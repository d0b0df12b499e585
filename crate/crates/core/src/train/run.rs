use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::evaluate;
use super::metrics::EpochMetrics;
use crate::arch::{argmax, Mode, ModelState};
use crate::data::{augmented_batches, Dataset};
use crate::error::{Error, Result};
use crate::optim::sgd_momentum_step;

/// Progress notifications emitted during training.
#[derive(Clone, Debug)]
pub enum TrainEvent<'a> {
    Step { epoch: usize, step: usize, loss: f64 },
    Epoch(&'a EpochMetrics),
}

fn check_compatible(model: &ModelState, train: &Dataset, val: &Dataset) -> Result<()> {
    let k = model.num_classes();
    if train.num_classes() != k || val.num_classes() != k {
        return Err(Error::InvalidArgument(format!(
            "class counts differ: model {k}, train {}, val {}",
            train.num_classes(),
            val.num_classes()
        )));
    }
    Ok(())
}

/// Train `model` from scratch for `config.epochs` epochs. Input
/// standardization statistics come from `train` and are stored in the model.
pub fn train(
    mut model: ModelState,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    sink: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<Checkpoint> {
    config.validate()?;
    check_compatible(&model, train, val)?;
    model.input_norm = train.channel_stats();
    model.mode = Mode::Eval;
    let start = Checkpoint { model, epoch: 0, seed: config.seed, rng_epoch: 0, config: config.clone(), history: Vec::new() };
    resume(start, train, val, config.epochs, sink)
}

/// Continue training `checkpoint` until `until_epoch` epochs are complete.
pub fn resume(
    mut checkpoint: Checkpoint,
    train: &Dataset,
    val: &Dataset,
    until_epoch: usize,
    sink: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<Checkpoint> {
    checkpoint.config.validate()?;
    check_compatible(&checkpoint.model, train, val)?;
    while checkpoint.epoch < until_epoch {
        checkpoint = run_epoch(checkpoint, train, val, sink)?;
    }
    Ok(checkpoint)
}

fn run_epoch(start: Checkpoint, train: &Dataset, val: &Dataset, sink: &mut dyn FnMut(TrainEvent<'_>)) -> Result<Checkpoint> {
    let epoch = start.epoch;
    let mut next = start.clone();
    let config = &start.config;
    let lr = config.lr_at(epoch);
    let model = &mut next.model;
    model.mode = Mode::Train;
    let diverged = |step: usize| Error::Divergence { epoch, step, last_good: Some(Box::new(start.clone())) };

    let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
    let batches = augmented_batches(train, config.batch_size, start.seed, start.rng_epoch, model.input_norm, &config.augment)?;
    for (step, batch) in batches.enumerate() {
        let batch = batch?;
        let out = match model.loss(&batch.images, &batch.labels, Mode::Train, true) {
            Ok(out) => out,
            Err(Error::NonFinite { .. }) => return Err(diverged(step)),
            Err(e) => return Err(e),
        };
        if !out.loss.is_finite() {
            return Err(diverged(step));
        }
        sink(TrainEvent::Step { epoch, step, loss: out.loss });
        let n = batch.labels.len();
        loss_sum += out.loss * n as f64;
        seen += n;
        let k = model.num_classes();
        correct += out.logits.data().chunks_exact(k).zip(&batch.labels).filter(|(row, &l)| argmax(row) == l).count();

        let mut grads = out.grads;
        if config.weight_decay > 0.0 {
            for (g, p) in grads.iter_mut().zip(model.params.iter()) {
                if let Some(g) = g {
                    for (gv, &pv) in g.data_mut().iter_mut().zip(p.value.data()) {
                        *gv = (*gv as f64 + config.weight_decay * pv as f64) as f32;
                    }
                }
            }
        }
        sgd_momentum_step(&mut model.params, &grads, lr, config.momentum)?;
        if model.params.iter().any(|p| p.value.first_non_finite().is_some()) {
            return Err(diverged(step));
        }
        model.apply_batch_stats(&out.batch_stats);
    }
    model.mode = Mode::Eval;

    let report = match evaluate(model, val, 1) {
        Ok(r) => r,
        Err(Error::NonFinite { .. }) => return Err(diverged(usize::MAX)),
        Err(e) => return Err(e),
    };
    let metrics = EpochMetrics {
        epoch,
        lr,
        train_loss: loss_sum / seen as f64,
        train_acc: correct as f64 / seen as f64,
        val_loss: report.loss,
        val_acc: report.topk_accuracy,
    };
    sink(TrainEvent::Epoch(&metrics));
    next.history.push(metrics);
    next.epoch = epoch + 1;
    next.rng_epoch = start.rng_epoch + 1;
    Ok(next)
}
