use std::fs;
use std::path::PathBuf;

use bagnet::arch::{BagNetConfig, ModelState};
use bagnet::data::{AugmentSpec, Dataset};
use bagnet::rng::{rng_for, Stream};
use bagnet::train::{metrics_csv, resume, train, Checkpoint, TrainConfig, TrainEvent};
use bagnet::{Error, Result};
use clap::Args;
use rand::seq::SliceRandom;

use crate::inputs;
use crate::manifest::Manifest;

/// Stream index of the train/validation split, far from any epoch index.
const SPLIT_INDEX: u64 = u64::MAX;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Architecture name, e.g. bagnet9-32.
    #[arg(long, default_value = "bagnet9-32")]
    config: String,
    /// Training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; without it a seeded fraction of --data is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Use only the first N training images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue from a checkpoint; its recipe and seed replace the flags.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr0: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 10.0)]
    decay_factor: f64,
    #[arg(long, default_value_t = 8)]
    decay_every: usize,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Resize the shorter side to this before cropping (default: image size).
    #[arg(long)]
    resize: Option<usize>,
    /// Random crop side (default: image size).
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    flip: bool,
}

fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("--val-fraction must be in (0, 1), got {fraction}")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng_for(seed, Stream::Shuffle, SPLIT_INDEX));
    let n_val = ((ds.len() as f64 * fraction).round() as usize).clamp(1, ds.len() - 1);
    let (val, train) = order.split_at(n_val);
    let (mut val, mut train) = (val.to_vec(), train.to_vec());
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&val)?))
}

pub fn run(a: TrainArgs, workers: usize) -> Result<()> {
    let mut m = Manifest::new("train", workers);
    let mut data = inputs::dataset(&mut m, "data", &a.data)?;
    if let Some(n) = a.limit {
        if n == 0 {
            return Err(Error::InvalidArgument("--limit must be positive".into()));
        }
        data = data.subset(&(0..n.min(data.len())).collect::<Vec<_>>())?;
    }
    let resumed = a.resume.as_ref().map(|p| inputs::checkpoint(&mut m, "resume", p)).transpose()?;
    let seed = resumed.as_ref().map_or(a.seed, |c| c.seed);
    let (train_set, val_set) = match &a.val {
        Some(p) => (data, inputs::dataset(&mut m, "val", p)?),
        None => split(&data, a.val_fraction, seed)?,
    };
    let config = match &resumed {
        Some(c) => TrainConfig { epochs: a.epochs, ..c.config.clone() },
        None => TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr0: a.lr0,
            momentum: a.momentum,
            decay_factor: a.decay_factor,
            decay_every_epochs: a.decay_every,
            weight_decay: a.weight_decay,
            seed,
            augment: AugmentSpec {
                resize_shorter_to: a.resize.unwrap_or(train_set.size),
                crop: a.crop.unwrap_or(train_set.size),
                horizontal_flip: a.flip,
                seed,
            },
        },
    };
    let arch = match &resumed {
        Some(c) => c.model.config.clone(),
        None => BagNetConfig::by_name(&a.config, train_set.num_classes())?,
    };
    m.set("config", arch.name.clone())
        .set("q", arch.q)
        .set("until_epoch", a.epochs)
        .set("recipe", config.to_text())
        .set("train_images", train_set.len())
        .set("val_images", val_set.len())
        .set("val_source", if a.val.is_some() { "file" } else { "split" })
        .set("val_fraction", a.val_fraction)
        .set("limit", a.limit.map_or(serde_json::Value::Null, Into::into))
        .set("out", a.out.display().to_string())
        .seed("seed", seed);
    fs::create_dir_all(&a.out)?;
    m.write(&a.out.join("manifest.json"))?;

    let metrics_path = a.out.join("metrics.csv");
    let mut history = resumed.as_ref().map(|c| c.history.clone()).unwrap_or_default();
    fs::write(&metrics_path, metrics_csv(&history))?;
    let mut write_error = None;
    let mut sink = |event: TrainEvent<'_>| {
        if let TrainEvent::Epoch(em) = event {
            eprintln!(
                "epoch {} lr {} train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4}",
                em.epoch, em.lr, em.train_loss, em.train_acc, em.val_loss, em.val_acc
            );
            history.push(em.clone());
            if let Err(e) = fs::write(&metrics_path, metrics_csv(&history)) {
                write_error.get_or_insert(e);
            }
        }
    };
    let outcome = match resumed {
        Some(c) => resume(Checkpoint { config, ..c }, &train_set, &val_set, a.epochs, &mut sink),
        None => train(ModelState::build(arch, seed)?, &train_set, &val_set, &config, &mut sink),
    };
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let done: Checkpoint = match outcome {
        Ok(c) => c,
        Err(Error::Divergence { epoch, step, last_good }) => {
            if let Some(good) = &last_good {
                good.save(a.out.join("last_good.bagc"))?;
                eprintln!("saved the last finite state to {}", a.out.join("last_good.bagc").display());
            }
            return Err(Error::Divergence { epoch, step, last_good });
        }
        Err(e) => return Err(e),
    };
    done.save(a.out.join("checkpoint.bagc"))?;
    match done.history.last() {
        Some(last) => println!("trained {} epochs, final val_acc {}", done.epoch, last.val_acc),
        None => println!("no epochs to run"),
    }
    Ok(())
}
