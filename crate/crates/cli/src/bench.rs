use std::path::PathBuf;
use std::time::Instant;

use bagnet::arch::ModelState;
use bagnet::rng::{rng_for, Stream};
use bagnet::train::load_checkpoint;
use bagnet::{Error, Result, Tensor};
use clap::Args;
use rand::Rng;

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Timed iterations.
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Untimed iterations run first.
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Input side in pixels (default: the configuration's input size).
    #[arg(long)]
    size: Option<usize>,
}

/// Per-iteration throughput in images per second.
pub struct Throughput {
    pub samples: Vec<f64>,
}

impl Throughput {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Sample standard deviation; 0 for a single sample.
    pub fn stddev(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

pub fn measure(model: &ModelState, batch: usize, size: usize, iters: usize, warmup: usize) -> Result<Throughput> {
    if batch == 0 || iters == 0 {
        return Err(Error::InvalidArgument("--batch and --iters must be positive".into()));
    }
    let mut rng = rng_for(0, Stream::Probe, batch as u64);
    let images = Tensor::from_fn(&[batch, 3, size, size], |_| rng.random::<f32>() * 2.0 - 1.0);
    for _ in 0..warmup {
        model.evidence_tensor(&images)?;
    }
    let samples = (0..iters)
        .map(|_| {
            let start = Instant::now();
            model.evidence_tensor(&images)?;
            Ok(batch as f64 / start.elapsed().as_secs_f64().max(1e-9))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Throughput { samples })
}

pub fn run(a: BenchArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?.model;
    model.ensure_eval()?;
    let size = a.size.unwrap_or(model.config.input_size);
    let main = measure(&model, a.batch, size, a.iters, a.warmup)?;
    println!(
        "{} batch {} size {}: {:.1} images/s (stddev {:.1}, {} iterations)",
        model.config.name,
        a.batch,
        size,
        main.mean(),
        main.stddev(),
        main.samples.len()
    );
    if a.batch != 1 {
        let single = measure(&model, 1, size, a.iters, a.warmup)?;
        println!(
            "batch 1: {:.1} images/s; per-image cost ratio batch 1 / batch {}: {:.3}",
            single.mean(),
            a.batch,
            main.mean() / single.mean()
        );
    }
    Ok(())
}
