//! Train the desk BagNet-9 on the twin-texture dataset and print per-epoch metrics.
//!
//! Usage: `cargo run --release -p bagnet --example reference_run -- [texture_scale] [per_class] [epochs]`

use std::time::Instant;

use bagnet::arch::{BagNetConfig, ModelState};
use bagnet::data::{synth_texture_dataset, SynthSpec};
use bagnet::train::{train, TrainConfig, TrainEvent};

fn main() -> bagnet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let scale = args.first().copied().unwrap_or(8);
    let per_class = args.get(1).copied().unwrap_or(2000);
    let epochs = args.get(2).copied().unwrap_or(20);
    let train_set = synth_texture_dataset(&SynthSpec::new(4, per_class, 32, scale, 1))?;
    let val_set = synth_texture_dataset(&SynthSpec::new(4, per_class / 8, 32, scale, 2))?;
    let model = ModelState::build(BagNetConfig::bagnet9_32(4), 3)?;
    let mut config = TrainConfig::desk(32, 3);
    config.epochs = epochs;
    let t0 = Instant::now();
    let ckpt = train(model, &train_set, &val_set, &config, &mut |e| {
        if let TrainEvent::Epoch(m) = e {
            println!("{} ({:.1}s)", m.csv_row(), t0.elapsed().as_secs_f64());
        }
    })?;
    println!("final val accuracy {}", ckpt.history.last().map_or(0.0, |m| m.val_acc));
    if let Ok(path) = std::env::var("BAGNET_SAVE") {
        ckpt.save(&path)?;
        println!("saved {path}");
    }
    Ok(())
}
