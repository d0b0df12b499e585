use std::fs;
use std::path::PathBuf;

use bagnet::data::{convert_cifar10, synth_texture_dataset, Dataset, SynthSpec, TextureStyle};
use bagnet::Result;
use clap::{Args, Subcommand, ValueEnum};

use crate::inputs;
use crate::manifest::{sidecar, Manifest};

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate the procedural texture dataset.
    Synth(SynthArgs),
    /// Convert CIFAR-10 binary batches.
    Convert(ConvertArgs),
    /// Print header fields and per-class counts.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Style {
    /// Class-specific pixel correlations at a fixed offset.
    Twin,
    /// Classes differ only in mean brightness.
    Luminance,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 2000)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    texture_scale: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Style::Twin)]
    style: Style,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// CIFAR-10 `.bin` batch files, concatenated in the order given.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    path: PathBuf,
}

pub fn run(cmd: DatasetCommand, workers: usize) -> Result<()> {
    match cmd {
        DatasetCommand::Synth(a) => {
            let style = match a.style {
                Style::Twin => TextureStyle::Twin,
                Style::Luminance => TextureStyle::Luminance,
            };
            let mut m = Manifest::new("dataset synth", workers);
            m.set("classes", a.classes)
                .set("per_class", a.per_class)
                .set("size", a.size)
                .set("texture_scale", a.texture_scale)
                .set("style", format!("{:?}", a.style).to_lowercase())
                .set("out", a.out.display().to_string())
                .seed("seed", a.seed);
            m.write(&sidecar(&a.out))?;
            let spec = SynthSpec { style, ..SynthSpec::new(a.classes, a.per_class, a.size, a.texture_scale, a.seed) };
            let ds = synth_texture_dataset(&spec)?;
            ds.save(&a.out)?;
            println!("wrote {} images to {}", ds.len(), a.out.display());
        }
        DatasetCommand::Convert(a) => {
            let mut m = Manifest::new("dataset convert", workers);
            m.set("out", a.out.display().to_string());
            for p in &a.inputs {
                m.input("cifar10", p, &fs::read(p)?);
            }
            m.write(&sidecar(&a.out))?;
            let ds = convert_cifar10(&a.inputs)?;
            ds.save(&a.out)?;
            println!("wrote {} images to {}", ds.len(), a.out.display());
        }
        DatasetCommand::Inspect(a) => {
            let ds = inputs::dataset(&mut Manifest::new("dataset inspect", workers), "data", &a.path)?;
            print!("{}", summary(&ds));
        }
    }
    Ok(())
}

fn summary(ds: &Dataset) -> String {
    let mut s = format!("count {}\nsize {}\nclasses {}\n", ds.len(), ds.size, ds.num_classes());
    for (c, n) in ds.class_counts().iter().enumerate() {
        s.push_str(&format!("class {c} {} {n}\n", ds.class_names[c]));
    }
    s
}
