use std::fs;
use std::path::{Path, PathBuf};

use bagnet::arch::{argmax, image_logits, ModelState};
use bagnet::data::Dataset;
use bagnet::interpret::{
    class_scatter_csv, dataset_evidence, evidence_grid, export_heatmap, interaction_csv, interaction_experiment,
    logit_correlation, masking_sensitivity, per_class_scatter, permuted_logit_correlation, scramble_test,
    sensitivity_csv, threshold_csv, threshold_sweep_maps, top_patches, write_patches, ClassChoice, Correlation, Fill,
    MaskSpec, RankingSource, ThresholdMode,
};
use bagnet::train::{dataset_logits, evaluate};
use bagnet::{Error, Result};
use clap::{Args, Subcommand, ValueEnum};

use crate::inputs;
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Evidence heatmap of one image as PPM plus raw logits CSV.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        image: usize,
        /// Class index, or `pred` for the predicted class.
        #[arg(long, default_value = "pred")]
        class: String,
    },
    /// Highest-evidence patches of one class.
    Patches {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
    /// Joint versus summed logit change under masking of separated cells.
    Interaction {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        p: usize,
        /// Grid offset in pixels, `row,col`.
        #[arg(long, default_value = "0,0")]
        phase: String,
        #[arg(long, value_enum, default_value_t = ClassSource::Truth)]
        class_source: ClassSource,
        /// Replacement value: `dc` or a constant in standardized units.
        #[arg(long, default_value = "dc")]
        fill: String,
        /// Use the first N images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Leading-class probability as the top-ranked cells are masked.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "bagnet,saliency,ig,random")]
        sources: Vec<Source>,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 4)]
        n_max: usize,
        /// Use the first N images.
        #[arg(long, default_value_t = 100)]
        limit: usize,
        #[arg(long, default_value_t = 64)]
        ig_steps: usize,
        /// Seed of the random ranking.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Accuracy after clamping or binarizing evidence.
    Threshold {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Modes::Both)]
        mode: Modes,
        /// Explicit thresholds; otherwise an even grid over the evidence range.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        thresholds: Vec<f32>,
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        topk: usize,
    },
    /// Accuracy and logits under random permutation of non-overlapping tiles.
    Scramble {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-class accuracy of two checkpoints.
    Scatter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long, default_value_t = 1)]
        topk: usize,
    },
    /// Correlation of image logits of two checkpoints, with a shuffled reference.
    Logitcorr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassSource {
    Truth,
    Pred,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Bagnet,
    Saliency,
    Ig,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Modes {
    Clamp,
    Binarize,
    Both,
}

struct Loaded {
    manifest: Manifest,
    model: ModelState,
    data: Dataset,
    out: PathBuf,
}

fn load(name: &str, workers: usize, common: &Common) -> Result<Loaded> {
    let mut manifest = Manifest::new(&format!("analyze {name}"), workers);
    let model = inputs::checkpoint(&mut manifest, "checkpoint", &common.checkpoint)?.model;
    let data = inputs::dataset(&mut manifest, "data", &common.data)?;
    manifest.set("out", common.out.display().to_string()).set("config", model.config.name.clone());
    Ok(Loaded { manifest, model, data, out: common.out.clone() })
}

fn begin(loaded: &Loaded) -> Result<()> {
    fs::create_dir_all(&loaded.out)?;
    loaded.manifest.write(&loaded.out.join("manifest.json"))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn correlation_field(c: &Correlation) -> String {
    match c.value() {
        Some(v) => v.to_string(),
        None => "NaN".into(),
    }
}

fn parse_phase(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("--phase expects `row,col`, got {text:?}"));
    let (r, c) = text.split_once(',').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn parse_fill(text: &str) -> Result<Fill> {
    if text == "dc" {
        return Ok(Fill::Dc);
    }
    text.parse()
        .map(Fill::Constant)
        .map_err(|_| Error::InvalidArgument(format!("--fill expects `dc` or a number, got {text:?}")))
}

pub fn run(cmd: AnalyzeCommand, workers: usize) -> Result<()> {
    match cmd {
        AnalyzeCommand::Heatmap { common, image, class } => {
            let mut l = load("heatmap", workers, &common)?;
            l.manifest.set("image", image).set("class", class.clone());
            if image >= l.data.len() {
                return Err(Error::InvalidArgument(format!("image {image} out of range for {} images", l.data.len())));
            }
            l.model.ensure_eval()?;
            let evidence = l.model.forward_evidence(&l.data.image_tensor(image, &l.model.input_norm))?;
            let class = match class.as_str() {
                "pred" => argmax(image_logits(&evidence).data()),
                c => c.parse().map_err(|_| Error::InvalidArgument(format!("--class expects an index or `pred`, got {c:?}")))?,
            };
            l.manifest.set("resolved_class", class);
            begin(&l)?;
            let path = l.out.join(format!("heatmap_{image}_{class}.ppm"));
            export_heatmap(&evidence, class, (l.data.size, l.data.size), &path)?;
            println!("wrote {} and {}", path.display(), path.with_extension("csv").display());
        }
        AnalyzeCommand::Patches { common, class, k } => {
            let mut l = load("patches", workers, &common)?;
            l.manifest.set("class", class).set("k", k);
            begin(&l)?;
            let patches = top_patches(&l.model, &l.data, class, k)?;
            write_patches(l.out.join("patches"), &patches)?;
            println!("wrote {} same-label and {} other-label patches", patches.same.len(), patches.other.len());
        }
        AnalyzeCommand::Interaction { common, p, phase, class_source, fill, limit } => {
            let mut l = load("interaction", workers, &common)?;
            let spec = MaskSpec { phase: parse_phase(&phase)?, fill: parse_fill(&fill)?, ..MaskSpec::every_second(p) };
            let choice = match class_source {
                ClassSource::Truth => ClassChoice::GroundTruth,
                ClassSource::Pred => ClassChoice::Predicted,
            };
            l.manifest
                .set("p", p)
                .set("phase", format!("{},{}", spec.phase.0, spec.phase.1))
                .set("class_source", format!("{class_source:?}").to_lowercase())
                .set("fill", fill)
                .set("limit", limit.map_or(serde_json::Value::Null, Into::into));
            begin(&l)?;
            let result = interaction_experiment(&l.model, &l.data, &spec, choice, limit)?;
            write(&l.out, "interaction.csv", &interaction_csv(&result))?;
            let summary = format!(
                "p,images,pearson_r,max_relative_gap\n{},{},{},{}\n",
                p,
                result.pairs.len(),
                correlation_field(&result.correlation),
                result.max_relative_gap()
            );
            write(&l.out, "interaction_summary.csv", &summary)?;
            print!("{summary}");
        }
        AnalyzeCommand::Sensitivity { common, sources, p, n_max, limit, ig_steps, seed } => {
            let mut l = load("sensitivity", workers, &common)?;
            let names: Vec<String> = sources.iter().map(|s| format!("{s:?}").to_lowercase()).collect();
            l.manifest
                .set("sources", names.join(","))
                .set("p", p)
                .set("n_max", n_max)
                .set("limit", limit)
                .set("ig_steps", ig_steps)
                .seed("seed", seed);
            begin(&l)?;
            let ranking: Vec<RankingSource<'_>> = sources
                .iter()
                .map(|s| match s {
                    Source::Bagnet => RankingSource::BagNet(&l.model),
                    Source::Saliency => RankingSource::Saliency,
                    Source::Ig => RankingSource::IntegratedGradients { steps: ig_steps },
                    Source::Random => RankingSource::Random { seed },
                })
                .collect();
            let indices: Vec<usize> = (0..limit.min(l.data.len())).collect();
            let curves = masking_sensitivity(&l.model, &ranking, &l.data, &indices, p, n_max)?;
            write(&l.out, "sensitivity.csv", &sensitivity_csv(&curves))?;
            for c in &curves {
                println!("{} mean_prob at n={}: {}", c.source, n_max, c.mean_prob[n_max]);
            }
        }
        AnalyzeCommand::Threshold { common, mode, thresholds, grid, topk } => {
            let mut l = load("threshold", workers, &common)?;
            let maps = dataset_evidence(&l.model, &l.data)?;
            let explicit = !thresholds.is_empty();
            let values = if explicit { thresholds } else { evidence_grid(&maps, grid) };
            l.manifest
                .set("mode", format!("{mode:?}").to_lowercase())
                .set("thresholds", values.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","))
                .set("threshold_source", if explicit { "flag" } else { "grid" })
                .set("grid", grid)
                .set("topk", topk);
            begin(&l)?;
            let labels: Vec<usize> = (0..l.data.len()).map(|i| l.data.label(i)).collect();
            let mut points = Vec::new();
            if mode != Modes::Binarize {
                let mut clamp = vec![f32::NEG_INFINITY];
                clamp.extend(values.iter().copied().filter(|t| *t != f32::NEG_INFINITY));
                points.extend(threshold_sweep_maps(&maps, &labels, &clamp, ThresholdMode::Clamp, topk)?);
            }
            if mode != Modes::Clamp {
                points.extend(threshold_sweep_maps(&maps, &labels, &values, ThresholdMode::Binarize, topk)?);
            }
            let csv = threshold_csv(&points);
            write(&l.out, "threshold.csv", &csv)?;
            print!("{csv}");
        }
        AnalyzeCommand::Scramble { common, seed } => {
            let mut l = load("scramble", workers, &common)?;
            l.manifest.seed("seed", seed);
            if !l.model.config.tiles_exactly(l.data.size) {
                return Err(Error::Precondition(format!(
                    "{} does not tile {}x{} images with non-overlapping windows; use a tiling config such as bagnet3-tiled-33",
                    l.model.config.name, l.data.size, l.data.size
                )));
            }
            begin(&l)?;
            let r = scramble_test(&l.model, &l.data, seed)?;
            let csv = format!(
                "images,clean_accuracy,scrambled_accuracy,max_logit_delta\n{},{},{},{}\n",
                r.images, r.clean_accuracy, r.scrambled_accuracy, r.max_logit_delta
            );
            write(&l.out, "scramble.csv", &csv)?;
            print!("{csv}");
        }
        AnalyzeCommand::Scatter { common, checkpoint_b, topk } => {
            let mut l = load("scatter", workers, &common)?;
            let b = inputs::checkpoint(&mut l.manifest, "checkpoint_b", &checkpoint_b)?.model;
            l.manifest.set("topk", topk);
            begin(&l)?;
            let scatter = per_class_scatter(&evaluate(&l.model, &l.data, topk)?, &evaluate(&b, &l.data, topk)?)?;
            write(&l.out, "class_scatter.csv", &class_scatter_csv(&scatter))?;
            println!("per-class accuracy correlation {}", scatter.correlation);
        }
        AnalyzeCommand::Logitcorr { common, checkpoint_b, seed } => {
            let mut l = load("logitcorr", workers, &common)?;
            let b = inputs::checkpoint(&mut l.manifest, "checkpoint_b", &checkpoint_b)?.model;
            l.manifest.seed("seed", seed);
            begin(&l)?;
            let (la, lb) = (dataset_logits(&l.model, &l.data)?, dataset_logits(&b, &l.data)?);
            let r = logit_correlation(&la, &lb)?;
            let shuffled = permuted_logit_correlation(&la, &lb, seed)?;
            let csv = format!("pearson_r,permuted_r\n{},{}\n", correlation_field(&r), correlation_field(&shuffled));
            write(&l.out, "logit_correlation.csv", &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}
