use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use bagnet::train::{evaluate, EvalReport};
use bagnet::Result;
use clap::Args;

use crate::inputs;
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    topk: usize,
    /// Directory for `eval.csv` and the manifest; the report always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `class,name,count,accuracy` rows followed by an `all` row.
pub fn report_csv(report: &EvalReport, names: &[String], counts: &[usize]) -> String {
    let mut s = String::from("class,name,count,accuracy\n");
    for (c, acc) in report.per_class.iter().enumerate() {
        writeln!(s, "{c},{},{},{acc}", names[c], counts[c]).expect("writing to a String");
    }
    writeln!(s, "all,all,{},{}", counts.iter().sum::<usize>(), report.topk_accuracy).expect("writing to a String");
    s
}

pub fn run(a: EvalArgs, workers: usize) -> Result<()> {
    let mut m = Manifest::new("eval", workers);
    let ckpt = inputs::checkpoint(&mut m, "checkpoint", &a.checkpoint)?;
    let data = inputs::dataset(&mut m, "data", &a.data)?;
    m.set("topk", a.topk);
    if let Some(out) = &a.out {
        m.set("out", out.display().to_string());
        m.write(&out.join("manifest.json"))?;
    }
    let report = evaluate(&ckpt.model, &data, a.topk)?;
    let csv = report_csv(&report, &data.class_names, &data.class_counts());
    if let Some(out) = &a.out {
        fs::write(out.join("eval.csv"), &csv)?;
    }
    println!("top-{} accuracy {} over {} images (loss {})", a.topk, report.topk_accuracy, data.len(), report.loss);
    print!("{csv}");
    Ok(())
}
