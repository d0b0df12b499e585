use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

/// Summary of one completed epoch. `epoch` counts from 0.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.epoch, self.lr, self.train_loss, self.train_acc, self.val_loss, self.val_acc)
    }
}

/// CSV text with header; floats use the shortest exact decimal form.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        writeln!(s, "{}", m.csv_row()).expect("writing to a String");
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => return Err(Error::Config(format!("unexpected metrics header {other:?}"))),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Config(format!("metrics row {line:?} has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("{s:?}: {e}")));
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|e| Error::Config(format!("{:?}: {e}", f[0])))?,
                lr: num(f[1])?,
                train_loss: num(f[2])?,
                train_acc: num(f[3])?,
                val_loss: num(f[4])?,
                val_acc: num(f[5])?,
            })
        })
        .collect()
}
