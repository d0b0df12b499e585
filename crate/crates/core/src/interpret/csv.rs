//! CSV renderings of analysis results. Output is a pure function of the
//! input values, so repeated runs produce identical bytes.

use std::fmt::Write as _;

use super::interaction::InteractionResult;
use super::sensitivity::SensitivityCurve;
use super::stats::ClassScatter;
use super::threshold::ThresholdPoint;

pub fn interaction_csv(result: &InteractionResult) -> String {
    let mut s = String::from("image_index,lhs,rhs\n");
    for p in &result.pairs {
        writeln!(s, "{},{},{}", p.image_index, p.lhs, p.rhs).expect("writing to a String");
    }
    s
}

pub fn sensitivity_csv(curves: &[SensitivityCurve]) -> String {
    let mut s = String::from("source,n,mean_prob\n");
    for c in curves {
        for (&n, &p) in c.n.iter().zip(&c.mean_prob) {
            writeln!(s, "{},{n},{p}", c.source).expect("writing to a String");
        }
    }
    s
}

pub fn threshold_csv(points: &[ThresholdPoint]) -> String {
    let mut s = String::from("mode,threshold,topk,accuracy\n");
    for p in points {
        writeln!(s, "{},{},{},{}", p.mode.name(), p.threshold, p.k, p.accuracy).expect("writing to a String");
    }
    s
}

pub fn class_scatter_csv(scatter: &ClassScatter) -> String {
    let mut s = String::from("class,acc_a,acc_b\n");
    for (c, a, b) in &scatter.pairs {
        writeln!(s, "{c},{a},{b}").expect("writing to a String");
    }
    s
}
