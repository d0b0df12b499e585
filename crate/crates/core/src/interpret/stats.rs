use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::tensor::Tensor;
use crate::train::EvalReport;

/// Outcome of a Pearson correlation.
#[derive(Clone, Debug, PartialEq)]
pub enum Correlation {
    Defined(f64),
    /// One of the inputs has zero variance (or fewer than two samples).
    Degenerate(String),
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Defined(r) => Some(*r),
            Correlation::Degenerate(_) => None,
        }
    }
}

impl std::fmt::Display for Correlation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Correlation::Defined(r) => write!(f, "{r}"),
            Correlation::Degenerate(why) => write!(f, "degenerate ({why})"),
        }
    }
}

/// Two-pass Pearson correlation in `f64`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("pearson: {} vs {} samples", a.len(), b.len())));
    }
    if let Some(v) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("pearson: non-finite sample {v}")));
    }
    if a.len() < 2 {
        return Ok(Correlation::Degenerate(format!("{} samples", a.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        let which = if saa == 0.0 { "first" } else { "second" };
        return Ok(Correlation::Degenerate(format!("{which} input has zero variance")));
    }
    Ok(Correlation::Defined((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

/// Per-class accuracies of two evaluations on the same classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScatter {
    /// `(class, accuracy_a, accuracy_b)` for classes present in both.
    pub pairs: Vec<(usize, f64, f64)>,
    pub correlation: Correlation,
}

pub fn per_class_scatter(a: &EvalReport, b: &EvalReport) -> Result<ClassScatter> {
    if a.per_class.len() != b.per_class.len() {
        return Err(Error::Shape(format!("{} vs {} classes", a.per_class.len(), b.per_class.len())));
    }
    let pairs: Vec<(usize, f64, f64)> = a
        .per_class
        .iter()
        .zip(&b.per_class)
        .enumerate()
        .filter(|(_, (x, y))| x.is_finite() && y.is_finite())
        .map(|(c, (&x, &y))| (c, x, y))
        .collect();
    let xs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    Ok(ClassScatter { correlation: pearson(&xs, &ys)?, pairs })
}

/// Pearson correlation over all `(image, class)` logit pairs.
pub fn logit_correlation(a: &Tensor, b: &Tensor) -> Result<Correlation> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("logit shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    pearson(&a.to_f64_vec(), &b.to_f64_vec())
}

/// Correlation after pairing the rows (images) of `b` with a seeded random
/// permutation of the rows of `a`: a null reference for [`logit_correlation`].
pub fn permuted_logit_correlation(a: &Tensor, b: &Tensor, seed: u64) -> Result<Correlation> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::Shape(format!("expected equal [N, K] shapes, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, Stream::Probe, 0));
    let permuted: Vec<f64> = order.iter().flat_map(|&i| a.data()[i * k..(i + 1) * k].iter().map(|&v| v as f64)).collect();
    pearson(&permuted, &b.to_f64_vec())
}
