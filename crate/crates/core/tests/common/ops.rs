//! Finite-difference gradient checks shared by the gradient and acceptance targets.

use bagnet::arch::Mode;
use bagnet::tape::{BnMode, Tape, Var};
use bagnet::{Result, Scalar, Tensor};

use super::{away_from_zero, check_model, check_op, rng, uniform};

pub const SEEDS: u64 = 10;

/// Accepted relative error for the precision of `T`.
pub fn tolerance<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 4 {
        1e-2
    } else {
        1e-4
    }
}

/// Largest relative error of one case over all seeds and inputs.
fn worst<T: Scalar>(
    out: &mut Vec<(String, f64)>,
    name: &str,
    make: impl Fn(u64) -> Vec<Tensor<T>>,
    build: &dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) {
    let mut max = 0.0f64;
    for seed in 0..SEEDS {
        for e in check_op(&make(seed), build, seed).expect("gradient check runs") {
            max = max.max(e);
        }
    }
    out.push((name.to_string(), max));
}

fn conv_case<T: Scalar>(out: &mut Vec<(String, f64)>, k: usize, stride: usize, pad: usize) {
    worst::<T>(
        out,
        &format!("conv2d k{k} s{stride} p{pad}"),
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[2, 3, 7, 7], -1.0, 1.0, &mut r), uniform(&[4, 3, k, k], -0.5, 0.5, &mut r)]
        },
        &move |t, v| t.conv2d(v[0], v[1], stride, pad),
    );
}

/// Worst relative error of every differentiable op, each over `SEEDS` seeds.
pub fn op_errors<T: Scalar>() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 0), (3, 1, 0), (1, 1, 0), (1, 2, 0)] {
        conv_case::<T>(&mut out, k, stride, pad);
    }
    worst::<T>(&mut out, "relu", |s| vec![away_from_zero(&[2, 3, 4, 4], 0.1, &mut rng(s, 0))], &|t, v| t.relu(v[0]));
    worst::<T>(
        &mut out,
        "batch_norm train",
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[3, 2, 3, 3], -2.0, 2.0, &mut r), uniform(&[2], 0.5, 1.5, &mut r), uniform(&[2], -0.5, 0.5, &mut r)]
        },
        &|t, v| Ok(t.batch_norm(v[0], v[1], v[2], BnMode::Train)?.0),
    );
    worst::<T>(
        &mut out,
        "batch_norm eval",
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[2, 2, 3, 3], -2.0, 2.0, &mut r), uniform(&[2], 0.5, 1.5, &mut r), uniform(&[2], -0.5, 0.5, &mut r)]
        },
        &|t, v| Ok(t.batch_norm(v[0], v[1], v[2], BnMode::Eval { mean: &[0.3, -0.1], var: &[0.7, 1.9] })?.0),
    );
    worst::<T>(
        &mut out,
        "add",
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut r), uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut r)]
        },
        &|t, v| t.add(v[0], v[1]),
    );
    worst::<T>(&mut out, "crop", |s| vec![uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut rng(s, 0))], &|t, v| t.crop(v[0], 1, 2, 3, 2));
    worst::<T>(&mut out, "spatial_mean", |s| vec![uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng(s, 0))], &|t, v| t.spatial_mean(v[0]));
    worst::<T>(
        &mut out,
        "linear",
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[3, 5], -1.0, 1.0, &mut r), uniform(&[4, 5], -1.0, 1.0, &mut r), uniform(&[4], -1.0, 1.0, &mut r)]
        },
        &|t, v| t.linear(v[0], v[1], Some(v[2])),
    );
    worst::<T>(
        &mut out,
        "linear without bias",
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[3, 5], -1.0, 1.0, &mut r), uniform(&[4, 5], -1.0, 1.0, &mut r)]
        },
        &|t, v| t.linear(v[0], v[1], None),
    );
    worst::<T>(
        &mut out,
        "local_linear",
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[2, 5, 3, 3], -1.0, 1.0, &mut r), uniform(&[4, 5], -1.0, 1.0, &mut r), uniform(&[4], -1.0, 1.0, &mut r)]
        },
        &|t, v| t.local_linear(v[0], v[1], Some(v[2])),
    );
    worst::<T>(
        &mut out,
        "softmax_cross_entropy",
        |s| vec![uniform(&[4, 5], -3.0, 3.0, &mut rng(s, 0))],
        &|t, v| t.softmax_cross_entropy(v[0], &[0, 4, 2, 2]),
    );
    worst::<T>(&mut out, "class_sum", |s| vec![uniform(&[3, 4], -1.0, 1.0, &mut rng(s, 0))], &|t, v| t.class_sum(v[0], 2));
    worst::<T>(
        &mut out,
        "conv, batch norm, relu and mean chained",
        |s| {
            let mut r = rng(s, 0);
            vec![uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut r), uniform(&[3, 3, 3, 3], -0.5, 0.5, &mut r)]
        },
        &|t, v| {
            let h = t.conv2d(v[0], v[1], 1, 1)?;
            let g = t.constant(Tensor::full(&[3], Scalar::from_f64(1.0)))?;
            let b = t.constant(Tensor::full(&[3], Scalar::from_f64(0.0)))?;
            let (h, _) = t.batch_norm(h, g, b, BnMode::Train)?;
            let h = t.add(h, h)?;
            t.spatial_mean(h)
        },
    );
    out
}

/// Worst relative error of each tiny-model parameter over `SEEDS` seeds.
pub fn model_errors<T: Scalar>(mode: Mode) -> Vec<(String, f64)> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    for seed in 0..SEEDS {
        for (i, (name, e)) in check_model::<T>(seed, mode).expect("model gradient check runs").into_iter().enumerate() {
            match worst.get_mut(i) {
                Some(w) => w.1 = w.1.max(e),
                None => worst.push((format!("{name} ({mode:?})"), e)),
            }
        }
    }
    worst
}
