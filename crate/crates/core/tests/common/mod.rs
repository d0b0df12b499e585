//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod ops;

use bagnet::arch::{BagNetConfig, BlockSpec, Mode, ModelState, StemSpec};
use bagnet::rng::{rng_for, Stream};
use bagnet::tape::{Tape, Var};
use bagnet::{Result, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64, index: u64) -> ChaCha8Rng {
    rng_for(seed, Stream::Probe, index)
}

pub fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(lo..hi)))
}

/// Values with magnitude in `[gap, gap + 1)` and random sign, so that small
/// perturbations never cross zero.
pub fn away_from_zero<T: Scalar>(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = gap + rng.random::<f64>();
        T::from_f64(if rng.random::<bool>() { m } else { -m })
    })
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Perturbation step that suits the precision of `T`.
pub fn fd_step<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 4 {
        1e-2
    } else {
        1e-6
    }
}

/// Central difference of `f` along every coordinate of `x`. The step is the
/// exact distance between the two representable perturbed values.
pub fn numeric_gradient<T: Scalar>(x: &Tensor<T>, eps: f64, mut f: impl FnMut(&Tensor<T>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let v = x.data()[i].to_f64();
            let mut plus = x.clone();
            plus.data_mut()[i] = T::from_f64(v + eps);
            let mut minus = x.clone();
            minus.data_mut()[i] = T::from_f64(v - eps);
            let h = plus.data()[i].to_f64() - minus.data()[i].to_f64();
            (f(&plus) - f(&minus)) / h
        })
        .collect()
}

pub type Build<'a, T> = &'a dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>;

/// Compare the tape's gradients of `Σ w ⊙ build(inputs)` (with fixed random
/// weights `w`) against central differences. Returns the relative error per input.
pub fn check_op<T: Scalar>(inputs: &[Tensor<T>], build: Build<'_, T>, seed: u64) -> Result<Vec<f64>> {
    let mut tape = Tape::<T>::new();
    let vars = inputs.iter().map(|x| tape.leaf(x.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    let shape = tape.shape(out).to_vec();
    let mut wrng = rng(seed, 1000);
    let weights: Tensor<T> = if shape.iter().product::<usize>() == 1 && shape.len() <= 1 {
        Tensor::full(&shape, T::from_f64(1.0))
    } else {
        uniform(&shape, -1.0, 1.0, &mut wrng)
    };
    let grads = if weights.len() == 1 && shape.is_empty() {
        tape.backward(out)?
    } else {
        tape.backward_with_seed(out, weights.clone())?
    };
    let objective = |values: &[Tensor<T>]| -> f64 {
        let mut t = Tape::<T>::inference();
        let vs: Vec<Var> = values.iter().map(|x| t.constant(x.clone()).expect("finite input")).collect();
        let o = build(&mut t, &vs).expect("forward");
        t.value(o).data().iter().zip(weights.data()).map(|(a, b)| a.to_f64() * b.to_f64()).sum()
    };
    let eps = fd_step::<T>();
    let mut errors = Vec::new();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var).map(|g| g.to_f64_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let numeric = numeric_gradient(&inputs[k], eps, |x| {
            let mut values = inputs.to_vec();
            values[k] = x.clone();
            objective(&values)
        });
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

/// Small BagNet (q = 5) used for whole-model checks.
pub fn tiny_config(num_classes: usize) -> BagNetConfig {
    let stem = StemSpec { kernel: 3, stride: 1, pad: 1, channels: 4 };
    let block = BlockSpec::new(4, 2, 3, 2);
    BagNetConfig {
        name: "tiny".into(),
        q: 5,
        input_size: 8,
        num_classes,
        feature_dim: block.out_channels,
        stem,
        blocks: vec![block],
    }
}

/// Relative error of every parameter's loss gradient on a tiny model. The
/// analytic gradient is computed in `T`; the reference is always a central
/// difference in `f64` at the same parameter values.
pub fn check_model<T: Scalar>(seed: u64, mode: Mode) -> Result<Vec<(String, f64)>> {
    let mut model = ModelState::build(tiny_config(3), seed)?;
    let mut r = rng(seed, 2000);
    if mode == Mode::Eval {
        for bn in &mut model.bn {
            bn.running_mean.iter_mut().for_each(|m| *m = r.random_range(-0.2..0.2));
            bn.running_var.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
        }
    }
    let images: Tensor<f64> = uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r);
    let labels = [0, 2];
    let values: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.cast()).collect();
    let cast: Vec<Tensor<T>> = values.iter().map(Tensor::cast).collect();
    let out = model.loss_at(&cast, &images.cast(), &labels, mode, true)?;
    let mut errors = Vec::new();
    for (slot, p) in model.params.iter().enumerate() {
        let analytic = out.grads[slot].as_ref().map(|g| g.to_f64_vec()).unwrap_or_else(|| vec![0.0; p.value.len()]);
        let numeric = numeric_gradient(&values[slot], fd_step::<f64>(), |x| {
            let mut v = values.clone();
            v[slot] = x.clone();
            model.loss_at(&v, &images, &labels, mode, false).expect("forward").loss
        });
        errors.push((p.name.clone(), relative_error(&analytic, &numeric)));
    }
    Ok(errors)
}
