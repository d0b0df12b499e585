use super::classifier::ImageClassifier;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn single(image: &Tensor) -> Result<(usize, usize)> {
    match image.shape() {
        &[3, h, w] => Ok((h, w)),
        s => Err(Error::Shape(format!("expected [3, H, W] image, got {s:?}"))),
    }
}

fn channel_sum(values: &[f32], h: usize, w: usize, f: impl Fn(f32) -> f64) -> Tensor {
    let plane = h * w;
    Tensor::from_fn(&[h, w], |p| (0..3).map(|ch| f(values[ch * plane + p])).sum::<f64>() as f32)
}

/// `|∂ℓ_c/∂x|` summed over channels, `[H, W]`.
pub fn saliency(model: &dyn ImageClassifier, image: &Tensor, class: usize) -> Result<Tensor> {
    let (h, w) = single(image)?;
    let grad = model.input_gradient(&Tensor::stack(std::slice::from_ref(image))?, class)?;
    Ok(channel_sum(grad.data(), h, w, |g| (g as f64).abs()))
}

/// Integrated-gradients attribution of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegratedGradients {
    /// Channel-summed attribution `[H, W]`.
    pub map: Tensor,
    /// `Σ` of all attributions.
    pub total: f64,
    /// `ℓ_c(image) − ℓ_c(baseline)`.
    pub logit_difference: f64,
}

impl IntegratedGradients {
    /// `|total − logit_difference| / |logit_difference|` (absolute error when the difference is 0).
    pub fn completeness_error(&self) -> f64 {
        let gap = (self.total - self.logit_difference).abs();
        if self.logit_difference == 0.0 {
            gap
        } else {
            gap / self.logit_difference.abs()
        }
    }
}

/// Midpoint Riemann sum of the gradient along the straight path from
/// `baseline` to `image`, times `image − baseline`. `None` uses the zero image.
pub fn integrated_gradients(
    model: &dyn ImageClassifier,
    image: &Tensor,
    class: usize,
    steps: usize,
    baseline: Option<&Tensor>,
) -> Result<IntegratedGradients> {
    let (h, w) = single(image)?;
    if steps < 8 {
        return Err(Error::InvalidArgument(format!("integrated gradients needs at least 8 steps, got {steps}")));
    }
    let zero = Tensor::zeros(image.shape());
    let base = baseline.unwrap_or(&zero);
    if base.shape() != image.shape() {
        return Err(Error::Shape("baseline shape differs from image".into()));
    }
    let diff: Vec<f64> = image.data().iter().zip(base.data()).map(|(&x, &b)| x as f64 - b as f64).collect();
    let path: Vec<Tensor> = (0..steps)
        .map(|s| {
            let alpha = (s as f64 + 0.5) / steps as f64;
            Tensor::from_fn(image.shape(), |i| (base.data()[i] as f64 + alpha * diff[i]) as f32)
        })
        .collect();
    let grads = model.input_gradient(&Tensor::stack(&path)?, class)?;
    let per = image.len();
    let mut avg = vec![0.0f64; per];
    for g in grads.data().chunks_exact(per) {
        for (a, &v) in avg.iter_mut().zip(g) {
            *a += v as f64;
        }
    }
    let attr: Vec<f32> = avg.iter().zip(&diff).map(|(&g, &d)| (g / steps as f64 * d) as f32).collect();
    let total = avg.iter().zip(&diff).map(|(&g, &d)| g / steps as f64 * d).sum();
    let ends = model.logits(&Tensor::stack(&[image.clone(), base.clone()])?)?;
    let k = model.num_classes();
    let logit_difference = ends.data()[class] as f64 - ends.data()[k + class] as f64;
    Ok(IntegratedGradients { map: channel_sum(&attr, h, w, |v| v as f64), total, logit_difference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpret::classifier::LinearPixelModel;

    fn linear() -> LinearPixelModel {
        LinearPixelModel { weights: Tensor::from_fn(&[2, 3, 4, 4], |i| ((i * 5 % 11) as f32 - 5.0) * 0.2), bias: vec![0.1, -0.3] }
    }

    #[test]
    fn ig_is_exact_on_linear_model() {
        let m = linear();
        let image = Tensor::from_fn(&[3, 4, 4], |i| (i % 7) as f32 * 0.3 - 1.0);
        for steps in [8, 13, 64] {
            let ig = integrated_gradients(&m, &image, 1, steps, None).unwrap();
            for p in 0..16 {
                let want: f64 = (0..3).map(|ch| image.data()[ch * 16 + p] as f64 * m.weights.data()[48 + ch * 16 + p] as f64).sum();
                assert!((ig.map.data()[p] as f64 - want).abs() < 1e-5);
            }
            assert!(ig.completeness_error() < 1e-5);
        }
    }

    #[test]
    fn zero_image_with_zero_baseline_gives_zero_map() {
        let ig = integrated_gradients(&linear(), &Tensor::zeros(&[3, 4, 4]), 0, 16, None).unwrap();
        assert!(ig.map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_of_zero_weights_is_zero() {
        let m = LinearPixelModel { weights: Tensor::zeros(&[1, 3, 4, 4]), bias: vec![1.0] };
        let s = saliency(&m, &Tensor::full(&[3, 4, 4], 0.5), 0).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(integrated_gradients(&linear(), &Tensor::zeros(&[3, 4, 4]), 0, 4, None).is_err());
    }
}
