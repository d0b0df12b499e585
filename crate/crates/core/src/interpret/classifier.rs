use crate::arch::ModelState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A differentiable image classifier over standardized `[N, 3, H, W]` inputs.
pub trait ImageClassifier: Sync {
    fn num_classes(&self) -> usize;

    /// Image logits `[N, K]`.
    fn logits(&self, images: &Tensor) -> Result<Tensor>;

    /// Gradient of `Σ_n logits[n, class]` with respect to `images`.
    fn input_gradient(&self, images: &Tensor, class: usize) -> Result<Tensor>;
}

impl ImageClassifier for ModelState {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.image_logits_batch(images)
    }

    fn input_gradient(&self, images: &Tensor, class: usize) -> Result<Tensor> {
        Ok(ModelState::input_gradient(self, images, class)?.1)
    }
}

/// `logits[c] = Σ_p weights[c, p] · x[p] + bias[c]`, a model linear in pixels.
#[derive(Clone, Debug)]
pub struct LinearPixelModel {
    /// `[K, 3, H, W]`
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

impl ImageClassifier for LinearPixelModel {
    fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = images.dims4()?;
        let per = c * h * w;
        if self.weights.len() != self.num_classes() * per {
            return Err(Error::Shape(format!("weights {:?} do not match images {:?}", self.weights.shape(), images.shape())));
        }
        let k = self.num_classes();
        let mut out = Vec::with_capacity(n * k);
        for img in images.data().chunks_exact(per) {
            for class in 0..k {
                let wrow = &self.weights.data()[class * per..(class + 1) * per];
                let dot: f64 = wrow.iter().zip(img).map(|(&a, &b)| a as f64 * b as f64).sum();
                out.push((dot + self.bias[class] as f64) as f32);
            }
        }
        Tensor::new(&[n, k], out)
    }

    fn input_gradient(&self, images: &Tensor, class: usize) -> Result<Tensor> {
        let (n, c, h, w) = images.dims4()?;
        let per = c * h * w;
        let wrow = &self.weights.data()[class * per..(class + 1) * per];
        Tensor::new(images.shape(), wrow.iter().copied().cycle().take(n * per).collect())
    }
}

/// Deliberately non-additive control: the single logit is the product of the
/// channel-mean intensities of two fixed square regions.
#[derive(Clone, Debug)]
pub struct ProductOfRegions {
    /// `(top, left)` of each region.
    pub regions: [(usize, usize); 2],
    pub side: usize,
}

impl ProductOfRegions {
    fn region_mean(&self, img: &[f32], h: usize, w: usize, r: usize) -> f64 {
        let (top, left) = self.regions[r];
        let mut s = 0.0;
        for ch in 0..3 {
            for y in top..top + self.side {
                for x in left..left + self.side {
                    s += img[(ch * h + y) * w + x] as f64;
                }
            }
        }
        s / (3 * self.side * self.side) as f64
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if self.regions.iter().any(|&(t, l)| t + self.side > h || l + self.side > w) {
            return Err(Error::Shape(format!("regions do not fit a {h}x{w} image")));
        }
        Ok(())
    }
}

impl ImageClassifier for ProductOfRegions {
    fn num_classes(&self) -> usize {
        1
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = images.dims4()?;
        self.check(h, w)?;
        let out = images
            .data()
            .chunks_exact(c * h * w)
            .map(|img| (self.region_mean(img, h, w, 0) * self.region_mean(img, h, w, 1)) as f32)
            .collect();
        Tensor::new(&[n, 1], out)
    }

    fn input_gradient(&self, images: &Tensor, _class: usize) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        self.check(h, w)?;
        let per = c * h * w;
        let norm = (3 * self.side * self.side) as f64;
        let mut grad = vec![0.0f32; images.len()];
        for (img, g) in images.data().chunks_exact(per).zip(grad.chunks_exact_mut(per)) {
            let means = [self.region_mean(img, h, w, 0), self.region_mean(img, h, w, 1)];
            for r in 0..2 {
                let (top, left) = self.regions[r];
                let other = means[1 - r];
                for ch in 0..3 {
                    for y in top..top + self.side {
                        for x in left..left + self.side {
                            g[(ch * h + y) * w + x] += (other / norm) as f32;
                        }
                    }
                }
            }
        }
        Tensor::new(images.shape(), grad)
    }
}
