use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resize-then-crop training augmentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentSpec {
    pub resize_shorter_to: usize,
    pub crop: usize,
    pub horizontal_flip: bool,
    pub seed: u64,
}

impl AugmentSpec {
    /// No-op augmentation for `size × size` images.
    pub fn identity(size: usize, seed: u64) -> Self {
        AugmentSpec { resize_shorter_to: size, crop: size, horizontal_flip: false, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize_shorter_to {
            return Err(Error::Config(format!("crop {} must be in 1..={}", self.crop, self.resize_shorter_to)));
        }
        Ok(())
    }

    pub fn is_identity(&self, size: usize) -> bool {
        self.resize_shorter_to == size && self.crop == size && !self.horizontal_flip
    }
}

/// Bilinear resize (half-pixel centres, no antialiasing) of a planar
/// `[C, h, w]` float image to `[C, oh, ow]`.
pub fn resize_bilinear(src: &[f32], channels: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (oh, ow) == (h, w) {
        return src.to_vec();
    }
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(oh, h);
    let xs = axis(ow, w);
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
                let bottom = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// Resize a square `[3, S, S]` u8 image so its side is `resize_shorter_to`,
/// take a uniformly placed `crop × crop` window and optionally mirror it.
/// Output pixels are in `[0, 1]`.
pub fn random_resized_crop(image: &[u8], size: usize, spec: &AugmentSpec, rng: &mut impl Rng) -> Result<Tensor> {
    spec.validate()?;
    if image.len() != 3 * size * size {
        return Err(Error::Shape(format!("expected {} bytes for a {size}x{size} image, got {}", 3 * size * size, image.len())));
    }
    let scaled: Vec<f32> = image.iter().map(|&v| v as f32 / 255.0).collect();
    let r = spec.resize_shorter_to;
    let resized = resize_bilinear(&scaled, 3, size, size, r, r);
    let top = rng.random_range(0..=r - spec.crop);
    let left = rng.random_range(0..=r - spec.crop);
    let flip = spec.horizontal_flip && rng.random::<bool>();
    let c = spec.crop;
    let mut out = Vec::with_capacity(3 * c * c);
    for ch in 0..3 {
        for y in 0..c {
            let row = &resized[(ch * r + top + y) * r + left..(ch * r + top + y) * r + left + c];
            if flip {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    Tensor::new(&[3, c, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stream};

    fn gradient_image(size: usize) -> Vec<u8> {
        (0..3 * size * size).map(|i| ((i % (size * size)) % size * 255 / (size - 1)) as u8).collect()
    }

    #[test]
    fn equal_resize_and_crop_is_a_fixed_window() {
        let img = gradient_image(8);
        let spec = AugmentSpec::identity(8, 0);
        for trial in 0..4 {
            let mut rng = rng_for(trial, Stream::Augment, 0);
            let t = random_resized_crop(&img, 8, &spec, &mut rng).unwrap();
            let want: Vec<f32> = img.iter().map(|&v| v as f32 / 255.0).collect();
            assert_eq!(t.data(), &want[..]);
        }
    }

    #[test]
    fn same_rng_state_same_output() {
        let img = gradient_image(16);
        let spec = AugmentSpec { resize_shorter_to: 20, crop: 12, horizontal_flip: true, seed: 0 };
        let a = random_resized_crop(&img, 16, &spec, &mut rng_for(3, Stream::Augment, 1)).unwrap();
        let b = random_resized_crop(&img, 16, &spec, &mut rng_for(3, Stream::Augment, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resize_preserves_mean_of_smooth_gradient() {
        let size = 32;
        let img: Vec<f32> = (0..size * size).map(|i| ((i % size) + (i / size)) as f32 / (2 * size - 2) as f32).collect();
        let mean_in = img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
        for out in [20, 48, 64] {
            let r = resize_bilinear(&img, 1, size, size, out, out);
            let mean_out = r.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64;
            assert!((mean_out - mean_in).abs() / mean_in < 0.02, "{out}: {mean_out} vs {mean_in}");
        }
    }

    #[test]
    fn crop_larger_than_resize_is_rejected() {
        let spec = AugmentSpec { resize_shorter_to: 8, crop: 9, horizontal_flip: false, seed: 0 };
        assert!(spec.validate().is_err());
    }
}
