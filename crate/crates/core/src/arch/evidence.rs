use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-location class evidence `logits[c, i, j]` and where each location looks.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceMap {
    /// `[num_classes, Hm, Wm]`
    pub logits: Tensor,
    /// Pixels between adjacent locations.
    pub stride: usize,
    /// Side of each location's square window (`q`).
    pub rf_size: usize,
    /// Top-left pixel of location (0, 0); negative when the window reaches into padding.
    pub origin: isize,
}

impl EvidenceMap {
    pub fn num_classes(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.logits.shape()[2]
    }

    pub fn get(&self, class: usize, i: usize, j: usize) -> f32 {
        let (h, w) = (self.height(), self.width());
        self.logits.data()[(class * h + i) * w + j]
    }

    /// Evidence plane of one class, row-major `[Hm · Wm]`.
    pub fn plane(&self, class: usize) -> &[f32] {
        let p = self.height() * self.width();
        &self.logits.data()[class * p..(class + 1) * p]
    }

    /// Pixel coordinates `(row, col)` of the top-left corner of `(i, j)`'s window.
    pub fn rf_top_left(&self, i: usize, j: usize) -> (isize, isize) {
        (self.origin + (i * self.stride) as isize, self.origin + (j * self.stride) as isize)
    }

    /// Pixel coordinates of the window centre.
    pub fn rf_center(&self, i: usize, j: usize) -> (isize, isize) {
        let (r, c) = self.rf_top_left(i, j);
        let half = (self.rf_size / 2) as isize;
        (r + half, c + half)
    }

    /// Whether `(i, j)`'s window lies fully inside an `h × w` image.
    pub fn is_interior(&self, i: usize, j: usize, h: usize, w: usize) -> bool {
        let (r, c) = self.rf_top_left(i, j);
        let q = self.rf_size as isize;
        r >= 0 && c >= 0 && r + q <= h as isize && c + q <= w as isize
    }

    /// Whether `(i, j)`'s window intersects the pixel rectangle `[top, top+h) × [left, left+w)`.
    pub fn window_intersects(&self, i: usize, j: usize, top: usize, left: usize, h: usize, w: usize) -> bool {
        let (r, c) = self.rf_top_left(i, j);
        let q = self.rf_size as isize;
        let (top, left) = (top as isize, left as isize);
        r < top + h as isize && top < r + q && c < left + w as isize && left < c + q
    }

    /// Number of pixels shared by `(i, j)`'s window and the rectangle `[top, top+h) × [left, left+w)`.
    pub fn window_overlap(&self, i: usize, j: usize, top: usize, left: usize, h: usize, w: usize) -> usize {
        let (r, c) = self.rf_top_left(i, j);
        let q = self.rf_size as isize;
        let span = |a: isize, b: isize, len: usize| ((a + q).min(b + len as isize) - a.max(b)).max(0) as usize;
        span(r, top as isize, h) * span(c, left as isize, w)
    }

    /// Apply `f` to every logit, keeping the geometry.
    pub fn map_logits(&self, f: impl Fn(f32) -> f32) -> EvidenceMap {
        EvidenceMap { logits: self.logits.map(f), ..self.clone() }
    }
}

/// Image-level logits: the per-class spatial mean of the evidence.
pub fn image_logits(evidence: &EvidenceMap) -> Tensor {
    let k = evidence.num_classes();
    let data = (0..k)
        .map(|c| {
            let plane = evidence.plane(c);
            (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
        })
        .collect();
    Tensor::new(&[k], data).expect("class count matches data")
}

/// Softmax in `f64` of a logit vector.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let row: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    crate::tape::softmax_row(&row).0
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn split_evidence(batch: &Tensor, stride: usize, rf_size: usize, origin: isize) -> Result<Vec<EvidenceMap>> {
    let (n, _, _, _) = batch.dims4()?;
    if n == 0 {
        return Err(Error::Shape("empty evidence batch".into()));
    }
    Ok((0..n).map(|i| EvidenceMap { logits: batch.sample(i), stride, rf_size, origin }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(data: Vec<f32>, k: usize, h: usize, w: usize) -> EvidenceMap {
        EvidenceMap { logits: Tensor::new(&[k, h, w], data).unwrap(), stride: 4, rf_size: 9, origin: -1 }
    }

    #[test]
    fn image_logits_of_constant_and_single_location() {
        let m = map(vec![2.5; 2 * 3 * 3], 2, 3, 3);
        assert_eq!(image_logits(&m).data(), &[2.5, 2.5]);
        let m = map(vec![1.0, -4.0], 2, 1, 1);
        assert_eq!(image_logits(&m).data(), &[1.0, -4.0]);
    }

    #[test]
    fn image_logits_match_reference_mean() {
        let data: Vec<f32> = (0..3 * 4 * 5).map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.3).collect();
        let m = map(data.clone(), 3, 4, 5);
        let got = image_logits(&m);
        for c in 0..3 {
            let want: f64 = data[c * 20..(c + 1) * 20].iter().map(|&v| v as f64).sum::<f64>() / 20.0;
            assert!((got.data()[c] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 10.0, 10.0]), 1);
    }

    #[test]
    fn window_geometry() {
        let m = map(vec![0.0; 7 * 7], 1, 7, 7);
        assert_eq!(m.rf_top_left(0, 0), (-1, -1));
        assert_eq!(m.rf_top_left(2, 3), (7, 11));
        assert!(!m.is_interior(0, 0, 32, 32));
        assert!(m.is_interior(1, 1, 32, 32));
        assert!(m.is_interior(6, 6, 32, 32));
        assert!(m.window_intersects(0, 0, 0, 0, 1, 1));
        assert!(!m.window_intersects(0, 0, 8, 0, 4, 4));
        assert!(m.window_intersects(0, 0, 7, 7, 4, 4));
    }
}
