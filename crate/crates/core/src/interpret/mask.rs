use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which grid cells a mask replaces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskPattern {
    /// Every second cell in every second row, starting at cell (0, 0).
    EverySecond,
    /// Explicit `(row, col)` grid cells.
    Cells(Vec<(usize, usize)>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill {
    /// The cell's own per-channel spatial mean.
    Dc,
    Constant(f32),
}

/// A set of `p × p` cells on a grid offset by `phase` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub p: usize,
    pub pattern: MaskPattern,
    pub fill: Fill,
    /// Pixel offset `(row0, col0)` of the grid; each must be below `p`.
    pub phase: (usize, usize),
}

impl MaskSpec {
    pub fn every_second(p: usize) -> Self {
        MaskSpec { p, pattern: MaskPattern::EverySecond, fill: Fill::Dc, phase: (0, 0) }
    }

    pub fn cells(p: usize, cells: Vec<(usize, usize)>) -> Self {
        MaskSpec { p, pattern: MaskPattern::Cells(cells), fill: Fill::Dc, phase: (0, 0) }
    }

    /// Number of whole grid cells along each axis of an `h × w` image.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.p == 0 || self.phase.0 >= self.p || self.phase.1 >= self.p {
            return Err(Error::InvalidArgument(format!("cell size {} with phase {:?}", self.p, self.phase)));
        }
        let rows = h.saturating_sub(self.phase.0) / self.p;
        let cols = w.saturating_sub(self.phase.1) / self.p;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!("no {}x{} cell fits a {h}x{w} image", self.p, self.p)));
        }
        Ok((rows, cols))
    }

    /// Selected cells in a fixed order, validated against the grid.
    pub fn selected(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let (rows, cols) = self.grid(h, w)?;
        let cells = match &self.pattern {
            MaskPattern::EverySecond => (0..rows).step_by(2).flat_map(|r| (0..cols).step_by(2).map(move |c| (r, c))).collect(),
            MaskPattern::Cells(list) => list.clone(),
        };
        let mut seen = std::collections::BTreeSet::new();
        for &(r, c) in &cells {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!("cell ({r}, {c}) outside the {rows}x{cols} grid")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::InvalidArgument(format!("cell ({r}, {c}) selected twice: cells overlap")));
            }
        }
        Ok(cells)
    }

    /// Pixel `(top, left)` of grid cell `(r, c)`.
    pub fn cell_origin(&self, cell: (usize, usize)) -> (usize, usize) {
        (self.phase.0 + cell.0 * self.p, self.phase.1 + cell.1 * self.p)
    }
}

/// The change one masked cell makes: `masked = image + delta` inside the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellDelta {
    pub cell: (usize, usize),
    pub top: usize,
    pub left: usize,
    /// `[3, p, p]`
    pub delta: Tensor,
}

impl CellDelta {
    /// Add this modification to a `[3, H, W]` image.
    pub fn apply_to(&self, image: &mut Tensor) {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let p = self.delta.shape()[1];
        let d = self.delta.data();
        let data = image.data_mut();
        for ch in 0..3 {
            for y in 0..p {
                for x in 0..p {
                    data[(ch * h + self.top + y) * w + self.left + x] += d[(ch * p + y) * p + x];
                }
            }
        }
    }
}

/// Replace the selected cells of a `[3, H, W]` image and return the
/// per-cell modifications.
pub fn apply_mask(image: &Tensor, spec: &MaskSpec) -> Result<(Tensor, Vec<CellDelta>)> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::Shape(format!("expected [3, H, W] image, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let p = spec.p;
    let mut masked = image.clone();
    let mut deltas = Vec::new();
    for cell in spec.selected(h, w)? {
        let (top, left) = spec.cell_origin(cell);
        let mut delta = vec![0.0f32; 3 * p * p];
        for ch in 0..3 {
            let at = |y: usize, x: usize| (ch * h + top + y) * w + left + x;
            let fill = match spec.fill {
                Fill::Constant(v) => v,
                Fill::Dc => {
                    let mut s = 0.0f64;
                    for y in 0..p {
                        for x in 0..p {
                            s += image.data()[at(y, x)] as f64;
                        }
                    }
                    (s / (p * p) as f64) as f32
                }
            };
            for y in 0..p {
                for x in 0..p {
                    let old = image.data()[at(y, x)];
                    masked.data_mut()[at(y, x)] = fill;
                    delta[(ch * p + y) * p + x] = fill - old;
                }
            }
        }
        deltas.push(CellDelta { cell, top, left, delta: Tensor::new(&[3, p, p], delta)? });
    }
    Ok((masked, deltas))
}

/// Fraction of the image area covered by the selected cells.
pub fn masked_fraction(spec: &MaskSpec, h: usize, w: usize) -> Result<f64> {
    Ok((spec.selected(h, w)?.len() * spec.p * spec.p) as f64 / (h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[3, h, w], |i| (i % 17) as f32 * 0.25 - 1.0)
    }

    #[test]
    fn constant_image_is_unchanged_by_dc_fill() {
        let img = Tensor::full(&[3, 16, 16], 0.7);
        let (masked, deltas) = apply_mask(&img, &MaskSpec::every_second(4)).unwrap();
        assert_eq!(masked, img);
        assert!(deltas.iter().all(|d| d.delta.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_cell_changes_only_inside_it() {
        let img = ramp(12, 12);
        let spec = MaskSpec::cells(4, vec![(1, 2)]);
        let (masked, deltas) = apply_mask(&img, &spec).unwrap();
        for ch in 0..3 {
            for y in 0..12 {
                for x in 0..12 {
                    let i = (ch * 12 + y) * 12 + x;
                    let inside = (4..8).contains(&y) && (8..12).contains(&x);
                    if !inside {
                        assert_eq!(masked.data()[i], img.data()[i]);
                    }
                }
            }
        }
        let mut rebuilt = img.clone();
        deltas[0].apply_to(&mut rebuilt);
        assert!(rebuilt.max_abs_diff(&masked) < 1e-6);
    }

    #[test]
    fn default_pattern_masks_a_quarter() {
        assert_eq!(masked_fraction(&MaskSpec::every_second(8), 32, 32).unwrap(), 0.25);
        assert_eq!(MaskSpec::every_second(8).selected(32, 32).unwrap().len(), 4);
    }

    #[test]
    fn duplicates_and_out_of_grid_cells_are_rejected() {
        let img = ramp(8, 8);
        assert!(apply_mask(&img, &MaskSpec::cells(4, vec![(0, 0), (0, 0)])).is_err());
        assert!(apply_mask(&img, &MaskSpec::cells(4, vec![(2, 0)])).is_err());
        let mut spec = MaskSpec::every_second(4);
        spec.phase = (4, 0);
        assert!(spec.grid(8, 8).is_err());
    }
}
