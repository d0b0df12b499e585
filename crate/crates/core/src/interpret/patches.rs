use std::fs;
use std::path::Path;

use super::heatmap::{encode_ppm, planar_to_rgb};
use super::threshold::dataset_evidence;
use crate::arch::ModelState;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// One evidence location and the pixels it sees.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub image_index: usize,
    pub location: (usize, usize),
    /// Top-left pixel of the window; negative where it reaches into padding.
    pub top_left: (isize, isize),
    pub q: usize,
    pub class: usize,
    pub logit: f32,
    pub image_label: usize,
    pub same_label: bool,
    /// Planar `[3, q, q]` crop; pixels outside the image are 0.
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopPatches {
    pub same: Vec<PatchRecord>,
    pub other: Vec<PatchRecord>,
    /// Fewer than `k` candidates were available for the respective list.
    pub same_short: bool,
    pub other_short: bool,
}

fn crop(dataset: &Dataset, index: usize, top: isize, left: isize, q: usize) -> Vec<u8> {
    let s = dataset.size as isize;
    let img = dataset.image(index);
    let mut out = vec![0u8; 3 * q * q];
    for ch in 0..3 {
        for y in 0..q {
            for x in 0..q {
                let (r, c) = (top + y as isize, left + x as isize);
                if r >= 0 && c >= 0 && r < s && c < s {
                    out[(ch * q + y) * q + x] = img[(ch as isize * s * s + r * s + c) as usize];
                }
            }
        }
    }
    out
}

/// The `k` highest-evidence locations for `class` among images labelled
/// `class` and, separately, among all other images. Ties go to the lower
/// `(image_index, i, j)`.
pub fn top_patches(model: &ModelState, dataset: &Dataset, class: usize, k: usize) -> Result<TopPatches> {
    if class >= model.num_classes() {
        return Err(Error::InvalidArgument(format!("class {class} out of range")));
    }
    let maps = dataset_evidence(model, dataset)?;
    let mut same = Vec::new();
    let mut other = Vec::new();
    for (n, m) in maps.iter().enumerate() {
        let target = if dataset.label(n) == class { &mut same } else { &mut other };
        for i in 0..m.height() {
            for j in 0..m.width() {
                target.push((m.get(class, i, j), n, i, j));
            }
        }
    }
    let build = |mut cands: Vec<(f32, usize, usize, usize)>| -> (Vec<PatchRecord>, bool) {
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
        let short = cands.len() < k;
        let records = cands
            .into_iter()
            .take(k)
            .map(|(logit, n, i, j)| {
                let top_left = maps[n].rf_top_left(i, j);
                let label = dataset.label(n);
                PatchRecord {
                    image_index: n,
                    location: (i, j),
                    top_left,
                    q: maps[n].rf_size,
                    class,
                    logit,
                    image_label: label,
                    same_label: label == class,
                    pixels: crop(dataset, n, top_left.0, top_left.1, maps[n].rf_size),
                }
            })
            .collect();
        (records, short)
    };
    let (same, same_short) = build(same);
    let (other, other_short) = build(other);
    Ok(TopPatches { same, other, same_short, other_short })
}

/// Write each record as `{class}_{rank}_{same|other}.ppm` in `dir`.
pub fn write_patches(dir: impl AsRef<Path>, patches: &TopPatches) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (tag, list) in [("same", &patches.same), ("other", &patches.other)] {
        for (rank, r) in list.iter().enumerate() {
            let rgb = planar_to_rgb(&r.pixels, r.q, r.q);
            fs::write(dir.join(format!("{}_{}_{}.ppm", r.class, rank, tag)), encode_ppm(r.q, r.q, &rgb))?;
        }
    }
    Ok(())
}
