use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::arch::EvidenceMap;
use crate::error::{Error, Result};

/// Binary PPM (`P6`) bytes of an interleaved RGB raster.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * width * height, "raster size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Interleave a planar `[3, h, w]` u8 image.
pub fn planar_to_rgb(planar: &[u8], h: usize, w: usize) -> Vec<u8> {
    let plane = h * w;
    (0..plane).flat_map(|p| [planar[p], planar[plane + p], planar[2 * plane + p]]).collect()
}

/// Diverging colour for `t ∈ [-1, 1]`: blue for negative, white at zero, red for positive.
pub fn diverging(t: f64) -> [u8; 3] {
    let t = t.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade, fade]
    } else {
        [fade, fade, 255]
    }
}

/// Render class `class` of `evidence` at `h × w` pixels. Each pixel takes the
/// colour of the location whose window centre is nearest; the scale is
/// symmetric around zero with range `±max|logit|` of this map.
pub fn render_heatmap(evidence: &EvidenceMap, class: usize, h: usize, w: usize) -> Result<Vec<u8>> {
    if class >= evidence.num_classes() {
        return Err(Error::InvalidArgument(format!("class {class} out of range")));
    }
    let plane = evidence.plane(class);
    let max = plane.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let centre = evidence.origin as f64 + (evidence.rf_size / 2) as f64;
    let stride = evidence.stride as f64;
    let nearest = |pixel: usize, n: usize| ((pixel as f64 - centre) / stride).round().clamp(0.0, (n - 1) as f64) as usize;
    let mut rgb = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        let i = nearest(y, evidence.height());
        for x in 0..w {
            let j = nearest(x, evidence.width());
            let v = evidence.get(class, i, j) as f64;
            rgb.extend_from_slice(&diverging(if max > 0.0 { v / max } else { 0.0 }));
        }
    }
    Ok(rgb)
}

/// `i,j,logit` rows of one class plane.
pub fn heatmap_csv(evidence: &EvidenceMap, class: usize) -> String {
    let mut s = String::from("i,j,logit\n");
    for i in 0..evidence.height() {
        for j in 0..evidence.width() {
            writeln!(s, "{i},{j},{}", evidence.get(class, i, j)).expect("writing to a String");
        }
    }
    s
}

pub fn parse_heatmap_csv(text: &str) -> Result<Vec<(usize, usize, f32)>> {
    let mut lines = text.lines();
    if lines.next() != Some("i,j,logit") {
        return Err(Error::InvalidArgument("missing heatmap CSV header".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::InvalidArgument(format!("malformed heatmap row {l:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Write `<path>` (PPM) and `<path>` with extension `csv` (raw logits).
pub fn export_heatmap(evidence: &EvidenceMap, class: usize, image_size: (usize, usize), path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = image_size;
    let rgb = render_heatmap(evidence, class, h, w)?;
    fs::write(path, encode_ppm(w, h, &rgb))?;
    fs::write(path.with_extension("csv"), heatmap_csv(evidence, class))?;
    Ok(())
}
