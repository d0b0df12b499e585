//! Explicit per-patch evaluation and empirical receptive-field certification.

use rand::Rng;

use super::evidence::EvidenceMap;
use super::model::{Mode, ModelState};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::tape::Tape;
use crate::tensor::Tensor;

const ORACLE_CHUNK: usize = 256;

/// Evidence computed by cropping every `q × q` window (from the zero-padded
/// image) and running the network on each crop independently.
pub fn patch_oracle_evidence(model: &ModelState, image: &Tensor) -> Result<EvidenceMap> {
    model.ensure_eval()?;
    let cfg = &model.config;
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::Shape(format!("expected [3, H, W] image, got {:?}", s))),
    };
    if c != 3 || h < cfg.q || w < cfg.q {
        return Err(Error::Shape(format!("image {:?} incompatible with q = {}", image.shape(), cfg.q)));
    }
    let (hm, wm) = (cfg.map_extent(h)?, cfg.map_extent(w)?);
    let stride = cfg.heatmap_stride();
    let q = cfg.q;
    let padded = Tensor::stack(std::slice::from_ref(image))?.pad_hw(cfg.stem.pad)?;
    let k = cfg.num_classes;
    let mut logits = vec![0.0f32; k * hm * wm];
    let locations: Vec<(usize, usize)> = (0..hm).flat_map(|i| (0..wm).map(move |j| (i, j))).collect();
    for chunk in locations.chunks(ORACLE_CHUNK) {
        let crops: Vec<Tensor> = chunk
            .iter()
            .map(|&(i, j)| padded.crop_hw(i * stride, j * stride, q, q).map(|t| t.sample(0)))
            .collect::<Result<_>>()?;
        let batch = Tensor::stack(&crops)?;
        let mut tape = Tape::<f32>::inference();
        let vars = model.bind(&mut tape, false)?;
        let x = tape.constant(batch)?;
        let f = model.features(&mut tape, x, &vars, Mode::Eval, Some(0), &mut Vec::new())?;
        if tape.shape(f)[2..] != [1, 1] {
            return Err(Error::Config(format!("{}: a {}x{} crop does not reduce to one location", cfg.name, q, q)));
        }
        let e = tape.local_linear(f, vars[model.classifier_weight_slot()], Some(vars[model.classifier_bias_slot()]))?;
        let out = tape.value(e).data();
        for (row, &(i, j)) in chunk.iter().enumerate() {
            for class in 0..k {
                logits[(class * hm + i) * wm + j] = out[row * k + class];
            }
        }
    }
    Ok(EvidenceMap { logits: Tensor::new(&[k, hm, wm], logits)?, stride, rf_size: q, origin: cfg.rf_origin() })
}

/// A pixel outside the declared window whose perturbation moved the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Leak {
    /// Offset of the pixel relative to the declared window's top-left corner.
    pub offset: (isize, isize),
    pub leakage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub location: (usize, usize),
    /// Top-left corner and side of the declared window.
    pub window: (isize, isize, usize),
    pub max_leakage: f64,
    pub center_response: f64,
    pub passed: bool,
    pub failure: Option<Leak>,
}

/// Maximum tolerated logit change from a perturbation outside the window.
pub const LEAKAGE_TOLERANCE: f64 = 1e-6;

/// Probe locality of location `(i, j)`: pixels outside the declared `q × q`
/// window (the full one-pixel ring around it, random outside pixels, and the
/// whole outside region at once) must not move its logits, while the window
/// centre must.
pub fn certify_receptive_field(model: &ModelState, location: (usize, usize), trials: usize, seed: u64) -> Result<Certificate> {
    model.ensure_eval()?;
    let cfg = &model.config;
    let side = cfg.input_size;
    let (hm, wm) = (cfg.map_extent(side)?, cfg.map_extent(side)?);
    let (li, lj) = location;
    if li >= hm || lj >= wm {
        return Err(Error::InvalidArgument(format!("location {:?} outside {}x{} map", location, hm, wm)));
    }
    let q = cfg.q as isize;
    let stride = cfg.heatmap_stride() as isize;
    let top = cfg.rf_origin() + li as isize * stride;
    let left = cfg.rf_origin() + lj as isize * stride;
    let inside = |r: isize, c: isize| r >= top && r < top + q && c >= left && c < left + q;
    let in_image = |r: isize, c: isize| r >= 0 && c >= 0 && r < side as isize && c < side as isize;

    let mut ring = Vec::new();
    for r in top - 1..=top + q {
        for c in left - 1..=left + q {
            if !inside(r, c) && in_image(r, c) {
                ring.push((r, c));
            }
        }
    }
    let outside: Vec<(isize, isize)> = (0..side as isize)
        .flat_map(|r| (0..side as isize).map(move |c| (r, c)))
        .filter(|&(r, c)| !inside(r, c))
        .collect();
    let center = (top + q / 2, left + q / 2);
    if !in_image(center.0, center.1) {
        return Err(Error::InvalidArgument(format!("window centre {:?} outside the image", center)));
    }

    let mut max_leakage = 0.0f64;
    let mut center_response = 0.0f64;
    let mut failure: Option<Leak> = None;
    for trial in 0..trials.max(1) {
        let mut rng = rng_for(seed, Stream::Certify, trial as u64);
        let base = Tensor::from_fn(&[3, side, side], |_| rng.random_range(-2.0f32..2.0));
        let mut probes: Vec<(Option<(isize, isize)>, Tensor)> = Vec::new();
        let perturb = |img: &mut Tensor, r: isize, c: isize, rng: &mut rand_chacha::ChaCha8Rng| {
            for ch in 0..3 {
                let idx = (ch * side + r as usize) * side + c as usize;
                img.data_mut()[idx] += rng.random_range(1.0f32..3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        };
        for &(r, c) in &ring {
            let mut img = base.clone();
            perturb(&mut img, r, c, &mut rng);
            probes.push((Some((r, c)), img));
        }
        for _ in 0..16.min(outside.len()) {
            let (r, c) = outside[rng.random_range(0..outside.len())];
            let mut img = base.clone();
            perturb(&mut img, r, c, &mut rng);
            probes.push((Some((r, c)), img));
        }
        if !outside.is_empty() {
            let mut img = base.clone();
            for &(r, c) in &outside {
                perturb(&mut img, r, c, &mut rng);
            }
            probes.push((None, img));
        }
        let mut img = base.clone();
        perturb(&mut img, center.0, center.1, &mut rng);
        let center_idx = probes.len();
        probes.push((Some(center), img));

        let mut batch = vec![base];
        batch.extend(probes.iter().map(|(_, t)| t.clone()));
        let evidence = model.evidence_tensor(&Tensor::stack(&batch)?)?;
        let at = |n: usize| -> Vec<f64> {
            let (_, k, eh, ew) = evidence.dims4().expect("rank 4");
            (0..k).map(|c| evidence.data()[((n * k + c) * eh + li) * ew + lj] as f64).collect()
        };
        let reference = at(0);
        for (p, (pixel, _)) in probes.iter().enumerate() {
            let delta = at(p + 1).iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if p == center_idx {
                center_response = center_response.max(delta);
                continue;
            }
            if delta > max_leakage {
                max_leakage = delta;
            }
            if delta > LEAKAGE_TOLERANCE && failure.as_ref().is_none_or(|f| delta > f.leakage) {
                let offset = pixel.map(|(r, c)| (r - top, c - left)).unwrap_or((isize::MIN, isize::MIN));
                failure = Some(Leak { offset, leakage: delta });
            }
        }
    }
    let passed = failure.is_none() && center_response > 0.0;
    Ok(Certificate { location, window: (top, left, cfg.q), max_leakage, center_response, passed, failure })
}
