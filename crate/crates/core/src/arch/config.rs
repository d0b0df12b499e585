//! Declarative network descriptions and receptive-field arithmetic.

use crate::error::{Error, Result};

/// Bottleneck expansion: output channels are four times the inner width.
pub const EXPANSION: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub channels: usize,
}

/// One bottleneck block: 1×1 → k×k (strided, unpadded) → 1×1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl BlockSpec {
    pub fn new(in_channels: usize, mid_channels: usize, kernel: usize, stride: usize) -> Self {
        BlockSpec { in_channels, mid_channels, out_channels: EXPANSION * mid_channels, kernel, stride }
    }

    /// Whether the identity path needs a 1×1 projection.
    pub fn has_projection(&self) -> bool {
        self.stride == 2 || self.in_channels != self.out_channels
    }
}

/// Geometry of one convolution along the feature-extraction path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagNetConfig {
    pub name: String,
    /// Declared patch size; must equal the computed receptive field.
    pub q: usize,
    pub input_size: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub stem: StemSpec,
    pub blocks: Vec<BlockSpec>,
}

/// Receptive field and jump of a layer stack: `rf ← rf + (k−1)·jump`, `jump ← jump·stride`.
pub fn receptive_field_of(layers: &[LayerGeom]) -> (usize, usize) {
    layers.iter().fold((1, 1), |(rf, jump), l| (rf + (l.kernel - 1) * jump, jump * l.stride))
}

/// `(receptive field, heatmap stride)` of the feature extractor (classifier excluded).
pub fn receptive_field(config: &BagNetConfig) -> (usize, usize) {
    receptive_field_of(&config.layers())
}

impl BagNetConfig {
    /// Convolutions along the longest path, in order.
    pub fn layers(&self) -> Vec<LayerGeom> {
        let mut layers = vec![LayerGeom { kernel: self.stem.kernel, stride: self.stem.stride, pad: self.stem.pad }];
        for b in &self.blocks {
            layers.push(LayerGeom { kernel: 1, stride: 1, pad: 0 });
            layers.push(LayerGeom { kernel: b.kernel, stride: b.stride, pad: 0 });
            layers.push(LayerGeom { kernel: 1, stride: 1, pad: 0 });
        }
        layers
    }

    pub fn heatmap_stride(&self) -> usize {
        receptive_field(self).1
    }

    /// Pixel coordinate of the top-left corner of location (0, 0)'s window.
    pub fn rf_origin(&self) -> isize {
        let mut origin = 0isize;
        let mut jump = 1isize;
        for l in self.layers() {
            origin -= l.pad as isize * jump;
            jump *= l.stride as isize;
        }
        origin
    }

    /// Spatial extent of the evidence map for an `h`-pixel input side.
    pub fn map_extent(&self, h: usize) -> Result<usize> {
        let mut size = h;
        for l in self.layers() {
            let padded = size + 2 * l.pad;
            if padded < l.kernel {
                return Err(Error::Shape(format!("{} px input too small for {}", h, self.name)));
            }
            size = (padded - l.kernel) / l.stride + 1;
        }
        Ok(size)
    }

    /// Checks structural invariants and that the receptive field equals `q`.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("{}: {}", self.name, msg)));
        if !matches!(self.stem.kernel, 1 | 3) || self.stem.stride == 0 || self.stem.channels == 0 {
            return fail(format!("invalid stem {:?}", self.stem));
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        let mut channels = self.stem.channels;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_channels != channels {
                return fail(format!("block {} expects {} input channels, previous layer has {}", i + 1, b.in_channels, channels));
            }
            if b.out_channels != EXPANSION * b.mid_channels {
                return fail(format!("block {} violates the x{} expansion", i + 1, EXPANSION));
            }
            if !matches!(b.kernel, 1 | 3) || !matches!(b.stride, 1 | 2) {
                return fail(format!("block {} has kernel {} stride {}", i + 1, b.kernel, b.stride));
            }
            channels = b.out_channels;
        }
        if channels != self.feature_dim {
            return fail(format!("final feature map has {} channels, feature_dim is {}", channels, self.feature_dim));
        }
        let (rf, _) = receptive_field(self);
        if rf != self.q {
            return fail(format!("receptive field is {} but q = {}", rf, self.q));
        }
        if self.input_size < self.q {
            return fail(format!("input size {} smaller than q = {}", self.input_size, self.q));
        }
        Ok(())
    }

    /// True when the evidence windows tile the input exactly: stride equals
    /// `q`, no padding, and the windows cover every pixel.
    pub fn tiles_exactly(&self, side: usize) -> bool {
        let (rf, stride) = receptive_field(self);
        rf == stride && self.rf_origin() == 0 && side % rf == 0 && self.map_extent(side).ok() == Some(side / rf)
    }

    fn desk(name: &str, q: usize, input_size: usize, num_classes: usize, stem: StemSpec, stages: &[(usize, usize)]) -> Self {
        let mut blocks = Vec::new();
        let mut ch = stem.channels;
        let mut mid = stem.channels / 2;
        for &(kernel, stride) in stages {
            let b = BlockSpec::new(ch, mid, kernel, stride);
            ch = b.out_channels;
            mid *= 2;
            blocks.push(b);
        }
        BagNetConfig { name: name.into(), q, input_size, num_classes, feature_dim: ch, stem, blocks }
    }

    fn desk_stem() -> StemSpec {
        StemSpec { kernel: 3, stride: 1, pad: 1, channels: 16 }
    }

    /// 3×3 stem followed by one 3×3/s2 stage and two 1×1 stages.
    pub fn bagnet5_32(num_classes: usize) -> Self {
        Self::desk("bagnet5-32", 5, 32, num_classes, Self::desk_stem(), &[(3, 2), (1, 2), (1, 1)])
    }

    /// 3×3 stem, two 3×3/s2 stages, one 1×1 stage: RF 9, stride 4.
    pub fn bagnet9_32(num_classes: usize) -> Self {
        Self::desk("bagnet9-32", 9, 32, num_classes, Self::desk_stem(), &[(3, 2), (3, 2), (1, 1)])
    }

    /// 3×3 stem, three 3×3/s2 stages: RF 17, stride 8.
    pub fn bagnet17_64(num_classes: usize) -> Self {
        Self::desk("bagnet17-64", 17, 64, num_classes, Self::desk_stem(), &[(3, 2), (3, 2), (3, 2)])
    }

    /// Non-overlapping 3×3 windows: unpadded stride-3 stem plus 1×1 stages.
    pub fn bagnet3_tiled_33(num_classes: usize) -> Self {
        let stem = StemSpec { kernel: 3, stride: 3, pad: 0, channels: 16 };
        Self::desk("bagnet3-tiled-33", 3, 33, num_classes, stem, &[(1, 1), (1, 1), (1, 1)])
    }

    /// Full-size layout (stages of 3, 4, 6, 3 blocks, 2048 features) for q ∈ {9, 17, 33}.
    pub fn full_scale(q: usize, num_classes: usize) -> Result<Self> {
        let three_by_three = match q {
            9 => [true, true, false, false],
            17 => [true, true, true, false],
            33 => [true, true, true, true],
            _ => return Err(Error::Config(format!("no full-size layout for q = {q}"))),
        };
        let stem = StemSpec { kernel: 3, stride: 1, pad: 0, channels: 64 };
        let mut blocks = Vec::new();
        let mut ch = 64;
        for (stage, (&count, &stride)) in [3usize, 4, 6, 3].iter().zip(&[2usize, 2, 2, 1]).enumerate() {
            let mid = 64 << stage;
            for i in 0..count {
                let first = i == 0;
                let kernel = if first && three_by_three[stage] { 3 } else { 1 };
                let b = BlockSpec::new(ch, mid, kernel, if first { stride } else { 1 });
                ch = b.out_channels;
                blocks.push(b);
            }
        }
        Ok(BagNetConfig {
            name: format!("bagnet{q}-224"),
            q,
            input_size: 224,
            num_classes,
            feature_dim: ch,
            stem,
            blocks,
        })
    }

    /// Desk-scale configurations shipped with the crate.
    pub fn shipped(num_classes: usize) -> Vec<Self> {
        vec![
            Self::bagnet5_32(num_classes),
            Self::bagnet9_32(num_classes),
            Self::bagnet17_64(num_classes),
            Self::bagnet3_tiled_33(num_classes),
        ]
    }

    /// A shipped configuration, or a full-size one named `bagnet{q}-224`.
    pub fn by_name(name: &str, num_classes: usize) -> Result<Self> {
        if let Some(q) = name.strip_prefix("bagnet").and_then(|r| r.strip_suffix("-224")).and_then(|q| q.parse().ok()) {
            return Self::full_scale(q, num_classes);
        }
        Self::shipped(num_classes)
            .into_iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("unknown config {name}")))
    }
}
