//! BagNet model state and forward passes.

use rand_distr::{Distribution, Normal};

use super::config::BagNetConfig;
use super::evidence::{argmax, image_logits, softmax, split_evidence, EvidenceMap};
use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::rng::{rng_for, Stream};
use crate::tape::{BatchStats, BnMode, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Running-statistics momentum of batch norm.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer, keyed by layer prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub name: String,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

/// Per-channel standardization applied to `[0, 1]` pixels before the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm { mean: [0.0; 3], std: [1.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvBn {
    weight: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct BlockPlan {
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: ConvBn,
    projection: Option<ConvBn>,
}

#[derive(Clone, Debug, PartialEq)]
struct Plan {
    stem: ConvBn,
    blocks: Vec<BlockPlan>,
    fc_weight: usize,
    fc_bias: usize,
}

/// Parameters, batch-norm statistics and input normalization of one BagNet.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: BagNetConfig,
    pub params: ParamStore,
    pub bn: Vec<BnState>,
    pub input_norm: InputNorm,
    pub mode: Mode,
    plan: Plan,
}

/// Loss, parameter gradients (by slot) and train-mode batch statistics.
#[derive(Debug)]
pub struct LossOutput<T: Scalar> {
    pub loss: f64,
    pub logits: Tensor<T>,
    pub grads: Vec<Option<Tensor<T>>>,
    pub batch_stats: Vec<(usize, BatchStats)>,
}

struct Builder<'a> {
    params: &'a mut ParamStore,
    bn: &'a mut Vec<BnState>,
    init: &'a mut dyn FnMut(&[usize], usize) -> Tensor,
}

impl Builder<'_> {
    fn conv_bn(&mut self, prefix: &str, bn_prefix: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<ConvBn> {
        let fan_in = cin * k * k;
        let weight = self.params.insert(&format!("{prefix}.weight"), (self.init)(&[cout, cin, k, k], fan_in))?;
        let gamma = self.params.insert(&format!("{bn_prefix}.weight"), Tensor::full(&[cout], 1.0))?;
        let beta = self.params.insert(&format!("{bn_prefix}.bias"), Tensor::zeros(&[cout]))?;
        self.bn.push(BnState { name: bn_prefix.to_string(), running_mean: vec![0.0; cout], running_var: vec![1.0; cout] });
        Ok(ConvBn { weight, gamma, beta, bn: self.bn.len() - 1, stride, pad })
    }
}

fn layout(config: &BagNetConfig, params: &mut ParamStore, bn: &mut Vec<BnState>, init: &mut dyn FnMut(&[usize], usize) -> Tensor) -> Result<Plan> {
    let mut b = Builder { params, bn, init };
    let s = &config.stem;
    let stem = b.conv_bn("stem.conv", "stem.bn", 3, s.channels, s.kernel, s.stride, s.pad)?;
    let mut blocks = Vec::new();
    for (i, spec) in config.blocks.iter().enumerate() {
        let p = format!("block{}", i + 1);
        let conv1 = b.conv_bn(&format!("{p}.conv1"), &format!("{p}.bn1"), spec.in_channels, spec.mid_channels, 1, 1, 0)?;
        let conv2 = b.conv_bn(&format!("{p}.conv2"), &format!("{p}.bn2"), spec.mid_channels, spec.mid_channels, spec.kernel, spec.stride, 0)?;
        let conv3 = b.conv_bn(&format!("{p}.conv3"), &format!("{p}.bn3"), spec.mid_channels, spec.out_channels, 1, 1, 0)?;
        let projection = if spec.has_projection() {
            Some(b.conv_bn(&format!("{p}.downsample.conv"), &format!("{p}.downsample.bn"), spec.in_channels, spec.out_channels, 1, spec.stride, 0)?)
        } else {
            None
        };
        blocks.push(BlockPlan { conv1, conv2, conv3, projection });
    }
    let fc_weight = b.params.insert("fc.weight", (b.init)(&[config.num_classes, config.feature_dim], config.feature_dim))?;
    let fc_bias = b.params.insert("fc.bias", Tensor::zeros(&[config.num_classes]))?;
    Ok(Plan { stem, blocks, fc_weight, fc_bias })
}

impl ModelState {
    /// Instantiate `config` with He-normal weights drawn from `seed`.
    pub fn build(config: BagNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, Stream::Init, 0);
        let mut init = |shape: &[usize], fan_in: usize| {
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng) as f32)
        };
        Self::with_init(config, &mut init)
    }

    /// All-zero weights; used when loading parameters from a checkpoint.
    pub fn zeroed(config: BagNetConfig) -> Result<Self> {
        config.validate()?;
        Self::with_init(config, &mut |shape: &[usize], _| Tensor::zeros(shape))
    }

    fn with_init(config: BagNetConfig, init: &mut dyn FnMut(&[usize], usize) -> Tensor) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let plan = layout(&config, &mut params, &mut bn, init)?;
        Ok(ModelState { config, params, bn, input_norm: InputNorm::default(), mode: Mode::Eval, plan })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn classifier_weight_slot(&self) -> usize {
        self.plan.fc_weight
    }

    pub fn classifier_bias_slot(&self) -> usize {
        self.plan.fc_bias
    }

    pub fn ensure_eval(&self) -> Result<()> {
        match self.mode {
            Mode::Eval => Ok(()),
            Mode::Train => Err(Error::Precondition("analysis requires a model in eval mode".into())),
        }
    }

    /// Place every parameter on `tape`, as leaves when gradients are wanted.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, grad: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| {
                let v = p.value.cast::<T>();
                if grad {
                    tape.leaf(v)
                } else {
                    tape.constant(v)
                }
            })
            .collect()
    }

    fn conv_bn<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        cb: &ConvBn,
        vars: &[Var],
        mode: Mode,
        pad: usize,
        stats: &mut Vec<(usize, BatchStats)>,
        relu: bool,
    ) -> Result<Var> {
        let h = tape.conv2d(x, vars[cb.weight], cb.stride, pad)?;
        let bn = &self.bn[cb.bn];
        let bn_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval { mean: &bn.running_mean, var: &bn.running_var },
        };
        let (h, s) = tape.batch_norm(h, vars[cb.gamma], vars[cb.beta], bn_mode)?;
        if let Some(s) = s {
            stats.push((cb.bn, s));
        }
        if relu {
            tape.relu(h)
        } else {
            Ok(h)
        }
    }

    /// Feature extractor: `[N, 3, H, W] -> [N, feature_dim, Hm, Wm]`.
    ///
    /// `stem_pad` overrides the configured stem padding (the patch oracle runs
    /// on pre-padded crops).
    pub fn features<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        vars: &[Var],
        mode: Mode,
        stem_pad: Option<usize>,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<Var> {
        let stem = &self.plan.stem;
        let mut x = self.conv_bn(tape, input, stem, vars, mode, stem_pad.unwrap_or(stem.pad), stats, true)?;
        for block in &self.plan.blocks {
            let h = self.conv_bn(tape, x, &block.conv1, vars, mode, 0, stats, true)?;
            let h = self.conv_bn(tape, h, &block.conv2, vars, mode, 0, stats, true)?;
            let h = self.conv_bn(tape, h, &block.conv3, vars, mode, 0, stats, false)?;
            let mut shortcut = match &block.projection {
                Some(p) => self.conv_bn(tape, x, p, vars, mode, 0, stats, false)?,
                None => x,
            };
            let (_, _, hh, hw) = tape.value(h).dims4()?;
            let (_, _, sh, sw) = tape.value(shortcut).dims4()?;
            if (sh, sw) != (hh, hw) {
                shortcut = tape.crop(shortcut, 0, 0, hh, hw)?;
            }
            let sum = tape.add(h, shortcut)?;
            x = tape.relu(sum)?;
        }
        Ok(x)
    }

    fn check_input<T: Scalar>(&self, images: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        if h < self.config.q || w < self.config.q {
            return Err(Error::Shape(format!("{}x{} image smaller than q = {}", h, w, self.config.q)));
        }
        Ok(())
    }

    /// Mean cross-entropy of `images` through average-then-classify, with
    /// optional parameter gradients. Running statistics are not touched.
    pub fn loss<T: Scalar>(&self, images: &Tensor<T>, labels: &[usize], mode: Mode, want_grads: bool) -> Result<LossOutput<T>> {
        let values: Vec<Tensor<T>> = self.params.iter().map(|p| p.value.cast()).collect();
        self.loss_at(&values, images, labels, mode, want_grads)
    }

    /// [`loss`](Self::loss) evaluated at explicit parameter values, given in slot order.
    pub fn loss_at<T: Scalar>(
        &self,
        values: &[Tensor<T>],
        images: &Tensor<T>,
        labels: &[usize],
        mode: Mode,
        want_grads: bool,
    ) -> Result<LossOutput<T>> {
        self.check_input(images)?;
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!("{} parameter values for {} slots", values.len(), self.params.len())));
        }
        for (v, p) in values.iter().zip(self.params.iter()) {
            if v.shape() != p.value.shape() {
                return Err(Error::Shape(format!("{}: value shape {:?}, expected {:?}", p.name, v.shape(), p.value.shape())));
            }
        }
        let mut tape = if want_grads { Tape::new() } else { Tape::inference() };
        let vars = values
            .iter()
            .map(|v| if want_grads { tape.leaf(v.clone()) } else { tape.constant(v.clone()) })
            .collect::<Result<Vec<_>>>()?;
        let x = tape.constant(images.clone())?;
        let mut batch_stats = Vec::new();
        let f = self.features(&mut tape, x, &vars, mode, None, &mut batch_stats)?;
        let pooled = tape.spatial_mean(f)?;
        let logits = tape.linear(pooled, vars[self.plan.fc_weight], Some(vars[self.plan.fc_bias]))?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let grads = if want_grads {
            let mut g = tape.backward(loss)?;
            vars.iter().map(|&v| g.take(v)).collect()
        } else {
            Vec::new()
        };
        Ok(LossOutput { loss: tape.value(loss).item().to_f64(), logits: tape.value(logits).clone(), grads, batch_stats })
    }

    /// Blend batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (idx, s) in stats {
            let bn = &mut self.bn[*idx];
            for (r, &m) in bn.running_mean.iter_mut().zip(&s.mean) {
                *r = ((1.0 - BN_MOMENTUM) * *r as f64 + BN_MOMENTUM * m) as f32;
            }
            for (r, &v) in bn.running_var.iter_mut().zip(&s.var_unbiased) {
                *r = ((1.0 - BN_MOMENTUM) * *r as f64 + BN_MOMENTUM * v) as f32;
            }
        }
    }

    /// Per-location evidence for a batch: `[N, 3, H, W] -> [N, K, Hm, Wm]`.
    pub fn evidence_tensor(&self, images: &Tensor) -> Result<Tensor> {
        self.ensure_eval()?;
        self.check_input(images)?;
        let mut tape = Tape::<f32>::inference();
        let vars = self.bind(&mut tape, false)?;
        let x = tape.constant(images.clone())?;
        let f = self.features(&mut tape, x, &vars, Mode::Eval, None, &mut Vec::new())?;
        let e = tape.local_linear(f, vars[self.plan.fc_weight], Some(vars[self.plan.fc_bias]))?;
        Ok(tape.value(e).clone())
    }

    pub fn forward_evidence_batch(&self, images: &Tensor) -> Result<Vec<EvidenceMap>> {
        let e = self.evidence_tensor(images)?;
        split_evidence(&e, self.config.heatmap_stride(), self.config.q, self.config.rf_origin())
    }

    /// Evidence map of a single `[3, H, W]` image.
    pub fn forward_evidence(&self, image: &Tensor) -> Result<EvidenceMap> {
        let batch = Tensor::stack(std::slice::from_ref(image))?;
        Ok(self.forward_evidence_batch(&batch)?.remove(0))
    }

    /// Image logits `[N, K]` for a batch via classify-then-average.
    pub fn image_logits_batch(&self, images: &Tensor) -> Result<Tensor> {
        let maps = self.forward_evidence_batch(images)?;
        let rows: Vec<Tensor> = maps.iter().map(image_logits).collect();
        Tensor::stack(&rows)
    }

    /// Average the features first, then apply the classifier.
    pub fn aggregate_then_classify(&self, images: &Tensor) -> Result<Tensor> {
        self.ensure_eval()?;
        Ok(self.loss_free_logits::<f32>(images)?)
    }

    fn loss_free_logits<T: Scalar>(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(images)?;
        let mut tape = Tape::<T>::inference();
        let vars = self.bind(&mut tape, false)?;
        let x = tape.constant(images.clone())?;
        let f = self.features(&mut tape, x, &vars, Mode::Eval, None, &mut Vec::new())?;
        let pooled = tape.spatial_mean(f)?;
        let logits = tape.linear(pooled, vars[self.plan.fc_weight], Some(vars[self.plan.fc_bias]))?;
        Ok(tape.value(logits).clone())
    }

    /// Image logits `[N, K]` and the gradient of `Σ_n logit[n, class]` with
    /// respect to the input pixels.
    pub fn input_gradient<T: Scalar>(&self, images: &Tensor<T>, class: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        self.ensure_eval()?;
        self.check_input(images)?;
        let mut tape = Tape::<T>::new();
        let vars = self.bind(&mut tape, false)?;
        let x = tape.leaf(images.clone())?;
        let f = self.features(&mut tape, x, &vars, Mode::Eval, None, &mut Vec::new())?;
        let pooled = tape.spatial_mean(f)?;
        let logits = tape.linear(pooled, vars[self.plan.fc_weight], Some(vars[self.plan.fc_bias]))?;
        let picked = tape.class_sum(logits, class)?;
        let mut g = tape.backward(picked)?;
        let grad = g.take(x).ok_or_else(|| Error::MissingGradient("input".into()))?;
        Ok((tape.value(logits).clone(), grad))
    }

    /// Class with the largest image logit (ties to the lowest index) and softmax probabilities.
    pub fn predict(&self, image: &Tensor) -> Result<(usize, Vec<f64>)> {
        let logits = image_logits(&self.forward_evidence(image)?);
        Ok((argmax(logits.data()), softmax(logits.data())))
    }
}
