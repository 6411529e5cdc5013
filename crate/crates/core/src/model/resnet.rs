//! Width-scalable ResNet-32 backbone (GroupNorm + Mish) with one linear
//! head per task.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::width::{norm_groups, WidthConfig};
use crate::error::{Error, Result};
use crate::nn::activation::{mish_backward, mish_forward};
use crate::nn::linear::{global_avg_pool, global_avg_pool_backward};
use crate::nn::norm::GroupNormCache;
use crate::nn::{Conv2d, Float, GroupNorm, Linear, Param, Tensor};

pub type TaskId = u32;

/// Residual blocks per stage; 6·5 + 2 = 32 weighted layers.
pub const BLOCKS_PER_STAGE: usize = 5;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
struct Projection<F> {
    conv: Conv2d<F>,
    norm: GroupNorm<F>,
}

#[derive(Debug, Clone, PartialEq)]
struct BasicBlock<F> {
    conv1: Conv2d<F>,
    norm1: GroupNorm<F>,
    conv2: Conv2d<F>,
    norm2: GroupNorm<F>,
    shortcut: Option<Projection<F>>,
}

struct BlockCache<F> {
    input: Tensor<F>,
    c1: Tensor<F>,
    n1: GroupNormCache<F>,
    a1: Tensor<F>,
    c2: Tensor<F>,
    n2: GroupNormCache<F>,
    proj: Option<(Tensor<F>, GroupNormCache<F>)>,
    sum: Tensor<F>,
}

impl<F: Float> BasicBlock<F> {
    fn new(cin: usize, cout: usize, stride: usize, k: usize) -> Self {
        let shortcut = (stride != 1 || cin != cout).then(|| Projection {
            conv: Conv2d::new(cin, cout, 1, stride, 0),
            norm: GroupNorm::new(cout, norm_groups(cout, k)),
        });
        Self {
            conv1: Conv2d::new(cin, cout, 3, stride, 1),
            norm1: GroupNorm::new(cout, norm_groups(cout, k)),
            conv2: Conv2d::new(cout, cout, 3, 1, 1),
            norm2: GroupNorm::new(cout, norm_groups(cout, k)),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let c1 = self.conv1.forward(x);
        let m1 = mish_forward(&self.norm1.forward(&c1).0);
        let c2 = self.conv2.forward(&m1);
        let mut sum = self.norm2.forward(&c2).0;
        self.add_shortcut(x, &mut sum);
        mish_forward(&sum)
    }

    fn add_shortcut(&self, x: &Tensor<F>, sum: &mut Tensor<F>) -> Option<(Tensor<F>, GroupNormCache<F>)> {
        match &self.shortcut {
            Some(p) => {
                let pc = p.conv.forward(x);
                let (pn, cache) = p.norm.forward(&pc);
                sum.data.iter_mut().zip(&pn.data).for_each(|(s, v)| *s = *s + *v);
                Some((pc, cache))
            }
            None => {
                sum.data.iter_mut().zip(&x.data).for_each(|(s, v)| *s = *s + *v);
                None
            }
        }
    }

    fn forward_train(&self, x: Tensor<F>) -> (Tensor<F>, BlockCache<F>) {
        let c1 = self.conv1.forward(&x);
        let (a1, n1) = self.norm1.forward(&c1);
        let m1 = mish_forward(&a1);
        let c2 = self.conv2.forward(&m1);
        drop(m1);
        let (mut sum, n2) = self.norm2.forward(&c2);
        let proj = self.add_shortcut(&x, &mut sum);
        let out = mish_forward(&sum);
        (out, BlockCache { input: x, c1, n1, a1, c2, n2, proj, sum })
    }

    fn backward(&mut self, cache: BlockCache<F>, dout: &Tensor<F>) -> Tensor<F> {
        let dsum = mish_backward(&cache.sum, dout);
        let dc2 = self.norm2.backward(&cache.c2, &cache.n2, &dsum);
        let m1 = mish_forward(&cache.a1);
        let dm1 = self.conv2.backward(&m1, &dc2, true).expect("input grad requested");
        drop(m1);
        let da1 = mish_backward(&cache.a1, &dm1);
        let dc1 = self.norm1.backward(&cache.c1, &cache.n1, &da1);
        let mut dx = self.conv1.backward(&cache.input, &dc1, true).expect("input grad requested");
        match (&mut self.shortcut, cache.proj) {
            (Some(p), Some((pc, pcache))) => {
                let dpc = p.norm.backward(&pc, &pcache, &dsum);
                let dpx = p.conv.backward(&cache.input, &dpc, true).expect("input grad requested");
                dx.data.iter_mut().zip(&dpx.data).for_each(|(a, b)| *a = *a + *b);
            }
            _ => dx.data.iter_mut().zip(&dsum.data).for_each(|(a, b)| *a = *a + *b),
        }
        dx
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        out.push((format!("{prefix}.conv1.weight"), &self.conv1.weight));
        out.push((format!("{prefix}.norm1.weight"), &self.norm1.weight));
        out.push((format!("{prefix}.norm1.bias"), &self.norm1.bias));
        out.push((format!("{prefix}.conv2.weight"), &self.conv2.weight));
        out.push((format!("{prefix}.norm2.weight"), &self.norm2.weight));
        out.push((format!("{prefix}.norm2.bias"), &self.norm2.bias));
        if let Some(p) = &self.shortcut {
            out.push((format!("{prefix}.shortcut.conv.weight"), &p.conv.weight));
            out.push((format!("{prefix}.shortcut.norm.weight"), &p.norm.weight));
            out.push((format!("{prefix}.shortcut.norm.bias"), &p.norm.bias));
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((format!("{prefix}.conv1.weight"), &mut self.conv1.weight));
        out.push((format!("{prefix}.norm1.weight"), &mut self.norm1.weight));
        out.push((format!("{prefix}.norm1.bias"), &mut self.norm1.bias));
        out.push((format!("{prefix}.conv2.weight"), &mut self.conv2.weight));
        out.push((format!("{prefix}.norm2.weight"), &mut self.norm2.weight));
        out.push((format!("{prefix}.norm2.bias"), &mut self.norm2.bias));
        if let Some(p) = &mut self.shortcut {
            out.push((format!("{prefix}.shortcut.conv.weight"), &mut p.conv.weight));
            out.push((format!("{prefix}.shortcut.norm.weight"), &mut p.norm.weight));
            out.push((format!("{prefix}.shortcut.norm.bias"), &mut p.norm.bias));
        }
    }

    fn norms(&self) -> Vec<&GroupNorm<F>> {
        let mut v = vec![&self.norm1, &self.norm2];
        if let Some(p) = &self.shortcut {
            v.push(&p.norm);
        }
        v
    }
}

/// Shared trunk: stem convolution, three residual stages, global pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<F> {
    stem: Conv2d<F>,
    stem_norm: GroupNorm<F>,
    blocks: Vec<BasicBlock<F>>,
    feature_dim: usize,
}

/// Everything the backward pass needs from a training forward pass.
pub struct ForwardCache<F> {
    images: Tensor<F>,
    stem_c: Tensor<F>,
    stem_n: GroupNormCache<F>,
    blocks: Vec<BlockCache<F>>,
    last_shape: [usize; 4],
    features: Vec<F>,
}

impl<F: Float> Backbone<F> {
    fn new(width: &WidthConfig) -> Self {
        let k = width.norm_k;
        let ch = width.stage_channels();
        let mut blocks = Vec::with_capacity(3 * BLOCKS_PER_STAGE);
        let mut cin = ch[0];
        for (stage, &cout) in ch.iter().enumerate() {
            for b in 0..BLOCKS_PER_STAGE {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(cin, cout, stride, k));
                cin = cout;
            }
        }
        Self {
            stem: Conv2d::new(INPUT_CHANNELS, ch[0], 3, 1, 1),
            stem_norm: GroupNorm::new(ch[0], norm_groups(ch[0], k)),
            blocks,
            feature_dim: ch[2],
        }
    }

    fn forward(&self, images: &Tensor<F>) -> Vec<F> {
        let mut x = mish_forward(&self.stem_norm.forward(&self.stem.forward(images)).0);
        for b in &self.blocks {
            x = b.forward(&x);
        }
        global_avg_pool(&x)
    }

    fn forward_train(&self, images: Tensor<F>) -> ForwardCache<F> {
        let stem_c = self.stem.forward(&images);
        let (a, stem_n) = self.stem_norm.forward(&stem_c);
        let mut x = mish_forward(&a);
        drop(a);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward_train(x);
            caches.push(cache);
            x = out;
        }
        let features = global_avg_pool(&x);
        ForwardCache { images, stem_c, stem_n, blocks: caches, last_shape: x.shape(), features }
    }

    fn backward(&mut self, mut cache: ForwardCache<F>, dfeatures: &[F]) {
        let [n, c, h, w] = cache.last_shape;
        let mut d = global_avg_pool_backward(dfeatures, n, c, h, w);
        for block in self.blocks.iter_mut().rev() {
            let bc = cache.blocks.pop().expect("one cache per block");
            d = block.backward(bc, &d);
        }
        // d is the gradient w.r.t. mish(stem_norm(stem_c))
        let (a, _) = self.stem_norm.forward(&cache.stem_c);
        let da = mish_backward(&a, &d);
        let dc = self.stem_norm.backward(&cache.stem_c, &cache.stem_n, &da);
        self.stem.backward(&cache.images, &dc, false);
    }

    fn params(&self) -> Vec<(String, &Param<F>)> {
        let mut out = vec![
            ("backbone.stem.conv.weight".to_string(), &self.stem.weight),
            ("backbone.stem.norm.weight".to_string(), &self.stem_norm.weight),
            ("backbone.stem.norm.bias".to_string(), &self.stem_norm.bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("backbone.blocks.{i:02}"), &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out = vec![
            ("backbone.stem.conv.weight".to_string(), &mut self.stem.weight),
            ("backbone.stem.norm.weight".to_string(), &mut self.stem_norm.weight),
            ("backbone.stem.norm.bias".to_string(), &mut self.stem_norm.bias),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&format!("backbone.blocks.{i:02}"), &mut out);
        }
        out
    }
}

/// Output of a forward pass: pooled features plus logits from every head.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult<F> {
    pub batch: usize,
    pub feature_dim: usize,
    /// `batch × feature_dim`, row-major.
    pub features: Vec<F>,
    /// Per head, `batch × num_classes` row-major.
    pub logits: BTreeMap<TaskId, Vec<F>>,
}

impl<F: Float> ForwardResult<F> {
    pub fn feature_row(&self, i: usize) -> &[F] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn logit_row(&self, task: TaskId, i: usize) -> Option<&[F]> {
        let l = self.logits.get(&task)?;
        let classes = l.len() / self.batch.max(1);
        Some(&l[i * classes..(i + 1) * classes])
    }
}

/// Backbone parameter count at `width`, heads excluded.
pub fn backbone_param_count(width: &WidthConfig) -> usize {
    Backbone::<f32>::new(width).params().iter().map(|(_, p)| p.len()).sum()
}

/// Hard-parameter-sharing classifier: one backbone, one head per task.
#[derive(Debug, Clone, PartialEq)]
pub struct MdlModel<F = f32> {
    pub width: WidthConfig,
    pub image_size: usize,
    backbone: Backbone<F>,
    heads: BTreeMap<TaskId, Linear<F>>,
}

impl<F: Float> MdlModel<F> {
    /// Builds a freshly initialized model. `head_sizes` maps task label to
    /// number of classes.
    pub fn new(width: WidthConfig, head_sizes: &BTreeMap<TaskId, usize>, image_size: usize, seed: u64) -> Result<Self> {
        width.validate()?;
        if head_sizes.is_empty() {
            return Err(Error::invalid("model needs at least one head"));
        }
        if let Some((t, _)) = head_sizes.iter().find(|(_, &c)| c == 0) {
            return Err(Error::invalid(format!("head {t} has zero classes")));
        }
        if image_size < 4 {
            return Err(Error::invalid(format!("image size {image_size} too small for three stages")));
        }
        let backbone = Backbone::new(&width);
        let heads = head_sizes.iter().map(|(&t, &c)| (t, Linear::new(backbone.feature_dim, c))).collect();
        let mut model = Self { width, image_size, backbone, heads };
        model.initialize(seed);
        Ok(model)
    }

    /// He fan-out normal convolutions, unit/zero normalization affine,
    /// uniform(±1/√fan_in) head weights with zero bias.
    fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, p) in self.backbone.params_mut() {
            if p.shape.len() == 4 {
                let fan_out = p.shape[0] * p.shape[2] * p.shape[3];
                let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("finite std");
                p.value.iter_mut().for_each(|v| *v = F::from_f64_lossy(normal.sample(&mut rng)));
            }
        }
        let tasks: Vec<TaskId> = self.heads.keys().copied().collect();
        for t in tasks {
            self.init_head(t, &mut rng);
        }
    }

    fn init_head(&mut self, task: TaskId, rng: &mut ChaCha8Rng) {
        let head = self.heads.get_mut(&task).expect("head exists");
        let bound = 1.0 / (head.in_features as f64).sqrt();
        head.weight.value.iter_mut().for_each(|v| *v = F::from_f64_lossy(rng.random_range(-bound..bound)));
        head.bias.value.iter_mut().for_each(|v| *v = F::zero());
    }

    /// Replaces all heads with freshly initialized ones (fine-tuning).
    pub fn reset_heads(&mut self, head_sizes: &BTreeMap<TaskId, usize>, seed: u64) -> Result<()> {
        if head_sizes.is_empty() {
            return Err(Error::invalid("model needs at least one head"));
        }
        let dim = self.backbone.feature_dim;
        self.heads = head_sizes.iter().map(|(&t, &c)| (t, Linear::new(dim, c))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks: Vec<TaskId> = self.heads.keys().copied().collect();
        for t in tasks {
            self.init_head(t, &mut rng);
        }
        Ok(())
    }

    /// Adds (or replaces) one freshly initialized head, keeping the others.
    pub fn add_head(&mut self, task: TaskId, classes: usize, seed: u64) -> Result<()> {
        if classes == 0 {
            return Err(Error::invalid(format!("head {task} has zero classes")));
        }
        self.heads.insert(task, Linear::new(self.backbone.feature_dim, classes));
        self.init_head(task, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim
    }

    pub fn head_sizes(&self) -> BTreeMap<TaskId, usize> {
        self.heads.iter().map(|(&t, h)| (t, h.out_features)).collect()
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.heads.keys().copied()
    }

    pub fn has_head(&self, task: TaskId) -> bool {
        self.heads.contains_key(&task)
    }

    /// Number of scalar parameters.
    pub fn param_count(&self, include_heads: bool) -> usize {
        let backbone: usize = self.backbone.params().iter().map(|(_, p)| p.len()).sum();
        let heads: usize = if include_heads {
            self.heads.values().map(|h| h.weight.len() + h.bias.len()).sum()
        } else {
            0
        };
        backbone + heads
    }

    /// Stable `(name, parameter)` listing: backbone first, then heads.
    pub fn params(&self) -> Vec<(String, &Param<F>)> {
        let mut out = self.backbone.params();
        for (t, h) in &self.heads {
            out.push((format!("heads.{t}.weight"), &h.weight));
            out.push((format!("heads.{t}.bias"), &h.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out = self.backbone.params_mut();
        for (t, h) in self.heads.iter_mut() {
            out.push((format!("heads.{t}.weight"), &mut h.weight));
            out.push((format!("heads.{t}.bias"), &mut h.bias));
        }
        out
    }

    pub fn backbone_params(&self) -> Vec<(String, &Param<F>)> {
        self.backbone.params()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// `(channels, groups)` at every normalization site.
    pub fn norm_sites(&self) -> Vec<(usize, usize)> {
        let mut v = vec![(self.backbone.stem_norm.channels, self.backbone.stem_norm.groups)];
        for b in &self.backbone.blocks {
            v.extend(b.norms().iter().map(|n| (n.channels, n.groups)));
        }
        v
    }

    fn check_input(&self, images: &Tensor<F>) -> Result<()> {
        if images.c != INPUT_CHANNELS || images.h != self.image_size || images.w != self.image_size {
            return Err(Error::Shape(format!(
                "expected N×{}×{}×{} images, got {:?}",
                INPUT_CHANNELS,
                self.image_size,
                self.image_size,
                images.shape()
            )));
        }
        Ok(())
    }

    fn heads_forward(&self, features: Vec<F>, batch: usize) -> ForwardResult<F> {
        let logits = self.heads.iter().map(|(&t, h)| (t, h.forward(&features, batch))).collect();
        ForwardResult { batch, feature_dim: self.backbone.feature_dim, features, logits }
    }

    /// Inference pass; no state is kept.
    pub fn forward(&self, images: &Tensor<F>) -> Result<ForwardResult<F>> {
        self.check_input(images)?;
        let features = self.backbone.forward(images);
        Ok(self.heads_forward(features, images.n))
    }

    /// Pass that retains activations for [`MdlModel::backward`].
    pub fn forward_train(&self, images: Tensor<F>) -> Result<(ForwardResult<F>, ForwardCache<F>)> {
        self.check_input(&images)?;
        let batch = images.n;
        let mut cache = self.backbone.forward_train(images);
        let result = self.heads_forward(std::mem::take(&mut cache.features), batch);
        cache.features = result.features.clone();
        Ok((result, cache))
    }

    /// Accumulates parameter gradients given `∂loss/∂logits` for the heads
    /// that received any gradient. Heads absent from `dlogits` are untouched.
    pub fn backward(&mut self, cache: ForwardCache<F>, dlogits: &BTreeMap<TaskId, Vec<F>>) -> Result<()> {
        let batch = cache.images.n;
        let dim = self.backbone.feature_dim;
        let mut dfeat = vec![F::zero(); batch * dim];
        for (t, d) in dlogits {
            let head = self.heads.get_mut(t).ok_or(Error::UnknownTask(*t))?;
            if d.len() != batch * head.out_features {
                return Err(Error::Shape(format!("dlogits for head {t} has {} entries", d.len())));
            }
            let dx = head.backward(&cache.features, d, batch);
            dfeat.iter_mut().zip(&dx).for_each(|(a, b)| *a = *a + *b);
        }
        self.backbone.backward(cache, &dfeat);
        Ok(())
    }

    /// The same model in another precision (gradients reset).
    pub fn cast<G: Float>(&self) -> MdlModel<G> {
        let mut out = MdlModel::<G> {
            width: self.width,
            image_size: self.image_size,
            backbone: Backbone::new(&self.width),
            heads: self.heads.iter().map(|(&t, h)| (t, Linear::new(h.in_features, h.out_features))).collect(),
        };
        let src: Vec<Param<G>> = self.params().into_iter().map(|(_, p)| p.cast()).collect();
        for ((_, dst), p) in out.params_mut().into_iter().zip(src) {
            *dst = p;
        }
        out
    }
}
