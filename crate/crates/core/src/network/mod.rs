//! Frame-level TDNN with conditioned attentive statistics pooling,
//! utterance-level layers, and a softmax speaker classifier. The
//! embedding is the affine output of the first utterance-level layer.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pooling::{
    attentive_pool, pooling_backward, stats_backward, vfr_weight_pooling,
    AttentionParams, ConditioningParams, PoolCache, PooledStats, Variant,
};
use crate::vfr::{align_conditioning, ConditioningVector};

pub mod io;

/// Temporal context offsets for the five frame-level layers.
pub const CONTEXTS: [&[i64]; 5] = [&[-2, -1, 0, 1, 2], &[-2, 0, 2], &[-3, 0, 3], &[0], &[0]];
/// Total receptive field of the frame-level stack.
pub const RECEPTIVE_FIELD: usize = 15;
/// Offset from a pooled frame back to its center on the feature grid.
pub const CENTER_OFFSET: usize = 7;

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// width of l1..l4
    pub frame_dim: usize,
    /// width of l5, the pooled feature dimension
    pub l5_dim: usize,
    /// width of l6 and l7; also the embedding dimension
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub n_speakers: usize,
    pub variant: Variant,
}

impl ModelConfig {
    /// Full-scale configuration: 512/1500/512 with a 500-node scorer.
    pub fn full(n_speakers: usize, variant: Variant) -> Self {
        Self {
            input_dim: 30,
            frame_dim: 512,
            l5_dim: 1500,
            embed_dim: 512,
            attention_dim: 500,
            n_speakers,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.frame_dim == 0
            || self.l5_dim == 0
            || self.embed_dim == 0
            || self.attention_dim == 0
            || self.n_speakers == 0
        {
            return Err(Error::InvalidConfig("all dimensions must be positive".into()));
        }
        Ok(())
    }

    fn frame_layer_dims(&self) -> [(usize, usize); 5] {
        [
            (self.input_dim, self.frame_dim),
            (self.frame_dim, self.frame_dim),
            (self.frame_dim, self.frame_dim),
            (self.frame_dim, self.frame_dim),
            (self.frame_dim, self.l5_dim),
        ]
    }
}

/// Plain affine layer; frame layers apply it to the stacked context.
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Affine {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Self { w: Array2::zeros((d_out, d_in)), b: Array1::zeros(d_out) }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    /// l1..l5
    pub frame_layers: Vec<Affine>,
    /// absent for the vfr_weights baseline
    pub attention: Option<AttentionParams>,
    pub conditioning: ConditioningParams,
    pub l6: Affine,
    pub l7: Affine,
    pub out: Affine,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SpeakerEmbedding {
    pub vector: Array1<f64>,
    pub utterance_id: String,
}

impl Model {
    /// Zero-valued model with the right shapes for `config`.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let frame_layers = config
            .frame_layer_dims()
            .iter()
            .zip(CONTEXTS.iter())
            .map(|(&(d_in, d_out), offs)| Affine::zeros(d_in * offs.len(), d_out))
            .collect();
        let attention = if config.variant == Variant::VfrWeights {
            None
        } else {
            Some(AttentionParams::zeros(config.l5_dim, config.attention_dim))
        };
        Ok(Self {
            frame_layers,
            attention,
            conditioning: ConditioningParams::zeros(config.variant, config.l5_dim)?,
            l6: Affine::zeros(2 * config.l5_dim, config.embed_dim),
            l7: Affine::zeros(config.embed_dim, config.embed_dim),
            out: Affine::zeros(config.embed_dim, config.n_speakers),
            config,
            seed: 0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut m = Self::zeros(self.config).expect("config already validated");
        m.seed = self.seed;
        m
    }

    /// All parameter tensors in a fixed declaration order, used by the
    /// optimizer and the model file format.
    pub fn tensor_views(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut v = Vec::new();
        for l in &self.frame_layers {
            v.push(l.w.view().into_dyn());
            v.push(l.b.view().into_dyn());
        }
        if let Some(a) = &self.attention {
            v.push(a.w1.view().into_dyn());
            v.push(a.b1.view().into_dyn());
            v.push(a.w2.view().into_dyn());
            v.push(a.b2.view().into_dyn());
        }
        match &self.conditioning {
            ConditioningParams::None => {}
            ConditioningParams::Concat(p) => {
                v.push(p.w.view().into_dyn());
                v.push(p.b.view().into_dyn());
            }
            ConditioningParams::Gate(p) => {
                v.push(p.w.view().into_dyn());
                v.push(p.b.view().into_dyn());
            }
            ConditioningParams::Affine(p) => {
                v.push(p.w_gamma.view().into_dyn());
                v.push(p.b_gamma.view().into_dyn());
                v.push(p.w_beta.view().into_dyn());
                v.push(p.b_beta.view().into_dyn());
            }
            ConditioningParams::CombinedA(pc, pg) => {
                v.push(pc.w.view().into_dyn());
                v.push(pc.b.view().into_dyn());
                v.push(pg.w.view().into_dyn());
                v.push(pg.b.view().into_dyn());
            }
            ConditioningParams::CombinedB(pc, pa) => {
                v.push(pc.w.view().into_dyn());
                v.push(pc.b.view().into_dyn());
                v.push(pa.w_gamma.view().into_dyn());
                v.push(pa.b_gamma.view().into_dyn());
                v.push(pa.w_beta.view().into_dyn());
                v.push(pa.b_beta.view().into_dyn());
            }
        }
        for l in [&self.l6, &self.l7, &self.out] {
            v.push(l.w.view().into_dyn());
            v.push(l.b.view().into_dyn());
        }
        v
    }

    pub fn tensor_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut v = Vec::new();
        for l in &mut self.frame_layers {
            v.push(l.w.view_mut().into_dyn());
            v.push(l.b.view_mut().into_dyn());
        }
        if let Some(a) = &mut self.attention {
            v.push(a.w1.view_mut().into_dyn());
            v.push(a.b1.view_mut().into_dyn());
            v.push(a.w2.view_mut().into_dyn());
            v.push(a.b2.view_mut().into_dyn());
        }
        match &mut self.conditioning {
            ConditioningParams::None => {}
            ConditioningParams::Concat(p) => {
                v.push(p.w.view_mut().into_dyn());
                v.push(p.b.view_mut().into_dyn());
            }
            ConditioningParams::Gate(p) => {
                v.push(p.w.view_mut().into_dyn());
                v.push(p.b.view_mut().into_dyn());
            }
            ConditioningParams::Affine(p) => {
                v.push(p.w_gamma.view_mut().into_dyn());
                v.push(p.b_gamma.view_mut().into_dyn());
                v.push(p.w_beta.view_mut().into_dyn());
                v.push(p.b_beta.view_mut().into_dyn());
            }
            ConditioningParams::CombinedA(pc, pg) => {
                v.push(pc.w.view_mut().into_dyn());
                v.push(pc.b.view_mut().into_dyn());
                v.push(pg.w.view_mut().into_dyn());
                v.push(pg.b.view_mut().into_dyn());
            }
            ConditioningParams::CombinedB(pc, pa) => {
                v.push(pc.w.view_mut().into_dyn());
                v.push(pc.b.view_mut().into_dyn());
                v.push(pa.w_gamma.view_mut().into_dyn());
                v.push(pa.b_gamma.view_mut().into_dyn());
                v.push(pa.w_beta.view_mut().into_dyn());
                v.push(pa.b_beta.view_mut().into_dyn());
            }
        }
        for l in [&mut self.l6, &mut self.l7, &mut self.out] {
            v.push(l.w.view_mut().into_dyn());
            v.push(l.b.view_mut().into_dyn());
        }
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensor_views().iter().map(|t| t.len()).sum()
    }

    /// Accumulates `other * scale` into self, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Model, scale: f64) {
        let src = other.tensor_views();
        for (dst, s) in self.tensor_views_mut().into_iter().zip(src) {
            ndarray::Zip::from(dst).and(&s).for_each(|d, &x| *d += scale * x);
        }
    }
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn init_affine(rng: &mut ChaCha8Rng, layer: &mut Affine) {
    let (o, i) = layer.w.dim();
    let vals = xavier(rng, i, o, o * i);
    layer.w.as_slice_mut().unwrap().copy_from_slice(&vals);
    // biases stay zero
}

fn init_vector(rng: &mut ChaCha8Rng, v: &mut Array1<f64>, fan_in: usize, fan_out: usize) {
    let vals = xavier(rng, fan_in, fan_out, v.len());
    v.as_slice_mut().unwrap().copy_from_slice(&vals);
}

/// Xavier-uniform weights, zero biases, deterministic in the seed.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<Model> {
    let mut model = Model::zeros(config)?;
    model.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut model.frame_layers {
        init_affine(&mut rng, l);
    }
    if let Some(a) = &mut model.attention {
        let (d_a, d_in) = a.w1.dim();
        let vals = xavier(&mut rng, d_in, d_a, d_a * d_in);
        a.w1.as_slice_mut().unwrap().copy_from_slice(&vals);
        init_vector(&mut rng, &mut a.w2, d_a, 1);
    }
    let d = config.l5_dim;
    match &mut model.conditioning {
        ConditioningParams::None => {}
        ConditioningParams::Concat(p) => {
            let vals = xavier(&mut rng, d + 1, d, d * (d + 1));
            p.w.as_slice_mut().unwrap().copy_from_slice(&vals);
        }
        ConditioningParams::Gate(p) => init_vector(&mut rng, &mut p.w, 1, d),
        ConditioningParams::Affine(p) => {
            init_vector(&mut rng, &mut p.w_gamma, 1, d);
            init_vector(&mut rng, &mut p.w_beta, 1, d);
        }
        ConditioningParams::CombinedA(pc, pg) => {
            let vals = xavier(&mut rng, d + 1, d, d * (d + 1));
            pc.w.as_slice_mut().unwrap().copy_from_slice(&vals);
            init_vector(&mut rng, &mut pg.w, 1, d);
        }
        ConditioningParams::CombinedB(pc, pa) => {
            let vals = xavier(&mut rng, d + 1, d, d * (d + 1));
            pc.w.as_slice_mut().unwrap().copy_from_slice(&vals);
            init_vector(&mut rng, &mut pa.w_gamma, 1, d);
            init_vector(&mut rng, &mut pa.w_beta, 1, d);
        }
    }
    init_affine(&mut rng, &mut model.l6);
    init_affine(&mut rng, &mut model.l7);
    init_affine(&mut rng, &mut model.out);
    Ok(model)
}

/// Gathers context frames into rows of a stacked matrix for one layer.
fn stack_context(x: &Array2<f64>, offsets: &[i64]) -> Array2<f64> {
    let min = *offsets.first().unwrap();
    let max = *offsets.last().unwrap();
    let span = (max - min) as usize;
    let t_out = x.nrows() - span;
    let d = x.ncols();
    let mut out = Array2::zeros((t_out, d * offsets.len()));
    for j in 0..t_out {
        for (k, &off) in offsets.iter().enumerate() {
            let src = j + (off - min) as usize;
            out.slice_mut(ndarray::s![j, k * d..(k + 1) * d])
                .assign(&x.row(src));
        }
    }
    out
}

/// Numerically stabilized softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.mapv(|z| (z - max).exp());
    let sum = p.sum();
    p /= sum;
    p
}

/// Pooling intermediates kept for backward.
#[derive(Debug)]
pub enum PoolMode {
    Attentive(PoolCache),
    VfrWeights(PooledStats),
}

impl PoolMode {
    pub fn stats(&self) -> &PooledStats {
        match self {
            PoolMode::Attentive(c) => &c.stats,
            PoolMode::VfrWeights(s) => s,
        }
    }
}

#[derive(Debug)]
pub struct ForwardCache {
    /// inputs to l1..l5 (post-ReLU of the previous layer)
    pub layer_inputs: Vec<Array2<f64>>,
    /// pre-activations of l1..l5
    pub layer_pre: Vec<Array2<f64>>,
    /// l5 output after ReLU, (T - 14) x l5_dim
    pub u: Array2<f64>,
    pub c_pooled: Vec<f64>,
    pub pool: PoolMode,
    /// [mu ; sigma]
    pub pooled: Array1<f64>,
    /// the embedding tap
    pub l6_pre: Array1<f64>,
    pub l6_post: Array1<f64>,
    pub l7_pre: Array1<f64>,
    pub l7_post: Array1<f64>,
    pub logits: Array1<f64>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Conditioning values at the context centers of the pooled frames:
/// value j comes from feature frame j + 7.
pub fn pooled_conditioning(c: &ConditioningVector, t_frames: usize) -> Vec<f64> {
    let aligned = align_conditioning(c, t_frames);
    let t_pooled = t_frames - (RECEPTIVE_FIELD - 1);
    aligned.values[CENTER_OFFSET..CENTER_OFFSET + t_pooled].to_vec()
}

/// Full forward pass; `feats` is T x input_dim on the 10 ms grid and `c`
/// the conditioning vector on the same grid.
pub fn forward(
    feats: &Array2<f64>,
    c: &ConditioningVector,
    model: &Model,
) -> Result<ForwardCache> {
    let t = feats.nrows();
    if t < RECEPTIVE_FIELD {
        return Err(Error::UtteranceTooShort { need: RECEPTIVE_FIELD, got: t });
    }
    if feats.ncols() != model.config.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "features have dim {}, model expects {}",
            feats.ncols(),
            model.config.input_dim
        )));
    }
    let c_pooled = pooled_conditioning(c, t);

    let mut layer_inputs = Vec::with_capacity(5);
    let mut layer_pre = Vec::with_capacity(5);
    let mut x = feats.to_owned();
    for (layer, offsets) in model.frame_layers.iter().zip(CONTEXTS.iter()) {
        let stacked = stack_context(&x, offsets);
        let mut pre = stacked.dot(&layer.w.t());
        pre += &layer.b;
        let post = relu(&pre);
        layer_inputs.push(x);
        layer_pre.push(pre);
        x = post;
    }
    let u = x;
    debug_assert_eq!(u.nrows(), t - (RECEPTIVE_FIELD - 1));
    debug_assert_eq!(c_pooled.len(), u.nrows());

    let pool = match (&model.attention, &model.conditioning) {
        (None, _) => PoolMode::VfrWeights(vfr_weight_pooling(&u, &c_pooled)?),
        (Some(attn), cond) => {
            PoolMode::Attentive(attentive_pool(&u, &c_pooled, attn, cond)?)
        }
    };
    let stats = pool.stats();
    let d5 = model.config.l5_dim;
    let mut pooled = Array1::zeros(2 * d5);
    pooled.slice_mut(ndarray::s![0..d5]).assign(&stats.mu);
    pooled.slice_mut(ndarray::s![d5..]).assign(&stats.sigma);

    let l6_pre = model.l6.w.dot(&pooled) + &model.l6.b;
    let l6_post = l6_pre.mapv(|v| v.max(0.0));
    let l7_pre = model.l7.w.dot(&l6_post) + &model.l7.b;
    let l7_post = l7_pre.mapv(|v| v.max(0.0));
    let logits = model.out.w.dot(&l7_post) + &model.out.b;

    Ok(ForwardCache {
        layer_inputs,
        layer_pre,
        u,
        c_pooled,
        pool,
        pooled,
        l6_pre,
        l6_post,
        l7_pre,
        l7_post,
        logits,
    })
}

/// The affine output of l6, before its ReLU.
pub fn extract_embedding(
    feats: &Array2<f64>,
    c: &ConditioningVector,
    model: &Model,
    utterance_id: &str,
) -> Result<SpeakerEmbedding> {
    let cache = forward(feats, c, model)?;
    Ok(SpeakerEmbedding { vector: cache.l6_pre, utterance_id: utterance_id.to_string() })
}

/// Cross-entropy gradients for every model parameter.
pub fn backward(
    feats: &Array2<f64>,
    cache: &ForwardCache,
    label: usize,
    model: &Model,
) -> Result<Model> {
    if label >= model.config.n_speakers {
        return Err(Error::LabelOutOfRange { label, n_classes: model.config.n_speakers });
    }
    let mut grads = model.zeros_like();

    // softmax + cross-entropy
    let mut d_logits = softmax(&cache.logits);
    d_logits[label] -= 1.0;

    // output head
    for (i, &g) in d_logits.iter().enumerate() {
        grads.out.w.row_mut(i).scaled_add(g, &cache.l7_post);
    }
    grads.out.b += &d_logits;
    let d_l7_post = model.out.w.t().dot(&d_logits);

    // l7
    let d_l7_pre = &d_l7_post * &cache.l7_pre.mapv(|v| f64::from(v > 0.0));
    for (i, &g) in d_l7_pre.iter().enumerate() {
        grads.l7.w.row_mut(i).scaled_add(g, &cache.l6_post);
    }
    grads.l7.b += &d_l7_pre;
    let d_l6_post = model.l7.w.t().dot(&d_l7_pre);

    // l6
    let d_l6_pre = &d_l6_post * &cache.l6_pre.mapv(|v| f64::from(v > 0.0));
    for (i, &g) in d_l6_pre.iter().enumerate() {
        grads.l6.w.row_mut(i).scaled_add(g, &cache.pooled);
    }
    grads.l6.b += &d_l6_pre;
    let d_pooled = model.l6.w.t().dot(&d_l6_pre);

    let d5 = model.config.l5_dim;
    let d_mu = d_pooled.slice(ndarray::s![0..d5]).to_owned();
    let d_sigma = d_pooled.slice(ndarray::s![d5..]).to_owned();

    // pooling
    let mut d_u = match (&cache.pool, &model.attention) {
        (PoolMode::Attentive(pool_cache), Some(attn)) => {
            let pg = pooling_backward(
                &cache.u,
                &cache.c_pooled,
                attn,
                &model.conditioning,
                pool_cache,
                &d_mu,
                &d_sigma,
            )?;
            let ga = grads.attention.as_mut().expect("grad model mirrors layout");
            ga.w1 += &pg.attn.w1;
            ga.b1 += &pg.attn.b1;
            ga.w2 += &pg.attn.w2;
            ga.b2 += &pg.attn.b2;
            accumulate_cond(&mut grads.conditioning, &pg.cond);
            pg.d_u
        }
        (PoolMode::VfrWeights(stats), None) => {
            let (d_u, _d_alpha) = stats_backward(&cache.u, stats, &d_mu, &d_sigma);
            d_u
        }
        _ => unreachable!("pool mode mirrors model layout"),
    };

    // frame-level layers, top down
    for i in (0..5).rev() {
        let pre = &cache.layer_pre[i];
        let d_pre = &d_u * &pre.mapv(|v| f64::from(v > 0.0));
        let x = &cache.layer_inputs[i];
        let offsets = CONTEXTS[i];
        let stacked = stack_context(x, offsets);
        grads.frame_layers[i].w += &d_pre.t().dot(&stacked);
        grads.frame_layers[i].b += &d_pre.sum_axis(Axis(0));
        if i == 0 {
            break; // no gradient needed for the input features
        }
        let d_stacked = d_pre.dot(&model.frame_layers[i].w);
        let d = x.ncols();
        let min = *offsets.first().unwrap();
        let mut d_x = Array2::zeros(x.dim());
        for j in 0..d_stacked.nrows() {
            for (k, &off) in offsets.iter().enumerate() {
                let dst = j + (off - min) as usize;
                let mut row = d_x.row_mut(dst);
                row += &d_stacked.slice(ndarray::s![j, k * d..(k + 1) * d]);
            }
        }
        d_u = d_x;
    }
    let _ = feats;
    Ok(grads)
}

fn accumulate_cond(dst: &mut ConditioningParams, src: &ConditioningParams) {
    match (dst, src) {
        (ConditioningParams::None, ConditioningParams::None) => {}
        (ConditioningParams::Concat(a), ConditioningParams::Concat(b)) => {
            a.w += &b.w;
            a.b += &b.b;
        }
        (ConditioningParams::Gate(a), ConditioningParams::Gate(b)) => {
            a.w += &b.w;
            a.b += &b.b;
        }
        (ConditioningParams::Affine(a), ConditioningParams::Affine(b)) => {
            a.w_gamma += &b.w_gamma;
            a.b_gamma += &b.b_gamma;
            a.w_beta += &b.w_beta;
            a.b_beta += &b.b_beta;
        }
        (ConditioningParams::CombinedA(ac, ag), ConditioningParams::CombinedA(bc, bg)) => {
            ac.w += &bc.w;
            ac.b += &bc.b;
            ag.w += &bg.w;
            ag.b += &bg.b;
        }
        (ConditioningParams::CombinedB(ac, aa), ConditioningParams::CombinedB(bc, ba)) => {
            ac.w += &bc.w;
            ac.b += &bc.b;
            aa.w_gamma += &ba.w_gamma;
            aa.b_gamma += &ba.b_gamma;
            aa.w_beta += &ba.w_beta;
            aa.b_beta += &ba.b_beta;
        }
        _ => unreachable!("conditioning variants must match"),
    }
}

/// Pooled frame count for a T-frame utterance.
pub fn pooled_frames(t: usize) -> Option<usize> {
    (t >= RECEPTIVE_FIELD).then(|| t - (RECEPTIVE_FIELD - 1))
}

/// Numerical verification helpers shared by unit and integration tests.
pub mod check {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Small model configuration used by the gradient checks.
    pub fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            frame_dim: 4,
            l5_dim: 6,
            embed_dim: 4,
            attention_dim: 3,
            n_speakers: 3,
            variant,
        }
    }

    /// Random features and conditioning values on the 10 ms grid.
    pub fn rand_utterance(seed: u64, t: usize, d: usize) -> (Array2<f64>, ConditioningVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0));
        let c = ConditioningVector {
            values: (0..t).map(|_| rng.gen_range(0..5) as f64).collect(),
        };
        (feats, c)
    }

    /// Worst relative error between analytic and central finite-difference
    /// gradients over every tensor of a tiny model.
    pub fn finite_difference_check(variant: Variant, t: usize) -> f64 {
        let cfg = tiny_config(variant);
        let model = init_model(cfg, 23).unwrap();
        let (feats, c) = rand_utterance(24, t, cfg.input_dim);
        let label = 1;
        let cache = forward(&feats, &c, &model).unwrap();
        let grads = backward(&feats, &cache, label, &model).unwrap();
        let loss = |m: &Model| {
            let cache = forward(&feats, &c, m).unwrap();
            let p = softmax(&cache.logits);
            -p[label].ln()
        };
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let n_tensors = model.tensor_views().len();
        for ti in 0..n_tensors {
            let n = model.tensor_views()[ti].len();
            for ei in 0..n {
                let mut up = model.clone();
                *up.tensor_views_mut()[ti].iter_mut().nth(ei).unwrap() += h;
                let mut dn = model.clone();
                *dn.tensor_views_mut()[ti].iter_mut().nth(ei).unwrap() -= h;
                let numeric = (loss(&up) - loss(&dn)) / (2.0 * h);
                let analytic = *grads.tensor_views()[ti].iter().nth(ei).unwrap();
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
        worst
    }
}
