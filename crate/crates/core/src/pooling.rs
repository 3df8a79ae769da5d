//! Self-attentive statistics pooling with conditioning-vector frame
//! transforms, plus the VFR-weights pooling baseline. Forward and
//! analytic backward passes.
//!
//! The transformed frames feed only the attention scorer; the pooled
//! statistics are always computed over the original frames.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Clamp under the square root of the weighted variance.
pub const EPS_VAR: f64 = 1e-8;

/// Pooling mode, named as on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    None,
    Concat,
    Gate,
    Affine,
    CombinedA,
    CombinedB,
    VfrWeights,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::None,
        Variant::Concat,
        Variant::Gate,
        Variant::Affine,
        Variant::CombinedA,
        Variant::CombinedB,
        Variant::VfrWeights,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Variant::None,
            "concat" => Variant::Concat,
            "gate" => Variant::Gate,
            "affine" => Variant::Affine,
            "combined_a" => Variant::CombinedA,
            "combined_b" => Variant::CombinedB,
            "vfr_weights" => Variant::VfrWeights,
            other => return Err(Error::UnknownVariant(other.into())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Concat => "concat",
            Variant::Gate => "gate",
            Variant::Affine => "affine",
            Variant::CombinedA => "combined_a",
            Variant::CombinedB => "combined_b",
            Variant::VfrWeights => "vfr_weights",
        }
    }
}

/// Attention scorer weights: alpha = softmax(w2' sigmoid(W1 f + b1) + b2).
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    /// scalar bias kept as a length-1 array so it enumerates like the rest
    pub b2: Array1<f64>,
}

impl AttentionParams {
    pub fn zeros(d_in: usize, d_a: usize) -> Self {
        Self {
            w1: Array2::zeros((d_a, d_in)),
            b1: Array1::zeros(d_a),
            w2: Array1::zeros(d_a),
            b2: Array1::zeros(1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w1.ncols(), self.w1.nrows())
    }
}

#[derive(Debug, Clone)]
pub struct ConcatParams {
    /// d x (d + 1)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl ConcatParams {
    pub fn zeros(d: usize) -> Self {
        Self { w: Array2::zeros((d, d + 1)), b: Array1::zeros(d) }
    }
}

#[derive(Debug, Clone)]
pub struct GateParams {
    pub w: Array1<f64>,
    pub b: Array1<f64>,
}

impl GateParams {
    pub fn zeros(d: usize) -> Self {
        Self { w: Array1::zeros(d), b: Array1::zeros(d) }
    }
}

#[derive(Debug, Clone)]
pub struct AffineParams {
    pub w_gamma: Array1<f64>,
    pub b_gamma: Array1<f64>,
    pub w_beta: Array1<f64>,
    pub b_beta: Array1<f64>,
}

impl AffineParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            w_gamma: Array1::zeros(d),
            b_gamma: Array1::zeros(d),
            w_beta: Array1::zeros(d),
            b_beta: Array1::zeros(d),
        }
    }
}

/// Conditioning transform applied to frames on the score path.
#[derive(Debug, Clone)]
pub enum ConditioningParams {
    None,
    Concat(ConcatParams),
    Gate(GateParams),
    Affine(AffineParams),
    CombinedA(ConcatParams, GateParams),
    CombinedB(ConcatParams, AffineParams),
}

impl ConditioningParams {
    pub fn zeros(variant: Variant, d: usize) -> Result<Self> {
        Ok(match variant {
            Variant::None | Variant::VfrWeights => ConditioningParams::None,
            Variant::Concat => ConditioningParams::Concat(ConcatParams::zeros(d)),
            Variant::Gate => ConditioningParams::Gate(GateParams::zeros(d)),
            Variant::Affine => ConditioningParams::Affine(AffineParams::zeros(d)),
            Variant::CombinedA => {
                ConditioningParams::CombinedA(ConcatParams::zeros(d), GateParams::zeros(d))
            }
            Variant::CombinedB => {
                ConditioningParams::CombinedB(ConcatParams::zeros(d), AffineParams::zeros(d))
            }
        })
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            ConditioningParams::None => ConditioningParams::None,
            ConditioningParams::Concat(c) => {
                ConditioningParams::Concat(ConcatParams::zeros(c.b.len()))
            }
            ConditioningParams::Gate(g) => {
                ConditioningParams::Gate(GateParams::zeros(g.b.len()))
            }
            ConditioningParams::Affine(a) => {
                ConditioningParams::Affine(AffineParams::zeros(a.b_gamma.len()))
            }
            ConditioningParams::CombinedA(c, g) => ConditioningParams::CombinedA(
                ConcatParams::zeros(c.b.len()),
                GateParams::zeros(g.b.len()),
            ),
            ConditioningParams::CombinedB(c, a) => ConditioningParams::CombinedB(
                ConcatParams::zeros(c.b.len()),
                AffineParams::zeros(a.b_gamma.len()),
            ),
        }
    }
}

/// Weighted mean and standard deviation with the attention weights that
/// produced them.
#[derive(Debug, Clone)]
pub struct PooledStats {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
    pub alphas: Array1<f64>,
    /// unclamped weighted variance, needed for the backward pass
    pub var_raw: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediates of the frame transform kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TransformCache {
    pub f: Array2<f64>,
    /// tanh output of the concat branch (concat / combined_a / combined_b)
    pub concat_tanh: Option<Array2<f64>>,
    /// sigmoid mask (gate / combined_a), T x d
    pub mask: Option<Array2<f64>>,
    /// gamma(c_t) rows (affine / combined_b), T x d
    pub gamma: Option<Array2<f64>>,
}

fn concat_forward(u: &Array2<f64>, c: &[f64], p: &ConcatParams) -> Result<Array2<f64>> {
    let (t, d) = u.dim();
    if p.w.dim() != (d, d + 1) || p.b.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "concat params {:?} for d = {d}",
            p.w.dim()
        )));
    }
    let mut aug = Array2::zeros((t, d + 1));
    aug.slice_mut(ndarray::s![.., 0..d]).assign(u);
    for (i, &ci) in c.iter().enumerate() {
        aug[[i, d]] = ci;
    }
    let mut pre = aug.dot(&p.w.t());
    pre += &p.b;
    Ok(pre.mapv(f64::tanh))
}

fn gate_mask(t: usize, c: &[f64], p: &GateParams) -> Array2<f64> {
    let d = p.w.len();
    let mut mask = Array2::zeros((t, d));
    for i in 0..t {
        for j in 0..d {
            mask[[i, j]] = sigmoid(p.w[j] * c[i] + p.b[j]);
        }
    }
    mask
}

fn affine_rows(t: usize, c: &[f64], w: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let d = w.len();
    let mut out = Array2::zeros((t, d));
    for i in 0..t {
        for j in 0..d {
            out[[i, j]] = w[j] * c[i] + b[j];
        }
    }
    out
}

/// Applies the active conditioning transform to the frames, producing the
/// input to the attention scorer.
pub fn transform_frames(
    u: &Array2<f64>,
    c: &[f64],
    params: &ConditioningParams,
) -> Result<TransformCache> {
    let (t, _d) = u.dim();
    if !matches!(params, ConditioningParams::None) && c.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "conditioning length {} for {} frames",
            c.len(),
            t
        )));
    }
    Ok(match params {
        ConditioningParams::None => TransformCache {
            f: u.clone(),
            concat_tanh: None,
            mask: None,
            gamma: None,
        },
        ConditioningParams::Concat(p) => {
            let g = concat_forward(u, c, p)?;
            TransformCache { f: g.clone(), concat_tanh: Some(g), mask: None, gamma: None }
        }
        ConditioningParams::Gate(p) => {
            let mask = gate_mask(t, c, p);
            TransformCache { f: &mask * u, concat_tanh: None, mask: Some(mask), gamma: None }
        }
        ConditioningParams::Affine(p) => {
            let gamma = affine_rows(t, c, &p.w_gamma, &p.b_gamma);
            let beta = affine_rows(t, c, &p.w_beta, &p.b_beta);
            TransformCache {
                f: &gamma * u + beta,
                concat_tanh: None,
                mask: None,
                gamma: Some(gamma),
            }
        }
        ConditioningParams::CombinedA(pc, pg) => {
            let g = concat_forward(u, c, pc)?;
            let mask = gate_mask(t, c, pg);
            TransformCache {
                f: &mask * &g,
                concat_tanh: Some(g),
                mask: Some(mask),
                gamma: None,
            }
        }
        ConditioningParams::CombinedB(pc, pa) => {
            let g = concat_forward(u, c, pc)?;
            let gamma = affine_rows(t, c, &pa.w_gamma, &pa.b_gamma);
            let beta = affine_rows(t, c, &pa.w_beta, &pa.b_beta);
            TransformCache {
                f: &gamma * &g + beta,
                concat_tanh: Some(g),
                mask: None,
                gamma: Some(gamma),
            }
        }
    })
}

/// Softmax attention weights over frames, max-stabilized. Also returns
/// the sigmoid hidden activations for the backward pass.
pub fn attention_scores(
    f: &Array2<f64>,
    params: &AttentionParams,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let (t, d) = f.dim();
    if params.w1.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "attention W1 expects {} columns, frames have {d}",
            params.w1.ncols()
        )));
    }
    let mut h = f.dot(&params.w1.t());
    h += &params.b1;
    h.mapv_inplace(sigmoid);
    let logits = h.dot(&params.w2) + params.b2[0];
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut alphas = logits.mapv(|e| (e - max).exp());
    let sum = alphas.sum();
    alphas /= sum;
    debug_assert_eq!(alphas.len(), t);
    Ok((alphas, h))
}

/// Weighted mean and standard deviation over the original frames.
pub fn weighted_stats(u: &Array2<f64>, alphas: &Array1<f64>) -> Result<PooledStats> {
    let (t, d) = u.dim();
    if alphas.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {t} frames",
            alphas.len()
        )));
    }
    let sum = alphas.sum();
    if (sum - 1.0).abs() > 1e-6 || alphas.iter().any(|&a| a < 0.0) {
        return Err(Error::WeightNotNormalized(sum));
    }
    let mut mu = Array1::zeros(d);
    let mut sq = Array1::zeros(d);
    for i in 0..t {
        let row = u.row(i);
        let a = alphas[i];
        mu.scaled_add(a, &row);
        for j in 0..d {
            sq[j] += a * row[j] * row[j];
        }
    }
    let var_raw: Array1<f64> = &sq - &(&mu * &mu);
    let sigma = var_raw.mapv(|v| v.max(EPS_VAR).sqrt());
    Ok(PooledStats { mu, sigma, alphas: alphas.clone(), var_raw })
}

/// Everything the backward pass needs from the attentive forward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub transform: TransformCache,
    pub h: Array2<f64>,
    pub stats: PooledStats,
}

/// Attentive pooling: transform -> scores -> weighted stats over the
/// original frames.
pub fn attentive_pool(
    u: &Array2<f64>,
    c: &[f64],
    attn: &AttentionParams,
    cond: &ConditioningParams,
) -> Result<PoolCache> {
    let transform = transform_frames(u, c, cond)?;
    let (alphas, h) = attention_scores(&transform.f, attn)?;
    let stats = weighted_stats(u, &alphas)?;
    Ok(PoolCache { transform, h, stats })
}

/// VFR-weights baseline: alpha_t = c_t / sum(c), no attention network.
pub fn vfr_weight_pooling(u: &Array2<f64>, c: &[f64]) -> Result<PooledStats> {
    let t = u.nrows();
    if c.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "conditioning length {} for {t} frames",
            c.len()
        )));
    }
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroConditioning);
    }
    let alphas = Array1::from_iter(c.iter().map(|&v| v / total));
    weighted_stats(u, &alphas)
}

/// Gradients out of the pooling block.
#[derive(Debug)]
pub struct PoolGrads {
    pub d_u: Array2<f64>,
    pub attn: AttentionParams,
    pub cond: ConditioningParams,
}

/// Gradients of the weighted statistics w.r.t. frames and weights, for a
/// given upstream (d_mu, d_sigma).
pub fn stats_backward(
    u: &Array2<f64>,
    stats: &PooledStats,
    d_mu: &Array1<f64>,
    d_sigma: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let (t, d) = u.dim();
    // gradient through sigma = sqrt(max(var, eps)); zero where clamped
    let mut g_var = Array1::zeros(d);
    for j in 0..d {
        if stats.var_raw[j] > EPS_VAR {
            g_var[j] = d_sigma[j] / (2.0 * stats.sigma[j]);
        }
    }
    // var = sum(alpha u^2) - mu^2
    let g_mu_total = d_mu - &(2.0 * &stats.mu * &g_var);
    let mut d_u = Array2::zeros((t, d));
    let mut d_alpha = Array1::zeros(t);
    for i in 0..t {
        let a = stats.alphas[i];
        let mut da = 0.0;
        for j in 0..d {
            let uij = u[[i, j]];
            da += g_mu_total[j] * uij + g_var[j] * uij * uij;
            d_u[[i, j]] = a * (g_mu_total[j] + 2.0 * g_var[j] * uij);
        }
        d_alpha[i] = da;
    }
    (d_u, d_alpha)
}

fn concat_backward(
    u: &Array2<f64>,
    c: &[f64],
    p: &ConcatParams,
    g_tanh: &Array2<f64>,
    d_g: &Array2<f64>,
    grads: &mut ConcatParams,
    d_u: &mut Array2<f64>,
) {
    let (t, d) = u.dim();
    let d_pre = d_g * &g_tanh.mapv(|v| 1.0 - v * v);
    let mut aug = Array2::zeros((t, d + 1));
    aug.slice_mut(ndarray::s![.., 0..d]).assign(u);
    for (i, &ci) in c.iter().enumerate() {
        aug[[i, d]] = ci;
    }
    grads.w += &d_pre.t().dot(&aug);
    grads.b += &d_pre.sum_axis(Axis(0));
    let d_aug = d_pre.dot(&p.w);
    *d_u += &d_aug.slice(ndarray::s![.., 0..d]);
}

fn gate_backward(
    c: &[f64],
    mask: &Array2<f64>,
    d_mask: &Array2<f64>,
    grads: &mut GateParams,
) {
    let (t, d) = mask.dim();
    for i in 0..t {
        for j in 0..d {
            let m = mask[[i, j]];
            let d_pre = d_mask[[i, j]] * m * (1.0 - m);
            grads.w[j] += d_pre * c[i];
            grads.b[j] += d_pre;
        }
    }
}

/// Backward through the full attentive pooling block. `d_mu` / `d_sigma`
/// are upstream gradients for the pooled statistics.
pub fn pooling_backward(
    u: &Array2<f64>,
    c: &[f64],
    attn: &AttentionParams,
    cond: &ConditioningParams,
    cache: &PoolCache,
    d_mu: &Array1<f64>,
    d_sigma: &Array1<f64>,
) -> Result<PoolGrads> {
    let (t, d) = u.dim();
    let stats = &cache.stats;
    let (mut d_u, d_alpha) = stats_backward(u, stats, d_mu, d_sigma);

    // softmax backward
    let dot: f64 = stats
        .alphas
        .iter()
        .zip(d_alpha.iter())
        .map(|(&a, &g)| a * g)
        .sum();
    let d_logit = Array1::from_iter(
        stats
            .alphas
            .iter()
            .zip(d_alpha.iter())
            .map(|(&a, &g)| a * (g - dot)),
    );

    // attention scorer backward
    let mut attn_g = attn.zeros_like();
    let h = &cache.h;
    attn_g.w2 += &h.t().dot(&d_logit);
    attn_g.b2[0] += d_logit.sum();
    let mut d_h = Array2::zeros(h.dim());
    for i in 0..t {
        let g = d_logit[i];
        for j in 0..h.ncols() {
            d_h[[i, j]] = g * attn.w2[j];
        }
    }
    let d_z = &d_h * &(h * &h.mapv(|v| 1.0 - v)); // sigmoid'
    attn_g.w1 += &d_z.t().dot(&cache.transform.f);
    attn_g.b1 += &d_z.sum_axis(Axis(0));
    let d_f = d_z.dot(&attn.w1);
    debug_assert_eq!(d_f.dim(), (t, d));

    // transform backward
    let mut cond_g = cond.zeros_like();
    match (cond, &mut cond_g) {
        (ConditioningParams::None, ConditioningParams::None) => {
            d_u += &d_f;
        }
        (ConditioningParams::Concat(p), ConditioningParams::Concat(pg)) => {
            let g_tanh = cache.transform.concat_tanh.as_ref().unwrap();
            concat_backward(u, c, p, g_tanh, &d_f, pg, &mut d_u);
        }
        (ConditioningParams::Gate(_), ConditioningParams::Gate(pg)) => {
            let mask = cache.transform.mask.as_ref().unwrap();
            d_u += &(&d_f * mask);
            let d_mask = &d_f * u;
            gate_backward(c, mask, &d_mask, pg);
        }
        (ConditioningParams::Affine(_), ConditioningParams::Affine(pa)) => {
            let gamma = cache.transform.gamma.as_ref().unwrap();
            d_u += &(&d_f * gamma);
            let d_gamma = &d_f * u;
            for i in 0..t {
                for j in 0..d {
                    pa.w_gamma[j] += d_gamma[[i, j]] * c[i];
                    pa.b_gamma[j] += d_gamma[[i, j]];
                    pa.w_beta[j] += d_f[[i, j]] * c[i];
                    pa.b_beta[j] += d_f[[i, j]];
                }
            }
        }
        (
            ConditioningParams::CombinedA(pc, _),
            ConditioningParams::CombinedA(pcg, pgg),
        ) => {
            let g_tanh = cache.transform.concat_tanh.as_ref().unwrap();
            let mask = cache.transform.mask.as_ref().unwrap();
            let d_g = &d_f * mask;
            let d_mask = &d_f * g_tanh;
            gate_backward(c, mask, &d_mask, pgg);
            concat_backward(u, c, pc, g_tanh, &d_g, pcg, &mut d_u);
        }
        (
            ConditioningParams::CombinedB(pc, _),
            ConditioningParams::CombinedB(pcg, pag),
        ) => {
            let g_tanh = cache.transform.concat_tanh.as_ref().unwrap();
            let gamma = cache.transform.gamma.as_ref().unwrap();
            let d_g = &d_f * gamma;
            let d_gamma = &d_f * g_tanh;
            for i in 0..t {
                for j in 0..d {
                    pag.w_gamma[j] += d_gamma[[i, j]] * c[i];
                    pag.b_gamma[j] += d_gamma[[i, j]];
                    pag.w_beta[j] += d_f[[i, j]] * c[i];
                    pag.b_beta[j] += d_f[[i, j]];
                }
            }
            concat_backward(u, c, pc, g_tanh, &d_g, pcg, &mut d_u);
        }
        _ => unreachable!("gradient container mismatches parameter variant"),
    }

    Ok(PoolGrads { d_u, attn: attn_g, cond: cond_g })
}
