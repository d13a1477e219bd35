//! The cluster-attention adapter: learnable cluster centers score each
//! feature block by cosine similarity, the scores mix a bank of per-cluster
//! transformation matrices, and a LayerNorm + MLP refines the transformed
//! tokens.
//!
//! One attention distribution is computed per feature block (one pooled
//! query per sample), not per token. There is no residual connection around
//! the MLP; the refined block is the MLP output itself.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{numeric_err, shape_err, Result};
use crate::interface::FeatureBlock;
use crate::numerics::{
    gelu, gelu_prime, l2_normalize, l2_normalize_vjp, layer_norm_vjp, layer_norm_with_cache,
    softmax, softmax_vjp, AffineNorm, LayerNormCache, Matrix,
};

/// Default number of cluster centers.
pub const DEFAULT_CLUSTERS: usize = 20;
/// Default hidden-width multiplier of the refinement MLP.
pub const DEFAULT_RATIO: usize = 4;
/// Epsilon guarding the cosine normalization.
pub const DEFAULT_L2_EPS: f64 = 1e-12;
/// Epsilon of the two layer norms.
pub const DEFAULT_NORM_EPS: f64 = 1e-5;
/// Scale of the perturbation around identity in the transform bank init.
pub const DEFAULT_TRANSFORM_NOISE: f64 = 0.01;

/// All learnable adapter state.
///
/// The canonical flat parameter order (used by [`AdapterParams::flatten`],
/// the optimizer, and the checkpoint format) is: centers (D x K row-major),
/// transforms in index order (each D x D row-major), norm_in gain, norm_in
/// bias, norm_mid gain, norm_mid bias, W1 (D x rD row-major), b1, W2
/// (rD x D row-major), b2.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// Cluster centers, one D-vector per column: D x K.
    pub centers: Matrix,
    /// K transformation matrices, each D x D.
    pub transforms: Vec<Matrix>,
    /// Normalization applied to the incoming tokens.
    pub norm_in: AffineNorm,
    /// Normalization applied after the weighted transformation.
    pub norm_mid: AffineNorm,
    /// First MLP layer: D x (ratio * D).
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// Second MLP layer: (ratio * D) x D.
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ratio: usize,
    pub l2_eps: f64,
}

impl AdapterParams {
    /// Seeded initialization with the default transform noise scale.
    pub fn init(d: usize, k: usize, ratio: usize, seed: u64) -> Self {
        Self::init_with_noise(d, k, ratio, seed, DEFAULT_TRANSFORM_NOISE)
    }

    /// Seeded initialization.
    ///
    /// Centers are N(0, 1/sqrt(D)); each transform is I plus N(0,
    /// noise_scale/sqrt(D)) entries; norms start as identity; MLP weights are
    /// N(0, 1/sqrt(fan_in)) with zero biases. Deterministic given the seed.
    pub fn init_with_noise(d: usize, k: usize, ratio: usize, seed: u64, noise_scale: f64) -> Self {
        assert!(d >= 1 && k >= 1 && ratio >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |std: f64| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        };
        let center_std = 1.0 / (d as f64).sqrt();
        let centers = Matrix::from_fn(d, k, |_, _| normal(center_std));
        let noise_std = noise_scale / (d as f64).sqrt();
        let transforms = (0..k)
            .map(|_| {
                Matrix::from_fn(d, d, |r, c| {
                    let base = if r == c { 1.0 } else { 0.0 };
                    base + normal(noise_std)
                })
            })
            .collect();
        let hidden = ratio * d;
        let w1_std = 1.0 / (d as f64).sqrt();
        let w1 = Matrix::from_fn(d, hidden, |_, _| normal(w1_std));
        let w2_std = 1.0 / (hidden as f64).sqrt();
        let w2 = Matrix::from_fn(hidden, d, |_, _| normal(w2_std));
        AdapterParams {
            centers,
            transforms,
            norm_in: AffineNorm::identity(d, DEFAULT_NORM_EPS),
            norm_mid: AffineNorm::identity(d, DEFAULT_NORM_EPS),
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; d],
            ratio,
            l2_eps: DEFAULT_L2_EPS,
        }
    }

    /// Feature width D.
    pub fn d(&self) -> usize {
        self.centers.rows()
    }

    /// Number of cluster centers K.
    pub fn k(&self) -> usize {
        self.centers.cols()
    }

    /// Total number of stored parameter entries.
    pub fn num_entries(&self) -> usize {
        let d = self.d();
        self.centers.data().len()
            + self.transforms.iter().map(|m| m.data().len()).sum::<usize>()
            + 4 * d
            + self.w1.data().len()
            + self.b1.len()
            + self.w2.data().len()
            + self.b2.len()
    }

    /// All parameters in the canonical flat order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_entries());
        for g in ParamGroup::ALL {
            out.extend_from_slice(&self.group_values(g));
        }
        out
    }

    /// Overwrites all parameters from the canonical flat order.
    pub fn set_flatten(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_entries() {
            return shape_err(format!(
                "flat parameter vector has {} entries, adapter stores {}",
                values.len(),
                self.num_entries()
            ));
        }
        let mut offset = 0;
        for g in ParamGroup::ALL {
            let len = self.group_len(g);
            self.set_group_values(g, &values[offset..offset + len])?;
            offset += len;
        }
        Ok(())
    }

    pub fn group_len(&self, group: ParamGroup) -> usize {
        let d = self.d();
        match group {
            ParamGroup::Centers => self.centers.data().len(),
            ParamGroup::Transforms => self.transforms.iter().map(|m| m.data().len()).sum(),
            ParamGroup::NormIn | ParamGroup::NormMid => 2 * d,
            ParamGroup::Mlp => {
                self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
            }
        }
    }

    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        match group {
            ParamGroup::Centers => self.centers.data().to_vec(),
            ParamGroup::Transforms => self
                .transforms
                .iter()
                .flat_map(|m| m.data().iter().copied())
                .collect(),
            ParamGroup::NormIn => {
                let mut v = self.norm_in.gain.clone();
                v.extend_from_slice(&self.norm_in.bias);
                v
            }
            ParamGroup::NormMid => {
                let mut v = self.norm_mid.gain.clone();
                v.extend_from_slice(&self.norm_mid.bias);
                v
            }
            ParamGroup::Mlp => {
                let mut v = self.w1.data().to_vec();
                v.extend_from_slice(&self.b1);
                v.extend_from_slice(self.w2.data());
                v.extend_from_slice(&self.b2);
                v
            }
        }
    }

    pub fn set_group_values(&mut self, group: ParamGroup, values: &[f64]) -> Result<()> {
        if values.len() != self.group_len(group) {
            return shape_err(format!(
                "group {:?} expects {} values, got {}",
                group,
                self.group_len(group),
                values.len()
            ));
        }
        let d = self.d();
        match group {
            ParamGroup::Centers => self.centers.data_mut().copy_from_slice(values),
            ParamGroup::Transforms => {
                let per = d * d;
                for (i, m) in self.transforms.iter_mut().enumerate() {
                    m.data_mut().copy_from_slice(&values[i * per..(i + 1) * per]);
                }
            }
            ParamGroup::NormIn => {
                self.norm_in.gain.copy_from_slice(&values[..d]);
                self.norm_in.bias.copy_from_slice(&values[d..]);
            }
            ParamGroup::NormMid => {
                self.norm_mid.gain.copy_from_slice(&values[..d]);
                self.norm_mid.bias.copy_from_slice(&values[d..]);
            }
            ParamGroup::Mlp => {
                let mut off = 0;
                let w1_len = self.w1.data().len();
                self.w1.data_mut().copy_from_slice(&values[off..off + w1_len]);
                off += w1_len;
                let b1_len = self.b1.len();
                self.b1.copy_from_slice(&values[off..off + b1_len]);
                off += b1_len;
                let w2_len = self.w2.data().len();
                self.w2.data_mut().copy_from_slice(&values[off..off + w2_len]);
                off += w2_len;
                self.b2.copy_from_slice(&values[off..]);
            }
        }
        Ok(())
    }
}

/// The learnable parameter groups of the adapter, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Centers,
    Transforms,
    NormIn,
    NormMid,
    Mlp,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Centers,
        ParamGroup::Transforms,
        ParamGroup::NormIn,
        ParamGroup::NormMid,
        ParamGroup::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Centers => "centers",
            ParamGroup::Transforms => "transforms",
            ParamGroup::NormIn => "norm_in",
            ParamGroup::NormMid => "norm_mid",
            ParamGroup::Mlp => "mlp",
        }
    }
}

/// Attention distribution over the K cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    beta: Vec<f64>,
}

impl AttentionScores {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return shape_err("attention scores need K >= 1");
        }
        if beta.iter().any(|&b| !b.is_finite() || b <= 0.0) {
            return numeric_err("attention scores must be positive");
        }
        let sum: f64 = beta.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return numeric_err(format!("attention scores sum to {sum}, not 1"));
        }
        Ok(AttentionScores { beta })
    }

    pub fn values(&self) -> &[f64] {
        &self.beta
    }

    pub fn k(&self) -> usize {
        self.beta.len()
    }
}

/// Gradients of a scalar loss with respect to every adapter parameter,
/// stored with the same shapes as [`AdapterParams`].
#[derive(Debug, Clone)]
pub struct AdapterGrads {
    pub centers: Matrix,
    pub transforms: Vec<Matrix>,
    pub norm_in_gain: Vec<f64>,
    pub norm_in_bias: Vec<f64>,
    pub norm_mid_gain: Vec<f64>,
    pub norm_mid_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl AdapterGrads {
    pub fn zeros_like(p: &AdapterParams) -> Self {
        let d = p.d();
        AdapterGrads {
            centers: Matrix::zeros(d, p.k()),
            transforms: (0..p.k()).map(|_| Matrix::zeros(d, d)).collect(),
            norm_in_gain: vec![0.0; d],
            norm_in_bias: vec![0.0; d],
            norm_mid_gain: vec![0.0; d],
            norm_mid_bias: vec![0.0; d],
            w1: Matrix::zeros(d, p.ratio * d),
            b1: vec![0.0; p.ratio * d],
            w2: Matrix::zeros(p.ratio * d, d),
            b2: vec![0.0; d],
        }
    }

    pub fn add_assign(&mut self, other: &AdapterGrads) {
        self.centers.add_scaled(&other.centers, 1.0).unwrap();
        for (a, b) in self.transforms.iter_mut().zip(&other.transforms) {
            a.add_scaled(b, 1.0).unwrap();
        }
        for (a, b) in [
            (&mut self.norm_in_gain, &other.norm_in_gain),
            (&mut self.norm_in_bias, &other.norm_in_bias),
            (&mut self.norm_mid_gain, &other.norm_mid_gain),
            (&mut self.norm_mid_bias, &other.norm_mid_bias),
            (&mut self.b1, &other.b1),
            (&mut self.b2, &other.b2),
        ] {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        self.w1.add_scaled(&other.w1, 1.0).unwrap();
        self.w2.add_scaled(&other.w2, 1.0).unwrap();
    }

    pub fn scale(&mut self, alpha: f64) {
        self.centers.scale(alpha);
        for m in &mut self.transforms {
            m.scale(alpha);
        }
        for v in [
            &mut self.norm_in_gain,
            &mut self.norm_in_bias,
            &mut self.norm_mid_gain,
            &mut self.norm_mid_bias,
            &mut self.b1,
            &mut self.b2,
        ] {
            for x in v.iter_mut() {
                *x *= alpha;
            }
        }
        self.w1.scale(alpha);
        self.w2.scale(alpha);
    }

    /// Same canonical flat order as [`AdapterParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in ParamGroup::ALL {
            out.extend_from_slice(&self.group_values(g));
        }
        out
    }

    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        match group {
            ParamGroup::Centers => self.centers.data().to_vec(),
            ParamGroup::Transforms => self
                .transforms
                .iter()
                .flat_map(|m| m.data().iter().copied())
                .collect(),
            ParamGroup::NormIn => {
                let mut v = self.norm_in_gain.clone();
                v.extend_from_slice(&self.norm_in_bias);
                v
            }
            ParamGroup::NormMid => {
                let mut v = self.norm_mid_gain.clone();
                v.extend_from_slice(&self.norm_mid_bias);
                v
            }
            ParamGroup::Mlp => {
                let mut v = self.w1.data().to_vec();
                v.extend_from_slice(&self.b1);
                v.extend_from_slice(self.w2.data());
                v.extend_from_slice(&self.b2);
                v
            }
        }
    }
}

/// Number of parameter entries of an adapter with the given dimensions:
/// K*D centers + K*D^2 transforms + 4D for the two affine norms + the MLP
/// (D*rD + rD + rD*D + D).
pub fn adapter_param_count(d: usize, k: usize, ratio: usize) -> usize {
    let hidden = ratio * d;
    k * d + k * d * d + 4 * d + d * hidden + hidden + hidden * d + d
}

/// Cosine similarities between a pooled query and every cluster center
/// column. Both sides are L2-normalized, so the scores are scale-free.
pub fn cosine_scores(query: &[f64], centers: &Matrix, l2_eps: f64) -> Result<Vec<f64>> {
    if query.len() != centers.rows() {
        return shape_err(format!(
            "query length {} vs center dimension {}",
            query.len(),
            centers.rows()
        ));
    }
    let qn = l2_normalize(query, l2_eps);
    let mut scores = Vec::with_capacity(centers.cols());
    for k in 0..centers.cols() {
        let an = l2_normalize(&centers.col(k), l2_eps);
        scores.push(qn.iter().zip(an.iter()).map(|(a, b)| a * b).sum());
    }
    Ok(scores)
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct AdapterCache {
    pub h_ln: Matrix,
    ln_in: Vec<LayerNormCache>,
    pooled: Vec<f64>,
    pooled_unit: Vec<f64>,
    centers_unit: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub m_star: Matrix,
    ln_mid: Vec<LayerNormCache>,
    pub h_star: Matrix,
    mlp_pre: Matrix,
    mlp_act: Matrix,
}

fn layer_norm_rows(m: &Matrix, p: &AffineNorm) -> Result<(Matrix, Vec<LayerNormCache>)> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    let mut caches = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let (y, cache) = layer_norm_with_cache(m.row(i), p)?;
        out.row_mut(i).copy_from_slice(&y);
        caches.push(cache);
    }
    Ok((out, caches))
}

struct ScoresStage {
    h_ln: Matrix,
    ln_in: Vec<LayerNormCache>,
    pooled: Vec<f64>,
    pooled_unit: Vec<f64>,
    centers_unit: Vec<Vec<f64>>,
    beta: Vec<f64>,
}

fn scores_stage(h: &FeatureBlock, p: &AdapterParams) -> Result<ScoresStage> {
    if h.d() != p.d() {
        return shape_err(format!(
            "feature width {} vs adapter width {}",
            h.d(),
            p.d()
        ));
    }
    let (h_ln, ln_in) = layer_norm_rows(h.matrix(), &p.norm_in)?;
    let pooled = h_ln.col_mean();
    let pooled_unit = l2_normalize(&pooled, p.l2_eps);
    let mut centers_unit = Vec::with_capacity(p.k());
    let mut scores = Vec::with_capacity(p.k());
    for k in 0..p.k() {
        let an = l2_normalize(&p.centers.col(k), p.l2_eps);
        scores.push(pooled_unit.iter().zip(an.iter()).map(|(a, b)| a * b).sum());
        centers_unit.push(an);
    }
    let beta = softmax(&scores)?;
    Ok(ScoresStage {
        h_ln,
        ln_in,
        pooled,
        pooled_unit,
        centers_unit,
        beta,
    })
}

/// Normalizes the block and scores it against the cluster centers.
///
/// Returns the normalized block (reused by the rest of the forward pass) and
/// the softmax of the K cosine similarities of its pooled mean.
pub fn attention_scores(
    h: &FeatureBlock,
    p: &AdapterParams,
) -> Result<(FeatureBlock, AttentionScores)> {
    let stage = scores_stage(h, p)?;
    Ok((
        FeatureBlock::new(stage.h_ln)?,
        AttentionScores::new(stage.beta)?,
    ))
}

/// Mixes the transform bank with the attention scores: sum_i beta_i M_i.
pub fn weighted_transform(beta: &AttentionScores, p: &AdapterParams) -> Result<Matrix> {
    if beta.k() != p.k() {
        return shape_err(format!(
            "{} attention scores vs {} transforms",
            beta.k(),
            p.k()
        ));
    }
    let d = p.d();
    let mut m_star = Matrix::zeros(d, d);
    for (b, m) in beta.values().iter().zip(&p.transforms) {
        m_star.add_scaled(m, *b)?;
    }
    Ok(m_star)
}

/// Full adapter forward pass; see [`adapter_forward_with_cache`].
pub fn adapter_forward(h: &FeatureBlock, p: &AdapterParams) -> Result<FeatureBlock> {
    adapter_forward_with_cache(h, p).map(|(out, _)| out)
}

/// Full adapter forward pass, keeping the intermediates needed by
/// [`adapter_backward`].
pub fn adapter_forward_with_cache(
    h: &FeatureBlock,
    p: &AdapterParams,
) -> Result<(FeatureBlock, AdapterCache)> {
    let ScoresStage {
        h_ln,
        ln_in,
        pooled,
        pooled_unit,
        centers_unit,
        beta,
    } = scores_stage(h, p)?;

    let d = p.d();
    let mut m_star = Matrix::zeros(d, d);
    for (b, m) in beta.iter().zip(&p.transforms) {
        m_star.add_scaled(m, *b)?;
    }

    let transformed = h_ln.matmul(&m_star)?;
    let (h_star, ln_mid) = layer_norm_rows(&transformed, &p.norm_mid)?;

    let mut mlp_pre = h_star.matmul(&p.w1)?;
    for i in 0..mlp_pre.rows() {
        for (v, b) in mlp_pre.row_mut(i).iter_mut().zip(&p.b1) {
            *v += b;
        }
    }
    let mut mlp_act = mlp_pre.clone();
    for v in mlp_act.data_mut() {
        *v = gelu(*v);
    }
    let mut out = mlp_act.matmul(&p.w2)?;
    for i in 0..out.rows() {
        for (v, b) in out.row_mut(i).iter_mut().zip(&p.b2) {
            *v += b;
        }
    }
    if !out.is_finite() {
        return numeric_err("adapter forward produced a non-finite value");
    }
    let cache = AdapterCache {
        h_ln,
        ln_in,
        pooled,
        pooled_unit,
        centers_unit,
        beta,
        m_star,
        ln_mid,
        h_star,
        mlp_pre,
        mlp_act,
    };
    Ok((FeatureBlock::new(out)?, cache))
}

/// Backward pass of the adapter. Takes the gradient of a scalar loss with
/// respect to the adapter output and returns the gradients for every
/// parameter group plus the gradient with respect to the input block.
pub fn adapter_backward(
    d_out: &Matrix,
    cache: &AdapterCache,
    p: &AdapterParams,
) -> Result<(AdapterGrads, Matrix)> {
    let n = cache.h_ln.rows();
    let d = p.d();
    if d_out.rows() != n || d_out.cols() != d {
        return shape_err(format!(
            "gradient is {}x{}, adapter output was {}x{}",
            d_out.rows(),
            d_out.cols(),
            n,
            d
        ));
    }
    let mut grads = AdapterGrads::zeros_like(p);

    // MLP: out = gelu(h_star W1 + b1) W2 + b2
    for i in 0..n {
        for (g, v) in grads.b2.iter_mut().zip(d_out.row(i)) {
            *g += v;
        }
    }
    grads.w2 = cache.mlp_act.matmul_tn(d_out)?;
    let d_act = d_out.matmul_nt(&p.w2)?;
    let mut d_pre = d_act;
    for (v, u) in d_pre.data_mut().iter_mut().zip(cache.mlp_pre.data()) {
        *v *= gelu_prime(*u);
    }
    for i in 0..n {
        for (g, v) in grads.b1.iter_mut().zip(d_pre.row(i)) {
            *g += v;
        }
    }
    grads.w1 = cache.h_star.matmul_tn(&d_pre)?;
    let d_h_star = d_pre.matmul_nt(&p.w1)?;

    // Mid layer norm, row-wise.
    let mut d_transformed = Matrix::zeros(n, d);
    for i in 0..n {
        let (dx, dgain, dbias) = layer_norm_vjp(d_h_star.row(i), &cache.ln_mid[i], &p.norm_mid);
        d_transformed.row_mut(i).copy_from_slice(&dx);
        for (g, v) in grads.norm_mid_gain.iter_mut().zip(&dgain) {
            *g += v;
        }
        for (g, v) in grads.norm_mid_bias.iter_mut().zip(&dbias) {
            *g += v;
        }
    }

    // transformed = h_ln * m_star; h_ln also feeds the pooled query below.
    let d_m_star = cache.h_ln.matmul_tn(&d_transformed)?;
    let mut d_h_ln = d_transformed.matmul_nt(&cache.m_star)?;

    // m_star = sum_k beta_k M_k
    let mut d_beta = Vec::with_capacity(p.k());
    for (k, m) in p.transforms.iter().enumerate() {
        d_beta.push(m.frob_dot(&d_m_star)?);
        grads.transforms[k].add_scaled(&d_m_star, cache.beta[k])?;
    }

    // beta = softmax(scores), scores_k = <pooled_unit, center_unit_k>
    let d_scores = softmax_vjp(&cache.beta, &d_beta);
    let mut d_pooled_unit = vec![0.0; d];
    for (k, an) in cache.centers_unit.iter().enumerate() {
        let ds = d_scores[k];
        for (acc, a) in d_pooled_unit.iter_mut().zip(an.iter()) {
            *acc += ds * a;
        }
        let d_an: Vec<f64> = cache.pooled_unit.iter().map(|q| ds * q).collect();
        let center = p.centers.col(k);
        let d_center = l2_normalize_vjp(&center, an, &d_an, p.l2_eps);
        for (r, v) in d_center.iter().enumerate() {
            let cur = grads.centers.get(r, k);
            grads.centers.set(r, k, cur + v);
        }
    }
    let d_pooled = l2_normalize_vjp(&cache.pooled, &cache.pooled_unit, &d_pooled_unit, p.l2_eps);

    // pooled = column mean of h_ln
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for (v, dq) in d_h_ln.row_mut(i).iter_mut().zip(&d_pooled) {
            *v += dq * inv_n;
        }
    }

    // Input layer norm, row-wise.
    let mut d_input = Matrix::zeros(n, d);
    for i in 0..n {
        let (dx, dgain, dbias) = layer_norm_vjp(d_h_ln.row(i), &cache.ln_in[i], &p.norm_in);
        d_input.row_mut(i).copy_from_slice(&dx);
        for (g, v) in grads.norm_in_gain.iter_mut().zip(&dgain) {
            *g += v;
        }
        for (g, v) in grads.norm_in_bias.iter_mut().zip(&dbias) {
            *g += v;
        }
    }

    Ok((grads, d_input))
}
