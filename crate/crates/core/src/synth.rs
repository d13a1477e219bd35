//! Desk-scale stand-in for large-scale pre-training: a frozen nonlinear
//! projection plays the backbone, and clustered Gaussian classification
//! tasks with a controlled in-distribution / out-of-distribution split play
//! the downstream datasets.
//!
//! The OOD split applies a rotation to every token (equal angle in all
//! planes of a seeded orthogonal basis, so `v . Rv = cos(theta) |v|^2`)
//! plus a fixed translation, which shifts the feature distribution by a
//! dial that can be turned analytically.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adapter::{adapter_forward, AdapterParams};
use crate::error::{argument_err, shape_err, Result};
use crate::finetune::{head_forward, HeadParams};
use crate::interface::{unify, RawTensor, TensorKind};
use crate::numerics::{gelu, gelu_prime, Matrix};

/// Frozen synthetic backbone: one projection followed by a per-entry GELU.
///
/// Trainable only in full fine-tuning (and the second stage of staged
/// fine-tuning); everywhere else its parameters are left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBackbone {
    /// input_dim x D projection.
    pub projection: Matrix,
    /// Layout of the emitted raw tensor.
    pub kind: TensorKind,
}

impl SyntheticBackbone {
    /// Seeded init: projection entries are N(0, 1/sqrt(input_dim)).
    pub fn init(input_dim: usize, d_out: usize, kind: TensorKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (input_dim as f64).sqrt();
        let projection = Matrix::from_fn(input_dim, d_out, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        });
        SyntheticBackbone { projection, kind }
    }

    /// Square identity projection, mostly for tests.
    pub fn identity(dim: usize, kind: TensorKind) -> Self {
        SyntheticBackbone {
            projection: Matrix::identity(dim),
            kind,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn d_out(&self) -> usize {
        self.projection.cols()
    }
}

/// Intermediates of one backbone forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BackboneCache {
    input: Matrix,
    pre_activation: Matrix,
}

fn tokens_to_raw(tokens: &Matrix, kind: TensorKind) -> RawTensor {
    let n = tokens.rows();
    let d = tokens.cols();
    match kind {
        TensorKind::VitTokens => {
            // The class token slot carries the mean of the real tokens.
            let class = tokens.col_mean();
            RawTensor::VitTokens(Matrix::from_fn(n + 1, d, |r, c| {
                if r == 0 {
                    class[c]
                } else {
                    tokens.get(r - 1, c)
                }
            }))
        }
        TensorKind::CnnMap => {
            let mut data = vec![0.0; d * n];
            for t in 0..n {
                for c in 0..d {
                    data[c * n + t] = tokens.get(t, c);
                }
            }
            RawTensor::CnnMap {
                channels: d,
                height: 1,
                width: n,
                data,
            }
        }
        TensorKind::VideoClip => {
            let mut data = vec![0.0; d * n];
            for t in 0..n {
                for c in 0..d {
                    data[c * n + t] = tokens.get(t, c);
                }
            }
            RawTensor::VideoClip {
                frames: 1,
                channels: d,
                height: 1,
                width: n,
                data,
            }
        }
    }
}

/// Maps an N x input_dim token matrix through the backbone and reshapes the
/// result to the declared raw tensor kind.
pub fn backbone_forward(bb: &SyntheticBackbone, sample: &Matrix) -> Result<RawTensor> {
    backbone_forward_with_cache(bb, sample).map(|(raw, _)| raw)
}

pub fn backbone_forward_with_cache(
    bb: &SyntheticBackbone,
    sample: &Matrix,
) -> Result<(RawTensor, BackboneCache)> {
    if sample.cols() != bb.input_dim() {
        return shape_err(format!(
            "sample has {} input dims, backbone expects {}",
            sample.cols(),
            bb.input_dim()
        ));
    }
    let pre_activation = sample.matmul(&bb.projection)?;
    let mut tokens = pre_activation.clone();
    for v in tokens.data_mut() {
        *v = gelu(*v);
    }
    let raw = tokens_to_raw(&tokens, bb.kind);
    Ok((
        raw,
        BackboneCache {
            input: sample.clone(),
            pre_activation,
        },
    ))
}

/// Gradient of the projection given the gradient of the (unified) token
/// features. The class-token slot of the ViT layout receives no gradient
/// because the unified block drops it.
pub fn backbone_backward(d_tokens: &Matrix, cache: &BackboneCache) -> Result<Matrix> {
    if d_tokens.rows() != cache.pre_activation.rows()
        || d_tokens.cols() != cache.pre_activation.cols()
    {
        return shape_err("token gradient does not match the cached forward pass");
    }
    let mut d_pre = d_tokens.clone();
    for (v, u) in d_pre.data_mut().iter_mut().zip(cache.pre_activation.data()) {
        *v *= gelu_prime(*u);
    }
    cache.input.matmul_tn(&d_pre)
}

/// Generator description of one synthetic classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub classes: usize,
    pub tokens_per_sample: usize,
    pub input_dim: usize,
    /// Per-coordinate standard deviation of the token noise around the
    /// class mean.
    pub sigma: f64,
    /// Rotation angle (degrees) applied to every OOD token.
    pub theta_shift_deg: f64,
    /// Norm of the translation added to every OOD token.
    pub shift_translation: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return argument_err("task needs at least 2 classes");
        }
        if self.tokens_per_sample == 0 || self.input_dim == 0 {
            return argument_err("tokens_per_sample and input_dim must be >= 1");
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return argument_err("sigma must be positive");
        }
        if self.train_per_class == 0 || self.val_per_class == 0 {
            return argument_err("per-class sample counts must be >= 1");
        }
        Ok(())
    }
}

/// One labeled sample: N tokens in input space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Matrix,
    pub label: usize,
}

/// The three disjoint splits of a generated task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Vec<Sample>,
    pub val_id: Vec<Sample>,
    pub val_ood: Vec<Sample>,
}

/// Orthonormal basis from a seeded Gaussian matrix (Gram-Schmidt with one
/// re-orthogonalization pass).
fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = Matrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut v = g.col(j);
        for _ in 0..2 {
            for qi in &q {
                let dot: f64 = qi.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(qi.iter()) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        q.push(v);
    }
    Matrix::from_fn(dim, dim, |r, c| q[c][r])
}

/// Rotation by `theta` in every plane of the basis `q`: Q B Q^T with B a
/// block diagonal of 2x2 rotations (plus a fixed axis when dim is odd).
fn rotation_matrix(q: &Matrix, theta_rad: f64) -> Result<Matrix> {
    let dim = q.rows();
    let (sin, cos) = theta_rad.sin_cos();
    let mut block = Matrix::zeros(dim, dim);
    let mut i = 0;
    while i + 1 < dim {
        block.set(i, i, cos);
        block.set(i, i + 1, -sin);
        block.set(i + 1, i, sin);
        block.set(i + 1, i + 1, cos);
        i += 2;
    }
    if dim % 2 == 1 {
        block.set(dim - 1, dim - 1, 1.0);
    }
    q.matmul(&block)?.matmul_nt(q)
}

/// Draws a full task: balanced, disjoint splits, fully determined by the
/// seed. The OOD split is the same generative process followed by the
/// rotation + translation shift.
pub fn gen_task(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.input_dim;

    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let basis = random_orthogonal(dim, &mut rng);
    let translation: Vec<f64> = {
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter()
            .map(|x| x / norm * spec.shift_translation)
            .collect()
    };

    let mut draw_split = |per_class: usize| -> Vec<Sample> {
        let mut out = Vec::with_capacity(per_class * spec.classes);
        for (label, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let tokens = Matrix::from_fn(spec.tokens_per_sample, dim, |_, c| {
                    let z: f64 = rng.sample(StandardNormal);
                    mean[c] + spec.sigma * z
                });
                out.push(Sample { tokens, label });
            }
        }
        out
    };

    let train = draw_split(spec.train_per_class);
    let val_id = draw_split(spec.val_per_class);
    let mut val_ood = draw_split(spec.val_per_class);

    let theta_rad = spec.theta_shift_deg.to_radians();
    if theta_rad != 0.0 || spec.shift_translation != 0.0 {
        let rot = rotation_matrix(&basis, theta_rad)?;
        for sample in &mut val_ood {
            let shifted = sample.tokens.matmul_nt(&rot)?;
            sample.tokens = shifted;
            for r in 0..sample.tokens.rows() {
                for (v, t) in sample.tokens.row_mut(r).iter_mut().zip(&translation) {
                    *v += t;
                }
            }
        }
    }

    Ok(TaskData {
        train,
        val_id,
        val_ood,
    })
}

/// Index of the largest entry; ties break toward the lowest index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Logits of the full model (backbone -> unified block -> adapter -> head)
/// on one sample.
pub fn model_forward(
    bb: &SyntheticBackbone,
    adapter: &AdapterParams,
    head: &HeadParams,
    sample: &Sample,
) -> Result<Vec<f64>> {
    let raw = backbone_forward(bb, &sample.tokens)?;
    let (block, _) = unify(&raw)?;
    let refined = adapter_forward(&block, adapter)?;
    head_forward(&refined, head)
}

/// Accuracy of an arbitrary predictor over a split.
pub fn evaluate_with<F>(mut predict: F, split: &[Sample]) -> Result<f64>
where
    F: FnMut(&Sample) -> Result<usize>,
{
    if split.is_empty() {
        return argument_err("cannot evaluate an empty split");
    }
    let mut correct = 0usize;
    for sample in split {
        if predict(sample)? == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Fraction of samples whose arg-max logit matches the label.
pub fn evaluate(
    adapter: &AdapterParams,
    head: &HeadParams,
    bb: &SyntheticBackbone,
    split: &[Sample],
) -> Result<f64> {
    evaluate_with(
        |s| Ok(argmax_lowest(&model_forward(bb, adapter, head, s)?)),
        split,
    )
}

/// Deterministic shuffled index order for one epoch.
pub(crate) fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch));
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> TaskSpec {
        TaskSpec {
            classes: 3,
            tokens_per_sample: 4,
            input_dim: 6,
            sigma: 0.5,
            theta_shift_deg: 30.0,
            shift_translation: 1.0,
            train_per_class: 5,
            val_per_class: 4,
            seed: 11,
        }
    }

    #[test]
    fn task_generation_is_deterministic() {
        let spec = small_spec();
        let a = gen_task(&spec).unwrap();
        let b = gen_task(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shift_angle_only_affects_ood_split() {
        let spec = small_spec();
        let base = gen_task(&spec).unwrap();
        let mut rotated_spec = spec.clone();
        rotated_spec.theta_shift_deg = 75.0;
        let rotated = gen_task(&rotated_spec).unwrap();
        assert_eq!(base.train, rotated.train);
        assert_eq!(base.val_id, rotated.val_id);
        assert_ne!(base.val_ood, rotated.val_ood);
    }

    #[test]
    fn zero_shift_is_the_identity_transform() {
        let mut spec = small_spec();
        spec.theta_shift_deg = 0.0;
        spec.shift_translation = 0.0;
        let data = gen_task(&spec).unwrap();
        // Same draws as a shifted task, so the OOD split equals the raw
        // pre-transform samples bit-for-bit.
        let mut shifted_spec = spec.clone();
        shifted_spec.theta_shift_deg = 45.0;
        shifted_spec.shift_translation = 0.5;
        let shifted = gen_task(&shifted_spec).unwrap();
        assert_eq!(data.train, shifted.train);
        assert_ne!(data.val_ood, shifted.val_ood);
        for s in &data.val_ood {
            assert!(s.tokens.is_finite());
        }
    }

    #[test]
    fn splits_are_balanced() {
        let spec = small_spec();
        let data = gen_task(&spec).unwrap();
        for (split, per_class) in [
            (&data.train, spec.train_per_class),
            (&data.val_id, spec.val_per_class),
            (&data.val_ood, spec.val_per_class),
        ] {
            let mut counts = vec![0usize; spec.classes];
            for s in split.iter() {
                counts[s.label] += 1;
            }
            assert!(counts.iter().all(|&c| c == per_class));
        }
    }

    #[test]
    fn rotation_is_orthogonal_and_angle_controlled() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_orthogonal(8, &mut rng);
        let rot = rotation_matrix(&q, 45f64.to_radians()).unwrap();
        // R^T R = I
        let gram = rot.matmul_tn(&rot).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((gram.get(r, c) - expect).abs() < 1e-12);
            }
        }
        // v . Rv = cos(theta) |v|^2 for even dimension
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vm = Matrix::from_vec(1, 8, v.clone()).unwrap();
        let rv = vm.matmul_nt(&rot).unwrap();
        let dot: f64 = v.iter().zip(rv.row(0)).map(|(a, b)| a * b).sum();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        assert!((dot - norm2 * 45f64.to_radians().cos()).abs() < 1e-10);
    }

    #[test]
    fn backbone_zero_input_gives_zero_tokens() {
        let bb = SyntheticBackbone::init(4, 6, TensorKind::CnnMap, 3);
        let raw = backbone_forward(&bb, &Matrix::zeros(5, 4)).unwrap();
        let (block, _) = unify(&raw).unwrap();
        assert!(block.matrix().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backbone_identity_projection_preserves_pre_activation() {
        let bb = SyntheticBackbone::identity(4, TensorKind::VitTokens);
        let sample = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.25 - 1.0);
        let (_, cache) = backbone_forward_with_cache(&bb, &sample).unwrap();
        assert_eq!(cache.pre_activation, sample);
    }

    #[test]
    fn backbone_output_unifies_for_every_kind() {
        for kind in [TensorKind::VitTokens, TensorKind::CnnMap, TensorKind::VideoClip] {
            let bb = SyntheticBackbone::init(4, 6, kind, 9);
            let sample = Matrix::from_fn(5, 4, |r, c| ((r + c) as f64).sin());
            let raw = backbone_forward(&bb, &sample).unwrap();
            let (block, _) = unify(&raw).unwrap();
            assert_eq!((block.n(), block.d()), (5, 6));
        }
    }

    #[test]
    fn backbone_rejects_width_mismatch() {
        let bb = SyntheticBackbone::init(4, 6, TensorKind::CnnMap, 3);
        assert!(backbone_forward(&bb, &Matrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn unified_tokens_match_backbone_tokens_for_every_kind() {
        // Training relies on unify recovering exactly the token matrix the
        // backbone produced, for all three layouts.
        for kind in [TensorKind::VitTokens, TensorKind::CnnMap, TensorKind::VideoClip] {
            let bb = SyntheticBackbone::init(3, 4, kind, 21);
            let sample = Matrix::from_fn(6, 3, |r, c| ((r * 3 + c) as f64).cos());
            let (raw, cache) = backbone_forward_with_cache(&bb, &sample).unwrap();
            let (block, _) = unify(&raw).unwrap();
            let mut tokens = cache.pre_activation.clone();
            for v in tokens.data_mut() {
                *v = gelu(*v);
            }
            assert_eq!(block.matrix(), &tokens);
        }
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_lowest(&[5.0]), 0);
        assert_eq!(argmax_lowest(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn evaluate_with_perfect_predictor() {
        let spec = small_spec();
        let data = gen_task(&spec).unwrap();
        let acc = evaluate_with(|s| Ok(s.label), &data.val_id).unwrap();
        assert_eq!(acc, 1.0);
        let wrong = evaluate_with(|s| Ok((s.label + 1) % spec.classes), &data.val_id).unwrap();
        assert_eq!(wrong, 0.0);
    }

    #[test]
    fn evaluate_rejects_empty_split() {
        assert!(matches!(
            evaluate_with(|s: &Sample| Ok(s.label), &[]),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn epoch_order_is_a_deterministic_permutation() {
        let a = epoch_order(10, 7, 3);
        let b = epoch_order(10, 7, 3);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_ne!(a, epoch_order(10, 7, 4));
    }
}
