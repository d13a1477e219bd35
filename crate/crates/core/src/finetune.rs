//! Classification head, cross-entropy loss, AdamW, and the three
//! fine-tuning procedures.
//!
//! Linear probing (LP) trains the adapter and head over a frozen backbone.
//! Full fine-tuning (FT) trains everything jointly from the initial state.
//! Staged fine-tuning (SFT) runs LP for the first stage and continues with
//! FT from the stage-1 weights; the optimizer state resets at the boundary.

use crate::adapter::{
    adapter_backward, adapter_forward_with_cache, AdapterGrads, AdapterParams,
};
use crate::error::{argument_err, numeric_err, shape_err, Result};
use crate::interface::{unify, FeatureBlock};
use crate::numerics::{softmax, Matrix};
use crate::synth::{
    backbone_backward, backbone_forward_with_cache, epoch_order, evaluate, Sample,
    SyntheticBackbone, TaskData,
};

/// Classification head: logits = pooled . W + b.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// D x C weight matrix.
    pub w: Matrix,
    /// Length-C bias.
    pub b: Vec<f64>,
}

impl HeadParams {
    /// Zero init: uniform predictions at the start of training.
    pub fn zeros(d: usize, c: usize) -> Self {
        HeadParams {
            w: Matrix::zeros(d, c),
            b: vec![0.0; c],
        }
    }

    /// Seeded random init, N(0, 1/sqrt(D)); used where a generic point is
    /// needed (for example gradient checks).
    pub fn init(d: usize, c: usize, seed: u64) -> Self {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (d as f64).sqrt();
        HeadParams {
            w: Matrix::from_fn(d, c, |_, _| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                std * z
            }),
            b: vec![0.0; c],
        }
    }

    pub fn d(&self) -> usize {
        self.w.rows()
    }

    pub fn classes(&self) -> usize {
        self.w.cols()
    }

    pub fn num_entries(&self) -> usize {
        self.w.data().len() + self.b.len()
    }

    /// W row-major, then b.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.w.data().to_vec();
        out.extend_from_slice(&self.b);
        out
    }

    pub fn set_flatten(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_entries() {
            return shape_err(format!(
                "flat head vector has {} entries, head stores {}",
                values.len(),
                self.num_entries()
            ));
        }
        let w_len = self.w.data().len();
        self.w.data_mut().copy_from_slice(&values[..w_len]);
        self.b.copy_from_slice(&values[w_len..]);
        Ok(())
    }
}

/// Gradients with the same shapes as [`HeadParams`].
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros_like(h: &HeadParams) -> Self {
        HeadGrads {
            w: Matrix::zeros(h.w.rows(), h.w.cols()),
            b: vec![0.0; h.b.len()],
        }
    }

    pub fn add_assign(&mut self, other: &HeadGrads) {
        self.w.add_scaled(&other.w, 1.0).unwrap();
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.w.scale(alpha);
        for v in &mut self.b {
            *v *= alpha;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.w.data().to_vec();
        out.extend_from_slice(&self.b);
        out
    }
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pooled: Vec<f64>,
    n: usize,
}

/// Mean-pools the block over tokens and applies the linear head.
pub fn head_forward(block: &FeatureBlock, head: &HeadParams) -> Result<Vec<f64>> {
    head_forward_with_cache(block, head).map(|(logits, _)| logits)
}

pub fn head_forward_with_cache(
    block: &FeatureBlock,
    head: &HeadParams,
) -> Result<(Vec<f64>, HeadCache)> {
    if block.d() != head.d() {
        return shape_err(format!(
            "feature width {} vs head width {}",
            block.d(),
            head.d()
        ));
    }
    let pooled = block.matrix().col_mean();
    let c = head.classes();
    let mut logits = head.b.clone();
    for (d, &p) in pooled.iter().enumerate() {
        let row = head.w.row(d);
        for j in 0..c {
            logits[j] += p * row[j];
        }
    }
    Ok((
        logits,
        HeadCache {
            pooled,
            n: block.n(),
        },
    ))
}

/// Backward pass of [`head_forward`]: gradients for the head plus the
/// gradient with respect to the input block.
pub fn head_backward(
    d_logits: &[f64],
    cache: &HeadCache,
    head: &HeadParams,
) -> Result<(HeadGrads, Matrix)> {
    if d_logits.len() != head.classes() {
        return shape_err("logit gradient length does not match the head");
    }
    let d = head.d();
    let mut grads = HeadGrads::zeros_like(head);
    for (r, &p) in cache.pooled.iter().enumerate() {
        for (c, &dl) in d_logits.iter().enumerate() {
            grads.w.set(r, c, p * dl);
        }
    }
    grads.b.copy_from_slice(d_logits);
    let d_pooled: Vec<f64> = (0..d)
        .map(|r| head.w.row(r).iter().zip(d_logits).map(|(w, dl)| w * dl).sum())
        .collect();
    let inv_n = 1.0 / cache.n as f64;
    let d_block = Matrix::from_fn(cache.n, d, |_, c| d_pooled[c] * inv_n);
    Ok((grads, d_block))
}

/// Softmax cross-entropy with log-sum-exp stabilization.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    cross_entropy_with_grad(logits, label).map(|(loss, _)| loss)
}

/// Loss plus its gradient with respect to the logits (softmax - one-hot).
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return argument_err(format!(
            "label {} out of range for {} classes",
            label,
            logits.len()
        ));
    }
    let probs = softmax(logits)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Fine-tuning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Backbone frozen; adapter and head trained.
    Lp,
    /// Backbone, adapter, and head trained jointly from the initial state.
    Ft,
    /// LP for stage 1, then FT from the stage-1 weights.
    Sft,
}

/// Everything that parameterizes one fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub mode: Mode,
    pub stage1_epochs: usize,
    /// Used by SFT only; LP and FT train for `stage1_epochs` in total.
    pub stage2_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            mode: Mode::Sft,
            stage1_epochs: 40,
            stage2_epochs: 60,
            lr: 1e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return argument_err("batch_size must be >= 1");
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return argument_err("lr must be positive");
        }
        if self.weight_decay < 0.0 {
            return argument_err("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return argument_err("beta1 and beta2 must lie in [0, 1)");
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return argument_err("adam_eps must be positive");
        }
        if self.mode == Mode::Sft && self.stage1_epochs == 0 {
            return argument_err("SFT requires stage1_epochs >= 1");
        }
        Ok(())
    }
}

/// First/second moment estimates plus the shared step counter for one flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One AdamW update with bias correction. The decoupled decay
/// p <- p - lr*wd*p is applied before the adaptive step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    plan: &TrainPlan,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return shape_err(format!(
            "adamw_step: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return numeric_err("adamw_step received a non-finite gradient");
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - plan.beta1.powi(t);
    let bc2 = 1.0 - plan.beta2.powi(t);
    let decay = 1.0 - plan.lr * plan.weight_decay;
    for i in 0..params.len() {
        params[i] *= decay;
        let g = grads[i];
        state.m[i] = plan.beta1 * state.m[i] + (1.0 - plan.beta1) * g;
        state.v[i] = plan.beta2 * state.v[i] + (1.0 - plan.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= plan.lr * m_hat / (v_hat.sqrt() + plan.adam_eps);
    }
    Ok(())
}

/// Per-epoch record of one fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based, global across stages.
    pub epoch: usize,
    /// 1 for LP/FT and SFT stage 1, 2 for SFT stage 2.
    pub stage: u8,
    pub train_loss: f64,
    pub val_id_acc: f64,
    pub val_ood_acc: f64,
}

/// Model state returned by [`run_finetune`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub backbone: SyntheticBackbone,
    pub adapter: AdapterParams,
    pub head: HeadParams,
}

#[derive(Clone, Copy, PartialEq)]
enum StageKind {
    /// Backbone frozen: adapter + head trainable.
    Frozen,
    /// Backbone also trainable.
    Full,
}

#[derive(Default)]
struct Trace {
    metrics: Vec<EpochMetrics>,
    global_epoch: usize,
}

struct BatchGrads {
    adapter: AdapterGrads,
    head: HeadGrads,
    projection: Option<Matrix>,
}

fn sample_backward(
    backbone: &SyntheticBackbone,
    adapter: &AdapterParams,
    head: &HeadParams,
    sample: &Sample,
    full: bool,
    acc: &mut BatchGrads,
) -> Result<f64> {
    let (raw, bcache) = backbone_forward_with_cache(backbone, &sample.tokens)?;
    let (block, _) = unify(&raw)?;
    let (refined, acache) = adapter_forward_with_cache(&block, adapter)?;
    let (logits, hcache) = head_forward_with_cache(&refined, head)?;
    let (loss, d_logits) = cross_entropy_with_grad(&logits, sample.label)?;
    let (hgrads, d_refined) = head_backward(&d_logits, &hcache, head)?;
    let (agrads, d_block) = adapter_backward(&d_refined, &acache, adapter)?;
    acc.head.add_assign(&hgrads);
    acc.adapter.add_assign(&agrads);
    if full {
        let d_proj = backbone_backward(&d_block, &bcache)?;
        acc.projection
            .as_mut()
            .expect("projection gradient accumulator")
            .add_scaled(&d_proj, 1.0)?;
    }
    Ok(loss)
}

fn run_stage(
    model: &mut TrainedModel,
    data: &TaskData,
    plan: &TrainPlan,
    kind: StageKind,
    stage: u8,
    epochs: usize,
    trace: &mut Trace,
) -> Result<()> {
    let full = kind == StageKind::Full;
    let TrainedModel {
        backbone,
        adapter,
        head,
    } = model;
    let flat_len = adapter.num_entries()
        + head.num_entries()
        + if full { backbone.projection.data().len() } else { 0 };
    let mut opt = OptimizerState::new(flat_len);

    for _ in 0..epochs {
        let order = epoch_order(data.train.len(), plan.seed, trace.global_epoch as u64);
        let mut loss_sum = 0.0;
        for batch in order.chunks(plan.batch_size) {
            let mut acc = BatchGrads {
                adapter: AdapterGrads::zeros_like(adapter),
                head: HeadGrads::zeros_like(head),
                projection: full.then(|| {
                    Matrix::zeros(backbone.projection.rows(), backbone.projection.cols())
                }),
            };
            for &i in batch {
                loss_sum +=
                    sample_backward(backbone, adapter, head, &data.train[i], full, &mut acc)?;
            }
            let inv = 1.0 / batch.len() as f64;
            acc.adapter.scale(inv);
            acc.head.scale(inv);
            if let Some(p) = acc.projection.as_mut() {
                p.scale(inv);
            }

            let mut params = adapter.flatten();
            params.extend_from_slice(&head.flatten());
            let mut grads = acc.adapter.flatten();
            grads.extend_from_slice(&acc.head.flatten());
            if let Some(p) = &acc.projection {
                params.extend_from_slice(backbone.projection.data());
                grads.extend_from_slice(p.data());
            }
            adamw_step(&mut params, &grads, &mut opt, plan)?;

            let a_len = adapter.num_entries();
            let h_len = head.num_entries();
            adapter.set_flatten(&params[..a_len])?;
            head.set_flatten(&params[a_len..a_len + h_len])?;
            if full {
                backbone
                    .projection
                    .data_mut()
                    .copy_from_slice(&params[a_len + h_len..]);
            }
        }
        let train_loss = loss_sum / data.train.len() as f64;
        let val_id_acc = evaluate(adapter, head, backbone, &data.val_id)?;
        let val_ood_acc = evaluate(adapter, head, backbone, &data.val_ood)?;
        trace.global_epoch += 1;
        trace.metrics.push(EpochMetrics {
            epoch: trace.global_epoch,
            stage,
            train_loss,
            val_id_acc,
            val_ood_acc,
        });
    }
    Ok(())
}

/// Runs the fine-tuning procedure selected by the plan and returns the
/// trained model plus per-epoch metrics.
///
/// Epoch shuffling draws from seed + global epoch index, so identical
/// (plan, data) inputs reproduce bit-identical results.
pub fn run_finetune(
    backbone: SyntheticBackbone,
    adapter: AdapterParams,
    head: HeadParams,
    data: &TaskData,
    plan: &TrainPlan,
) -> Result<(TrainedModel, Vec<EpochMetrics>)> {
    plan.validate()?;
    if data.train.is_empty() {
        return argument_err("training split is empty");
    }
    if data.val_id.is_empty() || data.val_ood.is_empty() {
        return argument_err("validation splits must be non-empty");
    }
    let mut model = TrainedModel {
        backbone,
        adapter,
        head,
    };
    let mut trace = Trace::default();

    match plan.mode {
        Mode::Lp => run_stage(
            &mut model,
            data,
            plan,
            StageKind::Frozen,
            1,
            plan.stage1_epochs,
            &mut trace,
        )?,
        Mode::Ft => run_stage(
            &mut model,
            data,
            plan,
            StageKind::Full,
            1,
            plan.stage1_epochs,
            &mut trace,
        )?,
        Mode::Sft => {
            run_stage(
                &mut model,
                data,
                plan,
                StageKind::Frozen,
                1,
                plan.stage1_epochs,
                &mut trace,
            )?;
            run_stage(
                &mut model,
                data,
                plan,
                StageKind::Full,
                2,
                plan.stage2_epochs,
                &mut trace,
            )?;
        }
    }

    Ok((model, trace.metrics))
}
