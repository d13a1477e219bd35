//! Cluster-attention adapter library.
//!
//! A pre-trained (here: synthetic) backbone emits feature tokens; the
//! unified interface flattens them into an N x D block; the adapter scores
//! the block against learnable cluster centers, mixes a bank of per-cluster
//! transformation matrices with the resulting attention distribution, and
//! refines the transformed tokens with a LayerNorm + MLP. Linear-probe,
//! full, and staged fine-tuning procedures train the pieces, and everything
//! carries analytic gradients verifiable against finite differences.

pub mod adapter;
pub mod error;
pub mod finetune;
pub mod interface;
pub mod numerics;
pub mod synth;

pub use adapter::{
    adapter_backward, adapter_forward, adapter_forward_with_cache, adapter_param_count,
    attention_scores, weighted_transform, AdapterCache, AdapterGrads, AdapterParams,
    AttentionScores, ParamGroup,
};
pub use error::{Error, Result};
pub use finetune::{
    adamw_step, cross_entropy, cross_entropy_with_grad, head_backward, head_forward,
    head_forward_with_cache, run_finetune, EpochMetrics, HeadGrads, HeadParams, Mode,
    OptimizerState, TrainPlan, TrainedModel,
};
pub use interface::{inverse_unify, unify, FeatureBlock, RawTensor, ShapeDescriptor, TensorKind};
pub use numerics::{
    gelu, gelu_prime, grad_check, l2_normalize, layer_norm, softmax, AffineNorm, Matrix, Vector,
};
pub use synth::{
    argmax_lowest, backbone_forward, backbone_forward_with_cache, evaluate, evaluate_with,
    gen_task, model_forward, Sample, SyntheticBackbone, TaskData, TaskSpec,
};
