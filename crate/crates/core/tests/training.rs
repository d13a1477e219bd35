//! Contracts of the fine-tuning procedures on small synthetic tasks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cladapter_core::adapter::AdapterParams;
use cladapter_core::finetune::{
    adamw_step, cross_entropy_with_grad, head_backward, head_forward, head_forward_with_cache,
    run_finetune, HeadGrads, HeadParams, Mode, OptimizerState, TrainPlan,
};
use cladapter_core::interface::{unify, TensorKind};
use cladapter_core::synth::{
    backbone_forward, evaluate_with, gen_task, Sample, SyntheticBackbone, TaskData, TaskSpec,
};
use cladapter_core::{argmax_lowest, evaluate};

fn small_spec(seed: u64) -> TaskSpec {
    TaskSpec {
        classes: 3,
        tokens_per_sample: 4,
        input_dim: 8,
        sigma: 0.5,
        theta_shift_deg: 45.0,
        shift_translation: 1.0,
        train_per_class: 20,
        val_per_class: 10,
        seed,
    }
}

fn small_plan(mode: Mode, epochs: usize) -> TrainPlan {
    TrainPlan {
        mode,
        stage1_epochs: epochs,
        stage2_epochs: 0,
        lr: 1e-3,
        batch_size: 16,
        seed: 5,
        ..TrainPlan::default()
    }
}

fn fresh_model(spec: &TaskSpec, d: usize, k: usize) -> (SyntheticBackbone, AdapterParams, HeadParams) {
    let bb = SyntheticBackbone::init(spec.input_dim, d, TensorKind::VitTokens, 100);
    let adapter = AdapterParams::init(d, k, 4, 101);
    let head = HeadParams::zeros(d, spec.classes);
    (bb, adapter, head)
}

#[test]
fn lp_mode_leaves_backbone_bytes_unchanged() {
    let spec = small_spec(1);
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    let before: Vec<u64> = bb.projection.data().iter().map(|v| v.to_bits()).collect();
    let (trained, _) = run_finetune(bb, adapter, head, &data, &small_plan(Mode::Lp, 3)).unwrap();
    let after: Vec<u64> = trained
        .backbone
        .projection
        .data()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn ft_mode_moves_the_backbone() {
    let spec = small_spec(2);
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    let before = bb.projection.clone();
    let (trained, _) = run_finetune(bb, adapter, head, &data, &small_plan(Mode::Ft, 2)).unwrap();
    assert_ne!(before, trained.backbone.projection);
}

#[test]
fn sft_with_empty_stage2_is_bit_identical_to_lp() {
    let spec = small_spec(3);
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);

    let lp_plan = small_plan(Mode::Lp, 4);
    let mut sft_plan = lp_plan.clone();
    sft_plan.mode = Mode::Sft;
    sft_plan.stage2_epochs = 0;

    let (lp_model, lp_metrics) =
        run_finetune(bb.clone(), adapter.clone(), head.clone(), &data, &lp_plan).unwrap();
    let (sft_model, sft_metrics) = run_finetune(bb, adapter, head, &data, &sft_plan).unwrap();

    assert_eq!(lp_model, sft_model);
    assert_eq!(lp_metrics, sft_metrics);
}

#[test]
fn identical_runs_are_bit_identical() {
    let spec = small_spec(4);
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    let plan = TrainPlan {
        mode: Mode::Sft,
        stage1_epochs: 2,
        stage2_epochs: 2,
        lr: 1e-3,
        batch_size: 16,
        seed: 9,
        ..TrainPlan::default()
    };
    let (m1, met1) =
        run_finetune(bb.clone(), adapter.clone(), head.clone(), &data, &plan).unwrap();
    let (m2, met2) = run_finetune(bb, adapter, head, &data, &plan).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(met1, met2);
}

#[test]
fn first_epoch_loss_is_near_uniform() {
    let spec = small_spec(5);
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    let (_, metrics) = run_finetune(bb, adapter, head, &data, &small_plan(Mode::Lp, 1)).unwrap();
    let bound = (spec.classes as f64).ln() + 0.5;
    assert!(
        metrics[0].train_loss <= bound,
        "first-epoch loss {} exceeds {bound}",
        metrics[0].train_loss
    );
}

#[test]
fn rejects_empty_dataset() {
    let spec = small_spec(6);
    let mut data = gen_task(&spec).unwrap();
    data.train.clear();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    assert!(matches!(
        run_finetune(bb, adapter, head, &data, &small_plan(Mode::Lp, 1)),
        Err(cladapter_core::Error::Argument(_))
    ));
}

#[test]
fn vanishing_sigma_task_is_fully_separable_after_lp() {
    let spec = TaskSpec {
        sigma: 1e-6,
        ..small_spec(7)
    };
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    let plan = TrainPlan {
        lr: 1e-2,
        ..small_plan(Mode::Lp, 12)
    };
    let (trained, _) = run_finetune(bb, adapter, head, &data, &plan).unwrap();
    let acc = evaluate(&trained.adapter, &trained.head, &trained.backbone, &data.val_id).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn random_model_is_at_chance_on_binary_task() {
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let spec = TaskSpec {
            classes: 2,
            val_per_class: 40,
            ..small_spec(40 + seed)
        };
        let data = gen_task(&spec).unwrap();
        let bb = SyntheticBackbone::init(spec.input_dim, 8, TensorKind::VitTokens, 200 + seed);
        let adapter = AdapterParams::init(8, 3, 4, 300 + seed);
        let head = HeadParams::init(8, spec.classes, 400 + seed);
        accs.push(evaluate(&adapter, &head, &bb, &data.val_id).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((0.35..=0.65).contains(&mean), "chance-level mean {mean}");
}

/// Baseline used by the distribution-shift property: a linear head trained
/// on mean-pooled backbone features, no adapter in the path.
fn train_head_only(
    bb: &SyntheticBackbone,
    train: &[Sample],
    classes: usize,
    epochs: usize,
    plan: &TrainPlan,
) -> HeadParams {
    let mut head = HeadParams::zeros(bb.d_out(), classes);
    let mut opt = OptimizerState::new(head.num_entries());
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(plan.batch_size) {
            let mut grads = HeadGrads::zeros_like(&head);
            for &i in batch {
                let sample = &train[i];
                let raw = backbone_forward(bb, &sample.tokens).unwrap();
                let (block, _) = unify(&raw).unwrap();
                let (logits, cache) = head_forward_with_cache(&block, &head).unwrap();
                let (_, d_logits) = cross_entropy_with_grad(&logits, sample.label).unwrap();
                let (g, _) = head_backward(&d_logits, &cache, &head).unwrap();
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            let mut params = head.flatten();
            adamw_step(&mut params, &grads.flatten(), &mut opt, plan).unwrap();
            head.set_flatten(&params).unwrap();
        }
    }
    head
}

fn head_only_accuracy(bb: &SyntheticBackbone, head: &HeadParams, split: &[Sample]) -> f64 {
    evaluate_with(
        |s| {
            let raw = backbone_forward(bb, &s.tokens)?;
            let (block, _) = unify(&raw)?;
            Ok(argmax_lowest(&head_forward(&block, head)?))
        },
        split,
    )
    .unwrap()
}

#[test]
fn ood_accuracy_non_increasing_in_shift_angle() {
    let angles = [0.0, 30.0, 60.0, 90.0];
    const SEEDS: u64 = 5;
    let mut averages = vec![0.0; angles.len()];
    for seed in 0..SEEDS {
        let base = TaskSpec {
            classes: 4,
            tokens_per_sample: 4,
            input_dim: 8,
            sigma: 0.4,
            theta_shift_deg: 0.0,
            shift_translation: 0.0,
            train_per_class: 40,
            val_per_class: 30,
            seed: 70 + seed,
        };
        let bb = SyntheticBackbone::init(base.input_dim, 8, TensorKind::VitTokens, 500 + seed);
        let plan = TrainPlan {
            lr: 1e-2,
            seed: 5,
            ..TrainPlan::default()
        };
        let train_data = gen_task(&base).unwrap();
        let head = train_head_only(&bb, &train_data.train, base.classes, 8, &plan);
        for (i, &angle) in angles.iter().enumerate() {
            let spec = TaskSpec {
                theta_shift_deg: angle,
                ..base.clone()
            };
            let data = gen_task(&spec).unwrap();
            averages[i] += head_only_accuracy(&bb, &head, &data.val_ood);
        }
    }
    for avg in &mut averages {
        *avg /= SEEDS as f64;
    }
    for w in averages.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-9,
            "accuracy increased with shift angle: {averages:?}"
        );
    }
    // The dial actually bites: a right-angle shift loses real accuracy.
    assert!(
        averages[3] < averages[0] - 0.2,
        "shift has no effect: {averages:?}"
    );
}

#[test]
fn metrics_shape_and_stages() {
    let spec = small_spec(8);
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    let plan = TrainPlan {
        mode: Mode::Sft,
        stage1_epochs: 2,
        stage2_epochs: 3,
        lr: 1e-3,
        batch_size: 16,
        seed: 2,
        ..TrainPlan::default()
    };
    let (_, metrics) = run_finetune(bb, adapter, head, &data, &plan).unwrap();
    assert_eq!(metrics.len(), 5);
    let stages: Vec<u8> = metrics.iter().map(|m| m.stage).collect();
    assert_eq!(stages, vec![1, 1, 2, 2, 2]);
    let epochs: Vec<usize> = metrics.iter().map(|m| m.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4, 5]);
}

#[test]
fn presence_of_task_data_splits_is_enforced() {
    let spec = small_spec(9);
    let data = gen_task(&spec).unwrap();
    let (bb, adapter, head) = fresh_model(&spec, 8, 3);
    let empty_val = TaskData {
        train: data.train.clone(),
        val_id: Vec::new(),
        val_ood: data.val_ood.clone(),
    };
    assert!(run_finetune(bb, adapter, head, &empty_val, &small_plan(Mode::Lp, 1)).is_err());
}
