//! Temporary calibration sweep for the synthetic-transfer thresholds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cladapter_core::adapter::AdapterParams;
use cladapter_core::argmax_lowest;
use cladapter_core::finetune::{
    adamw_step, cross_entropy_with_grad, head_backward, head_forward, head_forward_with_cache,
    run_finetune, HeadGrads, HeadParams, Mode, OptimizerState, TrainPlan,
};
use cladapter_core::interface::{unify, TensorKind};
use cladapter_core::synth::{
    backbone_forward, evaluate, evaluate_with, gen_task, Sample, SyntheticBackbone, TaskSpec,
};

fn train_head_only(
    bb: &SyntheticBackbone,
    train: &[Sample],
    classes: usize,
    plan: &TrainPlan,
) -> HeadParams {
    let mut head = HeadParams::zeros(bb.d_out(), classes);
    let mut opt = OptimizerState::new(head.num_entries());
    for epoch in 0..plan.stage1_epochs {
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

fn head_only_acc(bb: &SyntheticBackbone, head: &HeadParams, split: &[Sample]) -> f64 {
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

fn main() {
    let mut grid: Vec<(&str, f64, f64, usize, usize, usize, usize)> = Vec::new();
    for backbone in ["identity", "random"] {
        for probe_epochs in [10, 15, 20] {
            grid.push((backbone, 1e-4, 1.0, probe_epochs, 30, 1, 30));
        }
    }
    for (backbone, lr, tr, lp_e, ft_e, s1, s2) in grid {
        for group in [0u64, 10, 20, 30, 40] {
        let mut per_seed = Vec::new();
        let mut sums = [0.0f64; 4];
        for seed in group..group + 5 {
            let spec = TaskSpec {
                classes: 5,
                tokens_per_sample: 8,
                input_dim: 16,
                sigma: 0.6,
                theta_shift_deg: 45.0,
                shift_translation: tr,
                train_per_class: 200,
                val_per_class: 100,
                seed,
            };
            let data = gen_task(&spec).unwrap();
            let bb = match backbone {
                "identity" => SyntheticBackbone {
                    projection: cladapter_core::numerics::Matrix::identity(16),
                    kind: TensorKind::VitTokens,
                },
                _ => SyntheticBackbone::init(16, 16, TensorKind::VitTokens, 100),
            };
            let adapter = AdapterParams::init(16, 20, 4, seed.wrapping_add(2));
            let head = HeadParams::zeros(16, 5);
            let base = TrainPlan {
                lr,
                seed: seed.wrapping_add(3),
                ..TrainPlan::default()
            };

            let ho = train_head_only(
                &bb,
                &data.train,
                5,
                &TrainPlan {
                    mode: Mode::Lp,
                    stage1_epochs: lp_e,
                    stage2_epochs: 0,
                    ..base.clone()
                },
            );
            let mut accs = [0.0f64; 4];
            accs[0] = head_only_acc(&bb, &ho, &data.val_ood);

            for (slot, mode, e1, e2) in [
                (1usize, Mode::Lp, lp_e, 0usize),
                (2, Mode::Ft, ft_e, 0),
                (3, Mode::Sft, s1, s2),
            ] {
                let plan = TrainPlan {
                    mode,
                    stage1_epochs: e1,
                    stage2_epochs: e2,
                    ..base.clone()
                };
                let (model, _) =
                    run_finetune(bb.clone(), adapter.clone(), head.clone(), &data, &plan)
                        .unwrap();
                accs[slot] =
                    evaluate(&model.adapter, &model.head, &model.backbone, &data.val_ood)
                        .unwrap();
            }
            for (s, a) in sums.iter_mut().zip(accs.iter()) {
                *s += a;
            }
            per_seed.push(accs);
        }
        let m: Vec<f64> = sums.iter().map(|s| s / 5.0).collect();
        println!(
            "{backbone:<8} lr={lr:.0e} tr={tr} seeds {group}-{}: lp={lp_e} ft={ft_e} sft={s1}+{s2}:  HO {:.3}  LP {:.3}  \
             FT {:.3}  SFT {:.3}   gap(LP-HO) {:+.1}pp  SFT-FT {:+.1}pp  SFT-LP {:+.1}pp",
            group + 4,
            m[0],
            m[1],
            m[2],
            m[3],
            (m[1] - m[0]) * 100.0,
            (m[3] - m[2]) * 100.0,
            (m[3] - m[1]) * 100.0
        );
        for (i, accs) in per_seed.iter().enumerate() {
            println!(
                "    seed {}: HO {:.3} LP {:.3} FT {:.3} SFT {:.3}",
                group + i as u64,
                accs[0], accs[1], accs[2], accs[3]
            );
        }
        }
    }
}
