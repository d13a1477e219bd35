use criterion::{black_box, criterion_group, criterion_main, Criterion};

use cladapter_bench::{random_block, random_vec};
use cladapter_core::adapter::{
    adapter_backward, adapter_forward, adapter_forward_with_cache, attention_scores,
    AdapterParams,
};
use cladapter_core::finetune::{adamw_step, OptimizerState, TrainPlan};
use cladapter_core::interface::{inverse_unify, unify, RawTensor};

// ViT-ish token geometry at a desk-scale width.
const N: usize = 196;
const D: usize = 64;
const K: usize = 20;

fn bench_adapter(c: &mut Criterion) {
    let params = AdapterParams::init(D, K, 4, 1);
    let block = random_block(N, D, 2);

    c.bench_function("attention_scores_196x64_k20", |b| {
        b.iter(|| attention_scores(black_box(&block), black_box(&params)).unwrap())
    });

    c.bench_function("adapter_forward_196x64_k20", |b| {
        b.iter(|| adapter_forward(black_box(&block), black_box(&params)).unwrap())
    });

    c.bench_function("adapter_forward_backward_196x64_k20", |b| {
        b.iter(|| {
            let (out, cache) =
                adapter_forward_with_cache(black_box(&block), black_box(&params)).unwrap();
            let mut d_out = out.into_matrix();
            d_out.scale(2.0);
            adapter_backward(&d_out, &cache, &params).unwrap()
        })
    });
}

fn bench_interface(c: &mut Criterion) {
    let raw = RawTensor::VideoClip {
        frames: 4,
        channels: D,
        height: 7,
        width: 7,
        data: random_vec(4 * D * 49, 3),
    };
    c.bench_function("unify_inverse_video_4x64x7x7", |b| {
        b.iter(|| {
            let (block, desc) = unify(black_box(&raw)).unwrap();
            inverse_unify(&block, &desc).unwrap()
        })
    });
}

fn bench_optimizer(c: &mut Criterion) {
    let len = cladapter_core::adapter::adapter_param_count(D, K, 4);
    let grads = random_vec(len, 4);
    let plan = TrainPlan::default();
    c.bench_function("adamw_step_flat_params", |b| {
        b.iter_batched(
            || (random_vec(len, 5), OptimizerState::new(len)),
            |(mut params, mut state)| {
                adamw_step(&mut params, &grads, &mut state, &plan).unwrap();
                params
            },
            criterion::BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, bench_adapter, bench_interface, bench_optimizer);
criterion_main!(benches);
