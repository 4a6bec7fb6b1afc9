use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use msgnn::dataset::{make_windows, normalize_by_population, EpidemicWindow, WindowSpec};
use msgnn::forecaster::{init_params, window_gradient, LossKind, ModelContext, Normalizer, Subgraph, Transform, Variant};
use msgnn::params::ModelDims;
use msgnn::parallel;
use msgnn::synthetic::{generate_metapop_sir, SirScenario};

fn batch_gradients(c: &mut Criterion) {
    let out = generate_metapop_sir(&SirScenario::desk(0)).unwrap();
    let panel = normalize_by_population(&out.panel, &out.index, 1e5).unwrap();
    let dims = ModelDims::default();
    let windows = make_windows(&panel, &out.index, WindowSpec::default()).unwrap();
    let norm = Normalizer::fit(&windows, Transform::Log1p);
    let batch: Vec<_> = windows.iter().take(8).map(|w| norm.window(w)).collect();
    let ctx = ModelContext::with_default_cutoff(&out.index).unwrap();
    let sub = Subgraph::full(&ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(Variant::Full, &dims, ctx.n_counties(), ctx.n_states, &mut rng).unwrap();
    let grad = |w: &EpidemicWindow| window_gradient(&params, w, &sub, &ctx, Variant::Full, &dims, LossKind::Mae).unwrap();

    let mut group = c.benchmark_group(format!("gradients_{}_windows", batch.len()));
    group.bench_function(if parallel::is_parallel() { "parallel" } else { "fallback" }, |b| {
        b.iter(|| black_box(parallel::map(&batch, &grad)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(batch.iter().map(&grad).collect::<Vec<_>>()))
    });
    group.finish();
}

criterion_group!(benches, batch_gradients);
criterion_main!(benches);
