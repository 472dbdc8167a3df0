use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use stemflow_bench::{controller, frames, model, rendered, sources};
use stemflow_core::augment::{self, AugmentConfig};
use stemflow_core::lstm::Sample;
use stemflow_core::neat::Phenotype;
use stemflow_core::task::{self, builtin_scenarios, ExperimentTag, RolloutLimits};
use stemflow_core::vision::{self, Tracker};
use stemflow_core::{FastLstm, LightCondition, StemPolyline};

fn lstm(c: &mut Criterion) {
    let m = model(50);
    let fast = FastLstm::new(&m).unwrap();
    let stem = frames(200)[199].stem;
    let mut g = c.benchmark_group("lstm");
    g.bench_function("predict_stem_f64", |b| {
        b.iter(|| m.predict_stem(black_box(&stem), LightCondition::Left).unwrap())
    });
    g.bench_function("predict_stem_fast", |b| {
        b.iter(|| fast.predict_stem(black_box(&stem), LightCondition::Left).unwrap())
    });
    let data = augment::pair_sequence(&frames(129));
    let batch: Vec<Sample> = data.iter().map(|v| Sample::from_vector(v, m.delta_scale)).collect();
    g.bench_function("gradients_batch128", |b| b.iter(|| m.gradients(black_box(&batch)).unwrap()));
    g.finish();
}

fn controllers(c: &mut Criterion) {
    let genome = controller(5);
    let fast = FastLstm::new(&model(50)).unwrap();
    let set = builtin_scenarios(ExperimentTag::LeftTarget);
    let limits = RolloutLimits::default();
    let mut g = c.benchmark_group("controller");
    g.sample_size(20);
    g.bench_function("phenotype_activate", |b| {
        let mut net = Phenotype::new(&genome, 4.9).unwrap();
        let inputs = task::controller_inputs(&StemPolyline::vertical(3.0), &set.scenarios[0]);
        b.iter(|| net.activate_first(black_box(&inputs)).unwrap())
    });
    g.bench_function("rollout_left_1", |b| {
        b.iter_batched(
            || Phenotype::new(&genome, 4.9).unwrap(),
            |mut net| task::rollout(&mut net, &fast, &set.scenarios[0], &limits).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn vision_kernels(c: &mut Criterion) {
    let stem = frames(300)[299].stem;
    let mut g = c.benchmark_group("vision");
    g.bench_function("sia_smooth", |b| b.iter(|| vision::sia_smooth(black_box(&stem))));
    let (images, env, cfg) = rendered(4);
    g.sample_size(20);
    g.bench_function("track_frame_5mp", |b| {
        b.iter(|| {
            let mut t = Tracker::new(&env, &cfg);
            t.track(black_box(&images[2])).unwrap()
        })
    });
    g.finish();
}

fn augmentation(c: &mut Criterion) {
    let src = sources(2, 432);
    let cfg = AugmentConfig::default();
    let mut g = c.benchmark_group("augment");
    g.sample_size(10);
    g.bench_function("augment_3x432", |b| b.iter(|| augment::augment(black_box(&src), &cfg, 1).unwrap()));
    g.finish();
}

criterion_group!(benches, lstm, controllers, vision_kernels, augmentation);
criterion_main!(benches);
