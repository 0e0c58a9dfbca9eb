//! Parallel versus sequential execution on the desk-scale model.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vartex::exec::Execution;
use vartex::griddata::{generate_synthetic, SynthConfig};
use vartex::inference::predict_split;
use vartex::model::Model;
use vartex::presets::Preset;
use vartex::training::{TrainPlan, Trainer};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn series() -> vartex::griddata::GridSeries {
    generate_synthetic(&SynthConfig { variables: 8, steps: 48, seed: 1, ..Default::default() }).unwrap()
}

fn predict(c: &mut Criterion) {
    let s = series();
    let model = Model::new(Preset::DeskTiny.model_config(), 0).unwrap();
    let x = s.field(0);
    let mut group = c.benchmark_group("predict_split");
    group.sample_size(10);
    for split in [2, 4] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, split), &split, |b, &split| {
                b.iter(|| predict_split(&model, x.view(), split, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let s = series();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, exec) in MODES {
        let plan = TrainPlan { split: 2, execution: exec, ..Preset::DeskTiny.train_plan() };
        let model = Model::new(Preset::DeskTiny.model_config(), 0).unwrap();
        let fresh = Trainer::new(model, plan, &s).unwrap();
        group.bench_function(name, |b| {
            b.iter_batched(|| fresh.clone(), |mut t| t.next_step(&s).unwrap(), criterion::BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, predict, train_step);
criterion_main!(benches);
