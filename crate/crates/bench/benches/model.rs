use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use uses_core::datasim::{make_example, LoadedExample, MixSpec};
use uses_core::dsp::AudioBuffer;
use uses_core::losses::LossConfig;
use uses_core::model::{MemoryMode, UsesConfig, UsesModel};
use uses_core::training::{TrainConfig, Trainer};

fn enhance(c: &mut Criterion) {
    let model = UsesModel::<f32>::new(UsesConfig::tiny(), 0).unwrap();
    let mut group = c.benchmark_group("enhance_tiny_1s");
    group.sample_size(10);
    for (rate, channels) in [(8000u32, 1usize), (8000, 4), (16000, 1)] {
        let data = (0..rate as usize * channels).map(|i| ((i * 31) % 97) as f64 / 97.0 - 0.5).collect();
        let audio = AudioBuffer::from_flat(data, channels, rate).unwrap();
        group.bench_with_input(BenchmarkId::new(format!("{rate}Hz"), channels), &audio, |b, a| {
            b.iter(|| model.enhance(a, MemoryMode::Denoise).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let spec = MixSpec { duration_s: 2.0, ..MixSpec::default() };
    let batch = vec![LoadedExample::Enhance(make_example(&spec).unwrap())];
    let model = UsesModel::<f32>::new(UsesConfig::tiny(), 0).unwrap();
    let mut trainer = Trainer::new(model, TrainConfig::default(), LossConfig::default()).unwrap();
    let mut group = c.benchmark_group("train_step_tiny");
    group.sample_size(10);
    group.bench_function("2s_8kHz", |b| b.iter(|| trainer.train_step(&batch).unwrap()));
    group.finish();
}

criterion_group!(benches, enhance, train_step);
criterion_main!(benches);
