use criterion::{criterion_group, criterion_main, Criterion};
use projot_core::attack::attack_bundle;
use projot_core::bundle::generate_synthetic;
use projot_core::classifier::evaluate_with_bank;
use projot_core::subspace::build_projector;
use projot_core::{AttackConfig, ClassifierConfig, Method, SyntheticParams, TextBank, WeightingConfig};

fn classify(c: &mut Criterion) {
    let bundle = generate_synthetic(&SyntheticParams { num_samples: 100, ..Default::default() }).unwrap();
    let bank = TextBank::from_bundle(&bundle, &WeightingConfig::default()).unwrap();
    let proj = build_projector(&bundle.text_matrix(), 16).unwrap();
    let mut group = c.benchmark_group("evaluate_100_samples");
    group.sample_size(20);
    for m in Method::ALL {
        let cfg = ClassifierConfig { components: 16, ..Default::default() }.with_method(m);
        group.bench_function(m.as_str(), |b| b.iter(|| evaluate_with_bank(&bundle, &bank, &cfg, Some(&proj)).unwrap()));
    }
    group.finish();

    c.bench_function("pgd_attack_100_samples", |b| {
        b.iter(|| attack_bundle(&bundle, &AttackConfig::default(), &bank, None, None, 0).unwrap())
    });
}

criterion_group!(benches, classify);
criterion_main!(benches);
