use criterion::{black_box, criterion_group, criterion_main, Criterion};
use refscreen::eval::{self, LabeledScores};
use refscreen::iforest::{self, ForestConfig, IsolationForest};
use refscreen::nn::{EmbeddingNet, NetSpec, Pooling, Tensor};
use refscreen::siamese::{self, PairLabel, TrainConfig};
use refscreen::synth;

fn network(c: &mut Criterion) {
    let net = EmbeddingNet::init(NetSpec::default(), 1).unwrap();
    let v = synth::gen_good(2, 4, 64, 64).unwrap();
    let w = synth::gen_good(3, 4, 64, 64).unwrap();
    let slice = Tensor::new(vec![64, 64], v.slice(0).to_vec()).unwrap();
    let (_, cache) = net.forward(&slice).unwrap();
    let ones = Tensor::vector(vec![1.0; net.spec.embed_dim]);

    c.bench_function("forward_64x64_slice", |b| b.iter(|| net.forward(black_box(&slice)).unwrap()));
    c.bench_function("backward_64x64_slice", |b| b.iter(|| net.backward(black_box(&cache), &ones).unwrap()));
    c.bench_function("embed_volume_4_slices", |b| {
        b.iter(|| net.embed_volume(black_box(&v), Pooling::MeanSlices).unwrap())
    });
    let cfg = TrainConfig::default();
    c.bench_function("pair_gradients", |b| {
        b.iter(|| siamese::pair_gradients(&net, black_box(&v), &w, PairLabel::Similar, &cfg).unwrap())
    });
}

fn forest(c: &mut Criterion) {
    let features: Vec<Vec<f64>> = (0..240)
        .map(|i| iforest::extract_features(&synth::gen_good(i, 4, 64, 64).unwrap(), iforest::DEFAULT_GRID).unwrap())
        .collect();
    let cfg = ForestConfig::default();
    c.bench_function("iforest_fit_240x256", |b| b.iter(|| IsolationForest::fit(black_box(&features), &cfg).unwrap()));
    let model = IsolationForest::fit(&features, &cfg).unwrap();
    c.bench_function("iforest_score_240", |b| b.iter(|| model.score_all(black_box(&features)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let pairs: Vec<(f64, bool)> = (0..10_000u64)
        .map(|i| ((refscreen::seed::hash64(7, i) % 1000) as f64, i % 20 == 0))
        .collect();
    let scores = LabeledScores::from_pairs(&pairs);
    c.bench_function("auc_10k", |b| b.iter(|| eval::auc(black_box(&scores)).unwrap()));
    c.bench_function("roc_10k", |b| b.iter(|| eval::roc_points(black_box(&scores)).unwrap()));
}

criterion_group!(benches, network, forest, metrics);
criterion_main!(benches);
