use criterion::{black_box, criterion_group, criterion_main, Criterion};
use protomoco::augment::{make_view_pair, AugmentationSpec};
use protomoco::contrastive::{info_nce_rows, KeyQueue};
use protomoco::nn::{encode, EncoderConfig};
use protomoco::ops::{conv2d, matmul};
use protomoco::{ImageTensor, Philox, Tape};
use protomoco_bench::{desk_set, random_tensor};

fn ops(c: &mut Criterion) {
    let a = random_tensor(&[128, 128], 1);
    let b = random_tensor(&[128, 128], 2);
    c.bench_function("matmul 128x128", |bench| bench.iter(|| matmul(black_box(&a), &b).unwrap()));

    let x = random_tensor(&[16, 16, 16, 16], 3);
    let k = random_tensor(&[32, 16, 3, 3], 4);
    c.bench_function("conv2d 16x16x16x16 * 32x3x3", |bench| {
        bench.iter(|| conv2d(black_box(&x), &k, 1).unwrap())
    });
}

fn encoder(c: &mut Criterion) {
    let cfg = EncoderConfig::default();
    let mut params = cfg.init::<f32>(0).unwrap();
    let data = desk_set();
    let batch: Vec<&ImageTensor> = data.iter().take(16).map(|s| &s.image).collect();
    let x = ImageTensor::batch(&batch).unwrap();
    c.bench_function("encoder forward+backward, batch 16", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let input = tape.input(x.clone()).unwrap();
            let h = encode(&mut tape, &params, &cfg, input).unwrap();
            let loss = tape.sum(h).unwrap();
            tape.backward(loss, &mut params).unwrap();
        })
    });
}

fn contrastive(c: &mut Criterion) {
    let q = random_tensor(&[16, 64], 5);
    let k = random_tensor(&[16, 64], 6);
    let mut queue = KeyQueue::new(256).unwrap();
    queue.enqueue_batch(&random_tensor(&[256, 64], 7)).unwrap();
    c.bench_function("info_nce, batch 16, queue 256", |bench| {
        bench.iter(|| info_nce_rows(black_box(&q), &k, &queue, 0.07).unwrap())
    });

    let data = desk_set();
    let spec = AugmentationSpec::default();
    c.bench_function("view pair 32x32", |bench| {
        let mut rng = Philox::new(8);
        bench.iter(|| make_view_pair(black_box(&data[0].image), 0, &spec, &mut rng).unwrap())
    });
}

criterion_group!(benches, ops, encoder, contrastive);
criterion_main!(benches);
