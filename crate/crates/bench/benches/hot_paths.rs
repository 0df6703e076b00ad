use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qpolar::codec::{decode, encode, Received};
use qpolar::ftpc::coset_enumerator;
use qpolar::transform::transform_all;
use qpolar::{FieldElement, TransformConfig};
use qpolar_bench::{bec_spec, random_channel, random_kernel};

fn enumerators(c: &mut Criterion) {
    let g2 = random_kernel(2, 16, 1);
    c.bench_function("coset_enumerator q=2 l=16 i=1", |b| b.iter(|| coset_enumerator(black_box(&g2), 1).unwrap()));
    let g3 = random_kernel(3, 8, 2);
    c.bench_function("coset_enumerator q=3 l=8 i=1", |b| b.iter(|| coset_enumerator(black_box(&g3), 1).unwrap()));
}

fn transforms(c: &mut Criterion) {
    let cfg = TransformConfig::default();
    let w = random_channel(3, 3, 3);
    let g = random_kernel(3, 3, 4);
    c.bench_function("transform_all q=3 l=3 M=3", |b| b.iter(|| transform_all(black_box(&w), &g, &cfg).unwrap()));
    let w = random_channel(2, 4, 5);
    let g = random_kernel(2, 4, 6);
    c.bench_function("transform_all q=2 l=4 M=4", |b| b.iter(|| transform_all(black_box(&w), &g, &cfg).unwrap()));
}

fn codec(c: &mut Criterion) {
    let (spec, _) = bec_spec(10);
    let msg = vec![FieldElement::ONE; spec.info_set.len()];
    let word = encode(&spec, &msg, 3).unwrap();
    let y: Vec<usize> = word.codeword.iter().enumerate().map(|(t, x)| if t % 2 == 0 { 2 } else { x.index() }).collect();
    let received = Received::Symbols(y);
    let (_, w) = bec_spec(1);
    c.bench_function("encode bec n=10", |b| b.iter(|| encode(&spec, black_box(&msg), 3).unwrap()));
    c.bench_function("decode bec n=10", |b| b.iter(|| decode(&spec, Some(&w), black_box(&received), 3).unwrap()));
}

criterion_group!(benches, enumerators, transforms, codec);
criterion_main!(benches);
