//! Hot kernels on the default rayon pool against a one-thread pool.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lshape::cli::suites::{random_bounded, random_set};
use lshape::configurations::count_l;
use lshape::norms::{gowers_u, star_norm, Star};
use lshape::spectral::dft;
use lshape::{PrimeField, Space};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f6 = random_bounded(
        &Space::new(PrimeField::new(3).unwrap(), 6).unwrap(),
        &mut rng,
    );
    let f3 = random_bounded(
        &Space::new(PrimeField::new(3).unwrap(), 3).unwrap(),
        &mut rng,
    );
    let big = Space::new(PrimeField::new(3).unwrap(), 3)
        .unwrap()
        .squared()
        .unwrap();
    let g = random_bounded(&big, &mut rng);
    let s = random_set(&big, 0.3, &mut rng);

    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    for (label, single) in [("pool", false), ("single", true)] {
        let mut group = c.benchmark_group(label);
        let mut run = |name: &str, work: &(dyn Fn() + Sync)| {
            group.bench_function(name, |b| {
                b.iter(|| if single { one.install(work) } else { work() })
            });
        };
        run("dft_3^6", &|| {
            black_box(dft(&f6));
        });
        run("u3_3^3", &|| {
            black_box(gowers_u(&f3, 3, None).unwrap());
        });
        run("star1_3^3x3^3", &|| {
            black_box(star_norm(&g, Star::One).unwrap());
        });
        run("count_l_3^3x3^3", &|| {
            black_box(count_l(&s).unwrap());
        });
        group.finish();
    }
}

criterion_group!(benches, kernels);
criterion_main!(benches);
