//! Fixtures shared by the criterion benches.

use qpolar::codec::{construct, EstimatorPolicy, KernelPolicy};
use qpolar::gf::sample_invertible;
use qpolar::{Channel, CodeSpec, FieldSpec, Kernel, TransformConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_kernel(q: u64, ell: usize, seed: u64) -> Kernel {
    let f = FieldSpec::with_order(q).expect("prime power");
    sample_invertible(&f, ell, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_channel(q: u64, outputs: usize, seed: u64) -> Channel {
    let f = FieldSpec::with_order(q).expect("prime power");
    Channel::random(&f, outputs, true, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Arıkan-kernel code over BEC(0.5) with `2^n` symbols.
pub fn bec_spec(n: usize) -> (CodeSpec, Channel) {
    let w = Channel::bec(0.5).expect("valid erasure rate");
    let g = Kernel::arikan(w.field());
    let spec = construct(&w, 2, n, 0.2, &KernelPolicy::Fixed(g), EstimatorPolicy::Exact, 1, &TransformConfig::default())
        .expect("erasure trees stay small");
    (spec, w)
}
