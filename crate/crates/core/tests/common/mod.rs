#![allow(dead_code)]

use lgb_core::spd::random_spd;
use lgb_core::{SpdMatrix, Symmetric};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn spd(seed: u64, dim: usize) -> SpdMatrix {
    random_spd(&mut rng(seed), dim, 1e4)
}

pub fn spd_set(seed: u64, dim: usize, n: usize) -> Vec<SpdMatrix> {
    let mut r = rng(seed);
    (0..n).map(|_| random_spd(&mut r, dim, 1e3)).collect()
}

pub fn rel_diff(a: &SpdMatrix, b: &SpdMatrix) -> f64 {
    (a.matrix() - b.matrix()).norm() / b.frobenius_norm()
}

/// `P + S` with `S` random SPD, so the result dominates `P`.
pub fn above(p: &SpdMatrix, seed: u64) -> SpdMatrix {
    SpdMatrix::new(p.matrix() + spd(seed, p.dim()).matrix()).unwrap()
}
