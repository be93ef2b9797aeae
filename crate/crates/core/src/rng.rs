//! Seed discipline: every random stream is derived independently from
//! `(master_seed, replication, stream name)` so that consumers never share draws.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Counter-based, platform-stable generator used for every stream.
pub type StreamRng = ChaCha8Rng;

pub const NOISE: &str = "noise";
pub const EXPLORATION: &str = "exploration";
pub const INSTANCE: &str = "instance";
pub const CONTROLLER: &str = "controller";

/// Derives a stream by hashing the triple into a 256-bit ChaCha key.
pub fn stream(master_seed: u64, replication: u64, name: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(replication.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
