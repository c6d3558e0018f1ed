//! Replication streams.
//!
//! Every replication draws from its own ChaCha8 stream keyed on
//! `(seed, rep)`, so results do not depend on how replications are scheduled
//! across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, rep: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Runs `f` once per replication on the current rayon pool and returns the
/// results in replication order.
pub fn replicate<T, F>(seed: u64, reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut StreamRng) -> T + Sync,
{
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(seed, rep);
            f(rep, &mut rng)
        })
        .collect()
}

/// Uniform on `(0, 1]`.
pub(crate) fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}
