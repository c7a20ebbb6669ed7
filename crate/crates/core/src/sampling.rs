use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every seeded run in the crate.
pub type LabRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

/// Draws an index from `probs` by inverting the CDF with one uniform draw.
///
/// Entries with zero probability are never returned. `probs` must sum to one
/// up to rounding; the last positive entry absorbs any rounding slack.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    last_positive
}
