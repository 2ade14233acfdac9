use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a `(seed, stream)` pair. ChaCha is
/// counter-based, so distinct streams of one seed never overlap.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-snippet sub-seed derived from the master seed.
pub fn snippet_seed(master: u64, snippet_id: u32) -> u64 {
    master ^ snippet_id as u64
}
