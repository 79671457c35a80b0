use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Named splittable random streams: one root seed plus a stream name (and
/// optional key) fully determine every draw, so independent consumers
/// (init, augmentation, blur) never perturb each other.
#[derive(Clone, Copy, Debug)]
pub struct SeedStreams {
    pub seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        SeedStreams { seed }
    }

    pub fn stream(&self, name: &str) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(splitmix(self.seed ^ fnv1a(name.as_bytes())))
    }

    /// Stream keyed by an index (per-image, per-epoch, ...).
    pub fn keyed(&self, name: &str, key: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(splitmix(
            self.seed ^ fnv1a(name.as_bytes()) ^ splitmix(key),
        ))
    }
}
