pub mod bench;
pub mod data;
pub mod policy;
pub mod remote;
pub mod setup;
pub mod store;

use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Seeded generator when a seed is given, the OS generator otherwise.
pub enum Rng {
    Seeded(ChaCha20Rng),
    Os(OsRng),
}

impl Rng {
    pub fn new(seed: Option<u64>) -> Self {
        match seed {
            Some(s) => Self::Seeded(ChaCha20Rng::seed_from_u64(s)),
            None => Self::Os(OsRng),
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        match self {
            Self::Seeded(r) => r.next_u32(),
            Self::Os(r) => r.next_u32(),
        }
    }

    fn next_u64(&mut self) -> u64 {
        match self {
            Self::Seeded(r) => r.next_u64(),
            Self::Os(r) => r.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        match self {
            Self::Seeded(r) => r.fill_bytes(dest),
            Self::Os(r) => r.fill_bytes(dest),
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        match self {
            Self::Seeded(r) => r.try_fill_bytes(dest),
            Self::Os(r) => r.try_fill_bytes(dest),
        }
    }
}

impl CryptoRng for Rng {}

pub fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> String + '_ {
    move |e| format!("{}: {e}", path.display())
}
