//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha8 stream derived from the run seed,
//! so changing how many points one class draws never shifts another class.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Interior,
    Dirichlet,
    Neumann,
    DiffusionCoefficient,
    Test,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Interior => 2,
            Stream::Dirichlet => 3,
            Stream::Neumann => 4,
            Stream::DiffusionCoefficient => 5,
            Stream::Test => 99,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
