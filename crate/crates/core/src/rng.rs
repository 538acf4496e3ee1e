//! Named, independent random streams spawned from a single master seed.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed with its own
//! stream number, so runs that share a master seed see identical UL/LL draws
//! regardless of what other streams consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    UlSampling,
    LlSampling,
    Init,
    Shuffle,
    Eval,
}

impl StreamId {
    fn number(self) -> u64 {
        match self {
            StreamId::UlSampling => 1,
            StreamId::LlSampling => 2,
            StreamId::Init => 3,
            StreamId::Shuffle => 4,
            StreamId::Eval => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamId::UlSampling => "ul-sampling",
            StreamId::LlSampling => "ll-sampling",
            StreamId::Init => "init",
            StreamId::Shuffle => "shuffle",
            StreamId::Eval => "eval",
        }
    }
}

pub fn stream(master_seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(id.number());
    rng
}

/// Stream cursors owned by one solver run.
#[derive(Debug, Clone)]
pub struct SampleStreams {
    pub ul: ChaCha8Rng,
    pub ll: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl SampleStreams {
    pub fn new(master_seed: u64) -> Self {
        Self {
            ul: stream(master_seed, StreamId::UlSampling),
            ll: stream(master_seed, StreamId::LlSampling),
            eval: stream(master_seed, StreamId::Eval),
        }
    }
}
