//! Seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha8 generator seeded
//! with the run's root seed. Stages are separated by the generator's 64-bit
//! stream counter: the high 32 bits carry the [`Stream`] id and the low 32
//! bits a stage-local counter (fold index, epoch, ...). Any stage can be
//! rerun on its own and draw exactly the numbers it drew inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Stream {
    Synthetic = 1,
    VisualEncoder = 2,
    TextEncoder = 3,
    PoiEncoder = 4,
    HeadInit = 5,
    GcnInit = 6,
    GcnDropout = 7,
    KFold = 8,
    Regressor = 9,
    KMeans = 10,
    Augment = 11,
}

pub fn stream_rng(root: u64, stream: Stream, counter: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(((stream as u64) << 32) | counter as u64);
    rng
}
