use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::placement::ServiceKind;

/// Entity classes with independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    User = 1,
    Instance = 2,
    Profiles = 3,
    Misc = 4,
}

/// Stream `index` of class `tag` under `seed`. Adding entities never shifts
/// the draws of existing ones.
pub fn stream(seed: u64, tag: StreamTag, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 48) | index);
    rng
}

/// Service-time stream of one instance for one service kind. Kinds get
/// separate streams so the k-th step of a kind draws the same duration
/// however the kinds interleave on a shared instance.
pub fn service_stream(seed: u64, instance: u32, kind: ServiceKind) -> ChaCha8Rng {
    stream(seed, StreamTag::Instance, (u64::from(instance) << 8) | kind as u64)
}
