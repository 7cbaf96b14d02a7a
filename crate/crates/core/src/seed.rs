//! Deterministic sub-seeds. Each work item gets `split_seed(root, index)`:
//! the first word of ChaCha8 keyed by `root` on stream `index`. Streams are
//! independent, so results do not depend on the order items are processed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn split_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index);
    rng.next_u64()
}
