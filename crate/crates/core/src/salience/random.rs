use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::map::{Orientation, SalienceMap};
use crate::corpus::Example;
use crate::error::Result;

const RANDOM_STREAM: u64 = 0x5241_4e44;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one example, independent of the order in which examples
/// are processed.
pub fn example_rng(seed: u64, example_id: u64, stream: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ example_id.rotate_left(32));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}

/// I.i.d. uniform scores for the content positions.
pub fn random_salience(example: &Example, example_id: u64, seed: u64) -> Result<SalienceMap> {
    let mut rng = example_rng(seed, example_id, RANDOM_STREAM);
    let positions = example.content_positions();
    let scores = positions.iter().map(|_| rng.gen::<f64>()).collect();
    SalienceMap::new(positions, scores, Orientation::Unsigned)
}
