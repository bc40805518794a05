//! Deterministic seed derivation.
//!
//! Randomized path strategies draw per-word sub-seeds from
//! (master seed, sentence index, word index) so results do not depend on
//! scheduling or batch partitioning.

pub const STREAM_SENTENCE: u64 = 0x53454e54; // "SENT"
pub const STREAM_WORD: u64 = 0x574f5244; // "WORD"
pub const STREAM_SPLIT: u64 = 0x53504c54; // "SPLT"
pub const STREAM_EPOCH: u64 = 0x45504f43; // "EPOC"
pub const STREAM_EMBED_INIT: u64 = 0x454d4249; // "EMBI"
pub const STREAM_WEIGHT_INIT: u64 = 0x57494e49; // "WINI"

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index into a fresh seed.
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ splitmix64(index))
}

/// Per-sentence seed for dataset-level runs.
pub fn sentence_seed(master: u64, sentence_index: usize) -> u64 {
    derive(master, STREAM_SENTENCE, sentence_index as u64)
}

/// Per-word seed inside one sentence.
pub fn word_seed(sentence_seed: u64, word_index: usize) -> u64 {
    derive(sentence_seed, STREAM_WORD, word_index as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_spread() {
        assert_eq!(derive(1, 2, 3), derive(1, 2, 3));
        assert_ne!(derive(1, 2, 3), derive(1, 2, 4));
        assert_ne!(derive(1, 2, 3), derive(1, 3, 3));
        assert_ne!(sentence_seed(7, 0), word_seed(7, 0));
    }
}
