//! Exact save/restore of generator state.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};

/// `[seed (4 words), stream, word_pos hi, word_pos lo]`.
pub fn to_words(rng: &ChaCha8Rng) -> Vec<u64> {
    let seed = rng.get_seed();
    let mut out: Vec<u64> = seed.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    out.push(rng.get_stream());
    let pos = rng.get_word_pos();
    out.push((pos >> 64) as u64);
    out.push(pos as u64);
    out
}

pub fn from_words(words: &[u64]) -> Result<ChaCha8Rng> {
    if words.len() != 7 {
        return Err(Error::Archive(format!("rng state has {} words", words.len())));
    }
    let mut seed = [0u8; 32];
    for (i, w) in words[..4].iter().enumerate() {
        seed[i * 8..i * 8 + 8].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words[4]);
    rng.set_word_pos(((words[5] as u128) << 64) | words[6] as u128);
    Ok(rng)
}
