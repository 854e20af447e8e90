/// Per-sample seed: 64-bit FNV-1a over the master seed (8 bytes,
/// little-endian) followed by the UTF-8 sample id.
pub fn sample_seed(master_seed: u64, sample_id: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    master_seed
        .to_le_bytes()
        .iter()
        .chain(sample_id.as_bytes())
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// SplitMix64; small, portable and fully specified.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n` by multiply-shift reduction.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Fisher-Yates shuffle seeded by [`sample_seed`].
pub fn permute_examples<T: Clone>(blocks: &[T], sample_id: &str, master_seed: u64) -> Vec<T> {
    let mut out = blocks.to_vec();
    let mut rng = SplitMix64::new(sample_seed(master_seed, sample_id));
    for i in (1..out.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        out.swap(i, j);
    }
    out
}
