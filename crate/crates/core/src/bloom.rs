//! Bloom filter over user keys with double hashing.
//!
//! Serialized as `u32 num_probes | u32 num_bits | bitmap` (little-endian).
//! Probe `i` of key `k` sets bit `(h1 + i * h2) mod num_bits` where `h1`/`h2`
//! are the low/high halves of `xxh3_64(k)`.

use xxhash_rust::xxh3::xxh3_64;

#[derive(Clone, Debug)]
pub struct BloomFilter {
    probes: u32,
    bits: u64,
    bitmap: Vec<u8>,
}

/// Number of hash functions for a given bits-per-key budget: `round(0.69 * bpk)`.
pub fn probes_for(bits_per_key: u32) -> u32 {
    ((0.69 * f64::from(bits_per_key)).round() as u32).clamp(1, 30)
}

/// Expected false-positive rate `2^(-0.69 * bits_per_key)`.
pub fn expected_fpr(bits_per_key: u32) -> f64 {
    2f64.powf(-0.69 * f64::from(bits_per_key))
}

pub fn key_hash(key: &[u8]) -> u64 {
    xxh3_64(key)
}

fn split_hash(h: u64) -> (u64, u64) {
    (h & 0xffff_ffff, (h >> 32) | 1)
}

impl BloomFilter {
    pub fn build<'a>(keys: impl IntoIterator<Item = &'a [u8]>, key_count: usize, bits_per_key: u32) -> Self {
        let hashes: Vec<u64> = keys.into_iter().map(key_hash).collect();
        debug_assert_eq!(hashes.len(), key_count);
        Self::from_hashes(&hashes, bits_per_key)
    }

    /// Builds a filter from precomputed [`key_hash`] values.
    pub fn from_hashes(hashes: &[u64], bits_per_key: u32) -> Self {
        let bits = ((hashes.len() as u64 * u64::from(bits_per_key)).max(64) + 7) / 8 * 8;
        let mut f = BloomFilter { probes: probes_for(bits_per_key), bits, bitmap: vec![0; (bits / 8) as usize] };
        for &h in hashes {
            f.insert(h);
        }
        f
    }

    fn insert(&mut self, hash: u64) {
        let (h1, h2) = split_hash(hash);
        for i in 0..u64::from(self.probes) {
            let bit = h1.wrapping_add(i.wrapping_mul(h2)) % self.bits;
            self.bitmap[(bit / 8) as usize] |= 1 << (bit % 8);
        }
    }

    pub fn may_contain(&self, key: &[u8]) -> bool {
        let (h1, h2) = split_hash(key_hash(key));
        (0..u64::from(self.probes)).all(|i| {
            let bit = h1.wrapping_add(i.wrapping_mul(h2)) % self.bits;
            self.bitmap[(bit / 8) as usize] & (1 << (bit % 8)) != 0
        })
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.probes.to_le_bytes());
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        out.extend_from_slice(&self.bitmap);
    }

    pub fn decode(buf: &[u8]) -> Option<Self> {
        let probes = u32::from_le_bytes(buf.get(0..4)?.try_into().ok()?);
        let bits = u64::from(u32::from_le_bytes(buf.get(4..8)?.try_into().ok()?));
        let bitmap = buf.get(8..)?;
        if bits == 0 || bits % 8 != 0 || bitmap.len() as u64 != bits / 8 || probes == 0 {
            return None;
        }
        Some(BloomFilter { probes, bits, bitmap: bitmap.to_vec() })
    }

    pub fn probes(&self) -> u32 {
        self.probes
    }
}
