use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

const SHARDS: usize = 16;

type BlockKey = (u64, u32);

struct Shard {
    map: LruCache<BlockKey, Arc<Vec<u8>>>,
    bytes: usize,
    capacity: usize,
}

/// Sharded LRU cache of decoded-in-place data blocks keyed by `(file, block index)`.
pub struct BlockCache {
    shards: Vec<Mutex<Shard>>,
}

impl BlockCache {
    pub fn new(capacity_bytes: usize) -> Self {
        let per = (capacity_bytes / SHARDS).max(1);
        BlockCache {
            shards: (0..SHARDS)
                .map(|_| {
                    Mutex::new(Shard {
                        map: LruCache::unbounded(),
                        bytes: 0,
                        capacity: per,
                    })
                })
                .collect(),
        }
    }

    fn shard(&self, key: &BlockKey) -> &Mutex<Shard> {
        let h = key.0.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(key.1).wrapping_mul(0xff51_afd7_ed55_8ccd);
        &self.shards[(h >> 32) as usize % SHARDS]
    }

    pub fn get(&self, file: u64, block: u32) -> Option<Arc<Vec<u8>>> {
        let key = (file, block);
        self.shard(&key).lock().map.get(&key).cloned()
    }

    pub fn insert(&self, file: u64, block: u32, data: Arc<Vec<u8>>) {
        let key = (file, block);
        let mut s = self.shard(&key).lock();
        let len = data.len();
        if len > s.capacity {
            return;
        }
        if let Some(old) = s.map.put(key, data) {
            s.bytes -= old.len();
        }
        s.bytes += len;
        while s.bytes > s.capacity {
            match s.map.pop_lru() {
                Some((_, v)) => s.bytes -= v.len(),
                None => break,
            }
        }
    }

    pub fn evict_file(&self, file: u64) {
        for shard in &self.shards {
            let mut s = shard.lock();
            let keys: Vec<BlockKey> = s.map.iter().filter(|(k, _)| k.0 == file).map(|(k, _)| *k).collect();
            for k in keys {
                if let Some(v) = s.map.pop(&k) {
                    s.bytes -= v.len();
                }
            }
        }
    }

    pub fn capacity(&self) -> NonZeroUsize {
        NonZeroUsize::new(self.shards.iter().map(|s| s.lock().capacity).sum()).expect("non-zero")
    }
}
