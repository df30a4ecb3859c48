use std::ops::Bound;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use crossbeam_skiplist::SkipMap;

use crate::query::PendingIndexes;
use crate::types::{CfId, Entry, InternalKey, SeqNo, ValueKind};

type MemKey = (CfId, InternalKey);

/// In-memory write buffer shared by every user-facing column family.
///
/// Entries are ordered by column family, then internal key. A memtable is
/// tied to the WAL segment that holds the same records.
pub struct MemTable {
    map: SkipMap<MemKey, Vec<u8>>,
    bytes: AtomicUsize,
    max_seq: AtomicU64,
    wal_number: u64,
    pub(crate) pending: PendingIndexes,
}

const ENTRY_OVERHEAD: usize = 48;

fn seek_key(cf: CfId, user_key: &[u8]) -> MemKey {
    (cf, InternalKey::new(user_key.to_vec(), SeqNo::MAX, ValueKind::Delete))
}

impl MemTable {
    pub fn new(wal_number: u64) -> Self {
        MemTable { map: SkipMap::new(), bytes: AtomicUsize::new(0), max_seq: AtomicU64::new(0), wal_number, pending: PendingIndexes::default() }
    }

    pub fn wal_number(&self) -> u64 {
        self.wal_number
    }

    pub fn insert(&self, cf: CfId, key: InternalKey, value: Vec<u8>) {
        let size = key.user_key.len() + value.len() + ENTRY_OVERHEAD;
        self.max_seq.fetch_max(key.seq, Ordering::Relaxed);
        self.map.insert((cf, key), value);
        self.bytes.fetch_add(size, Ordering::Relaxed);
    }

    pub fn approximate_bytes(&self) -> usize {
        self.bytes.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn max_seq(&self) -> SeqNo {
        self.max_seq.load(Ordering::Relaxed)
    }

    /// Newest version of `user_key` in `cf`, tombstones included.
    pub fn get(&self, cf: CfId, user_key: &[u8]) -> Option<Entry> {
        let seek = seek_key(cf, user_key);
        let e = self.map.lower_bound(Bound::Included(&seek))?;
        let (ecf, ik) = e.key();
        (*ecf == cf && ik.user_key == user_key).then(|| Entry { key: ik.clone(), value: e.value().clone() })
    }

    /// All versions with user keys in `[lo, hi)` of `cf`, in internal-key order.
    pub fn range(&self, cf: CfId, lo: Option<&[u8]>, hi: Option<&[u8]>) -> Vec<Entry> {
        let start = seek_key(cf, lo.unwrap_or(&[]));
        self.map
            .range((Bound::Included(&start), Bound::Unbounded))
            .take_while(|e| e.key().0 == cf && hi.map_or(true, |h| e.key().1.user_key.as_slice() < h))
            .map(|e| Entry { key: e.key().1.clone(), value: e.value().clone() })
            .collect()
    }

    /// Column families that have at least one entry.
    pub fn column_families(&self) -> Vec<CfId> {
        let mut out = Vec::new();
        let mut next = self.map.front();
        while let Some(e) = next {
            let cf = e.key().0;
            out.push(cf);
            match cf.checked_add(1) {
                Some(n) => next = self.map.lower_bound(Bound::Included(&seek_key(n, &[]))),
                None => break,
            }
        }
        out
    }

    /// Newest version per user key of `cf`, ascending, as written by a flush.
    pub fn flush_entries(&self, cf: CfId) -> Vec<Entry> {
        let start = seek_key(cf, &[]);
        let mut out: Vec<Entry> = Vec::new();
        for e in self.map.range((Bound::Included(&start), Bound::Unbounded)) {
            let (ecf, ik) = e.key();
            if *ecf != cf {
                break;
            }
            if out.last().is_some_and(|l| l.key.user_key == ik.user_key) {
                continue;
            }
            out.push(Entry { key: ik.clone(), value: e.value().clone() });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn newest_version_wins() {
        let m = MemTable::new(1);
        m.insert(1, InternalKey::new(b"k".to_vec(), 1, ValueKind::Put), b"a".to_vec());
        m.insert(1, InternalKey::new(b"k".to_vec(), 2, ValueKind::Put), b"b".to_vec());
        m.insert(2, InternalKey::new(b"k".to_vec(), 3, ValueKind::Put), b"c".to_vec());
        assert_eq!(m.get(1, b"k").unwrap().value, b"b");
        assert_eq!(m.get(2, b"k").unwrap().value, b"c");
        assert!(m.get(3, b"k").is_none());
        assert!(m.get(1, b"j").is_none());
        assert_eq!(m.column_families(), vec![1, 2]);
        assert_eq!(m.max_seq(), 3);
    }

    #[test]
    fn flush_entries_are_sorted_and_deduplicated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = MemTable::new(1);
        let mut reference = std::collections::BTreeMap::new();
        for seq in 1..=100_000u64 {
            let k = format!("{:06}", rng.gen_range(0..20_000)).into_bytes();
            m.insert(0, InternalKey::new(k.clone(), seq, ValueKind::Put), seq.to_le_bytes().to_vec());
            reference.insert(k, seq);
        }
        let flushed = m.flush_entries(0);
        assert_eq!(flushed.len(), reference.len());
        for w in flushed.windows(2) {
            assert!(w[0].key < w[1].key);
        }
        for (e, (k, seq)) in flushed.iter().zip(&reference) {
            assert_eq!(&e.key.user_key, k);
            assert_eq!(e.key.seq, *seq);
        }
    }

    #[test]
    fn range_respects_bounds_and_cf() {
        let m = MemTable::new(1);
        for (i, k) in [b"a", b"b", b"c", b"d"].iter().enumerate() {
            m.insert(5, InternalKey::new(k.to_vec(), i as u64 + 1, ValueKind::Put), vec![]);
            m.insert(6, InternalKey::new(k.to_vec(), i as u64 + 10, ValueKind::Put), vec![]);
        }
        let r = m.range(5, Some(b"b"), Some(b"d"));
        assert_eq!(r.iter().map(|e| e.key.user_key.clone()).collect::<Vec<_>>(), vec![b"b".to_vec(), b"c".to_vec()]);
        assert_eq!(m.range(6, None, None).len(), 4);
    }
}
