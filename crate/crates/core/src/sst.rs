//! Sorted string table files.
//!
//! ```text
//! data block*   entries: u8 kind | u16 key_len | key | u64 seq | u32 val_len | value
//! index block   per data block: u32 first_key_len | first_key | u64 offset | u32 length
//! filter block  bloom filter over user keys (see `bloom`)
//! footer        u64 index_offset | u64 filter_offset | u32 version (=1) | u32 magic
//! ```
//!
//! All integers are little-endian. A data block is closed before the first
//! entry that would push it past `block_size`; an entry larger than a block
//! gets a block of its own. User keys are unique within a table.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering::Relaxed;
use std::sync::Arc;

use crate::bloom::{key_hash, BloomFilter};
use crate::cache::BlockCache;
use crate::error::{Error, Result};
use crate::stats::{CfCounters, Stats};
use crate::types::{CfId, Entry, InternalKey, ValueKind};

pub const SST_MAGIC: u32 = 0x4D59_434C;
pub const SST_FORMAT_VERSION: u32 = 1;
const FOOTER_LEN: usize = 8 + 8 + 4 + 4;
const ENTRY_OVERHEAD: usize = 1 + 2 + 8 + 4;

pub fn sst_file_name(number: u64) -> String {
    format!("sst-{number}.sst")
}

/// Metadata describing one table file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SstMeta {
    pub file_number: u64,
    pub cf_id: CfId,
    pub level: u8,
    pub smallest: InternalKey,
    pub largest: InternalKey,
    pub file_bytes: u64,
    pub entry_count: u64,
}

impl SstMeta {
    pub fn overlaps(&self, lo: &[u8], hi_inclusive: &[u8]) -> bool {
        self.smallest.user_key.as_slice() <= hi_inclusive && self.largest.user_key.as_slice() >= lo
    }

    pub fn contains_user_key(&self, key: &[u8]) -> bool {
        self.smallest.user_key.as_slice() <= key && key <= self.largest.user_key.as_slice()
    }
}

struct IndexEntry {
    first_key: Vec<u8>,
    offset: u64,
    len: u32,
}

pub struct SstWriter {
    out: BufWriter<File>,
    path: PathBuf,
    block_size: usize,
    bloom_bits: u32,
    block: Vec<u8>,
    block_first_key: Option<Vec<u8>>,
    offset: u64,
    index: Vec<IndexEntry>,
    hashes: Vec<u64>,
    smallest: Option<InternalKey>,
    largest: Option<InternalKey>,
    count: u64,
}

/// Result of finishing a table: everything of [`SstMeta`] except placement.
#[derive(Clone, Debug)]
pub struct SstInfo {
    pub smallest: InternalKey,
    pub largest: InternalKey,
    pub file_bytes: u64,
    pub entry_count: u64,
}

impl SstWriter {
    pub fn create(path: &Path, block_size: usize, bloom_bits: u32) -> Result<Self> {
        let file = OpenOptions::new().write(true).create_new(true).open(path)?;
        Ok(SstWriter {
            out: BufWriter::with_capacity(1 << 16, file),
            path: path.to_path_buf(),
            block_size,
            bloom_bits,
            block: Vec::with_capacity(block_size + 256),
            block_first_key: None,
            offset: 0,
            index: Vec::new(),
            hashes: Vec::new(),
            smallest: None,
            largest: None,
            count: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entry_count(&self) -> u64 {
        self.count
    }

    /// Bytes emitted so far, including the open block.
    pub fn estimated_size(&self) -> u64 {
        self.offset + self.block.len() as u64
    }

    pub fn add(&mut self, e: &Entry) -> Result<()> {
        if let Some(last) = &self.largest {
            if e.key.user_key <= last.user_key {
                return Err(Error::CorruptTable {
                    file: self.path.display().to_string(),
                    reason: "entries must be added in strictly ascending user-key order".into(),
                });
            }
        }
        let enc_len = ENTRY_OVERHEAD + e.key.user_key.len() + e.value.len();
        if !self.block.is_empty() && self.block.len() + enc_len > self.block_size {
            self.flush_block()?;
        }
        if self.block_first_key.is_none() {
            self.block_first_key = Some(e.key.user_key.clone());
        }
        let b = &mut self.block;
        b.push(e.key.kind as u8);
        b.extend_from_slice(&(e.key.user_key.len() as u16).to_le_bytes());
        b.extend_from_slice(&e.key.user_key);
        b.extend_from_slice(&e.key.seq.to_le_bytes());
        b.extend_from_slice(&(e.value.len() as u32).to_le_bytes());
        b.extend_from_slice(&e.value);
        self.hashes.push(key_hash(&e.key.user_key));
        if self.smallest.is_none() {
            self.smallest = Some(e.key.clone());
        }
        self.largest = Some(e.key.clone());
        self.count += 1;
        Ok(())
    }

    fn flush_block(&mut self) -> Result<()> {
        if self.block.is_empty() {
            return Ok(());
        }
        self.out.write_all(&self.block)?;
        self.index.push(IndexEntry {
            first_key: self.block_first_key.take().expect("non-empty block has a first key"),
            offset: self.offset,
            len: self.block.len() as u32,
        });
        self.offset += self.block.len() as u64;
        self.block.clear();
        Ok(())
    }

    /// Writes index, filter and footer, then fsyncs the file.
    pub fn finish(mut self) -> Result<SstInfo> {
        self.flush_block()?;
        let index_offset = self.offset;
        let mut buf = Vec::new();
        for ie in &self.index {
            buf.extend_from_slice(&(ie.first_key.len() as u32).to_le_bytes());
            buf.extend_from_slice(&ie.first_key);
            buf.extend_from_slice(&ie.offset.to_le_bytes());
            buf.extend_from_slice(&ie.len.to_le_bytes());
        }
        let filter_offset = index_offset + buf.len() as u64;
        BloomFilter::from_hashes(&self.hashes, self.bloom_bits).encode_into(&mut buf);
        buf.extend_from_slice(&index_offset.to_le_bytes());
        buf.extend_from_slice(&filter_offset.to_le_bytes());
        buf.extend_from_slice(&SST_FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&SST_MAGIC.to_le_bytes());
        self.out.write_all(&buf)?;
        let file_bytes = index_offset + buf.len() as u64;
        let file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        let (smallest, largest) = match (self.smallest, self.largest) {
            (Some(s), Some(l)) => (s, l),
            _ => {
                return Err(Error::CorruptTable {
                    file: self.path.display().to_string(),
                    reason: "empty table".into(),
                })
            }
        };
        Ok(SstInfo { smallest, largest, file_bytes, entry_count: self.count })
    }
}

/// Writes `entries` (strictly ascending, unique user keys) into a new table.
pub fn sst_write(path: &Path, entries: &[Entry], block_size: usize, bloom_bits: u32) -> Result<SstInfo> {
    let mut w = SstWriter::create(path, block_size, bloom_bits)?;
    for e in entries {
        w.add(e)?;
    }
    w.finish()
}

/// Shared read-side context: block cache and counters.
#[derive(Clone)]
pub struct ReadContext {
    pub cache: Option<Arc<BlockCache>>,
    pub stats: Arc<Stats>,
}

impl ReadContext {
    pub fn uncached() -> Self {
        ReadContext { cache: None, stats: Arc::new(Stats::default()) }
    }
}

pub struct SstReader {
    file: File,
    path: PathBuf,
    file_number: u64,
    index: Vec<IndexEntry>,
    filter: BloomFilter,
    ctx: ReadContext,
    cf_counters: Arc<CfCounters>,
}

impl SstReader {
    pub fn open(path: &Path, file_number: u64, cf_id: CfId, ctx: ReadContext) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let corrupt = |reason: &str| Error::CorruptTable { file: path.display().to_string(), reason: reason.into() };
        if len < FOOTER_LEN as u64 {
            return Err(corrupt("file shorter than footer"));
        }
        let mut footer = [0u8; FOOTER_LEN];
        file.read_exact_at(&mut footer, len - FOOTER_LEN as u64)?;
        let index_offset = u64::from_le_bytes(footer[0..8].try_into().unwrap());
        let filter_offset = u64::from_le_bytes(footer[8..16].try_into().unwrap());
        let version = u32::from_le_bytes(footer[16..20].try_into().unwrap());
        let magic = u32::from_le_bytes(footer[20..24].try_into().unwrap());
        if magic != SST_MAGIC {
            return Err(corrupt("bad magic"));
        }
        if version != SST_FORMAT_VERSION {
            return Err(corrupt("unsupported format version"));
        }
        let meta_end = len - FOOTER_LEN as u64;
        if index_offset > filter_offset || filter_offset > meta_end {
            return Err(corrupt("bad block offsets"));
        }
        let mut meta = vec![0u8; (meta_end - index_offset) as usize];
        file.read_exact_at(&mut meta, index_offset)?;
        let split = (filter_offset - index_offset) as usize;
        let index = decode_index(&meta[..split], index_offset).ok_or_else(|| corrupt("bad index block"))?;
        let filter = BloomFilter::decode(&meta[split..]).ok_or_else(|| corrupt("bad filter block"))?;
        let cf_counters = ctx.stats.cf(cf_id);
        Ok(SstReader { file, path: path.to_path_buf(), file_number, index, filter, ctx, cf_counters })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file_number(&self) -> u64 {
        self.file_number
    }

    pub fn block_count(&self) -> usize {
        self.index.len()
    }

    fn read_block(&self, idx: usize, fill_cache: bool) -> Result<Arc<Vec<u8>>> {
        self.ctx.stats.block_reads.fetch_add(1, Relaxed);
        self.cf_counters.block_reads.fetch_add(1, Relaxed);
        if let Some(cache) = &self.ctx.cache {
            if let Some(b) = cache.get(self.file_number, idx as u32) {
                self.ctx.stats.block_cache_hits.fetch_add(1, Relaxed);
                return Ok(b);
            }
        }
        let ie = &self.index[idx];
        let mut buf = vec![0u8; ie.len as usize];
        self.file.read_exact_at(&mut buf, ie.offset)?;
        let buf = Arc::new(buf);
        if fill_cache {
            if let Some(cache) = &self.ctx.cache {
                cache.insert(self.file_number, idx as u32, buf.clone());
            }
        }
        Ok(buf)
    }

    /// Index of the only block that may contain `key`.
    fn block_for(&self, key: &[u8]) -> Option<usize> {
        let pos = self.index.partition_point(|ie| ie.first_key.as_slice() <= key);
        pos.checked_sub(1)
    }

    pub fn may_contain(&self, user_key: &[u8]) -> bool {
        self.filter.may_contain(user_key)
    }

    /// Point lookup; the bloom filter is consulted before any data block.
    pub fn get(&self, user_key: &[u8]) -> Result<Option<Entry>> {
        if !self.filter.may_contain(user_key) {
            self.ctx.stats.bloom_negatives.fetch_add(1, Relaxed);
            return Ok(None);
        }
        let Some(b) = self.block_for(user_key) else { return Ok(None) };
        let block = self.read_block(b, true)?;
        let mut pos = 0;
        while pos < block.len() {
            let (e, next) = self.decode_entry(&block, pos)?;
            match e.key.user_key.as_slice().cmp(user_key) {
                std::cmp::Ordering::Equal => return Ok(Some(e)),
                std::cmp::Ordering::Greater => return Ok(None),
                std::cmp::Ordering::Less => pos = next,
            }
        }
        Ok(None)
    }

    fn decode_entry(&self, block: &[u8], pos: usize) -> Result<(Entry, usize)> {
        decode_entry(block, pos).ok_or_else(|| Error::CorruptTable {
            file: self.path.display().to_string(),
            reason: format!("bad entry at block offset {pos}"),
        })
    }

    /// Iterates entries with user keys in `[lo, hi)`; `None` bounds are open.
    pub fn iter(self: &Arc<Self>, lo: Option<&[u8]>, hi: Option<&[u8]>) -> SstIter {
        let block = lo.and_then(|k| self.block_for(k)).unwrap_or(0);
        SstIter {
            reader: self.clone(),
            block_idx: block,
            block: None,
            pos: 0,
            lo: lo.map(<[u8]>::to_vec),
            hi: hi.map(<[u8]>::to_vec),
            fill_cache: true,
            done: false,
        }
    }

    /// Full scan that bypasses the block cache, used by compactions.
    pub fn scan_uncached(self: &Arc<Self>) -> SstIter {
        let mut it = self.iter(None, None);
        it.fill_cache = false;
        it
    }
}

fn decode_index(buf: &[u8], data_end: u64) -> Option<Vec<IndexEntry>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let klen = u32::from_le_bytes(buf.get(pos..pos + 4)?.try_into().ok()?) as usize;
        pos += 4;
        let first_key = buf.get(pos..pos + klen)?.to_vec();
        pos += klen;
        let offset = u64::from_le_bytes(buf.get(pos..pos + 8)?.try_into().ok()?);
        pos += 8;
        let len = u32::from_le_bytes(buf.get(pos..pos + 4)?.try_into().ok()?);
        pos += 4;
        if offset + u64::from(len) > data_end {
            return None;
        }
        out.push(IndexEntry { first_key, offset, len });
    }
    Some(out)
}

fn decode_entry(block: &[u8], pos: usize) -> Option<(Entry, usize)> {
    let kind = ValueKind::from_u8(*block.get(pos)?)?;
    let klen = usize::from(u16::from_le_bytes(block.get(pos + 1..pos + 3)?.try_into().ok()?));
    let mut p = pos + 3;
    let user_key = block.get(p..p + klen)?.to_vec();
    p += klen;
    let seq = u64::from_le_bytes(block.get(p..p + 8)?.try_into().ok()?);
    p += 8;
    let vlen = u32::from_le_bytes(block.get(p..p + 4)?.try_into().ok()?) as usize;
    p += 4;
    let value = block.get(p..p + vlen)?.to_vec();
    p += vlen;
    Some((Entry { key: InternalKey { user_key, seq, kind }, value }, p))
}

pub struct SstIter {
    reader: Arc<SstReader>,
    block_idx: usize,
    block: Option<Arc<Vec<u8>>>,
    pos: usize,
    lo: Option<Vec<u8>>,
    hi: Option<Vec<u8>>,
    fill_cache: bool,
    done: bool,
}

impl SstIter {
    fn next_entry(&mut self) -> Result<Option<Entry>> {
        loop {
            if self.done {
                return Ok(None);
            }
            let block = match &self.block {
                Some(b) if self.pos < b.len() => b.clone(),
                Some(_) => {
                    self.block = None;
                    self.block_idx += 1;
                    continue;
                }
                None => {
                    if self.block_idx >= self.reader.index.len() {
                        self.done = true;
                        return Ok(None);
                    }
                    if let Some(hi) = &self.hi {
                        if self.reader.index[self.block_idx].first_key.as_slice() >= hi.as_slice() {
                            self.done = true;
                            return Ok(None);
                        }
                    }
                    let b = self.reader.read_block(self.block_idx, self.fill_cache)?;
                    self.pos = 0;
                    self.block = Some(b.clone());
                    b
                }
            };
            let (e, next) = self.reader.decode_entry(&block, self.pos)?;
            self.pos = next;
            if let Some(lo) = &self.lo {
                if e.key.user_key.as_slice() < lo.as_slice() {
                    continue;
                }
            }
            if let Some(hi) = &self.hi {
                if e.key.user_key.as_slice() >= hi.as_slice() {
                    self.done = true;
                    return Ok(None);
                }
            }
            return Ok(Some(e));
        }
    }
}

impl Iterator for SstIter {
    type Item = Result<Entry>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_entry() {
            Ok(Some(e)) => Some(Ok(e)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key(i: u64) -> Vec<u8> {
        format!("{i:016}").into_bytes()
    }

    fn entries(n: u64) -> Vec<Entry> {
        (0..n)
            .map(|i| {
                if i % 7 == 3 {
                    Entry::delete(key(i * 2), i + 100)
                } else {
                    Entry::put(key(i * 2), i + 100, vec![i as u8; (i % 300) as usize])
                }
            })
            .collect()
    }

    fn write_and_open(entries: &[Entry], block: usize) -> (tempfile::TempDir, Arc<SstReader>, SstInfo) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(sst_file_name(1));
        let info = sst_write(&path, entries, block, 10).unwrap();
        let r = Arc::new(SstReader::open(&path, 1, 0, ReadContext::uncached()).unwrap());
        (dir, r, info)
    }

    #[test]
    fn full_iteration_reproduces_entries() {
        let es = entries(5000);
        let (_d, r, info) = write_and_open(&es, 4096);
        assert_eq!(info.entry_count, 5000);
        assert_eq!(info.smallest, es[0].key);
        assert_eq!(info.largest, es[4999].key);
        assert_eq!(info.file_bytes, std::fs::metadata(r.path()).unwrap().len());
        let back: Vec<Entry> = r.iter(None, None).collect::<Result<_>>().unwrap();
        assert_eq!(back, es);
    }

    #[test]
    fn point_and_range_lookups() {
        let es = entries(2000);
        let (_d, r, _) = write_and_open(&es, 512);
        for e in es.iter().step_by(13) {
            assert_eq!(r.get(&e.key.user_key).unwrap().as_ref(), Some(e));
        }
        assert!(r.get(&key(7)).unwrap().is_none());
        let got: Vec<Entry> = r.iter(Some(&key(101)), Some(&key(400))).collect::<Result<_>>().unwrap();
        let want: Vec<Entry> = es
            .iter()
            .filter(|e| e.key.user_key >= key(101) && e.key.user_key < key(400))
            .cloned()
            .collect();
        assert_eq!(got, want);
        assert_eq!(r.iter(Some(&key(5)), Some(&key(5))).count(), 0);
    }

    #[test]
    fn block_boundaries_and_oversized_entries() {
        let es = vec![
            Entry::put(key(1), 1, vec![1; 10]),
            Entry::put(key(2), 2, vec![2; 2000]),
            Entry::put(key(3), 3, vec![3; 10]),
        ];
        let (_d, r, _) = write_and_open(&es, 512);
        assert_eq!(r.block_count(), 3);
        // each block holds whole entries, never split
        let bytes = std::fs::read(r.path()).unwrap();
        let idx0 = &r.index[1];
        assert_eq!(idx0.len as usize, ENTRY_OVERHEAD + 16 + 2000);
        assert_eq!(bytes[idx0.offset as usize], ValueKind::Put as u8);
    }

    #[test]
    fn block_closes_before_overflowing_entry() {
        // entry size = 15 + 16 + 100 = 131; four fit in 524, the fifth closes the block
        let es: Vec<Entry> = (0..8).map(|i| Entry::put(key(i), i, vec![0; 100])).collect();
        let (_d, r, _) = write_and_open(&es, 524);
        assert_eq!(r.index.iter().map(|i| i.len).collect::<Vec<_>>(), vec![524, 524]);
    }

    #[test]
    fn rejects_unsorted_and_bad_footer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.sst");
        let mut w = SstWriter::create(&p, 4096, 10).unwrap();
        w.add(&Entry::put(key(2), 1, vec![])).unwrap();
        assert!(w.add(&Entry::put(key(1), 1, vec![])).is_err());

        let es = entries(10);
        let (_d, r, _) = write_and_open(&es, 4096);
        let mut bytes = std::fs::read(r.path()).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        let p2 = dir.path().join("bad.sst");
        std::fs::write(&p2, &bytes).unwrap();
        assert!(matches!(
            SstReader::open(&p2, 2, 0, ReadContext::uncached()),
            Err(Error::CorruptTable { .. })
        ));
        bytes[n - 1] ^= 1;
        bytes[n - 5] ^= 1;
        std::fs::write(&p2, &bytes).unwrap();
        assert!(SstReader::open(&p2, 2, 0, ReadContext::uncached()).is_err());
    }

    #[test]
    fn never_reports_written_key_absent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut keys: Vec<u64> = (0..20_000).map(|_| rng.gen()).collect();
        keys.sort();
        keys.dedup();
        let es: Vec<Entry> = keys.iter().map(|&k| Entry::put(format!("{k:020}"), 1, vec![])).collect();
        let (_d, r, _) = write_and_open(&es, 4096);
        assert!(es.iter().all(|e| r.may_contain(&e.key.user_key)));
    }
}
