//! The storage engine: write path, flushes, background compaction and
//! recovery. Read APIs live in `query`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};

use crate::cache::BlockCache;
use crate::cf::{check_name, CfDescriptor, CfKind};
use crate::codec;
use crate::compaction::{self, CompactCursors, CompactionJob, CompactionMode, EntrySource, MergeIter};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::manifest::{self, Edit, ManifestState, ManifestWriter};
use crate::memtable::MemTable;
use crate::sst::{sst_file_name, ReadContext, SstMeta, SstWriter};
use crate::stats::{Stats, StatsSnapshot};
use crate::transform::{build_transform, index_value_bytes, plan_links, CfTransformer, TransformerHandle, TransformerSpec};
use crate::types::{CfId, Entry, InternalKey, RecordFormat, Row, Schema, SeqNo, ValueKind};
use crate::version::{TableFile, Version};
use crate::wal::{list_wal_files, wal_replay, WalRecord, WalWriter};

const MANIFEST_REWRITE_BYTES: u64 = 64 << 20;

/// Points at which a simulated crash can be injected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FailPoint {
    /// A WAL append writes a torn record.
    WalAppend,
    /// A flush writes its tables but never installs them.
    FlushInstall,
    /// A compaction dies while writing its outputs.
    CompactionOutput,
    /// A manifest group is written torn.
    ManifestInstall,
}

struct Armed {
    point: FailPoint,
    remaining: u64,
    keep: usize,
}

struct WriteState {
    last_seq: SeqNo,
    wal: WalWriter,
}

pub(crate) struct MemSet {
    pub active: Arc<MemTable>,
    /// Immutable memtables waiting for flush, oldest first.
    pub imm: VecDeque<Arc<MemTable>>,
}

struct VersionSet {
    state: ManifestState,
    tables: BTreeMap<u64, Arc<TableFile>>,
    writer: ManifestWriter,
    logged_bytes: u64,
}

#[derive(Default)]
struct BgState {
    running: HashSet<CfId>,
    shutdown: bool,
    cursors: CompactCursors,
    error: Option<String>,
}

pub(crate) struct Inner {
    pub cfg: EngineConfig,
    pub dir: PathBuf,
    pub stats: Arc<Stats>,
    pub ctx: ReadContext,
    write: Mutex<WriteState>,
    pub mems: RwLock<MemSet>,
    versions: Mutex<VersionSet>,
    current: RwLock<Arc<Version>>,
    transformers: RwLock<HashMap<CfId, Arc<TransformerHandle>>>,
    next_file: AtomicU64,
    bg: Mutex<BgState>,
    bg_cv: Condvar,
    done_cv: Condvar,
    poisoned: AtomicBool,
    failpoint: Mutex<Option<Armed>>,
}

/// An open database.
pub struct Engine {
    pub(crate) inner: Arc<Inner>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Engine {
    pub fn open(cfg: EngineConfig) -> Result<Engine> {
        cfg.validate()?;
        let dir = cfg.data_dir.clone();
        fs::create_dir_all(&dir)?;
        let stats = Arc::new(Stats::default());
        let cache = (cfg.block_cache_size > 0).then(|| Arc::new(BlockCache::new(cfg.block_cache_size)));
        let ctx = ReadContext { cache, stats: stats.clone() };

        let state = manifest::recover(&dir)?.unwrap_or_default();
        let mut tables = BTreeMap::new();
        for m in state.live_files() {
            let t = TableFile::new(&dir, m.clone(), ctx.clone());
            if !t.path().exists() {
                return Err(Error::CorruptManifest {
                    line: 0,
                    reason: format!("live file {} is missing", t.path().display()),
                });
            }
            tables.insert(m.file_number, Arc::new(t));
        }
        let mut max_number = tables.keys().copied().max().unwrap_or(0);
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(n) = name.strip_prefix("sst-").and_then(|r| r.strip_suffix(".sst")).and_then(|n| n.parse().ok()) {
                max_number = max_number.max(n);
                if !tables.contains_key(&n) {
                    log::info!("removing orphan table {name}");
                    fs::remove_file(dir.join(&name))?;
                }
            } else if name.ends_with(".tmp") {
                fs::remove_file(dir.join(&name))?;
            }
        }
        let wal_files = list_wal_files(&dir)?;
        if let Some((n, _)) = wal_files.last() {
            max_number = max_number.max(*n);
        }
        let writer = manifest::write_snapshot(&dir, &state)?;
        let last_seq = state.last_sequence;
        let version = Arc::new(Version::build(&state, &tables));

        let mut handles = HashMap::new();
        for d in state.cfs.values().filter(|d| d.transformer.is_some()) {
            handles.insert(d.id, Arc::new(TransformerHandle::new(d.id, d.destinations.clone(), build_transform(d)?)));
        }

        let wal_number = max_number + 1;
        let wal = WalWriter::create(&dir, wal_number, cfg.wal_sync)?;
        let inner = Arc::new(Inner {
            cfg,
            dir: dir.clone(),
            stats,
            ctx,
            write: Mutex::new(WriteState { last_seq, wal }),
            mems: RwLock::new(MemSet { active: Arc::new(MemTable::new(wal_number)), imm: VecDeque::new() }),
            versions: Mutex::new(VersionSet { state, tables, writer, logged_bytes: 0 }),
            current: RwLock::new(version),
            transformers: RwLock::new(handles),
            next_file: AtomicU64::new(wal_number + 1),
            bg: Mutex::new(BgState::default()),
            bg_cv: Condvar::new(),
            done_cv: Condvar::new(),
            poisoned: AtomicBool::new(false),
            failpoint: Mutex::new(None),
        });
        inner.replay_wals(&wal_files)?;

        let engine = Engine { inner, threads: Mutex::new(Vec::new()) };
        engine.start_threads();
        Ok(engine)
    }

    fn start_threads(&self) {
        let mut threads = self.threads.lock();
        let inner = self.inner.clone();
        threads.push(
            std::thread::Builder::new()
                .name("telsm-flush".into())
                .spawn(move || inner.flush_loop())
                .expect("spawn flush thread"),
        );
        for i in 0..self.inner.cfg.max_background_compactions {
            let inner = self.inner.clone();
            threads.push(
                std::thread::Builder::new()
                    .name(format!("telsm-compact-{i}"))
                    .spawn(move || inner.compaction_loop())
                    .expect("spawn compaction thread"),
            );
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.inner.dir
    }

    /// Creates a user-facing column family.
    pub fn create_cf(&self, name: &str, schema: Schema, format: RecordFormat) -> Result<CfId> {
        check_name(name)?;
        let inner = &self.inner;
        let mut vs = inner.versions.lock();
        if vs.state.cfs.values().any(|d| d.name == name) {
            return Err(Error::ColumnFamilyExists(name.to_string()));
        }
        let id = vs.state.cfs.keys().max().map_or(Ok(1), |m| {
            m.checked_add(1).ok_or_else(|| Error::Config("column family ids exhausted".into()))
        })?;
        let d = CfDescriptor::user_facing(id, name, schema, format);
        inner.install_locked(&mut vs, &[Edit::CreateCf(d)], Vec::new(), &[])?;
        Ok(id)
    }

    /// Links a transformer pipeline to `cf` and creates its internal column
    /// families. Returns the names of the created column families.
    pub fn link_transformers(&self, cf: &str, specs: &[TransformerSpec]) -> Result<Vec<String>> {
        let inner = &self.inner;
        let id = inner
            .version()
            .cf_by_name(cf)
            .map(|d| d.id)
            .ok_or_else(|| Error::UnknownColumnFamily(cf.to_string()))?;
        let _slot = inner.acquire_cf(id)?;
        let mut vs = inner.versions.lock();
        let src = vs.state.cfs[&id].clone();
        if vs.state.files.get(&id).is_some_and(|ls| ls.iter().skip(1).any(|l| !l.is_empty())) {
            return Err(Error::InvalidTransformer(format!(
                "`{cf}` already holds leveled data; link transformers before loading it past level 0"
            )));
        }
        let members: Vec<CfDescriptor> = vs.state.cfs.values().filter(|d| d.root == src.root).cloned().collect();
        let root_schema = vs.state.cfs[&src.root].schema.clone();
        let next_id = vs.state.cfs.keys().max().copied().unwrap_or(0) + 1;
        let names: HashSet<String> = vs.state.cfs.values().map(|d| d.name.clone()).collect();
        let plan = plan_links(&src, &members, &root_schema, specs, &|n| names.contains(n), next_id)?;

        let mut handles = Vec::new();
        for d in plan.all().filter(|d| d.transformer.is_some()) {
            handles.push(Arc::new(TransformerHandle::new(d.id, d.destinations.clone(), build_transform(d)?)));
        }
        let edits: Vec<Edit> = plan.all().cloned().map(Edit::CreateCf).collect();
        {
            let mut map = inner.transformers.write();
            for h in &handles {
                map.insert(h.cf(), h.clone());
            }
        }
        if let Err(e) = inner.install_locked(&mut vs, &edits, Vec::new(), &[]) {
            let mut map = inner.transformers.write();
            for h in &handles {
                map.remove(&h.cf());
            }
            return Err(e);
        }
        drop(vs);
        inner.bg_cv.notify_all();
        Ok(plan.created.iter().map(|d| d.name.clone()).collect())
    }

    /// Inserts (or overwrites) a row.
    pub fn insert(&self, cf: &str, key: &[u8], row: &Row) -> Result<()> {
        let d = self.inner.writable_cf(cf)?;
        d.schema.check_row(row)?;
        let value = codec::encode(d.format, &d.schema, row)?;
        self.inner.check_indexed_values(&d, row)?;
        self.inner.write(d.id, key, ValueKind::Put, value)
    }

    /// Inserts an already encoded record, which must be well-formed for the
    /// column family's schema and format.
    pub fn insert_encoded(&self, cf: &str, key: &[u8], value: Vec<u8>) -> Result<()> {
        let d = self.inner.writable_cf(cf)?;
        codec::validate(d.format, &d.schema, &value)?;
        if self.inner.has_index(&d) {
            let row = codec::decode(d.format, &d.schema, &value)?;
            self.inner.check_indexed_values(&d, &row)?;
        }
        self.inner.write(d.id, key, ValueKind::Put, value)
    }

    pub fn delete(&self, cf: &str, key: &[u8]) -> Result<()> {
        let d = self.inner.writable_cf(cf)?;
        self.inner.write(d.id, key, ValueKind::Delete, Vec::new())
    }

    /// Switches the active memtable and waits until every memtable is flushed.
    pub fn flush(&self) -> Result<()> {
        let inner = &self.inner;
        inner.check_alive()?;
        {
            let mut w = inner.write.lock();
            if !inner.mems.read().active.is_empty() {
                inner.switch_memtable(&mut w)?;
            }
        }
        let mut bg = inner.bg.lock();
        while !inner.mems.read().imm.is_empty() {
            inner.check_alive()?;
            if let Some(e) = &bg.error {
                return Err(Error::Transform(e.clone()));
            }
            inner.done_cv.wait_for(&mut bg, Duration::from_millis(20));
        }
        Ok(())
    }

    /// Waits until no compaction is due or running.
    pub fn wait_for_compactions(&self) -> Result<()> {
        let inner = &self.inner;
        let mut bg = inner.bg.lock();
        loop {
            inner.check_alive()?;
            if let Some(e) = &bg.error {
                return Err(Error::Transform(e.clone()));
            }
            let v = inner.version();
            let due = !inner.cfg.disable_auto_compactions
                && v.cfs.keys().any(|&cf| compaction::score(&v, &inner.cfg, cf) >= 1.0);
            if bg.running.is_empty() && !due && inner.mems.read().imm.is_empty() {
                return Ok(());
            }
            inner.done_cv.wait_for(&mut bg, Duration::from_millis(20));
        }
    }

    /// Flushes, then moves every run out of transformer column families and
    /// merges each terminal column family down to its deepest level, so that
    /// all data sits in terminal column families.
    pub fn compact_all(&self) -> Result<()> {
        self.settle(true)
    }

    /// Flushes and moves every run out of transformer column families.
    /// Terminal column families are left to their usual compactions.
    pub fn drain_transformers(&self) -> Result<()> {
        self.settle(false)
    }

    fn settle(&self, full: bool) -> Result<()> {
        self.flush()?;
        let inner = &self.inner;
        loop {
            // settle background work first so the pass sees a stable version
            self.wait_for_compactions()?;
            let v = inner.version();
            let pending: Vec<CfId> = v
                .cfs
                .iter()
                .filter(|(&cf, d)| {
                    let files = v.files(cf);
                    if d.has_transformer() {
                        !files.level(0).is_empty()
                    } else {
                        full && files.deepest_level().is_some_and(|deep| files.levels[..deep].iter().any(|l| !l.is_empty()))
                    }
                })
                .map(|(&cf, _)| cf)
                .collect();
            if pending.is_empty() {
                return Ok(());
            }
            for cf in pending {
                let _slot = inner.acquire_cf(cf)?;
                let v = inner.version();
                let job = {
                    let mut bg = inner.bg.lock();
                    compaction::pick(&v, &inner.cfg, cf, &mut bg.cursors, true)
                };
                if let Some(job) = job {
                    inner.run_job(job)?;
                }
            }
        }
    }

    /// Arms a simulated crash at `point`, firing on its `after`-th hit
    /// (1 = next). `keep` bounds the bytes of a torn write.
    pub fn arm_failpoint(&self, point: FailPoint, after: u64, keep: usize) {
        *self.inner.failpoint.lock() = Some(Armed { point, remaining: after.max(1), keep });
    }

    pub fn disarm_failpoint(&self) {
        *self.inner.failpoint.lock() = None;
    }

    pub fn is_crashed(&self) -> bool {
        self.inner.poisoned.load(Ordering::Acquire)
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.inner.stats.snapshot()
    }

    pub fn stats_handle(&self) -> Arc<Stats> {
        self.inner.stats.clone()
    }

    /// The current version snapshot.
    pub fn version(&self) -> Arc<Version> {
        self.inner.version()
    }

    pub fn last_sequence(&self) -> SeqNo {
        self.inner.write.lock().last_seq
    }

    pub fn cf_id(&self, name: &str) -> Option<CfId> {
        self.inner.version().cf_by_name(name).map(|d| d.id)
    }

    /// Names of all column families, internal ones included.
    pub fn column_families(&self) -> Vec<Arc<CfDescriptor>> {
        self.inner.version().cfs.values().cloned().collect()
    }

    /// Human-readable per column family, per level file counts and sizes.
    pub fn describe(&self) -> String {
        let v = self.inner.version();
        let mut out = String::new();
        for (id, d) in &v.cfs {
            let files = v.files(*id);
            let t = d.transformer.as_ref().map_or("-".to_string(), CfTransformer::to_string);
            out.push_str(&format!(
                "{} id={} kind={} format={} transformer={t}",
                d.name,
                d.id,
                if d.kind == CfKind::UserFacing { "user" } else { "internal" },
                d.format
            ));
            for (l, lv) in files.levels.iter().enumerate() {
                if !lv.is_empty() {
                    out.push_str(&format!(" L{l}={}/{}B", lv.len(), files.level_bytes(l)));
                }
            }
            out.push('\n');
        }
        out
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        {
            let mut bg = self.inner.bg.lock();
            bg.shutdown = true;
        }
        self.inner.bg_cv.notify_all();
        self.inner.done_cv.notify_all();
        for t in self.threads.lock().drain(..) {
            let _ = t.join();
        }
    }
}

/// Exclusive use of one column family by a compaction or link operation.
pub(crate) struct CfSlot<'a> {
    inner: &'a Inner,
    cf: CfId,
}

impl Drop for CfSlot<'_> {
    fn drop(&mut self) {
        self.inner.bg.lock().running.remove(&self.cf);
        self.inner.bg_cv.notify_all();
        self.inner.done_cv.notify_all();
    }
}

impl Inner {
    pub fn version(&self) -> Arc<Version> {
        self.current.read().clone()
    }

    pub fn check_alive(&self) -> Result<()> {
        if self.poisoned.load(Ordering::Acquire) {
            Err(Error::Crashed)
        } else {
            Ok(())
        }
    }

    fn poison(&self) {
        self.poisoned.store(true, Ordering::Release);
        self.bg_cv.notify_all();
        self.done_cv.notify_all();
    }

    /// Returns the torn-write length if `point` fires now.
    fn fail_here(&self, point: FailPoint) -> Option<usize> {
        let mut fp = self.failpoint.lock();
        let armed = fp.as_mut()?;
        if armed.point != point {
            return None;
        }
        armed.remaining -= 1;
        if armed.remaining > 0 {
            return None;
        }
        let keep = armed.keep;
        *fp = None;
        Some(keep)
    }

    fn next_file_number(&self) -> u64 {
        self.next_file.fetch_add(1, Ordering::Relaxed)
    }

    fn acquire_cf(&self, cf: CfId) -> Result<CfSlot<'_>> {
        let mut bg = self.bg.lock();
        while bg.running.contains(&cf) {
            self.check_alive()?;
            self.done_cv.wait_for(&mut bg, Duration::from_millis(20));
        }
        bg.running.insert(cf);
        Ok(CfSlot { inner: self, cf })
    }

    fn writable_cf(&self, name: &str) -> Result<Arc<CfDescriptor>> {
        let v = self.version();
        let d = v.cf_by_name(name).ok_or_else(|| Error::UnknownColumnFamily(name.to_string()))?;
        if d.kind == CfKind::Internal {
            return Err(Error::InternalColumnFamily(name.to_string()));
        }
        Ok(d.clone())
    }

    fn has_index(&self, d: &CfDescriptor) -> bool {
        self.version().plan(d.id).is_some_and(|p| !p.index_nodes.is_empty())
    }

    fn check_indexed_values(&self, d: &CfDescriptor, row: &Row) -> Result<()> {
        let v = self.version();
        if let Some(plan) = v.plan(d.id) {
            for (col, _) in &plan.index_nodes {
                index_value_bytes(&row.values[*col])?;
            }
        }
        Ok(())
    }

    fn write(&self, cf: CfId, key: &[u8], kind: ValueKind, value: Vec<u8>) -> Result<()> {
        if key.is_empty() || key.len() > usize::from(u16::MAX) {
            return Err(Error::Schema(format!("key length {} outside 1..=65535", key.len())));
        }
        self.check_alive()?;
        self.maybe_stall()?;
        let mut w = self.write.lock();
        self.check_alive()?;
        let seq = w.last_seq + 1;
        let rec = WalRecord { seq, kind, cf_id: cf, key: key.to_vec(), value };
        if let Some(keep) = self.fail_here(FailPoint::WalAppend) {
            w.wal.append_torn(&rec, keep)?;
            self.poison();
            return Err(Error::Crashed);
        }
        w.wal.append(&rec)?;
        self.stats.bytes_written_wal.fetch_add(rec.encoded_len() as u64, Ordering::Relaxed);
        self.stats.bytes_ingested.fetch_add((rec.key.len() + rec.value.len()) as u64, Ordering::Relaxed);
        let mems = self.mems.read();
        mems.active.insert(cf, InternalKey::new(rec.key, seq, kind), rec.value);
        let full = mems.active.approximate_bytes() >= self.cfg.write_buffer_size;
        drop(mems);
        w.last_seq = seq;
        if full {
            self.switch_memtable(&mut w)?;
        }
        Ok(())
    }

    fn switch_memtable(&self, w: &mut WriteState) -> Result<()> {
        let number = self.next_file_number();
        let wal = WalWriter::create(&self.dir, number, self.cfg.wal_sync)?;
        let old = std::mem::replace(&mut w.wal, wal);
        if !self.cfg.wal_sync {
            // make the sealed segment durable before its memtable is flushed
            let mut old = old;
            old.sync()?;
        }
        let mut mems = self.mems.write();
        let prev = std::mem::replace(&mut mems.active, Arc::new(MemTable::new(number)));
        mems.imm.push_back(prev);
        drop(mems);
        self.bg_cv.notify_all();
        Ok(())
    }

    fn maybe_stall(&self) -> Result<()> {
        let start = Instant::now();
        let mut stalled = false;
        let mut slowed = false;
        loop {
            let imm = self.mems.read().imm.len();
            let l0 = if self.cfg.disable_auto_compactions { 0 } else { self.version().max_l0_count() };
            if imm + 1 >= self.cfg.max_write_buffer_number || l0 >= self.cfg.level0_stop_writes_trigger {
                stalled = true;
                let mut bg = self.bg.lock();
                if let Some(e) = &bg.error {
                    return Err(Error::Transform(e.clone()));
                }
                self.check_alive()?;
                self.done_cv.wait_for(&mut bg, Duration::from_millis(10));
                continue;
            }
            if l0 >= self.cfg.level0_slowdown_writes_trigger && !slowed {
                slowed = true;
                std::thread::sleep(Duration::from_millis(1));
                continue;
            }
            break;
        }
        if stalled || slowed {
            self.stats.write_stall_micros.fetch_add(start.elapsed().as_micros() as u64, Ordering::Relaxed);
        }
        Ok(())
    }

    fn replay_wals(&self, files: &[(u64, PathBuf)]) -> Result<()> {
        if files.is_empty() {
            return Ok(());
        }
        let v = self.version();
        let floor = v.last_sequence;
        let mem = MemTable::new(0);
        let mut max_seq = floor;
        for (_, path) in files {
            let r = wal_replay(path)?;
            if !r.clean {
                log::warn!("{}: replay stopped at byte {}", path.display(), r.valid_bytes);
            }
            for rec in r.records {
                if rec.seq <= floor {
                    continue;
                }
                if v.cf(rec.cf_id).is_none() {
                    log::warn!("{}: skipping record for unknown column family {}", path.display(), rec.cf_id);
                    continue;
                }
                max_seq = max_seq.max(rec.seq);
                mem.insert(rec.cf_id, InternalKey::new(rec.key, rec.seq, rec.kind), rec.value);
            }
        }
        if !mem.is_empty() {
            self.flush_memtable(&mem)?;
        }
        self.write.lock().last_seq = max_seq;
        for (_, path) in files {
            fs::remove_file(path)?;
        }
        manifest::sync_dir(&self.dir)?;
        Ok(())
    }

    /// Writes one L0 table per column family in `mem` and installs them.
    fn flush_memtable(&self, mem: &MemTable) -> Result<()> {
        let mut edits = Vec::new();
        let mut added = Vec::new();
        for cf in mem.column_families() {
            let entries = mem.flush_entries(cf);
            if entries.is_empty() {
                continue;
            }
            let meta = self.write_table(cf, 0, &mut entries.into_iter().map(Ok))?.remove(0);
            self.stats.bytes_written_flush.fetch_add(meta.file_bytes, Ordering::Relaxed);
            self.stats.cf(cf).bytes_written.fetch_add(meta.file_bytes, Ordering::Relaxed);
            edits.push(Edit::AddFile(meta.clone()));
            added.push(meta);
        }
        if edits.is_empty() {
            return Ok(());
        }
        if self.fail_here(FailPoint::FlushInstall).is_some() {
            self.poison();
            return Err(Error::Crashed);
        }
        edits.push(Edit::SetSeq(mem.max_seq()));
        let mut vs = self.versions.lock();
        self.install_locked(&mut vs, &edits, added, &[])?;
        self.stats.flushes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Writes `entries` as one table, or as several of at most
    /// `target_file_size_base` bytes when `level > 0`.
    fn write_table(
        &self,
        cf: CfId,
        level: usize,
        entries: &mut dyn Iterator<Item = Result<Entry>>,
    ) -> Result<Vec<SstMeta>> {
        let mut out = Vec::new();
        let mut cur: Option<(u64, SstWriter)> = None;
        let result = (|| -> Result<()> {
            for e in entries {
                let e = e?;
                if cur.is_none() {
                    let n = self.next_file_number();
                    let w = SstWriter::create(&self.dir.join(sst_file_name(n)), self.cfg.block_size, self.cfg.bloom_bits_per_key)?;
                    cur = Some((n, w));
                }
                let (_, w) = cur.as_mut().expect("writer open");
                w.add(&e)?;
                if level > 0 && w.estimated_size() >= self.cfg.target_file_size_base {
                    let (n, w) = cur.take().expect("writer open");
                    out.push(finish_table(n, cf, level, w)?);
                }
            }
            if let Some((n, w)) = cur.take() {
                out.push(finish_table(n, cf, level, w)?);
            }
            Ok(())
        })();
        if let Err(e) = result {
            if !matches!(e, Error::Crashed) {
                for m in &out {
                    let _ = fs::remove_file(self.dir.join(sst_file_name(m.file_number)));
                }
                if let Some((n, _)) = cur {
                    let _ = fs::remove_file(self.dir.join(sst_file_name(n)));
                }
            }
            return Err(e);
        }
        Ok(out)
    }

    fn install_locked(&self, vs: &mut VersionSet, edits: &[Edit], added: Vec<SstMeta>, removed: &[u64]) -> Result<()> {
        self.check_alive()?;
        let mut next = vs.state.clone();
        next.apply_group(edits).map_err(|reason| Error::Inconsistent { key: Vec::new(), reason })?;
        if let Some(keep) = self.fail_here(FailPoint::ManifestInstall) {
            vs.writer.log_group_torn(edits, keep)?;
            self.poison();
            return Err(Error::Crashed);
        }
        vs.writer.log_group(edits)?;
        vs.logged_bytes += edits.len() as u64 * 64;
        for m in added {
            vs.tables.insert(m.file_number, Arc::new(TableFile::new(&self.dir, m, self.ctx.clone())));
        }
        for n in removed {
            if let Some(t) = vs.tables.remove(n) {
                t.mark_obsolete();
            }
        }
        vs.state = next;
        let v = Arc::new(Version::build(&vs.state, &vs.tables));
        *self.current.write() = v;
        if vs.logged_bytes > MANIFEST_REWRITE_BYTES {
            vs.writer = manifest::write_snapshot(&self.dir, &vs.state)?;
            vs.logged_bytes = 0;
        }
        self.done_cv.notify_all();
        self.bg_cv.notify_all();
        Ok(())
    }

    fn flush_loop(&self) {
        loop {
            let mem = {
                let mut bg = self.bg.lock();
                loop {
                    if bg.shutdown || self.poisoned.load(Ordering::Acquire) {
                        return;
                    }
                    if let Some(m) = self.mems.read().imm.front().cloned() {
                        break m;
                    }
                    self.bg_cv.wait_for(&mut bg, Duration::from_millis(50));
                }
            };
            match self.flush_memtable(&mem) {
                Ok(()) => {
                    self.mems.write().imm.pop_front();
                    let _ = fs::remove_file(self.dir.join(crate::wal::wal_file_name(mem.wal_number())));
                }
                Err(Error::Crashed) => return,
                Err(e) => {
                    log::error!("flush failed: {e}");
                    self.bg.lock().error = Some(format!("flush failed: {e}"));
                    std::thread::sleep(Duration::from_millis(100));
                }
            }
            self.done_cv.notify_all();
            self.bg_cv.notify_all();
        }
    }

    fn compaction_loop(&self) {
        loop {
            let job = {
                let mut bg = self.bg.lock();
                loop {
                    if bg.shutdown || self.poisoned.load(Ordering::Acquire) {
                        return;
                    }
                    if !self.cfg.disable_auto_compactions && bg.error.is_none() {
                        if let Some(job) = self.pick_auto(&mut bg) {
                            bg.running.insert(job.cf);
                            break job;
                        }
                    }
                    self.bg_cv.wait_for(&mut bg, Duration::from_millis(50));
                }
            };
            let slot = CfSlot { inner: self, cf: job.cf };
            match self.run_job(job) {
                Ok(()) => {}
                Err(Error::Crashed) => return,
                Err(e) => {
                    log::error!("compaction failed: {e}");
                    self.bg.lock().error = Some(format!("compaction failed: {e}"));
                }
            }
            drop(slot);
        }
    }

    fn pick_auto(&self, bg: &mut BgState) -> Option<CompactionJob> {
        let v = self.version();
        let mut best: Option<(f64, CfId)> = None;
        for &cf in v.cfs.keys() {
            if bg.running.contains(&cf) {
                continue;
            }
            let s = compaction::score(&v, &self.cfg, cf);
            if s >= 1.0 && best.map_or(true, |(b, _)| s > b) {
                best = Some((s, cf));
            }
        }
        let (_, cf) = best?;
        compaction::pick(&v, &self.cfg, cf, &mut bg.cursors, false)
    }

    fn job_sources(&self, job: &CompactionJob) -> Result<Vec<EntrySource<'static>>> {
        let mut sources: Vec<EntrySource<'static>> = Vec::new();
        for (_, f) in &job.inputs {
            let r = f.reader()?;
            sources.push(Box::new(r.scan_uncached()));
        }
        Ok(sources)
    }

    pub(crate) fn run_job(&self, job: CompactionJob) -> Result<()> {
        self.check_alive()?;
        let mut edits: Vec<Edit> = job
            .inputs
            .iter()
            .map(|(l, f)| Edit::DeleteFile { cf: job.cf, level: *l as u8, file_number: f.meta.file_number })
            .collect();
        if let CompactionMode::Move(target) = job.mode {
            let (_, f) = &job.inputs[0];
            edits.push(Edit::AddFile(SstMeta { level: target as u8, ..f.meta.clone() }));
            self.stats.jobs_move.fetch_add(1, Ordering::Relaxed);
            let mut vs = self.versions.lock();
            return self.install_locked(&mut vs, &edits, Vec::new(), &[]);
        }
        self.stats.bytes_read_compaction.fetch_add(job.input_bytes(), Ordering::Relaxed);
        let removed: Vec<u64> = job.inputs.iter().map(|(_, f)| f.meta.file_number).collect();
        let mut added = Vec::new();
        match job.mode {
            CompactionMode::TierToDestinations => {
                let handle = self
                    .transformers
                    .read()
                    .get(&job.cf)
                    .cloned()
                    .ok_or_else(|| Error::InvalidTransformer(format!("no transformer registered for cf {}", job.cf)))?;
                let mut session = handle.prepare()?;
                for e in MergeIter::new(self.job_sources(&job)?, false) {
                    session.transform(&e?)?;
                }
                let outputs = session.retrieve();
                for (dest, entries) in outputs.outputs {
                    if entries.is_empty() {
                        continue;
                    }
                    if let Some(keep) = self.fail_here(FailPoint::CompactionOutput) {
                        self.write_partial(dest, &entries, keep);
                        self.poison();
                        return Err(Error::Crashed);
                    }
                    let metas = self.write_table(dest, 0, &mut entries.into_iter().map(Ok))?;
                    added.extend(metas);
                }
                self.stats.jobs_tier.fetch_add(1, Ordering::Relaxed);
            }
            CompactionMode::LevelWithin(target) => {
                let mut merged = MergeIter::new(self.job_sources(&job)?, job.drop_tombstones);
                if let Some(keep) = self.fail_here(FailPoint::CompactionOutput) {
                    let head: Vec<Entry> = merged.by_ref().take(64).collect::<Result<_>>()?;
                    self.write_partial(job.cf, &head, keep);
                    self.poison();
                    return Err(Error::Crashed);
                }
                added = self.write_table(job.cf, target, &mut merged)?;
                self.stats.jobs_level.fetch_add(1, Ordering::Relaxed);
            }
            CompactionMode::Move(_) => unreachable!("handled above"),
        }
        for m in &added {
            self.stats.bytes_written_compaction.fetch_add(m.file_bytes, Ordering::Relaxed);
            self.stats.cf(m.cf_id).bytes_written.fetch_add(m.file_bytes, Ordering::Relaxed);
        }
        edits.extend(added.iter().cloned().map(Edit::AddFile));
        let mut vs = self.versions.lock();
        let new_files: Vec<u64> = added.iter().map(|m| m.file_number).collect();
        if let Err(e) = self.install_locked(&mut vs, &edits, added, &removed) {
            if !matches!(e, Error::Crashed) {
                for n in new_files {
                    let _ = fs::remove_file(self.dir.join(sst_file_name(n)));
                }
            }
            return Err(e);
        }
        Ok(())
    }

    /// Leaves a torn output table behind, as a crash mid-write would.
    fn write_partial(&self, cf: CfId, entries: &[Entry], keep: usize) {
        let n = self.next_file_number();
        let path = self.dir.join(sst_file_name(n));
        if let Ok(mut w) = SstWriter::create(&path, self.cfg.block_size, self.cfg.bloom_bits_per_key) {
            for e in entries.iter().take(keep.max(1)) {
                let _ = w.add(e);
            }
            // dropped without finish: no index, filter or footer
        }
        log::debug!("simulated crash while writing table {n} of cf {cf}");
    }
}

fn finish_table(n: u64, cf: CfId, level: usize, w: SstWriter) -> Result<SstMeta> {
    let info = w.finish()?;
    Ok(SstMeta {
        file_number: n,
        cf_id: cf,
        level: level as u8,
        smallest: info.smallest,
        largest: info.largest,
        file_bytes: info.file_bytes,
        entry_count: info.entry_count,
    })
}
