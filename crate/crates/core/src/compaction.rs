//! Compaction picking and the k-way merge used by every job.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use crate::config::EngineConfig;
use crate::error::Result;
use crate::types::{CfId, Entry};
use crate::version::{TableFile, Version};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompactionMode {
    /// Move every L0 run of a transformer CF into its destinations' L0.
    TierToDestinations,
    /// Merge into `target` level of the same CF.
    LevelWithin(usize),
    /// Relink a single file one level down; nothing overlaps it there.
    Move(usize),
}

pub struct CompactionJob {
    pub cf: CfId,
    pub mode: CompactionMode,
    /// Input files with their levels. L0 inputs come newest first.
    pub inputs: Vec<(usize, Arc<TableFile>)>,
    /// Whether tombstones can be dropped (target is the bottom of a terminal CF).
    pub drop_tombstones: bool,
}

impl CompactionJob {
    pub fn input_bytes(&self) -> u64 {
        self.inputs.iter().map(|(_, f)| f.meta.file_bytes).sum()
    }
}

/// Per column family and level, the largest key of the last file picked,
/// so that successive picks rotate through the level.
pub type CompactCursors = HashMap<(CfId, usize), Vec<u8>>;

/// How urgently `cf` needs a compaction; values >= 1 mean a job is due.
pub fn score(v: &Version, cfg: &EngineConfig, cf: CfId) -> f64 {
    let Some(d) = v.cf(cf) else { return 0.0 };
    let files = v.files(cf);
    let l0 = files.level(0).len() as f64 / cfg.level0_file_num_compaction_trigger as f64;
    if d.has_transformer() {
        return l0;
    }
    (1..cfg.num_levels.saturating_sub(1))
        .map(|l| files.level_bytes(l) as f64 / cfg.max_bytes_for_level(l) as f64)
        .fold(l0, f64::max)
}

/// Chooses the next job for `cf`, if one is due. With `force`, any L0 run
/// (or, for plain CFs, any level above the deepest) qualifies.
pub fn pick(v: &Version, cfg: &EngineConfig, cf: CfId, cursors: &mut CompactCursors, force: bool) -> Option<CompactionJob> {
    let d = v.cf(cf)?;
    let files = v.files(cf);
    let l0 = files.level(0);
    let z = if force { 1 } else { cfg.level0_file_num_compaction_trigger };
    if d.has_transformer() {
        if l0.len() >= z {
            return Some(CompactionJob {
                cf,
                mode: CompactionMode::TierToDestinations,
                inputs: l0.iter().map(|f| (0, f.clone())).collect(),
                drop_tombstones: false,
            });
        }
        return None;
    }
    let last = cfg.num_levels - 1;
    let bottom_after = |target: usize| files.levels.iter().skip(target + 1).all(Vec::is_empty);
    if l0.len() >= z {
        let lo = l0.iter().map(|f| &f.meta.smallest.user_key).min()?;
        let hi = l0.iter().map(|f| &f.meta.largest.user_key).max()?;
        let mut inputs: Vec<(usize, Arc<TableFile>)> = l0.iter().map(|f| (0, f.clone())).collect();
        inputs.extend(files.level(1).iter().filter(|f| f.meta.overlaps(lo, hi)).map(|f| (1, f.clone())));
        let mode = if inputs.len() == 1 { CompactionMode::Move(1) } else { CompactionMode::LevelWithin(1) };
        return Some(CompactionJob {
            cf,
            mode,
            inputs,
            drop_tombstones: bottom_after(1),
        });
    }
    for l in 1..last {
        let lv = files.level(l);
        if lv.is_empty() {
            continue;
        }
        let due = if force {
            !bottom_after(l)
        } else {
            files.level_bytes(l) > cfg.max_bytes_for_level(l)
        };
        if !due {
            continue;
        }
        let cursor = cursors.get(&(cf, l));
        let f = cursor
            .and_then(|c| lv.iter().find(|f| f.meta.smallest.user_key > *c))
            .unwrap_or(&lv[0])
            .clone();
        cursors.insert((cf, l), f.meta.largest.user_key.clone());
        let (lo, hi) = (&f.meta.smallest.user_key, &f.meta.largest.user_key);
        let mut inputs = vec![(l, f.clone())];
        inputs.extend(files.level(l + 1).iter().filter(|g| g.meta.overlaps(lo, hi)).map(|g| (l + 1, g.clone())));
        let mode = if inputs.len() == 1 { CompactionMode::Move(l + 1) } else { CompactionMode::LevelWithin(l + 1) };
        return Some(CompactionJob {
            cf,
            mode,
            inputs,
            drop_tombstones: bottom_after(l + 1),
        });
    }
    None
}

pub type EntrySource<'a> = Box<dyn Iterator<Item = Result<Entry>> + Send + 'a>;

struct HeapItem {
    entry: Entry,
    src: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    // reversed: BinaryHeap is a max-heap and we want the smallest internal key
    fn cmp(&self, other: &Self) -> Ordering {
        other.entry.key.cmp(&self.entry.key).then_with(|| other.src.cmp(&self.src))
    }
}

/// Merges individually sorted sources, keeping only the newest entry per
/// user key. With `drop_tombstones`, surviving deletes are not emitted.
pub struct MergeIter<'a> {
    sources: Vec<EntrySource<'a>>,
    heap: BinaryHeap<HeapItem>,
    last_key: Option<Vec<u8>>,
    drop_tombstones: bool,
    started: bool,
    failed: bool,
}

impl<'a> MergeIter<'a> {
    pub fn new(sources: Vec<EntrySource<'a>>, drop_tombstones: bool) -> Self {
        MergeIter { sources, heap: BinaryHeap::new(), last_key: None, drop_tombstones, started: false, failed: false }
    }

    fn pull(&mut self, src: usize) -> Result<()> {
        if let Some(r) = self.sources[src].next() {
            self.heap.push(HeapItem { entry: r?, src });
        }
        Ok(())
    }

    fn step(&mut self) -> Result<Option<Entry>> {
        if !self.started {
            self.started = true;
            for i in 0..self.sources.len() {
                self.pull(i)?;
            }
        }
        while let Some(HeapItem { entry, src }) = self.heap.pop() {
            self.pull(src)?;
            if self.last_key.as_deref() == Some(entry.key.user_key.as_slice()) {
                continue;
            }
            self.last_key = Some(entry.key.user_key.clone());
            if self.drop_tombstones && entry.is_delete() {
                continue;
            }
            return Ok(Some(entry));
        }
        Ok(None)
    }
}

impl Iterator for MergeIter<'_> {
    type Item = Result<Entry>;

    fn next(&mut self) -> Option<Result<Entry>> {
        if self.failed {
            return None;
        }
        match self.step() {
            Ok(e) => e.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

pub fn vec_source<'a>(v: Vec<Entry>) -> EntrySource<'a> {
    Box::new(v.into_iter().map(Ok))
}
