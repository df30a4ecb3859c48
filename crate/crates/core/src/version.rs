//! Immutable snapshots of the live file set.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use crate::cf::{CfDescriptor, CfRole};
use crate::error::Result;
use crate::manifest::ManifestState;
use crate::query::PendingIndexes;
use crate::sst::{sst_file_name, ReadContext, SstMeta, SstReader};
use crate::types::{CfId, SeqNo};

/// A live table file. The file is removed from disk when the last
/// reference to an obsolete table goes away.
pub struct TableFile {
    pub meta: SstMeta,
    path: PathBuf,
    ctx: ReadContext,
    reader: OnceLock<Arc<SstReader>>,
    obsolete: AtomicBool,
    pub(crate) pending: PendingIndexes,
}

impl TableFile {
    pub fn new(dir: &Path, meta: SstMeta, ctx: ReadContext) -> Self {
        let path = dir.join(sst_file_name(meta.file_number));
        TableFile { meta, path, ctx, reader: OnceLock::new(), obsolete: AtomicBool::new(false), pending: PendingIndexes::default() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn reader(&self) -> Result<Arc<SstReader>> {
        if let Some(r) = self.reader.get() {
            return Ok(r.clone());
        }
        let r = Arc::new(SstReader::open(&self.path, self.meta.file_number, self.meta.cf_id, self.ctx.clone())?);
        Ok(self.reader.get_or_init(|| r).clone())
    }

    pub fn mark_obsolete(&self) {
        self.obsolete.store(true, Ordering::Release);
    }
}

impl Drop for TableFile {
    fn drop(&mut self) {
        if self.obsolete.load(Ordering::Acquire) {
            if let Some(c) = &self.ctx.cache {
                c.evict_file(self.meta.file_number);
            }
            // the reader holds the fd; the unlink works either way on unix
            let _ = std::fs::remove_file(&self.path);
        }
    }
}

/// Files of one column family. Level 0 is ordered newest first; deeper
/// levels are ordered by smallest key.
#[derive(Clone, Default)]
pub struct CfFiles {
    pub levels: Vec<Vec<Arc<TableFile>>>,
}

impl CfFiles {
    pub fn level(&self, l: usize) -> &[Arc<TableFile>] {
        self.levels.get(l).map_or(&[], Vec::as_slice)
    }

    pub fn level_bytes(&self, l: usize) -> u64 {
        self.level(l).iter().map(|f| f.meta.file_bytes).sum()
    }

    pub fn file_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Deepest non-empty level, if any.
    pub fn deepest_level(&self) -> Option<usize> {
        self.levels.iter().rposition(|l| !l.is_empty())
    }
}

/// An immutable view of every column family and its files.
#[derive(Clone, Default)]
pub struct Version {
    pub cfs: BTreeMap<CfId, Arc<CfDescriptor>>,
    pub files: BTreeMap<CfId, CfFiles>,
    pub last_sequence: SeqNo,
    by_name: BTreeMap<String, CfId>,
    plans: BTreeMap<CfId, Arc<LogicalPlan>>,
}

pub struct PlanNode {
    pub desc: Arc<CfDescriptor>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Root columns this node's records carry (index nodes: the indexed column).
    pub columns: Range<usize>,
}

impl PlanNode {
    pub fn is_index(&self) -> bool {
        matches!(self.desc.role, CfRole::Index { .. })
    }
}

/// The tree of column families behind one user-facing column family.
pub struct LogicalPlan {
    /// Breadth-first; `nodes[0]` is the user-facing root.
    pub nodes: Vec<PlanNode>,
    /// Terminal data nodes, ordered by their first column.
    pub data_leaves: Vec<usize>,
    /// `(root column, node)` for each secondary index.
    pub index_nodes: Vec<(usize, usize)>,
}

impl LogicalPlan {
    fn build(root: &Arc<CfDescriptor>, cfs: &BTreeMap<CfId, Arc<CfDescriptor>>) -> LogicalPlan {
        let mut nodes = vec![PlanNode { desc: root.clone(), parent: None, children: Vec::new(), columns: 0..root.schema.len() }];
        let mut i = 0;
        while i < nodes.len() {
            let dests = nodes[i].desc.destinations.clone();
            for d in dests {
                let Some(desc) = cfs.get(&d) else { continue };
                let columns = match &desc.role {
                    CfRole::Data { columns, .. } => columns.clone(),
                    CfRole::Index { column } => *column..*column + 1,
                };
                let idx = nodes.len();
                nodes.push(PlanNode { desc: desc.clone(), parent: Some(i), children: Vec::new(), columns });
                nodes[i].children.push(idx);
            }
            i += 1;
        }
        let mut data_leaves: Vec<usize> =
            (0..nodes.len()).filter(|&n| !nodes[n].is_index() && !nodes[n].desc.has_transformer()).collect();
        data_leaves.sort_by_key(|&n| nodes[n].columns.start);
        let index_nodes = (0..nodes.len()).filter(|&n| nodes[n].is_index()).map(|n| (nodes[n].columns.start, n)).collect();
        LogicalPlan { nodes, data_leaves, index_nodes }
    }

    /// Node indexes from the root down to `node`.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut p = vec![node];
        let mut cur = node;
        while let Some(parent) = self.nodes[cur].parent {
            p.push(parent);
            cur = parent;
        }
        p.reverse();
        p
    }

    pub fn leaf_for_column(&self, column: usize) -> Option<usize> {
        self.data_leaves.iter().copied().find(|&n| self.nodes[n].columns.contains(&column))
    }

    pub fn index_for_column(&self, column: usize) -> Option<usize> {
        self.index_nodes.iter().find(|(c, _)| *c == column).map(|(_, n)| *n)
    }

    pub fn root(&self) -> &Arc<CfDescriptor> {
        &self.nodes[0].desc
    }
}

impl Version {
    /// Builds the version for `state`, reusing table handles from `tables`.
    pub fn build(state: &ManifestState, tables: &BTreeMap<u64, Arc<TableFile>>) -> Version {
        let cfs = state.cfs.iter().map(|(id, d)| (*id, Arc::new(d.clone()))).collect();
        let mut files = BTreeMap::new();
        for (cf, levels) in &state.files {
            let mut out = CfFiles { levels: Vec::with_capacity(levels.len()) };
            for (l, metas) in levels.iter().enumerate() {
                let mut lv: Vec<Arc<TableFile>> =
                    metas.iter().map(|m| tables.get(&m.file_number).expect("table registered").clone()).collect();
                if l == 0 {
                    // file numbers grow with recency within a column family's L0
                    lv.sort_by(|a, b| b.meta.file_number.cmp(&a.meta.file_number));
                } else {
                    lv.sort_by(|a, b| a.meta.smallest.user_key.cmp(&b.meta.smallest.user_key));
                }
                out.levels.push(lv);
            }
            files.insert(*cf, out);
        }
        let by_name = state.cfs.values().map(|d| (d.name.clone(), d.id)).collect();
        let cfs: BTreeMap<CfId, Arc<CfDescriptor>> = cfs;
        let plans = cfs
            .values()
            .filter(|d| d.parent.is_none())
            .map(|d| (d.id, Arc::new(LogicalPlan::build(d, &cfs))))
            .collect();
        Version { cfs, files, last_sequence: state.last_sequence, by_name, plans }
    }

    pub fn cf(&self, id: CfId) -> Option<&Arc<CfDescriptor>> {
        self.cfs.get(&id)
    }

    pub fn cf_by_name(&self, name: &str) -> Option<&Arc<CfDescriptor>> {
        self.by_name.get(name).and_then(|id| self.cfs.get(id))
    }

    /// The logical plan of the user-facing column family `root`.
    pub fn plan(&self, root: CfId) -> Option<&Arc<LogicalPlan>> {
        self.plans.get(&root)
    }

    pub fn files(&self, id: CfId) -> &CfFiles {
        static EMPTY: OnceLock<CfFiles> = OnceLock::new();
        self.files.get(&id).unwrap_or_else(|| EMPTY.get_or_init(CfFiles::default))
    }

    pub fn l0_count(&self, id: CfId) -> usize {
        self.files(id).level(0).len()
    }

    pub fn max_l0_count(&self) -> usize {
        self.files.values().map(|f| f.level(0).len()).max().unwrap_or(0)
    }

    /// Column families of the logical column family rooted at `root`.
    pub fn members(&self, root: CfId) -> Vec<Arc<CfDescriptor>> {
        self.cfs.values().filter(|d| d.root == root).cloned().collect()
    }

    /// Checks the tierveling invariant: transformer CFs hold files only in
    /// level 0, and every level >= 1 of other CFs is one sorted run.
    pub fn check_tierveling(&self) -> std::result::Result<(), String> {
        for (id, files) in &self.files {
            let d = &self.cfs[id];
            for (l, lv) in files.levels.iter().enumerate().skip(1) {
                if d.has_transformer() && !lv.is_empty() {
                    return Err(format!("`{}` has a transformer but {} files in L{l}", d.name, lv.len()));
                }
                for w in lv.windows(2) {
                    if w[0].meta.largest.user_key >= w[1].meta.smallest.user_key {
                        return Err(format!(
                            "`{}` L{l}: files {} and {} overlap",
                            d.name, w[0].meta.file_number, w[1].meta.file_number
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
