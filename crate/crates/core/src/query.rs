//! The read APIs. Every read runs against a snapshot of the memtables and
//! the current version; data upstream in a column family tree is newer than
//! anything below it, so the shallowest hit for a key wins.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::codec;
use crate::compaction::{vec_source, EntrySource, MergeIter};
use crate::db::Engine;
use crate::error::{Error, Result};
use crate::memtable::MemTable;
use crate::transform::{index_key, index_value_bytes};
use crate::types::{CfId, Entry, Row, Value};
use crate::version::{LogicalPlan, Version};

/// One row returned by an index read.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexHit {
    pub key: Vec<u8>,
    /// The full row, or just the projected column.
    pub row: Row,
}

/// Index keys (`value ‖ 0 ‖ key`, sorted) that the rows of one immutable
/// source would produce, per `(cf, column)`. Built on first index read and
/// dropped with the source, so not-yet-indexed data is not rescanned.
#[derive(Default)]
pub(crate) struct PendingIndexes(Mutex<HashMap<(CfId, usize), Arc<Vec<Vec<u8>>>>>);

impl PendingIndexes {
    fn get_or_build(&self, key: (CfId, usize), build: impl FnOnce() -> Result<Vec<Vec<u8>>>) -> Result<Arc<Vec<Vec<u8>>>> {
        if let Some(p) = self.0.lock().get(&key) {
            return Ok(p.clone());
        }
        let built = Arc::new(build()?);
        Ok(self.0.lock().entry(key).or_insert(built).clone())
    }
}

/// Index keys for every put in `entries`, all versions; callers verify.
fn pending_keys(entries: impl Iterator<Item = Result<Entry>>, node: &crate::version::PlanNode, column: usize) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    for e in entries {
        let e = e?;
        if e.is_delete() {
            continue;
        }
        let v = codec::decode_column(&node.desc.schema, &e.value, node.desc.format, column - node.columns.start)?;
        out.push(index_key(&v, &e.key.user_key)?);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub(crate) struct ReadView {
    /// Newest first.
    mems: Vec<Arc<MemTable>>,
    v: Arc<Version>,
}

impl ReadView {
    fn new(engine: &Engine) -> ReadView {
        // memtables before the version: a flush installs its tables before
        // dropping the memtable, so nothing can fall between the two
        let mems = {
            let m = engine.inner.mems.read();
            let mut v = vec![m.active.clone()];
            v.extend(m.imm.iter().rev().cloned());
            v
        };
        ReadView { mems, v: engine.inner.version() }
    }

    fn plan(&self, cf: &str) -> Result<Arc<LogicalPlan>> {
        let d = self.v.cf_by_name(cf).ok_or_else(|| Error::UnknownColumnFamily(cf.to_string()))?;
        if d.parent.is_some() {
            return Err(Error::InternalColumnFamily(cf.to_string()));
        }
        Ok(self.v.plan(d.id).expect("plan for every root").clone())
    }

    /// Newest entry for `key` held by column family `cf` itself.
    fn node_get(&self, cf: CfId, is_root: bool, key: &[u8]) -> Result<Option<Entry>> {
        if is_root {
            for m in &self.mems {
                if let Some(e) = m.get(cf, key) {
                    return Ok(Some(e));
                }
            }
        }
        let files = self.v.files(cf);
        for f in files.level(0) {
            if key < f.meta.smallest.user_key.as_slice() || key > f.meta.largest.user_key.as_slice() {
                continue;
            }
            if let Some(e) = f.reader()?.get(key)? {
                return Ok(Some(e));
            }
        }
        for lv in files.levels.iter().skip(1) {
            let i = lv.partition_point(|f| f.meta.largest.user_key.as_slice() < key);
            if let Some(f) = lv.get(i) {
                if f.meta.smallest.user_key.as_slice() <= key {
                    if let Some(e) = f.reader()?.get(key)? {
                        return Ok(Some(e));
                    }
                }
            }
        }
        Ok(None)
    }

    /// Sorted sources covering `[lo, hi)` of `cf`, all versions.
    fn node_sources(&self, cf: CfId, is_root: bool, lo: Option<&[u8]>, hi: Option<&[u8]>) -> Result<Vec<EntrySource<'static>>> {
        let mut out = Vec::new();
        if is_root {
            for m in &self.mems {
                out.push(vec_source(m.range(cf, lo, hi)));
            }
        }
        let in_range = |s: &[u8], l: &[u8]| lo.map_or(true, |lo| l >= lo) && hi.map_or(true, |hi| s < hi);
        let files = self.v.files(cf);
        for f in files.level(0) {
            if in_range(&f.meta.smallest.user_key, &f.meta.largest.user_key) {
                out.push(Box::new(f.reader()?.iter(lo, hi)));
            }
        }
        for lv in files.levels.iter().skip(1) {
            let picked: Vec<_> =
                lv.iter().filter(|f| in_range(&f.meta.smallest.user_key, &f.meta.largest.user_key)).cloned().collect();
            if picked.is_empty() {
                continue;
            }
            let (lo, hi) = (lo.map(<[u8]>::to_vec), hi.map(<[u8]>::to_vec));
            out.push(Box::new(picked.into_iter().flat_map(move |f| -> EntrySource<'static> {
                match f.reader() {
                    Ok(r) => Box::new(r.iter(lo.as_deref(), hi.as_deref())),
                    Err(e) => Box::new(std::iter::once(Err(e))),
                }
            })));
        }
        Ok(out)
    }

    /// For each leaf, the node resolving `key` and its entry.
    fn resolve_point(&self, plan: &LogicalPlan, leaves: &[usize], key: &[u8]) -> Result<Vec<(usize, Option<Entry>)>> {
        let mut memo: HashMap<usize, Option<Entry>> = HashMap::new();
        let mut out = Vec::with_capacity(leaves.len());
        for &leaf in leaves {
            let mut hit = (leaf, None);
            for n in plan.path(leaf) {
                if !memo.contains_key(&n) {
                    let node = &plan.nodes[n];
                    let e = self.node_get(node.desc.id, node.parent.is_none(), key)?;
                    memo.insert(n, e);
                }
                if let Some(e) = &memo[&n] {
                    hit = (n, Some(e.clone()));
                    break;
                }
            }
            out.push(hit);
        }
        Ok(out)
    }

    fn point_full(&self, plan: &LogicalPlan, key: &[u8]) -> Result<Option<Row>> {
        let hits = self.resolve_point(plan, &plan.data_leaves, key)?;
        assemble(plan, key, &hits)
    }

    fn range_walk(
        &self,
        plan: &LogicalPlan,
        leaves: &[usize],
        lo: &[u8],
        hi: &[u8],
        mut emit: impl FnMut(&[u8], &[(usize, Option<Entry>)]) -> Result<()>,
    ) -> Result<()> {
        let mut nodes: Vec<usize> = leaves.iter().flat_map(|&l| plan.path(l)).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let mut walk = NodeMerge::new(
            nodes
                .iter()
                .map(|&n| {
                    let node = &plan.nodes[n];
                    Ok((n, MergeIter::new(self.node_sources(node.desc.id, node.parent.is_none(), Some(lo), Some(hi))?, false)))
                })
                .collect::<Result<Vec<_>>>()?,
        )?;
        let paths: Vec<Vec<usize>> = leaves.iter().map(|&l| plan.path(l)).collect();
        let mut hits = Vec::with_capacity(leaves.len());
        while let Some((key, at)) = walk.next_key()? {
            hits.clear();
            for (i, path) in paths.iter().enumerate() {
                let found = path.iter().find_map(|n| at.iter().find(|(m, _)| m == n));
                hits.push(match found {
                    Some((n, e)) => (*n, Some(e.clone())),
                    None => (leaves[i], None),
                });
            }
            emit(&key, &hits)?;
        }
        Ok(())
    }

    fn index_candidates(&self, plan: &LogicalPlan, column: usize, lo: &[u8], hi: &[u8]) -> Result<BTreeSet<Vec<u8>>> {
        let idx = plan.index_for_column(column).expect("checked by caller");
        let mut out = BTreeSet::new();
        let inode = &plan.nodes[idx];
        for e in MergeIter::new(self.node_sources(inode.desc.id, false, Some(lo), Some(hi))?, true) {
            let e = e?;
            if let Some(p) = e.key.user_key.iter().position(|&b| b == 0) {
                out.insert(e.key.user_key[p + 1..].to_vec());
            }
        }
        // rows still upstream of the augment step are not indexed yet
        for n in plan.path(idx).into_iter().filter(|&n| n != idx) {
            let node = &plan.nodes[n];
            if !node.columns.contains(&column) {
                continue;
            }
            let id = node.desc.id;
            let mut lists = Vec::new();
            if node.parent.is_none() {
                for (i, m) in self.mems.iter().enumerate() {
                    let build = || pending_keys(m.range(id, None, None).into_iter().map(Ok), node, column);
                    // the active memtable still changes
                    lists.push(if i == 0 { Arc::new(build()?) } else { m.pending.get_or_build((id, column), build)? });
                }
            }
            for f in self.v.files(id).levels.iter().flatten() {
                lists.push(f.pending.get_or_build((id, column), || pending_keys(f.reader()?.iter(None, None), node, column))?);
            }
            for l in lists {
                let a = l.partition_point(|k| k.as_slice() < lo);
                let b = l.partition_point(|k| k.as_slice() < hi);
                for k in &l[a..b] {
                    let p = k.iter().position(|&b| b == 0).expect("index keys hold a separator");
                    out.insert(k[p + 1..].to_vec());
                }
            }
        }
        Ok(out)
    }
}

/// Merges the per-node streams of several nodes, yielding each key with the
/// nodes that hold it.
struct NodeMerge {
    iters: Vec<(usize, MergeIter<'static>)>,
    heads: Vec<Option<Entry>>,
}

impl NodeMerge {
    fn new(mut iters: Vec<(usize, MergeIter<'static>)>) -> Result<NodeMerge> {
        let heads = iters.iter_mut().map(|(_, it)| it.next().transpose()).collect::<Result<_>>()?;
        Ok(NodeMerge { iters, heads })
    }

    fn next_key(&mut self) -> Result<Option<(Vec<u8>, Vec<(usize, Entry)>)>> {
        let Some(key) = self.heads.iter().flatten().map(|e| &e.key.user_key).min().cloned() else {
            return Ok(None);
        };
        let mut at = Vec::new();
        for (i, head) in self.heads.iter_mut().enumerate() {
            if head.as_ref().is_some_and(|e| e.key.user_key == key) {
                let e = head.take().expect("head present");
                at.push((self.iters[i].0, e));
                *head = self.iters[i].1.next().transpose()?;
            }
        }
        Ok(Some((key, at)))
    }
}

/// Column merge: rebuilds the root row from the entries resolving each leaf.
fn assemble(plan: &LogicalPlan, key: &[u8], hits: &[(usize, Option<Entry>)]) -> Result<Option<Row>> {
    let live = hits.iter().filter(|(_, e)| e.as_ref().is_some_and(|e| !e.is_delete())).count();
    if live == 0 {
        return Ok(None);
    }
    if live != hits.len() {
        return Err(Error::Inconsistent { key: key.to_vec(), reason: format!("{live} of {} column groups present", hits.len()) });
    }
    let seq = hits[0].1.as_ref().expect("live").key.seq;
    let mut decoded: HashMap<usize, Row> = HashMap::new();
    let mut values = Vec::with_capacity(plan.nodes[0].columns.len());
    for (&leaf, (n, e)) in plan.data_leaves.iter().zip(hits) {
        let e = e.as_ref().expect("live");
        if e.key.seq != seq {
            return Err(Error::Inconsistent {
                key: key.to_vec(),
                reason: format!("column groups disagree on version ({} vs {seq})", e.key.seq),
            });
        }
        let node = &plan.nodes[*n];
        if !decoded.contains_key(n) {
            decoded.insert(*n, codec::decode(node.desc.format, &node.desc.schema, &e.value)?);
        }
        let row = &decoded[n];
        let cols = &plan.nodes[leaf].columns;
        let off = node.columns.start;
        values.extend_from_slice(&row.values[cols.start - off..cols.end - off]);
    }
    Ok(Some(Row::new(values)))
}

fn column_value(plan: &LogicalPlan, column: usize, hit: &(usize, Option<Entry>)) -> Result<Option<Value>> {
    match hit {
        (n, Some(e)) if !e.is_delete() => {
            let node = &plan.nodes[*n];
            codec::decode_column(&node.desc.schema, &e.value, node.desc.format, column - node.columns.start).map(Some)
        }
        _ => Ok(None),
    }
}

fn column_index(plan: &LogicalPlan, column: &str) -> Result<usize> {
    plan.root().schema.index_of(column).ok_or_else(|| Error::UnknownColumn(column.to_string()))
}

fn check_range(lo: &[u8], hi: &[u8]) -> bool {
    lo < hi
}

impl Engine {
    /// The newest version of `key`, reassembled from its column groups.
    pub fn read_point_full(&self, cf: &str, key: &[u8]) -> Result<Option<Row>> {
        let view = ReadView::new(self);
        let plan = view.plan(cf)?;
        view.point_full(&plan, key)
    }

    /// One column of `key`, reading only the column family chain that owns it.
    pub fn read_point_column(&self, cf: &str, key: &[u8], column: &str) -> Result<Option<Value>> {
        let view = ReadView::new(self);
        let plan = view.plan(cf)?;
        let col = column_index(&plan, column)?;
        let leaf = plan.leaf_for_column(col).expect("leaves cover every column");
        let hits = view.resolve_point(&plan, &[leaf], key)?;
        column_value(&plan, col, &hits[0])
    }

    /// Live rows with keys in `[lo, hi)`, ascending.
    pub fn read_range_full(&self, cf: &str, lo: &[u8], hi: &[u8]) -> Result<Vec<(Vec<u8>, Row)>> {
        let view = ReadView::new(self);
        let plan = view.plan(cf)?;
        let mut out = Vec::new();
        if !check_range(lo, hi) {
            return Ok(out);
        }
        view.range_walk(&plan, &plan.data_leaves, lo, hi, |k, hits| {
            if let Some(row) = assemble(&plan, k, hits)? {
                out.push((k.to_vec(), row));
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// One column of every live row with a key in `[lo, hi)`.
    pub fn read_range_column(&self, cf: &str, lo: &[u8], hi: &[u8], column: &str) -> Result<Vec<(Vec<u8>, Value)>> {
        let view = ReadView::new(self);
        let plan = view.plan(cf)?;
        let col = column_index(&plan, column)?;
        let leaf = plan.leaf_for_column(col).expect("leaves cover every column");
        let mut out = Vec::new();
        if !check_range(lo, hi) {
            return Ok(out);
        }
        view.range_walk(&plan, &[leaf], lo, hi, |k, hits| {
            if let Some(v) = column_value(&plan, col, &hits[0])? {
                out.push((k.to_vec(), v));
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Live `(key, encoded record)` pairs held by one column family itself,
    /// internal ones included. Data still upstream of it is not visible here.
    pub fn scan_cf(&self, cf: &str) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let view = ReadView::new(self);
        let d = view.v.cf_by_name(cf).ok_or_else(|| Error::UnknownColumnFamily(cf.to_string()))?;
        let mut out = Vec::new();
        for e in MergeIter::new(view.node_sources(d.id, d.parent.is_none(), None, None)?, true) {
            let e = e?;
            out.push((e.key.user_key, e.value));
        }
        Ok(out)
    }

    /// Rows whose `index_column` equals `value`, through the secondary index.
    /// With `project`, each hit carries only that column.
    pub fn read_index_point(&self, cf: &str, index_column: &str, value: &Value, project: Option<&str>) -> Result<Vec<IndexHit>> {
        let vb = index_value_bytes(value)?;
        let mut lo = vb.clone();
        lo.push(0);
        let mut hi = vb.clone();
        hi.push(1);
        self.index_read(cf, index_column, project, &lo, &hi, &|b| b == vb.as_slice())
    }

    /// Rows whose `index_column` lies in `[lo, hi)` under index key order
    /// (numeric for u64 columns, bytewise for strings).
    pub fn read_index_range(&self, cf: &str, index_column: &str, lo: &Value, hi: &Value, project: Option<&str>) -> Result<Vec<IndexHit>> {
        let (lb, hb) = (index_value_bytes(lo)?, index_value_bytes(hi)?);
        let (mut lk, mut hk) = (lb.clone(), hb.clone());
        lk.push(0);
        hk.push(0);
        self.index_read(cf, index_column, project, &lk, &hk, &|b| b >= lb.as_slice() && b < hb.as_slice())
    }

    fn index_read(
        &self,
        cf: &str,
        index_column: &str,
        project: Option<&str>,
        lo: &[u8],
        hi: &[u8],
        matches: &dyn Fn(&[u8]) -> bool,
    ) -> Result<Vec<IndexHit>> {
        let view = ReadView::new(self);
        let plan = view.plan(cf)?;
        let col = column_index(&plan, index_column)?;
        if plan.index_for_column(col).is_none() {
            return Err(Error::NoIndex { cf: cf.to_string(), column: index_column.to_string() });
        }
        let proj = project.map(|p| column_index(&plan, p)).transpose()?;
        if lo >= hi {
            return Ok(Vec::new());
        }
        let mut hits = Vec::new();
        for pk in view.index_candidates(&plan, col, lo, hi)? {
            let Some(row) = view.point_full(&plan, &pk)? else { continue };
            let vb = index_value_bytes(&row.values[col])?;
            if !matches(&vb) {
                continue;
            }
            let row = match proj {
                Some(p) => Row::new(vec![row.values[p].clone()]),
                None => row,
            };
            hits.push((vb, IndexHit { key: pk, row }));
        }
        hits.sort_by(|a, b| (&a.0, &a.1.key).cmp(&(&b.0, &b.1.key)));
        Ok(hits.into_iter().map(|(_, h)| h).collect())
    }
}
