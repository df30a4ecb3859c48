//! Transformers: units of work that compaction applies to every entry it
//! moves out of a column family.
//!
//! A transformer is bound to one column family. A compaction job takes the
//! transformer's lock with [`TransformerHandle::prepare`], feeds every merged
//! entry through [`TransformSession::transform`], and collects the staged
//! outputs (routed to destination column families) with
//! [`TransformSession::retrieve`], which releases the lock.

mod builtin;
mod link;
mod spec;

use std::sync::atomic::{AtomicBool, Ordering};

pub use builtin::{build_transform, index_key, index_value_bytes, Augment, Convert, Identity, SplitStage};
pub use link::{plan_links, LinkPlan};
pub use spec::{parse_pipeline, split_plan, validate_and_sort, CfTransformer, TransformerSpec};

use crate::error::{Error, Result};
use crate::types::{CfId, Entry};

/// A single transformation function.
///
/// `out` receives `(destination index, entry)` pairs; the destination index
/// refers to the owning column family's ordered destination list.
pub trait Transform: Send + Sync {
    fn transform(&self, input: &Entry, out: &mut Vec<(usize, Entry)>) -> Result<()>;
}

/// Staged outputs of one job: one ascending entry list per destination CF.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct TransformOutputSet {
    pub outputs: Vec<(CfId, Vec<Entry>)>,
}

impl TransformOutputSet {
    pub fn for_cf(&self, cf: CfId) -> Option<&[Entry]> {
        self.outputs.iter().find(|(c, _)| *c == cf).map(|(_, v)| v.as_slice())
    }
}

/// A transformer attached to a column family, guarded so that at most one
/// compaction job uses it at a time.
pub struct TransformerHandle {
    cf: CfId,
    destinations: Vec<CfId>,
    func: Box<dyn Transform>,
    locked: AtomicBool,
}

impl TransformerHandle {
    pub fn new(cf: CfId, destinations: Vec<CfId>, func: Box<dyn Transform>) -> Self {
        TransformerHandle { cf, destinations, func, locked: AtomicBool::new(false) }
    }

    pub fn cf(&self) -> CfId {
        self.cf
    }

    pub fn destinations(&self) -> &[CfId] {
        &self.destinations
    }

    /// Grants the lock to the caller and starts from an empty staging area.
    pub fn prepare(&self) -> Result<TransformSession<'_>> {
        if self.locked.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
            return Err(Error::TransformerBusy(self.cf));
        }
        Ok(TransformSession {
            handle: self,
            staged: self.destinations.iter().map(|_| Vec::new()).collect(),
            scratch: Vec::new(),
        })
    }

    pub fn is_locked(&self) -> bool {
        self.locked.load(Ordering::Acquire)
    }
}

/// Exclusive use of a transformer between `prepare` and `retrieve`.
/// Dropping a session without retrieving discards the staged outputs.
pub struct TransformSession<'a> {
    handle: &'a TransformerHandle,
    staged: Vec<Vec<Entry>>,
    scratch: Vec<(usize, Entry)>,
}

impl TransformSession<'_> {
    pub fn transform(&mut self, input: &Entry) -> Result<()> {
        self.scratch.clear();
        self.handle.func.transform(input, &mut self.scratch)?;
        for (dest, e) in self.scratch.drain(..) {
            let slot = self
                .staged
                .get_mut(dest)
                .ok_or_else(|| Error::Transform(format!("destination index {dest} out of range")))?;
            slot.push(e);
        }
        Ok(())
    }

    /// Number of entries staged so far.
    pub fn staged_len(&self) -> usize {
        self.staged.iter().map(Vec::len).sum()
    }

    pub fn retrieve(mut self) -> TransformOutputSet {
        let staged = std::mem::take(&mut self.staged);
        let outputs = self
            .handle
            .destinations
            .iter()
            .zip(staged)
            .map(|(cf, mut entries)| {
                if !entries.windows(2).all(|w| w[0].key < w[1].key) {
                    entries.sort_by(|a, b| a.key.cmp(&b.key));
                }
                (*cf, entries)
            })
            .collect();
        TransformOutputSet { outputs }
    }
}

impl Drop for TransformSession<'_> {
    fn drop(&mut self) {
        self.handle.locked.store(false, Ordering::Release);
    }
}
