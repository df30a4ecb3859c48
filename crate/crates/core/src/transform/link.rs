use std::collections::{HashSet, VecDeque};

use crate::cf::{CfDescriptor, CfKind, CfRole};
use crate::error::{Error, Result};
use crate::types::{CfId, Schema};

use super::{split_plan, validate_and_sort, CfTransformer, TransformerSpec};

/// Descriptor changes produced by linking a pipeline onto a column family.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkPlan {
    /// The source column family with its transformer and destinations set.
    pub source: Option<CfDescriptor>,
    /// New internal column families in creation (breadth-first) order.
    pub created: Vec<CfDescriptor>,
}

impl LinkPlan {
    pub fn all(&self) -> impl Iterator<Item = &CfDescriptor> {
        self.source.iter().chain(&self.created)
    }
}

/// Plans the column family graph for `specs` rooted at `src`.
///
/// `members` holds every column family of the same logical CF (src
/// included); `root_schema` is the schema of the logical CF; `taken`
/// reports whether a name is already in use; ids are allocated from
/// `next_id` upwards.
pub fn plan_links(
    src: &CfDescriptor,
    members: &[CfDescriptor],
    root_schema: &Schema,
    specs: &[TransformerSpec],
    taken: &dyn Fn(&str) -> bool,
    next_id: CfId,
) -> Result<LinkPlan> {
    let specs = validate_and_sort(specs)?;
    if src.transformer.is_some() {
        return Err(Error::InvalidTransformer(format!("column family `{}` already has a transformer", src.name)));
    }
    let CfRole::Data { .. } = src.role else {
        return Err(Error::InvalidTransformer(format!("`{}` is an index column family", src.name)));
    };
    let ancestors = ancestors_of(src, members);
    if specs[0].is_gradual() {
        if members.iter().any(|m| m.transformer.as_ref().is_some_and(CfTransformer::is_gradual)) {
            return Err(Error::InvalidTransformer("at most one gradual transformer per logical column family".into()));
        }
        if ancestors.iter().any(|a| a.transformer.as_ref().is_some_and(|t| !t.is_gradual())) {
            return Err(Error::InvalidTransformer("a gradual transformer must precede all other transformers".into()));
        }
    }
    for s in specs.iter().filter(|s| !s.is_gradual()) {
        let same = |t: &CfTransformer| std::mem::discriminant(&spec_kind(s)) == std::mem::discriminant(t);
        if ancestors.iter().any(|a| a.transformer.as_ref().is_some_and(same)) {
            return Err(Error::InvalidTransformer(format!("duplicate transformer `{s}` on the same path")));
        }
    }
    if ancestors.iter().any(|a| matches!(a.transformer, Some(CfTransformer::Augment { .. }))) {
        return Err(Error::InvalidTransformer("nothing can follow an augment transformer".into()));
    }

    let split_stages = match specs[0] {
        TransformerSpec::Split { target_group_size } => split_plan(src.schema.len(), target_group_size)?.len() as u32,
        _ => 0,
    };

    let mut ids = IdAlloc { next: u32::from(next_id), names: HashSet::new(), taken };
    let mut plan = LinkPlan::default();
    let mut queue: VecDeque<(CfDescriptor, usize, u32)> = VecDeque::new();
    queue.push_back((src.clone(), 0, 0));
    while let Some((mut cf, mut si, stage)) = queue.pop_front() {
        // a finished split leaves the group to the next spec
        while si < specs.len()
            && specs[si].is_gradual()
            && (stage >= split_stages || cf.schema.len() < 2)
        {
            si += 1;
        }
        if si < specs.len() {
            let children = link_one(&mut cf, &specs[si], stage, &src.name, root_schema, &mut ids)?;
            let (next_si, next_stage) = if specs[si].is_gradual() { (si, stage + 1) } else { (si + 1, 0) };
            for child in children {
                if matches!(child.role, CfRole::Index { .. }) {
                    plan.created.push(child);
                } else {
                    queue.push_back((child, next_si, next_stage));
                }
            }
        }
        if cf.id == src.id {
            plan.source = Some(cf);
        } else {
            plan.created.push(cf);
        }
    }
    plan.created.sort_by_key(|d| d.id);
    Ok(plan)
}

fn spec_kind(s: &TransformerSpec) -> CfTransformer {
    match s {
        TransformerSpec::Identity => CfTransformer::Identity,
        TransformerSpec::Split { .. } => CfTransformer::Split { stage: 0, left: 0 },
        TransformerSpec::Convert { from, to } => CfTransformer::Convert { from: *from, to: *to },
        TransformerSpec::Augment { .. } => CfTransformer::Augment { columns: Vec::new() },
    }
}

struct IdAlloc<'a> {
    next: u32,
    names: HashSet<String>,
    taken: &'a dyn Fn(&str) -> bool,
}

impl IdAlloc<'_> {
    fn alloc(&mut self, name: String) -> Result<(CfId, String)> {
        if (self.taken)(&name) || !self.names.insert(name.clone()) {
            return Err(Error::ColumnFamilyExists(name));
        }
        let id = CfId::try_from(self.next).map_err(|_| Error::Config("column family ids exhausted".into()))?;
        self.next += 1;
        Ok((id, name))
    }
}

fn ancestors_of<'a>(cf: &CfDescriptor, members: &'a [CfDescriptor]) -> Vec<&'a CfDescriptor> {
    let mut out = Vec::new();
    let mut cur = cf.parent;
    while let Some(p) = cur {
        match members.iter().find(|m| m.id == p) {
            Some(d) if out.len() <= members.len() => {
                out.push(d);
                cur = d.parent;
            }
            _ => break,
        }
    }
    out
}

fn child(parent: &CfDescriptor, id: CfId, name: String, schema: Schema, role: CfRole) -> CfDescriptor {
    CfDescriptor {
        id,
        name,
        schema,
        format: parent.format,
        kind: CfKind::Internal,
        role,
        root: parent.root,
        parent: Some(parent.id),
        transformer: None,
        destinations: Vec::new(),
    }
}

/// Sets `cf`'s transformer for `spec` and returns its new destinations.
fn link_one(
    cf: &mut CfDescriptor,
    spec: &TransformerSpec,
    stage: u32,
    split_base: &str,
    root_schema: &Schema,
    ids: &mut IdAlloc<'_>,
) -> Result<Vec<CfDescriptor>> {
    let (columns, group) = match &cf.role {
        CfRole::Data { columns, group } => (columns.clone(), *group),
        CfRole::Index { .. } => unreachable!("index column families are never queued"),
    };
    let mut out = Vec::new();
    let transformer = match spec {
        TransformerSpec::Identity => {
            let (id, name) = ids.alloc(format!("{}_identity", cf.name))?;
            out.push(child(cf, id, name, cf.schema.clone(), cf.role.clone()));
            CfTransformer::Identity
        }
        TransformerSpec::Split { .. } => {
            let left = columns.len() / 2;
            let mid = columns.start + left;
            for (g, r) in [(2 * group, columns.start..mid), (2 * group + 1, mid..columns.end)] {
                let (id, name) = ids.alloc(format!("{split_base}_l{}g{g}", stage + 1))?;
                out.push(child(cf, id, name, root_schema.slice(r.clone()), CfRole::Data { columns: r, group: g }));
            }
            CfTransformer::Split { stage: stage + 1, left }
        }
        TransformerSpec::Convert { from, to } => {
            if *from != cf.format {
                return Err(Error::InvalidTransformer(format!(
                    "`{}` stores {} records; cannot convert from {from}",
                    cf.name, cf.format
                )));
            }
            let (id, name) = ids.alloc(format!("{}_converted", cf.name))?;
            let mut c = child(cf, id, name, cf.schema.clone(), cf.role.clone());
            c.format = *to;
            out.push(c);
            CfTransformer::Convert { from: *from, to: *to }
        }
        TransformerSpec::Augment { columns: names } => {
            let local: Vec<usize> = names.iter().map(|n| cf.schema.column_index(n)).collect::<Result<_>>()?;
            let (id, name) = ids.alloc(format!("{}_primary", cf.name))?;
            out.push(child(cf, id, name, cf.schema.clone(), cf.role.clone()));
            for (i, &c) in local.iter().enumerate() {
                let (id, name) = ids.alloc(format!("{}_secondary_{}", cf.name, i + 1))?;
                let role = CfRole::Index { column: columns.start + c };
                out.push(child(cf, id, name, cf.schema.slice(c..c + 1), role));
            }
            CfTransformer::Augment { columns: local }
        }
    };
    cf.transformer = Some(transformer);
    cf.destinations = out.iter().map(|d| d.id).collect();
    Ok(out)
}
