use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::RecordFormat;

/// A transformer kind as requested by the user, before linking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransformerSpec {
    Identity,
    /// Split column groups in halves, one stage per compaction hop, until no
    /// group is wider than `target_group_size` columns.
    Split { target_group_size: usize },
    Convert { from: RecordFormat, to: RecordFormat },
    Augment { columns: Vec<String> },
}

impl TransformerSpec {
    pub fn is_gradual(&self) -> bool {
        matches!(self, TransformerSpec::Split { .. })
    }

    fn kind_name(&self) -> &'static str {
        match self {
            TransformerSpec::Identity => "identity",
            TransformerSpec::Split { .. } => "split",
            TransformerSpec::Convert { .. } => "convert",
            TransformerSpec::Augment { .. } => "augment",
        }
    }
}

impl fmt::Display for TransformerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformerSpec::Identity => f.write_str("identity"),
            TransformerSpec::Split { target_group_size } => write!(f, "split(target_group_size={target_group_size})"),
            TransformerSpec::Convert { from, to } => write!(f, "convert({from},{to})"),
            TransformerSpec::Augment { columns } => write!(f, "augment(cols=[{}])", columns.join(",")),
        }
    }
}

impl FromStr for TransformerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: &str| Error::InvalidTransformer(format!("`{s}`: {why}"));
        let (name, args) = match s.find('(') {
            Some(i) => {
                let inner = s[i + 1..].strip_suffix(')').ok_or_else(|| bad("missing `)`"))?;
                (s[..i].trim(), Some(inner.trim()))
            }
            None => (s, None),
        };
        match name.to_ascii_lowercase().as_str() {
            "identity" => match args {
                None | Some("") => Ok(TransformerSpec::Identity),
                Some(_) => Err(bad("identity takes no arguments")),
            },
            "split" => {
                let a = args.ok_or_else(|| bad("expected split(target_group_size=N)"))?;
                let v = a.strip_prefix("target_group_size").map_or(a, |r| r.trim_start().trim_start_matches('='));
                let n: usize = v.trim().parse().map_err(|_| bad("target_group_size must be an integer"))?;
                if n == 0 {
                    return Err(bad("target_group_size must be >= 1"));
                }
                Ok(TransformerSpec::Split { target_group_size: n })
            }
            "convert" => {
                let a = args.ok_or_else(|| bad("expected convert(from,to)"))?;
                let (from, to) = a.split_once(',').ok_or_else(|| bad("expected convert(from,to)"))?;
                let from: RecordFormat = from.trim().parse()?;
                let to: RecordFormat = to.trim().parse()?;
                if from == to {
                    return Err(bad("source and target formats are equal"));
                }
                Ok(TransformerSpec::Convert { from, to })
            }
            "augment" => {
                let a = args.ok_or_else(|| bad("expected augment(cols=[...])"))?;
                let v = a.strip_prefix("cols").map_or(a, |r| r.trim_start().trim_start_matches('='));
                let v = v.trim();
                let v = v.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(v);
                let columns: Vec<String> =
                    v.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
                if columns.is_empty() {
                    return Err(bad("augment needs at least one column"));
                }
                let mut dedup = columns.clone();
                dedup.sort();
                dedup.dedup();
                if dedup.len() != columns.len() {
                    return Err(bad("duplicate indexed column"));
                }
                Ok(TransformerSpec::Augment { columns })
            }
            _ => Err(bad("unknown transformer")),
        }
    }
}

/// Parses a comma-separated pipeline such as
/// `split(target_group_size=4), convert(text,packed)`.
pub fn parse_pipeline(s: &str) -> Result<Vec<TransformerSpec>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::InvalidTransformer(format!("unbalanced brackets in `{s}`")));
        }
    }
    if depth != 0 {
        return Err(Error::InvalidTransformer(format!("unbalanced brackets in `{s}`")));
    }
    if !s[start..].trim().is_empty() || !out.is_empty() {
        out.push(s[start..].parse()?);
    }
    Ok(out)
}

/// Orders a pipeline for linking: the gradual (split) transformer first,
/// everything else in the given order.
pub fn validate_and_sort(specs: &[TransformerSpec]) -> Result<Vec<TransformerSpec>> {
    if specs.is_empty() {
        return Err(Error::InvalidTransformer("empty transformer pipeline".into()));
    }
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if a.is_gradual() && b.is_gradual() {
                return Err(Error::InvalidTransformer("at most one gradual transformer per column family".into()));
            }
            if a.kind_name() == b.kind_name() {
                return Err(Error::InvalidTransformer(format!("duplicate `{}` transformer", a.kind_name())));
            }
        }
    }
    let mut out: Vec<TransformerSpec> = specs.iter().filter(|s| s.is_gradual()).cloned().collect();
    out.extend(specs.iter().filter(|s| !s.is_gradual()).cloned());
    if let Some(i) = out.iter().position(|s| matches!(s, TransformerSpec::Augment { .. })) {
        if i + 1 != out.len() {
            return Err(Error::InvalidTransformer("augment must be the last transformer of a pipeline".into()));
        }
        if out.iter().any(TransformerSpec::is_gradual) {
            return Err(Error::InvalidTransformer("augment cannot be combined with split".into()));
        }
    }
    Ok(out)
}

/// Column groups created by each split stage over `n` columns.
///
/// Every stage halves every group of two or more columns (left half
/// `⌊len/2⌋` columns) until no group is wider than `target`. Single-column
/// groups stop splitting and stay where they are. Groups are numbered as a
/// binary tree: the children of group `g` are `2g` and `2g + 1`. Element `s`
/// lists the groups created by stage `s + 1`.
pub fn split_plan(n: usize, target: usize) -> Result<Vec<Vec<(u32, Range<usize>)>>> {
    if target == 0 {
        return Err(Error::InvalidTransformer("target_group_size must be >= 1".into()));
    }
    if n <= target {
        return Err(Error::InvalidTransformer(format!(
            "split of {n} columns to groups of {target} needs no stage"
        )));
    }
    let mut stages = Vec::new();
    let mut frontier: Vec<(u32, Range<usize>)> = vec![(0, 0..n)];
    let mut widest = n;
    while widest > target {
        let created: Vec<(u32, Range<usize>)> = frontier
            .iter()
            .filter(|(_, r)| r.len() >= 2)
            .flat_map(|(g, r)| {
                let mid = r.start + r.len() / 2;
                [(2 * g, r.start..mid), (2 * g + 1, mid..r.end)]
            })
            .collect();
        widest = created.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
        frontier = created.clone();
        stages.push(created);
    }
    Ok(stages)
}

/// The transformer linked to one column family, as recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CfTransformer {
    Identity,
    /// Stage `stage` of a split: the first `left` columns of this CF's schema
    /// go to the first destination, the rest to the second.
    Split { stage: u32, left: usize },
    Convert { from: RecordFormat, to: RecordFormat },
    /// Indexed columns, as positions in this CF's schema.
    Augment { columns: Vec<usize> },
}

impl CfTransformer {
    pub fn is_gradual(&self) -> bool {
        matches!(self, CfTransformer::Split { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CfTransformer::Identity => "identity",
            CfTransformer::Split { .. } => "split",
            CfTransformer::Convert { .. } => "convert",
            CfTransformer::Augment { .. } => "augment",
        }
    }
}

impl fmt::Display for CfTransformer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CfTransformer::Identity => f.write_str("identity"),
            CfTransformer::Split { stage, left } => write!(f, "split:{stage}:{left}"),
            CfTransformer::Convert { from, to } => write!(f, "convert:{from}:{to}"),
            CfTransformer::Augment { columns } => {
                let cols: Vec<String> = columns.iter().map(usize::to_string).collect();
                write!(f, "augment:{}", cols.join(","))
            }
        }
    }
}

impl FromStr for CfTransformer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTransformer(format!("bad transformer token `{s}`"));
        let mut parts = s.split(':');
        let t = match parts.next() {
            Some("identity") => CfTransformer::Identity,
            Some("split") => {
                let stage = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
                let left = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
                CfTransformer::Split { stage, left }
            }
            Some("convert") => {
                let from = parts.next().ok_or_else(bad)?.parse()?;
                let to = parts.next().ok_or_else(bad)?.parse()?;
                CfTransformer::Convert { from, to }
            }
            Some("augment") => {
                let cols = parts.next().ok_or_else(bad)?;
                let columns = cols.split(',').map(|c| c.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                CfTransformer::Augment { columns }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(t)
    }
}
