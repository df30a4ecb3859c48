use crate::cf::CfDescriptor;
use crate::codec;
use crate::error::{Error, Result};
use crate::types::{Entry, InternalKey, RecordFormat, Schema, Value, ValueKind};

use super::{CfTransformer, Transform};

pub struct Identity;

impl Transform for Identity {
    fn transform(&self, input: &Entry, out: &mut Vec<(usize, Entry)>) -> Result<()> {
        out.push((0, input.clone()));
        Ok(())
    }
}

/// One split stage: the first `left` columns go to destination 0, the rest
/// to destination 1.
pub struct SplitStage {
    pub schema: Schema,
    pub format: RecordFormat,
    pub left: usize,
}

impl Transform for SplitStage {
    fn transform(&self, input: &Entry, out: &mut Vec<(usize, Entry)>) -> Result<()> {
        if input.is_delete() {
            out.push((0, input.clone()));
            out.push((1, input.clone()));
            return Ok(());
        }
        let (l, r) = codec::split_record(self.format, &self.schema, &input.value, self.left)?;
        out.push((0, Entry { key: input.key.clone(), value: l }));
        out.push((1, Entry { key: input.key.clone(), value: r }));
        Ok(())
    }
}

pub struct Convert {
    pub schema: Schema,
    pub from: RecordFormat,
    pub to: RecordFormat,
}

impl Transform for Convert {
    fn transform(&self, input: &Entry, out: &mut Vec<(usize, Entry)>) -> Result<()> {
        let value =
            if input.is_delete() { Vec::new() } else { codec::reencode(&self.schema, &input.value, self.from, self.to)? };
        out.push((0, Entry { key: input.key.clone(), value }));
        Ok(())
    }
}

/// Routes rows to the primary CF (destination 0) and one index entry per
/// indexed column to destinations `1..`.
pub struct Augment {
    pub schema: Schema,
    pub format: RecordFormat,
    pub columns: Vec<usize>,
}

impl Transform for Augment {
    fn transform(&self, input: &Entry, out: &mut Vec<(usize, Entry)>) -> Result<()> {
        out.push((0, input.clone()));
        // stale index entries of deleted rows are filtered at read time
        if input.is_delete() {
            return Ok(());
        }
        for (i, &col) in self.columns.iter().enumerate() {
            let v = codec::decode_column(&self.schema, &input.value, self.format, col)?;
            let key = index_key(&v, &input.key.user_key)?;
            out.push((i + 1, Entry { key: InternalKey::new(key, input.key.seq, ValueKind::Put), value: Vec::new() }));
        }
        Ok(())
    }
}

/// Byte form of a column value inside an index key. U64 values become 16
/// lowercase hex digits so byte order matches numeric order.
pub fn index_value_bytes(v: &Value) -> Result<Vec<u8>> {
    match v {
        Value::U64(n) => Ok(format!("{n:016x}").into_bytes()),
        Value::Str(s) => {
            if s.as_bytes().contains(&0) {
                return Err(Error::Schema("indexed string value contains a NUL byte".into()));
            }
            Ok(s.as_bytes().to_vec())
        }
    }
}

/// `value_bytes ‖ 0x00 ‖ primary_key`.
pub fn index_key(v: &Value, primary_key: &[u8]) -> Result<Vec<u8>> {
    let mut k = index_value_bytes(v)?;
    k.push(0);
    k.extend_from_slice(primary_key);
    Ok(k)
}

/// Instantiates the transformation function recorded on `desc`.
pub fn build_transform(desc: &CfDescriptor) -> Result<Box<dyn Transform>> {
    let t = desc
        .transformer
        .as_ref()
        .ok_or_else(|| Error::InvalidTransformer(format!("column family `{}` has no transformer", desc.name)))?;
    let want = match t {
        CfTransformer::Split { .. } => 2,
        CfTransformer::Augment { columns } => 1 + columns.len(),
        _ => 1,
    };
    if desc.destinations.len() != want {
        return Err(Error::InvalidTransformer(format!(
            "column family `{}`: {} transformer needs {want} destinations, found {}",
            desc.name,
            t.kind_name(),
            desc.destinations.len()
        )));
    }
    Ok(match t {
        CfTransformer::Identity => Box::new(Identity),
        CfTransformer::Split { left, .. } => {
            if *left == 0 || *left >= desc.schema.len() {
                return Err(Error::InvalidTransformer(format!("split point {left} out of range")));
            }
            Box::new(SplitStage { schema: desc.schema.clone(), format: desc.format, left: *left })
        }
        CfTransformer::Convert { from, to } => {
            if *from != desc.format {
                return Err(Error::InvalidTransformer(format!(
                    "column family `{}` stores {} records, not {from}",
                    desc.name, desc.format
                )));
            }
            Box::new(Convert { schema: desc.schema.clone(), from: *from, to: *to })
        }
        CfTransformer::Augment { columns } => {
            if let Some(c) = columns.iter().find(|&&c| c >= desc.schema.len()) {
                return Err(Error::InvalidTransformer(format!("indexed column {c} out of range")));
            }
            Box::new(Augment { schema: desc.schema.clone(), format: desc.format, columns: columns.clone() })
        }
    })
}
