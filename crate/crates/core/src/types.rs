//! Domain types shared by every layer of the engine.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type SeqNo = u64;
pub type CfId = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColumnType {
    U64,
    Str,
}

impl ColumnType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ColumnType::U64 => "u64",
            ColumnType::Str => "str",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

/// Ordered, non-empty list of uniquely named columns.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema needs at least one column".into()));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if c.name.contains(|ch: char| ch == '"' || ch == '\\' || ch.is_control()) {
                return Err(Error::Schema(format!("column name `{}` needs escaping", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(Schema { columns })
    }

    /// Convenience constructor from `(name, type)` pairs.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, ColumnType)>) -> Result<Self> {
        Schema::new(
            pairs
                .into_iter()
                .map(|(name, ty)| Column { name: name.into(), ty })
                .collect(),
        )
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Sub-schema over a contiguous column range.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Schema {
        Schema { columns: self.columns[range].to_vec() }
    }

    pub fn check_row(&self, row: &Row) -> Result<()> {
        if row.values.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "row has {} values, schema has {} columns",
                row.values.len(),
                self.columns.len()
            )));
        }
        for (c, v) in self.columns.iter().zip(&row.values) {
            if v.column_type() != c.ty {
                return Err(Error::Schema(format!("column `{}` expects {}", c.name, c.ty.as_str())));
            }
        }
        Ok(())
    }
}

/// `name:type,name:type,...` as written into the manifest.
impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", c.name, c.ty.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cols = Vec::new();
        for part in s.split(',') {
            let (name, ty) = part
                .rsplit_once(':')
                .ok_or_else(|| Error::Schema(format!("bad column spec `{part}`")))?;
            let ty = match ty {
                "u64" => ColumnType::U64,
                "str" => ColumnType::Str,
                other => return Err(Error::Schema(format!("unknown column type `{other}`"))),
            };
            cols.push(Column { name: name.to_string(), ty });
        }
        Schema::new(cols)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    U64(u64),
    Str(String),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::U64(_) => ColumnType::U64,
            Value::Str(_) => ColumnType::Str,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::U64(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Row {
    pub values: Vec<Value>,
}

impl Row {
    pub fn new(values: Vec<Value>) -> Self {
        Row { values }
    }
}

/// On-disk encoding of a record value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecordFormat {
    /// Self-describing JSON object.
    Text,
    /// Schema-driven binary layout.
    Packed,
}

impl RecordFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordFormat::Text => "text",
            RecordFormat::Packed => "packed",
        }
    }
}

impl FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "json" => Ok(RecordFormat::Text),
            "packed" | "binary" => Ok(RecordFormat::Packed),
            other => Err(Error::Config(format!("unknown record format `{other}`"))),
        }
    }
}

impl fmt::Display for RecordFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ValueKind {
    Put = 1,
    Delete = 2,
}

impl ValueKind {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            1 => Some(ValueKind::Put),
            2 => Some(ValueKind::Delete),
            _ => None,
        }
    }
}

/// User key tagged with a sequence number and entry kind.
///
/// Sorts ascending by user key, then descending by sequence so that the
/// newest version of a key comes first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InternalKey {
    pub user_key: Vec<u8>,
    pub seq: SeqNo,
    pub kind: ValueKind,
}

impl InternalKey {
    pub fn new(user_key: impl Into<Vec<u8>>, seq: SeqNo, kind: ValueKind) -> Self {
        InternalKey { user_key: user_key.into(), seq, kind }
    }
}

impl Ord for InternalKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.user_key
            .cmp(&other.user_key)
            .then_with(|| other.seq.cmp(&self.seq))
            .then_with(|| (other.kind as u8).cmp(&(self.kind as u8)))
    }
}

impl PartialOrd for InternalKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One versioned key-value entry as it flows through flushes and compactions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: InternalKey,
    pub value: Vec<u8>,
}

impl Entry {
    pub fn put(user_key: impl Into<Vec<u8>>, seq: SeqNo, value: impl Into<Vec<u8>>) -> Self {
        Entry { key: InternalKey::new(user_key, seq, ValueKind::Put), value: value.into() }
    }

    pub fn delete(user_key: impl Into<Vec<u8>>, seq: SeqNo) -> Self {
        Entry { key: InternalKey::new(user_key, seq, ValueKind::Delete), value: Vec::new() }
    }

    pub fn is_delete(&self) -> bool {
        self.key.kind == ValueKind::Delete
    }
}
