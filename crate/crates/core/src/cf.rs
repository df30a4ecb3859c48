//! Column family descriptors.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::transform::CfTransformer;
use crate::types::{CfId, RecordFormat, Schema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CfKind {
    UserFacing,
    /// Created by transformer linking; rejects writes from the public API.
    Internal,
}

/// What a column family stores relative to its logical (root) column family.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CfRole {
    /// Rows restricted to a contiguous range of the root schema's columns.
    /// `group` numbers the range among its siblings at the same split stage.
    Data { columns: Range<usize>, group: u32 },
    /// Secondary index on root column `column`; keys only, values empty.
    Index { column: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfDescriptor {
    pub id: CfId,
    pub name: String,
    /// Schema of the records stored here (a slice of the root schema for data CFs).
    pub schema: Schema,
    pub format: RecordFormat,
    pub kind: CfKind,
    pub role: CfRole,
    pub root: CfId,
    pub parent: Option<CfId>,
    pub transformer: Option<CfTransformer>,
    pub destinations: Vec<CfId>,
}

impl CfDescriptor {
    pub fn user_facing(id: CfId, name: &str, schema: Schema, format: RecordFormat) -> Self {
        let n = schema.len();
        CfDescriptor {
            id,
            name: name.to_string(),
            schema,
            format,
            kind: CfKind::UserFacing,
            role: CfRole::Data { columns: 0..n, group: 0 },
            root: id,
            parent: None,
            transformer: None,
            destinations: Vec::new(),
        }
    }

    pub fn has_transformer(&self) -> bool {
        self.transformer.is_some()
    }

    pub fn data_columns(&self) -> Option<Range<usize>> {
        match &self.role {
            CfRole::Data { columns, .. } => Some(columns.clone()),
            CfRole::Index { .. } => None,
        }
    }

    /// Manifest tokens following `CREATE_CF`.
    pub fn to_tokens(&self) -> Vec<String> {
        let role = match &self.role {
            CfRole::Data { columns, group } => format!("data:{}-{}:{}", columns.start, columns.end, group),
            CfRole::Index { column } => format!("index:{column}"),
        };
        vec![
            self.id.to_string(),
            hex(self.name.as_bytes()),
            match self.kind {
                CfKind::UserFacing => "user".into(),
                CfKind::Internal => "internal".into(),
            },
            self.format.to_string(),
            hex(self.schema.to_string().as_bytes()),
            role,
            self.root.to_string(),
            self.parent.map_or("-".into(), |p| p.to_string()),
            self.transformer.as_ref().map_or("-".into(), |t| t.to_string()),
            if self.destinations.is_empty() {
                "-".into()
            } else {
                self.destinations.iter().map(u16::to_string).collect::<Vec<_>>().join(",")
            },
        ]
    }

    pub fn from_tokens(t: &[&str]) -> std::result::Result<Self, String> {
        if t.len() != 10 {
            return Err(format!("CREATE_CF expects 10 fields, got {}", t.len()));
        }
        let num = |s: &str| s.parse::<CfId>().map_err(|_| format!("bad cf id `{s}`"));
        let name = String::from_utf8(unhex(t[1])?).map_err(|_| "cf name is not UTF-8".to_string())?;
        let kind = match t[2] {
            "user" => CfKind::UserFacing,
            "internal" => CfKind::Internal,
            other => return Err(format!("bad cf kind `{other}`")),
        };
        let format: RecordFormat = t[3].parse().map_err(|e: Error| e.to_string())?;
        let schema_text = String::from_utf8(unhex(t[4])?).map_err(|_| "schema is not UTF-8".to_string())?;
        let schema: Schema = schema_text.parse().map_err(|e: Error| e.to_string())?;
        let role = parse_role(t[5])?;
        let root = num(t[6])?;
        let parent = if t[7] == "-" { None } else { Some(num(t[7])?) };
        let transformer = if t[8] == "-" { None } else { Some(t[8].parse().map_err(|e: Error| e.to_string())?) };
        let destinations = if t[9] == "-" {
            Vec::new()
        } else {
            t[9].split(',').map(num).collect::<std::result::Result<_, _>>()?
        };
        Ok(CfDescriptor { id: num(t[0])?, name, schema, format, kind, role, root, parent, transformer, destinations })
    }
}

fn parse_role(s: &str) -> std::result::Result<CfRole, String> {
    let bad = || format!("bad cf role `{s}`");
    if let Some(rest) = s.strip_prefix("data:") {
        let (range, group) = rest.split_once(':').ok_or_else(bad)?;
        let (a, b) = range.split_once('-').ok_or_else(bad)?;
        Ok(CfRole::Data {
            columns: a.parse().map_err(|_| bad())?..b.parse().map_err(|_| bad())?,
            group: group.parse().map_err(|_| bad())?,
        })
    } else if let Some(c) = s.strip_prefix("index:") {
        Ok(CfRole::Index { column: c.parse().map_err(|_| bad())? })
    } else {
        Err(bad())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 15) as usize] as char);
    }
    s
}

pub fn unhex(s: &str) -> std::result::Result<Vec<u8>, String> {
    if s.len() % 2 != 0 {
        return Err(format!("odd-length hex `{s}`"));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| format!("bad hex `{s}`")))
        .collect()
}

pub(crate) fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.len() > 255 {
        return Err(Error::Config(format!("invalid column family name `{name}`")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ColumnType;

    #[test]
    fn descriptor_tokens_round_trip() {
        let schema = Schema::from_pairs([("a", ColumnType::U64), ("b", ColumnType::Str)]).unwrap();
        let mut d = CfDescriptor::user_facing(3, "my cf", schema, RecordFormat::Text);
        d.transformer = Some(CfTransformer::Convert { from: RecordFormat::Text, to: RecordFormat::Packed });
        d.destinations = vec![4];
        let toks = d.to_tokens();
        let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
        assert_eq!(CfDescriptor::from_tokens(&refs).unwrap(), d);

        let idx = CfDescriptor {
            role: CfRole::Index { column: 1 },
            kind: CfKind::Internal,
            parent: Some(3),
            transformer: None,
            destinations: vec![],
            ..d
        };
        let toks = idx.to_tokens();
        let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
        assert_eq!(CfDescriptor::from_tokens(&refs).unwrap(), idx);
    }

    #[test]
    fn hex_round_trip() {
        assert_eq!(hex(b"\x00k1"), "006b31");
        assert_eq!(unhex("006b31").unwrap(), b"\x00k1");
        assert!(unhex("0").is_err());
        assert!(unhex("zz").is_err());
    }
}
