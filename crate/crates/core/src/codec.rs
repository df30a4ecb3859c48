//! Record codecs.
//!
//! `TEXT` is a strict JSON object whose keys are the schema's column names in
//! schema order: `{"a":5,"b":"hi"}`. `u64` columns are rendered as decimal
//! numbers, strings as JSON strings.
//!
//! `PACKED` is a schema-driven binary layout with no field names:
//!
//! ```text
//! 0x01 | per column in schema order:
//!        U64 -> 8 bytes little-endian
//!        Str -> u16 LE byte length, UTF-8 bytes
//! ```

use std::io::Write;

use crate::error::{Error, Result};
use crate::types::{ColumnType, RecordFormat, Row, Schema, Value};

pub const PACKED_VERSION: u8 = 0x01;

pub fn encode(format: RecordFormat, schema: &Schema, row: &Row) -> Result<Vec<u8>> {
    match format {
        RecordFormat::Text => Ok(encode_text(schema, row)),
        RecordFormat::Packed => encode_packed(schema, row),
    }
}

pub fn decode(format: RecordFormat, schema: &Schema, bytes: &[u8]) -> Result<Row> {
    match format {
        RecordFormat::Text => decode_text(schema, bytes),
        RecordFormat::Packed => decode_packed(schema, bytes),
    }
}

/// Decodes `bytes` from one format and encodes the row in another.
pub fn reencode(schema: &Schema, bytes: &[u8], from: RecordFormat, to: RecordFormat) -> Result<Vec<u8>> {
    if from == to {
        return Ok(bytes.to_vec());
    }
    let row = decode(from, schema, bytes)?;
    encode(to, schema, &row)
}

pub fn encode_text(schema: &Schema, row: &Row) -> Vec<u8> {
    debug_assert!(schema.check_row(row).is_ok());
    let mut out = Vec::with_capacity(row.values.len() * 24 + 2);
    out.push(b'{');
    for (i, (col, v)) in schema.columns().iter().zip(&row.values).enumerate() {
        if i > 0 {
            out.push(b',');
        }
        out.push(b'"');
        out.extend_from_slice(col.name.as_bytes());
        out.extend_from_slice(b"\":");
        write_text_value(&mut out, v);
    }
    out.push(b'}');
    out
}

fn write_text_value(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::U64(n) => write!(out, "{n}").expect("writing to a Vec cannot fail"),
        Value::Str(s) => {
            if s.bytes().all(|b| b >= 0x20 && b != b'"' && b != b'\\') {
                out.push(b'"');
                out.extend_from_slice(s.as_bytes());
                out.push(b'"');
            } else {
                serde_json::to_writer(&mut *out, s).expect("writing to a Vec cannot fail");
            }
        }
    }
}

pub fn decode_text(schema: &Schema, bytes: &[u8]) -> Result<Row> {
    let mut p = TextParser { buf: bytes, pos: 0 };
    p.ws();
    p.expect(b'{')?;
    let mut values = Vec::with_capacity(schema.len());
    for (i, col) in schema.columns().iter().enumerate() {
        p.ws();
        if i > 0 {
            p.expect(b',')?;
            p.ws();
        }
        let name = p.string()?;
        if name != col.name {
            return Err(Error::codec(format!("expected key `{}`, found `{name}`", col.name)));
        }
        p.ws();
        p.expect(b':')?;
        p.ws();
        let v = match col.ty {
            ColumnType::U64 => Value::U64(p.number()?),
            ColumnType::Str => Value::Str(p.string()?),
        };
        values.push(v);
    }
    p.ws();
    p.expect(b'}')?;
    p.ws();
    if p.pos != bytes.len() {
        return Err(Error::codec("trailing bytes after text record"));
    }
    Ok(Row { values })
}

struct TextParser<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl TextParser<'_> {
    fn ws(&mut self) {
        while let Some(b' ' | b'\t' | b'\n' | b'\r') = self.buf.get(self.pos) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        match self.buf.get(self.pos) {
            Some(&c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            Some(&c) => Err(Error::codec(format!(
                "expected `{}` at offset {}, found `{}`",
                b as char, self.pos, c as char
            ))),
            None => Err(Error::codec(format!("expected `{}`, found end of input", b as char))),
        }
    }

    fn number(&mut self) -> Result<u64> {
        let start = self.pos;
        while matches!(self.buf.get(self.pos), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let digits = &self.buf[start..self.pos];
        if digits.is_empty() {
            return Err(Error::codec(format!("expected number at offset {start}")));
        }
        if digits.len() > 1 && digits[0] == b'0' {
            return Err(Error::codec("leading zero in number"));
        }
        let mut n: u64 = 0;
        for &d in digits {
            n = n
                .checked_mul(10)
                .and_then(|n| n.checked_add(u64::from(d - b'0')))
                .ok_or_else(|| Error::codec("number overflows u64"))?;
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let start = self.pos;
        self.expect(b'"')?;
        let mut escaped = false;
        loop {
            match self.buf.get(self.pos) {
                None => return Err(Error::codec("unterminated string")),
                Some(b'"') => break,
                Some(b'\\') => {
                    escaped = true;
                    self.pos += 2;
                }
                Some(&c) if c < 0x20 => return Err(Error::codec("control character in string")),
                Some(_) => self.pos += 1,
            }
        }
        self.pos += 1;
        let raw = &self.buf[start..self.pos];
        if escaped {
            serde_json::from_slice::<String>(raw).map_err(|e| Error::codec(format!("bad string escape: {e}")))
        } else {
            std::str::from_utf8(&raw[1..raw.len() - 1])
                .map(str::to_string)
                .map_err(|_| Error::codec("string is not valid UTF-8"))
        }
    }
}

pub fn encode_packed(schema: &Schema, row: &Row) -> Result<Vec<u8>> {
    debug_assert!(schema.check_row(row).is_ok());
    let mut out = Vec::with_capacity(packed_len_hint(row));
    out.push(PACKED_VERSION);
    for v in &row.values {
        write_packed_value(&mut out, v)?;
    }
    Ok(out)
}

fn packed_len_hint(row: &Row) -> usize {
    1 + row
        .values
        .iter()
        .map(|v| match v {
            Value::U64(_) => 8,
            Value::Str(s) => 2 + s.len(),
        })
        .sum::<usize>()
}

fn write_packed_value(out: &mut Vec<u8>, v: &Value) -> Result<()> {
    match v {
        Value::U64(n) => out.extend_from_slice(&n.to_le_bytes()),
        Value::Str(s) => {
            let len = u16::try_from(s.len())
                .map_err(|_| Error::codec(format!("string column of {} bytes exceeds 65535", s.len())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
    }
    Ok(())
}

pub fn decode_packed(schema: &Schema, bytes: &[u8]) -> Result<Row> {
    let mut r = PackedReader::new(bytes)?;
    let mut values = Vec::with_capacity(schema.len());
    for col in schema.columns() {
        let field = r.field(col.ty)?;
        values.push(match col.ty {
            ColumnType::U64 => Value::U64(u64::from_le_bytes(field.try_into().expect("8-byte field"))),
            ColumnType::Str => Value::Str(
                std::str::from_utf8(&field[2..])
                    .map_err(|_| Error::codec("string is not valid UTF-8"))?
                    .to_string(),
            ),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::codec("trailing bytes after packed record"));
    }
    Ok(Row { values })
}

struct PackedReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PackedReader<'a> {
    fn new(buf: &'a [u8]) -> Result<Self> {
        match buf.first() {
            Some(&PACKED_VERSION) => Ok(PackedReader { buf, pos: 1 }),
            Some(v) => Err(Error::codec(format!("unknown packed version {v:#04x}"))),
            None => Err(Error::codec("empty packed record")),
        }
    }

    /// Returns the raw bytes of the next field, including a string's length prefix.
    fn field(&mut self, ty: ColumnType) -> Result<&'a [u8]> {
        let len = match ty {
            ColumnType::U64 => 8,
            ColumnType::Str => {
                let hdr = self
                    .buf
                    .get(self.pos..self.pos + 2)
                    .ok_or_else(|| Error::codec("truncated string length"))?;
                2 + usize::from(u16::from_le_bytes([hdr[0], hdr[1]]))
            }
        };
        let field = self
            .buf
            .get(self.pos..self.pos + len)
            .ok_or_else(|| Error::codec("truncated packed field"))?;
        self.pos += len;
        Ok(field)
    }
}

/// Re-encodes a single column of `encoded` as a one-column record in the same format.
pub fn project_column(schema: &Schema, encoded: &[u8], format: RecordFormat, column: &str) -> Result<Vec<u8>> {
    let idx = schema.column_index(column)?;
    match format {
        RecordFormat::Packed => {
            let mut r = PackedReader::new(encoded)?;
            for col in &schema.columns()[..idx] {
                r.field(col.ty)?;
            }
            let field = r.field(schema.columns()[idx].ty)?;
            let mut out = Vec::with_capacity(1 + field.len());
            out.push(PACKED_VERSION);
            out.extend_from_slice(field);
            Ok(out)
        }
        RecordFormat::Text => {
            let row = decode_text(schema, encoded)?;
            let sub = schema.slice(idx..idx + 1);
            Ok(encode_text(&sub, &Row { values: vec![row.values[idx].clone()] }))
        }
    }
}

/// Decodes only the column at `idx`.
pub fn decode_column(schema: &Schema, encoded: &[u8], format: RecordFormat, idx: usize) -> Result<Value> {
    match format {
        RecordFormat::Packed => {
            let mut r = PackedReader::new(encoded)?;
            for col in &schema.columns()[..idx] {
                r.field(col.ty)?;
            }
            let ty = schema.columns()[idx].ty;
            let field = r.field(ty)?;
            Ok(match ty {
                ColumnType::U64 => Value::U64(u64::from_le_bytes(field.try_into().expect("8-byte field"))),
                ColumnType::Str => Value::Str(
                    std::str::from_utf8(&field[2..])
                        .map_err(|_| Error::codec("string is not valid UTF-8"))?
                        .to_string(),
                ),
            })
        }
        RecordFormat::Text => {
            let mut row = decode_text(schema, encoded)?;
            Ok(row.values.swap_remove(idx))
        }
    }
}

/// Checks that `encoded` is a well-formed record of `schema` without
/// building the row when the format allows it.
pub fn validate(format: RecordFormat, schema: &Schema, encoded: &[u8]) -> Result<()> {
    match format {
        RecordFormat::Packed => {
            let mut r = PackedReader::new(encoded)?;
            for col in schema.columns() {
                let f = r.field(col.ty)?;
                if col.ty == ColumnType::Str {
                    std::str::from_utf8(&f[2..]).map_err(|_| Error::codec("string is not valid UTF-8"))?;
                }
            }
            if r.pos != encoded.len() {
                return Err(Error::codec("trailing bytes after packed record"));
            }
            Ok(())
        }
        RecordFormat::Text => decode_text(schema, encoded).map(|_| ()),
    }
}

/// Splits a record into the columns before `at` and the columns from `at` on,
/// each encoded in the same format against its sub-schema.
pub fn split_record(format: RecordFormat, schema: &Schema, encoded: &[u8], at: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    match format {
        RecordFormat::Packed => {
            let mut r = PackedReader::new(encoded)?;
            for col in &schema.columns()[..at] {
                r.field(col.ty)?;
            }
            let cut = r.pos;
            for col in &schema.columns()[at..] {
                r.field(col.ty)?;
            }
            if r.pos != encoded.len() {
                return Err(Error::codec("trailing bytes after packed record"));
            }
            let mut left = Vec::with_capacity(cut);
            left.extend_from_slice(&encoded[..cut]);
            let mut right = Vec::with_capacity(1 + encoded.len() - cut);
            right.push(PACKED_VERSION);
            right.extend_from_slice(&encoded[cut..]);
            Ok((left, right))
        }
        RecordFormat::Text => {
            let mut row = decode_text(schema, encoded)?;
            let tail = row.values.split_off(at);
            let n = schema.len();
            Ok((
                encode_text(&schema.slice(0..at), &row),
                encode_text(&schema.slice(at..n), &Row { values: tail }),
            ))
        }
    }
}

/// Concatenates records over adjacent sub-schemas into one record over
/// their union. `parts` pairs each record with its sub-schema, in column order.
pub fn concat_records(format: RecordFormat, parts: &[(&Schema, &[u8])]) -> Result<Vec<u8>> {
    match format {
        RecordFormat::Packed => {
            let mut out = vec![PACKED_VERSION];
            for (schema, bytes) in parts {
                let mut r = PackedReader::new(bytes)?;
                for col in schema.columns() {
                    r.field(col.ty)?;
                }
                if r.pos != bytes.len() {
                    return Err(Error::codec("trailing bytes after packed record"));
                }
                out.extend_from_slice(&bytes[1..]);
            }
            Ok(out)
        }
        RecordFormat::Text => {
            let mut columns = Vec::new();
            let mut values = Vec::new();
            for (schema, bytes) in parts {
                values.extend(decode_text(schema, bytes)?.values);
                columns.extend(schema.columns().iter().cloned());
            }
            Ok(encode_text(&Schema::new(columns)?, &Row { values }))
        }
    }
}
