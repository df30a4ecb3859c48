//! Write-ahead log.
//!
//! Each record is laid out little-endian as
//!
//! ```text
//! u64 seq | u8 kind | u16 cf_id | u16 key_len | key | u32 val_len | value | u32 crc32
//! ```
//!
//! where the CRC covers every preceding byte of the record. Replay stops at the
//! first truncated or checksum-failing record; everything before it is intact.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::types::{CfId, SeqNo, ValueKind};

const HEADER_LEN: usize = 8 + 1 + 2 + 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalRecord {
    pub seq: SeqNo,
    pub kind: ValueKind,
    pub cf_id: CfId,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl WalRecord {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.cf_id.to_le_bytes());
        out.extend_from_slice(&(self.key.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.key);
        out.extend_from_slice(&(self.value.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.value);
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.key.len() + 4 + self.value.len() + 4
    }
}

pub fn wal_file_name(number: u64) -> String {
    format!("wal-{number}.log")
}

pub struct WalWriter {
    file: File,
    path: PathBuf,
    number: u64,
    sync: bool,
    buf: Vec<u8>,
    bytes: u64,
}

impl WalWriter {
    pub fn create(dir: &Path, number: u64, sync: bool) -> Result<Self> {
        let path = dir.join(wal_file_name(number));
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(WalWriter { file, path, number, sync, buf: Vec::with_capacity(4096), bytes: 0 })
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    /// Appends one record with a single `write` call so a completed append is
    /// visible to the OS even if the process dies right after.
    pub fn append(&mut self, rec: &WalRecord) -> Result<()> {
        self.buf.clear();
        rec.encode_into(&mut self.buf);
        self.file.write_all(&self.buf)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.bytes += self.buf.len() as u64;
        Ok(())
    }

    /// Writes only the first `keep` bytes of the record, as a crash mid-write would.
    pub fn append_torn(&mut self, rec: &WalRecord, keep: usize) -> Result<()> {
        self.buf.clear();
        rec.encode_into(&mut self.buf);
        let keep = keep.min(self.buf.len().saturating_sub(1));
        self.file.write_all(&self.buf[..keep])?;
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct WalReplay {
    pub records: Vec<WalRecord>,
    /// Byte offset just past the last intact record.
    pub valid_bytes: u64,
    /// False when replay stopped at a torn or corrupt record.
    pub clean: bool,
}

pub fn wal_replay(path: &Path) -> Result<WalReplay> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    Ok(replay_bytes(&data))
}

fn replay_bytes(data: &[u8]) -> WalReplay {
    let mut out = WalReplay { clean: true, ..Default::default() };
    let mut pos = 0usize;
    while pos < data.len() {
        match decode_record(&data[pos..]) {
            Some((rec, len)) => {
                out.records.push(rec);
                pos += len;
                out.valid_bytes = pos as u64;
            }
            None => {
                out.clean = false;
                break;
            }
        }
    }
    out
}

fn decode_record(buf: &[u8]) -> Option<(WalRecord, usize)> {
    if buf.len() < HEADER_LEN {
        return None;
    }
    let seq = u64::from_le_bytes(buf[0..8].try_into().ok()?);
    let kind_byte = buf[8];
    let cf_id = u16::from_le_bytes([buf[9], buf[10]]);
    let key_len = usize::from(u16::from_le_bytes([buf[11], buf[12]]));
    let mut pos = HEADER_LEN;
    let key = buf.get(pos..pos + key_len)?.to_vec();
    pos += key_len;
    let val_len = u32::from_le_bytes(buf.get(pos..pos + 4)?.try_into().ok()?) as usize;
    pos += 4;
    let value = buf.get(pos..pos.checked_add(val_len)?)?.to_vec();
    pos += val_len;
    let stored = u32::from_le_bytes(buf.get(pos..pos + 4)?.try_into().ok()?);
    if crc32fast::hash(&buf[..pos]) != stored {
        return None;
    }
    let kind = ValueKind::from_u8(kind_byte)?;
    Some((WalRecord { seq, kind, cf_id, key, value }, pos + 4))
}

/// Lists `(number, path)` of every WAL segment in `dir`, ascending.
pub fn list_wal_files(dir: &Path) -> io::Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(n) = name.strip_prefix("wal-").and_then(|s| s.strip_suffix(".log")) {
            if let Ok(n) = n.parse() {
                out.push((n, entry.path()));
            }
        }
    }
    out.sort();
    Ok(out)
}
