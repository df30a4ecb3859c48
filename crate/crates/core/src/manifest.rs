//! Text manifest: one line per atomic edit group, edits separated by ` | `,
//! fields separated by spaces. Keys and names are hex-encoded.
//!
//! ```text
//! CREATE_CF <descriptor fields>
//! ADD_FILE cf level file_number file_bytes entry_count smallest seq kind largest seq kind
//! DELETE_FILE cf level file_number
//! SET_SEQ seq
//! ```
//!
//! A final line without its newline is a torn write and is ignored; any
//! other unparseable line fails recovery.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cf::{hex, unhex, CfDescriptor};
use crate::error::{Error, Result};
use crate::sst::SstMeta;
use crate::types::{CfId, InternalKey, SeqNo, ValueKind};

pub const MANIFEST_FILE: &str = "MANIFEST";
const GROUP_SEP: &str = " | ";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Edit {
    /// Creates a column family, or replaces the descriptor of an existing
    /// one with the same id and name (used when linking transformers).
    CreateCf(CfDescriptor),
    AddFile(SstMeta),
    DeleteFile { cf: CfId, level: u8, file_number: u64 },
    SetSeq(SeqNo),
}

fn key_hex(k: &[u8]) -> String {
    if k.is_empty() {
        "-".into()
    } else {
        hex(k)
    }
}

fn key_unhex(s: &str) -> std::result::Result<Vec<u8>, String> {
    if s == "-" {
        Ok(Vec::new())
    } else {
        unhex(s)
    }
}

impl Edit {
    pub fn encode(&self) -> String {
        match self {
            Edit::CreateCf(d) => format!("CREATE_CF {}", d.to_tokens().join(" ")),
            Edit::AddFile(m) => format!(
                "ADD_FILE {} {} {} {} {} {} {} {} {} {} {}",
                m.cf_id,
                m.level,
                m.file_number,
                m.file_bytes,
                m.entry_count,
                key_hex(&m.smallest.user_key),
                m.smallest.seq,
                m.smallest.kind as u8,
                key_hex(&m.largest.user_key),
                m.largest.seq,
                m.largest.kind as u8
            ),
            Edit::DeleteFile { cf, level, file_number } => format!("DELETE_FILE {cf} {level} {file_number}"),
            Edit::SetSeq(s) => format!("SET_SEQ {s}"),
        }
    }

    pub fn decode(s: &str) -> std::result::Result<Edit, String> {
        let t: Vec<&str> = s.split_ascii_whitespace().collect();
        let (&op, rest) = t.split_first().ok_or("empty edit")?;
        fn n<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad number `{s}`"))
        }
        let arity = |k: usize| if rest.len() == k { Ok(()) } else { Err(format!("{op} expects {k} fields")) };
        match op {
            "CREATE_CF" => Ok(Edit::CreateCf(CfDescriptor::from_tokens(rest)?)),
            "ADD_FILE" => {
                arity(11)?;
                let ik = |k: &str, seq: &str, kind: &str| -> std::result::Result<InternalKey, String> {
                    let kind = ValueKind::from_u8(n(kind)?).ok_or_else(|| format!("bad kind `{kind}`"))?;
                    Ok(InternalKey::new(key_unhex(k)?, n(seq)?, kind))
                };
                Ok(Edit::AddFile(SstMeta {
                    cf_id: n(rest[0])?,
                    level: n(rest[1])?,
                    file_number: n(rest[2])?,
                    file_bytes: n(rest[3])?,
                    entry_count: n(rest[4])?,
                    smallest: ik(rest[5], rest[6], rest[7])?,
                    largest: ik(rest[8], rest[9], rest[10])?,
                }))
            }
            "DELETE_FILE" => {
                arity(3)?;
                Ok(Edit::DeleteFile { cf: n(rest[0])?, level: n(rest[1])?, file_number: n(rest[2])? })
            }
            "SET_SEQ" => {
                arity(1)?;
                Ok(Edit::SetSeq(n(rest[0])?))
            }
            other => Err(format!("unknown edit `{other}`")),
        }
    }
}

pub fn encode_group(edits: &[Edit]) -> String {
    edits.iter().map(Edit::encode).collect::<Vec<_>>().join(GROUP_SEP)
}

pub fn decode_group(line: &str) -> std::result::Result<Vec<Edit>, String> {
    line.split(GROUP_SEP).map(Edit::decode).collect()
}

/// Column families and live files as recorded by the manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ManifestState {
    pub cfs: BTreeMap<CfId, CfDescriptor>,
    /// Per column family, per level, files in the order they were added.
    pub files: BTreeMap<CfId, Vec<Vec<SstMeta>>>,
    pub last_sequence: SeqNo,
}

impl ManifestState {
    pub fn apply(&mut self, edit: &Edit) -> std::result::Result<(), String> {
        match edit {
            Edit::CreateCf(d) => {
                if let Some(old) = self.cfs.get(&d.id) {
                    if old.name != d.name {
                        return Err(format!("cf id {} already names `{}`", d.id, old.name));
                    }
                } else if self.cfs.values().any(|c| c.name == d.name) {
                    return Err(format!("cf name `{}` already in use", d.name));
                }
                self.cfs.insert(d.id, d.clone());
                self.files.entry(d.id).or_default();
            }
            Edit::AddFile(m) => {
                if !self.cfs.contains_key(&m.cf_id) {
                    return Err(format!("ADD_FILE to unknown cf {}", m.cf_id));
                }
                if m.entry_count > 0 && m.file_bytes == 0 {
                    return Err(format!("file {} has entries but no bytes", m.file_number));
                }
                if m.smallest.user_key > m.largest.user_key {
                    return Err(format!("file {} has smallest > largest", m.file_number));
                }
                if self.find_file(m.file_number).is_some() {
                    return Err(format!("file {} added twice", m.file_number));
                }
                let levels = self.files.entry(m.cf_id).or_default();
                let l = usize::from(m.level);
                if levels.len() <= l {
                    levels.resize_with(l + 1, Vec::new);
                }
                levels[l].push(m.clone());
            }
            Edit::DeleteFile { cf, level, file_number } => {
                let pos = self
                    .files
                    .get(cf)
                    .and_then(|ls| ls.get(usize::from(*level)))
                    .and_then(|l| l.iter().position(|m| m.file_number == *file_number));
                match pos {
                    Some(p) => {
                        self.files.get_mut(cf).expect("cf checked")[usize::from(*level)].remove(p);
                    }
                    None => return Err(format!("DELETE_FILE of unknown file {file_number} (cf {cf}, level {level})")),
                }
            }
            Edit::SetSeq(s) => self.last_sequence = self.last_sequence.max(*s),
        }
        Ok(())
    }

    /// Applies a group atomically: on error the state is unchanged.
    pub fn apply_group(&mut self, edits: &[Edit]) -> std::result::Result<(), String> {
        let mut next = self.clone();
        for e in edits {
            next.apply(e)?;
        }
        *self = next;
        Ok(())
    }

    pub fn find_file(&self, file_number: u64) -> Option<&SstMeta> {
        self.files.values().flatten().flatten().find(|m| m.file_number == file_number)
    }

    pub fn live_files(&self) -> impl Iterator<Item = &SstMeta> {
        self.files.values().flatten().flatten()
    }

    pub fn level_files(&self, cf: CfId, level: usize) -> &[SstMeta] {
        self.files.get(&cf).and_then(|ls| ls.get(level)).map_or(&[], Vec::as_slice)
    }

    /// Edits that rebuild this state from scratch.
    pub fn snapshot_edits(&self) -> Vec<Edit> {
        let mut out: Vec<Edit> = self.cfs.values().cloned().map(Edit::CreateCf).collect();
        out.extend(self.live_files().cloned().map(Edit::AddFile));
        out.push(Edit::SetSeq(self.last_sequence));
        out
    }
}

/// Appends edit groups to the manifest, fsyncing each one.
pub struct ManifestWriter {
    file: File,
    path: PathBuf,
}

impl ManifestWriter {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log_group(&mut self, edits: &[Edit]) -> Result<()> {
        let mut line = encode_group(edits);
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    /// Writes only the first `keep` bytes of the group's line, as a crash
    /// in the middle of the write would.
    pub fn log_group_torn(&mut self, edits: &[Edit], keep: usize) -> Result<()> {
        let line = encode_group(edits);
        let keep = keep.min(line.len());
        self.file.write_all(&line.as_bytes()[..keep])?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Reads `dir/MANIFEST`. Returns `None` if there is no manifest.
pub fn recover(dir: &Path) -> Result<Option<ManifestState>> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(p) => &bytes[..=p],
        None => &[][..],
    };
    let text = std::str::from_utf8(complete)
        .map_err(|_| Error::CorruptManifest { line: 0, reason: "not UTF-8".into() })?;
    let mut state = ManifestState::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let edits = decode_group(line).map_err(|reason| Error::CorruptManifest { line: i + 1, reason })?;
        state.apply_group(&edits).map_err(|reason| Error::CorruptManifest { line: i + 1, reason })?;
    }
    Ok(Some(state))
}

/// Replaces the manifest with a compact snapshot of `state` and returns a
/// writer appending to it.
pub fn write_snapshot(dir: &Path, state: &ManifestState) -> Result<ManifestWriter> {
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let path = dir.join(MANIFEST_FILE);
    {
        let mut f = File::create(&tmp)?;
        let mut buf = String::new();
        for e in state.snapshot_edits() {
            buf.push_str(&e.encode());
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    sync_dir(dir)?;
    let file = OpenOptions::new().append(true).open(&path)?;
    Ok(ManifestWriter { file, path })
}

pub fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}
