//! Engine configuration and the flat `key = value` config file format.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MIB: usize = 1024 * 1024;

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    /// Memtable size that triggers a flush (B).
    pub write_buffer_size: usize,
    pub max_write_buffer_number: usize,
    /// Size ratio between adjacent levels (T).
    pub max_bytes_for_level_multiplier: u32,
    /// Level-0 run count that triggers a compaction (Z).
    pub level0_file_num_compaction_trigger: usize,
    pub level0_slowdown_writes_trigger: usize,
    pub level0_stop_writes_trigger: usize,
    pub num_levels: usize,
    pub max_bytes_for_level_base: u64,
    pub target_file_size_base: u64,
    /// Data block size in bytes.
    pub block_size: usize,
    pub bloom_bits_per_key: u32,
    pub block_cache_size: usize,
    pub max_background_compactions: usize,
    /// Accepted for compatibility; jobs always run as a single subcompaction.
    pub max_subcompactions: usize,
    pub wal_sync: bool,
    pub disable_auto_compactions: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let b = 32 * MIB;
        EngineConfig {
            data_dir: PathBuf::from("telsm-data"),
            write_buffer_size: b,
            max_write_buffer_number: 8,
            max_bytes_for_level_multiplier: 4,
            level0_file_num_compaction_trigger: 4,
            level0_slowdown_writes_trigger: 30,
            level0_stop_writes_trigger: 64,
            num_levels: 7,
            max_bytes_for_level_base: 4 * b as u64,
            target_file_size_base: b as u64,
            block_size: 4096,
            bloom_bits_per_key: 10,
            block_cache_size: 64 * MIB,
            max_background_compactions: 4,
            max_subcompactions: 1,
            wal_sync: false,
            disable_auto_compactions: false,
        }
    }
}

impl EngineConfig {
    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        EngineConfig { data_dir: dir.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_bytes_for_level_multiplier < 2 {
            return fail("max_bytes_for_level_multiplier (T) must be >= 2");
        }
        if self.level0_file_num_compaction_trigger < 2 {
            return fail("level0_file_num_compaction_trigger (Z) must be >= 2");
        }
        if self.block_size < 512 {
            return fail("block_size must be >= 512");
        }
        if self.write_buffer_size < MIB {
            return fail("write_buffer_size (B) must be >= 1 MiB");
        }
        if self.num_levels < 2 || self.num_levels > 64 {
            return fail("num_levels must be in 2..=64");
        }
        if self.level0_stop_writes_trigger < self.level0_slowdown_writes_trigger {
            return fail("level0_stop_writes_trigger must be >= level0_slowdown_writes_trigger");
        }
        if self.max_write_buffer_number < 2 {
            return fail("max_write_buffer_number must be >= 2");
        }
        if self.max_background_compactions == 0 {
            return fail("max_background_compactions must be >= 1");
        }
        if self.bloom_bits_per_key == 0 {
            return fail("bloom_bits_per_key must be >= 1");
        }
        Ok(())
    }

    /// Byte budget of level `level` (>= 1): `base * T^(level-1)`.
    pub fn max_bytes_for_level(&self, level: usize) -> u64 {
        let t = u64::from(self.max_bytes_for_level_multiplier);
        (1..level).fold(self.max_bytes_for_level_base, |acc, _| acc.saturating_mul(t))
    }

    /// Applies every engine key found in `kv`, leaving the rest untouched.
    /// Returns the entries that were not engine keys.
    pub fn apply(&mut self, kv: Vec<KvEntry>) -> Result<Vec<KvEntry>> {
        let mut rest = Vec::new();
        for e in kv {
            let v = e.value.as_str();
            let line = e.line;
            match e.key.as_str() {
                "data_dir" => self.data_dir = PathBuf::from(v),
                "write_buffer_size" => self.write_buffer_size = parse_size(v, line)? as usize,
                "max_write_buffer_number" => self.max_write_buffer_number = parse_num(v, line)?,
                "max_bytes_for_level_multiplier" | "size_factor" => {
                    self.max_bytes_for_level_multiplier = parse_num(v, line)?
                }
                "level0_file_num_compaction_trigger" => self.level0_file_num_compaction_trigger = parse_num(v, line)?,
                "level0_slowdown_writes_trigger" => self.level0_slowdown_writes_trigger = parse_num(v, line)?,
                "level0_stop_writes_trigger" => self.level0_stop_writes_trigger = parse_num(v, line)?,
                "num_levels" | "max_levels" => self.num_levels = parse_num(v, line)?,
                "max_bytes_for_level_base" => self.max_bytes_for_level_base = parse_size(v, line)?,
                "target_file_size_base" => self.target_file_size_base = parse_size(v, line)?,
                "block_size" => self.block_size = parse_size(v, line)? as usize,
                "bloom_bits_per_key" => self.bloom_bits_per_key = parse_num(v, line)?,
                "block_cache_size" => self.block_cache_size = parse_size(v, line)? as usize,
                "max_background_compactions" | "background_compaction_workers" => {
                    self.max_background_compactions = parse_num(v, line)?
                }
                "max_subcompactions" => self.max_subcompactions = parse_num(v, line)?,
                "wal_sync" => self.wal_sync = parse_bool(v, line)?,
                "disable_auto_compactions" => self.disable_auto_compactions = parse_bool(v, line)?,
                _ => rest.push(e),
            }
        }
        Ok(rest)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push(KvEntry { key: key.to_string(), value: v.trim().to_string(), line: i + 1 });
    }
    Ok(out)
}

pub fn read_kv_file(path: &Path) -> Result<Vec<KvEntry>> {
    parse_kv(&std::fs::read_to_string(path)?)
}

pub fn parse_num<T: std::str::FromStr>(v: &str, line: usize) -> Result<T> {
    v.replace('_', "")
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: `{v}` is not a valid number")))
}

/// Accepts plain integers, products such as `128 * 1024 * 1024`, and
/// `K`/`M`/`G` (binary) suffixes.
pub fn parse_size(v: &str, line: usize) -> Result<u64> {
    let mut total: u64 = 1;
    for factor in v.split('*') {
        let f = factor.trim().replace('_', "");
        let (digits, mult) = match f.chars().last() {
            Some('K' | 'k') => (&f[..f.len() - 1], 1u64 << 10),
            Some('M' | 'm') => (&f[..f.len() - 1], 1 << 20),
            Some('G' | 'g') => (&f[..f.len() - 1], 1 << 30),
            _ => (f.as_str(), 1),
        };
        let n: u64 = digits
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("line {line}: `{v}` is not a valid size")))?;
        total = total
            .checked_mul(n)
            .and_then(|t| t.checked_mul(mult))
            .ok_or_else(|| Error::Config(format!("line {line}: `{v}` overflows")))?;
    }
    Ok(total)
}

pub fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: `{v}` is not a boolean"))),
    }
}
