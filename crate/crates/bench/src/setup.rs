//! Test beds: an engine plus the way rows are written into it.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use telsm_core::codec;
use telsm_core::config::{parse_bool, parse_num, read_kv_file, KvEntry};
use telsm_core::transform::{index_value_bytes, parse_pipeline, TransformerSpec};
use telsm_core::{Engine, EngineConfig, RecordFormat, Row, Schema, Value};

use crate::synth::{self, synth_row};

pub const TABLE: &str = "t";
const META_FILE: &str = "BENCH_META";

/// How data reaches the store.
#[derive(Clone, Debug, PartialEq)]
pub enum Setup {
    /// No transformation.
    Plain { format: RecordFormat },
    /// Transformations embedded in compaction.
    Embedded { format: RecordFormat, pipeline: Vec<TransformerSpec> },
    /// Column groups written to separate tables by the client.
    ExternalSplit { group: usize },
    /// Text records re-encoded as packed by the client before writing.
    ExternalConvert,
    /// The client maintains a secondary index table on every write.
    ExternalAugment,
}

impl Setup {
    /// Named presets: `baseline`, `baseline-text`, `identity`, `split`,
    /// `convert`, `augment`, `split-convert`, `ext-split`, `ext-convert`,
    /// `ext-augment`.
    pub fn preset(name: &str, group: usize, index_column: &str) -> Result<Setup> {
        use RecordFormat::*;
        let split = TransformerSpec::Split { target_group_size: group };
        let convert = TransformerSpec::Convert { from: Text, to: Packed };
        Ok(match name {
            "baseline" => Setup::Plain { format: Packed },
            "baseline-text" => Setup::Plain { format: Text },
            "identity" => Setup::Embedded { format: Packed, pipeline: vec![TransformerSpec::Identity] },
            "split" => Setup::Embedded { format: Packed, pipeline: vec![split] },
            "convert" => Setup::Embedded { format: Text, pipeline: vec![convert] },
            "augment" => Setup::Embedded {
                format: Packed,
                pipeline: vec![TransformerSpec::Augment { columns: vec![index_column.to_string()] }],
            },
            "split-convert" => Setup::Embedded { format: Text, pipeline: vec![split, convert] },
            "ext-split" => Setup::ExternalSplit { group },
            "ext-convert" => Setup::ExternalConvert,
            "ext-augment" => Setup::ExternalAugment,
            other => bail!("unknown setup `{other}`"),
        })
    }

    /// Format of the records clients hand over.
    pub fn input_format(&self) -> RecordFormat {
        match self {
            Setup::Plain { format } | Setup::Embedded { format, .. } => *format,
            Setup::ExternalConvert => RecordFormat::Text,
            Setup::ExternalSplit { .. } | Setup::ExternalAugment => RecordFormat::Packed,
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setup::Plain { format } => write!(f, "plain({format})"),
            Setup::Embedded { format, pipeline } => {
                let p: Vec<String> = pipeline.iter().map(ToString::to_string).collect();
                write!(f, "embedded({format}; {})", p.join(", "))
            }
            Setup::ExternalSplit { group } => write!(f, "external-split({group})"),
            Setup::ExternalConvert => write!(f, "external-convert"),
            Setup::ExternalAugment => write!(f, "external-augment"),
        }
    }
}

/// Everything a bench run needs besides the workload.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub engine: EngineConfig,
    pub setup: Setup,
    pub columns: usize,
    pub records: u64,
    pub seed: u64,
    pub index_column: String,
    /// Column read by Q2/Q3 (and aggregated by Q2/Q4).
    pub column: String,
    pub range_width: u64,
    pub theta: f64,
    pub uniform: bool,
    pub clients: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            engine: EngineConfig::default(),
            setup: Setup::Plain { format: RecordFormat::Packed },
            columns: 50,
            // 50 columns pack to ~840 bytes; this is ~1 GiB
            records: 1_300_000,
            seed: 42,
            index_column: "c2".into(),
            column: "c2".into(),
            range_width: 100,
            theta: 0.99,
            uniform: false,
            clients: 8,
        }
    }
}

impl BenchConfig {
    pub fn from_file(path: &Path) -> Result<BenchConfig> {
        let mut cfg = BenchConfig::default();
        cfg.apply(read_kv_file(path)?)?;
        Ok(cfg)
    }

    /// Engine keys go to the engine config; the rest are bench keys.
    pub fn apply(&mut self, kv: Vec<KvEntry>) -> Result<()> {
        let rest = self.engine.apply(kv)?;
        let mut preset: Option<String> = None;
        let mut pipeline: Option<Vec<TransformerSpec>> = None;
        let mut format: Option<RecordFormat> = None;
        let mut group = 4;
        for e in rest {
            let (v, line) = (e.value.as_str(), e.line);
            match e.key.as_str() {
                "setup" => preset = Some(v.to_string()),
                "transformers" => pipeline = Some(parse_pipeline(v)?),
                "format" => format = Some(v.parse::<RecordFormat>().with_context(|| format!("line {line}"))?),
                "split_group" => group = parse_num(v, line)?,
                "columns" => self.columns = parse_num(v, line)?,
                "records" => self.records = parse_num(v, line)?,
                "seed" => self.seed = parse_num(v, line)?,
                "index_column" => self.index_column = v.to_string(),
                "column" => self.column = v.to_string(),
                "range_width" => self.range_width = parse_num(v, line)?,
                "zipf_theta" | "theta" => self.theta = parse_num(v, line)?,
                "uniform_keys" => self.uniform = parse_bool(v, line)?,
                "clients" => self.clients = parse_num(v, line)?,
                other => bail!("line {line}: unknown key `{other}`"),
            }
        }
        if let Some(p) = preset {
            self.setup = Setup::preset(&p, group, &self.index_column)?;
        }
        if let Some(pipeline) = pipeline {
            let format = format.unwrap_or(RecordFormat::Packed);
            self.setup = if pipeline.is_empty() { Setup::Plain { format } } else { Setup::Embedded { format, pipeline } };
        } else if let Some(f) = format {
            match &mut self.setup {
                Setup::Plain { format } | Setup::Embedded { format, .. } => *format = f,
                _ => bail!("`format` does not apply to external setups"),
            }
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            bail!("zipf_theta must be in (0, 1]");
        }
        if self.clients == 0 {
            bail!("clients must be >= 1");
        }
        Ok(())
    }
}

/// An open engine prepared for one setup.
pub struct Bed {
    pub db: Engine,
    pub setup: Setup,
    pub schema: Schema,
    pub seed: u64,
    /// Records present after loading; Q1 appends after these.
    pub records: Arc<AtomicU64>,
    index_col: usize,
    groups: Vec<(String, std::ops::Range<usize>)>,
}

impl Bed {
    /// Opens (and on first use creates) the bed described by `cfg`.
    pub fn open(cfg: &BenchConfig) -> Result<Bed> {
        let db = Engine::open(cfg.engine.clone()).context("opening engine")?;
        let schema = synth::schema(cfg.columns);
        let index_col = schema.column_index(&cfg.index_column)?;
        let meta = cfg.engine.data_dir.join(META_FILE);
        let mut groups = Vec::new();
        if let Setup::ExternalSplit { group } = &cfg.setup {
            let mut start = 0;
            while start < schema.len() {
                let end = (start + group).min(schema.len());
                groups.push((format!("{TABLE}_g{}", groups.len()), start..end));
                start = end;
            }
        }
        let records = if db.cf_id(TABLE).is_some() || db.cf_id(&format!("{TABLE}_g0")).is_some() {
            let text = fs::read_to_string(&meta).with_context(|| format!("reading {}", meta.display()))?;
            let (setup, n) = text.trim().split_once('\t').ok_or_else(|| anyhow!("malformed {META_FILE}"))?;
            if setup != cfg.setup.to_string() {
                bail!("bed was created for {setup}, not {}", cfg.setup);
            }
            n.parse()?
        } else {
            create_tables(&db, &cfg.setup, &schema, &groups)?;
            0
        };
        let bed = Bed {
            db,
            setup: cfg.setup.clone(),
            schema,
            seed: cfg.seed,
            records: Arc::new(AtomicU64::new(records)),
            index_col,
            groups,
        };
        bed.save_meta()?;
        Ok(bed)
    }

    pub fn save_meta(&self) -> Result<()> {
        let path = self.db.dir().join(META_FILE);
        fs::write(path, format!("{}\t{}\n", self.setup, self.records.load(Ordering::Relaxed)))?;
        Ok(())
    }

    pub fn record_count(&self) -> u64 {
        self.records.load(Ordering::Relaxed)
    }

    pub fn index_column(&self) -> usize {
        self.index_col
    }

    pub fn has_index(&self) -> bool {
        matches!(&self.setup, Setup::Embedded { pipeline, .. } if pipeline.iter().any(|s| matches!(s, TransformerSpec::Augment { .. })))
    }

    /// Writes the `index`-th synthetic record the way this setup does.
    pub fn insert(&self, index: u64) -> Result<()> {
        let (key, row) = synth_row(self.seed, index, &self.schema);
        self.insert_row(&key, &row)
    }

    pub fn insert_row(&self, key: &[u8], row: &Row) -> Result<()> {
        let db = &self.db;
        match &self.setup {
            Setup::Plain { format: RecordFormat::Packed } | Setup::Embedded { format: RecordFormat::Packed, .. } => {
                db.insert(TABLE, key, row)?
            }
            Setup::Plain { .. } | Setup::Embedded { .. } => {
                // text arrives already encoded
                let text = codec::encode_text(&self.schema, row);
                db.insert_encoded(TABLE, key, text)?
            }
            Setup::ExternalSplit { .. } => {
                for (name, cols) in &self.groups {
                    db.insert(name, key, &Row::new(row.values[cols.clone()].to_vec()))?;
                }
            }
            Setup::ExternalConvert => {
                let text = codec::encode_text(&self.schema, row);
                let packed = codec::reencode(&self.schema, &text, RecordFormat::Text, RecordFormat::Packed)?;
                db.insert_encoded(TABLE, key, packed)?
            }
            Setup::ExternalAugment => {
                let col = &self.schema.columns()[self.index_col].name;
                if let Some(old) = db.read_point_column(TABLE, key, col)? {
                    db.delete(&index_table(), &index_entry(&old, key)?)?;
                }
                db.insert(TABLE, key, row)?;
                db.insert(&index_table(), &index_entry(&row.values[self.index_col], key)?, &Row::new(vec![Value::U64(0)]))?;
            }
        }
        Ok(())
    }

    /// Loads `count` more records with `clients` writer threads and waits
    /// for compactions to settle.
    pub fn load(&self, count: u64, clients: usize) -> Result<LoadReport> {
        let start_index = self.record_count();
        let before = self.db.stats();
        let t0 = Instant::now();
        let next = AtomicU64::new(start_index);
        let end = start_index + count;
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = (0..clients.max(1))
                .map(|_| {
                    s.spawn(|| -> Result<()> {
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= end {
                                return Ok(());
                            }
                            self.insert(i)?;
                        }
                    })
                })
                .collect();
            for h in handles {
                h.join().map_err(|_| anyhow!("loader panicked"))??;
            }
            Ok(())
        })
        .with_context(|| format!("load stopped after about {} records", next.load(Ordering::Relaxed) - start_index))?;
        let ingest = t0.elapsed();
        self.records.store(end, Ordering::Relaxed);
        self.save_meta()?;
        self.db.flush()?;
        self.db.wait_for_compactions()?;
        let after = self.db.stats();
        Ok(LoadReport {
            records: count,
            ingest,
            total: t0.elapsed(),
            bytes_ingested: after.bytes_ingested - before.bytes_ingested,
            bytes_written: (after.bytes_written_flush + after.bytes_written_compaction)
                - (before.bytes_written_flush + before.bytes_written_compaction),
            stall: Duration::from_micros(after.write_stall_micros - before.write_stall_micros),
        })
    }

    /// Full row of `key`; external split beds join their group tables.
    pub fn get_full(&self, key: &[u8]) -> Result<Option<Row>> {
        if self.groups.is_empty() {
            return Ok(self.db.read_point_full(TABLE, key)?);
        }
        let mut values = Vec::with_capacity(self.schema.len());
        for (name, _) in &self.groups {
            match self.db.read_point_full(name, key)? {
                Some(r) => values.extend(r.values),
                None => return Ok(None),
            }
        }
        Ok(Some(Row::new(values)))
    }

    pub fn get_column(&self, key: &[u8], column: usize) -> Result<Option<Value>> {
        let name = &self.schema.columns()[column].name;
        match self.group_of(column) {
            None => Ok(self.db.read_point_column(TABLE, key, name)?),
            Some(g) => Ok(self.db.read_point_column(&self.groups[g].0, key, name)?),
        }
    }

    pub fn range_full(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<(Vec<u8>, Row)>> {
        if self.groups.is_empty() {
            return Ok(self.db.read_range_full(TABLE, lo, hi)?);
        }
        let mut parts = Vec::with_capacity(self.groups.len());
        for (name, _) in &self.groups {
            parts.push(self.db.read_range_full(name, lo, hi)?.into_iter());
        }
        let mut out = Vec::new();
        let mut first = parts.remove(0);
        // group tables are written in lockstep, so rows line up by key
        for (k, mut row) in first.by_ref() {
            for p in &mut parts {
                match p.next() {
                    Some((k2, r)) if k2 == k => row.values.extend(r.values),
                    _ => bail!("group tables disagree at key {}", String::from_utf8_lossy(&k)),
                }
            }
            out.push((k, row));
        }
        Ok(out)
    }

    pub fn range_column(&self, lo: &[u8], hi: &[u8], column: usize) -> Result<Vec<(Vec<u8>, Value)>> {
        let name = &self.schema.columns()[column].name;
        match self.group_of(column) {
            None => Ok(self.db.read_range_column(TABLE, lo, hi, name)?),
            Some(g) => Ok(self.db.read_range_column(&self.groups[g].0, lo, hi, name)?),
        }
    }

    fn group_of(&self, column: usize) -> Option<usize> {
        self.groups.iter().position(|(_, cols)| cols.contains(&column))
    }

    /// Live table bytes across every column family.
    pub fn table_bytes(&self) -> u64 {
        let v = self.db.version();
        v.files.values().map(|f| f.levels.iter().flatten().map(|t| t.meta.file_bytes).sum::<u64>()).sum()
    }

    /// Every row of the table whose `column` satisfies `pred`, by full scan.
    pub fn scan_filter(&self, column: usize, pred: impl Fn(&Value) -> bool) -> Result<Vec<(Vec<u8>, Row)>> {
        let hi = synth::format_key(synth::KEY_SPACE - 1);
        let mut rows = self.range_full(b"", &[hi, vec![0xff]].concat())?;
        rows.retain(|(_, r)| pred(&r.values[column]));
        Ok(rows)
    }
}

fn index_table() -> String {
    format!("{TABLE}_index")
}

fn index_entry(v: &Value, key: &[u8]) -> Result<Vec<u8>> {
    let mut k = index_value_bytes(v)?;
    k.push(0);
    k.extend_from_slice(key);
    Ok(k)
}

fn create_tables(db: &Engine, setup: &Setup, schema: &Schema, groups: &[(String, std::ops::Range<usize>)]) -> Result<()> {
    match setup {
        Setup::Plain { format } => {
            db.create_cf(TABLE, schema.clone(), *format)?;
        }
        Setup::Embedded { format, pipeline } => {
            db.create_cf(TABLE, schema.clone(), *format)?;
            db.link_transformers(TABLE, pipeline)?;
        }
        Setup::ExternalSplit { .. } => {
            for (name, cols) in groups {
                db.create_cf(name, schema.slice(cols.clone()), RecordFormat::Packed)?;
            }
        }
        Setup::ExternalConvert => {
            db.create_cf(TABLE, schema.clone(), RecordFormat::Packed)?;
        }
        Setup::ExternalAugment => {
            db.create_cf(TABLE, schema.clone(), RecordFormat::Packed)?;
            let present = Schema::from_pairs([("present", telsm_core::ColumnType::U64)])?;
            db.create_cf(&index_table(), present, RecordFormat::Packed)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct LoadReport {
    pub records: u64,
    /// Time until the last write was acknowledged.
    pub ingest: Duration,
    /// Including the final flush and compactions.
    pub total: Duration,
    pub bytes_ingested: u64,
    pub bytes_written: u64,
    /// Time writers spent stalled or slowed, summed over clients.
    pub stall: Duration,
}

impl LoadReport {
    pub fn write_amplification(&self) -> f64 {
        self.bytes_written as f64 / self.bytes_ingested.max(1) as f64
    }
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "records={} ingest_secs={:.3} total_secs={:.3} ingest_ops_per_sec={:.1} bytes_ingested={} bytes_written={} write_amp={:.3} stall_secs={:.3}",
            self.records,
            self.ingest.as_secs_f64(),
            self.total.as_secs_f64(),
            self.records as f64 / self.ingest.as_secs_f64().max(1e-9),
            self.bytes_ingested,
            self.bytes_written,
            self.write_amplification(),
            self.stall.as_secs_f64()
        )
    }
}

impl FromStr for Setup {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Setup> {
        Setup::preset(s, 4, "c2")
    }
}
