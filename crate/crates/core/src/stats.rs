//! Engine statistics counters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::types::CfId;

#[derive(Default)]
pub struct Stats {
    pub bytes_ingested: AtomicU64,
    pub bytes_written_wal: AtomicU64,
    pub bytes_written_flush: AtomicU64,
    pub bytes_read_compaction: AtomicU64,
    pub bytes_written_compaction: AtomicU64,
    pub jobs_tier: AtomicU64,
    pub jobs_level: AtomicU64,
    pub jobs_move: AtomicU64,
    pub flushes: AtomicU64,
    pub write_stall_micros: AtomicU64,
    pub block_reads: AtomicU64,
    pub block_cache_hits: AtomicU64,
    pub bloom_negatives: AtomicU64,
    per_cf: RwLock<HashMap<CfId, Arc<CfCounters>>>,
}

#[derive(Default, Debug)]
pub struct CfCounters {
    pub block_reads: AtomicU64,
    pub bytes_written: AtomicU64,
}

impl Stats {
    pub fn cf(&self, cf: CfId) -> Arc<CfCounters> {
        if let Some(c) = self.per_cf.read().get(&cf) {
            return c.clone();
        }
        self.per_cf.write().entry(cf).or_default().clone()
    }

    pub fn cf_block_reads(&self, cf: CfId) -> u64 {
        self.per_cf.read().get(&cf).map_or(0, |c| c.block_reads.load(Relaxed))
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            bytes_ingested: self.bytes_ingested.load(Relaxed),
            bytes_written_wal: self.bytes_written_wal.load(Relaxed),
            bytes_written_flush: self.bytes_written_flush.load(Relaxed),
            bytes_read_compaction: self.bytes_read_compaction.load(Relaxed),
            bytes_written_compaction: self.bytes_written_compaction.load(Relaxed),
            jobs_tier: self.jobs_tier.load(Relaxed),
            jobs_level: self.jobs_level.load(Relaxed),
            jobs_move: self.jobs_move.load(Relaxed),
            flushes: self.flushes.load(Relaxed),
            write_stall_micros: self.write_stall_micros.load(Relaxed),
            block_reads: self.block_reads.load(Relaxed),
            block_cache_hits: self.block_cache_hits.load(Relaxed),
            bloom_negatives: self.bloom_negatives.load(Relaxed),
            cf_block_reads: self
                .per_cf
                .read()
                .iter()
                .map(|(k, v)| (*k, v.block_reads.load(Relaxed)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub bytes_ingested: u64,
    pub bytes_written_wal: u64,
    pub bytes_written_flush: u64,
    pub bytes_read_compaction: u64,
    pub bytes_written_compaction: u64,
    pub jobs_tier: u64,
    pub jobs_level: u64,
    pub jobs_move: u64,
    pub flushes: u64,
    pub write_stall_micros: u64,
    pub block_reads: u64,
    pub block_cache_hits: u64,
    pub bloom_negatives: u64,
    pub cf_block_reads: BTreeMap<CfId, u64>,
}

impl StatsSnapshot {
    /// Bytes written by flushes and compactions per byte ingested.
    pub fn write_amplification(&self) -> f64 {
        if self.bytes_ingested == 0 {
            return 0.0;
        }
        (self.bytes_written_flush + self.bytes_written_compaction) as f64 / self.bytes_ingested as f64
    }
}

impl fmt::Display for StatsSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bytes_ingested={}", self.bytes_ingested)?;
        writeln!(f, "bytes_written_wal={}", self.bytes_written_wal)?;
        writeln!(f, "bytes_written_flush={}", self.bytes_written_flush)?;
        writeln!(f, "bytes_read_compaction={}", self.bytes_read_compaction)?;
        writeln!(f, "bytes_written_compaction={}", self.bytes_written_compaction)?;
        writeln!(f, "jobs_by_mode.tier={}", self.jobs_tier)?;
        writeln!(f, "jobs_by_mode.level={}", self.jobs_level)?;
        writeln!(f, "jobs_by_mode.move={}", self.jobs_move)?;
        writeln!(f, "flushes={}", self.flushes)?;
        writeln!(f, "write_stall_micros={}", self.write_stall_micros)?;
        writeln!(f, "block_reads={}", self.block_reads)?;
        writeln!(f, "block_cache_hits={}", self.block_cache_hits)?;
        writeln!(f, "bloom_negatives={}", self.bloom_negatives)?;
        write!(f, "write_amplification={:.4}", self.write_amplification())
    }
}
