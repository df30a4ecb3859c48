//! Query workloads Q1..Q7.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telsm_core::Value;

use crate::dist::{KeyDist, Zipfian};
use crate::latency::LatencyStats;
use crate::setup::{Bed, TABLE};
use crate::synth::{self, synth_row, KEY_SPACE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Query {
    /// Insert a new row.
    Q1,
    /// Max of one column over a key range.
    Q2,
    /// One column of one key.
    Q3,
    /// Max of the indexed column over a value range.
    Q4,
    /// Full rows with a given indexed value.
    Q5,
    /// Full rows over a key range.
    Q6,
    /// Full row of one key.
    Q7,
}

impl Query {
    pub const ALL: [Query; 7] = [Query::Q1, Query::Q2, Query::Q3, Query::Q4, Query::Q5, Query::Q6, Query::Q7];
}

impl FromStr for Query {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Query> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "q1" | "write" | "insert" => Query::Q1,
            "q2" => Query::Q2,
            "q3" => Query::Q3,
            "q4" => Query::Q4,
            "q5" => Query::Q5,
            "q6" => Query::Q6,
            "q7" => Query::Q7,
            other => bail!("unknown workload `{other}`"),
        })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Clone, Debug)]
pub enum Stop {
    /// Operations per client.
    Ops(u64),
    Duration(Duration),
}

#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    pub query: Query,
    pub clients: usize,
    pub stop: Stop,
    /// Zipfian theta; `None` for uniform keys.
    pub theta: Option<f64>,
    /// Expected rows per range query.
    pub range_width: u64,
    /// Column read by Q2/Q3.
    pub column: String,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct WorkloadResult {
    pub query: Query,
    pub stats: LatencyStats,
    /// Rows returned over all operations.
    pub rows: u64,
    /// Q4/Q5 ran as full scans because the bed has no index.
    pub scan_fallback: bool,
    /// Order-insensitive digest of every result, for determinism checks.
    pub digest: u64,
}

impl fmt::Display for WorkloadResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "workload={} {} rows={}", self.query, self.stats, self.rows)?;
        if self.scan_fallback {
            write!(f, " mode=scan-fallback")?;
        }
        Ok(())
    }
}

fn value_digest(v: &Value) -> u64 {
    match v {
        Value::U64(n) => *n,
        Value::Str(s) => s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)),
    }
}

fn max_u64<'a>(vals: impl Iterator<Item = &'a Value>) -> Option<u64> {
    vals.filter_map(|v| if let Value::U64(n) = v { Some(*n) } else { None }).max()
}

/// Runs `spec` against `bed`; each client owns a PRNG stream derived from the seed.
pub fn run_workload(bed: &Bed, spec: &WorkloadSpec) -> Result<WorkloadResult> {
    let records = bed.record_count();
    if records == 0 && spec.query != Query::Q1 {
        bail!("{} needs a loaded bed", spec.query);
    }
    let dist = match spec.theta {
        Some(t) if records > 0 => KeyDist::Zipfian(Zipfian::new(records, t)),
        _ => KeyDist::Uniform(records.max(1)),
    };
    let col = bed.schema.column_index(&spec.column)?;
    let icol = bed.index_column();
    let scan_fallback = matches!(spec.query, Query::Q4 | Query::Q5) && !bed.has_index();
    let key_stride = KEY_SPACE / records.max(1);
    let value_stride = u64::MAX / records.max(1);
    let icol_name = bed.schema.columns()[icol].name.clone();

    let one = |rng: &mut ChaCha8Rng| -> Result<(u64, u64)> {
        Ok(match spec.query {
            Query::Q1 => {
                let i = bed.records.fetch_add(1, Ordering::Relaxed);
                bed.insert(i)?;
                (0, i)
            }
            Query::Q2 => {
                let lo = synth::key_number(dist.sample(rng));
                let hi = lo.saturating_add(spec.range_width * key_stride).min(KEY_SPACE);
                let vals = bed.range_column(&synth::format_key(lo), &synth::format_key(hi), col)?;
                (vals.len() as u64, max_u64(vals.iter().map(|(_, v)| v)).unwrap_or(0))
            }
            Query::Q3 => {
                let k = synth::key(dist.sample(rng));
                let v = bed.get_column(&k, col)?;
                (u64::from(v.is_some()), v.as_ref().map_or(0, value_digest))
            }
            Query::Q4 => {
                let lo: u64 = rng.gen();
                let hi = lo.saturating_add(spec.range_width * value_stride);
                let in_range = |v: &Value| matches!(v, Value::U64(n) if *n >= lo && *n < hi);
                let vals: Vec<Value> = if scan_fallback {
                    bed.scan_filter(icol, in_range)?.into_iter().map(|(_, mut r)| r.values.swap_remove(icol)).collect()
                } else {
                    bed.db
                        .read_index_range(TABLE, &icol_name, &Value::U64(lo), &Value::U64(hi), Some(&icol_name))?
                        .into_iter()
                        .map(|mut h| h.row.values.remove(0))
                        .collect()
                };
                (vals.len() as u64, max_u64(vals.iter()).unwrap_or(0))
            }
            Query::Q5 => {
                let i = dist.sample(rng);
                let target = synth_row(bed.seed, i, &bed.schema).1.values[icol].clone();
                let rows: Vec<(Vec<u8>, telsm_core::Row)> = if scan_fallback {
                    bed.scan_filter(icol, |v| *v == target)?
                } else {
                    bed.db.read_index_point(TABLE, &icol_name, &target, None)?.into_iter().map(|h| (h.key, h.row)).collect()
                };
                let d = rows.iter().fold(0u64, |h, (k, r)| h ^ value_digest(&r.values[0]) ^ k.len() as u64);
                (rows.len() as u64, d)
            }
            Query::Q6 => {
                let lo = synth::key_number(dist.sample(rng));
                let hi = lo.saturating_add(spec.range_width * key_stride).min(KEY_SPACE);
                let rows = bed.range_full(&synth::format_key(lo), &synth::format_key(hi))?;
                let d = rows.iter().fold(0u64, |h, (_, r)| h.wrapping_add(value_digest(&r.values[col])));
                (rows.len() as u64, d)
            }
            Query::Q7 => {
                let k = synth::key(dist.sample(rng));
                let r = bed.get_full(&k)?;
                (u64::from(r.is_some()), r.map_or(0, |r| value_digest(&r.values[col])))
            }
        })
    };

    let t0 = Instant::now();
    let per_client: Vec<Result<(Vec<Duration>, u64, u64)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..spec.clients.max(1))
            .map(|c| {
                let one = &one;
                s.spawn(move || -> Result<(Vec<Duration>, u64, u64)> {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (c as u64).wrapping_mul(0xA076_1D64_78BD_642F));
                    let mut lat = Vec::new();
                    let (mut rows, mut digest) = (0u64, 0u64);
                    loop {
                        match spec.stop {
                            Stop::Ops(n) if lat.len() as u64 >= n => break,
                            Stop::Duration(d) if t0.elapsed() >= d => break,
                            _ => {}
                        }
                        let start = Instant::now();
                        let (r, d) = one(&mut rng)?;
                        lat.push(start.elapsed());
                        rows += r;
                        digest = digest.wrapping_add(d);
                    }
                    Ok((lat, rows, digest))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| bail!("client panicked"))).collect()
    });
    let elapsed = t0.elapsed();
    let mut samples = Vec::new();
    let (mut rows, mut digest) = (0, 0u64);
    for r in per_client {
        let (lat, n, d) = r?;
        samples.extend(lat);
        rows += n;
        digest = digest.wrapping_add(d);
    }
    if spec.query == Query::Q1 {
        bed.save_meta()?;
    }
    Ok(WorkloadResult { query: spec.query, stats: LatencyStats::from_samples(&samples, elapsed), rows, scan_fallback, digest })
}
