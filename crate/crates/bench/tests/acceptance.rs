//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion.
//!
//! `TELSM_ACCEPT_SCALE` sets the bed size for the write/read performance
//! checks (bytes, suffixes allowed; default 1GiB).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telsm_bench::latency::nearest_rank;
use telsm_bench::setup::TABLE;
use telsm_bench::synth::{self, synth_row};
use telsm_bench::{overhead, run_workload, BenchConfig, Bed, LatencyStats, Query, Setup, Stop, WorkloadSpec};
use telsm_core::config::{parse_size, MIB};
use telsm_core::transform::{parse_pipeline, TransformerSpec};
use telsm_core::{codec, Engine, EngineConfig, Error, FailPoint, RecordFormat, Row, Schema, Value};
use telsm_cost::*;

type Outcome = (bool, String);
type Oracle = BTreeMap<Vec<u8>, Row>;

fn small_config(dir: &Path) -> EngineConfig {
    EngineConfig {
        write_buffer_size: MIB,
        max_write_buffer_number: 4,
        level0_file_num_compaction_trigger: 2,
        level0_slowdown_writes_trigger: 8,
        level0_stop_writes_trigger: 16,
        max_bytes_for_level_base: 2 * MIB as u64,
        target_file_size_base: MIB as u64,
        block_cache_size: 4 * MIB,
        max_background_compactions: 2,
        ..EngineConfig::with_dir(dir)
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("tempdir")
}

fn insert(db: &Engine, format: RecordFormat, schema: &Schema, key: &[u8], row: &Row) -> telsm_core::Result<()> {
    match format {
        RecordFormat::Packed => db.insert(TABLE, key, row),
        RecordFormat::Text => db.insert_encoded(TABLE, key, codec::encode_text(schema, row)),
    }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    ((got - want) / want).abs() <= tol
}

fn cost_model() -> Outcome {
    let t0 = Instant::now();
    let (mib, tib) = (MIB as f64, MIB as f64 * MIB as f64);
    let write = CostParams {
        total_bytes: 100.0 * tib,
        write_buffer: 64.0 * mib,
        size_factor: 10.0,
        write_bw: 417.0,
        extra_writes: 2,
        ..Default::default()
    };
    let point = |levels: f64| CostParams {
        levels: Some(levels),
        l0_runs: 2.0,
        p_false: 0.01,
        record: 5000.0,
        block_size: 4096.0,
        size_factor: 10.0,
        selectivity: 100.0,
        ..Default::default()
    };
    let checks = [
        ("w_max_cwt", w_max_cwt(&write), 52.75, 0.02),
        ("w_max_tec", w_max_tec(&write), 42.10, 0.02),
        ("pq_convert", pq_cost(&point(6.0).convert(3500.0), PointMode::AllColumns), 1.10, 0.02),
        ("pq_split_row", pq_cost(&point(5.0).split(3), PointMode::AllColumns), 8.13, 0.02),
        ("pq_split_col", pq_cost(&point(5.0).split(3), PointMode::OneColumn), 1.13, 0.02),
        ("pq_cwt", pq_cost(&point(6.0), PointMode::AllColumns), 2.08, 0.02),
        ("rq_cwt", rq_cost_cwt(&point(6.0)), 138.88, 0.05),
        ("rq_convert", rq_cost_tec(&point(6.0).convert(3500.0)), 97.78, 0.05),
        ("rq_split", rq_cost_tec(&point(5.0).split(3)), 17.78, 0.05),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, got, want, tol) in checks {
        ok &= within(got, want, tol);
        detail.push(format!("{name}={got:.3}/{want}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    (ok, format!("{} runtime={secs:.4}s", detail.join(" ")))
}

/// Compares every read path against the reference map.
fn check_reads(db: &Engine, schema: &Schema, oracle: &Oracle, keys: &[Vec<u8>], rng: &mut ChaCha8Rng) -> Result<(), String> {
    let all = db.read_range_full(TABLE, b"", b"\xff").map_err(|e| e.to_string())?;
    if all.len() != oracle.len() || !all.iter().zip(oracle).all(|(a, b)| &a.0 == b.0 && &a.1 == b.1) {
        return Err(format!("full range: {} rows vs {} expected", all.len(), oracle.len()));
    }
    for _ in 0..2_000 {
        let k = &keys[rng.gen_range(0..keys.len())];
        let got = db.read_point_full(TABLE, k).map_err(|e| e.to_string())?;
        if got.as_ref() != oracle.get(k) {
            return Err(format!("point {}", String::from_utf8_lossy(k)));
        }
        let c = rng.gen_range(0..schema.len());
        let got = db.read_point_column(TABLE, k, &schema.columns()[c].name).map_err(|e| e.to_string())?;
        if got.as_ref() != oracle.get(k).map(|r| &r.values[c]) {
            return Err(format!("point column c{c} of {}", String::from_utf8_lossy(k)));
        }
    }
    for _ in 0..20 {
        let mut a = keys[rng.gen_range(0..keys.len())].clone();
        let mut b = keys[rng.gen_range(0..keys.len())].clone();
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let want: Vec<(&Vec<u8>, &Row)> = oracle.range(a.clone()..b.clone()).collect();
        let full = db.read_range_full(TABLE, &a, &b).map_err(|e| e.to_string())?;
        if full.len() != want.len() || !full.iter().zip(&want).all(|(x, y)| &x.0 == y.0 && &x.1 == y.1) {
            return Err("range full".into());
        }
        let c = rng.gen_range(0..schema.len());
        let col = db.read_range_column(TABLE, &a, &b, &schema.columns()[c].name).map_err(|e| e.to_string())?;
        if col.len() != want.len() || !col.iter().zip(&want).all(|(x, y)| &x.0 == y.0 && x.1 == y.1.values[c]) {
            return Err(format!("range column c{c}"));
        }
    }
    Ok(())
}

struct OracleRun {
    ops: u64,
    checkpoints: usize,
    tierveling: Result<(), String>,
}

fn oracle_run(pipeline: &str, format: RecordFormat, seed: u64) -> Result<OracleRun, String> {
    const OPS: u64 = 120_000;
    const KEYS: u64 = 30_000;
    let dir = tmp();
    let schema = synth::schema(32);
    let keys: Vec<Vec<u8>> = (0..KEYS).map(synth::key).collect();
    let open = || Engine::open(small_config(dir.path())).map_err(|e| e.to_string());
    let mut db = open()?;
    db.create_cf(TABLE, schema.clone(), format).map_err(|e| e.to_string())?;
    db.link_transformers(TABLE, &parse_pipeline(pipeline).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = Oracle::new();
    let mut checkpoints = 0;
    for op in 0..OPS {
        let k = &keys[rng.gen_range(0..KEYS) as usize];
        if rng.gen_bool(0.05) {
            db.delete(TABLE, k).map_err(|e| e.to_string())?;
            oracle.remove(k);
        } else {
            let (_, row) = synth_row(seed, op + KEYS, &schema);
            insert(&db, format, &schema, k, &row).map_err(|e| e.to_string())?;
            oracle.insert(k.clone(), row);
        }
        if op % 20_000 == 19_999 {
            match checkpoints % 3 {
                0 => db.flush().map_err(|e| e.to_string())?,
                1 => db.compact_all().map_err(|e| e.to_string())?,
                _ => {
                    drop(db);
                    db = open()?;
                }
            }
            check_reads(&db, &schema, &oracle, &keys, &mut rng).map_err(|e| format!("checkpoint {checkpoints}: {e}"))?;
            checkpoints += 1;
        }
    }
    db.flush().map_err(|e| e.to_string())?;
    db.wait_for_compactions().map_err(|e| e.to_string())?;
    let mut tierveling = db.version().check_tierveling();
    db.compact_all().map_err(|e| e.to_string())?;
    if tierveling.is_ok() {
        tierveling = db.version().check_tierveling();
    }
    check_reads(&db, &schema, &oracle, &keys, &mut rng).map_err(|e| format!("final: {e}"))?;
    Ok(OracleRun { ops: OPS, checkpoints: checkpoints + 1, tierveling })
}

const CONFIGS: [(&str, &str, RecordFormat); 5] = [
    ("identity", "identity", RecordFormat::Packed),
    ("split", "split(target_group_size=4)", RecordFormat::Packed),
    ("convert", "convert(text,packed)", RecordFormat::Text),
    ("augment", "augment(c2)", RecordFormat::Packed),
    ("split+convert", "split(target_group_size=4),convert(text,packed)", RecordFormat::Text),
];

fn oracle_equivalence() -> (Outcome, Outcome) {
    let mut ok = true;
    let mut tier_ok = true;
    let mut detail = Vec::new();
    let mut tier_detail = Vec::new();
    for (i, (name, pipeline, format)) in CONFIGS.iter().enumerate() {
        match oracle_run(pipeline, *format, 100 + i as u64) {
            Ok(r) => {
                detail.push(format!("{name}:ops={},checkpoints={}", r.ops, r.checkpoints));
                match r.tierveling {
                    Ok(()) => tier_detail.push(format!("{name}:ok")),
                    Err(e) => {
                        tier_ok = false;
                        tier_detail.push(format!("{name}:{e}"));
                    }
                }
            }
            Err(e) => {
                ok = false;
                tier_ok = false;
                detail.push(format!("{name}:{e}"));
            }
        }
    }
    ((ok, detail.join(" ")), (tier_ok, tier_detail.join(" ")))
}

fn split_reconstruction() -> Outcome {
    const ROWS: u64 = 50_000;
    let dir = tmp();
    let schema = synth::schema(32);
    let run = || -> Result<String, String> {
        let db = Engine::open(small_config(dir.path())).map_err(|e| e.to_string())?;
        db.create_cf(TABLE, schema.clone(), RecordFormat::Packed).map_err(|e| e.to_string())?;
        db.link_transformers(TABLE, &[TransformerSpec::Split { target_group_size: 4 }]).map_err(|e| e.to_string())?;
        for i in 0..ROWS {
            let (k, r) = synth_row(7, i, &schema);
            db.insert(TABLE, &k, &r).map_err(|e| e.to_string())?;
        }
        db.compact_all().map_err(|e| e.to_string())?;
        let v = db.version();
        let mut leaves = 0;
        for d in db.column_families() {
            let files = v.files(d.id);
            if d.has_transformer() && files.file_count() > 0 {
                return Err(format!("`{}` still holds {} files", d.name, files.file_count()));
            }
            if !d.has_transformer() {
                leaves += 1;
                if db.scan_cf(&d.name).map_err(|e| e.to_string())?.len() as u64 != ROWS {
                    return Err(format!("leaf `{}` is missing rows", d.name));
                }
            }
        }
        for i in 0..ROWS {
            let (k, r) = synth_row(7, i, &schema);
            let got = db.read_point_full(TABLE, &k).map_err(|e| e.to_string())?.ok_or("missing row")?;
            let same = codec::encode_packed(&schema, &got).map_err(|e| e.to_string())?
                == codec::encode_packed(&schema, &r).map_err(|e| e.to_string())?;
            if !same {
                return Err(format!("row {i} differs"));
            }
        }
        Ok(format!("rows={ROWS} leaves={leaves}"))
    };
    match run() {
        Ok(d) => (true, d),
        Err(e) => (false, e),
    }
}

fn sst_files_on_disk(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(".sst")).count())
        .unwrap_or(0)
}

fn crash_safety() -> Outcome {
    const KEYS: u64 = 3_000;
    const TARGET_PER_POINT: usize = 26;
    let dir = tmp();
    let schema = synth::schema(16);
    let points = [FailPoint::WalAppend, FailPoint::FlushInstall, FailPoint::CompactionOutput, FailPoint::ManifestInstall];
    let mut fired = [0usize; 4];
    let mut oracle = Oracle::new();
    let mut acked = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut life = 0u64;
    let run = |fired: &mut [usize; 4], oracle: &mut Oracle, acked: &mut u64, rng: &mut ChaCha8Rng, life: &mut u64| -> Result<(), String> {
        while fired.iter().any(|&f| f < TARGET_PER_POINT) && *life < 400 {
            let db = Engine::open(small_config(dir.path())).map_err(|e| format!("life {life}: reopen: {e}"))?;
            if *life == 0 {
                db.create_cf(TABLE, schema.clone(), RecordFormat::Text).map_err(|e| e.to_string())?;
                db.link_transformers(TABLE, &parse_pipeline("split(target_group_size=4),convert(text,packed)").unwrap())
                    .map_err(|e| e.to_string())?;
            }
            // recovery must restore exactly what was acknowledged
            let all = db.read_range_full(TABLE, b"", b"\xff").map_err(|e| e.to_string())?;
            if all.len() != oracle.len() || !all.iter().zip(oracle.iter()).all(|(a, b)| &a.0 == b.0 && &a.1 == b.1) {
                return Err(format!("life {life}: {} rows recovered, {} acknowledged", all.len(), oracle.len()));
            }
            if db.last_sequence() != *acked {
                return Err(format!("life {life}: sequence {} after {} acknowledged writes", db.last_sequence(), acked));
            }
            db.version().check_tierveling().map_err(|e| format!("life {life}: {e}"))?;
            // outputs of running jobs are on disk before they are installed
            db.wait_for_compactions().map_err(|e| e.to_string())?;
            let live: usize = db.column_families().iter().map(|d| db.version().files(d.id).file_count()).sum();
            if live != sst_files_on_disk(dir.path()) {
                return Err(format!("life {life}: {live} live tables, {} on disk", sst_files_on_disk(dir.path())));
            }

            let open: Vec<usize> = (0..4).filter(|&i| fired[i] < TARGET_PER_POINT).collect();
            let p = open[rng.gen_range(0..open.len())];
            let after = match points[p] {
                FailPoint::WalAppend => rng.gen_range(1..4_000),
                FailPoint::FlushInstall => rng.gen_range(1..4),
                FailPoint::CompactionOutput => rng.gen_range(1..4),
                FailPoint::ManifestInstall => rng.gen_range(1..10),
            };
            db.arm_failpoint(points[p], after, rng.gen_range(0..64));
            let mut crashed = false;
            for op in 0..25_000u64 {
                let k = synth::key(rng.gen_range(0..KEYS));
                let res = if rng.gen_bool(0.1) {
                    db.delete(TABLE, &k).map(|()| None)
                } else {
                    let (_, row) = synth_row(*life, op, &schema);
                    insert(&db, RecordFormat::Text, &schema, &k, &row).map(|()| Some(row))
                };
                match res {
                    Ok(Some(row)) => {
                        oracle.insert(k, row);
                        *acked += 1;
                    }
                    Ok(None) => {
                        oracle.remove(&k);
                        *acked += 1;
                    }
                    Err(Error::Crashed) => {
                        crashed = true;
                        break;
                    }
                    Err(e) => return Err(format!("life {life}: write: {e}")),
                }
                if op % 1_500 == 1_499 && db.flush().is_err() {
                    crashed = db.is_crashed();
                    break;
                }
            }
            crashed |= db.is_crashed();
            if crashed {
                fired[p] += 1;
            } else {
                db.disarm_failpoint();
            }
            *life += 1;
        }
        Ok(())
    };
    let res = run(&mut fired, &mut oracle, &mut acked, &mut rng, &mut life);
    // the final state must also recover
    let final_check = res.and_then(|()| {
        let db = Engine::open(small_config(dir.path())).map_err(|e| e.to_string())?;
        let n = db.read_range_full(TABLE, b"", b"\xff").map_err(|e| e.to_string())?.len();
        if n != oracle.len() || db.last_sequence() != acked {
            return Err("final reopen differs".into());
        }
        Ok(())
    });
    let total: usize = fired.iter().sum();
    let detail = format!(
        "kills={total} wal={} flush={} compaction={} manifest={} lives={life} acked_writes={acked}",
        fired[0], fired[1], fired[2], fired[3]
    );
    match final_check {
        Ok(()) => (total >= 100 && fired.iter().all(|&f| f > 0), detail),
        Err(e) => (false, format!("{e}; {detail}")),
    }
}

fn bench_config(dir: &Path, setup: &str, columns: usize) -> BenchConfig {
    let mut cfg = BenchConfig { columns, records: 0, ..BenchConfig::default() };
    cfg.engine.data_dir = dir.to_path_buf();
    cfg.setup = Setup::preset(setup, 4, "c2").expect("preset");
    cfg
}

fn index_correctness() -> Outcome {
    const ROWS: u64 = 1_000_000;
    const OVERWRITES: u64 = 10_000;
    let dir = tmp();
    let bed = Bed::open(&bench_config(dir.path(), "augment", 8)).expect("bed");
    let icol = bed.index_column();
    let seed = bed.seed;
    let run = || -> Result<String, String> {
        bed.load(ROWS, 8).map_err(|e| e.to_string())?;
        // overwrite some rows so that stale index entries exist
        let mut current: Vec<u64> = (0..ROWS).collect();
        for j in 0..OVERWRITES {
            let i = j * (ROWS / OVERWRITES);
            let (k, _) = synth_row(seed, i, &bed.schema);
            let (_, row) = synth_row(seed, ROWS + i, &bed.schema);
            bed.insert_row(&k, &row).map_err(|e| e.to_string())?;
            current[i as usize] = ROWS + i;
        }
        bed.db.flush().map_err(|e| e.to_string())?;
        bed.db.wait_for_compactions().map_err(|e| e.to_string())?;

        // independent oracle: (value, key, generator index) sorted by value then key
        let value_of = |g: u64| match &synth_row(seed, g, &bed.schema).1.values[icol] {
            Value::U64(v) => *v,
            Value::Str(_) => unreachable!("index column is numeric"),
        };
        let mut by_value: Vec<(u64, Vec<u8>, u64)> =
            current.iter().enumerate().map(|(i, &g)| (value_of(g), synth::key(i as u64), g)).collect();
        by_value.sort();
        let expect = |lo: u64, hi: u64| {
            let a = by_value.partition_point(|e| e.0 < lo);
            let b = by_value.partition_point(|e| e.0 < hi);
            &by_value[a..b]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut point_lat = Vec::new();
        let mut hits = 0usize;
        let mut probes = Vec::new();
        for n in 0..300 {
            let v = match n % 6 {
                // a value that was overwritten away
                0 => value_of(rng.gen_range(0..OVERWRITES) * (ROWS / OVERWRITES)),
                1 => rng.gen(),
                _ => by_value[rng.gen_range(0..by_value.len())].0,
            };
            probes.push(v);
        }
        for &v in &probes {
            let t = Instant::now();
            let got = bed.db.read_index_point(TABLE, "c2", &Value::U64(v), None).map_err(|e| e.to_string())?;
            point_lat.push(t.elapsed());
            let want = expect(v, v.saturating_add(1));
            let want = if v == u64::MAX { &by_value[by_value.partition_point(|e| e.0 < v)..] } else { want };
            if got.len() != want.len() {
                return Err(format!("point {v}: {} hits, {} expected", got.len(), want.len()));
            }
            for (h, w) in got.iter().zip(want) {
                if h.key != w.1 || h.row != synth_row(seed, w.2, &bed.schema).1 {
                    return Err(format!("point {v}: wrong row"));
                }
            }
            hits += got.len();
        }
        let width = 50 * (u64::MAX / ROWS);
        let mut range_rows = 0usize;
        for _ in 0..100 {
            let lo: u64 = rng.gen_range(0..u64::MAX - width);
            let got = bed
                .db
                .read_index_range(TABLE, "c2", &Value::U64(lo), &Value::U64(lo + width), None)
                .map_err(|e| e.to_string())?;
            let want = expect(lo, lo + width);
            if got.len() != want.len() || !got.iter().zip(want).all(|(h, w)| h.key == w.1) {
                return Err(format!("range from {lo}: {} hits, {} expected", got.len(), want.len()));
            }
            range_rows += got.len();
        }
        // full-scan filter oracle, timed
        let mut scan_lat = Vec::new();
        for &v in probes.iter().skip(2).step_by(6).take(3) {
            let t = Instant::now();
            let scanned = bed.scan_filter(icol, |x| *x == Value::U64(v)).map_err(|e| e.to_string())?;
            scan_lat.push(t.elapsed());
            let got = bed.db.read_index_point(TABLE, "c2", &Value::U64(v), None).map_err(|e| e.to_string())?;
            if scanned.len() != got.len() || !scanned.iter().zip(&got).all(|(s, h)| s.0 == h.key && s.1 == h.row) {
                return Err(format!("index and scan disagree for {v}"));
            }
        }
        let p50 = |l: &[Duration]| {
            let mut us: Vec<f64> = l.iter().map(|d| d.as_secs_f64() * 1e6).collect();
            us.sort_by(f64::total_cmp);
            nearest_rank(&us, 0.5)
        };
        let (ip, sp) = (p50(&point_lat), p50(&scan_lat));
        let ratio = sp / ip;
        let detail = format!(
            "rows={ROWS} point_probes=300 hits={hits} range_probes=100 range_rows={range_rows} index_p50_us={ip:.1} scan_p50_us={sp:.0} ratio={ratio:.0}"
        );
        if ratio < 100.0 {
            return Err(format!("index is not 100x faster: {detail}"));
        }
        Ok(detail)
    };
    match run() {
        Ok(d) => (true, d),
        Err(e) => (false, e),
    }
}

struct BedResult {
    /// Client-observed Q1.
    write: LatencyStats,
    /// Q1 operations over the window plus the time to drain its compactions.
    sustained: f64,
    reads: BTreeMap<Query, f64>,
    table_bytes: u64,
}

fn scale_bytes() -> u64 {
    std::env::var("TELSM_ACCEPT_SCALE").ok().map(|v| parse_size(&v, 0).expect("TELSM_ACCEPT_SCALE")).unwrap_or(1024 * MIB as u64)
}

fn workload(query: Query, clients: usize, ops: u64, seed: u64) -> WorkloadSpec {
    WorkloadSpec { query, clients, stop: Stop::Ops(ops), theta: Some(0.99), range_width: 100, column: "c2".into(), seed }
}

fn measure_bed(setup: &'static str, records: u64, reads: bool) -> Result<BedResult, String> {
    let dir = tmp();
    let bed = Bed::open(&bench_config(dir.path(), setup, 32)).map_err(|e| e.to_string())?;
    // half is preloaded; Q1 with 8 clients writes the other half
    let load = bed.load(records / 2, 8).map_err(|e| e.to_string())?;
    let q1 = run_workload(&bed, &workload(Query::Q1, 8, records / 2 / 8, 1)).map_err(|e| e.to_string())?;
    // nothing stalls at this scale, so count the compaction debt the window left behind
    let t = Instant::now();
    bed.db.flush().map_err(|e| e.to_string())?;
    bed.db.wait_for_compactions().map_err(|e| e.to_string())?;
    let window = q1.stats.count as f64 / q1.stats.throughput;
    let sustained = q1.stats.count as f64 / (window + t.elapsed().as_secs_f64());
    let mut lat = BTreeMap::new();
    if reads {
        for (q, ops) in [(Query::Q2, 3_000), (Query::Q3, 30_000), (Query::Q6, 3_000), (Query::Q7, 30_000)] {
            run_workload(&bed, &workload(q, 1, ops / 3, 2)).map_err(|e| e.to_string())?;
            let r = run_workload(&bed, &workload(q, 1, ops, 3)).map_err(|e| e.to_string())?;
            lat.insert(q, r.stats.p50);
        }
    }
    eprintln!(
        "  {setup}: load {:.0} rows/s wa={:.2}; q1 {:.0} ops/s sustained {sustained:.0} ops/s p50={:.1}us; reads {:?}",
        load.records as f64 / load.ingest.as_secs_f64(),
        load.write_amplification(),
        q1.stats.throughput,
        q1.stats.p50,
        lat
    );
    Ok(BedResult { write: q1.stats, sustained, reads: lat, table_bytes: bed.table_bytes() })
}

fn performance() -> (Outcome, Outcome) {
    let scale = scale_bytes();
    let schema = synth::schema(32);
    let (k, r) = synth_row(42, 0, &schema);
    let row_bytes = (k.len() + codec::encode_packed(&schema, &r).expect("encode").len()) as u64;
    let records = (scale / row_bytes).max(10_000);
    eprintln!("  performance beds: {records} rows of ~{row_bytes} bytes");
    let setups: [(&'static str, bool); 10] = [
        ("baseline", true),
        ("baseline-text", true),
        ("identity", false),
        ("split", true),
        ("convert", true),
        ("augment", false),
        ("split-convert", false),
        ("ext-split", false),
        ("ext-convert", false),
        ("ext-augment", false),
    ];
    let mut res = BTreeMap::new();
    for (s, reads) in setups {
        match measure_bed(s, records, reads) {
            Ok(b) => {
                res.insert(s, b);
            }
            Err(e) => {
                let f = (false, format!("{s}: {e}"));
                return (f.clone(), f);
            }
        }
    }
    let ov = |s: &str| {
        let base = if matches!(s, "convert" | "ext-convert" | "split-convert") { "baseline-text" } else { "baseline" };
        1.0 - res[s].sustained / res[base].sustained
    };
    let observed = |s: &str| overhead(&res["baseline"].write, &res[s].write);
    let pairs = [("split", "ext-split"), ("convert", "ext-convert"), ("augment", "ext-augment")];
    let mut ok7 = true;
    let mut d7 = vec![format!("scale={}MiB", scale / MIB as u64)];
    for (te, ext) in pairs {
        let good = ov(te) < ov(ext);
        ok7 &= good;
        d7.push(format!("{te}={:.1}%<{ext}={:.1}%:{}", 100.0 * ov(te), 100.0 * ov(ext), if good { "ok" } else { "no" }));
    }
    let single = ["split", "convert", "augment"].iter().map(|s| ov(s)).fold(f64::MIN, f64::max);
    let combo = ov("split-convert");
    ok7 &= single < combo;
    d7.push(format!("max_single={:.1}%<split-convert={:.1}%:{}", 100.0 * single, 100.0 * combo, if single < combo { "ok" } else { "no" }));
    let id = -ov("identity");
    ok7 &= id.abs() <= 0.10;
    d7.push(format!("identity_delta={:+.1}%", 100.0 * id));
    d7.push(format!("identity_client_observed_delta={:+.1}%", -100.0 * observed("identity")));

    let mut ok8 = true;
    let mut d8 = Vec::new();
    let p50 = |s: &str, q: Query| res[s].reads[&q];
    let mut cmp = |label: String, good: bool| {
        ok8 &= good;
        d8.push(format!("{label}:{}", if good { "ok" } else { "no" }));
    };
    for q in [Query::Q2, Query::Q3] {
        let (a, b) = (p50("split", q), p50("baseline", q));
        cmp(format!("split_{q}={a:.1}<{b:.1}"), a < b);
    }
    for q in [Query::Q2, Query::Q3, Query::Q6, Query::Q7] {
        let (a, b) = (p50("convert", q), p50("baseline-text", q));
        cmp(format!("convert_{q}={a:.1}<={b:.1}"), a <= b);
    }
    let (a, b) = (p50("split", Query::Q7), p50("baseline", Query::Q7));
    cmp(format!("split_Q7={a:.1}>={b:.1}"), a >= b);
    let (c, t) = (res["convert"].table_bytes, res["baseline-text"].table_bytes);
    d8.push(format!("sst_32col={:.1}%", 100.0 * (1.0 - c as f64 / t as f64)));
    match sst_reduction_default_schema(records / 4) {
        Ok(red) => {
            let good = red >= 0.20;
            ok8 &= good;
            d8.push(format!("sst_reduction_default_schema={:.1}%>=20%:{}", 100.0 * red, if good { "ok" } else { "no" }));
        }
        Err(e) => {
            ok8 = false;
            d8.push(e);
        }
    }
    ((ok7, d7.join(" ")), (ok8, d8.join(" ")))
}

/// Convert against the text baseline on the default (50-column) schema.
fn sst_reduction_default_schema(records: u64) -> Result<f64, String> {
    let mut bytes = Vec::new();
    for setup in ["baseline-text", "convert"] {
        let dir = tmp();
        let mut cfg = bench_config(dir.path(), setup, BenchConfig::default().columns);
        cfg.records = records;
        let bed = Bed::open(&cfg).map_err(|e| e.to_string())?;
        bed.load(records, 8).map_err(|e| e.to_string())?;
        bed.db.compact_all().map_err(|e| e.to_string())?;
        bytes.push(bed.table_bytes() as f64);
    }
    Ok(1.0 - bytes[1] / bytes[0])
}

fn grouping_algebra() -> Outcome {
    const ROWS: u64 = 10_000;
    let schema = synth::schema(32);
    let build = |two_step: bool| -> Result<(tempfile::TempDir, Engine), String> {
        let dir = tmp();
        let db = Engine::open(small_config(dir.path())).map_err(|e| e.to_string())?;
        db.create_cf(TABLE, schema.clone(), RecordFormat::Text).map_err(|e| e.to_string())?;
        let split = TransformerSpec::Split { target_group_size: 4 };
        let convert = TransformerSpec::Convert { from: RecordFormat::Text, to: RecordFormat::Packed };
        if two_step {
            // split first, then convert each resulting group on its own
            db.link_transformers(TABLE, &[split]).map_err(|e| e.to_string())?;
            let leaves: Vec<String> = db
                .column_families()
                .iter()
                .filter(|d| d.parent.is_some() && !d.has_transformer())
                .map(|d| d.name.clone())
                .collect();
            for leaf in leaves {
                db.link_transformers(&leaf, &[convert.clone()]).map_err(|e| e.to_string())?;
            }
        } else {
            db.link_transformers(TABLE, &[split, convert]).map_err(|e| e.to_string())?;
        }
        for i in 0..ROWS {
            let (k, r) = synth_row(9, i, &schema);
            insert(&db, RecordFormat::Text, &schema, &k, &r).map_err(|e| e.to_string())?;
        }
        db.compact_all().map_err(|e| e.to_string())?;
        Ok((dir, db))
    };
    let run = || -> Result<String, String> {
        let (_d1, one) = build(false)?;
        let (_d2, two) = build(true)?;
        let terminals = |db: &Engine| -> Vec<String> {
            db.column_families().iter().filter(|d| d.parent.is_some() && !d.has_transformer()).map(|d| d.name.clone()).collect()
        };
        let (t1, t2) = (terminals(&one), terminals(&two));
        if t1 != t2 {
            return Err(format!("terminal sets differ: {t1:?} vs {t2:?}"));
        }
        let mut entries = 0;
        for name in &t1 {
            let (a, b) = (one.scan_cf(name).map_err(|e| e.to_string())?, two.scan_cf(name).map_err(|e| e.to_string())?);
            if a.len() as u64 != ROWS || a != b {
                let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
                return Err(format!("`{name}` differs at entry {at}"));
            }
            entries += a.len();
        }
        let full = |db: &Engine| db.read_range_full(TABLE, b"", b"\xff").map_err(|e| e.to_string());
        if full(&one)? != full(&two)? {
            return Err("logical rows differ".into());
        }
        Ok(format!("rows={ROWS} terminal_cfs={} entries_compared={entries}", t1.len()))
    };
    match run() {
        Ok(d) => (true, d),
        Err(e) => (false, e),
    }
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("TELSM_ACCEPT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().map_or(true, |o| o.contains(&n));
    // cargo passes harness flags such as --nocapture; nothing here takes arguments
    let names = [
        "cost-model regression",
        "oracle equivalence",
        "split reconstruction",
        "tierveling invariant",
        "crash safety",
        "index correctness",
        "write overhead ordering",
        "read latency direction",
        "grouping algebra",
    ];
    let mut results: BTreeMap<u32, Outcome> = BTreeMap::new();
    let print = |n: u32, o: &Outcome| {
        println!("criterion {n} {:<26} {} {}", names[n as usize - 1], if o.0 { "PASS" } else { "FAIL" }, o.1);
    };
    if wanted(1) {
        let o = cost_model();
        print(1, &o);
        results.insert(1, o);
    }
    if wanted(2) || wanted(4) {
        let (o2, o4) = oracle_equivalence();
        print(2, &o2);
        results.insert(2, o2);
        if wanted(3) {
            let o = split_reconstruction();
            print(3, &o);
            results.insert(3, o);
        }
        print(4, &o4);
        results.insert(4, o4);
    } else if wanted(3) {
        let o = split_reconstruction();
        print(3, &o);
        results.insert(3, o);
    }
    if wanted(5) {
        let o = crash_safety();
        print(5, &o);
        results.insert(5, o);
    }
    if wanted(6) {
        let o = index_correctness();
        print(6, &o);
        results.insert(6, o);
    }
    if wanted(7) || wanted(8) {
        let (o7, o8) = performance();
        print(7, &o7);
        print(8, &o8);
        results.insert(7, o7);
        results.insert(8, o8);
    }
    if wanted(9) {
        let o = grouping_algebra();
        print(9, &o);
        results.insert(9, o);
    }
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.0).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        return;
    }
    println!("failed criteria: {failed:?}");
    // throughput and latency orderings depend on the core count
    let strict = std::env::var("TELSM_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let fatal: Vec<u32> = failed.iter().copied().filter(|n| strict || ![7, 8].contains(n)).collect();
    if fatal.is_empty() {
        println!("criteria 7 and 8 are reported only; set TELSM_ACCEPT_STRICT=1 to make them fatal");
    } else {
        std::process::exit(1);
    }
}
