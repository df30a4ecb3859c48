use std::collections::HashSet;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use telsm_bench::dist::Zipfian;
use telsm_bench::latency::nearest_rank;
use telsm_bench::setup::TABLE;
use telsm_bench::synth::{self, key_number, KEY_SPACE};
use telsm_bench::{overhead, run_workload, BenchConfig, Bed, LatencyStats, Query, Setup, Stop, WorkloadSpec};
use telsm_core::config::MIB;
use telsm_core::Value;

fn bed(dir: &std::path::Path, setup: &str, columns: usize) -> Bed {
    let mut cfg = BenchConfig { columns, records: 0, ..BenchConfig::default() };
    cfg.engine.data_dir = dir.to_path_buf();
    cfg.engine.write_buffer_size = 2 * MIB;
    cfg.engine.max_bytes_for_level_base = 8 * MIB as u64;
    cfg.engine.target_file_size_base = 2 * MIB as u64;
    cfg.setup = Setup::preset(setup, 4, "c2").unwrap();
    Bed::open(&cfg).unwrap()
}

fn spec(query: Query, clients: usize, ops: u64) -> WorkloadSpec {
    WorkloadSpec {
        query,
        clients,
        stop: Stop::Ops(ops),
        theta: Some(0.99),
        range_width: 50,
        column: "c2".into(),
        seed: 7,
    }
}

#[test]
fn uniform_keys_are_distinct_and_spread() {
    const N: u64 = 1_000_000;
    const BUCKETS: usize = 100;
    let mut seen = HashSet::with_capacity(N as usize);
    let mut counts = [0u64; BUCKETS];
    for i in 0..N {
        let k = key_number(i);
        assert!(k < KEY_SPACE);
        assert!(seen.insert(k), "duplicate key at {i}");
        counts[(k / (KEY_SPACE / BUCKETS as u64)) as usize] += 1;
    }
    let expect = N as f64 / BUCKETS as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 99 degrees of freedom; 0.1% critical value is about 148
    assert!(chi2 < 148.0, "chi2 {chi2}");
    assert_eq!(synth::key(0).len(), 16);
}

#[test]
fn zipf_head_follows_power_law() {
    let z = Zipfian::new(100_000, 0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = vec![0u64; 11];
    for _ in 0..2_000_000 {
        let r = z.sample_rank(&mut rng);
        if r < 11 {
            counts[r as usize] += 1;
        }
    }
    let ratio = counts[0] as f64 / counts[9] as f64;
    let want = 10f64.powf(0.99);
    assert!((ratio / want - 1.0).abs() < 0.2, "rank1/rank10 {ratio} vs {want}");
    // scattered items stay within the population and are a bijection of ranks
    let items: HashSet<u64> = (0..1000).map(|r| z.item(r)).collect();
    assert_eq!(items.len(), 1000);
    assert!(items.iter().all(|&i| i < 100_000));
}

#[test]
fn percentiles_match_sorted_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<Duration> =
        (0..1001).map(|_| Duration::from_nanos(rand::Rng::gen_range(&mut rng, 1_000..5_000_000))).collect();
    let s = LatencyStats::from_samples(&samples, Duration::from_secs(2));
    let mut us: Vec<f64> = samples.iter().map(|d| d.as_nanos() as f64 / 1000.0).collect();
    us.sort_by(f64::total_cmp);
    let at = |p: f64| us[((p * us.len() as f64).ceil() as usize).max(1) - 1];
    assert_eq!(s.p50, at(0.5));
    assert_eq!(s.p99, at(0.99));
    assert_eq!(s.min, us[0]);
    assert_eq!(s.max, us[1000]);
    assert_eq!(nearest_rank(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.0);
    assert_eq!(nearest_rank(&[1.0, 2.0, 3.0, 4.0], 0.75), 3.0);
    assert!((s.throughput - 500.5).abs() < 1e-9);

    let back: LatencyStats = s.to_string().parse().unwrap();
    assert_eq!(back.count, s.count);
    assert!((back.p50 - s.p50).abs() < 0.01);
}

#[test]
fn overhead_is_relative_throughput_loss() {
    let base = LatencyStats { throughput: 1000.0, ..LatencyStats::default() };
    let cand = LatencyStats { throughput: 800.0, ..LatencyStats::default() };
    assert!((overhead(&base, &cand) - 0.2).abs() < 1e-12);
    assert!((overhead(&base, &base)).abs() < 1e-12);
}

#[test]
fn same_seed_gives_same_results() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let digests: Vec<Vec<u64>> = dirs
        .iter()
        .map(|d| {
            let b = bed(d.path(), "split", 16);
            b.load(5_000, 2).unwrap();
            [Query::Q2, Query::Q3, Query::Q6, Query::Q7]
                .iter()
                .map(|&q| run_workload(&b, &spec(q, 1, 300)).unwrap().digest)
                .collect()
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn column_range_max_agrees_with_full_rows() {
    let d = tempfile::tempdir().unwrap();
    let b = bed(d.path(), "split", 16);
    b.load(20_000, 4).unwrap();
    let lo = synth::format_key(KEY_SPACE / 3);
    let hi = synth::format_key(KEY_SPACE / 3 + KEY_SPACE / 50);
    let col = b.db.read_range_column(TABLE, &lo, &hi, "c2").unwrap();
    let full = b.db.read_range_full(TABLE, &lo, &hi).unwrap();
    assert!(full.len() > 100);
    assert_eq!(col.len(), full.len());
    let max_col = col.iter().filter_map(|(_, v)| if let Value::U64(n) = v { Some(*n) } else { None }).max();
    let max_full = full.iter().filter_map(|(_, r)| if let Value::U64(n) = r.values[2] { Some(n) } else { None }).max();
    assert_eq!(max_col, max_full);
}

#[test]
fn loaded_rows_are_all_readable() {
    let d = tempfile::tempdir().unwrap();
    let b = bed(d.path(), "split-convert", 16);
    let report = b.load(100_000, 4).unwrap();
    assert_eq!(report.records, 100_000);
    assert!(report.write_amplification() > 1.0);
    let all = b.scan_filter(0, |_| true).unwrap();
    assert_eq!(all.len(), 100_000);
    for i in (0..100_000).step_by(997) {
        let (k, row) = synth::synth_row(b.seed, i, &b.schema);
        assert_eq!(b.db.read_point_full(TABLE, &k).unwrap(), Some(row));
    }
    b.db.version().check_tierveling().unwrap();
}

#[test]
fn external_setups_store_the_same_rows() {
    let d = tempfile::tempdir().unwrap();
    for setup in ["ext-split", "ext-convert", "ext-augment"] {
        let dir = d.path().join(setup);
        let b = bed(&dir, setup, 8);
        b.load(3_000, 2).unwrap();
        // overwrite a few rows to exercise the external index maintenance
        for i in 0..50 {
            let (k, _) = synth::synth_row(b.seed, i, &b.schema);
            let (_, row) = synth::synth_row(b.seed, i + 10_000, &b.schema);
            b.insert_row(&k, &row).unwrap();
        }
        let r = run_workload(&b, &spec(Query::Q3, 2, 100)).unwrap();
        assert_eq!(r.rows, 200, "{setup}");
        let (k, _) = synth::synth_row(b.seed, 7, &b.schema);
        let (_, want) = synth::synth_row(b.seed, 10_007, &b.schema);
        assert_eq!(b.get_full(&k).unwrap(), Some(want), "{setup}");
        assert_eq!(b.scan_filter(0, |_| true).unwrap().len(), 3_000, "{setup}");
        if setup == "ext-split" {
            assert_eq!(b.db.column_families().len(), 2);
            assert_eq!(run_workload(&b, &spec(Query::Q6, 1, 20)).unwrap().stats.count, 20);
        }
    }
}

#[test]
fn index_workloads_use_the_index() {
    let d = tempfile::tempdir().unwrap();
    let b = bed(d.path(), "augment", 8);
    b.load(10_000, 2).unwrap();
    let q5 = run_workload(&b, &spec(Query::Q5, 1, 200)).unwrap();
    assert!(!q5.scan_fallback);
    // every probed value comes from a stored row
    assert!(q5.rows >= 200);
    let q4 = run_workload(&b, &spec(Query::Q4, 1, 50)).unwrap();
    assert!(!q4.scan_fallback);

    let d2 = tempfile::tempdir().unwrap();
    let plain = bed(d2.path(), "baseline", 8);
    plain.load(2_000, 1).unwrap();
    assert!(run_workload(&plain, &spec(Query::Q5, 1, 5)).unwrap().scan_fallback);
}
