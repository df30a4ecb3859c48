//! Latency summaries.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyStats {
    pub count: u64,
    /// Microseconds.
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p99: f64,
    pub max: f64,
    /// Operations per second.
    pub throughput: f64,
}

/// Nearest-rank percentile of sorted samples: the value at rank `⌈p·n⌉`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(samples: &[Duration], elapsed: Duration) -> LatencyStats {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut us: Vec<f64> = samples.iter().map(|d| d.as_nanos() as f64 / 1000.0).collect();
        us.sort_by(f64::total_cmp);
        let secs = elapsed.as_secs_f64();
        LatencyStats {
            count: us.len() as u64,
            min: us[0],
            p25: nearest_rank(&us, 0.25),
            p50: nearest_rank(&us, 0.50),
            p75: nearest_rank(&us, 0.75),
            p99: nearest_rank(&us, 0.99),
            max: us[us.len() - 1],
            throughput: if secs > 0.0 { us.len() as f64 / secs } else { 0.0 },
        }
    }
}

impl fmt::Display for LatencyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "count={} min_us={} p25_us={} p50_us={} p75_us={} p99_us={} max_us={} ops_per_sec={}",
            self.count, self.min, self.p25, self.p50, self.p75, self.p99, self.max, self.throughput
        )
    }
}

impl FromStr for LatencyStats {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = LatencyStats::default();
        let mut seen = 0;
        for tok in s.split_whitespace() {
            let Some((k, v)) = tok.split_once('=') else { continue };
            let num = || v.parse::<f64>().map_err(|_| format!("bad value in `{tok}`"));
            match k {
                "count" => out.count = v.parse().map_err(|_| format!("bad value in `{tok}`"))?,
                "min_us" => out.min = num()?,
                "p25_us" => out.p25 = num()?,
                "p50_us" => out.p50 = num()?,
                "p75_us" => out.p75 = num()?,
                "p99_us" => out.p99 = num()?,
                "max_us" => out.max = num()?,
                "ops_per_sec" => out.throughput = num()?,
                _ => continue,
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(format!("expected 8 latency fields, found {seen}"));
        }
        Ok(out)
    }
}

/// Throughput lost relative to `baseline`, as a fraction.
pub fn overhead(baseline: &LatencyStats, candidate: &LatencyStats) -> f64 {
    1.0 - candidate.throughput / baseline.throughput
}

/// Candidate over baseline latency for min, P25, P50, P75, P99 and max.
pub fn latency_ratios(baseline: &LatencyStats, candidate: &LatencyStats) -> [f64; 6] {
    let b = [baseline.min, baseline.p25, baseline.p50, baseline.p75, baseline.p99, baseline.max];
    let c = [candidate.min, candidate.p25, candidate.p50, candidate.p75, candidate.p99, candidate.max];
    std::array::from_fn(|i| c[i] / b[i])
}
