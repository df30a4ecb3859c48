//! Analytical cost model comparing plain compaction (CWT) with
//! transformation-embedded compaction (TEC).
//!
//! Byte quantities are plain `f64`s; throughputs come out in whatever unit
//! the bandwidths go in.

use std::fmt;
use std::str::FromStr;

/// Model inputs. `levels` overrides the derived level count when set.
#[derive(Clone, Debug, PartialEq)]
pub struct CostParams {
    /// N: total data bytes.
    pub total_bytes: f64,
    /// B: write buffer bytes.
    pub write_buffer: f64,
    /// T: size ratio between adjacent levels.
    pub size_factor: f64,
    /// R: record bytes.
    pub record: f64,
    pub block_size: f64,
    /// Z: level-0 run count.
    pub l0_runs: f64,
    pub p_false: f64,
    pub levels: Option<f64>,
    pub write_bw: f64,
    pub read_bw: f64,
    /// T_r: transformation throughput. Infinite means free.
    pub transform_bw: f64,
    /// n: extra cross-column-family writes.
    pub extra_writes: u32,
    /// s_n: destinations at the last cross-column-family level.
    pub destinations: u32,
    /// m: entries selected by a range query.
    pub selectivity: f64,
    /// K: key bytes.
    pub key: f64,
    /// R': record bytes after conversion.
    pub converted_record: f64,
    /// R_j for j = 1..=n. Empty means `record` at every stage.
    pub stage_records: Vec<f64>,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            total_bytes: 1024.0 * 1024.0 * 1024.0,
            write_buffer: 32.0 * 1024.0 * 1024.0,
            size_factor: 4.0,
            record: 500.0,
            block_size: 4096.0,
            l0_runs: 4.0,
            p_false: 0.0084,
            levels: None,
            write_bw: 417.0,
            read_bw: f64::INFINITY,
            transform_bw: f64::INFINITY,
            extra_writes: 0,
            destinations: 1,
            selectivity: 100.0,
            key: 16.0,
            converted_record: 500.0,
            stage_records: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamError(pub String);

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ParamError {}

impl CostParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let bad = |m: &str| Err(ParamError(m.to_string()));
        let positive = [
            ("N", self.total_bytes),
            ("B", self.write_buffer),
            ("R", self.record),
            ("blksz", self.block_size),
            ("Z", self.l0_runs),
            ("WB", self.write_bw),
            ("RB", self.read_bw),
            ("T_r", self.transform_bw),
            ("K", self.key),
            ("R'", self.converted_record),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.size_factor < 2.0 {
            return bad("T must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.p_false) {
            return bad("P_false must be in [0, 1]");
        }
        if self.extra_writes > 0 && f64::from(self.extra_writes) >= self.size_factor / 2.0 {
            return bad("n must be below T/2");
        }
        if self.destinations == 0 {
            return bad("s_n must be >= 1");
        }
        if self.selectivity < 0.0 {
            return bad("m must be >= 0");
        }
        if !self.stage_records.is_empty() && self.stage_records.len() != self.extra_writes as usize {
            return bad("stage_records needs one size per extra write");
        }
        Ok(())
    }

    /// L = log_T(N/B), clamped at zero, unless overridden.
    pub fn level_count(&self) -> f64 {
        self.levels.unwrap_or_else(|| ((self.total_bytes / self.write_buffer).ln() / self.size_factor.ln()).max(0.0))
    }

    /// Record size after stage `j` (1-based).
    fn stage_record(&self, j: usize) -> f64 {
        self.stage_records.get(j - 1).copied().unwrap_or(self.record)
    }

    /// Record size stored in the terminal column families.
    pub fn leaf_record(&self) -> f64 {
        if self.extra_writes == 0 {
            self.record
        } else {
            self.stage_record(self.extra_writes as usize)
        }
    }

    /// Parameters for `n` halving split stages ending in `2^n` leaves.
    pub fn split(mut self, n: u32) -> Self {
        self.extra_writes = n;
        self.destinations = 1 << n;
        self.stage_records = (1..=n).map(|j| self.record / f64::from(1u32 << j)).collect();
        self
    }

    /// Parameters for a single conversion to records of `r_prime` bytes.
    pub fn convert(mut self, r_prime: f64) -> Self {
        self.extra_writes = 1;
        self.destinations = 1;
        self.converted_record = r_prime;
        self.stage_records = vec![r_prime];
        self
    }

    /// The same data without any transformation.
    pub fn baseline(&self) -> Self {
        CostParams { extra_writes: 0, destinations: 1, stage_records: Vec::new(), ..self.clone() }
    }
}

pub fn wa_cwt(p: &CostParams) -> f64 {
    let t = p.size_factor;
    1.0 + t / (t - 1.0) * p.level_count()
}

pub fn wa_tec(p: &CostParams) -> f64 {
    wa_cwt(p) + f64::from(p.extra_writes)
}

pub fn w_max_cwt(p: &CostParams) -> f64 {
    p.write_bw / wa_cwt(p)
}

/// Disk bandwidth left once reading and transforming are pipelined: the
/// smaller of the write bandwidth and the harmonic combination RB·T_r/(RB+T_r).
pub fn effective_bandwidth(p: &CostParams) -> f64 {
    let harmonic = match (p.read_bw.is_infinite(), p.transform_bw.is_infinite()) {
        (true, true) => f64::INFINITY,
        (true, false) => p.transform_bw,
        (false, true) => p.read_bw,
        (false, false) => p.read_bw * p.transform_bw / (p.read_bw + p.transform_bw),
    };
    p.write_bw.min(harmonic)
}

pub fn w_max_tec(p: &CostParams) -> f64 {
    effective_bandwidth(p) / wa_tec(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointMode {
    /// Every column of the row.
    AllColumns,
    /// One column.
    OneColumn,
}

/// Expected block reads of a point query.
pub fn pq_cost(p: &CostParams, mode: PointMode) -> f64 {
    let n = f64::from(p.extra_writes);
    let bloom = (p.level_count() + p.l0_runs * (1.0 + n)) * p.p_false;
    let pieces = f64::from(p.destinations);
    let piece = if p.destinations > 1 { p.record / pieces } else { p.leaf_record() };
    let per_piece = (piece / p.block_size).ceil();
    bloom
        + match mode {
            PointMode::AllColumns => per_piece * pieces,
            PointMode::OneColumn => per_piece,
        }
}

fn level_weight(p: &CostParams) -> f64 {
    let l = p.level_count();
    let t = p.size_factor;
    (0..=l.floor() as u32).map(|i| t.powf(f64::from(i) - l)).sum()
}

pub fn rq_cost_cwt(p: &CostParams) -> f64 {
    p.selectivity * p.record / p.block_size * level_weight(p)
}

pub fn rq_cost_tec(p: &CostParams) -> f64 {
    if p.extra_writes == 0 {
        return rq_cost_cwt(p);
    }
    let n = p.extra_writes as usize;
    let upstream: f64 = (1..=n).map(|j| p.stage_record(j)).sum();
    let t_l = p.size_factor.powf(p.level_count());
    p.selectivity / p.block_size * (upstream / t_l + p.leaf_record() * level_weight(p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    Split,
    Convert,
    Index,
}

/// The expression inside the O(·) bound of extra space amplification.
pub fn space_amp(p: &CostParams, kind: SpaceKind) -> f64 {
    let t = p.size_factor;
    match kind {
        SpaceKind::Split => p.key * f64::from(p.destinations - 1) * p.total_bytes / (p.record * t),
        SpaceKind::Convert => p.total_bytes * p.converted_record / (p.record * t),
        SpaceKind::Index => 1.0 / t,
    }
}

/// How reads and writes are weighed when judging a transformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    /// Share of the workload that reads.
    pub read_share: f64,
    /// Share of the read gain credited to range queries; the rest goes to
    /// single-column point queries.
    pub range_share: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { read_share: 0.5, range_share: 0.5 }
    }
}

/// Side-by-side predictions for one transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub levels: f64,
    pub wa_cwt: f64,
    pub wa_tec: f64,
    pub w_cwt: f64,
    pub w_tec: f64,
    pub pqra_cwt: f64,
    pub pqra_tec: f64,
    pub pqrc_cwt: f64,
    pub pqrc_tec: f64,
    pub rq_cwt: f64,
    pub rq_tec: f64,
    pub space_split: f64,
    pub space_convert: f64,
    pub space_index: f64,
    /// TEC over CWT write throughput.
    pub write_ratio: f64,
    /// CWT over TEC range-query block reads (> 1 is a gain).
    pub range_ratio: f64,
    /// CWT over TEC single-column point-query block reads.
    pub point_ratio: f64,
    pub score: f64,
    pub beneficial: bool,
}

/// Compares `p` against the same data without transformations.
/// TEC is beneficial when
/// `read_share·(range_share·range_ratio + (1−range_share)·point_ratio) + (1−read_share)·write_ratio > 1`.
pub fn compare_report(p: &CostParams, w: Weights) -> CostReport {
    let base = p.baseline();
    let w_cwt = w_max_cwt(&base);
    let w_tec = w_max_tec(p);
    let pqrc_cwt = pq_cost(&base, PointMode::OneColumn);
    let pqrc_tec = pq_cost(p, PointMode::OneColumn);
    let rq_cwt = rq_cost_cwt(&base);
    let rq_tec = rq_cost_tec(p);
    let ratio = |a: f64, b: f64| if b == 0.0 { 1.0 } else { a / b };
    let write_ratio = ratio(w_tec, w_cwt);
    let range_ratio = ratio(rq_cwt, rq_tec);
    let point_ratio = ratio(pqrc_cwt, pqrc_tec);
    let score = w.read_share * (w.range_share * range_ratio + (1.0 - w.range_share) * point_ratio)
        + (1.0 - w.read_share) * write_ratio;
    CostReport {
        levels: p.level_count(),
        wa_cwt: wa_cwt(&base),
        wa_tec: wa_tec(p),
        w_cwt,
        w_tec,
        pqra_cwt: pq_cost(&base, PointMode::AllColumns),
        pqra_tec: pq_cost(p, PointMode::AllColumns),
        pqrc_cwt,
        pqrc_tec,
        rq_cwt,
        rq_tec,
        space_split: space_amp(p, SpaceKind::Split),
        space_convert: space_amp(p, SpaceKind::Convert),
        space_index: space_amp(p, SpaceKind::Index),
        write_ratio,
        range_ratio,
        point_ratio,
        score,
        beneficial: score > 1.0 + 1e-12,
    }
}

impl CostReport {
    /// `key=value` lines.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("levels", format!("{:.4}", self.levels)),
            ("wa_cwt", format!("{:.4}", self.wa_cwt)),
            ("wa_tec", format!("{:.4}", self.wa_tec)),
            ("w_max_cwt", format!("{:.4}", self.w_cwt)),
            ("w_max_tec", format!("{:.4}", self.w_tec)),
            ("pqra_cwt", format!("{:.4}", self.pqra_cwt)),
            ("pqra_tec", format!("{:.4}", self.pqra_tec)),
            ("pqrc_cwt", format!("{:.4}", self.pqrc_cwt)),
            ("pqrc_tec", format!("{:.4}", self.pqrc_tec)),
            ("rq_cwt", format!("{:.4}", self.rq_cwt)),
            ("rq_tec", format!("{:.4}", self.rq_tec)),
            ("space_split", format!("{:.6e}", self.space_split)),
            ("space_convert", format!("{:.6e}", self.space_convert)),
            ("space_index", format!("{:.4}", self.space_index)),
            ("write_ratio", format!("{:.4}", self.write_ratio)),
            ("range_ratio", format!("{:.4}", self.range_ratio)),
            ("point_ratio", format!("{:.4}", self.point_ratio)),
            ("score", format!("{:.4}", self.score)),
            ("beneficial", self.beneficial.to_string()),
        ]
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26}{:>14}{:>14}", "", "CWT", "TEC")?;
        let rows = [
            ("write amplification", self.wa_cwt, self.wa_tec),
            ("max write throughput", self.w_cwt, self.w_tec),
            ("point query, all columns", self.pqra_cwt, self.pqra_tec),
            ("point query, one column", self.pqrc_cwt, self.pqrc_tec),
            ("range query block reads", self.rq_cwt, self.rq_tec),
        ];
        for (name, a, b) in rows {
            writeln!(f, "{name:<26}{a:>14.3}{b:>14.3}")?;
        }
        writeln!(f, "levels (L)                {:.3}", self.levels)?;
        writeln!(
            f,
            "extra space: split {:.4e}, convert {:.4e}, index {:.4}",
            self.space_split, self.space_convert, self.space_index
        )?;
        writeln!(
            f,
            "write x{:.3}  range x{:.3}  point x{:.3}  score {:.3}  => {}",
            self.write_ratio,
            self.range_ratio,
            self.point_ratio,
            self.score,
            if self.beneficial { "beneficial" } else { "not beneficial" }
        )?;
        for (k, v) in self.key_values() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Applies `key=value` settings. Sizes accept K/M/G/T suffixes (binary).
pub fn apply_setting(p: &mut CostParams, key: &str, value: &str) -> Result<(), ParamError> {
    let num = |v: &str| -> Result<f64, ParamError> {
        let v = v.trim();
        if v.eq_ignore_ascii_case("inf") {
            return Ok(f64::INFINITY);
        }
        let (digits, mult) = match v.char_indices().find(|(_, c)| c.is_ascii_alphabetic()) {
            Some((i, _)) => {
                let m = match v[i..].to_ascii_uppercase().trim_end_matches("IB").trim_end_matches('B') {
                    "" => 1.0,
                    "K" => 1024.0,
                    "M" => 1024.0 * 1024.0,
                    "G" => 1024.0f64.powi(3),
                    "T" => 1024.0f64.powi(4),
                    other => return Err(ParamError(format!("unknown size suffix `{other}`"))),
                };
                (&v[..i], m)
            }
            None => (v, 1.0),
        };
        f64::from_str(digits.trim()).map(|x| x * mult).map_err(|_| ParamError(format!("`{v}` is not a number")))
    };
    let int = |v: &str| u32::from_str(v.trim()).map_err(|_| ParamError(format!("`{v}` is not an integer")));
    match key {
        "N" | "total_bytes" => p.total_bytes = num(value)?,
        "B" | "write_buffer" => p.write_buffer = num(value)?,
        "T" | "size_factor" => p.size_factor = num(value)?,
        "R" | "record" => p.record = num(value)?,
        "blksz" | "block_size" => p.block_size = num(value)?,
        "Z" | "l0_runs" => p.l0_runs = num(value)?,
        "P_false" | "p_false" => p.p_false = num(value)?,
        "L" | "levels" => p.levels = Some(num(value)?),
        "WB" | "write_bw" => p.write_bw = num(value)?,
        "RB" | "read_bw" => p.read_bw = num(value)?,
        "T_r" | "transform_bw" => p.transform_bw = num(value)?,
        "n" | "extra_writes" => p.extra_writes = int(value)?,
        "s_n" | "destinations" => p.destinations = int(value)?,
        "m" | "selectivity" => p.selectivity = num(value)?,
        "K" | "key" => p.key = num(value)?,
        "R_prime" | "converted_record" => p.converted_record = num(value)?,
        "R_j" | "stage_records" => {
            p.stage_records = value.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<_, _>>()?
        }
        _ => return Err(ParamError(format!("unknown cost parameter `{key}`"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_level_tree_has_no_amplification() {
        let p = CostParams { total_bytes: 64.0, write_buffer: 64.0, ..Default::default() };
        assert_eq!(wa_cwt(&p), 1.0);
        assert_eq!(w_max_cwt(&p), p.write_bw);
        let small = CostParams { total_bytes: 1.0, write_buffer: 64.0, ..Default::default() };
        assert_eq!(small.level_count(), 0.0);
    }

    #[test]
    fn settings_parse() {
        let mut p = CostParams::default();
        apply_setting(&mut p, "B", "64MiB").unwrap();
        apply_setting(&mut p, "R_j", "2500,1250").unwrap();
        apply_setting(&mut p, "T_r", "inf").unwrap();
        assert_eq!(p.write_buffer, 64.0 * 1024.0 * 1024.0);
        assert_eq!(p.stage_records, vec![2500.0, 1250.0]);
        assert!(apply_setting(&mut p, "Q", "1").is_err());
        assert!(apply_setting(&mut p, "B", "3X").is_err());
    }

    #[test]
    fn validation() {
        assert!(CostParams::default().validate().is_ok());
        assert!(CostParams { size_factor: 1.5, ..Default::default() }.validate().is_err());
        assert!(CostParams { extra_writes: 2, size_factor: 4.0, ..Default::default() }.validate().is_err());
        assert!(CostParams { p_false: 1.5, ..Default::default() }.validate().is_err());
    }
}
