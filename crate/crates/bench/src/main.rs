use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use telsm_bench::{run_workload, BenchConfig, Bed, Query, Stop, WorkloadSpec};
use telsm_core::config::KvEntry;
use telsm_core::{ColumnType, Engine, EngineConfig, Row, Value};
use telsm_cost::{apply_setting, compare_report, CostParams, Weights};

#[derive(Parser)]
#[command(name = "telsm", about = "Transformation-embedded LSM store: benchmarks and tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct BedArgs {
    /// Flat key=value config file (engine and bench keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data directory; overrides the config.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Setup preset (baseline, split, convert, augment, ...); overrides the config.
    #[arg(long)]
    setup: Option<String>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl BedArgs {
    fn config(&self) -> Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(p) => BenchConfig::from_file(p)?,
            None => BenchConfig::default(),
        };
        let mut extra = Vec::new();
        if let Some(s) = &self.setup {
            extra.push(KvEntry { key: "setup".into(), value: s.clone(), line: 0 });
        }
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected KEY=VALUE, got `{s}`"))?;
            extra.push(KvEntry { key: k.trim().into(), value: v.trim().into(), line: 0 });
        }
        cfg.apply(extra)?;
        if let Some(d) = &self.dir {
            cfg.engine.data_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Load synthetic records into a bed.
    Load {
        #[command(flatten)]
        bed: BedArgs,
        /// Records to add; defaults to the config's `records`.
        #[arg(long)]
        records: Option<u64>,
    },
    /// Run workloads against a bed, loading it first if empty.
    Bench {
        #[command(flatten)]
        bed: BedArgs,
        /// Comma-separated list of q1..q7.
        #[arg(long, default_value = "q1")]
        workload: String,
        #[arg(long)]
        clients: Option<usize>,
        /// Seconds per workload.
        #[arg(long, conflicts_with = "ops")]
        duration: Option<f64>,
        /// Operations per client per workload.
        #[arg(long)]
        ops: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Append results to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the cost model.
    Cost {
        /// File of key=value parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Model `n` halving split stages.
        #[arg(long)]
        split: Option<u32>,
        /// Model a conversion to records of this many bytes.
        #[arg(long)]
        convert: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        read_share: f64,
        #[arg(long, default_value_t = 0.5)]
        range_share: f64,
        /// Parameters as KEY=VALUE (N, B, T, R, blksz, Z, P_false, L, WB, RB, T_r, n, s_n, m, K, R_prime, R_j).
        settings: Vec<String>,
    },
    /// Print engine counters and the file layout of a data directory.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Read a full row.
    Get { #[arg(long)] dir: PathBuf, cf: String, key: String },
    /// Read one column.
    Getcol { #[arg(long)] dir: PathBuf, cf: String, key: String, column: String },
    /// Read full rows in [lo, hi).
    Scan { #[arg(long)] dir: PathBuf, cf: String, lo: String, hi: String },
    /// Read one column over [lo, hi).
    Scancol { #[arg(long)] dir: PathBuf, cf: String, lo: String, hi: String, column: String },
    /// Rows whose indexed column equals a value.
    Iget {
        #[arg(long)]
        dir: PathBuf,
        cf: String,
        column: String,
        value: String,
        #[arg(long)]
        project: Option<String>,
    },
    /// Rows whose indexed column lies in [lo, hi).
    Iscan {
        #[arg(long)]
        dir: PathBuf,
        cf: String,
        column: String,
        lo: String,
        hi: String,
        #[arg(long)]
        project: Option<String>,
    },
}

fn open_dir(dir: &PathBuf) -> Result<Engine> {
    if !dir.exists() {
        bail!("{} does not exist", dir.display());
    }
    Ok(Engine::open(EngineConfig { disable_auto_compactions: true, ..EngineConfig::with_dir(dir) })?)
}

fn show_row(r: &Row) -> String {
    r.values.iter().map(ToString::to_string).collect::<Vec<_>>().join("\t")
}

fn parse_value(db: &Engine, cf: &str, column: &str, text: &str) -> Result<Value> {
    let d = db.column_families().into_iter().find(|d| d.name == cf).ok_or_else(|| anyhow!("no column family `{cf}`"))?;
    let i = d.schema.column_index(column)?;
    Ok(match d.schema.columns()[i].ty {
        ColumnType::U64 => Value::U64(text.parse().with_context(|| format!("`{text}` is not a u64"))?),
        ColumnType::Str => Value::Str(text.to_string()),
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Load { bed, records } => {
            let cfg = bed.config()?;
            let b = Bed::open(&cfg)?;
            let report = b.load(records.unwrap_or(cfg.records), cfg.clients)?;
            println!("setup={} {report}", b.setup);
            print!("{}", b.db.describe());
        }
        Cmd::Bench { bed, workload, clients, duration, ops, seed, out } => {
            let mut cfg = bed.config()?;
            if let Some(c) = clients {
                cfg.clients = c;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let b = Bed::open(&cfg)?;
            if b.record_count() == 0 {
                let report = b.load(cfg.records, cfg.clients)?;
                println!("setup={} load {report}", b.setup);
            }
            let stop = match (duration, ops) {
                (Some(d), _) => Stop::Duration(Duration::from_secs_f64(d)),
                (None, Some(n)) => Stop::Ops(n),
                (None, None) => Stop::Duration(Duration::from_secs(60)),
            };
            let mut sink: Option<fs::File> = match &out {
                Some(p) => Some(fs::OpenOptions::new().create(true).append(true).open(p)?),
                None => None,
            };
            for q in workload.split(',') {
                let spec = WorkloadSpec {
                    query: q.parse::<Query>()?,
                    clients: cfg.clients,
                    stop: stop.clone(),
                    theta: (!cfg.uniform).then_some(cfg.theta),
                    range_width: cfg.range_width,
                    column: cfg.column.clone(),
                    seed: cfg.seed,
                };
                let r = run_workload(&b, &spec)?;
                let line = format!("setup={} clients={} {r}", b.setup, cfg.clients);
                println!("{line}");
                if let Some(f) = sink.as_mut() {
                    writeln!(f, "{line}")?;
                }
            }
        }
        Cmd::Cost { params, split, convert, read_share, range_share, settings } => {
            let mut p = CostParams::default();
            let mut kv: Vec<(String, String)> = Vec::new();
            if let Some(path) = params {
                for e in telsm_core::config::read_kv_file(&path)? {
                    kv.push((e.key, e.value));
                }
            }
            for s in settings {
                let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected KEY=VALUE, got `{s}`"))?;
                kv.push((k.trim().to_string(), v.trim().to_string()));
            }
            for (k, v) in &kv {
                apply_setting(&mut p, k, v)?;
            }
            if let Some(n) = split {
                p = p.split(n);
            }
            if let Some(r) = convert {
                p = p.convert(r);
            }
            p.validate()?;
            print!("{}", compare_report(&p, Weights { read_share, range_share }));
        }
        Cmd::Stats { dir } => {
            let db = open_dir(&dir)?;
            println!("{}", db.stats());
            print!("{}", db.describe());
        }
        Cmd::Get { dir, cf, key } => {
            let db = open_dir(&dir)?;
            match db.read_point_full(&cf, key.as_bytes())? {
                Some(r) => println!("{}", show_row(&r)),
                None => println!("(absent)"),
            }
        }
        Cmd::Getcol { dir, cf, key, column } => {
            let db = open_dir(&dir)?;
            match db.read_point_column(&cf, key.as_bytes(), &column)? {
                Some(v) => println!("{v}"),
                None => println!("(absent)"),
            }
        }
        Cmd::Scan { dir, cf, lo, hi } => {
            let db = open_dir(&dir)?;
            for (k, r) in db.read_range_full(&cf, lo.as_bytes(), hi.as_bytes())? {
                println!("{}\t{}", String::from_utf8_lossy(&k), show_row(&r));
            }
        }
        Cmd::Scancol { dir, cf, lo, hi, column } => {
            let db = open_dir(&dir)?;
            for (k, v) in db.read_range_column(&cf, lo.as_bytes(), hi.as_bytes(), &column)? {
                println!("{}\t{v}", String::from_utf8_lossy(&k));
            }
        }
        Cmd::Iget { dir, cf, column, value, project } => {
            let db = open_dir(&dir)?;
            let v = parse_value(&db, &cf, &column, &value)?;
            for h in db.read_index_point(&cf, &column, &v, project.as_deref())? {
                println!("{}\t{}", String::from_utf8_lossy(&h.key), show_row(&h.row));
            }
        }
        Cmd::Iscan { dir, cf, column, lo, hi, project } => {
            let db = open_dir(&dir)?;
            let (l, h) = (parse_value(&db, &cf, &column, &lo)?, parse_value(&db, &cf, &column, &hi)?);
            for hit in db.read_index_range(&cf, &column, &l, &h, project.as_deref())? {
                println!("{}\t{}", String::from_utf8_lossy(&hit.key), show_row(&hit.row));
            }
        }
    }
    Ok(())
}
