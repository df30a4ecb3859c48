#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telsm_core::config::MIB;
use telsm_core::{ColumnType, EngineConfig, Row, Schema, Value};

/// Small buffers and triggers so that a few thousand rows exercise flushes
/// and every compaction path.
pub fn small_config(dir: &std::path::Path) -> EngineConfig {
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

/// `n` columns named c0.., alternating u64 and string.
pub fn schema(n: usize) -> Schema {
    Schema::from_pairs((0..n).map(|i| (format!("c{i}"), if i % 2 == 0 { ColumnType::U64 } else { ColumnType::Str })))
        .unwrap()
}

pub fn row(rng: &mut ChaCha8Rng, s: &Schema) -> Row {
    Row::new(
        s.columns()
            .iter()
            .map(|c| match c.ty {
                ColumnType::U64 => Value::U64(rng.gen()),
                ColumnType::Str => {
                    Value::Str((0..rng.gen_range(0..24)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect())
                }
            })
            .collect(),
    )
}

pub fn key(i: u64) -> Vec<u8> {
    format!("{i:016}").into_bytes()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub type Oracle = BTreeMap<Vec<u8>, Row>;
