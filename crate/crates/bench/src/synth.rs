//! Deterministic synthetic rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telsm_core::{ColumnType, Row, Schema, Value};

/// Keys live in `[0, 10^16)` so they print as 16 decimal digits.
pub const KEY_SPACE: u64 = 10_000_000_000_000_000;
// coprime to 10^16, so `i -> i * MULT mod KEY_SPACE` is a bijection
const MULT: u64 = 7_046_029_254_386_353;
pub const STR_LEN: usize = 24;

/// `n` columns `c0..`, even ones u64 and odd ones 24-byte strings.
pub fn schema(n: usize) -> Schema {
    Schema::from_pairs((0..n).map(|i| (format!("c{i}"), if i % 2 == 0 { ColumnType::U64 } else { ColumnType::Str })))
        .expect("valid schema")
}

/// The numeric key of the `index`-th record: spread uniformly over the key
/// space, distinct for distinct indexes.
pub fn key_number(index: u64) -> u64 {
    ((u128::from(index) * u128::from(MULT)) % u128::from(KEY_SPACE)) as u64
}

/// 16-character zero-padded decimal rendering of `n`.
pub fn format_key(n: u64) -> Vec<u8> {
    format!("{n:016}").into_bytes()
}

pub fn key(index: u64) -> Vec<u8> {
    format_key(key_number(index))
}

fn row_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// The row stored under `key(index)`, reproducible from `(seed, index)`.
pub fn synth_row(seed: u64, index: u64, schema: &Schema) -> (Vec<u8>, Row) {
    const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let mut rng = row_rng(seed, index);
    let values = schema
        .columns()
        .iter()
        .map(|c| match c.ty {
            ColumnType::U64 => Value::U64(rng.gen()),
            ColumnType::Str => {
                Value::Str((0..STR_LEN).map(|_| ALNUM[rng.gen_range(0..ALNUM.len())] as char).collect())
            }
        })
        .collect();
    (key(index), Row::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_format() {
        assert_eq!(format_key(7), b"0000000000000007");
        assert_eq!(key(0), b"0000000000000000");
        assert_eq!(key(12).len(), 16);
    }

    #[test]
    fn rows_are_reproducible() {
        let s = schema(6);
        assert_eq!(synth_row(1, 42, &s), synth_row(1, 42, &s));
        assert_ne!(synth_row(1, 42, &s).1, synth_row(2, 42, &s).1);
        let (_, r) = synth_row(3, 9, &s);
        assert!(matches!(&r.values[1], Value::Str(v) if v.len() == STR_LEN));
        s.check_row(&r).unwrap();
    }
}
