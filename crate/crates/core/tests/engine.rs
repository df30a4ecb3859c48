mod common;

use common::*;
use rand::Rng;
use telsm_core::{Engine, Error, RecordFormat, Row, Value};

#[test]
fn read_your_write_and_delete() {
    let dir = tempfile::tempdir().unwrap();
    let db = Engine::open(small_config(dir.path())).unwrap();
    let s = schema(4);
    db.create_cf("t", s.clone(), RecordFormat::Text).unwrap();
    let r = row(&mut rng(1), &s);
    assert_eq!(db.read_point_full("t", &key(1)).unwrap(), None);
    db.insert("t", &key(1), &r).unwrap();
    assert_eq!(db.read_point_full("t", &key(1)).unwrap(), Some(r.clone()));
    assert_eq!(db.read_point_column("t", &key(1), "c2").unwrap(), Some(r.values[2].clone()));
    db.delete("t", &key(1)).unwrap();
    assert_eq!(db.read_point_full("t", &key(1)).unwrap(), None);
    assert!(matches!(db.read_point_column("t", &key(1), "zz"), Err(Error::UnknownColumn(_))));
}

#[test]
fn rejects_bad_writes() {
    let dir = tempfile::tempdir().unwrap();
    let db = Engine::open(small_config(dir.path())).unwrap();
    let s = schema(3);
    db.create_cf("t", s.clone(), RecordFormat::Packed).unwrap();
    assert!(matches!(db.create_cf("t", s.clone(), RecordFormat::Text), Err(Error::ColumnFamilyExists(_))));
    assert!(matches!(db.insert("nope", &key(1), &row(&mut rng(1), &s)), Err(Error::UnknownColumnFamily(_))));
    let short = Row::new(vec![Value::U64(1)]);
    assert!(db.insert("t", &key(1), &short).is_err());
    assert!(db.insert("t", b"", &row(&mut rng(1), &s)).is_err());
    assert!(db.insert_encoded("t", &key(1), vec![9, 9, 9]).is_err());
}

#[test]
fn random_operations_match_reference_map() {
    let dir = tempfile::tempdir().unwrap();
    let s = schema(6);
    let mut oracle = Oracle::new();
    let mut g = rng(7);
    {
        let db = Engine::open(small_config(dir.path())).unwrap();
        db.create_cf("t", s.clone(), RecordFormat::Packed).unwrap();
        for i in 0..60_000u64 {
            let k = key(g.gen_range(0..8_000));
            if g.gen_bool(0.1) {
                db.delete("t", &k).unwrap();
                oracle.remove(&k);
            } else {
                let r = row(&mut g, &s);
                db.insert("t", &k, &r).unwrap();
                oracle.insert(k, r);
            }
            if i % 20_000 == 19_999 {
                db.flush().unwrap();
            }
        }
        db.wait_for_compactions().unwrap();
        let v = db.version();
        v.check_tierveling().unwrap();
        let id = db.cf_id("t").unwrap();
        assert!(v.files(id).deepest_level().unwrap() >= 1, "{}", db.describe());
        check_all(&db, &oracle, &s);
    }
    // reopen recovers from WAL and manifest
    let db = Engine::open(small_config(dir.path())).unwrap();
    check_all(&db, &oracle, &s);
    db.compact_all().unwrap();
    check_all(&db, &oracle, &s);
}

fn check_all(db: &Engine, oracle: &Oracle, s: &telsm_core::Schema) {
    let all = db.read_range_full("t", &key(0), &key(u64::MAX / 2)).unwrap();
    assert_eq!(all.len(), oracle.len());
    for ((k, r), (ok, or)) in all.iter().zip(oracle) {
        assert_eq!(k, ok);
        assert_eq!(r, or);
    }
    let mut g = rng(99);
    for _ in 0..500 {
        let k = key(g.gen_range(0..8_000));
        assert_eq!(db.read_point_full("t", &k).unwrap().as_ref(), oracle.get(&k));
    }
    let (lo, hi) = (key(1000), key(2000));
    let col = db.read_range_column("t", &lo, &hi, "c3").unwrap();
    let want: Vec<_> = oracle.range(lo..hi).map(|(k, r)| (k.clone(), r.values[3].clone())).collect();
    assert_eq!(col, want);
    assert_eq!(s.len(), 6);
}

#[test]
fn empty_and_inverted_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let db = Engine::open(small_config(dir.path())).unwrap();
    db.create_cf("t", schema(2), RecordFormat::Text).unwrap();
    db.insert("t", &key(5), &row(&mut rng(1), &schema(2))).unwrap();
    assert!(db.read_range_full("t", &key(6), &key(9)).unwrap().is_empty());
    assert!(db.read_range_full("t", &key(9), &key(1)).unwrap().is_empty());
    assert!(db.read_range_column("t", &key(5), &key(5), "c0").unwrap().is_empty());
    assert_eq!(db.read_range_full("t", &key(5), &key(6)).unwrap().len(), 1);
}
