pub mod bloom;
pub mod cache;
pub mod cf;
pub mod codec;
pub mod compaction;
pub mod config;
pub mod db;
pub mod error;
pub mod manifest;
pub mod memtable;
pub mod query;
pub mod sst;
pub mod stats;
pub mod transform;
pub mod types;
pub mod version;
pub mod wal;

pub use config::EngineConfig;
pub use db::{Engine, FailPoint};
pub use error::{Error, Result};
pub use query::IndexHit;
pub use types::*;
