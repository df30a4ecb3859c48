use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("corrupt sst {file}: {reason}")]
    CorruptTable { file: String, reason: String },

    #[error("corrupt manifest at line {line}: {reason}")]
    CorruptManifest { line: usize, reason: String },

    #[error("unknown column family `{0}`")]
    UnknownColumnFamily(String),

    #[error("column family `{0}` already exists")]
    ColumnFamilyExists(String),

    #[error("column family `{0}` is internal and rejects external writes")]
    InternalColumnFamily(String),

    #[error("invalid transformer configuration: {0}")]
    InvalidTransformer(String),

    #[error("transformer of column family {0} is held by another compaction job")]
    TransformerBusy(u16),

    #[error("transform failed: {0}")]
    Transform(String),

    #[error("column `{column}` of `{cf}` has no secondary index")]
    NoIndex { cf: String, column: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("inconsistent split state for key {key:?}: {reason}")]
    Inconsistent { key: Vec<u8>, reason: String },

    #[error("engine halted after simulated crash")]
    Crashed,
}

impl Error {
    pub(crate) fn codec(msg: impl Into<String>) -> Self {
        Error::Codec(msg.into())
    }
}
