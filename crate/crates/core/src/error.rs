use std::io;

use thiserror::Error;

/// Crate-wide error type. Storage-level variants carry enough context to
/// identify the offending page or file; validation variants are caller
/// errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("bad block size {0}: must be a power of two >= 512")]
    BadBlockSize(u32),

    #[error("not a page file or corrupt header: {0}")]
    BadHeader(String),

    #[error("page {0} out of range (allocated {1})")]
    PageOutOfRange(u32, u32),

    #[error("page id 0 is reserved")]
    NullPage,

    #[error("header directory full")]
    DirectoryFull,

    #[error("no tree named {0:?} in this file")]
    UnknownTree(String),

    #[error("duplicate key")]
    DuplicateKey,

    #[error("key length {got} exceeds key width {width}")]
    KeyTooLong { got: usize, width: usize },

    #[error("tree config infeasible: {0}")]
    BadTreeConfig(String),

    #[error("atom is empty")]
    EmptyAtom,

    #[error("atom length {got} exceeds limit {limit}")]
    AtomTooLong { got: usize, limit: usize },

    #[error("generator infeasible: {0}")]
    Infeasible(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("bad run file: {0}")]
    BadRunFile(String),

    #[error("index family mismatch: file holds {found}, expected {expected}")]
    FamilyMismatch { found: String, expected: String },

    #[error("scenario shape violation: {0}")]
    BadScenario(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
