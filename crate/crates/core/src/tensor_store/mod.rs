//! Reading, validating and writing safetensors checkpoint containers.
//!
//! Layout:
//!   [8 bytes LE u64: header length N]
//!   [N bytes: UTF-8 JSON header]
//!   [data region]
//!
//! The header maps tensor names to `{dtype, shape, data_offsets: [begin, end]}`
//! with offsets relative to the start of the data region. An optional
//! `__metadata__` string map is carried along untouched.
//!
//! Opening a checkpoint reads the header only. Payloads are streamed in
//! bounded chunks with positioned reads, so several readers may share one
//! `Checkpoint` across threads.

mod dtype;
mod header;
mod writer;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, Read};
#[cfg(unix)]
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use dtype::Dtype;
pub use header::encode_header;
pub use writer::{write_checkpoint, CheckpointWriter, TensorSpec};

/// Headers larger than this are rejected as malformed.
pub const MAX_HEADER_LEN: u64 = 256 * 1024 * 1024;

#[derive(Error, Debug)]
pub enum StoreError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("duplicate tensor name in header: {0}")]
    DuplicateName(String),
    #[error("tensor {name}: unknown or unsupported dtype {dtype}")]
    UnknownDtype { name: String, dtype: String },
    #[error("tensor {name}: byte length {actual} does not match shape x dtype ({expected})")]
    LengthMismatch {
        name: String,
        expected: u64,
        actual: u64,
    },
    #[error("tensors {first} and {second} have overlapping byte ranges")]
    Overlap { first: String, second: String },
    #[error("truncated file: data region holds {available} bytes, header requires {required}")]
    Truncated { required: u64, available: u64 },
    #[error("unknown tensor: {0}")]
    UnknownTensor(String),
    #[error("chunk size must be at least 1")]
    ZeroChunk,
    #[error("tensor {name}: payload length {actual} bytes, expected {expected}")]
    InconsistentPayload {
        name: String,
        expected: u64,
        actual: u64,
    },
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// One tensor entry of a checkpoint header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    /// Offset relative to the start of the data region.
    pub offset: u64,
    /// Length in bytes.
    pub len: u64,
}

impl TensorRecord {
    pub fn numel(&self) -> u64 {
        self.shape.iter().product()
    }
}

/// Metadata of an opened checkpoint. No payload bytes are held.
#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    file: File,
    /// Header bytes exactly as stored (including trailing padding).
    raw_header: Vec<u8>,
    data_start: u64,
    data_len: u64,
    records: Vec<TensorRecord>,
    by_name: HashMap<String, usize>,
    metadata: Option<Vec<(String, String)>>,
    total_params: u64,
}

impl Checkpoint {
    /// Open a checkpoint and parse its header. Payloads are not read.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let parsed = header::read_header(&mut (&file), file_len)?;
        Ok(Self::assemble(path.to_path_buf(), file, file_len, parsed))
    }

    fn assemble(path: PathBuf, file: File, file_len: u64, parsed: header::ParsedHeader) -> Self {
        let by_name = parsed
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), i))
            .collect();
        let total_params = parsed.records.iter().map(TensorRecord::numel).sum();
        let data_start = 8 + parsed.raw.len() as u64;
        Checkpoint {
            path,
            file,
            data_start,
            data_len: file_len - data_start,
            raw_header: parsed.raw,
            records: parsed.records,
            by_name,
            metadata: parsed.metadata,
            total_params,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records in header order.
    pub fn records(&self) -> &[TensorRecord] {
        &self.records
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.by_name.get(name).map(|&i| &self.records[i])
    }

    pub fn metadata(&self) -> Option<&[(String, String)]> {
        self.metadata.as_deref()
    }

    pub fn total_params(&self) -> u64 {
        self.total_params
    }

    pub fn raw_header(&self) -> &[u8] {
        &self.raw_header
    }

    pub fn data_start(&self) -> u64 {
        self.data_start
    }

    pub fn data_len(&self) -> u64 {
        self.data_len
    }

    /// Tensor names in lexicographic order.
    pub fn sorted_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.records.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        names
    }

    /// Read raw bytes at an offset relative to the data region.
    pub fn read_data_at(&self, buf: &mut [u8], offset: u64) -> io::Result<()> {
        read_exact_at(&self.file, buf, self.data_start + offset)
    }

    /// Stream a tensor's elements, widened to f64, in chunks of at most
    /// `chunk_elems` elements.
    pub fn read_chunks(&self, name: &str, chunk_elems: usize) -> Result<ChunkIter<'_>> {
        Ok(ChunkIter {
            cursor: self.cursor(name, chunk_elems)?,
            raw: Vec::new(),
        })
    }

    /// Positioned raw-byte cursor over one tensor.
    pub fn cursor(&self, name: &str, chunk_elems: usize) -> Result<TensorCursor<'_>> {
        if chunk_elems == 0 {
            return Err(StoreError::ZeroChunk);
        }
        let record = self
            .get(name)
            .ok_or_else(|| StoreError::UnknownTensor(name.to_string()))?;
        Ok(TensorCursor {
            ckpt: self,
            record,
            chunk_elems,
            next_elem: 0,
        })
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<()> {
    file.read_exact_at(buf, offset)
}

#[cfg(not(unix))]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<()> {
    use std::io::{Seek, SeekFrom};
    let mut f = file;
    f.seek(SeekFrom::Start(offset))?;
    f.read_exact(buf)
}

/// Parse a header from any reader; `file_len` is the total container size.
/// Reads exactly `8 + N` bytes.
pub fn parse_header_from<R: Read>(reader: &mut R, file_len: u64) -> Result<Vec<TensorRecord>> {
    Ok(header::read_header(reader, file_len)?.records)
}

/// Chunked reader over one tensor's raw bytes.
pub struct TensorCursor<'a> {
    ckpt: &'a Checkpoint,
    record: &'a TensorRecord,
    chunk_elems: usize,
    next_elem: u64,
}

impl<'a> TensorCursor<'a> {
    pub fn record(&self) -> &'a TensorRecord {
        self.record
    }

    /// Flat index of the first element the next chunk will hold.
    pub fn position(&self) -> u64 {
        self.next_elem
    }

    /// Fill `buf` with the next chunk of raw element bytes. Returns the
    /// number of elements read; 0 at the end of the tensor.
    pub fn next_raw(&mut self, buf: &mut Vec<u8>) -> io::Result<usize> {
        let remaining = self.record.numel() - self.next_elem;
        let n = remaining.min(self.chunk_elems as u64) as usize;
        if n == 0 {
            buf.clear();
            return Ok(0);
        }
        let size = self.record.dtype.size();
        buf.resize(n * size, 0);
        let offset = self.record.offset + self.next_elem * size as u64;
        self.ckpt.read_data_at(buf, offset)?;
        self.next_elem += n as u64;
        Ok(n)
    }
}

/// Iterator of widened chunks; see [`Checkpoint::read_chunks`].
pub struct ChunkIter<'a> {
    cursor: TensorCursor<'a>,
    raw: Vec<u8>,
}

impl Iterator for ChunkIter<'_> {
    type Item = io::Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.cursor.next_raw(&mut self.raw) {
            Ok(0) => None,
            Ok(n) => {
                let mut out = Vec::with_capacity(n);
                self.cursor.record.dtype.widen_into(&self.raw, &mut out);
                Some(Ok(out))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchReason {
    MissingInPre,
    MissingInFt,
    Shape,
    Dtype,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub name: String,
    pub reason: MismatchReason,
}

/// Structural comparison of a pre-trained / fine-tuned checkpoint pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairReport {
    pub aligned: bool,
    pub mismatches: Vec<Mismatch>,
}

/// Compare tensor names, shapes and dtypes of two checkpoints.
pub fn validate_pair(pre: &Checkpoint, ft: &Checkpoint) -> PairReport {
    let names: BTreeSet<&str> = pre
        .records
        .iter()
        .chain(ft.records.iter())
        .map(|r| r.name.as_str())
        .collect();
    let mut mismatches = Vec::new();
    for name in names {
        let reason = match (pre.get(name), ft.get(name)) {
            (None, _) => Some(MismatchReason::MissingInPre),
            (_, None) => Some(MismatchReason::MissingInFt),
            (Some(a), Some(b)) if a.shape != b.shape => Some(MismatchReason::Shape),
            (Some(a), Some(b)) if a.dtype != b.dtype => Some(MismatchReason::Dtype),
            _ => None,
        };
        if let Some(reason) = reason {
            mismatches.push(Mismatch {
                name: name.to_string(),
                reason,
            });
        }
    }
    PairReport {
        aligned: mismatches.is_empty(),
        mismatches,
    }
}
