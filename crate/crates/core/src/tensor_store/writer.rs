use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{encode_header, Dtype, Result, StoreError, TensorRecord};

const WRITE_BUF: usize = 8 << 20;

/// Name, dtype and shape of a tensor to be written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, dtype: Dtype, shape: Vec<u64>) -> Self {
        Self {
            name: name.into(),
            dtype,
            shape,
        }
    }

    pub fn byte_len(&self) -> u64 {
        self.shape.iter().product::<u64>() * self.dtype.size() as u64
    }
}

/// Streaming checkpoint writer.
///
/// The header is laid out up front from the specs (contiguous payloads in
/// the given order), then payload bytes are appended tensor by tensor.
/// Output goes to a sibling temporary file that is renamed into place by
/// [`CheckpointWriter::finish`].
pub struct CheckpointWriter {
    out: BufWriter<File>,
    tmp_path: PathBuf,
    final_path: PathBuf,
    records: Vec<TensorRecord>,
    current: usize,
    written_in_current: u64,
    bytes_written: u64,
    finished: bool,
}

impl CheckpointWriter {
    pub fn create(
        path: impl AsRef<Path>,
        specs: Vec<TensorSpec>,
        metadata: Option<Vec<(String, String)>>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut offset = 0u64;
        let mut records = Vec::with_capacity(specs.len());
        for spec in specs {
            if !seen.insert(spec.name.clone()) {
                return Err(StoreError::DuplicateName(spec.name));
            }
            if spec.shape.contains(&0) {
                return Err(StoreError::MalformedHeader(format!(
                    "tensor {}: zero-sized dimension",
                    spec.name
                )));
            }
            let len = spec.byte_len();
            records.push(TensorRecord {
                name: spec.name,
                dtype: spec.dtype,
                shape: spec.shape,
                offset,
                len,
            });
            offset += len;
        }
        let header = encode_header(&records, metadata.as_deref());
        Self::with_header(path.as_ref(), header, records)
    }

    /// Start a file whose header bytes are given verbatim. `records` must
    /// describe the same layout, sorted by offset and without gaps.
    pub(crate) fn with_header(
        path: &Path,
        header: Vec<u8>,
        records: Vec<TensorRecord>,
    ) -> Result<Self> {
        let final_path = path.to_path_buf();
        let tmp_path = tmp_sibling(path);
        let file = File::create(&tmp_path)?;
        let mut out = BufWriter::with_capacity(WRITE_BUF, file);
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        let mut w = CheckpointWriter {
            out,
            tmp_path,
            final_path,
            records,
            current: 0,
            written_in_current: 0,
            bytes_written: 8 + header.len() as u64,
            finished: false,
        };
        w.skip_complete();
        Ok(w)
    }

    pub fn records(&self) -> &[TensorRecord] {
        &self.records
    }

    fn skip_complete(&mut self) {
        while self.current < self.records.len()
            && self.written_in_current == self.records[self.current].len
        {
            self.current += 1;
            self.written_in_current = 0;
        }
    }

    /// Append payload bytes. A call may span several tensors.
    pub fn write_bytes(&mut self, mut bytes: &[u8]) -> Result<()> {
        while !bytes.is_empty() {
            let Some(rec) = self.records.get(self.current) else {
                let last = self.records.last();
                return Err(StoreError::InconsistentPayload {
                    name: last.map(|r| r.name.clone()).unwrap_or_default(),
                    expected: last.map(|r| r.len).unwrap_or(0),
                    actual: last.map(|r| r.len).unwrap_or(0) + bytes.len() as u64,
                });
            };
            let room = (rec.len - self.written_in_current) as usize;
            let n = room.min(bytes.len());
            self.out.write_all(&bytes[..n])?;
            self.written_in_current += n as u64;
            self.bytes_written += n as u64;
            bytes = &bytes[n..];
            self.skip_complete();
        }
        Ok(())
    }

    /// Copy one tensor's payload from a reader, which must yield exactly
    /// the tensor's byte length.
    pub fn write_tensor_from<R: Read>(&mut self, mut payload: R) -> Result<()> {
        let rec = self
            .records
            .get(self.current)
            .ok_or_else(|| StoreError::InconsistentPayload {
                name: String::new(),
                expected: 0,
                actual: 1,
            })?
            .clone();
        if self.written_in_current != 0 {
            return Err(StoreError::InconsistentPayload {
                name: rec.name,
                expected: rec.len,
                actual: self.written_in_current,
            });
        }
        let mut buf = vec![0u8; (1 << 20).min(rec.len.max(1) as usize)];
        let mut total = 0u64;
        loop {
            let n = match payload.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            total += n as u64;
            if total > rec.len {
                return Err(StoreError::InconsistentPayload {
                    name: rec.name,
                    expected: rec.len,
                    actual: total,
                });
            }
            self.write_bytes(&buf[..n])?;
        }
        if total != rec.len {
            return Err(StoreError::InconsistentPayload {
                name: rec.name,
                expected: rec.len,
                actual: total,
            });
        }
        Ok(())
    }

    /// Flush and move the file into place. Returns total bytes written.
    pub fn finish(mut self) -> Result<u64> {
        if let Some(rec) = self.records.get(self.current) {
            return Err(StoreError::InconsistentPayload {
                name: rec.name.clone(),
                expected: rec.len,
                actual: self.written_in_current,
            });
        }
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        fs::rename(&self.tmp_path, &self.final_path)?;
        self.finished = true;
        Ok(self.bytes_written)
    }
}

impl Drop for CheckpointWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_file(&self.tmp_path);
        }
    }
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Write a checkpoint from `(spec, payload reader)` pairs.
pub fn write_checkpoint<R: Read>(
    path: impl AsRef<Path>,
    metadata: Option<Vec<(String, String)>>,
    records: Vec<(TensorSpec, R)>,
) -> Result<u64> {
    let (specs, payloads): (Vec<_>, Vec<_>) = records.into_iter().unzip();
    let mut w = CheckpointWriter::create(path, specs, metadata)?;
    for payload in payloads {
        w.write_tensor_from(payload)?;
    }
    w.finish()
}
