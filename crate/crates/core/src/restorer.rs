//! Write checkpoints in which selected fine-tuned parameters are reverted
//! to their pre-trained values.
//!
//! Restoration copies stored bytes (never values re-encoded through f64),
//! and the output reuses the fine-tuned header byte for byte, so names,
//! dtypes, shapes, ordering and `__metadata__` are unchanged.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::delta_rank::{PairView, RankError, ThresholdSelection};
use crate::names::NameRules;
use crate::tensor_store::{validate_pair, Checkpoint, PairReport, StoreError, TensorRecord};

#[derive(Error, Debug)]
pub enum RestoreError {
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint pair is misaligned ({} mismatches)", .0.mismatches.len())]
    Misaligned(PairReport),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("restore target {0} is one of the inputs")]
    OutputIsInput(PathBuf),
}

pub type Result<T> = std::result::Result<T, RestoreError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RestoreMode {
    TopRho { rho: f64, threshold_r: f64 },
    Layers { layers: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestoreSummary {
    pub restored_count: u64,
    pub selection: RestoreMode,
    pub bytes_written: u64,
    pub out_path: PathBuf,
    /// SHA-256 of the output file, hex.
    pub digest: String,
}

struct HashingWriter {
    inner: BufWriter<File>,
    hasher: Sha256,
    written: u64,
}

impl HashingWriter {
    fn write(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(bytes)?;
        self.hasher.update(bytes);
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Per-tensor plan for one output tensor.
enum Source<'s> {
    Ft,
    Pre,
    /// Element-wise by selection; the pair view scans the tensor.
    Mixed(&'s ThresholdSelection),
}

fn check_output(out: &Path, pre: &Checkpoint, ft: &Checkpoint) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    let target = canon(out);
    if target.is_some() && (target == canon(pre.path()) || target == canon(ft.path())) {
        return Err(RestoreError::OutputIsInput(out.to_path_buf()));
    }
    Ok(())
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Stream the output: ft header verbatim, then every byte of the ft data
/// region in order, with tensors taken from the chosen source.
fn write_output<'s>(
    pre: &Checkpoint,
    ft: &Checkpoint,
    view: Option<&PairView<'_>>,
    out: &Path,
    plan: impl Fn(&TensorRecord) -> Source<'s>,
) -> Result<(u64, u64, String)> {
    check_output(out, pre, ft)?;
    let tmp = tmp_sibling(out);
    let result = (|| {
        let file = File::create(&tmp)?;
        let mut w = HashingWriter {
            inner: BufWriter::with_capacity(8 << 20, file),
            hasher: Sha256::new(),
            written: 0,
        };
        w.write(&(ft.raw_header().len() as u64).to_le_bytes())?;
        w.write(ft.raw_header())?;

        let mut by_offset: Vec<&TensorRecord> = ft.records().iter().collect();
        by_offset.sort_by_key(|r| r.offset);
        let mut pos = 0u64;
        let mut restored = 0u64;
        let mut buf = Vec::new();
        for rec in by_offset {
            copy_range(ft, pos, rec.offset, &mut w, &mut buf)?;
            match plan(rec) {
                Source::Ft => copy_range(ft, rec.offset, rec.offset + rec.len, &mut w, &mut buf)?,
                Source::Pre => {
                    let pre_rec = pre.get(&rec.name).expect("aligned pair");
                    copy_range(pre, pre_rec.offset, pre_rec.offset + pre_rec.len, &mut w, &mut buf)?;
                    restored += rec.numel();
                }
                Source::Mixed(sel) => {
                    let view = view.expect("mixed restore has a pair view");
                    let mut selector = sel.selector(&rec.name);
                    let size = rec.dtype.size();
                    let mut out_chunk = Vec::new();
                    view.scan_tensor(&rec.name, |chunk| {
                        out_chunk.clear();
                        out_chunk.extend_from_slice(chunk.ft_raw);
                        for (i, &r) in chunk.r.iter().enumerate() {
                            if selector.select(r) {
                                let b = i * size;
                                out_chunk[b..b + size].copy_from_slice(&chunk.pre_raw[b..b + size]);
                                restored += 1;
                            }
                        }
                        w.write(&out_chunk).map_err(RankError::from)
                    })?;
                }
            }
            pos = rec.offset + rec.len;
        }
        copy_range(ft, pos, ft.data_len(), &mut w, &mut buf)?;
        w.inner.flush()?;
        w.inner.get_ref().sync_all()?;
        Ok((restored, w.written, hex::encode(w.hasher.finalize())))
    })();
    match result {
        Ok(v) => {
            fs::rename(&tmp, out)?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn copy_range(
    src: &Checkpoint,
    from: u64,
    to: u64,
    w: &mut HashingWriter,
    buf: &mut Vec<u8>,
) -> Result<()> {
    const STEP: u64 = 4 << 20;
    let mut at = from;
    while at < to {
        let n = (to - at).min(STEP) as usize;
        buf.resize(n, 0);
        src.read_data_at(buf, at)?;
        w.write(buf)?;
        at += n as u64;
    }
    Ok(())
}

/// Revert the parameters of `selection` to pre-trained bytes.
pub fn restore_topk(
    view: &PairView<'_>,
    selection: &ThresholdSelection,
    out: &Path,
) -> Result<RestoreSummary> {
    selection.check_against(view)?;
    let included: BTreeSet<&str> = view.tensors().iter().map(|r| r.name.as_str()).collect();
    let (restored, bytes, digest) = write_output(view.pre, view.ft, Some(view), out, |rec| {
        if !included.contains(rec.name.as_str()) || selection.selected_count == 0 {
            Source::Ft
        } else if selection.selected_count == selection.total_count {
            Source::Pre
        } else {
            Source::Mixed(selection)
        }
    })?;
    debug_assert_eq!(restored, selection.selected_count);
    Ok(RestoreSummary {
        restored_count: restored,
        selection: RestoreMode::TopRho {
            rho: selection.rho,
            threshold_r: if selection.threshold_r.is_finite() {
                selection.threshold_r
            } else {
                f64::MAX
            },
        },
        bytes_written: bytes,
        out_path: out.to_path_buf(),
        digest,
    })
}

/// Copy every tensor of the given layers from the pre-trained checkpoint.
pub fn restore_layers(
    pre: &Checkpoint,
    ft: &Checkpoint,
    layers: &[u32],
    rules: &NameRules,
    out: &Path,
) -> Result<RestoreSummary> {
    let report = validate_pair(pre, ft);
    if !report.aligned {
        return Err(RestoreError::Misaligned(report));
    }
    if layers.is_empty() {
        return Err(RestoreError::EmptySelection("no layers requested".into()));
    }
    let wanted: BTreeSet<u32> = layers.iter().copied().collect();
    let matches = |rec: &TensorRecord| rules.layer_of(&rec.name).is_some_and(|l| wanted.contains(&l));
    if !ft.records().iter().any(matches) {
        return Err(RestoreError::EmptySelection(format!(
            "no tensor belongs to layers {layers:?}"
        )));
    }
    let (restored, bytes, digest) = write_output(pre, ft, None, out, |rec| {
        if matches(rec) {
            Source::Pre
        } else {
            Source::Ft
        }
    })?;
    Ok(RestoreSummary {
        restored_count: restored,
        selection: RestoreMode::Layers {
            layers: wanted.into_iter().collect(),
        },
        bytes_written: bytes,
        out_path: out.to_path_buf(),
        digest,
    })
}
