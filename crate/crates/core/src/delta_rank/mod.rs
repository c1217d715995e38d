//! Per-parameter relative change between a pre-trained and a fine-tuned
//! checkpoint, its global ranking, concentration and attribution.
//!
//! `r = |s - p| / |p|` for every parameter, ranked globally across tensors.
//! Selection is exact at bounded memory: one streaming pass builds a
//! log-spaced histogram, then only the members of the bin holding the
//! requested rank are re-streamed and sorted (splitting the bin further by
//! f64 bit pattern if it is too populous to hold).

mod attribution;
mod histogram;
mod index;
mod rank;
mod select;

use std::io;

use rayon::prelude::*;
use thiserror::Error;

use crate::names::{Exclusions, PatternError};
use crate::tensor_store::{validate_pair, Checkpoint, PairReport, StoreError, TensorRecord};

pub use attribution::{attribute, AttributionReport};
pub use histogram::{BinConfig, BinLayout, BinStat};
pub use index::{build_delta_index, DeltaIndex, IndexConfig, TensorStat};
pub use select::{
    concentration, exact_fraction_count, select_threshold, ConcentrationRow, ConcentrationTable,
    TensorSelector, ThresholdSelection,
};

/// Default number of elements read per chunk.
pub const DEFAULT_CHUNK_ELEMS: usize = 1 << 20;

/// Default cap on values held in memory while refining a boundary bin.
pub const DEFAULT_COLLECT_BUDGET: usize = 1 << 23;

#[derive(Error, Debug)]
pub enum RankError {
    #[error("checkpoint pair is misaligned ({} mismatches)", .0.mismatches.len())]
    Misaligned(PairReport),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("tensor {name}: non-finite parameter value at flat index {index}")]
    NonFinite { name: String, index: u64 },
    #[error("rho {0} is outside [0, 1]")]
    RhoOutOfRange(f64),
    #[error("fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("degenerate index: total finite relative change is zero")]
    DegenerateIndex,
    #[error("invalid bin configuration: {0}")]
    BinConfig(String),
    #[error("selection does not belong to this checkpoint pair: {0}")]
    SelectionMismatch(String),
}

pub type Result<T> = std::result::Result<T, RankError>;

/// Relative change `|s - p| / |p|`; `+inf` when `p == 0` and `s != 0`,
/// `0` when both are zero.
pub fn relative_change(p: f64, s: f64) -> f64 {
    if p == 0.0 {
        if s == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (s - p).abs() / p.abs()
    }
}

/// Options shared by every pass over a checkpoint pair.
#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub chunk_elems: usize,
    pub bins: BinConfig,
    pub collect_budget: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            chunk_elems: DEFAULT_CHUNK_ELEMS,
            bins: BinConfig::default(),
            collect_budget: DEFAULT_COLLECT_BUDGET,
        }
    }
}

/// An aligned checkpoint pair restricted to the tensors that take part in
/// ranking, in lexicographic name order (the tie-break order).
pub struct PairView<'a> {
    pub pre: &'a Checkpoint,
    pub ft: &'a Checkpoint,
    tensors: Vec<&'a TensorRecord>,
    exclusions: Exclusions,
    pub options: ScanOptions,
}

/// One chunk of an aligned tensor pair.
pub struct PairChunk<'b> {
    /// Flat index of the first element.
    pub start: u64,
    pub pre_raw: &'b [u8],
    pub ft_raw: &'b [u8],
    pub r: &'b [f64],
}

impl<'a> PairView<'a> {
    pub fn new(
        pre: &'a Checkpoint,
        ft: &'a Checkpoint,
        exclusions: Exclusions,
        options: ScanOptions,
    ) -> Result<Self> {
        let report = validate_pair(pre, ft);
        if !report.aligned {
            return Err(RankError::Misaligned(report));
        }
        if options.chunk_elems == 0 {
            return Err(StoreError::ZeroChunk.into());
        }
        let mut tensors: Vec<&TensorRecord> = ft
            .records()
            .iter()
            .filter(|r| !exclusions.excludes(&r.name))
            .collect();
        tensors.sort_unstable_by(|a, b| a.name.cmp(&b.name));
        Ok(Self {
            pre,
            ft,
            tensors,
            exclusions,
            options,
        })
    }

    /// Included tensors, sorted by name.
    pub fn tensors(&self) -> &[&'a TensorRecord] {
        &self.tensors
    }

    pub fn exclusions(&self) -> &Exclusions {
        &self.exclusions
    }

    pub fn total_count(&self) -> u64 {
        self.tensors.iter().map(|r| r.numel()).sum()
    }

    /// Stream one tensor pair chunk by chunk, with `r` computed per element.
    pub fn scan_tensor(
        &self,
        name: &str,
        mut f: impl FnMut(PairChunk<'_>) -> Result<()>,
    ) -> Result<()> {
        let chunk = self.options.chunk_elems;
        let mut pre_cur = self.pre.cursor(name, chunk)?;
        let mut ft_cur = self.ft.cursor(name, chunk)?;
        let dtype = ft_cur.record().dtype;
        let (mut pre_raw, mut ft_raw) = (Vec::new(), Vec::new());
        let (mut pre_w, mut ft_w, mut r) = (Vec::new(), Vec::new(), Vec::new());
        loop {
            let start = ft_cur.position();
            let n = ft_cur.next_raw(&mut ft_raw)?;
            if n == 0 {
                break;
            }
            pre_cur.next_raw(&mut pre_raw)?;
            pre_w.clear();
            ft_w.clear();
            dtype.widen_into(&pre_raw, &mut pre_w);
            dtype.widen_into(&ft_raw, &mut ft_w);
            r.clear();
            for (i, (&p, &s)) in pre_w.iter().zip(&ft_w).enumerate() {
                if !p.is_finite() || !s.is_finite() {
                    return Err(RankError::NonFinite {
                        name: name.to_string(),
                        index: start + i as u64,
                    });
                }
                r.push(relative_change(p, s));
            }
            f(PairChunk {
                start,
                pre_raw: &pre_raw,
                ft_raw: &ft_raw,
                r: &r,
            })?;
        }
        Ok(())
    }

    /// Map `work` over the given tensor positions in parallel and feed the
    /// results to `merge` in ascending position order. Work is done in
    /// batches so at most a few partial results are alive at once.
    pub(crate) fn fold_ordered<T, W, M>(&self, positions: &[usize], work: W, mut merge: M) -> Result<()>
    where
        T: Send,
        W: Fn(usize, &TensorRecord) -> Result<T> + Sync,
        M: FnMut(usize, T) -> Result<()>,
    {
        let batch = (rayon::current_num_threads() * 2).max(1);
        for group in positions.chunks(batch) {
            let results: Vec<Result<T>> = group
                .par_iter()
                .map(|&pos| work(pos, self.tensors[pos]))
                .collect();
            for (&pos, res) in group.iter().zip(results) {
                merge(pos, res?)?;
            }
        }
        Ok(())
    }
}
