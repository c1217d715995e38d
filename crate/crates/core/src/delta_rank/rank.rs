//! Exact k-th largest finite `r` by histogram refinement.
//!
//! A query starts in the histogram slot that holds its rank. While the
//! candidate range is too populous to hold in memory it is split into
//! sub-ranges of f64 bit patterns (bit order equals value order for
//! positive doubles) and re-streamed; once it fits, its members are
//! collected and sorted. Queries sharing a range share a pass.

use std::collections::BTreeMap;

use super::index::DeltaIndex;
use super::histogram::BinStat;
use super::{PairView, Result};

const SPLIT: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RankAnswer {
    /// The k-th largest finite r.
    pub value: f64,
    /// Finite parameters with r strictly greater than `value`.
    pub count_gt: u64,
    /// Sum of the k largest finite r.
    pub sum_top: f64,
    /// Per tensor position: parameters with r == `value` (when requested).
    pub eq_per_tensor: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Range {
    lo: u64,
    hi: u64,
}

impl Range {
    fn contains(self, bits: u64) -> bool {
        self.lo <= bits && bits <= self.hi
    }

    fn values(self) -> (f64, f64) {
        (f64::from_bits(self.lo), f64::from_bits(self.hi))
    }
}

#[derive(Debug, Clone)]
struct Pending {
    range: Range,
    count: u64,
    /// 1-based rank within the range, counted from the top.
    need: u64,
    above_count: u64,
    above_sum: f64,
}

enum Mode {
    Collect,
    Split { width: u64, parts: usize },
    CountEq,
}

/// Resolve 1-based ranks `ks` among finite r (descending). Every k must be
/// in `1..=index.finite_count()`.
pub(crate) fn resolve_ranks(
    view: &PairView<'_>,
    index: &DeltaIndex,
    ks: &[u64],
    want_ties: bool,
) -> Result<Vec<RankAnswer>> {
    let positive = index.positive_finite_count();
    let mut answers: Vec<Option<RankAnswer>> = vec![None; ks.len()];
    let mut pending: Vec<(usize, Pending)> = Vec::new();
    let layout = index.layout();

    for (qi, &k) in ks.iter().enumerate() {
        debug_assert!(k >= 1 && k <= index.finite_count());
        if k > positive {
            answers[qi] = Some(zero_answer(view, index, want_ties));
            continue;
        }
        let (mut above_count, mut above_sum) = (0u64, 0f64);
        for slot in (0..index.histogram.len()).rev() {
            let b = index.histogram[slot];
            if above_count + b.count >= k {
                let (lo, hi) = layout.slot_bits(slot);
                pending.push((
                    qi,
                    Pending {
                        range: Range { lo, hi },
                        count: b.count,
                        need: k - above_count,
                        above_count,
                        above_sum,
                    },
                ));
                break;
            }
            above_count += b.count;
            above_sum += b.sum_r;
        }
    }

    while !pending.is_empty() {
        let mut ranges: Vec<Range> = pending.iter().map(|(_, p)| p.range).collect();
        ranges.sort_unstable();
        ranges.dedup();
        let counts: BTreeMap<Range, u64> = pending.iter().map(|(_, p)| (p.range, p.count)).collect();
        let modes: Vec<Mode> = ranges
            .iter()
            .map(|&r| {
                let span = r.hi - r.lo + 1;
                if counts[&r] as usize <= view.options.collect_budget {
                    Mode::Collect
                } else if span == 1 {
                    Mode::CountEq
                } else {
                    let parts = span.min(SPLIT);
                    let width = span.div_ceil(parts);
                    Mode::Split {
                        width,
                        parts: span.div_ceil(width) as usize,
                    }
                }
            })
            .collect();
        let pass = run_pass(view, index, &ranges, &modes)?;

        let mut next = Vec::new();
        for (qi, p) in pending {
            let ri = ranges.binary_search(&p.range).expect("range present");
            match (&modes[ri], &pass[ri]) {
                (Mode::Collect, PassResult::Collected(sorted)) => {
                    let need = p.need as usize;
                    let value = sorted[need - 1].0;
                    let gt_in = sorted.partition_point(|&(v, _)| v > value);
                    let top_in: f64 = sorted[..need].iter().map(|&(v, _)| v).sum();
                    let mut eq = BTreeMap::new();
                    if want_ties {
                        for &(v, pos) in &sorted[gt_in..] {
                            if v != value {
                                break;
                            }
                            *eq.entry(pos as usize).or_insert(0) += 1;
                        }
                    }
                    answers[qi] = Some(RankAnswer {
                        value,
                        count_gt: p.above_count + gt_in as u64,
                        sum_top: p.above_sum + top_in,
                        eq_per_tensor: eq,
                    });
                }
                (Mode::CountEq, PassResult::Equal(eq)) => {
                    let value = f64::from_bits(p.range.lo);
                    answers[qi] = Some(RankAnswer {
                        value,
                        count_gt: p.above_count,
                        sum_top: p.above_sum + p.need as f64 * value,
                        eq_per_tensor: eq.clone(),
                    });
                }
                (Mode::Split { width, .. }, PassResult::Split(parts)) => {
                    let (mut above_count, mut above_sum) = (p.above_count, p.above_sum);
                    let mut need = p.need;
                    for (j, b) in parts.iter().enumerate().rev() {
                        if b.count >= need {
                            let lo = p.range.lo + j as u64 * width;
                            let hi = (lo + width - 1).min(p.range.hi);
                            next.push((
                                qi,
                                Pending {
                                    range: Range { lo, hi },
                                    count: b.count,
                                    need,
                                    above_count,
                                    above_sum,
                                },
                            ));
                            break;
                        }
                        need -= b.count;
                        above_count += b.count;
                        above_sum += b.sum_r;
                    }
                }
                _ => unreachable!("pass result matches its mode"),
            }
        }
        pending = next;
    }

    Ok(answers.into_iter().map(|a| a.expect("every query resolved")).collect())
}

fn zero_answer(view: &PairView<'_>, index: &DeltaIndex, want_ties: bool) -> RankAnswer {
    let mut eq = BTreeMap::new();
    if want_ties {
        for (pos, rec) in view.tensors().iter().enumerate() {
            let z = index.per_tensor.get(&rec.name).map_or(0, |t| t.zero_count);
            if z > 0 {
                eq.insert(pos, z);
            }
        }
    }
    RankAnswer {
        value: 0.0,
        count_gt: index.positive_finite_count(),
        sum_top: index.finite_sum_r,
        eq_per_tensor: eq,
    }
}

enum PassResult {
    /// (value, tensor position), sorted by descending value then position.
    Collected(Vec<(f64, u32)>),
    Split(Vec<BinStat>),
    Equal(BTreeMap<usize, u64>),
}

enum Acc {
    Collect(Vec<(f64, u32)>),
    Split(Vec<BinStat>),
    Equal(u64),
}

fn run_pass(
    view: &PairView<'_>,
    index: &DeltaIndex,
    ranges: &[Range],
    modes: &[Mode],
) -> Result<Vec<PassResult>> {
    let positions: Vec<usize> = view
        .tensors()
        .iter()
        .enumerate()
        .filter(|(_, rec)| {
            index.per_tensor.get(&rec.name).is_some_and(|t| {
                ranges.iter().any(|r| {
                    let (lo, hi) = r.values();
                    t.may_hold(lo, hi)
                })
            })
        })
        .map(|(pos, _)| pos)
        .collect();

    let mut results: Vec<PassResult> = modes
        .iter()
        .map(|m| match m {
            Mode::Collect => PassResult::Collected(Vec::new()),
            Mode::Split { parts, .. } => PassResult::Split(vec![BinStat::default(); *parts]),
            Mode::CountEq => PassResult::Equal(BTreeMap::new()),
        })
        .collect();
    let span_lo = ranges.iter().map(|r| r.lo).min().unwrap_or(0);
    let span_hi = ranges.iter().map(|r| r.hi).max().unwrap_or(0);

    view.fold_ordered(
        &positions,
        |pos, rec| {
            let mut accs: Vec<Acc> = modes
                .iter()
                .map(|m| match m {
                    Mode::Collect => Acc::Collect(Vec::new()),
                    Mode::Split { parts, .. } => Acc::Split(vec![BinStat::default(); *parts]),
                    Mode::CountEq => Acc::Equal(0),
                })
                .collect();
            view.scan_tensor(&rec.name, |chunk| {
                for &r in chunk.r {
                    if !(r > 0.0 && r.is_finite()) {
                        continue;
                    }
                    let bits = r.to_bits();
                    if bits < span_lo || bits > span_hi {
                        continue;
                    }
                    // ranges are sorted and disjoint or identical after dedup
                    let Some(ri) = find_range(ranges, bits) else {
                        continue;
                    };
                    match (&mut accs[ri], &modes[ri]) {
                        (Acc::Collect(v), _) => v.push((r, pos as u32)),
                        (Acc::Split(parts), Mode::Split { width, .. }) => {
                            parts[((bits - ranges[ri].lo) / width) as usize].add(r)
                        }
                        (Acc::Equal(n), _) => *n += 1,
                        _ => unreachable!(),
                    }
                }
                Ok(())
            })?;
            Ok(accs)
        },
        |pos, accs| {
            for (res, acc) in results.iter_mut().zip(accs) {
                match (res, acc) {
                    (PassResult::Collected(all), Acc::Collect(v)) => all.extend(v),
                    (PassResult::Split(all), Acc::Split(v)) => {
                        for (a, b) in all.iter_mut().zip(&v) {
                            if b.count > 0 {
                                a.merge(b);
                            }
                        }
                    }
                    (PassResult::Equal(map), Acc::Equal(n)) => {
                        if n > 0 {
                            map.insert(pos, n);
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Ok(())
        },
    )?;

    for res in &mut results {
        if let PassResult::Collected(v) = res {
            v.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        }
    }
    Ok(results)
}

/// Ranges come from distinct histogram slots or sub-ranges of distinct
/// parents, so after dedup they are pairwise disjoint.
#[inline]
fn find_range(ranges: &[Range], bits: u64) -> Option<usize> {
    let i = ranges.partition_point(|r| r.hi < bits);
    (i < ranges.len() && ranges[i].contains(bits)).then_some(i)
}
