use std::collections::BTreeMap;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use super::histogram::{BinConfig, BinLayout, BinStat};
use super::{PairView, RankError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexConfig {
    pub bins: BinConfig,
    /// Name patterns left out of the ranking.
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TensorStat {
    pub count: u64,
    pub sum_r: f64,
    pub zero_count: u64,
    pub inf_count: u64,
    /// Smallest positive finite r, if any.
    pub min_pos_r: Option<f64>,
    /// Largest finite r, if any.
    pub max_finite_r: Option<f64>,
}

impl TensorStat {
    #[inline]
    fn add_positive(&mut self, r: f64) {
        self.min_pos_r = Some(self.min_pos_r.map_or(r, |m| m.min(r)));
        self.max_finite_r = Some(self.max_finite_r.map_or(r, |m| m.max(r)));
    }

    /// Whether some positive finite r of this tensor may lie in `[lo, hi]`.
    pub(crate) fn may_hold(&self, lo: f64, hi: f64) -> bool {
        match (self.min_pos_r, self.max_finite_r) {
            (Some(min), Some(max)) => min <= hi && max >= lo,
            _ => false,
        }
    }
}

/// Streaming summary of relative changes over an aligned pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaIndex {
    pub config: IndexConfig,
    pub total_count: u64,
    pub zero_count: u64,
    pub inf_count: u64,
    pub finite_sum_r: f64,
    #[serde(serialize_with = "sparse_histogram")]
    pub histogram: Vec<BinStat>,
    pub per_tensor: BTreeMap<String, TensorStat>,
}

fn sparse_histogram<S: Serializer>(hist: &[BinStat], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut map = s.serialize_map(None)?;
    for (slot, stat) in hist.iter().enumerate().filter(|(_, b)| b.count > 0) {
        map.serialize_entry(&slot, stat)?;
    }
    map.end()
}

impl DeltaIndex {
    pub fn finite_count(&self) -> u64 {
        self.total_count - self.inf_count
    }

    pub fn positive_finite_count(&self) -> u64 {
        self.total_count - self.inf_count - self.zero_count
    }

    pub fn layout(&self) -> BinLayout {
        BinLayout::new(self.config.bins).expect("index built from a valid layout")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serializes")
    }
}

struct Partial {
    stat: TensorStat,
    hist: Vec<BinStat>,
}

/// One pass over the pair: every included parameter counted exactly once.
pub fn build_delta_index(view: &PairView<'_>) -> Result<DeltaIndex> {
    let layout = BinLayout::new(view.options.bins).map_err(RankError::BinConfig)?;
    let n_slots = layout.n_slots();
    let mut histogram = vec![BinStat::default(); n_slots];
    let mut per_tensor = BTreeMap::new();
    let (mut total, mut zeros, mut infs) = (0u64, 0u64, 0u64);

    let positions: Vec<usize> = (0..view.tensors().len()).collect();
    view.fold_ordered(
        &positions,
        |_, rec| {
            let mut p = Partial {
                stat: TensorStat::default(),
                hist: vec![BinStat::default(); n_slots],
            };
            view.scan_tensor(&rec.name, |chunk| {
                for &r in chunk.r {
                    if r == 0.0 {
                        p.stat.zero_count += 1;
                    } else if r == f64::INFINITY {
                        p.stat.inf_count += 1;
                    } else {
                        p.hist[layout.slot(r)].add(r);
                        p.stat.sum_r += r;
                        p.stat.add_positive(r);
                    }
                }
                p.stat.count += chunk.r.len() as u64;
                Ok(())
            })?;
            Ok(p)
        },
        |pos, p| {
            for (acc, b) in histogram.iter_mut().zip(&p.hist) {
                if b.count > 0 {
                    acc.merge(b);
                }
            }
            total += p.stat.count;
            zeros += p.stat.zero_count;
            infs += p.stat.inf_count;
            per_tensor.insert(view.tensors()[pos].name.clone(), p.stat);
            Ok(())
        },
    )?;

    let finite_sum_r = histogram.iter().map(|b| b.sum_r).sum();
    Ok(DeltaIndex {
        config: IndexConfig {
            bins: layout.config(),
            exclude: view.exclusions().patterns(),
        },
        total_count: total,
        zero_count: zeros,
        inf_count: infs,
        finite_sum_r,
        histogram,
        per_tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{full_sort, write_pair, Tensor};
    use super::super::*;
    use crate::names::Exclusions;
    use crate::tensor_store::{Checkpoint, Dtype};
    use rand::{Rng, SeedableRng};

    fn open_view<'a>(pre: &'a Checkpoint, ft: &'a Checkpoint, chunk: usize) -> PairView<'a> {
        PairView::new(
            pre,
            ft,
            Exclusions::default(),
            ScanOptions {
                chunk_elems: chunk,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn identical_pair_is_all_zero() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f64> = (0..100).map(|i| i as f64 - 50.0).collect();
        let (p, f, _) = write_pair(
            dir.path(),
            vec![Tensor {
                name: "w".into(),
                dtype: Dtype::F32,
                pre: vals.clone(),
                ft: vals,
            }],
        );
        let (pre, ft) = (Checkpoint::open(p).unwrap(), Checkpoint::open(f).unwrap());
        let idx = build_delta_index(&open_view(&pre, &ft, 7)).unwrap();
        assert_eq!(idx.total_count, 100);
        assert_eq!(idx.zero_count, 100);
        assert_eq!(idx.finite_sum_r, 0.0);
    }

    #[test]
    fn zero_changed_to_one_is_infinite() {
        let dir = tempfile::tempdir().unwrap();
        let (p, f, _) = write_pair(
            dir.path(),
            vec![Tensor {
                name: "w".into(),
                dtype: Dtype::BF16,
                pre: vec![0.0, 1.0, 2.0],
                ft: vec![1.0, 1.0, 3.0],
            }],
        );
        let (pre, ft) = (Checkpoint::open(p).unwrap(), Checkpoint::open(f).unwrap());
        let idx = build_delta_index(&open_view(&pre, &ft, 2)).unwrap();
        assert_eq!(idx.inf_count, 1);
        assert_eq!(idx.zero_count, 1);
        assert_eq!(idx.finite_sum_r, 0.5);
        assert_eq!(idx.per_tensor["w"].inf_count, 1);
    }

    #[test]
    fn histogram_matches_brute_force_recount() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let dir = tempfile::tempdir().unwrap();
        let tensors: Vec<Tensor> = ["b", "a", "c"]
            .iter()
            .zip([Dtype::F32, Dtype::F16, Dtype::BF16])
            .map(|(n, dtype)| {
                let len = 33_333 + rng.gen_range(0..3);
                let pre: Vec<f64> = (0..len)
                    .map(|_| if rng.gen_bool(0.01) { 0.0 } else { rng.gen_range(-2.0..2.0) })
                    .collect();
                let ft = pre
                    .iter()
                    .map(|&p| if rng.gen_bool(0.05) { p } else { p + rng.gen_range(-0.1..0.1) })
                    .collect();
                Tensor {
                    name: n.to_string(),
                    dtype,
                    pre,
                    ft,
                }
            })
            .collect();
        let (p, f, stored) = write_pair(dir.path(), tensors);
        let (pre, ft) = (Checkpoint::open(p).unwrap(), Checkpoint::open(f).unwrap());
        let idx = build_delta_index(&open_view(&pre, &ft, 1000)).unwrap();

        let layout = idx.layout();
        let all = full_sort(&stored);
        let mut hist = vec![(0u64, 0f64); layout.n_slots()];
        let (mut zeros, mut infs) = (0, 0);
        for (r, _, _) in &all {
            if *r == 0.0 {
                zeros += 1;
            } else if r.is_infinite() {
                infs += 1;
            } else {
                let s = layout.slot(*r);
                hist[s].0 += 1;
                hist[s].1 += r;
            }
        }
        assert_eq!(idx.total_count, all.len() as u64);
        assert_eq!(idx.zero_count, zeros);
        assert_eq!(idx.inf_count, infs);
        for (got, want) in idx.histogram.iter().zip(&hist) {
            assert_eq!(got.count, want.0);
            assert!((got.sum_r - want.1).abs() <= 1e-9 * want.1.abs().max(1e-300));
        }
        let hist_total: u64 = idx.histogram.iter().map(|b| b.count).sum();
        assert_eq!(idx.total_count, idx.zero_count + idx.inf_count + hist_total);
        let per: u64 = idx.per_tensor.values().map(|t| t.count).sum();
        assert_eq!(per, idx.total_count);
        let direct: f64 = all.iter().filter(|x| x.0.is_finite()).map(|x| x.0).sum();
        assert!((idx.finite_sum_r - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn serialization_is_deterministic_across_chunkings() {
        let dir = tempfile::tempdir().unwrap();
        let pre: Vec<f64> = (1..5000).map(|i| (i as f64).sin()).collect();
        let ft: Vec<f64> = pre.iter().map(|v| v * 1.01 + 1e-3).collect();
        let (p, f, _) = write_pair(
            dir.path(),
            vec![
                Tensor {
                    name: "x".into(),
                    dtype: Dtype::F32,
                    pre: pre.clone(),
                    ft: ft.clone(),
                },
                Tensor {
                    name: "y".into(),
                    dtype: Dtype::F16,
                    pre,
                    ft,
                },
            ],
        );
        let (pre, ft) = (Checkpoint::open(p).unwrap(), Checkpoint::open(f).unwrap());
        let a = build_delta_index(&open_view(&pre, &ft, 4096)).unwrap().to_json();
        let b = build_delta_index(&open_view(&pre, &ft, 4096)).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn exclusions_are_recorded_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let (p, f, _) = write_pair(
            dir.path(),
            vec![
                Tensor {
                    name: "model.embed_tokens.weight".into(),
                    dtype: Dtype::F32,
                    pre: vec![1.0; 10],
                    ft: vec![2.0; 10],
                },
                Tensor {
                    name: "model.layers.0.mlp.up_proj.weight".into(),
                    dtype: Dtype::F32,
                    pre: vec![1.0; 4],
                    ft: vec![1.5; 4],
                },
            ],
        );
        let (pre, ft) = (Checkpoint::open(p).unwrap(), Checkpoint::open(f).unwrap());
        let view = PairView::new(
            &pre,
            &ft,
            Exclusions::new(&["embed_tokens"]).unwrap(),
            ScanOptions::default(),
        )
        .unwrap();
        let idx = build_delta_index(&view).unwrap();
        assert_eq!(idx.total_count, 4);
        assert_eq!(idx.config.exclude, vec!["embed_tokens".to_string()]);
        assert!(idx.to_json().contains("embed_tokens"));
    }

    #[test]
    fn non_finite_parameters_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (p, f, _) = write_pair(
            dir.path(),
            vec![Tensor {
                name: "w".into(),
                dtype: Dtype::F32,
                pre: vec![1.0, f64::NAN],
                ft: vec![1.0, 1.0],
            }],
        );
        let (pre, ft) = (Checkpoint::open(p).unwrap(), Checkpoint::open(f).unwrap());
        assert!(matches!(
            build_delta_index(&open_view(&pre, &ft, 8)),
            Err(RankError::NonFinite { index: 1, .. })
        ));
    }
}
