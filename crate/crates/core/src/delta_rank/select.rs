use std::collections::BTreeMap;

use serde::{Serialize, Serializer};

use super::index::DeltaIndex;
use super::rank::resolve_ranks;
use super::{PairView, RankError, Result};

/// Parameter count for a fraction: `floor(x * n + n * 2^-50)`, evaluated
/// in integer arithmetic.
///
/// The `n * 2^-50` slack absorbs the representation error of decimal
/// fractions (`0.29`, `1/3`) so that `0.29 * 100` counts 29; it stays
/// below one parameter for every `n < 2^50`.
pub fn exact_fraction_count(x: f64, n: u64) -> u64 {
    debug_assert!((0.0..=1.0).contains(&x));
    if x <= 0.0 {
        return 0;
    }
    if x >= 1.0 {
        return n;
    }
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    // x = mantissa * 2^-shift, shift >= 53 since x < 1
    let (mantissa, shift) = if exp_bits == 0 {
        (frac, 1074u32)
    } else {
        (frac | (1u64 << 52), (1075 - exp_bits) as u32)
    };
    if shift > 113 {
        return n >> 50;
    }
    let scaled = mantissa as u128 * n as u128 + ((n as u128) << (shift - 50));
    ((scaled >> shift) as u64).min(n)
}

fn ser_r<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Exact description of the top-`rho` parameter set.
///
/// Selected: every included parameter with `r > threshold_r`, plus the
/// first `include_ties_up_to` parameters with `r == threshold_r` in
/// ascending (tensor name, flat index) order. `tie_quota` spells that
/// prefix out per tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSelection {
    pub rho: f64,
    pub total_count: u64,
    #[serde(serialize_with = "ser_r")]
    pub threshold_r: f64,
    pub include_ties_up_to: u64,
    pub selected_count: u64,
    pub selects_all_inf: bool,
    pub tie_quota: BTreeMap<String, u64>,
    pub exclude: Vec<String>,
}

impl ThresholdSelection {
    /// Per-tensor membership test, fed elements in flat-index order.
    pub fn selector(&self, tensor: &str) -> TensorSelector {
        TensorSelector {
            threshold: self.threshold_r,
            quota: self.tie_quota.get(tensor).copied().unwrap_or(0),
            ties_seen: 0,
        }
    }

    /// Check that this selection was built for `view`.
    pub fn check_against(&self, view: &PairView<'_>) -> Result<()> {
        if self.exclude != view.exclusions().patterns() {
            return Err(RankError::SelectionMismatch(
                "exclusion patterns differ".into(),
            ));
        }
        let total = view.total_count();
        if self.total_count != total {
            return Err(RankError::SelectionMismatch(format!(
                "selection covers {} parameters, pair has {total}",
                self.total_count
            )));
        }
        if let Some(name) = self
            .tie_quota
            .keys()
            .find(|n| view.tensors().binary_search_by(|r| r.name.as_str().cmp(n)).is_err())
        {
            return Err(RankError::SelectionMismatch(format!(
                "tie quota names unknown tensor {name}"
            )));
        }
        Ok(())
    }
}

/// Streaming membership test for one tensor.
#[derive(Debug, Clone)]
pub struct TensorSelector {
    threshold: f64,
    quota: u64,
    ties_seen: u64,
}

impl TensorSelector {
    #[inline]
    pub fn select(&mut self, r: f64) -> bool {
        if r > self.threshold {
            true
        } else if r == self.threshold {
            self.ties_seen += 1;
            self.ties_seen <= self.quota
        } else {
            false
        }
    }
}

fn quotas(view: &PairView<'_>, eq: &BTreeMap<usize, u64>, mut take: u64) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for (&pos, &n) in eq {
        if take == 0 {
            break;
        }
        let q = n.min(take);
        take -= q;
        out.insert(view.tensors()[pos].name.clone(), q);
    }
    out
}

fn counts_by_position(
    view: &PairView<'_>,
    index: &DeltaIndex,
    f: impl Fn(&super::TensorStat) -> u64,
) -> BTreeMap<usize, u64> {
    view.tensors()
        .iter()
        .enumerate()
        .filter_map(|(pos, rec)| {
            let n = index.per_tensor.get(&rec.name).map_or(0, &f);
            (n > 0).then_some((pos, n))
        })
        .collect()
}

/// Exact top-`floor(rho * N)` selection. Infinite r ranks first; ties at
/// the threshold go by ascending (tensor name, flat index).
pub fn select_threshold(
    index: &DeltaIndex,
    view: &PairView<'_>,
    rho: f64,
) -> Result<ThresholdSelection> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(RankError::RhoOutOfRange(rho));
    }
    let n = index.total_count;
    if view.total_count() != n {
        return Err(RankError::SelectionMismatch(format!(
            "index covers {n} parameters, pair has {}",
            view.total_count()
        )));
    }
    let k = exact_fraction_count(rho, n);
    let base = ThresholdSelection {
        rho,
        total_count: n,
        threshold_r: f64::INFINITY,
        include_ties_up_to: 0,
        selected_count: k,
        selects_all_inf: k >= index.inf_count,
        tie_quota: BTreeMap::new(),
        exclude: index.config.exclude.clone(),
    };
    if k == 0 {
        return Ok(base);
    }
    if k == n {
        let eq = counts_by_position(view, index, |t| t.zero_count);
        return Ok(ThresholdSelection {
            threshold_r: 0.0,
            include_ties_up_to: index.zero_count,
            tie_quota: quotas(view, &eq, index.zero_count),
            ..base
        });
    }
    if k <= index.inf_count {
        let eq = counts_by_position(view, index, |t| t.inf_count);
        return Ok(ThresholdSelection {
            include_ties_up_to: k,
            tie_quota: quotas(view, &eq, k),
            ..base
        });
    }
    let kf = k - index.inf_count;
    let ans = resolve_ranks(view, index, &[kf], true)?.remove(0);
    let ties = kf - ans.count_gt;
    Ok(ThresholdSelection {
        threshold_r: ans.value,
        include_ties_up_to: ties,
        tie_quota: quotas(view, &ans.eq_per_tensor, ties),
        ..base
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub fraction_of_params: f64,
    /// Number of finite-r parameters in the top fraction.
    pub params: u64,
    pub fraction_of_total_update: f64,
}

/// Share of total finite r-mass carried by the most-changed parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationTable {
    pub rows: Vec<ConcentrationRow>,
    pub finite_count: u64,
    /// Parameters with infinite r, excluded from the mass.
    pub inf_count: u64,
    pub finite_sum_r: f64,
    pub exclude: Vec<String>,
}

/// For each fraction x: (sum of r over the top `floor(x * F)` finite-r
/// parameters) / (sum of all finite r), where F counts finite-r
/// parameters.
pub fn concentration(
    index: &DeltaIndex,
    view: &PairView<'_>,
    fractions: &[f64],
) -> Result<ConcentrationTable> {
    if let Some(&bad) = fractions.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(RankError::FractionOutOfRange(bad));
    }
    let finite = index.finite_count();
    let ks: Vec<u64> = fractions
        .iter()
        .map(|&x| exact_fraction_count(x, finite))
        .collect();
    if index.finite_sum_r == 0.0 && fractions.iter().any(|&x| x > 0.0) {
        return Err(RankError::DegenerateIndex);
    }
    let mut queries: Vec<u64> = ks.iter().copied().filter(|&k| k > 0 && k < finite).collect();
    queries.sort_unstable();
    queries.dedup();
    let answers = resolve_ranks(view, index, &queries, false)?;

    let mass = |k: u64| -> f64 {
        if k == 0 {
            0.0
        } else if k == finite {
            1.0
        } else {
            let i = queries.binary_search(&k).expect("queried");
            (answers[i].sum_top / index.finite_sum_r).min(1.0)
        }
    };
    let mut rows: Vec<ConcentrationRow> = fractions
        .iter()
        .zip(&ks)
        .map(|(&x, &k)| ConcentrationRow {
            fraction_of_params: x,
            params: k,
            fraction_of_total_update: mass(k),
        })
        .collect();

    // Masses of different ranks come from sums taken in different orders
    // (bin totals vs sorted prefixes); clamp the last-ulp disagreements so
    // the curve is monotone in k.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| rows[i].params);
    let mut running = 0.0f64;
    for i in order {
        running = running.max(rows[i].fraction_of_total_update);
        rows[i].fraction_of_total_update = running;
    }

    Ok(ConcentrationTable {
        rows,
        finite_count: finite,
        inf_count: index.inf_count,
        finite_sum_r: index.finite_sum_r,
        exclude: index.config.exclude.clone(),
    })
}

/// Selected parameters per included tensor (name order).
pub(crate) fn selected_per_tensor(
    index: &DeltaIndex,
    view: &PairView<'_>,
    sel: &ThresholdSelection,
) -> Result<Vec<u64>> {
    let t = sel.threshold_r;
    let mut out = vec![0u64; view.tensors().len()];
    let mut to_scan = Vec::new();
    for (pos, rec) in view.tensors().iter().enumerate() {
        let st = index.per_tensor.get(&rec.name).cloned().unwrap_or_default();
        let quota = sel.tie_quota.get(&rec.name).copied().unwrap_or(0);
        let above = if t == f64::INFINITY {
            Some(0)
        } else if t == 0.0 {
            Some(st.count - st.zero_count)
        } else if st.max_finite_r.is_none_or(|m| m < t) {
            Some(st.inf_count)
        } else if st.min_pos_r.is_some_and(|m| m > t) {
            Some(st.count - st.zero_count)
        } else {
            None
        };
        match above {
            Some(a) => out[pos] = a + quota,
            None => to_scan.push(pos),
        }
    }
    view.fold_ordered(
        &to_scan,
        |_, rec| {
            let mut sel_t = sel.selector(&rec.name);
            let mut n = 0u64;
            view.scan_tensor(&rec.name, |chunk| {
                n += chunk.r.iter().filter(|&&r| sel_t.select(r)).count() as u64;
                Ok(())
            })?;
            Ok(n)
        },
        |pos, n| {
            out[pos] = n;
            Ok(())
        },
    )?;
    Ok(out)
}
