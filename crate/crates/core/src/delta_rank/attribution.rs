use std::collections::BTreeMap;

use serde::Serialize;

use super::index::DeltaIndex;
use super::select::{selected_per_tensor, ThresholdSelection};
use super::{PairView, Result};
use crate::names::{NameRules, NameRulesDescription};

/// Where the selected (most-changed) parameters live, as percentages of
/// the selected count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionReport {
    pub rho: f64,
    pub selected_count: u64,
    pub empty: bool,
    pub by_layer: BTreeMap<u32, f64>,
    /// In rule order, every label present.
    pub by_module: Vec<(String, f64)>,
    pub unmatched_layer_pct: f64,
    pub unmatched_module_pct: f64,
    pub name_rules: NameRulesDescription,
    pub exclude: Vec<String>,
}

pub fn attribute(
    index: &DeltaIndex,
    selection: &ThresholdSelection,
    view: &PairView<'_>,
    rules: &NameRules,
) -> Result<AttributionReport> {
    selection.check_against(view)?;
    let per_tensor = selected_per_tensor(index, view, selection)?;

    let mut layers: BTreeMap<u32, u64> = BTreeMap::new();
    let mut modules: BTreeMap<&str, u64> = BTreeMap::new();
    let (mut no_layer, mut no_module) = (0u64, 0u64);
    for (rec, &n) in view.tensors().iter().zip(&per_tensor) {
        if n == 0 {
            continue;
        }
        match rules.layer_of(&rec.name) {
            Some(l) => *layers.entry(l).or_default() += n,
            None => no_layer += n,
        }
        match rules.module_of(&rec.name) {
            Some(m) => *modules.entry(m).or_default() += n,
            None => no_module += n,
        }
    }

    let total = selection.selected_count;
    debug_assert_eq!(total, per_tensor.iter().sum::<u64>());
    let pct = |n: u64| {
        if total == 0 {
            0.0
        } else {
            100.0 * n as f64 / total as f64
        }
    };
    Ok(AttributionReport {
        rho: selection.rho,
        selected_count: total,
        empty: total == 0,
        by_layer: layers.into_iter().map(|(l, n)| (l, pct(n))).collect(),
        by_module: rules
            .module_labels()
            .map(|l| (l.to_string(), pct(modules.get(l).copied().unwrap_or(0))))
            .collect(),
        unmatched_layer_pct: pct(no_layer),
        unmatched_module_pct: pct(no_module),
        name_rules: rules.describe(),
        exclude: selection.exclude.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{write_pair, Tensor};
    use super::super::*;
    use crate::names::{Exclusions, NameRules};
    use crate::tensor_store::{Checkpoint, Dtype};

    fn tensor(name: &str, pre: Vec<f64>, ft: Vec<f64>) -> Tensor {
        Tensor {
            name: name.into(),
            dtype: Dtype::F32,
            pre,
            ft,
        }
    }

    #[test]
    fn single_tensor_gets_everything() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(
            dir.path(),
            vec![
                tensor("model.layers.0.mlp.up_proj.weight", vec![1.0; 10], vec![2.0; 10]),
                tensor("model.layers.1.self_attn.q_proj.weight", vec![1.0; 10], vec![1.0; 10]),
            ],
        );
        let pre = Checkpoint::open(dir.path().join("pre.safetensors")).unwrap();
        let ft = Checkpoint::open(dir.path().join("ft.safetensors")).unwrap();
        let view = PairView::new(&pre, &ft, Exclusions::default(), ScanOptions::default()).unwrap();
        let idx = build_delta_index(&view).unwrap();
        let sel = select_threshold(&idx, &view, 0.5).unwrap();
        let rep = attribute(&idx, &sel, &view, &NameRules::default()).unwrap();
        assert_eq!(rep.by_layer.get(&0), Some(&100.0));
        assert_eq!(rep.by_layer.get(&1), None);
        assert_eq!(rep.by_module[1], ("mlp.up".to_string(), 100.0));
        assert_eq!(rep.unmatched_layer_pct, 0.0);
    }

    #[test]
    fn empty_selection_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), vec![tensor("model.layers.0.x", vec![1.0; 4], vec![3.0; 4])]);
        let pre = Checkpoint::open(dir.path().join("pre.safetensors")).unwrap();
        let ft = Checkpoint::open(dir.path().join("ft.safetensors")).unwrap();
        let view = PairView::new(&pre, &ft, Exclusions::default(), ScanOptions::default()).unwrap();
        let idx = build_delta_index(&view).unwrap();
        let sel = select_threshold(&idx, &view, 0.0).unwrap();
        let rep = attribute(&idx, &sel, &view, &NameRules::default()).unwrap();
        assert!(rep.empty);
        assert!(rep.by_layer.is_empty());
        assert!(rep.by_module.iter().all(|(_, p)| *p == 0.0));
        assert_eq!(rep.unmatched_module_pct, 0.0);
    }

    #[test]
    fn planted_layer_share() {
        // 3 layers x 1000 params; the top 100 parameters are planted so
        // that 90 sit in layer 1, 6 in layer 0, 4 in layer 2.
        let dir = tempfile::tempdir().unwrap();
        let plant = |big: usize| {
            let pre = vec![1.0; 1000];
            let ft: Vec<f64> = (0..1000)
                .map(|i| if i < big { 5.0 + i as f64 * 1e-3 } else { 1.0 + (i as f64) * 1e-6 })
                .collect();
            (pre, ft)
        };
        let (p0, f0) = plant(6);
        let (p1, f1) = plant(90);
        let (p2, f2) = plant(4);
        write_pair(
            dir.path(),
            vec![
                tensor("model.layers.0.mlp.down_proj.weight", p0, f0),
                tensor("model.layers.1.mlp.down_proj.weight", p1, f1),
                tensor("model.layers.2.self_attn.v_proj.weight", p2, f2),
            ],
        );
        let pre = Checkpoint::open(dir.path().join("pre.safetensors")).unwrap();
        let ft = Checkpoint::open(dir.path().join("ft.safetensors")).unwrap();
        let view = PairView::new(&pre, &ft, Exclusions::default(), ScanOptions::default()).unwrap();
        let idx = build_delta_index(&view).unwrap();
        let sel = select_threshold(&idx, &view, 100.0 / 3000.0).unwrap();
        assert_eq!(sel.selected_count, 100);
        let rep = attribute(&idx, &sel, &view, &NameRules::default()).unwrap();
        assert!((rep.by_layer[&1] - 90.0).abs() < 1e-6);
        assert!((rep.by_layer[&0] - 6.0).abs() < 1e-6);
        assert!((rep.by_layer[&2] - 4.0).abs() < 1e-6);
        let module_total: f64 = rep.by_module.iter().map(|(_, p)| p).sum();
        assert!((module_total + rep.unmatched_module_pct - 100.0).abs() < 1e-6);
        assert!((rep.by_module[0].1 - 96.0).abs() < 1e-6);
    }
}
