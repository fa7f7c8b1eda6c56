use std::collections::BTreeMap;

use lnm_core::eval::{bvl, clean_ratio, coverage_ratio, rank_methods, AccuracyCurve, Setting};
use proptest::prelude::*;

fn arb_curve() -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..60)
}

proptest! {
    #[test]
    fn best_dominates_val_selected_and_last(points in arb_curve(), w in 1usize..60) {
        let w = w.min(points.len());
        let s = bvl(&AccuracyCurve::new(points).unwrap(), w).unwrap();
        prop_assert!(s.best >= s.val_selected);
        prop_assert!(s.best >= s.last);
    }

    #[test]
    fn full_selection_ratios(mask in proptest::collection::vec(any::<bool>(), 1..200)) {
        let all: Vec<usize> = (0..mask.len()).collect();
        let n_clean = mask.iter().filter(|&&c| c).count();
        prop_assert_eq!(clean_ratio(&all, &mask).unwrap(), n_clean as f64 / mask.len() as f64);
        if n_clean > 0 {
            prop_assert_eq!(coverage_ratio(&all, &mask).unwrap(), 1.0);
        } else {
            prop_assert!(coverage_ratio(&all, &mask).is_err());
        }
    }

    #[test]
    fn ranks_ignore_increasing_transforms(
        raw in proptest::collection::vec(0u8..5, 12),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        // 4 methods over 3 settings in 2 patterns
        let settings = [Setting::new("sym", "20"), Setting::new("sym", "50"), Setting::new("idn", "20")];
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        for (i, v) in raw.iter().enumerate() {
            let key = (format!("m{}", i % 4), settings[i / 4].clone());
            let x = *v as f64 / 4.0;
            a.insert(key.clone(), x);
            b.insert(key, (scale * x + shift).exp());
        }
        let (ra, rb) = (rank_methods(&a).unwrap(), rank_methods(&b).unwrap());
        prop_assert_eq!(ra.ranks, rb.ranks);
        prop_assert_eq!(ra.overall, rb.overall);
    }
}

#[test]
fn missing_cell_names_method_and_setting() {
    let mut scores = BTreeMap::new();
    scores.insert(("ce".to_string(), Setting::new("sym", "20")), 0.5);
    scores.insert(("ce".to_string(), Setting::new("sym", "50")), 0.4);
    scores.insert(("sce".to_string(), Setting::new("sym", "20")), 0.6);
    let err = rank_methods(&scores).unwrap_err().to_string();
    assert!(err.contains("sce") && err.contains("sym/50"), "{err}");
}
