use std::collections::BTreeSet;

use elrcn_core::dataset::{ClassTaxonomy, Dataset, VideoSample};
use elrcn_core::eval::{compute_metrics, loso_split, ConfusionMatrix};
use elrcn_core::frame::Grayscale;
use proptest::prelude::*;

/// Per-sample metric definitions evaluated straight from (truth, prediction) pairs.
fn oracle(pairs: &[(usize, usize)], n: usize) -> (f64, f64, f64, f64) {
    let mut f1s = Vec::new();
    let mut recalls = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    for c in 0..n {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fneg = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        if tp + fneg > 0.0 {
            recalls.push(tp / (tp + fneg));
        }
        if tp + fp + fneg > 0.0 {
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            f1s.push(f1);
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let p = tp_all / (tp_all + fp_all);
    let r = tp_all / (tp_all + fn_all);
    let micro = 2.0 * p * r / (p + r);
    let correct = pairs.iter().filter(|&&(t, p)| t == p).count() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&f1s), if correct == 0.0 { 0.0 } else { micro }, mean(&recalls), correct / pairs.len() as f64)
}

fn pairs_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=6).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 1..60)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_oracle((n, pairs) in pairs_strategy()) {
        let mut cm = ConfusionMatrix::new(n);
        for &(t, p) in &pairs {
            cm.add(t, p);
        }
        let m = compute_metrics(&cm).unwrap();
        let (f1_macro, f1_micro, uar, war) = oracle(&pairs, n);
        prop_assert!((m.f1_macro - f1_macro).abs() < 1e-12);
        prop_assert!((m.f1_micro - f1_micro).abs() < 1e-12);
        prop_assert!((m.uar - uar).abs() < 1e-12);
        prop_assert!((m.war - war).abs() < 1e-12);
        prop_assert!((m.f1_micro - m.war).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_to_class_relabelling((n, pairs) in pairs_strategy(), shift in 1usize..6) {
        let mut a = ConfusionMatrix::new(n);
        let mut b = ConfusionMatrix::new(n);
        for &(t, p) in &pairs {
            a.add(t, p);
            b.add((t + shift) % n, (p + shift) % n);
        }
        let (ma, mb) = (compute_metrics(&a).unwrap(), compute_metrics(&b).unwrap());
        prop_assert!((ma.f1_macro - mb.f1_macro).abs() < 1e-12);
        prop_assert!((ma.uar - mb.uar).abs() < 1e-12);
        prop_assert_eq!(ma.war, mb.war);
    }
}

fn tiny_dataset(subjects: &[usize]) -> Dataset {
    let frame = Grayscale::new(2, 2, vec![0.0; 4]).unwrap();
    let samples = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| VideoSample::new(format!("v{i}"), format!("s{s}"), "DB", i % 2, vec![frame.clone()]).unwrap())
        .collect();
    Dataset::new(samples, ClassTaxonomy::new("t", vec!["a".into(), "b".into()]).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loso_folds_partition_by_subject(subjects in prop::collection::vec(0usize..8, 2..40)) {
        let distinct: BTreeSet<usize> = subjects.iter().copied().collect();
        prop_assume!(distinct.len() >= 2);
        let ds = tiny_dataset(&subjects);
        let folds = loso_split(&ds).unwrap();
        prop_assert_eq!(folds.len(), distinct.len());
        let mut seen = vec![0usize; ds.len()];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), ds.len());
            let test_subjects: BTreeSet<&str> =
                f.test.iter().map(|&i| ds.samples()[i].subject_id.as_str()).collect();
            prop_assert_eq!(test_subjects.len(), 1);
            prop_assert!(f.train.iter().all(|&i| !test_subjects.contains(ds.samples()[i].subject_id.as_str())));
            for &i in &f.test {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&k| k == 1));
    }
}
