//! Evaluation protocols and metrics.
//!
//! * LOSO: one fold per subject.
//! * CDE: two databases merged on a shared class subset, then LOSO.
//! * HDE: train on one database and test on the other, both ways; the two
//!   folds' metrics are averaged.
//!
//! Confusion matrices have true classes on rows and predictions on columns.

use serde::{Deserialize, Serialize};

use crate::dataset::{merge_datasets, Dataset};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Leave-one-subject-out folds, in order of first subject appearance.
pub fn loso_split(ds: &Dataset) -> Result<Vec<FoldSplit>> {
    let subjects = ds.subjects();
    ensure!(
        subjects.len() >= 2,
        InvalidInput,
        "LOSO needs at least 2 subjects, got {}",
        subjects.len()
    );
    Ok(subjects
        .iter()
        .map(|&subject| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| ds.samples()[i].subject_id == subject);
            FoldSplit {
                fold_id: subject.to_string(),
                train,
                test,
            }
        })
        .collect())
}

/// Composite database: `a` and `b` merged on `keep_classes` (subjects prefixed by database).
pub fn cde_dataset(a: &Dataset, b: &Dataset, keep_classes: &[String]) -> Result<Dataset> {
    merge_datasets(a, b, keep_classes)
}

/// Holdout folds over the merge of `a` (first) and `b`: train on one, test on the other.
pub fn hde_folds(a: &Dataset, b: &Dataset) -> Result<(Dataset, Vec<FoldSplit>)> {
    let mut ca: Vec<&String> = a.taxonomy().classes().iter().collect();
    let mut cb: Vec<&String> = b.taxonomy().classes().iter().collect();
    ca.sort();
    cb.sort();
    if ca != cb {
        return Err(Error::InvalidInput(format!(
            "taxonomy mismatch: {:?} vs {:?}",
            a.taxonomy().classes(),
            b.taxonomy().classes()
        )));
    }
    let merged = merge_datasets(a, b, a.taxonomy().classes())?;
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (a.len()..merged.len()).collect();
    let name = |ds: &Dataset| ds.samples().first().map_or("?".to_string(), |s| s.database_id.clone());
    let (na, nb) = (name(a), name(b));
    Ok((
        merged,
        vec![
            FoldSplit {
                fold_id: format!("train_{na}_test_{nb}"),
                train: ia.clone(),
                test: ib.clone(),
            },
            FoldSplit {
                fold_id: format!("train_{nb}_test_{na}"),
                train: ib,
                test: ia,
            },
        ],
    ))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    /// Row-major `counts[true * n + predicted]`.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        ensure!(
            rows.iter().all(|r| r.len() == n),
            Shape,
            "confusion matrix rows must all have {n} entries"
        );
        Ok(ConfusionMatrix {
            n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.n).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, c)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        ensure!(other.n == self.n, Shape, "merging {}-class and {}-class matrices", self.n, other.n);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// CSV with a header of predicted class names and one row per true class.
    pub fn to_csv(&self, classes: &[String]) -> String {
        let mut out = String::from("true_class");
        for c in classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (t, name) in classes.iter().enumerate().take(self.n) {
            out.push_str(name);
            for p in 0..self.n {
                out.push_str(&format!(",{}", self.get(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub uar: f64,
    pub war: f64,
}

impl Metrics {
    /// Arithmetic mean of each metric.
    pub fn mean(all: &[Metrics]) -> Result<Metrics> {
        ensure!(!all.is_empty(), InvalidInput, "no metrics to average");
        let k = all.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / k;
        Ok(Metrics {
            f1_macro: avg(|m| m.f1_macro),
            f1_micro: avg(|m| m.f1_micro),
            uar: avg(|m| m.uar),
            war: avg(|m| m.war),
        })
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    ensure!(total > 0, InvalidInput, "confusion matrix is empty");
    let (mut recall_sum, mut recall_n) = (0.0, 0usize);
    let (mut f1_sum, mut f1_n) = (0.0, 0usize);
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    for c in 0..cm.n_classes() {
        let tp = cm.get(c, c);
        let support = cm.row_sum(c);
        let predicted = cm.col_sum(c);
        let (fp, fneg) = (predicted - tp, support - tp);
        if support > 0 {
            recall_sum += tp as f64 / support as f64;
            recall_n += 1;
        }
        if support + predicted > 0 {
            f1_sum += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
            f1_n += 1;
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    Ok(Metrics {
        f1_macro: f1_sum / f1_n as f64,
        f1_micro: 2.0 * tp_all as f64 / (2 * tp_all + fp_all + fn_all) as f64,
        uar: recall_sum / recall_n as f64,
        war: cm.trace() as f64 / total as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: String,
    pub n_train: usize,
    pub n_test: usize,
    pub confusion: ConfusionMatrix,
    /// `None` when the fold had no test samples.
    pub metrics: Option<Metrics>,
}

impl FoldReport {
    pub fn new(fold_id: impl Into<String>, n_train: usize, confusion: ConfusionMatrix) -> Self {
        let metrics = compute_metrics(&confusion).ok();
        FoldReport {
            fold_id: fold_id.into(),
            n_train,
            n_test: confusion.total() as usize,
            confusion,
            metrics,
        }
    }
}

/// How the headline metrics were formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// From the confusion matrix pooled over folds.
    Pooled,
    /// Mean of per-fold metrics.
    FoldMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub pooled: ConfusionMatrix,
    pub pooled_metrics: Metrics,
    pub aggregation: Aggregation,
    /// Headline metrics; `f1_macro` is the reported F1.
    pub metrics: Metrics,
}

/// Pools fold predictions into one matrix; headline metrics come from the pooled matrix.
pub fn pooled_report(folds: Vec<FoldReport>) -> Result<EvalReport> {
    ensure!(!folds.is_empty(), InvalidInput, "no folds to report");
    let mut pooled = ConfusionMatrix::new(folds[0].confusion.n_classes());
    for f in &folds {
        pooled.merge(&f.confusion)?;
    }
    let pooled_metrics = compute_metrics(&pooled)?;
    Ok(EvalReport {
        folds,
        pooled,
        pooled_metrics,
        aggregation: Aggregation::Pooled,
        metrics: pooled_metrics,
    })
}

/// Headline metrics are the mean of the two folds; the pooled matrix is kept alongside.
pub fn aggregate_hde(first: FoldReport, second: FoldReport) -> Result<EvalReport> {
    let m: Vec<Metrics> = [&first, &second]
        .iter()
        .map(|f| {
            f.metrics
                .ok_or_else(|| Error::InvalidInput(format!("fold {} has no test samples", f.fold_id)))
        })
        .collect::<Result<_>>()?;
    let mean = Metrics::mean(&m)?;
    let mut report = pooled_report(vec![first, second])?;
    report.aggregation = Aggregation::FoldMean;
    report.metrics = mean;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_dataset, SynthSpec};

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert_eq!((m.f1_macro, m.f1_micro, m.uar, m.war), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_computed_two_class() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![1, 1]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert!((m.war - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.uar - 0.625).abs() < 1e-15);
        assert!((m.f1_macro - (0.75 + 0.5) / 2.0).abs() < 1e-15);
        assert_eq!(m.f1_micro, m.war);
    }

    #[test]
    fn absent_classes_are_excluded() {
        // class 2 never occurs nor is predicted
        let cm = ConfusionMatrix::from_rows(&[vec![2, 0, 0], vec![1, 1, 0], vec![0, 0, 0]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert!((m.uar - 0.75).abs() < 1e-15);
        assert!((m.f1_macro - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(compute_metrics(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn hde_mean_of_folds() {
        let fold = |id: &str, f1: f64, war: f64| FoldReport {
            fold_id: id.into(),
            n_train: 1,
            n_test: 1,
            confusion: ConfusionMatrix::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap(),
            metrics: Some(Metrics {
                f1_macro: f1,
                f1_micro: war,
                uar: war,
                war,
            }),
        };
        let r = aggregate_hde(fold("a", 0.409, 0.382), fold("b", 0.274, 0.322)).unwrap();
        assert!((r.metrics.war - 0.352).abs() < 1e-12);
        assert!((r.metrics.f1_macro - 0.3415).abs() < 1e-12);
        assert_eq!(r.pooled.total(), 2);
        let same = aggregate_hde(fold("a", 0.5, 0.4), fold("b", 0.5, 0.4)).unwrap();
        assert_eq!(same.metrics, fold("a", 0.5, 0.4).metrics.unwrap());
    }

    #[test]
    fn loso_partitions() {
        let ds = synthesize_dataset(&SynthSpec { n_subjects: 3, videos_per_subject: 5, ..Default::default() }, 1).unwrap();
        let folds = loso_split(&ds).unwrap();
        assert_eq!(folds.len(), 3);
        assert!(folds.iter().all(|f| f.test.len() == 5 && f.train.len() == 10));
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn loso_needs_two_subjects() {
        let ds = synthesize_dataset(&SynthSpec { n_subjects: 1, ..Default::default() }, 1).unwrap();
        assert!(loso_split(&ds).is_err());
    }

    #[test]
    fn hde_splits_by_database() {
        let a = synthesize_dataset(&SynthSpec { database_id: "A".into(), n_subjects: 3, ..Default::default() }, 1).unwrap();
        let b = synthesize_dataset(&SynthSpec { database_id: "B".into(), n_subjects: 4, ..Default::default() }, 2).unwrap();
        let (merged, folds) = hde_folds(&a, &b).unwrap();
        assert_eq!(folds.len(), 2);
        let test_ids: Vec<&str> = folds[0].test.iter().map(|&i| merged.samples()[i].video_id.as_str()).collect();
        let b_ids: Vec<&str> = b.samples().iter().map(|s| s.video_id.as_str()).collect();
        assert_eq!(test_ids, b_ids);
        assert_eq!(folds[1].train, folds[0].test);
        for f in &folds {
            assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        let c = synthesize_dataset(&SynthSpec { n_classes: 4, ..Default::default() }, 3).unwrap();
        assert!(hde_folds(&a, &c).is_err());
    }

    #[test]
    fn confusion_csv() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 2], vec![0, 4]]).unwrap();
        let csv = cm.to_csv(&["x".into(), "y".into()]);
        assert_eq!(csv, "true_class,x,y\nx,1,2\ny,0,4\n");
    }
}
