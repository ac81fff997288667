use crate::dataio::fmt_float;
use crate::error::{Error, Result};
use crate::nn::argmax_rows;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `K×K` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self, names: &[String]) -> Vec<Vec<String>> {
        (0..self.k)
            .map(|t| std::iter::once(names[t].clone()).chain(self.row(t).iter().map(|c| c.to_string())).collect())
            .collect()
    }

    /// Header `class,<name_0>,...`: one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut header = vec!["class"];
        header.extend(names.iter().map(String::as_str));
        crate::dataio::csv_text(&header, &self.rows(names))
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch { expected: vec![truth.len()], got: vec![pred.len()] });
    }
    let mut counts = vec![0; k * k];
    for (&t, &p) in truth.iter().zip(pred) {
        for l in [t, p] {
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, classes: k });
            }
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Fraction of positions where `truth` and `pred` agree.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAccuracy {
    /// `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    pub overall: f64,
}

pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Result<ClassAccuracy> {
    if cm.total() == 0 {
        return Err(Error::EmptyDataset);
    }
    let per_class = (0..cm.k)
        .map(|i| {
            let n = cm.row_sum(i);
            (n > 0).then(|| cm.get(i, i) as f64 / n as f64)
        })
        .collect();
    Ok(ClassAccuracy { per_class, overall: cm.trace() as f64 / cm.total() as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Scores `>= threshold` are predicted positive; the first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub const HEADER: [&'static str; 3] = ["threshold", "fpr", "tpr"];

    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self.points.iter().map(|p| vec![fmt_float(p.threshold), fmt_float(p.fpr), fmt_float(p.tpr)]).collect();
        crate::dataio::csv_text(&Self::HEADER, &rows)
    }
}

/// ROC of binary `positive` labels against `scores`, sweeping thresholds
/// over the distinct scores in descending order. `class` is only used in
/// the error.
pub fn roc_binary(scores: &[f64], positive: &[bool], class: usize) -> Result<RocCurve> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 || scores.len() != positive.len() {
        return Err(Error::DegenerateClass(class));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().unwrap();
        let pt = RocPoint { threshold, fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64 };
        auc += (pt.fpr - prev.fpr) * (pt.tpr + prev.tpr) / 2.0;
        points.push(pt);
    }
    Ok(RocCurve { points, auc })
}

/// One-vs-rest ROC of class `k` from a `[N, K]` score table.
pub fn roc_curve<T: Scalar>(scores: &Tensor<T>, truth: &[usize], k: usize) -> Result<RocCurve> {
    let cols = scores.shape()[1];
    if k >= cols {
        return Err(Error::LabelOutOfRange { label: k, classes: cols });
    }
    let s: Vec<f64> = scores.data().chunks(cols).map(|row| row[k].as_f64()).collect();
    let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
    roc_binary(&s, &pos, k)
}

/// Confusion matrix, accuracies and one-vs-rest ROC curves of a
/// probability table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: ClassAccuracy,
    /// `None` where the class has no positives or no negatives.
    pub roc: Vec<Option<RocCurve>>,
    /// Mean AUC over the classes with a defined curve.
    pub macro_auc: f64,
}

impl EvalReport {
    pub fn new<T: Scalar>(probs: &Tensor<T>, truth: &[usize]) -> Result<Self> {
        let (n, k) = (probs.shape()[0], probs.shape()[1]);
        if n != truth.len() {
            return Err(Error::ShapeMismatch { expected: vec![truth.len(), k], got: probs.shape().to_vec() });
        }
        let pred = argmax_rows(n, k, probs.data());
        let confusion = confusion_matrix(truth, &pred, k)?;
        let accuracy = per_class_accuracy(&confusion)?;
        let roc: Vec<Option<RocCurve>> = (0..k)
            .map(|c| match roc_curve(probs, truth, c) {
                Ok(r) => Ok(Some(r)),
                Err(Error::DegenerateClass(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let aucs: Vec<f64> = roc.iter().flatten().map(|r| r.auc).collect();
        let macro_auc = if aucs.is_empty() { f64::NAN } else { aucs.iter().sum::<f64>() / aucs.len() as f64 };
        Ok(Self { confusion, accuracy, roc, macro_auc })
    }

    /// `class,accuracy,auc` per class plus an `overall` row with the macro AUC.
    pub fn summary_csv(&self, names: &[String]) -> String {
        let opt = |v: Option<f64>| fmt_float(v.unwrap_or(f64::NAN));
        let mut rows: Vec<Vec<String>> = names
            .iter()
            .enumerate()
            .map(|(i, name)| vec![name.clone(), opt(self.accuracy.per_class[i]), opt(self.roc[i].as_ref().map(|r| r.auc))])
            .collect();
        rows.push(vec!["overall".into(), fmt_float(self.accuracy.overall), fmt_float(self.macro_auc)]);
        crate::dataio::csv_text(&["class", "accuracy", "auc"], &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let cm = confusion_matrix(&[0, 1, 2], &[1, 1, 2], 3).unwrap();
        assert_eq!((cm.get(0, 1), cm.get(1, 1), cm.get(2, 2), cm.get(0, 0)), (1, 1, 1, 0));
        assert_eq!(cm.total(), 3);
        let diag = confusion_matrix(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(diag.trace(), 4);
        assert!(matches!(confusion_matrix(&[0, 3], &[0, 0], 3), Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
    }

    #[test]
    fn accuracy_from_matrix() {
        let truth: Vec<usize> = [vec![0; 10], vec![1; 10]].concat();
        let pred: Vec<usize> = [vec![0; 7], vec![1; 3], vec![0], vec![1; 9]].concat();
        let acc = per_class_accuracy(&confusion_matrix(&truth, &pred, 2).unwrap()).unwrap();
        assert_eq!(acc.per_class, vec![Some(0.7), Some(0.9)]);
        assert!((acc.overall - 0.8).abs() < 1e-12);
        let empty_row = per_class_accuracy(&confusion_matrix(&[0, 0], &[0, 1], 3).unwrap()).unwrap();
        assert_eq!(empty_row.per_class[1], None);
        assert_eq!(empty_row.overall, 0.5);
    }

    #[test]
    fn roc_examples() {
        let r = roc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true], 0).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
        let first = r.points[0];
        let last = *r.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
        assert!(first.threshold.is_infinite());
        assert_eq!(roc_binary(&[0.1, 0.2, 0.9], &[false, false, true], 0).unwrap().auc, 1.0);
        let tied = roc_binary(&[0.5, 0.5], &[true, false], 0).unwrap();
        assert_eq!(tied.points.len(), 2);
        assert_eq!(tied.auc, 0.5);
        assert!(matches!(roc_binary(&[0.1, 0.2], &[true, true], 4), Err(Error::DegenerateClass(4))));
    }

    #[test]
    fn report_files() {
        let probs = Tensor::<f64>::new(&[4, 2], vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]).unwrap();
        let rep = EvalReport::new(&probs, &[0, 1, 1, 1]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        assert_eq!(rep.confusion.to_csv(&names), "class,a,b\na,1,0\nb,1,2\n");
        let summary = rep.summary_csv(&names);
        assert!(summary.starts_with("class,accuracy,auc\na,1,1\nb,0.666667,1\noverall,0.75,1\n"), "{summary}");
        assert!(rep.roc[0].as_ref().unwrap().to_csv().starts_with("threshold,fpr,tpr\ninf,0,0\n"));
    }
}
