//! Evaluation metrics: mIoU from a pixel confusion matrix, expected
//! calibration error, mean class-wise predictive uncertainty, pixel
//! accuracy, and the binary accuracy map.

use crate::data::LabelMap;
use crate::error::{Error, Result};

/// How classes without any observed pixels enter the mIoU mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UndefinedIou {
    /// Classes with an empty union are excluded from the mean.
    #[default]
    Exclude,
    /// Classes with an empty union count as zero.
    CountAsZero,
}

/// C x C pixel counts; rows are ground truth, columns are predictions.
/// Void-truth pixels are skipped. Mergeable: accumulating concatenated maps
/// equals summing separately accumulated matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn update(&mut self, pred: &LabelMap, truth: &LabelMap, ignore_index: u8) -> Result<()> {
        if pred.data.len() != truth.data.len() {
            return Err(Error::Dim(format!(
                "prediction has {} pixels, truth {}",
                pred.data.len(),
                truth.data.len()
            )));
        }
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            if t == ignore_index {
                continue;
            }
            if t as usize >= self.classes || p as usize >= self.classes {
                return Err(Error::Data(format!(
                    "class id out of range: truth {t}, pred {p}, classes {}",
                    self.classes
                )));
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Dim(
                "cannot merge confusion matrices of different sizes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class `TP / (TP + FP + FN)`; `None` when the union is empty.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fp: u64 = (0..self.classes)
                    .filter(|&t| t != c)
                    .map(|t| self.count(t, c))
                    .sum();
                let fn_: u64 = (0..self.classes)
                    .filter(|&p| p != c)
                    .map(|p| self.count(c, p))
                    .sum();
                let denom = tp + fp + fn_;
                if denom == 0 {
                    None
                } else {
                    Some(tp as f64 / denom as f64)
                }
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        self.miou_with(UndefinedIou::Exclude)
    }

    pub fn miou_with(&self, mode: UndefinedIou) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::UndefinedMetric("empty confusion matrix".into()));
        }
        let ious = self.per_class_iou();
        let (sum, n) = ious
            .iter()
            .fold((0.0f64, 0usize), |(s, n), iou| match (iou, mode) {
                (Some(v), _) => (s + v, n + 1),
                (None, UndefinedIou::CountAsZero) => (s, n + 1),
                (None, UndefinedIou::Exclude) => (s, n),
            });
        Ok(sum / n as f64)
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("empty confusion matrix".into()));
        }
        let correct: u64 = (0..self.classes).map(|c| self.count(c, c)).sum();
        Ok(correct as f64 / total as f64)
    }
}

/// Equal-width confidence bins over [0, 1]; the last bin is right-closed.
/// Mergeable like the confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins {
    num_bins: usize,
    counts: Vec<u64>,
    conf_sums: Vec<f64>,
    correct_sums: Vec<u64>,
}

impl CalibrationBins {
    pub fn new(num_bins: usize) -> Result<CalibrationBins> {
        if num_bins == 0 {
            return Err(Error::Config("need at least one calibration bin".into()));
        }
        Ok(CalibrationBins {
            num_bins,
            counts: vec![0; num_bins],
            conf_sums: vec![0.0; num_bins],
            correct_sums: vec![0; num_bins],
        })
    }

    pub fn push(&mut self, confidence: f64, correct: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Data(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        let bin = ((confidence * self.num_bins as f64) as usize).min(self.num_bins - 1);
        self.counts[bin] += 1;
        self.conf_sums[bin] += confidence;
        self.correct_sums[bin] += correct as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &CalibrationBins) -> Result<()> {
        if self.num_bins != other.num_bins {
            return Err(Error::Dim("cannot merge bins of different widths".into()));
        }
        for i in 0..self.num_bins {
            self.counts[i] += other.counts[i];
            self.conf_sums[i] += other.conf_sums[i];
            self.correct_sums[i] += other.correct_sums[i];
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `sum_b (n_b / n) * |acc_b - conf_b|` over non-empty bins.
    pub fn ece(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::UndefinedMetric("no calibration samples".into()));
        }
        let mut total = 0.0f64;
        for b in 0..self.num_bins {
            if self.counts[b] == 0 {
                continue;
            }
            let nb = self.counts[b] as f64;
            let acc = self.correct_sums[b] as f64 / nb;
            let conf = self.conf_sums[b] / nb;
            total += nb / n as f64 * (acc - conf).abs();
        }
        Ok(total)
    }
}

/// Expected calibration error of confidence/correctness pairs.
pub fn ece(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::Dim(format!(
            "{} confidences vs {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if confidences.is_empty() {
        return Err(Error::UndefinedMetric("no calibration samples".into()));
    }
    let mut bins = CalibrationBins::new(num_bins)?;
    for (&c, &ok) in confidences.iter().zip(correct) {
        bins.push(c, ok)?;
    }
    bins.ece()
}

/// Mean class-wise predictive uncertainty: for each class predicted at
/// least once, the mean sigma over its pixels, averaged unweighted over
/// those classes. `sigma` and `pred` are pixel-aligned.
pub fn munc(sigma: &[f64], pred: &[u8], classes: usize) -> Result<f64> {
    if sigma.len() != pred.len() {
        return Err(Error::Dim(format!(
            "{} sigmas vs {} predictions",
            sigma.len(),
            pred.len()
        )));
    }
    if sigma.is_empty() {
        return Err(Error::UndefinedMetric("no pixels for mUnc".into()));
    }
    let mut sums = vec![0.0f64; classes];
    let mut counts = vec![0u64; classes];
    for (&s, &p) in sigma.iter().zip(pred) {
        let p = p as usize;
        if p >= classes {
            return Err(Error::Data(format!("predicted class {p} out of range")));
        }
        sums[p] += s;
        counts[p] += 1;
    }
    let mut total = 0.0f64;
    let mut seen = 0usize;
    for c in 0..classes {
        if counts[c] > 0 {
            total += sums[c] / counts[c] as f64;
            seen += 1;
        }
    }
    if seen == 0 {
        return Err(Error::UndefinedMetric("no predicted classes".into()));
    }
    Ok(total / seen as f64)
}

/// True (rendered white) where the prediction is wrong or the truth is void.
pub fn binary_accuracy_map(
    pred: &LabelMap,
    truth: &LabelMap,
    ignore_index: u8,
) -> Result<Vec<bool>> {
    if pred.data.len() != truth.data.len() {
        return Err(Error::Dim("prediction and truth sizes differ".into()));
    }
    Ok(pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(&p, &t)| t == ignore_index || p != t)
        .collect())
}

/// The evaluation summary of one split.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub ece: f64,
    pub munc: f64,
    pub pixel_accuracy: f64,
    /// Mean sigma over correctly / incorrectly classified valid pixels,
    /// when both groups are non-empty.
    pub sigma_correct_mean: Option<f64>,
    pub sigma_wrong_mean: Option<f64>,
}

impl MetricsReport {
    pub fn csv_header(classes: usize) -> String {
        let mut h = String::from("miou,ece,munc,pixel_accuracy");
        for c in 0..classes {
            h.push_str(&format!(",iou_{c}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{}",
            self.miou, self.ece, self.munc, self.pixel_accuracy
        );
        for iou in &self.per_class_iou {
            match iou {
                Some(v) => row.push_str(&format!(",{v}")),
                None => row.push(','),
            }
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(data: Vec<u8>) -> LabelMap {
        let w = data.len();
        LabelMap::new(1, 1, w, data).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal_and_miou_one() {
        let mut cm = ConfusionMatrix::new(3);
        let truth = map(vec![0, 1, 2, 1]);
        cm.update(&truth, &truth, 255).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(t, p), if t == p { [1, 2, 1][t] } else { 0 });
            }
        }
        assert_eq!(cm.miou().unwrap(), 1.0);
        assert_eq!(cm.pixel_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn void_truth_pixels_are_skipped() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&map(vec![0, 1, 0]), &map(vec![255, 255, 255]), 255)
            .unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(cm.miou(), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn hand_tally_case() {
        // truth [0,0,1,1], pred [0,1,1,1]
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&map(vec![0, 1, 1, 1]), &map(vec![0, 0, 1, 1]), 255)
            .unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.count(1, 0), 0);
        // IoU_0 = 1/2, IoU_1 = 2/3, mIoU = 7/12
        let ious = cm.per_class_iou();
        assert_eq!(ious[0], Some(0.5));
        assert_eq!(ious[1], Some(2.0 / 3.0));
        assert!((cm.miou().unwrap() - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn class_never_predicted_scores_zero_not_excluded() {
        // class 1 present in truth, never predicted: TP=0, FN=2 -> IoU 0 counted
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&map(vec![0, 0, 0, 0]), &map(vec![0, 0, 1, 1]), 255)
            .unwrap();
        let ious = cm.per_class_iou();
        assert_eq!(ious[1], Some(0.0));
        assert_eq!(ious[2], None); // class 2 absent everywhere: excluded
        let miou = cm.miou().unwrap();
        // classes 0 and 1 participate: (2/4 + 0) / 2
        assert!((miou - 0.25).abs() < 1e-12);
        let zeroed = cm.miou_with(UndefinedIou::CountAsZero).unwrap();
        assert!((zeroed - (0.5 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_class_is_a_data_error() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(
            cm.update(&map(vec![7]), &map(vec![0]), 255),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn confusion_accumulation_is_mergeable() {
        let pred_a = map(vec![0, 1, 1]);
        let truth_a = map(vec![0, 0, 1]);
        let pred_b = map(vec![1, 1]);
        let truth_b = map(vec![1, 0]);

        let mut joint = ConfusionMatrix::new(2);
        joint.update(&pred_a, &truth_a, 255).unwrap();
        joint.update(&pred_b, &truth_b, 255).unwrap();

        let mut left = ConfusionMatrix::new(2);
        left.update(&pred_a, &truth_a, 255).unwrap();
        let mut right = ConfusionMatrix::new(2);
        right.update(&pred_b, &truth_b, 255).unwrap();
        left.merge(&right).unwrap();
        assert_eq!(joint, left);
    }

    #[test]
    fn ece_degenerate_perfect_calibration() {
        assert_eq!(ece(&[1.0, 1.0, 1.0], &[true, true, true], 10).unwrap(), 0.0);
    }

    #[test]
    fn ece_hand_binned_case() {
        // (0.95, T), (0.95, F), (0.65, T), (0.55, T) with 10 bins:
        // 0.5*|0.5-0.95| + 0.25*|1-0.65| + 0.25*|1-0.55| = 0.425
        let confidences = [0.95, 0.95, 0.65, 0.55];
        let correct = [true, false, true, true];
        let v = ece(&confidences, &correct, 10).unwrap();
        assert!((v - 0.425).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ece_single_bin_matching_acc_and_conf() {
        // all samples in one bin with accuracy == mean confidence
        let v = ece(&[0.75, 0.75, 0.75, 0.75], &[true, true, true, false], 10).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn calibration_bins_merge_like_joint_accumulation() {
        let samples = [
            (0.91, true),
            (0.88, false),
            (0.42, true),
            (0.61, true),
            (0.13, false),
            (1.0, true),
        ];
        let mut joint = CalibrationBins::new(10).unwrap();
        for &(c, ok) in &samples {
            joint.push(c, ok).unwrap();
        }
        let mut left = CalibrationBins::new(10).unwrap();
        let mut right = CalibrationBins::new(10).unwrap();
        for (i, &(c, ok)) in samples.iter().enumerate() {
            if i % 2 == 0 { &mut left } else { &mut right }
                .push(c, ok)
                .unwrap();
        }
        left.merge(&right).unwrap();
        assert_eq!(joint, left);
        assert_eq!(joint.ece().unwrap(), left.ece().unwrap());
    }

    #[test]
    fn ece_empty_is_undefined() {
        assert!(matches!(ece(&[], &[], 10), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ece_is_order_invariant_and_bounded() {
        let confs = [0.1, 0.9, 0.4, 0.62, 0.33, 1.0, 0.51];
        let correct = [false, true, true, false, true, true, false];
        let a = ece(&confs, &correct, 10).unwrap();
        let mut idx: Vec<usize> = (0..confs.len()).collect();
        idx.reverse();
        let confs2: Vec<f64> = idx.iter().map(|&i| confs[i]).collect();
        let correct2: Vec<bool> = idx.iter().map(|&i| correct[i]).collect();
        let b = ece(&confs2, &correct2, 10).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn munc_hand_grouped_case() {
        // class 0 pixels sigma {0.1, 0.3}, class 1 pixel sigma {0.2}
        let v = munc(&[0.1, 0.3, 0.2], &[0, 0, 1], 2).unwrap();
        assert!((v - 0.2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn munc_zero_sigma_and_absent_class() {
        assert_eq!(munc(&[0.0, 0.0], &[0, 1], 3).unwrap(), 0.0);
        // class 2 never predicted: excluded from the class mean
        let v = munc(&[0.4, 0.2], &[0, 0], 3).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn munc_scales_linearly_in_sigma() {
        let sigma = [0.05, 0.2, 0.11, 0.3];
        let pred = [0u8, 1, 1, 0];
        let base = munc(&sigma, &pred, 2).unwrap();
        let scaled: Vec<f64> = sigma.iter().map(|s| s * 3.0).collect();
        let v = munc(&scaled, &pred, 2).unwrap();
        assert!((v - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn binary_accuracy_map_cases() {
        let truth = map(vec![0, 1, 255, 1]);
        let pred = map(vec![0, 0, 1, 1]);
        // correct, wrong, void, correct
        assert_eq!(
            binary_accuracy_map(&pred, &truth, 255).unwrap(),
            vec![false, true, true, false]
        );
        let same = map(vec![0, 1, 2, 1]);
        assert!(binary_accuracy_map(&same, &same, 255)
            .unwrap()
            .iter()
            .all(|&b| !b));
        let voids = map(vec![255, 255]);
        assert!(binary_accuracy_map(&map(vec![0, 1]), &voids, 255)
            .unwrap()
            .iter()
            .all(|&b| b));
    }

    #[test]
    fn miou_is_relabeling_invariant() {
        let truth = map(vec![0, 0, 1, 2, 2, 1, 0]);
        let pred = map(vec![0, 1, 1, 2, 0, 1, 0]);
        let mut a = ConfusionMatrix::new(3);
        a.update(&pred, &truth, 255).unwrap();
        // permute classes 0->2, 1->0, 2->1 consistently
        let perm = |m: &LabelMap| map(m.data.iter().map(|&v| [2u8, 0, 1][v as usize]).collect());
        let mut b = ConfusionMatrix::new(3);
        b.update(&perm(&pred), &perm(&truth), 255).unwrap();
        assert_eq!(a.miou().unwrap(), b.miou().unwrap());
    }
}
