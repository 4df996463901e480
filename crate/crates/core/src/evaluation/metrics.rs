//! Confusion tallies and per-class precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::model::{BinaryJudgment, Decision};
use crate::scalar::Scalar;

/// How excluded (undetermined or unparseable) predictions enter recall.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionMode {
    /// Dropped from every denominator.
    #[default]
    Exclude,
    /// Counted as false negatives of their ground-truth class.
    CountAsMiss,
}

/// Tallies for both classes of a binary task with abstentions.
///
/// `tp_a`/`fp_a`/`fn_a` treat appropriate as the positive class, the `_i`
/// fields treat inappropriate as positive. `excluded_a`/`excluded_i` split
/// the undetermined and parse-failure predictions by ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp_a: u64,
    pub fp_a: u64,
    pub fn_a: u64,
    pub tp_i: u64,
    pub fp_i: u64,
    pub fn_i: u64,
    pub undetermined: u64,
    pub parse_failures: u64,
    pub excluded_a: u64,
    pub excluded_i: u64,
}

impl Confusion {
    /// Records one prediction; `None` is a parse failure.
    pub fn record(&mut self, predicted: Option<Decision>, truth: BinaryJudgment) {
        use BinaryJudgment as J;
        match (predicted.and_then(Decision::judgment), truth) {
            (Some(J::Appropriate), J::Appropriate) => self.tp_a += 1,
            (Some(J::Inappropriate), J::Inappropriate) => self.tp_i += 1,
            (Some(J::Appropriate), J::Inappropriate) => {
                self.fp_a += 1;
                self.fn_i += 1;
            }
            (Some(J::Inappropriate), J::Appropriate) => {
                self.fp_i += 1;
                self.fn_a += 1;
            }
            (None, t) => {
                if predicted.is_some() {
                    self.undetermined += 1;
                } else {
                    self.parse_failures += 1;
                }
                match t {
                    J::Appropriate => self.excluded_a += 1,
                    J::Inappropriate => self.excluded_i += 1,
                }
            }
        }
    }

    pub fn from_predictions<'a>(
        predictions: impl IntoIterator<Item = &'a (Decision, BinaryJudgment)>,
    ) -> Self {
        let mut c = Confusion::default();
        for &(d, t) in predictions {
            c.record(Some(d), t);
        }
        c
    }

    /// Predictions that produced a binary judgment.
    pub fn judged(&self) -> u64 {
        self.tp_a + self.fp_a + self.tp_i + self.fp_i
    }

    pub fn total(&self) -> u64 {
        self.judged() + self.undetermined + self.parse_failures
    }

    /// (tp, fp, fn) for `target` under `mode`.
    pub fn counts(&self, target: BinaryJudgment, mode: ExclusionMode) -> (u64, u64, u64) {
        let (tp, fp, fn_, excluded) = match target {
            BinaryJudgment::Appropriate => (self.tp_a, self.fp_a, self.fn_a, self.excluded_a),
            BinaryJudgment::Inappropriate => (self.tp_i, self.fp_i, self.fn_i, self.excluded_i),
        };
        match mode {
            ExclusionMode::Exclude => (tp, fp, fn_),
            ExclusionMode::CountAsMiss => (tp, fp, fn_ + excluded),
        }
    }

    pub fn class_score<T: Scalar>(
        &self,
        target: BinaryJudgment,
        mode: ExclusionMode,
    ) -> ClassScore<T> {
        let (tp, fp, fn_) = self.counts(target, mode);
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                None
            } else {
                Some(T::from_count(num) / T::from_count(den))
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let mut degenerate = precision.is_none() || recall.is_none();
        let precision = precision.unwrap_or_else(T::zero);
        let recall = recall.unwrap_or_else(T::zero);
        let sum = precision.clone() + recall.clone();
        let f1 = if sum.is_zero() {
            degenerate = true;
            T::zero()
        } else {
            T::from_count(2) * precision.clone() * recall.clone() / sum
        };
        ClassScore {
            precision,
            recall,
            f1,
            support: self.judged(),
            degenerate,
        }
    }
}

/// Precision, recall and F1 for one class. `support` counts judged
/// predictions; `degenerate` marks a zero denominator somewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub support: u64,
    pub degenerate: bool,
}

impl<T: Scalar> ClassScore<T> {
    pub fn to_f64(&self) -> ClassScore<f64> {
        ClassScore {
            precision: self.precision.to_f64(),
            recall: self.recall.to_f64(),
            f1: self.f1.to_f64(),
            support: self.support,
            degenerate: self.degenerate,
        }
    }
}

/// Scores `target` over `(predicted, truth)` pairs, dropping undetermined
/// predictions.
pub fn f1_for_class<T: Scalar>(
    predictions: &[(Decision, BinaryJudgment)],
    target: BinaryJudgment,
) -> ClassScore<T> {
    f1_for_class_with(predictions, target, ExclusionMode::Exclude)
}

pub fn f1_for_class_with<T: Scalar>(
    predictions: &[(Decision, BinaryJudgment)],
    target: BinaryJudgment,
    mode: ExclusionMode,
) -> ClassScore<T> {
    Confusion::from_predictions(predictions).class_score(target, mode)
}
