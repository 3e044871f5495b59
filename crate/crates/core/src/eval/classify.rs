//! Free-text SCE parsing and 3-class / binary classification reports.

use crate::telemetry::SceClass;

use super::EvalError;

/// Maps free text onto an [`SceClass`]; `None` is the unscorable "unknown" outcome.
///
/// Near-collision phrases are checked first because they contain "collision".
/// Matching runs on the token stream, so any separator between "near" and
/// "collision" counts.
pub fn parse_sce_prediction(text: &str) -> Option<SceClass> {
    let joined = format!(" {} ", super::tokenize(text).join(" "));
    let has = |needles: &[&str]| needles.iter().any(|n| joined.contains(n));
    if has(&[" near collision", " near miss", " nearcollision", " nearmiss"]) {
        Some(SceClass::NearCollision)
    } else if has(&["collision", "crash", "impact"]) {
        Some(SceClass::Collision)
    } else if has(&["normal", "no event"]) {
        Some(SceClass::Normal)
    } else {
        None
    }
}

/// Binary confusion counts with near-collision and collision as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinaryConfusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl BinaryConfusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub n: usize,
    pub sce3_correct: usize,
    pub sce3_accuracy: f64,
    pub binary: BinaryConfusion,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub binary_accuracy: f64,
    /// TP + FP was zero; precision reported as 0.
    pub precision_undefined: bool,
    /// TP + FN was zero; recall reported as 0.
    pub recall_undefined: bool,
}

impl ClassificationReport {
    pub fn warnings(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.precision_undefined {
            out.push("precision undefined (no positive predictions), reported as 0");
        }
        if self.recall_undefined {
            out.push("recall undefined (no positive labels), reported as 0");
        }
        out
    }
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Unknown predictions are wrong in the 3-class tally and negative in the binary one.
pub fn classification_report(
    preds: &[Option<SceClass>],
    labels: &[SceClass],
) -> Result<ClassificationReport, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: preds.len(),
            references: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut correct = 0;
    let mut binary = BinaryConfusion::default();
    for (pred, &label) in preds.iter().zip(labels) {
        if *pred == Some(label) {
            correct += 1;
        }
        binary.add(pred.is_some_and(SceClass::is_event), label.is_event());
    }
    let n = labels.len();
    let (precision_pos, precision_undefined) = ratio(binary.tp, binary.tp + binary.fp);
    let (recall_pos, recall_undefined) = ratio(binary.tp, binary.tp + binary.fn_);
    Ok(ClassificationReport {
        n,
        sce3_correct: correct,
        sce3_accuracy: correct as f64 / n as f64,
        binary,
        precision_pos,
        recall_pos,
        binary_accuracy: (binary.tp + binary.tn) as f64 / n as f64,
        precision_undefined,
        recall_undefined,
    })
}
