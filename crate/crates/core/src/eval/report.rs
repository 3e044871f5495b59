//! Joining predictions against reference rows and aggregating per-source reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{Task, TrainingExample};
use crate::records::{read_records, read_typed, Record, RecordError};
use crate::telemetry::{SceClass, Source};

use super::{
    classification_report, normalize_answer, parse_sce_prediction, rouge_l_f1, ClassificationReport, EvalError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub example_id: String,
    pub task: Task,
    pub source: Source,
    pub prediction_text: String,
    pub reference_text: String,
    /// Reference label; required for `sce_cls` rows.
    pub sce_label: Option<SceClass>,
}

/// Fraction of rows whose normalized prediction equals the normalized reference.
pub fn closed_qa_accuracy(rows: &[PredictionRecord]) -> Result<f64, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = rows
        .iter()
        .filter(|r| normalize_answer(&r.prediction_text) == normalize_answer(&r.reference_text))
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// A mean with the number of rows behind it; `value` is `None` when `n == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricCell {
    pub value: Option<f64>,
    pub n: usize,
}

impl MetricCell {
    fn mean(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            value: (n > 0).then(|| values.iter().sum::<f64>() / n as f64),
            n,
        }
    }

    fn render(&self) -> String {
        match self.value {
            Some(v) => format!("{v:.4} (n={})", self.n),
            None => format!("- (n={})", self.n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopeReport {
    /// `all` or a source name.
    pub scope: String,
    pub rows: usize,
    /// Macro mean over caption and open-QA rows.
    pub rouge_l_f1: MetricCell,
    /// Mean of externally supplied scores; never computed here.
    pub bertscore_f1: MetricCell,
    pub closed_qa_accuracy: MetricCell,
    pub sce: Option<ClassificationReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub run_seeds: Vec<u64>,
    pub overall: ScopeReport,
    pub per_source: Vec<ScopeReport>,
}

fn score_scope(
    scope: &str,
    rows: &[&PredictionRecord],
    bertscore: &BTreeMap<String, f64>,
) -> Result<ScopeReport, EvalError> {
    let rouge: Vec<f64> = rows
        .iter()
        .filter(|r| matches!(r.task, Task::Caption | Task::OpenQa))
        .map(|r| rouge_l_f1(&r.prediction_text, &r.reference_text))
        .collect();
    let bert: Vec<f64> = rows
        .iter()
        .filter_map(|r| bertscore.get(&r.example_id).copied())
        .collect();
    let closed: Vec<PredictionRecord> = rows
        .iter()
        .filter(|r| r.task == Task::ClosedQa)
        .map(|r| (*r).clone())
        .collect();
    let closed_qa = MetricCell {
        value: if closed.is_empty() {
            None
        } else {
            Some(closed_qa_accuracy(&closed)?)
        },
        n: closed.len(),
    };

    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for r in rows.iter().filter(|r| r.task == Task::SceCls) {
        let label = match r.sce_label {
            Some(l) => l,
            None => r
                .reference_text
                .parse()
                .map_err(|_| EvalError::MissingLabel(r.example_id.clone()))?,
        };
        preds.push(parse_sce_prediction(&r.prediction_text));
        labels.push(label);
    }
    let sce = if labels.is_empty() {
        None
    } else {
        Some(classification_report(&preds, &labels)?)
    };
    Ok(ScopeReport {
        scope: scope.to_string(),
        rows: rows.len(),
        rouge_l_f1: MetricCell::mean(&rouge),
        bertscore_f1: MetricCell::mean(&bert),
        closed_qa_accuracy: closed_qa,
        sce,
    })
}

/// Scores all rows plus one breakdown per source present.
/// `bertscore` maps example ids to externally computed scores.
pub fn evaluate(
    rows: &[PredictionRecord],
    bertscore: &BTreeMap<String, f64>,
    run_seeds: Vec<u64>,
) -> Result<EvalReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let all: Vec<&PredictionRecord> = rows.iter().collect();
    let overall = score_scope("all", &all, bertscore)?;
    let per_source = Source::ALL
        .into_iter()
        .filter_map(|s| {
            let subset: Vec<&PredictionRecord> = rows.iter().filter(|r| r.source == s).collect();
            (!subset.is_empty()).then(|| score_scope(s.as_str(), &subset, bertscore))
        })
        .collect::<Result<_, _>>()?;
    Ok(EvalReport {
        run_seeds,
        overall,
        per_source,
    })
}

/// Pairs each reference row with the prediction of the same example id.
/// Every reference needs exactly one prediction and vice versa.
pub fn join_predictions(
    references: &[TrainingExample],
    predictions: &[(String, String)],
) -> Result<Vec<PredictionRecord>, EvalError> {
    let mismatch = || EvalError::LengthMismatch {
        predictions: predictions.len(),
        references: references.len(),
    };
    if predictions.len() != references.len() {
        return Err(mismatch());
    }
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for (id, text) in predictions {
        if by_id.insert(id, text).is_some() {
            return Err(EvalError::DuplicatePrediction(id.clone()));
        }
    }
    references
        .iter()
        .map(|r| {
            let text = by_id
                .get(r.example_id.as_str())
                .ok_or_else(|| EvalError::UnmatchedReference(r.example_id.clone()))?;
            Ok(PredictionRecord {
                example_id: r.example_id.clone(),
                task: r.task,
                source: r.source,
                prediction_text: text.to_string(),
                reference_text: r.target_text.clone(),
                sce_label: (r.task == Task::SceCls).then_some(r.sce_label),
            })
        })
        .collect()
}

pub fn load_predictions(path: &Path) -> Result<Vec<(String, String)>, EvalError> {
    Ok(read_typed(path, |r| {
        Ok::<_, RecordError>((
            r.require("example_id")?.to_string(),
            r.require("prediction_text")?.to_string(),
        ))
    })?)
}

pub fn load_bertscores(path: &Path) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for r in read_records(path)? {
        let id = r.require("example_id")?.to_string();
        let score: f64 = r.parse("score")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(RecordError::bad_value("score", r.require("score")?, "expected a value in [0, 1]").into());
        }
        if out.insert(id.clone(), score).is_some() {
            return Err(EvalError::DuplicatePrediction(id));
        }
    }
    Ok(out)
}

pub fn load_references(paths: &[&Path]) -> Result<Vec<TrainingExample>, EvalError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_typed(p, TrainingExample::from_record)?);
    }
    let mut seen = BTreeSet::new();
    for e in &out {
        if !seen.insert(e.example_id.as_str()) {
            return Err(EvalError::DuplicateReference(e.example_id.clone()));
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    fn scopes(&self) -> impl Iterator<Item = &ScopeReport> {
        std::iter::once(&self.overall).chain(&self.per_source)
    }

    fn seeds(&self) -> String {
        if self.run_seeds.is_empty() {
            return "unknown".into();
        }
        self.run_seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::from("evaluation report\n");
        let _ = writeln!(out, "run_seed: {}", self.seeds());
        let _ = writeln!(out, "rows: {}\n", self.overall.rows);
        let _ = writeln!(
            out,
            "{:<8} {:>5}  {:<17} {:<17} {:<17} {:<17} {:<10} {:<10} {:<10}",
            "scope",
            "rows",
            "rouge_l_f1",
            "bertscore_f1",
            "closed_qa_acc",
            "sce3_acc",
            "sce2_prec",
            "sce2_rec",
            "sce2_acc"
        );
        for s in self.scopes() {
            let (sce3, prec, rec, acc) = match &s.sce {
                Some(c) => (
                    MetricCell {
                        value: Some(c.sce3_accuracy),
                        n: c.n,
                    }
                    .render(),
                    fmt_opt(Some(c.precision_pos)),
                    fmt_opt(Some(c.recall_pos)),
                    fmt_opt(Some(c.binary_accuracy)),
                ),
                None => (
                    MetricCell { value: None, n: 0 }.render(),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                ),
            };
            let _ = writeln!(
                out,
                "{:<8} {:>5}  {:<17} {:<17} {:<17} {:<17} {:<10} {:<10} {:<10}",
                s.scope,
                s.rows,
                s.rouge_l_f1.render(),
                s.bertscore_f1.render(),
                s.closed_qa_accuracy.render(),
                sce3,
                prec,
                rec,
                acc
            );
        }
        let _ = writeln!(out, "\nbinary confusion (positive = near-collision or collision):");
        for s in self.scopes() {
            if let Some(c) = &s.sce {
                let b = c.binary;
                let _ = writeln!(out, "  {:<8} tp={} fp={} fn={} tn={}", s.scope, b.tp, b.fp, b.fn_, b.tn);
                for w in c.warnings() {
                    let _ = writeln!(out, "  {:<8} warning: {w}", s.scope);
                }
            }
        }
        out
    }

    pub fn to_records(&self) -> Vec<Record> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.scopes()
            .map(|s| {
                let c = s.sce.as_ref();
                Record::new()
                    .with("scope", &s.scope)
                    .with("run_seed", self.seeds())
                    .with("rows", s.rows)
                    .with("rouge_l_f1", opt(s.rouge_l_f1.value))
                    .with("n_rouge_l", s.rouge_l_f1.n)
                    .with("bertscore_f1", opt(s.bertscore_f1.value))
                    .with("n_bertscore", s.bertscore_f1.n)
                    .with("closed_qa_accuracy", opt(s.closed_qa_accuracy.value))
                    .with("n_closed_qa", s.closed_qa_accuracy.n)
                    .with("sce3_accuracy", opt(c.map(|c| c.sce3_accuracy)))
                    .with("n_sce", c.map_or(0, |c| c.n))
                    .with("sce2_precision", opt(c.map(|c| c.precision_pos)))
                    .with("sce2_recall", opt(c.map(|c| c.recall_pos)))
                    .with("sce2_accuracy", opt(c.map(|c| c.binary_accuracy)))
                    .with("tp", c.map_or(0, |c| c.binary.tp))
                    .with("fp", c.map_or(0, |c| c.binary.fp))
                    .with("fn", c.map_or(0, |c| c.binary.fn_))
                    .with("tn", c.map_or(0, |c| c.binary.tn))
                    .with("precision_undefined", c.is_some_and(|c| c.precision_undefined))
                    .with("recall_undefined", c.is_some_and(|c| c.recall_undefined))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, task: Task, source: Source, pred: &str, reference: &str) -> PredictionRecord {
        PredictionRecord {
            example_id: id.into(),
            task,
            source,
            prediction_text: pred.into(),
            reference_text: reference.into(),
            sce_label: (task == Task::SceCls).then(|| reference.parse().unwrap()),
        }
    }

    #[test]
    fn closed_qa_counting() {
        let rows = vec![
            row("1", Task::ClosedQa, Source::Private, "Yes.", "yes"),
            row("2", Task::ClosedQa, Source::Private, "the Car", "car"),
            row("3", Task::ClosedQa, Source::Private, "RED!", "red"),
            row("4", Task::ClosedQa, Source::Private, "3", "three"),
        ];
        assert_eq!(closed_qa_accuracy(&rows).unwrap(), 0.75);
        assert!(matches!(closed_qa_accuracy(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn hand_computed_table() {
        let rows = vec![
            row(
                "a:caption:0",
                Task::Caption,
                Source::Private,
                "the cat sat",
                "the cat ran",
            ),
            row("a:closed_qa:1", Task::ClosedQa, Source::Private, "Yes", "yes"),
            row("a:sce_cls:0", Task::SceCls, Source::Private, "collision", "collision"),
            row("b:open_qa:0", Task::OpenQa, Source::Bddx, "x y z", "x y z"),
            row("b:closed_qa:1", Task::ClosedQa, Source::Bddx, "no", "yes"),
            row(
                "b:sce_cls:0",
                Task::SceCls,
                Source::Bddx,
                "weather is fine",
                "near-collision",
            ),
        ];
        let report = evaluate(&rows, &BTreeMap::new(), vec![42]).unwrap();
        let all = &report.overall;
        assert!((all.rouge_l_f1.value.unwrap() - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert_eq!(all.closed_qa_accuracy.value, Some(0.5));
        let sce = all.sce.as_ref().unwrap();
        assert_eq!((sce.binary.tp, sce.binary.fn_), (1, 1));
        assert_eq!(sce.sce3_accuracy, 0.5);
        assert_eq!(report.per_source.len(), 2);
        assert_eq!(report.per_source[0].scope, "private");
        assert_eq!(report.per_source[0].rouge_l_f1.n, 1);
        assert_eq!(all.bertscore_f1, MetricCell { value: None, n: 0 });
        let text = report.render_text();
        assert!(text.contains("0.8333 (n=2)"), "{text}");
        assert!(text.contains("run_seed: 42"));
        assert_eq!(report.to_records().len(), 3);
    }

    #[test]
    fn identical_predictions_score_one() {
        let rows = vec![
            row(
                "c",
                Task::Caption,
                Source::Nexar,
                "a truck turns left",
                "a truck turns left",
            ),
            row("q", Task::ClosedQa, Source::Nexar, "two", "two"),
            row("s", Task::SceCls, Source::Nexar, "collision", "collision"),
            row("t", Task::SceCls, Source::Nexar, "normal", "normal"),
        ];
        let bert = BTreeMap::from([("c".to_string(), 0.9)]);
        let r = evaluate(&rows, &bert, vec![]).unwrap().overall;
        assert_eq!(r.rouge_l_f1.value, Some(1.0));
        assert_eq!(r.closed_qa_accuracy.value, Some(1.0));
        let s = r.sce.unwrap();
        assert_eq!(
            (s.sce3_accuracy, s.precision_pos, s.recall_pos, s.binary_accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(r.bertscore_f1, MetricCell { value: Some(0.9), n: 1 });
    }
}
