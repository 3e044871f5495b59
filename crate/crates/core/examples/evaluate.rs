//! Scores a handful of predictions and prints the overall and per-source table.

use std::collections::BTreeMap;

use scepipe::dataset::Task;
use scepipe::eval::{evaluate, parse_sce_prediction, rouge_l_f1, PredictionRecord};
use scepipe::telemetry::{SceClass, Source};

fn row(id: &str, task: Task, source: Source, pred: &str, reference: &str, label: Option<SceClass>) -> PredictionRecord {
    PredictionRecord {
        example_id: id.to_string(),
        task,
        source,
        prediction_text: pred.to_string(),
        reference_text: reference.to_string(),
        sce_label: label,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!(
        "rouge-l f1 = {:.4}",
        rouge_l_f1("the car brakes hard", "the car brakes hard near a cyclist")
    );
    println!("'a near miss' parses as {:?}", parse_sce_prediction("a near miss"));

    let rows = vec![
        row(
            "a:caption:0",
            Task::Caption,
            Source::Bddx,
            "a car stops",
            "a red car stops",
            None,
        ),
        row("a:closed_qa:2", Task::ClosedQa, Source::Bddx, "Yes.", "yes", None),
        row(
            "a:sce_cls:0",
            Task::SceCls,
            Source::Bddx,
            "collision",
            "collision",
            Some(SceClass::Collision),
        ),
        row(
            "b:sce_cls:0",
            Task::SceCls,
            Source::Nexar,
            "normal",
            "near-collision",
            Some(SceClass::NearCollision),
        ),
        row(
            "c:sce_cls:0",
            Task::SceCls,
            Source::Nexar,
            "near miss",
            "near-collision",
            Some(SceClass::NearCollision),
        ),
        row(
            "d:sce_cls:0",
            Task::SceCls,
            Source::Private,
            "normal",
            "normal",
            Some(SceClass::Normal),
        ),
    ];
    let bertscore = BTreeMap::from([("a:caption:0".to_string(), 0.91)]);
    print!("{}", evaluate(&rows, &bertscore, vec![42])?.render_text());
    Ok(())
}
