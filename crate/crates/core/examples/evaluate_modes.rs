//! Answer the same questions under every inference mode and compare scores.

use templar::corpus::{Corpus, Document, Manifest, MetricKind, QueryItem};
use templar::eval::{Evaluator, Mode};
use templar::gateway::{BackendError, CompletionRequest, Gateway};
use templar::template::{Origin, TemplateExample, TemplateStore, ThoughtTemplate};

fn answerer(r: &CompletionRequest) -> Result<String, BackendError> {
    let p = &r.prompt;
    let mut trace = String::new();
    if p.contains("TEMPLATE_ID: TID_1") {
        trace.push_str("Step 1 | TEMPLATE_TITLE: Bridge entity TEMPLATE_ID: TID_1 | find the painter\n");
    }
    // the mock can only answer from documents it was shown
    let answer = if p.contains("conclave in Rome") && p.contains("Roncalli") {
        "for the conclave in Rome"
    } else if p.contains("Venice") && p.contains("Titian") {
        "Venice"
    } else {
        "unknown"
    };
    Ok(format!("{trace}Final Answer: ['{answer}']"))
}

fn main() {
    let corpus = Corpus::new(vec![
        Document::new("228", "Pope John XXIII", "Roncalli left Venice for the conclave in Rome."),
        Document::new("412", "Titian", "Titian, painter of the Crucifixion, died in Venice."),
    ])
    .unwrap();
    let q = |id: &str, question: &str, gold: &str| QueryItem {
        query_id: id.into(),
        question: question.into(),
        gold_answers: vec![gold.into()],
        doc_allowlist: None,
        gold_doc_ids: None,
    };
    let manifest = Manifest {
        queries: vec![
            q("q1", "Why did Roncalli leave the city where Titian died?", "for the conclave in Rome"),
            q("q2", "Where did Titian die?", "Venice"),
        ],
        corpus_path: "in-memory".into(),
        metric: MetricKind::F1,
    };
    let mut store = TemplateStore::new();
    store
        .insert_new(
            ThoughtTemplate {
                template_id: "TID_0".into(),
                template_name: "Bridge entity".into(),
                description: "Resolve the bridging entity before the final hop.".into(),
                reason_flow: vec!["Find the bridge".into(), "Answer about it".into()],
                example: TemplateExample {
                    example_problem: "Where did the painter of X die?".into(),
                    solution_steps: vec!["Painter of X is Y".into(), "Y died in Z".into()],
                    final_answer: "Z".into(),
                },
            },
            Origin::Constructed,
        )
        .unwrap();
    let gateway = Gateway::new().with_mock("model", answerer);
    let evaluator = Evaluator::new(&gateway, "model", &corpus).with_budget(4000);
    for mode in [Mode::Naive, Mode::Cot, Mode::Cic, Mode::CicCot, Mode::Total] {
        let store = mode.uses_templates().then_some(&store);
        let outcome = evaluator.evaluate(&manifest, store, mode, None).unwrap();
        let cited: usize = outcome.usage.iter().map(|u| u.used_template_ids.len()).sum();
        println!(
            "{:<8} F1 = {:.2}  template citations = {cited}",
            mode.as_str(),
            outcome.result.aggregate
        );
    }
}
