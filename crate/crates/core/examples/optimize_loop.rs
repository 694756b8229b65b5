//! Run the refinement loop against a mock whose FIX revisions repair templates.

use templar::corpus::{Corpus, Document, Manifest, MetricKind, QueryItem};
use templar::eval::Evaluator;
use templar::gateway::{BackendError, CompletionRequest, Gateway, Role};
use templar::optimizer::{LoopContext, OptimizationConfig, Refiner};
use templar::template::{Decision, Origin, TemplateExample, TemplateStore, ThoughtTemplate};

/// Answers correctly once the cited template says "repaired".
fn backend(r: &CompletionRequest) -> Result<String, BackendError> {
    let p = &r.prompt;
    Ok(match r.role {
        Role::Answerer => {
            let tid = if p.contains("rivers") { "TID_1" } else { "TID_2" };
            let gold = p.split("GOLD ").nth(1).and_then(|s| s.split_whitespace().next()).unwrap_or("?");
            let repaired = p.contains(&format!("TEMPLATE_ID: {tid}\nTEMPLATE_TITLE: repaired"));
            let answer = if repaired { gold } else { "unsure" };
            format!("Step 1 | TEMPLATE_TITLE: t TEMPLATE_ID: {tid} | apply\nFinal Answer: ['{answer}']")
        }
        Role::Feedback => "- The flow stops one hop early.\n**FIX**".into(),
        Role::Updater => serde_json::json!({
            "template_name": "repaired",
            "description": "Follow the chain to the last hop.",
            "reason_flow": ["Find the bridge", "Follow it", "Answer"],
            "example": {"example_problem": "p", "solution_steps": ["s"], "final_answer": "a"}
        })
        .to_string(),
        Role::Constructor => return Err(BackendError::Transport("unused".into())),
    })
}

fn main() {
    let mut store = TemplateStore::new();
    for name in ["draft rivers", "draft cities"] {
        let t = ThoughtTemplate {
            template_id: "TID_0".into(),
            template_name: name.into(),
            description: format!("Initial {name} pattern."),
            reason_flow: vec!["Guess".into()],
            example: TemplateExample {
                example_problem: "p".into(),
                solution_steps: vec!["s".into()],
                final_answer: "a".into(),
            },
        };
        store.insert_new(t, Origin::Constructed).unwrap();
    }
    let queries = |prefix: &str| -> Vec<QueryItem> {
        (0..6)
            .map(|i| {
                let topic = if i % 2 == 0 { "rivers" } else { "cities" };
                QueryItem {
                    query_id: format!("{prefix}{i}"),
                    question: format!("A question about {topic} GOLD {prefix}answer{i}"),
                    gold_answers: vec![format!("{prefix}answer{i}")],
                    doc_allowlist: None,
                    gold_doc_ids: None,
                }
            })
            .collect()
    };
    let manifest = |qs| Manifest {
        queries: qs,
        corpus_path: "in-memory".into(),
        metric: MetricKind::F1,
    };
    let (train, validation) = (manifest(queries("t")), manifest(queries("v")));
    let corpus = Corpus::new(vec![Document::new("d1", "Notes", "Nothing relevant here.")]).unwrap();
    let gateway = Gateway::new().with_mock("mock", backend);
    let evaluator = Evaluator::new(&gateway, "mock", &corpus);
    let refiner = Refiner::new(&gateway, "mock", "mock", MetricKind::F1);
    let triples = Default::default();
    let ctx = LoopContext {
        evaluator: &evaluator,
        refiner: &refiner,
        train: &train,
        triples: &triples,
        k: None,
    };
    let config = OptimizationConfig {
        max_iterations: 4,
        early_stop: true,
        ..Default::default()
    };
    let result = ctx.run_optimization(&store, Some(&validation), &config, None).unwrap();
    println!("iter  KEEP  ADD  FIX  DISCARD  train  validation");
    for r in &result.reports {
        println!(
            "{:<5} {:>4} {:>4} {:>4} {:>8} {:>6.2} {:>11.2}",
            r.iteration,
            r.count(Decision::Keep),
            r.count(Decision::Add),
            r.count(Decision::Fix),
            r.count(Decision::Discard),
            r.aggregate_metric,
            r.validation_metric.unwrap()
        );
    }
    println!("stopped early: {}", result.stopped_early);
    for t in &result.final_store.templates {
        println!("{} {} ({})", t.template_id, t.template_name, result.final_store.provenance[&t.template_id]);
    }
}
