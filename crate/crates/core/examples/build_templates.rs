//! Build an initial template store from training triples with a mock constructor.

use std::collections::HashSet;

use serde_json::json;
use templar::construction::{example_sub_template, Constructor, TrainingTriple};
use templar::gateway::{BackendError, CompletionRequest, Gateway};

fn main() {
    let reply = |r: &CompletionRequest| -> Result<String, BackendError> {
        let hop = if r.prompt.contains("die") { "Death place lookup" } else { "Creator attribution" };
        Ok(json!({
            "template_name": "Two-hop bridge",
            "description": "Resolve a bridge entity, then answer about it.",
            "sub_templates": [example_sub_template(hop), example_sub_template("Answer extraction")]
        })
        .to_string())
    };
    let gateway = Gateway::new().with_mock("constructor", reply);
    let triples = vec![
        TrainingTriple {
            query_id: "train-1".into(),
            problem: "In what city did Lloyd Lonergan die?".into(),
            solution: Some(vec!["Identify the person".into(), "Find the death record".into()]),
            answer: "New York".into(),
        },
        TrainingTriple {
            query_id: "train-2".into(),
            problem: "Who was the screenwriter of 'With the Mounted Police'?".into(),
            solution: None,
            answer: "Lloyd Lonergan".into(),
        },
    ];
    let (store, skips) = Constructor::new(&gateway, "constructor")
        .build_initial_set(&triples, &HashSet::new())
        .expect("no contamination");
    println!("{} templates, {} skips", store.len(), skips.len());
    for t in &store.templates {
        println!("  {} {:<22} from {}", t.template_id, t.template_name, store.sources[&t.template_id]);
    }
    let contaminated: HashSet<&str> = ["train-2"].into_iter().collect();
    let err = Constructor::new(&gateway, "constructor")
        .build_initial_set(&triples, &contaminated)
        .unwrap_err();
    println!("with train-2 in the test split: {err}");
}
