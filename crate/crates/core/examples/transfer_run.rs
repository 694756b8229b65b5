//! Bind a snapshot built by one backend to a different answerer.

use templar::analytics::transfer_run_config;
use templar::gateway::{Gateway, MockBackend};
use templar::template::{Origin, TemplateExample, TemplateStore, ThoughtTemplate};

fn main() {
    let mut store = TemplateStore::new();
    store.built_by = Some("large-model".into());
    store
        .insert_new(
            ThoughtTemplate {
                template_id: "TID_0".into(),
                template_name: "Biographical location lookup".into(),
                description: "Find where a life event of a person happened.".into(),
                reason_flow: vec!["Identify the person".into(), "Find the event location".into()],
                example: TemplateExample {
                    example_problem: "In what city did Lloyd Lonergan die?".into(),
                    solution_steps: vec!["Look up his death record".into()],
                    final_answer: "New York".into(),
                },
            },
            Origin::Constructed,
        )
        .unwrap();
    let dir = std::env::temp_dir().join(format!("templar-transfer-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(TemplateStore::file_name(0));
    store.snapshot(&path).unwrap();

    let gateway = Gateway::new()
        .with_mock("large-model", MockBackend::new())
        .with_mock("small-model", MockBackend::new());
    for answerer in ["small-model", "large-model"] {
        let cfg = transfer_run_config(&path, answerer, &gateway).unwrap();
        println!(
            "answerer {:<12} source {:<12} transfer {:<5} sha256 {}…",
            cfg.answerer,
            cfg.template_source.as_deref().unwrap_or("-"),
            cfg.transfer,
            &cfg.snapshot_sha256[..12]
        );
    }
    let err = transfer_run_config(&path, "unregistered", &gateway).unwrap_err();
    println!("unregistered target: {err}");
    std::fs::remove_dir_all(&dir).unwrap();
}
