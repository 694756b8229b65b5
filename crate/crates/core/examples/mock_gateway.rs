//! Route role-tagged requests through a scripted mock backend with retries.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use templar::gateway::{BackendConfig, BackendError, CompletionRequest, Gateway, MockBackend, MockRule, Role};

fn main() {
    let script = MockBackend::new()
        .with_response("What is 2 + 2?", "Final Answer: ['4']")
        .with_rule(MockRule {
            role: Some(Role::Feedback),
            contains: "template".into(),
            response: "- The flow is fine; the answer format was off.\n**KEEP**".into(),
        });
    let mut gateway = Gateway::new().with_mock("scripted", script);

    // a backend that fails twice before answering
    let calls = Arc::new(AtomicU32::new(0));
    let seen = Arc::clone(&calls);
    let flaky = move |_: &CompletionRequest| -> Result<String, BackendError> {
        if seen.fetch_add(1, Ordering::SeqCst) < 2 {
            Err(BackendError::Transport("connection reset".into()))
        } else {
            Ok("recovered".into())
        }
    };
    let mut config = BackendConfig::new("flaky");
    config.backoff_ms = 10;
    gateway.register(config, Arc::new(flaky)).unwrap();

    let answer = gateway
        .complete(&CompletionRequest::new(Role::Answerer, "scripted", "What is 2 + 2?"))
        .unwrap();
    println!("answerer: {answer}");
    let feedback = gateway
        .complete(&CompletionRequest::new(Role::Feedback, "scripted", "Review this template."))
        .unwrap();
    println!("feedback: {feedback}");
    let done = gateway
        .complete_detailed(&CompletionRequest::new(Role::Answerer, "flaky", "anything"))
        .unwrap();
    println!("flaky: {} after {} retries", done.text, done.retries);
    println!("telemetry: {:?}", gateway.telemetry("flaky").unwrap());
    let missing = gateway.complete(&CompletionRequest::new(Role::Answerer, "scripted", "unscripted"));
    println!("unscripted prompt: {}", missing.unwrap_err());
}
