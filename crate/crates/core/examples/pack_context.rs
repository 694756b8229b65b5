//! Pack documents into a token budget without splitting any of them.

use templar::corpus::{estimate_tokens, format_document, pack, Document};

fn main() {
    let docs: Vec<Document> = (0..10)
        .map(|i| Document::new(format!("d{i}"), format!("Passage {i}"), "lorem ipsum dolor ".repeat(20 * (i + 1))))
        .collect();
    for d in &docs {
        println!("{}: ~{} tokens", d.doc_id, estimate_tokens(&format_document(d)));
    }
    for budget in [200, 1000, 5000] {
        let packed = pack(&docs, budget).expect("first document fits");
        println!(
            "budget {budget:>5}: {} documents, ~{} tokens",
            packed.documents.len(),
            packed.estimated_tokens
        );
    }
    match pack(&docs, 50) {
        Err(e) => println!("budget    50: {e}"),
        Ok(_) => unreachable!(),
    }
    let rendered = pack(&docs[..2], 1000).unwrap().render();
    println!("\nrendered context:\n{}", &rendered[..120]);
}
