//! Index a handful of documents and run top-k retrieval with recall.

use templar::corpus::Document;
use templar::retrieval::{recall_at_k, Bm25Params, InvertedIndex};

fn main() {
    let docs = vec![
        Document::new("228", "Pope John XXIII", "Roncalli left Venice for the conclave in Rome in 1958."),
        Document::new("359", "Crucifixion (Titian)", "The Crucifixion is a painting by Titian kept in Ancona."),
        Document::new("412", "Titian", "Titian was a Venetian painter who died in Venice in 1576."),
        Document::new("501", "Ancona", "Ancona is a port city on the Adriatic Sea."),
    ];
    let index = InvertedIndex::build(&docs, Bm25Params::default()).expect("index builds");
    let query = "Where did the painter of the Crucifixion die?";
    let result = index.retrieve(query, 3).expect("k >= 1");
    println!("query: {query}");
    for (rank, (doc_id, score)) in result.hits.iter().enumerate() {
        println!("  {}. {doc_id:>4}  {score:.4}", rank + 1);
    }
    let gold = vec!["412".to_string(), "359".to_string()];
    for k in 1..=3 {
        let r = recall_at_k(&result.top(k), &gold).unwrap();
        println!("recall@{k} = {r:.2}");
    }
}
