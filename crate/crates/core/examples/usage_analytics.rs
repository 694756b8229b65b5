//! Histogram, co-occurrence lift and score-percentile subsets from a usage log.

use std::collections::BTreeSet;

use templar::analytics::{cooccurrence_lift, subset_by_score, usage_histogram, Direction};
use templar::optimizer::{score_templates, UsageRecord};
use templar::template::{Origin, TemplateExample, TemplateId, TemplateStore, ThoughtTemplate};

fn record(q: usize, ids: &[u64], metric: f64) -> UsageRecord {
    UsageRecord {
        query_id: format!("q{q}"),
        used_template_ids: ids.iter().map(|&i| TemplateId::from_number(i)).collect(),
        unknown_template_ids: BTreeSet::new(),
        prediction: String::new(),
        gold_answers: vec!["gold".into()],
        metric_value: metric,
        raw_trace: String::new(),
    }
}

fn main() {
    let log = vec![
        record(0, &[1, 2], 1.0),
        record(1, &[1, 2, 3], 0.8),
        record(2, &[1, 2], 0.6),
        record(3, &[3, 4], 0.0),
        record(4, &[4], 0.2),
        record(5, &[], 0.0),
    ];
    println!("usage histogram:");
    for (id, n) in usage_histogram(&log) {
        println!("  {id}: {n}");
    }
    let lift = cooccurrence_lift(&log);
    println!("lift over {} queries:", lift.query_count);
    for (a, b, l, support) in lift.long_form() {
        if a < b && support > 0 {
            println!("  {a} & {b}: lift {l:.2} (support {support})");
        }
    }
    let mut store = TemplateStore::new();
    for i in 1..=5 {
        let t = ThoughtTemplate {
            template_id: "TID_0".into(),
            template_name: format!("Pattern {i}"),
            description: "d".into(),
            reason_flow: vec!["step".into()],
            example: TemplateExample {
                example_problem: "p".into(),
                solution_steps: vec!["s".into()],
                final_answer: "a".into(),
            },
        };
        store.insert_new(t, Origin::Constructed).unwrap();
    }
    let table = score_templates(&log, &store);
    for p in [25, 50, 75, 100] {
        let bottom = subset_by_score(&store, &table, p, Direction::Bottom).unwrap();
        let top = subset_by_score(&store, &table, p, Direction::Top).unwrap();
        let ids = |s: &TemplateStore| s.ids().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        println!("{p:>3}%  bottom [{}]  top [{}]", ids(&bottom), ids(&top));
    }
}
