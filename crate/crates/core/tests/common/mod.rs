#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde_json::{json, Value};
use templar::gateway::{BackendError, CompletionRequest, MockRule, Role};
use templar::optimizer::UsageRecord;
use templar::template::{TemplateExample, TemplateId, TemplateStore, ThoughtTemplate};

pub fn template(id: &str, name: &str, description: &str) -> ThoughtTemplate {
    ThoughtTemplate {
        template_id: TemplateId::from(id),
        template_name: name.to_string(),
        description: description.to_string(),
        reason_flow: vec![format!("Apply {name}"), "Read the answer off the evidence".into()],
        example: TemplateExample {
            example_problem: format!("A problem solved by {name}?"),
            solution_steps: vec!["Step one".into(), "Step two".into()],
            final_answer: "answer".into(),
        },
    }
}

/// A store with `n` constructed templates, each described by `description(i)`.
pub fn store_with(n: u64, description: impl Fn(u64) -> String) -> TemplateStore {
    let mut store = TemplateStore::new();
    for i in 1..=n {
        let t = template("TID_0", &format!("Pattern {i}"), &description(i));
        store
            .insert_new(t, templar::template::Origin::Constructed)
            .unwrap();
    }
    store
}

pub fn template_json(name: &str, description: &str) -> String {
    json!({
        "template_name": name,
        "description": description,
        "reason_flow": [format!("Apply {name}"), "Read the answer off the evidence"],
        "example": {
            "example_problem": format!("A problem solved by {name}?"),
            "solution_steps": ["Step one", "Step two"],
            "final_answer": "answer"
        }
    })
    .to_string()
}

pub fn trace_citing(ids: &[String], answer: &str) -> String {
    let mut out = String::from("Working through the documents.\n");
    for (i, id) in ids.iter().enumerate() {
        out.push_str(&format!(
            "Step {} | TEMPLATE_TITLE: Pattern TEMPLATE_ID: {id} | applied to the evidence\n",
            i + 1
        ));
    }
    out.push_str(&format!("Final Answer: ['{answer}']"));
    out
}

pub fn usage(query: usize, ids: &[u64], metric: f64) -> UsageRecord {
    UsageRecord {
        query_id: format!("q{query:03}"),
        used_template_ids: ids.iter().map(|&i| TemplateId::from_number(i)).collect(),
        unknown_template_ids: BTreeSet::new(),
        prediction: String::new(),
        gold_answers: vec!["gold".into()],
        metric_value: metric,
        raw_trace: String::new(),
    }
}

/// First `"template_id": "TID_n"` in a refinement prompt.
pub fn prompt_template_id(prompt: &str) -> Option<u64> {
    let re = Regex::new(r#""template_id": "TID_(\d+)""#).unwrap();
    re.captures(prompt).map(|c| c[1].parse().unwrap())
}

// ------------------------------------------------------------ staged repair

/// Backend whose answers depend on the cited template's repair level.
/// Questions read `ROUTE TID_<n> NEED <d> GOLD <word>`; the answer is right
/// iff template n is present with `repair level >= d`. Feedback always asks
/// for FIX and every FIX raises the level by one.
pub fn staged_repair_backend(request: &CompletionRequest) -> Result<String, BackendError> {
    let p = &request.prompt;
    match request.role {
        Role::Answerer => {
            let q = Regex::new(r"ROUTE TID_(\d+) NEED (\d+) GOLD (\w+)").unwrap();
            let c = q.captures(p).expect("staged question");
            let (tid, need, gold) = (&c[1], c[2].parse::<u32>().unwrap(), &c[3]);
            let level_re = Regex::new(&format!(
                r"TEMPLATE_ID: TID_{tid}\nTEMPLATE_TITLE: [^\n]*\nDESCRIPTION: repair level (\d+)"
            ))
            .unwrap();
            let level = level_re.captures(p).map(|c| c[1].parse::<u32>().unwrap());
            let answer = match level {
                Some(l) if l >= need => gold.to_string(),
                _ => "unknown".to_string(),
            };
            Ok(trace_citing(&[format!("TID_{tid}")], &answer))
        }
        Role::Feedback => Ok("The flow skips the bridging hop.\n**FIX**".into()),
        Role::Updater => {
            let re = Regex::new(r#""description": "repair level (\d+)""#).unwrap();
            let level: u32 = re.captures(p).expect("current template")[1].parse().unwrap();
            let name = Regex::new(r#""template_name": "([^"]+)""#).unwrap().captures(p).unwrap()[1].to_string();
            Ok(template_json(&name, &format!("repair level {}", level + 1)))
        }
        Role::Constructor => Err(BackendError::Transport("not scripted".into())),
    }
}

// ------------------------------------------------------------ file fixture

pub const CITIES: [&str; 12] = [
    "Avalon", "Brindle", "Corvin", "Dunmore", "Elsmere", "Fairholt", "Glenrock", "Harwick", "Ivybridge", "Jasper",
    "Kestrel", "Lowther",
];

pub fn city(i: usize) -> String {
    format!("{} {i:03}", CITIES[i % CITIES.len()])
}

pub fn question(i: usize) -> String {
    format!("Which city hosts the archive of item {i:03}?")
}

/// Writes a small dataset with a mock script and run config:
/// 60 documents, train q000-q019, validation q020-q029, test q030-q039,
/// and 20 training triples.
pub fn write_dataset(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let mut corpus = String::new();
    for i in 0..60 {
        let doc = json!({
            "doc_id": format!("d{i:03}"),
            "title": format!("Archive {i:03}"),
            "body": format!("The archive of item {i:03} is kept in {}. It was catalogued by a regional society.", city(i)),
        });
        corpus.push_str(&doc.to_string());
        corpus.push('\n');
    }
    fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    let manifest = |range: std::ops::Range<usize>| {
        let queries: Vec<Value> = range
            .map(|i| {
                json!({
                    "query_id": format!("q{i:03}"),
                    "question": question(i),
                    "gold_answers": [city(i)],
                    "gold_doc_ids": [format!("d{i:03}")],
                })
            })
            .collect();
        serde_json::to_string_pretty(&json!({"queries": queries, "corpus_path": "corpus.jsonl", "metric": "f1"})).unwrap()
    };
    fs::write(dir.join("train.json"), manifest(0..20)).unwrap();
    fs::write(dir.join("validation.json"), manifest(20..30)).unwrap();
    fs::write(dir.join("test.json"), manifest(30..40)).unwrap();
    let mut triples = String::new();
    for i in 0..20 {
        let t = json!({
            "query_id": format!("q{i:03}"),
            "problem": question(i),
            "solution": [format!("Find the archive of item {i:03}"), "Read off the city"],
            "answer": city(i),
        });
        triples.push_str(&t.to_string());
        triples.push('\n');
    }
    fs::write(dir.join("triples.jsonl"), triples).unwrap();

    let mut rules = vec![MockRule {
        role: Some(Role::Constructor),
        contains: String::new(),
        response: json!({
            "holistic_name": "Archive lookup",
            "sub_templates": [
                templar::construction::example_sub_template("Entity anchoring"),
                templar::construction::example_sub_template("Location lookup"),
                templar::construction::example_sub_template("Answer extraction"),
            ]
        })
        .to_string(),
    }];
    for i in 0..40 {
        // every third answer is wrong and cites TID_1/TID_2; the rest cycle through TID_3..TID_12
        let wrong = i % 3 == 0;
        let cited = if wrong {
            vec!["TID_1".to_string(), "TID_2".to_string()]
        } else {
            vec![format!("TID_{}", 3 + i % 10), format!("TID_{}", 3 + (i * 7) % 10)]
        };
        let answer = if wrong { "Nowhere".to_string() } else { city(i) };
        rules.push(MockRule {
            role: Some(Role::Answerer),
            contains: question(i),
            response: trace_citing(&cited, &answer),
        });
    }
    rules.push(MockRule {
        role: Some(Role::Feedback),
        contains: String::new(),
        response: "The flow never names the archive.\n**FIX**".into(),
    });
    rules.push(MockRule {
        role: Some(Role::Updater),
        contains: String::new(),
        response: template_json("Archive-aware lookup", "Locate the archive first, then its city."),
    });
    let script = json!({ "rules": rules });
    fs::write(dir.join("mock.json"), serde_json::to_string_pretty(&script).unwrap()).unwrap();

    let config = r#"seed = 11
out = "out"
budget = 8000
num_triples = 10
mode = "total"

[data]
train = "train.json"
validation = "validation.json"
test = "test.json"
triples = "triples.jsonl"

[optimize]
tau = 0.5
min_usage = 2
max_iterations = 2
early_stop = false

[roles]
answerer = "mock"
constructor = "mock"
feedback = "mock"
updater = "mock"

[[backends]]
backend_id = "mock"
kind = "mock"
script = "mock.json"
parallelism = 4
context_limit = 16000
"#;
    fs::write(dir.join("run.toml"), config).unwrap();
}

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["templar"];
    argv.extend_from_slice(args);
    let code = templar::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot_tree(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}
