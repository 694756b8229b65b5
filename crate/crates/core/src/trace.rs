//! Reading reasoning traces: which templates were invoked and what the final
//! answer was.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::template::{TemplateId, TemplateStore};

fn template_ref_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"TEMPLATE_ID:\s*(TID_\d+)").expect("valid regex"))
}

/// Distinct ids cited as `TEMPLATE_ID: TID_<digits>` in a trace.
pub fn detect_used_templates(raw_trace: &str) -> BTreeSet<TemplateId> {
    template_ref_pattern()
        .captures_iter(raw_trace)
        .map(|c| TemplateId::new(&c[1]))
        .collect()
}

/// Detected ids split into those present in the store and those that are not.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DetectedTemplates {
    pub known: BTreeSet<TemplateId>,
    pub unknown: BTreeSet<TemplateId>,
}

pub fn detect_against(raw_trace: &str, store: &TemplateStore) -> DetectedTemplates {
    let (known, unknown) = detect_used_templates(raw_trace)
        .into_iter()
        .partition(|id| store.contains(id));
    DetectedTemplates { known, unknown }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub answers: Vec<String>,
    /// Set when no `Final Answer:` line was found and the last non-empty
    /// line was taken verbatim.
    pub fallback: bool,
}

impl ParsedAnswer {
    /// Answers joined into one prediction string for scoring.
    pub fn prediction(&self) -> String {
        self.answers.join(", ")
    }
}

const MARKER: &str = "Final Answer:";

fn strip_markup(line: &str) -> &str {
    line.trim().trim_start_matches(['*', '#', '>', ' ']).trim_start()
}

/// Finds the last line beginning with `Final Answer:` and parses its
/// bracketed, quoted, comma-separated list.
pub fn parse_final_answer(raw_trace: &str) -> ParsedAnswer {
    let marked = raw_trace.lines().rev().find_map(|line| {
        let line = strip_markup(line);
        line.strip_prefix(MARKER)
            .or_else(|| line.strip_prefix("**Final Answer:**"))
    });
    match marked {
        Some(rest) => ParsedAnswer {
            answers: parse_answer_list(rest.trim().trim_start_matches("**").trim()),
            fallback: false,
        },
        None => ParsedAnswer {
            answers: raw_trace
                .lines()
                .rev()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .map(|l| vec![l.to_string()])
                .unwrap_or_default(),
            fallback: true,
        },
    }
}

fn closing_quote(open: char) -> Option<char> {
    match open {
        '\'' | '`' => Some('\''),
        '"' => Some('"'),
        '‘' => Some('’'),
        '“' => Some('”'),
        _ => None,
    }
}

/// Parses `['a', "b", c]`. Text without brackets is a single answer.
pub fn parse_answer_list(text: &str) -> Vec<String> {
    let text = text.trim();
    let Some(inner) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) else {
        return if text.is_empty() {
            Vec::new()
        } else {
            vec![text.to_string()]
        };
    };
    let chars: Vec<char> = inner.chars().collect();
    let mut answers = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() || c == ',' {
            i += 1;
            continue;
        }
        if let Some(close) = closing_quote(c) {
            // a closing quote counts only when followed by a separator or the end
            let mut j = i + 1;
            let end = loop {
                if j >= chars.len() {
                    break None;
                }
                if chars[j] == close {
                    let mut k = j + 1;
                    while k < chars.len() && chars[k].is_whitespace() {
                        k += 1;
                    }
                    if k >= chars.len() || chars[k] == ',' {
                        break Some(j);
                    }
                }
                j += 1;
            };
            match end {
                Some(j) => {
                    answers.push(chars[i + 1..j].iter().collect::<String>());
                    i = j + 1;
                }
                None => {
                    let item: String = chars[i + 1..].iter().collect();
                    answers.push(item.trim().to_string());
                    break;
                }
            }
        } else {
            let mut j = i;
            while j < chars.len() && chars[j] != ',' {
                j += 1;
            }
            let item: String = chars[i..j].iter().collect();
            answers.push(item.trim().to_string());
            i = j;
        }
    }
    answers
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn detects_set_of_ids() {
        let t = "Step 1 | TEMPLATE_ID: TID_77 | x\nStep 2 | TEMPLATE_ID:TID_77\nTEMPLATE_ID:   TID_5";
        let ids: Vec<_> = detect_used_templates(t).into_iter().map(|i| i.to_string()).collect();
        assert_eq!(ids, ["TID_5", "TID_77"]);
        assert!(detect_used_templates("no templates here, TID_4 alone").is_empty());
    }

    #[test]
    fn flags_unknown_ids() {
        let store = crate::template::fixtures::store_of(2);
        let d = detect_against("TEMPLATE_ID: TID_2 TEMPLATE_ID: TID_9", &store);
        assert_eq!(d.known.len(), 1);
        assert_eq!(d.unknown.iter().next().unwrap().as_str(), "TID_9");
    }

    #[test]
    fn parses_final_answer_line() {
        let p = parse_final_answer("reasoning...\nFinal Answer: ['Green Bay']");
        assert_eq!(p.answers, ["Green Bay"]);
        assert!(!p.fallback);
    }

    #[test]
    fn last_marker_wins() {
        let p = parse_final_answer("Final Answer: ['a']\nmore\nFinal Answer: ['b']\n");
        assert_eq!(p.answers, ["b"]);
    }

    #[test]
    fn fallback_uses_last_line() {
        let p = parse_final_answer("thinking\nMoscow\n\n");
        assert_eq!(p.answers, ["Moscow"]);
        assert!(p.fallback);
    }

    #[test]
    fn list_variants() {
        assert_eq!(parse_answer_list("[`for the conclave in Rome']"), ["for the conclave in Rome"]);
        assert_eq!(parse_answer_list(r#"["a", 'b', c]"#), ["a", "b", "c"]);
        assert_eq!(parse_answer_list("['O'Brien', 'x']"), ["O'Brien", "x"]);
        assert_eq!(parse_answer_list("Mario Andretti"), ["Mario Andretti"]);
        assert!(parse_answer_list("[]").is_empty());
        let p = parse_final_answer("**Final Answer:** 1905");
        assert_eq!(p.answers, ["1905"]);
    }

    proptest! {
        #[test]
        fn output_contract_round_trip(answers in proptest::collection::vec("[A-Za-z0-9][A-Za-z0-9 .'-]{0,20}[A-Za-z0-9]", 1..5)) {
            let quoted: Vec<String> = answers.iter().map(|a| format!("'{a}'")).collect();
            let trace = format!("Step 1 ...\nFinal Answer: [{}]\n", quoted.join(", "));
            prop_assert_eq!(parse_final_answer(&trace).answers, answers);
        }
    }
}
