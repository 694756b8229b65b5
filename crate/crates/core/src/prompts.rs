//! Prompt skeletons for template construction, feedback and editing, and
//! recovery of JSON payloads from model output.

use std::fmt::Write as _;

use serde_json::Value;
use thiserror::Error;

use crate::template::ThoughtTemplate;

/// Placeholder used when a training triple carries no solution.
pub const NOT_PROVIDED: &str = "(not provided)";

/// Appended to a prompt when the previous reply could not be parsed.
pub const JSON_REPROMPT: &str = "Your previous output was not valid JSON.";

const CONSTRUCTION_HEAD: &str = "\
You are an expert in reasoning strategies. Given a complex, multi-step problem, its complete solution, and the final answer, extract a structured problem-solving template composed of reusable sub-templates. Return the result in JSON format with the following structure:

1. A clear name for the strategy (template_name)
2. A brief description of the method (description)
3. A step-by-step reasoning flow to solve similar problems (reason_flow)
4. An example application, including:
   - Problem statement (example_problem)
   - Solution steps (solution_steps)
   - Final answer (final_answer)
5. sub_templates: A list of dictionaries, each representing a reasoning sub-template with:
   - template_name: A descriptive name for this sub-strategy
   - description: A brief description of the sub-strategy
   - reason_flow: A list of reasoning steps involved in this sub-task
   - example: An example application of this sub-template, including:
     - example_problem: A question matching this reasoning pattern
     - solution_steps: Step-by-step solution to that question
     - final_answer: The answer to that question

Respond only in JSON format with no explanation.
";

pub const TEMPLATE_SCHEMA: &str = r#"{
  "template_id": "string",
  "template_name": "string",
  "description": "string",
  "reason_flow": ["string", "..."],
  "example": {
    "example_problem": "string",
    "solution_steps": ["string", "..."],
    "final_answer": "string"
  }
}"#;

const FEEDBACK_TASK: &str = "\
Your task. Analyze the template's role in the prediction error:
- How the template led to the incorrect prediction
- What needs to be fixed in the template
- Specific feedback to get the correct answer

Decision Guide (choose exactly one at the end).
- FIX – Template needs revision to address the issues above
- DISCARD – Template is fundamentally incorrect
- KEEP – Template works perfectly AND failure is due to external factors (e.g., answer format)
- ADD – Template works perfectly BUT failure is due to system coordination issues (e.g., selection, multi-step integration)

Output format.
- Return bullets only for your analysis.
- On the FINAL LINE, output exactly one of: **FIX** or **DISCARD** or **ADD** or **KEEP**.
";

/// Construction prompt for one training triple. `solution` steps are joined
/// one per line.
pub fn render_construction_prompt(problem: &str, solution: Option<&[String]>, answer: &str) -> String {
    let solution = match solution {
        Some(steps) if !steps.is_empty() => steps.join("\n"),
        _ => NOT_PROVIDED.to_string(),
    };
    format!(
        "{CONSTRUCTION_HEAD}\nProblem:\n\"\"\" {problem} \"\"\"\n\nSolution:\n\"\"\" {solution} \"\"\"\n\nFinal Answer:\n\"\"\" {answer} \"\"\"\n"
    )
}

/// A training query on which a template was used and the answer was wrong.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedCase {
    pub query: String,
    pub trace: String,
    pub gold: Vec<String>,
    pub prediction: String,
    pub metric_value: f64,
}

/// The training triple a template was originally built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCase {
    pub query: String,
    pub solution: Option<Vec<String>>,
    pub answer: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("at least one failed case is required")]
    NoFailedCases,
}

fn template_dump(template: &ThoughtTemplate) -> String {
    serde_json::to_string_pretty(template).expect("template serializes")
}

fn write_cases(out: &mut String, cases: &[FailedCase], metric_label: &str) {
    for (i, case) in cases.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "Case #{i} ({metric_label}: {:?})", case.metric_value);
        let _ = writeln!(out, "Query: {}", case.query);
        let _ = writeln!(out, "REASONING TRACE: {}", case.trace);
        let _ = writeln!(out, "Gold: {}", case.gold.join(" | "));
        let _ = writeln!(out, "Pred: {}", case.prediction);
    }
}

fn write_source(out: &mut String, source: &SourceCase) {
    let _ = writeln!(out, "Query: {}", source.query);
    out.push_str("Solution Steps:\n");
    match &source.solution {
        Some(steps) if !steps.is_empty() => {
            for step in steps {
                let _ = writeln!(out, "{step}");
            }
        }
        _ => {
            let _ = writeln!(out, "{NOT_PROVIDED}");
        }
    }
    let _ = writeln!(out, "Final Answer: {}", source.answer);
}

/// Feedback prompt. The reply's final line carries the decision.
pub fn render_feedback_prompt(
    template: &ThoughtTemplate,
    failed_cases: &[FailedCase],
    source: &SourceCase,
    metric_label: &str,
) -> Result<String, PromptError> {
    if failed_cases.is_empty() {
        return Err(PromptError::NoFailedCases);
    }
    let mut out = String::new();
    out.push_str("Role. You are improving a reasoning template where it was applied.\n\n");
    out.push_str("Current Template.\n");
    out.push_str(&template_dump(template));
    out.push_str("\n\nFailed Cases where this template was used.\n");
    write_cases(&mut out, failed_cases, metric_label);
    out.push_str("\nFailed Case Source (original query/solution/answer).\n");
    write_source(&mut out, source);
    out.push('\n');
    out.push_str(FEEDBACK_TASK);
    Ok(out)
}

/// Edit prompt asking for a revised template as a bare JSON object.
pub fn render_edit_prompt(
    template: &ThoughtTemplate,
    failed_cases: &[FailedCase],
    source: &SourceCase,
    feedback: &str,
    metric_label: &str,
) -> Result<String, PromptError> {
    if failed_cases.is_empty() {
        return Err(PromptError::NoFailedCases);
    }
    let mut out = String::new();
    out.push_str("Role. You will edit a reasoning template based on the FEEDBACK.\n\n");
    out.push_str("Output constraints.\n");
    out.push_str("- Return ONLY a valid JSON object matching the SCHEMA below.\n");
    out.push_str("- No markdown, no extra text. Use double quotes for all keys/strings.\n\n");
    out.push_str("SCHEMA.\n");
    out.push_str(TEMPLATE_SCHEMA);
    out.push_str("\n\nCurrent Template.\n");
    out.push_str(&template_dump(template));
    out.push_str("\n\nFailed Cases (referenced in feedback).\n");
    write_cases(&mut out, failed_cases, metric_label);
    out.push_str("\nFailed Case Source (original query/solution/answer).\n");
    write_source(&mut out, source);
    out.push_str("\nFEEDBACK.\n");
    out.push_str(feedback.trim_end());
    out.push_str("\n\nInstruction. Revise the template to address the FEEDBACK while preserving reusable structure and staying within the SCHEMA. Respond only with the JSON object.\n");
    Ok(out)
}

/// Appends the JSON re-prompt notice to a prompt.
pub fn with_json_reprompt(prompt: &str) -> String {
    format!("{prompt}\n{JSON_REPROMPT}\n")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("no balanced JSON object found")]
    NoObject,
    #[error("JSON object does not match the template schema: {0}")]
    Schema(String),
}

/// End offset (exclusive) of the balanced `{...}` starting at `start`,
/// honouring string literals and escapes.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts the first balanced top-level JSON object from noisy model
/// output (code fences, leading or trailing prose).
pub fn parse_json_payload(raw: &str) -> Result<Value, PayloadError> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(offset) = raw[start..].find('{') {
        let open = start + offset;
        if let Some(end) = balanced_end(bytes, open) {
            if let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(&raw[open..end]) {
                return Ok(value);
            }
        }
        start = open + 1;
    }
    Err(PayloadError::NoObject)
}

/// Parses a template object. A missing `template_id` is tolerated (the store
/// assigns ids); the result is validated against the schema invariants.
pub fn template_from_value(value: &Value) -> Result<ThoughtTemplate, PayloadError> {
    let mut value = value.clone();
    if let Some(obj) = value.as_object_mut() {
        obj.entry("template_id")
            .or_insert_with(|| Value::String("TID_0".into()));
    }
    let template: ThoughtTemplate =
        serde_json::from_value(value).map_err(|e| PayloadError::Schema(e.to_string()))?;
    template
        .validate()
        .map_err(|e| PayloadError::Schema(e.to_string()))?;
    Ok(template)
}

pub fn parse_template_payload(raw: &str) -> Result<ThoughtTemplate, PayloadError> {
    template_from_value(&parse_json_payload(raw)?)
}
