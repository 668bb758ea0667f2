//! Task serialization: one JSON object per line, UTF-8, LF line endings.
//! Line 1 is the header; every following line is one example.
//!
//! Example lines come in two shapes: plain `{input, target}` records, and
//! multiple-choice records `{question, context?, candidates, target}` which
//! are rendered into the unified text-to-text template at load time.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tasks::types::{Example, Task, TaskHeader};

/// The unified input template for multiple-choice records: the answer is
/// generated as a span out of the candidate list.
pub fn render_multi_choice(question: &str, context: &str, candidates: &[String]) -> String {
    format!("Question: {question} Context: {context} Candidates: {}", candidates.join(" "))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExampleRecord {
    Plain(Example),
    MultiChoice {
        question: String,
        #[serde(default)]
        context: String,
        candidates: Vec<String>,
        target: String,
    },
}

impl ExampleRecord {
    fn into_example(self, line: usize) -> Result<Example> {
        match self {
            ExampleRecord::Plain(ex) => Ok(ex),
            ExampleRecord::MultiChoice { question, context, candidates, target } => {
                if candidates.is_empty() {
                    return Err(Error::Parse {
                        line,
                        detail: "multiple-choice record has no candidates".into(),
                    });
                }
                if !candidates.contains(&target) {
                    return Err(Error::Parse {
                        line,
                        detail: format!("target {target:?} is not among the candidates"),
                    });
                }
                Ok(Example { input: render_multi_choice(&question, &context, &candidates), target })
            }
        }
    }
}

pub fn write_task(path: &Path, task: &Task) -> Result<()> {
    task.validate()?;
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&task.header)?);
    out.push('\n');
    for ex in &task.examples {
        out.push_str(&serde_json::to_string(ex)?);
        out.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, out.as_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_task(path: &Path) -> Result<Task> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })?;
    parse_task(&text)
}

pub fn parse_task(text: &str) -> Result<Task> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or(Error::Parse { line: 1, detail: "empty task file; expected a header line".into() })?;
    let header: TaskHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::Parse { line: 1, detail: format!("bad header: {e}") })?;
    let mut examples = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            return Err(Error::Parse { line: i + 1, detail: "blank line inside task file".into() });
        }
        let record: ExampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: i + 1, detail: format!("bad example: {e}") })?;
        examples.push(record.into_example(i + 1)?);
    }
    let task = Task { header, examples };
    task.validate()?;
    Ok(task)
}

/// Read only the header (line 1) of a task file.
pub fn read_header(path: &Path) -> Result<TaskHeader> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })?;
    let first = text
        .lines()
        .next()
        .ok_or(Error::Parse { line: 1, detail: "empty task file; expected a header line".into() })?;
    let header: TaskHeader = serde_json::from_str(first)
        .map_err(|e| Error::Parse { line: 1, detail: format!("bad header: {e}") })?;
    header.validate()?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::types::Metric;

    fn sample() -> Task {
        Task {
            header: TaskHeader {
                name: "demo".into(),
                category: "cls".into(),
                ontology: "cls/topic".into(),
                metric: Metric::ExactMatch,
                k: Some(2),
            },
            examples: vec![
                Example { input: "aa".into(), target: "bb".into() },
                Example { input: "cc".into(), target: "dd".into() },
            ],
        }
    }

    #[test]
    fn round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.jsonl");
        write_task(&path, &sample()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 3);
        let back = read_task(&path).unwrap();
        assert_eq!(back, sample());
        assert_eq!(read_header(&path).unwrap(), sample().header);
    }

    #[test]
    fn multi_choice_records_render_to_the_unified_template() {
        let header = "{\"name\":\"mcqa\",\"category\":\"qa\",\"ontology\":\"qa/multiple-choice qa\",\"metric\":\"exact_match\"}";
        let record = "{\"question\":\"Which animal barks?\",\"context\":\"A dog barks at night.\",\
                      \"candidates\":[\"dog\",\"cat\",\"fish\"],\"target\":\"dog\"}";
        let task = parse_task(&format!("{header}\n{record}\n")).unwrap();
        assert_eq!(
            task.examples[0].input,
            "Question: Which animal barks? Context: A dog barks at night. Candidates: dog cat fish"
        );
        assert_eq!(task.examples[0].target, "dog");

        // A target outside the candidate list is a data error, not a silent
        // unanswerable example.
        let bad = "{\"question\":\"q\",\"candidates\":[\"a\",\"b\"],\"target\":\"c\"}";
        match parse_task(&format!("{header}\n{bad}\n")) {
            Err(Error::Parse { line, detail }) => {
                assert_eq!(line, 2);
                assert!(detail.contains("candidates"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = "{\"name\":\"t\",\"category\":\"cls\",\"ontology\":\"cls/topic\",\"metric\":\"exact_match\"}";
        let text = format!("{good}\n{{\"input\":\"a\",\"target\":\"b\"}}\nnot json\n");
        match parse_task(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_task("") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            read_task(Path::new("/nonexistent/task.jsonl")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
