//! Configuration loading: a TOML file plus `--set path=value` overrides,
//! deserialized strictly so typos surface as schema errors with a field
//! path.

use std::fs;
use std::path::Path;

use subtune_core::pipeline::PipelineConfig;
use subtune_core::{Error, Result};

/// Load the pipeline config. Missing file path means "all defaults";
/// overrides apply on top of the parsed TOML tree before deserialization,
/// so they are checked against the schema exactly like file contents.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut root = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::MissingArtifact(format!("config file {}", p.display()))
                } else {
                    Error::Io(e)
                }
            })?;
            text.parse::<toml::Value>().map_err(|e| schema(&e.to_string()))?
        }
        None => toml::Value::Table(toml::map::Map::new()),
    };
    for item in overrides {
        apply_override(&mut root, item)?;
    }
    let cfg: PipelineConfig =
        root.try_into().map_err(|e: toml::de::Error| schema(&e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn schema(detail: &str) -> Error {
    // toml's message already names the offending key; keep it as the path
    // hint when it has one.
    Error::Config { path: extract_path(detail), detail: detail.to_string() }
}

/// Pull a field name out of a toml error message like
/// `unknown field `foo`, expected ...` so the error's path is populated
/// even when the deserializer only reports prose.
fn extract_path(detail: &str) -> String {
    if let Some(start) = detail.find('`') {
        if let Some(len) = detail[start + 1..].find('`') {
            return detail[start + 1..start + 1 + len].to_string();
        }
    }
    "config".into()
}

/// Apply one `dotted.path=value` override. The value is parsed as a TOML
/// literal (so `3`, `2.5`, `true`, `"text"`, and `[4, 8]` all work); bare
/// words fall back to strings.
fn apply_override(root: &mut toml::Value, item: &str) -> Result<()> {
    let (path, raw) = item.split_once('=').ok_or_else(|| Error::Config {
        path: item.to_string(),
        detail: "override must look like path.to.field=value".into(),
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Config {
            path: item.to_string(),
            detail: "override path is empty".into(),
        });
    }
    let value = parse_literal(raw.trim());

    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| Error::Config {
            path: path.to_string(),
            detail: format!("{seg} is not a table"),
        })?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let last = segments[segments.len() - 1];
    let table = node.as_table_mut().ok_or_else(|| Error::Config {
        path: path.to_string(),
        detail: "parent is not a table".into(),
    })?;
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    // Wrap in a dummy key so the TOML parser handles any literal form.
    match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").expect("key v was just written"),
        _ => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields_with_native_types() {
        let cfg = load(
            None,
            &[
                "seed=9".into(),
                "pt.train.max_steps=100".into(),
                "pt.train.eval_every=50".into(),
                "pt.grid.lrs=[0.001]".into(),
                "alphabet=\"abc\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.pt.train.max_steps, 100);
        assert_eq!(cfg.pt.grid.lrs, vec![1e-3]);
        assert_eq!(cfg.alphabet, "abc");
    }

    #[test]
    fn unknown_fields_are_schema_errors_naming_the_field() {
        let err = load(None, &["pt.train.max_stepz=100".into()]).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "max_stepz"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn semantic_violations_fail_validation_after_parsing() {
        let err = load(None, &["pt.train.eval_every=3".into()]).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "got {err:?}");
    }
}
