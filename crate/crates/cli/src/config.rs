//! Config file parsing.
//!
//! The config is a small YAML subset: mappings, sequences and plain scalar
//! strings, selected by indentation. Anchors, aliases, flow collections and
//! tabs are rejected outright; this keeps the accepted grammar unambiguous.

use std::fmt;

use xtable_core::model::TableFormat;
use xtable_core::storage::parse_uri;
use xtable_core::sync::{DatasetConfig, SyncConfig};

#[derive(Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
struct Line {
    number: usize,
    indent: usize,
    content: String,
}

#[derive(Debug, Clone)]
enum Node {
    Scalar {
        value: String,
        line: usize,
    },
    Sequence {
        items: Vec<Node>,
        line: usize,
    },
    Mapping {
        entries: Vec<(String, Node)>,
        line: usize,
    },
    Empty {
        line: usize,
    },
}

impl Node {
    fn line(&self) -> usize {
        match self {
            Node::Scalar { line, .. }
            | Node::Sequence { line, .. }
            | Node::Mapping { line, .. }
            | Node::Empty { line } => *line,
        }
    }
}

fn lex(text: &str) -> Result<Vec<Line>, ConfigError> {
    let mut lines = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let number = index + 1;
        if raw.contains('\t') {
            return Err(ConfigError::at(number, "tabs are not allowed"));
        }
        let trimmed_end = raw.trim_end();
        let indent = trimmed_end.len() - trimmed_end.trim_start().len();
        let content = trimmed_end.trim_start().to_string();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        lines.push(Line {
            number,
            indent,
            content,
        });
    }
    Ok(lines)
}

fn check_scalar(value: &str, line: usize) -> Result<String, ConfigError> {
    if value.starts_with('&') || value.starts_with('*') {
        return Err(ConfigError::at(
            line,
            "anchors and aliases are not supported",
        ));
    }
    if value.starts_with('{') || value.starts_with('[') {
        return Err(ConfigError::at(line, "flow collections are not supported"));
    }
    let unquoted = value
        .strip_prefix('"')
        .and_then(|v| v.strip_suffix('"'))
        .or_else(|| value.strip_prefix('\'').and_then(|v| v.strip_suffix('\'')))
        .unwrap_or(value);
    Ok(unquoted.to_string())
}

/// Splits `key: value` / `key:`; keys are plain scalars.
fn split_key(content: &str, line: usize) -> Result<(String, Option<String>), ConfigError> {
    let colon = content
        .find(':')
        .ok_or_else(|| ConfigError::at(line, "expected `key: value`"))?;
    let key = content[..colon].trim();
    if key.is_empty() {
        return Err(ConfigError::at(line, "empty key"));
    }
    let rest = content[colon + 1..].trim();
    if rest.is_empty() {
        Ok((key.to_string(), None))
    } else {
        Ok((key.to_string(), Some(rest.to_string())))
    }
}

/// Parses the lines of one block (all at the same indentation).
fn parse_block(lines: &[Line]) -> Result<Node, ConfigError> {
    let Some(first) = lines.first() else {
        return Ok(Node::Empty { line: 0 });
    };
    let indent = first.indent;
    if first.content == "-" || first.content.starts_with("- ") {
        parse_sequence(lines, indent)
    } else {
        parse_mapping(lines, indent)
    }
}

fn parse_sequence(lines: &[Line], indent: usize) -> Result<Node, ConfigError> {
    let mut items = Vec::new();
    let mut index = 0;
    while index < lines.len() {
        let line = &lines[index];
        if line.indent != indent || !(line.content == "-" || line.content.starts_with("- ")) {
            return Err(ConfigError::at(line.number, "expected a `-` sequence item"));
        }
        let inline = line.content.strip_prefix('-').unwrap().trim().to_string();
        let start = index + 1;
        let mut end = start;
        while end < lines.len() && lines[end].indent > indent {
            end += 1;
        }
        let nested = &lines[start..end];
        let item = if inline.is_empty() {
            if nested.is_empty() {
                Node::Empty { line: line.number }
            } else {
                parse_block(nested)?
            }
        } else if inline.contains(':') && split_key(&inline, line.number).is_ok() {
            // Compact form: the dash line starts the item's mapping.
            let mut synthetic = vec![Line {
                number: line.number,
                indent: indent + 2,
                content: inline,
            }];
            synthetic.extend(nested.iter().cloned().map(|mut l| {
                l.indent = l.indent.max(indent + 2);
                l
            }));
            parse_block(&synthetic)?
        } else {
            if !nested.is_empty() {
                return Err(ConfigError::at(
                    line.number,
                    "scalar item cannot nest a block",
                ));
            }
            Node::Scalar {
                value: check_scalar(&inline, line.number)?,
                line: line.number,
            }
        };
        items.push(item);
        index = end;
    }
    Ok(Node::Sequence {
        items,
        line: lines[0].number,
    })
}

fn parse_mapping(lines: &[Line], indent: usize) -> Result<Node, ConfigError> {
    let mut entries: Vec<(String, Node)> = Vec::new();
    let mut index = 0;
    while index < lines.len() {
        let line = &lines[index];
        if line.indent != indent {
            return Err(ConfigError::at(line.number, "inconsistent indentation"));
        }
        let (key, inline) = split_key(&line.content, line.number)?;
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::at(
                line.number,
                format!("duplicate key `{key}`"),
            ));
        }
        let start = index + 1;
        let mut end = start;
        while end < lines.len() && lines[end].indent > indent {
            end += 1;
        }
        let nested = &lines[start..end];
        let value = match inline {
            Some(value) => {
                if !nested.is_empty() {
                    return Err(ConfigError::at(
                        line.number,
                        format!("key `{key}` has both a value and a nested block"),
                    ));
                }
                Node::Scalar {
                    value: check_scalar(&value, line.number)?,
                    line: line.number,
                }
            }
            None if nested.is_empty() => Node::Empty { line: line.number },
            None => parse_block(nested)?,
        };
        entries.push((key, value));
        index = end;
    }
    Ok(Node::Mapping {
        entries,
        line: lines[0].number,
    })
}

fn expect_scalar(node: &Node, what: &str) -> Result<String, ConfigError> {
    match node {
        Node::Scalar { value, .. } => Ok(value.clone()),
        other => Err(ConfigError::at(
            other.line(),
            format!("{what} must be a scalar"),
        )),
    }
}

fn parse_format(raw: &str, line: usize) -> Result<TableFormat, ConfigError> {
    raw.parse::<TableFormat>()
        .map_err(|e| ConfigError::at(line, e))
}

/// Parses and validates a sync config document.
pub fn parse_config(text: &str) -> Result<SyncConfig, ConfigError> {
    let lines = lex(text)?;
    if lines.is_empty() {
        return Err(ConfigError::general("empty config"));
    }
    let root = parse_block(&lines)?;
    let Node::Mapping { entries, .. } = &root else {
        return Err(ConfigError::at(root.line(), "top level must be a mapping"));
    };

    let mut source_format: Option<TableFormat> = None;
    let mut target_formats: Option<Vec<TableFormat>> = None;
    let mut datasets: Option<Vec<DatasetConfig>> = None;

    for (key, value) in entries {
        match key.as_str() {
            "sourceFormat" => {
                let raw = expect_scalar(value, "sourceFormat")?;
                source_format = Some(parse_format(&raw, value.line())?);
            }
            "targetFormats" => {
                let Node::Sequence { items, .. } = value else {
                    return Err(ConfigError::at(
                        value.line(),
                        "targetFormats must be a list",
                    ));
                };
                let mut formats = Vec::new();
                for item in items {
                    let raw = expect_scalar(item, "target format")?;
                    formats.push(parse_format(&raw, item.line())?);
                }
                target_formats = Some(formats);
            }
            "datasets" => {
                let items: &[Node] = match value {
                    Node::Sequence { items, .. } => items,
                    Node::Empty { .. } => &[],
                    other => return Err(ConfigError::at(other.line(), "datasets must be a list")),
                };
                let mut parsed = Vec::new();
                for item in items {
                    let Node::Mapping { entries, line } = item else {
                        return Err(ConfigError::at(
                            item.line(),
                            "each dataset must be a mapping",
                        ));
                    };
                    let mut table_base_path = None;
                    let mut table_name = None;
                    for (dataset_key, dataset_value) in entries {
                        match dataset_key.as_str() {
                            "tableBasePath" => {
                                let raw = expect_scalar(dataset_value, "tableBasePath")?;
                                let path = parse_uri(&raw).map_err(|e| {
                                    ConfigError::at(dataset_value.line(), e.to_string())
                                })?;
                                table_base_path = Some(path);
                            }
                            "tableName" => {
                                table_name = Some(expect_scalar(dataset_value, "tableName")?);
                            }
                            other => {
                                return Err(ConfigError::at(
                                    dataset_value.line(),
                                    format!("unknown dataset key `{other}`"),
                                ))
                            }
                        }
                    }
                    let table_base_path = table_base_path.ok_or_else(|| {
                        ConfigError::at(*line, "dataset is missing `tableBasePath`")
                    })?;
                    parsed.push(DatasetConfig {
                        table_base_path,
                        table_name,
                    });
                }
                datasets = Some(parsed);
            }
            other => {
                return Err(ConfigError::at(
                    value.line(),
                    format!("unknown key `{other}`"),
                ))
            }
        }
    }

    let config = SyncConfig {
        source_format: source_format
            .ok_or_else(|| ConfigError::general("missing `sourceFormat`"))?,
        target_formats: target_formats
            .ok_or_else(|| ConfigError::general("missing `targetFormats`"))?,
        datasets: datasets.ok_or_else(|| ConfigError::general("missing `datasets`"))?,
    };
    config
        .validate()
        .map_err(|e| ConfigError::general(e.to_string()))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "sourceFormat: HUDI\n\
                          targetFormats:\n\
                          \x20 - DELTA\n\
                          \x20 - ICEBERG\n\
                          datasets:\n\
                          \x20 -\n\
                          \x20   tableBasePath: abfs://container@ac.dfs.core.windows.net/sales\n";

    #[test]
    fn parses_the_reference_shape() {
        let config = parse_config(SAMPLE).unwrap();
        assert_eq!(config.source_format, TableFormat::Hudi);
        assert_eq!(
            config.target_formats,
            vec![TableFormat::Delta, TableFormat::Iceberg]
        );
        assert_eq!(config.datasets.len(), 1);
        let path = &config.datasets[0].table_base_path;
        assert_eq!(path.scheme(), "abfs");
        assert_eq!(path.authority(), "container@ac.dfs.core.windows.net");
        assert_eq!(path.path(), "/sales");
        assert!(config.datasets[0].table_name.is_none());
    }

    #[test]
    fn formats_are_case_insensitive() {
        let config = parse_config(
            "sourceFormat: hudi\ntargetFormats:\n  - delta\ndatasets:\n  - tableBasePath: /tmp/t\n",
        )
        .unwrap();
        assert_eq!(config.source_format, TableFormat::Hudi);
    }

    #[test]
    fn source_in_targets_is_invalid() {
        let err = parse_config(
            "sourceFormat: HUDI\ntargetFormats:\n  - HUDI\ndatasets:\n  - tableBasePath: /tmp/t\n",
        )
        .unwrap_err();
        assert!(err.message.contains("targetFormats"), "{err}");
    }

    #[test]
    fn empty_targets_are_invalid() {
        let err = parse_config("sourceFormat: HUDI\ntargetFormats:\ndatasets:\n").unwrap_err();
        assert!(
            err.message.contains("targetFormats must be a list") || err.message.contains("empty")
        );
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let err =
            parse_config("sourceFormat: HUDI\nbogusKey: 1\ntargetFormats:\n  - DELTA\ndatasets:\n")
                .unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("bogusKey"));
    }

    #[test]
    fn anchors_and_tabs_are_rejected() {
        assert!(parse_config("sourceFormat: &a HUDI\n").is_err());
        assert!(parse_config("sourceFormat:\tHUDI\n").is_err());
        assert!(parse_config("sourceFormat: *ref\n").is_err());
    }

    #[test]
    fn compact_dataset_form_parses() {
        let config = parse_config(
            "sourceFormat: DELTA\n\
             targetFormats:\n\
             \x20 - HUDI\n\
             datasets:\n\
             \x20 - tableBasePath: /data/a\n\
             \x20   tableName: first\n\
             \x20 - tableBasePath: /data/b\n",
        )
        .unwrap();
        assert_eq!(config.datasets.len(), 2);
        assert_eq!(config.datasets[0].table_name.as_deref(), Some("first"));
        assert_eq!(config.datasets[1].table_base_path.path(), "/data/b");
    }

    #[test]
    fn dataset_order_is_preserved() {
        let mut text =
            String::from("sourceFormat: DELTA\ntargetFormats:\n  - ICEBERG\ndatasets:\n");
        for i in 0..3 {
            text.push_str(&format!("  -\n    tableBasePath: /data/t{i}\n"));
        }
        let config = parse_config(&text).unwrap();
        let paths: Vec<&str> = config
            .datasets
            .iter()
            .map(|d| d.table_base_path.path())
            .collect();
        assert_eq!(paths, vec!["/data/t0", "/data/t1", "/data/t2"]);
    }

    #[test]
    fn missing_table_base_path_is_diagnosed() {
        let err = parse_config(
            "sourceFormat: DELTA\ntargetFormats:\n  - ICEBERG\ndatasets:\n  - tableName: x\n",
        )
        .unwrap_err();
        assert!(err.message.contains("tableBasePath"));
    }
}
