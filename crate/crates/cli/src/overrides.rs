//! Dotted-path edits on a TOML document.

use toml::{Table, Value};

use crate::CliError;

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string (`mode=edge_only`).
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("malformed key `{path}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::Validation(format!("`{p}` in `{path}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Applies one `key=value` flag.
pub fn apply(table: &mut Table, flag: &str) -> Result<(), CliError> {
    let (key, raw) = flag
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{flag}` is not key=value")))?;
    set_path(table, key.trim(), parse_value(raw.trim()))
}
