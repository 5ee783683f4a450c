//! Flat `key=value` config files. Keys are long flag names without the
//! leading dashes; `#` starts a comment line.

use std::collections::BTreeSet;

use super::CliError;

/// Parsed `(key, value)` pairs in file order.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key=value", i + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(CliError::Config(format!("config line {}: empty key", i + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Turns config entries into `--key=value` arguments, rejecting keys that
/// are not flags of the command.
pub fn config_args(entries: &[(String, String)], known: &BTreeSet<String>) -> Result<Vec<String>, CliError> {
    entries
        .iter()
        .map(|(k, v)| {
            if k == "config" || !known.contains(k) {
                Err(CliError::Config(format!("unknown config key '{k}'")))
            } else {
                Ok(format!("--{k}={v}"))
            }
        })
        .collect()
}
