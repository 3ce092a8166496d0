//! Flat `key = value` configuration files with `include` support.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// A settings group addressed by un-prefixed keys.
pub trait Settings {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    /// Every key with its current value, in a stable order.
    fn entries(&self) -> Vec<(String, String)>;
}

pub fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

/// Splits `key=value`.
pub fn split_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got '{s}'")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Config(format!("empty key in '{s}'")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Reads assignments from a config file in order, expanding `include <path>`
/// lines relative to the including file. `#` starts a comment.
pub fn read_assignments(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut stack = BTreeSet::new();
    read_into(path, &mut out, &mut stack)?;
    Ok(out)
}

fn read_into(path: &Path, out: &mut Vec<(String, String)>, stack: &mut BTreeSet<PathBuf>) -> Result<()> {
    let canon = path
        .canonicalize()
        .map_err(|e| Error::Config(format!("cannot open config {}: {e}", path.display())))?;
    if !stack.insert(canon.clone()) {
        return Err(Error::Config(format!("include cycle at {}", path.display())));
    }
    let text = std::fs::read_to_string(&canon)?;
    let base = canon.parent().map(Path::to_path_buf).unwrap_or_default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("include ") {
            read_into(&base.join(rest.trim()), out, stack)?;
            continue;
        }
        let kv = split_assignment(line).map_err(|_| {
            Error::Config(format!("{}:{}: expected key = value", path.display(), n + 1))
        })?;
        out.push(kv);
    }
    stack.remove(&canon);
    Ok(())
}
