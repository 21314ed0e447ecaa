//! `--config FILE`: a JSON object whose keys are flag names (`_` or `-`)
//! and whose values fill in flags missing from the command line.

use anyhow::{bail, Context};
use serde_json::Value;

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = arg.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn has_flag(argv: &[String], flag: &str) -> bool {
    argv.iter().any(|a| a == flag || a.strip_prefix(flag).is_some_and(|rest| rest.starts_with('=')))
}

fn scalar(key: &str, v: &Value) -> anyhow::Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => bail!("config key '{key}': expected a string, number, boolean or array of those"),
    }
}

/// Appends `--key=value` for every config entry whose flag is absent.
pub fn apply_config(mut argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
    let Value::Object(map) = value else {
        bail!("config {path} must hold a JSON object");
    };
    let mut extra = Vec::new();
    for (key, v) in &map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || has_flag(&argv, &flag) {
            continue;
        }
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => extra.push(flag),
            Value::Array(items) => {
                for item in items {
                    extra.push(format!("{flag}={}", scalar(key, item)?));
                }
            }
            other => extra.push(format!("{flag}={}", scalar(key, other)?)),
        }
    }
    argv.extend(extra);
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 3, "budget": 1.5, "dry_run": true, "data": ["x.csv", "y.csv"], "ridge": null}"#).unwrap();
        let out = apply_config(argv(&format!("pleas eval --config {} --seed=7", path.display()))).unwrap();
        assert!(out.contains(&"--seed=7".to_string()));
        assert!(!out.contains(&"--seed=3".to_string()));
        assert!(out.contains(&"--budget=1.5".to_string()));
        assert!(out.contains(&"--dry-run".to_string()));
        assert!(out.contains(&"--data=x.csv".to_string()) && out.contains(&"--data=y.csv".to_string()));
        assert!(!out.iter().any(|a| a.starts_with("--ridge")));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "[1]").unwrap();
        assert!(apply_config(argv(&format!("pleas --config={}", path.display()))).is_err());
        std::fs::write(&path, r#"{"a": {"b": 1}}"#).unwrap();
        assert!(apply_config(argv(&format!("pleas --config={}", path.display()))).is_err());
        assert!(apply_config(argv("pleas --config /nonexistent/c.json")).is_err());
        assert_eq!(apply_config(argv("pleas eval")).unwrap(), argv("pleas eval"));
    }
}
