//! Flat `key = value` config files merged into the argument list.

use std::collections::HashSet;
use std::path::Path;

use crate::Failure;

const SUBCOMMANDS: [&str; 4] = ["stats", "sweep", "simulate", "verify"];
const SWITCHES: [&str; 3] = ["json", "circulant", "verbose"];

fn flag_name(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('_', "-")
}

/// Parses `key = value` lines. `#` starts a comment; repeated keys are kept in order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, Failure> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("config line {}: expected key = value, got '{raw}'", n + 1)))?;
        let key = flag_name(key);
        if key.is_empty() {
            return Err(Failure::Usage(format!("config line {}: empty key", n + 1)));
        }
        entries.push((key, value.trim().to_string()));
    }
    Ok(entries)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Inserts the config entries after the subcommand, skipping every key that
/// also appears as a flag on the command line.
pub fn merge(args: Vec<String>) -> Result<Vec<String>, Failure> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Failure::Usage(format!("cannot read config {path}: {e}")))?;
    let entries = parse(&text)?;
    let given: HashSet<String> = args
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| flag_name(a.split('=').next().unwrap_or(a)))
        .collect();
    let Some(at) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut injected = Vec::new();
    for (key, value) in entries {
        if given.contains(&key) || key == "config" {
            continue;
        }
        if SWITCHES.contains(&key.as_str()) {
            match value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => injected.push(format!("--{key}")),
                "false" | "no" | "0" => {}
                other => return Err(Failure::Usage(format!("config key {key}: expected true or false, got '{other}'"))),
            }
        } else {
            injected.push(format!("--{key}={value}"));
        }
    }
    let mut merged = args[..=at].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[at + 1..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn comments_blank_lines_and_underscores() {
        let e = parse("# header\n\nkernel = sdho\ntau_f=2 # trailing\naxis = u:0:1:2\naxis = zeta:1:2:2\n").unwrap();
        assert_eq!(
            e,
            vec![
                ("kernel".into(), "sdho".into()),
                ("tau-f".into(), "2".into()),
                ("axis".into(), "u:0:1:2".into()),
                ("axis".into(), "zeta:1:2:2".into()),
            ]
        );
        assert!(parse("no equals sign").is_err());
    }

    #[test]
    fn command_line_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "kernel = se\nu = 2\njson = true\nverbose = false\n").unwrap();
        let args = argv(&format!("levelcross stats --u 1 --config {}", path.display()));
        let merged = merge(args).unwrap();
        assert_eq!(
            merged,
            argv(&format!("levelcross stats --kernel=se --json --u 1 --config {}", path.display()))
        );
    }
}
