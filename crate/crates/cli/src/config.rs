//! Flat `key=value` config files. Keys are flag names without the leading
//! dashes; `#` starts a comment. Values from the file are appended to the
//! argument list only for flags absent from the command line.

use std::path::Path;

pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let key = k.trim().trim_start_matches("--").to_string();
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Value of `--config` in raw arguments, if any.
pub fn config_path(args: &[String]) -> Option<String> {
    args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    })
}

fn present(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let eq = format!("--{key}=");
    args.iter().any(|a| *a == flag || a.starts_with(&eq))
}

/// Appends file entries whose flag is not already given.
pub fn merge(mut args: Vec<String>, entries: &[(String, String)]) -> Vec<String> {
    let given = args.clone();
    for (k, v) in entries {
        if k == "config" || present(&given, k) {
            continue;
        }
        args.push(format!("--{k}"));
        args.push(v.clone());
    }
    args
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parse_and_merge() {
        let e = parse("# c\nseed = 5\nmax-iters=3 # trailing\n\n").unwrap();
        assert_eq!(e, vec![("seed".into(), "5".into()), ("max-iters".into(), "3".into())]);
        let merged = merge(s(&["gsc", "bench", "--seed", "9"]), &e);
        assert_eq!(merged, s(&["gsc", "bench", "--seed", "9", "--max-iters", "3"]));
        assert!(parse("novalue").is_err());
    }

    #[test]
    fn finds_config_flag() {
        assert_eq!(config_path(&s(&["gsc", "--config", "a.cfg"])), Some("a.cfg".into()));
        assert_eq!(config_path(&s(&["gsc", "--config=b"])), Some("b".into()));
        assert_eq!(config_path(&s(&["gsc"])), None);
    }
}
