//! `key=value` config files merged into the argument list.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use clap::{Command, CommandFactory};

use crate::Cli;

/// Parsed `key=value` lines. Blank lines and `#` comments are skipped.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("{}:{}: expected key=value, got '{line}'", path.display(), i + 1));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn long_names(cmd: &Command, out: &mut BTreeSet<String>) {
    for a in cmd.get_arguments() {
        if let Some(l) = a.get_long() {
            out.insert(l.to_string());
        }
    }
}

/// Finds `--config FILE` or `--config=FILE` in the raw arguments.
fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn given_on_command_line(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let eq = format!("--{key}=");
    args.iter().any(|a| *a == flag || a.starts_with(&eq))
}

/// Appends settings from the config file as flags. Flags already on the
/// command line win; keys no subcommand knows are rejected; keys known only
/// to other subcommands are ignored.
pub fn merge_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let entries = read_config(Path::new(&path))?;
    let root = Cli::command();
    let mut everywhere = BTreeSet::new();
    long_names(&root, &mut everywhere);
    for sub in root.get_subcommands() {
        long_names(sub, &mut everywhere);
    }
    let sub = args
        .iter()
        .skip(1)
        .find_map(|a| root.get_subcommands().find(|s| s.get_name() == a.as_str()));
    let mut merged = args.clone();
    for (key, value) in entries {
        if key == "config" {
            return Err(format!("{path}: config files cannot include other config files"));
        }
        if !everywhere.contains(&key) {
            return Err(format!("{path}: unknown config key '{key}'"));
        }
        let arg = root
            .get_arguments()
            .chain(sub.into_iter().flat_map(|s| s.get_arguments()))
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            log::debug!("config key '{key}' does not apply to this subcommand");
            continue;
        };
        if given_on_command_line(&args, &key) {
            continue;
        }
        if arg.get_action().takes_values() {
            merged.push(format!("--{key}={value}"));
        } else {
            match value.as_str() {
                "true" => merged.push(format!("--{key}")),
                "false" => {}
                _ => return Err(format!("{path}: key '{key}' takes true or false, got '{value}'")),
            }
        }
    }
    Ok(merged)
}
