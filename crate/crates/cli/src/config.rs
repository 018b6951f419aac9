//! `key = value` config files, expanded into command-line flags.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};

const SUBCOMMANDS: [&str; 5] = ["plan", "bench", "gradcheck", "calibrate", "train"];

/// Flags for every entry of the file. `true`/`false` toggle boolean flags.
pub fn parse_config(text: &str) -> anyhow::Result<Vec<String>> {
    let mut flags = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got `{raw}`", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key `{}`", n + 1, key);
        }
        match value {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            v => {
                flags.push(format!("--{key}"));
                flags.push(v.to_string());
            }
        }
    }
    Ok(flags)
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

/// Splices the config file's flags in right after the subcommand name so
/// later, explicit flags override them.
pub fn expand_args<I: IntoIterator<Item = OsString>>(raw: I) -> anyhow::Result<Vec<String>> {
    let args: Vec<String> = raw.into_iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let flags = parse_config(&text).with_context(|| format!("in config {path}"))?;
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
