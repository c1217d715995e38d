//! TOML defaults for command-line flags.
//!
//! Top-level keys fill global flags; a table named after the subcommand
//! fills that subcommand's flags. Keys use flag names (`chunk-elems` or
//! `chunk_elems`). A flag given on the command line always wins.

use std::ffi::OsString;
use std::path::Path;

use toml::Value;

/// Position of the subcommand token in `args`, if any.
fn subcommand_at(args: &[OsString], names: &[&str]) -> Option<usize> {
    let mut skip_next = false;
    for (i, a) in args.iter().enumerate().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        let s = a.to_string_lossy();
        if s == "--config" || s == "--threads" || s == "--out" || s == "--format" {
            skip_next = true;
            continue;
        }
        if names.contains(&s.as_ref()) {
            return Some(i);
        }
    }
    None
}

/// Value of `--config` in `args`, in either `--config p` or `--config=p` form.
pub fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn given(args: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&eq)
    })
}

fn flag_args(key: &str, value: &Value) -> Result<Vec<String>, String> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| -> Result<String, String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Integer(i) => Ok(i.to_string()),
            Value::Float(f) => Ok(f.to_string()),
            other => Err(format!("config key {key}: unsupported value {other}")),
        }
    };
    Ok(match value {
        Value::Boolean(true) => vec![flag],
        Value::Boolean(false) => vec![],
        Value::Array(items) => items
            .iter()
            .map(|v| Ok([flag.clone(), scalar(v)?]))
            .collect::<Result<Vec<_>, String>>()?
            .concat(),
        v => vec![flag, scalar(v)?],
    })
}

/// Read the config file named by `--config` (if any) and return `args`
/// with the missing flags spliced in.
pub fn merge(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("config {}: {e}", Path::new(&path).display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| format!("config {}: {e}", Path::new(&path).display()))?;
    let Some(at) = subcommand_at(&args, subcommands) else {
        return Ok(args);
    };
    let sub = args[at].to_string_lossy().into_owned();

    let mut globals = Vec::new();
    let mut locals = Vec::new();
    for (key, value) in &table {
        if let Value::Table(t) = value {
            if *key == sub {
                for (k, v) in t {
                    if !given(&args, &format!("--{}", k.replace('_', "-"))) {
                        locals.extend(flag_args(k, v)?);
                    }
                }
            }
            continue;
        }
        if !given(&args, &format!("--{}", key.replace('_', "-"))) {
            globals.extend(flag_args(key, value)?);
        }
    }
    let mut out: Vec<OsString> = args[..=at].to_vec();
    out.extend(globals.into_iter().chain(locals).map(OsString::from));
    out.extend(args[at + 1..].iter().cloned());
    Ok(out)
}
