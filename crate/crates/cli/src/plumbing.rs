//! Config resolution shared by every command: JSON file ⊕ defaults, then
//! flag overrides, then an explicit echo of the fully resolved config into
//! the output directory so any run can be replayed bit-exactly.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::errors::CliError;

/// Parse a JSON config file into a command's resolved-config type, or return
/// defaults when no file was given. Unknown keys are rejected by serde.
pub fn load_cfg<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(p)
        .map_err(|e| CliError::Io(format!("config {}: {e}", p.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
}

/// Fill an empty `out_dir` from the primary output path's parent (or `.`),
/// create it, and return it. The resolved value is stored back so the echoed
/// config replays against the same directory.
pub fn resolve_out_dir(out_dir: &mut String, primary_out: &str) -> Result<PathBuf, CliError> {
    if out_dir.is_empty() {
        let parent = Path::new(primary_out)
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| Path::new("."));
        *out_dir = parent.display().to_string();
    }
    let dir = PathBuf::from(&out_dir);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io(format!("output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Write `<command>.resolved.json` next to the outputs. Every field is
/// present — re-running with only `--config <this file>` reproduces the run.
pub fn echo_cfg<T: Serialize>(command: &str, cfg: &T, out_dir: &Path) -> Result<(), CliError> {
    let path = out_dir.join(format!("{command}.resolved.json"));
    let mut text = serde_json::to_string_pretty(cfg)
        .map_err(|e| CliError::Config(format!("serializing resolved config: {e}")))?;
    text.push('\n');
    std::fs::write(&path, text)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

/// Require a non-empty path-valued config field after merging.
pub fn require(field: &str, value: &str) -> Result<(), CliError> {
    if value.is_empty() {
        return Err(CliError::Config(format!(
            "missing required value for `{field}` (flag or config field)"
        )));
    }
    Ok(())
}

/// Comma-separated floats: "0.25,0.5,1".
pub fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: `{t}` is not a number")))
        })
        .collect()
}

/// Comma-separated layer widths: "400,400,400".
pub fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("{what}: `{t}` is not a non-negative integer")))
        })
        .collect()
}

/// Noise ladders: either `geometric:σmax,σmin,K` or an explicit descending
/// comma list `1.0,0.5,0.2`.
pub fn parse_levels(s: &str) -> Result<Vec<f64>, CliError> {
    if let Some(rest) = s.strip_prefix("geometric:") {
        let parts = parse_f64_list(rest, "--schedule geometric")?;
        if parts.len() != 3 {
            return Err(CliError::Config(
                "--schedule geometric takes exactly σmax,σmin,K".into(),
            ));
        }
        let count = parts[2];
        if count.fract() != 0.0 || count < 2.0 {
            return Err(CliError::Config(format!(
                "--schedule geometric level count must be an integer ≥ 2, got {count}"
            )));
        }
        Ok(mmgibbs::sampler::geometric(parts[0], parts[1], count as usize)?)
    } else {
        parse_f64_list(s, "--schedule")
    }
}

/// A fixed coordinate pair "x1,x2".
pub fn parse_pair(s: &str, what: &str) -> Result<[f64; 2], CliError> {
    let v = parse_f64_list(s, what)?;
    if v.len() != 2 {
        return Err(CliError::Config(format!("{what} needs exactly two numbers, got {}", v.len())));
    }
    Ok([v[0], v[1]])
}
