//! Rendering: 17-significant-digit floats in machine-readable output so
//! every value round-trips exactly, 12 in human-readable text; a run
//! manifest embedded in JSON output and written alongside every data
//! file.

use std::time::{SystemTime, UNIX_EPOCH};

use crate::CliError;

/// Machine-readable float: 17 significant digits, scientific.
pub fn f17(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        // JSON has no infinities; fall back to null
        "null".to_string()
    }
}

/// Human-readable float: 12 significant digits, plain decimal where the
/// magnitude allows it.
pub fn f12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..12).contains(&exp) {
        return format!("{:.11e}", x);
    }
    let decimals = (11 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// Provenance record attached to every emitted data set.
pub struct RunManifest {
    pub subcommand: String,
    pub params: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            params: Vec::new(),
            seed: None,
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn to_json(&self) -> String {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let params = self
            .params
            .iter()
            .map(|(k, v)| format!("\"{}\":\"{}\"", json_escape(k), json_escape(v)))
            .collect::<Vec<_>>()
            .join(",");
        let outputs = self
            .outputs
            .iter()
            .map(|p| format!("\"{}\"", json_escape(p)))
            .collect::<Vec<_>>()
            .join(",");
        let seed = match self.seed {
            Some(s) => s.to_string(),
            None => "null".to_string(),
        };
        format!(
            "{{\"subcommand\":\"{}\",\"version\":\"{}\",\"timestamp_unix\":{ts},\"seed\":{seed},\"params\":{{{params}}},\"outputs\":[{outputs}]}}",
            json_escape(&self.subcommand),
            env!("CARGO_PKG_VERSION"),
        )
    }
}

/// A run result: the manifest plus a pre-rendered JSON data object.
pub fn run_json(manifest: &RunManifest, data_json: &str) -> String {
    format!(
        "{{\"manifest\":{},\"data\":{}}}\n",
        manifest.to_json(),
        data_json
    )
}

/// Write a data file and its manifest sibling (`<path>.manifest.json`).
pub fn write_with_manifest(
    path: &str,
    contents: &str,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    manifest.outputs.push(path.to_string());
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    let mpath = format!("{path}.manifest.json");
    std::fs::write(&mpath, manifest.to_json() + "\n")
        .map_err(|e| CliError::Io(format!("{mpath}: {e}")))?;
    Ok(())
}

/// Emit to stdout, or to `--out FILE` accompanied by its manifest.
pub fn emit(out: Option<&str>, text: &str, manifest: &mut RunManifest) -> Result<(), CliError> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => write_with_manifest(path, text, manifest),
    }
}
