use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Tool version, seed and the non-path flag values of one invocation.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: u64,
    pub flags: Vec<(&'static str, String)>,
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Provenance { command, seed, flags: Vec::new(), notes: Vec::new() }
    }

    pub fn flag(mut self, name: &'static str, value: impl ToString) -> Self {
        self.flags.push((name, value.to_string()));
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn comment_lines(&self) -> Vec<String> {
        let mut out =
            vec![format!("e2ek {}", e2ek::VERSION), format!("command={}", self.command), format!("seed={}", self.seed)];
        if !self.flags.is_empty() {
            let flags: Vec<String> = self.flags.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push(format!("flags: {}", flags.join(" ")));
        }
        out.extend(self.notes.iter().cloned());
        out
    }

    pub fn to_json(&self) -> Value {
        let flags: serde_json::Map<String, Value> =
            self.flags.iter().map(|(k, v)| (k.to_string(), Value::String(v.clone()))).collect();
        json!({
            "tool": format!("e2ek {}", e2ek::VERSION),
            "command": self.command,
            "seed": self.seed,
            "flags": flags,
            "notes": self.notes,
        })
    }
}

pub fn resolve(out_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() || path == Path::new("-") {
        path.to_path_buf()
    } else {
        out_dir.join(path)
    }
}

/// A buffered writer on `path`, or stdout when `path` is `None` or `-`.
pub fn create_output(out_dir: &Path, path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) if p == Path::new("-") => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => {
            let full = resolve(out_dir, p);
            if let Some(parent) = full.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::runtime(format!("{}: {e}", parent.display())))?;
            }
            let f = File::create(&full).map_err(|e| CliError::runtime(format!("{}: {e}", full.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

/// Reads a whole input file (`-` for stdin).
pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    if path == Path::new("-") {
        io::stdin().read_to_end(&mut buf).map_err(|e| CliError::runtime(format!("stdin: {e}")))?;
    } else {
        buf = std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    }
    Ok(buf)
}

/// Parses a JSON document into `T`. On failure, names the first top-level
/// field that does not deserialize on its own.
pub fn parse_json<T: DeserializeOwned>(what: &str, bytes: &[u8]) -> Result<T, CliError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| CliError::usage(format!("{what}: invalid JSON: {e}")))?;
    parse_value(what, value)
}

pub fn parse_value<T: DeserializeOwned>(what: &str, value: Value) -> Result<T, CliError> {
    match serde_json::from_value::<T>(value.clone()) {
        Ok(v) => Ok(v),
        Err(whole) => {
            if let Value::Object(map) = &value {
                for (k, v) in map {
                    let mut single = serde_json::Map::new();
                    single.insert(k.clone(), v.clone());
                    if let Err(e) = serde_json::from_value::<T>(Value::Object(single)) {
                        return Err(CliError::usage(format!("{what}: field `{k}`: {e}")));
                    }
                }
            }
            Err(CliError::usage(format!("{what}: {whole}")))
        }
    }
}

/// Writes rows as CSV (comment header, column header, records) or as a JSON
/// document `{provenance, rows}`.
pub fn emit_rows<R: Serialize>(
    mut w: impl Write,
    prov: &Provenance,
    header: &[&str],
    rows: &[R],
    format: Format,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            for line in prov.comment_lines() {
                writeln!(w, "# {line}")?;
            }
            let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
            wtr.write_record(header).map_err(CliError::from_csv)?;
            for r in rows {
                wtr.serialize(r).map_err(CliError::from_csv)?;
            }
            wtr.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &json!({ "provenance": prov.to_json(), "rows": rows }))
                .map_err(|e| CliError::runtime(e.to_string()))?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_json(mut w: impl Write, value: &Value) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::runtime(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
