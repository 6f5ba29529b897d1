//! Artifact files. Every CSV starts with `#` lines carrying the version and
//! the resolved config; every JSON object carries `version` and `config`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::{CliError, VERSION};

pub const CSV_CONFIG_PREFIX: &str = "# config ";

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'static str,
    config: &'a RunConfig,
    #[serde(flatten)]
    payload: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, config: &RunConfig, payload: &T) -> Result<PathBuf, CliError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(&Envelope { version: VERSION, config, payload })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(path.to_path_buf())
}

/// Opens `path`, writes the comment preamble and hands the writer to `body`.
pub fn write_csv<F>(path: &Path, config: &RunConfig, body: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    ensure_parent(path)?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# {VERSION}")?;
    writeln!(out, "{CSV_CONFIG_PREFIX}{}", serde_json::to_string(config)?)?;
    body(&mut out)?;
    out.flush()?;
    Ok(path.to_path_buf())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}
