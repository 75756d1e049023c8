use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use coordconv_core::dataset::{generate_dataset, read_dataset, read_split, Example, Split};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Writes through `f` into `path`, flushing before returning.
pub fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> coordconv_core::Result<()>,
{
    let mut out = create(path)?;
    f(&mut out).map_err(|e| CliError::io(path, e))?;
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(path, e))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// The dataset file at `path`, or the generated dataset when absent.
pub fn load_dataset(path: Option<&Path>) -> CliResult<Vec<Example>> {
    match path {
        Some(p) => read_dataset(&mut open(p)?).map_err(|e| CliError::io(p, e)),
        None => Ok(generate_dataset()),
    }
}

pub fn load_split(path: &Path) -> CliResult<Split> {
    read_split(&mut open(path)?).map_err(|e| CliError::io(path, e))
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
