//! JSON Lines interchange for sessions and catalogs.
//!
//! Writers emit compact `serde_json` lines, which is the canonical byte form:
//! reading a canonical file and writing it back reproduces it exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Catalog, CategoryPath, ClickEvent, Dataset, ProductId, Session};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionLine {
    session_id: String,
    clicks: Vec<ClickEvent>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogLine {
    p: ProductId,
    cat: Vec<String>,
}

/// Parses every non-blank line of a JSON Lines file, keeping 1-based line numbers.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

fn parse_error(path: &Path, line: usize, err: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: err.to_string(),
    }
}

pub fn read_sessions(path: &Path) -> Result<Vec<Session>> {
    read_jsonl::<SessionLine>(path)?
        .into_iter()
        .map(|(line, raw)| Session::new(raw.session_id, raw.clicks).map_err(|e| parse_error(path, line, e)))
        .collect()
}

pub fn read_catalog(path: &Path) -> Result<Catalog> {
    let mut catalog = Catalog::new();
    for (line, raw) in read_jsonl::<CatalogLine>(path)? {
        let category = CategoryPath::new(raw.cat).map_err(|e| parse_error(path, line, e))?;
        if catalog.insert(raw.p.clone(), category).is_some() {
            return Err(parse_error(path, line, format!("duplicate catalog entry {}", raw.p)));
        }
    }
    Ok(catalog)
}

pub fn load_catalog(path: &Path) -> Result<Arc<Catalog>> {
    read_catalog(path).map(Arc::new)
}

/// Loads sessions and catalog, then validates the dataset invariants.
pub fn load_dataset(sessions: &Path, catalog: &Path) -> Result<Dataset> {
    let catalog = load_catalog(catalog)?;
    Dataset::new(read_sessions(sessions)?, catalog)
}

pub fn write_sessions<W: Write>(out: W, sessions: &[Session]) -> Result<()> {
    write_jsonl(
        out,
        sessions.iter().map(|s| SessionLine {
            session_id: s.id().to_owned(),
            clicks: s.clicks().to_vec(),
        }),
    )
}

pub fn write_catalog<W: Write>(out: W, catalog: &Catalog) -> Result<()> {
    write_jsonl(
        out,
        catalog.iter().map(|(p, c)| CatalogLine {
            p: p.clone(),
            cat: c.levels().to_vec(),
        }),
    )
}
