//! JSON-lines dataset files: one graph instance per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use diffuco_core::graph::{DatasetRecord, Graph, GraphMeta, ProblemKind, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk form of a [`DatasetRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    n: usize,
    edges: Vec<[u32; 2]>,
    kind: ProblemKind,
    split: Split,
    #[serde(default)]
    meta: Option<GraphMeta>,
    #[serde(default)]
    oracle_energy: Option<f64>,
}

impl From<&DatasetRecord> for RecordLine {
    fn from(r: &DatasetRecord) -> Self {
        Self {
            n: r.graph.num_nodes(),
            edges: r.graph.edges().iter().map(|&(i, j)| [i, j]).collect(),
            kind: r.kind,
            split: r.split,
            meta: r.graph.meta.clone(),
            oracle_energy: r.oracle_energy,
        }
    }
}

impl RecordLine {
    fn into_record(self) -> diffuco_core::Result<DatasetRecord> {
        let mut graph = Graph::new(self.n, self.edges.into_iter().map(|[i, j]| (i, j)))?;
        graph.meta = self.meta;
        Ok(DatasetRecord {
            graph,
            kind: self.kind,
            split: self.split,
            oracle_energy: self.oracle_energy,
        })
    }
}

/// Serialises one record as a single JSON line (without the newline).
pub fn record_to_line(record: &DatasetRecord) -> String {
    serde_json::to_string(&RecordLine::from(record)).expect("records always serialise")
}

/// Parses one line of a dataset file.
pub fn record_from_line(line: &str) -> std::result::Result<DatasetRecord, String> {
    let raw: RecordLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    raw.into_record().map_err(|e| e.to_string())
}

/// Reads every record of a dataset file. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = record_from_line(&line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes `records` to `path`, replacing any existing file.
pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", record_to_line(r)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stable identifier of the record at `index` within its file.
pub fn instance_id(index: usize) -> String {
    format!("{index:06}")
}
