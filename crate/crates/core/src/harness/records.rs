//! Line-delimited JSON records. Each line is one self-describing record
//! tagged by `record`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critical::FGrid;
use crate::error::{Error, Result};
use crate::flow::FlowRecord;
use crate::harness::config::SweepConfig;
use crate::harness::sweep::PhaseCell;
use crate::harness::tables::{HessianRow, OneNeuronRow};
use crate::kernel::KernelSpec;

/// One gradient-flow run with the coordinates needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRun {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub result: FlowRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    SweepHeader { version: String, workers: usize, config: SweepConfig },
    Phase(PhaseCell),
    Flow(Box<FlowRun>),
    OneNeuron(OneNeuronRow),
    Hessian(HessianRow),
    Fgrid(FGrid),
}

/// Appends records to a file, one line each, flushing per record so that an
/// aborted run leaves every completed line on disk.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(RecordWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &Record) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = RecordWriter::create(path)?;
    records.iter().try_for_each(|r| w.write(r))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
