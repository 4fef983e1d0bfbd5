//! Transition-pair datasets and their on-disk form: a CSV with header
//! `x0..x{p-1},xn0..xn{p-1}` (one `(x_t, x_{t+1})` pair per row) and a JSON
//! sidecar with the generator metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{NisError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub p: usize,
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub n_pairs: usize,
    #[serde(default)]
    pub illustrative: bool,
    #[serde(default)]
    pub tool_version: String,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    p: usize,
    current: Vec<f64>,
    next: Vec<f64>,
    meta: DatasetMeta,
}

impl TransitionDataset {
    pub fn new(p: usize, current: Vec<f64>, next: Vec<f64>, mut meta: DatasetMeta) -> Result<Self> {
        if p == 0 {
            return Err(NisError::Config("dataset dimension must be positive".into()));
        }
        if current.len() != next.len() || !current.len().is_multiple_of(p) {
            return Err(NisError::Config(format!(
                "dataset buffers of length {} and {} do not hold pairs of dimension {p}",
                current.len(),
                next.len()
            )));
        }
        if meta.p != p {
            return Err(NisError::Dimension {
                context: "dataset metadata",
                expected: p,
                got: meta.p,
            });
        }
        meta.n_pairs = current.len() / p;
        Ok(Self {
            p,
            current,
            next,
            meta,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.current.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn current(&self, i: usize) -> &[f64] {
        &self.current[i * self.p..(i + 1) * self.p]
    }

    pub fn next(&self, i: usize) -> &[f64] {
        &self.next[i * self.p..(i + 1) * self.p]
    }

    /// Stacks the selected rows into `([B, p], [B, p])` tensors.
    pub fn gather(&self, rows: &[usize]) -> (Tensor, Tensor) {
        let mut cur = Vec::with_capacity(rows.len() * self.p);
        let mut nxt = Vec::with_capacity(rows.len() * self.p);
        for &r in rows {
            cur.extend_from_slice(self.current(r));
            nxt.extend_from_slice(self.next(r));
        }
        (
            Tensor::matrix(rows.len(), self.p, cur),
            Tensor::matrix(rows.len(), self.p, nxt),
        )
    }

    /// Largest absolute coordinate over both columns of every pair.
    pub fn max_abs(&self) -> f64 {
        self.current
            .iter()
            .chain(&self.next)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn header(p: usize) -> Vec<String> {
        (0..p)
            .map(|i| format!("x{i}"))
            .chain((0..p).map(|i| format!("xn{i}")))
            .collect()
    }

    /// `data.csv` → `data.meta.json`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("meta.json")
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
        writer.write_record(Self::header(self.p))?;
        let mut record: Vec<String> = Vec::with_capacity(2 * self.p);
        for i in 0..self.len() {
            record.clear();
            record.extend(self.current(i).iter().map(|v| v.to_string()));
            record.extend(self.next(i).iter().map(|v| v.to_string()));
            writer.write_record(&record)?;
        }
        writer.flush()?;

        let mut side = BufWriter::new(File::create(Self::sidecar_path(csv_path))?);
        serde_json::to_writer_pretty(&mut side, &self.meta)?;
        side.write_all(b"\n")?;
        side.flush()?;
        Ok(())
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let side = File::open(Self::sidecar_path(csv_path))?;
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(side))?;

        let mut reader = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if !header.len().is_multiple_of(2) || header != Self::header(header.len() / 2) {
            return Err(NisError::Parse(format!(
                "dataset header must be x0..x{{p-1}},xn0..xn{{p-1}}, got {header:?}"
            )));
        }
        let p = header.len() / 2;
        let mut current = Vec::new();
        let mut next = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    NisError::Parse(format!("row {}: column {j}: not a number: {field:?}", line + 1))
                })?;
                if j < p {
                    current.push(v);
                } else {
                    next.push(v);
                }
            }
        }
        Self::new(p, current, next, meta)
    }
}
