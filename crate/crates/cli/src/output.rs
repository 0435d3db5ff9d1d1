//! CSV and JSON writers. Every CSV starts with `#` metadata lines (tool
//! version, command, config hash, seed) followed by a plain header row.
//! Nothing in the files depends on the wall clock, so equal inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mrtrader::analysis::{Axis, SensitivityGrid};
use serde::Serialize;

use crate::CliError;

/// Where a command writes and what it stamps on each file.
#[derive(Debug, Clone)]
pub struct Sink {
    pub dir: PathBuf,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Shortest round-trip form; non-finite values print as `NaN`, `inf`, `-inf`.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

impl Sink {
    pub fn new(dir: &Path, command: &str, config_hash: String, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_hash,
            seed,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn header(&self, extra: &BTreeMap<String, String>) -> String {
        let mut out = format!(
            "# mrtrader {}\n# command: {}\n# config_sha256: {}\n# seed: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_hash,
            self.seed
        );
        for (k, v) in extra {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// A table of numbers with a metadata header.
    pub fn write_table<I>(
        &self,
        name: &str,
        meta: &BTreeMap<String, String>,
        columns: &[String],
        rows: I,
    ) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(columns).map_err(|e| CliError::Io(e.to_string()))?;
        for row in rows {
            w.write_record(row.iter().map(|v| fmt(*v)))
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        let mut text = self.header(meta);
        text.push_str(&String::from_utf8(body).expect("numbers are ascii"));
        self.write_text(name, &text)
    }

    /// Grids sharing axes, one quantity per column, in row-major cell order.
    /// A `<stem>.missing.json` sidecar lists every missing cell and the reason.
    pub fn write_grids(&self, stem: &str, grids: &[&SensitivityGrid]) -> Result<PathBuf, CliError> {
        let first = grids
            .first()
            .ok_or_else(|| CliError::Invalid("no grids to write".into()))?;
        if grids.iter().any(|g| g.axis1 != first.axis1 || g.axis2 != first.axis2) {
            return Err(CliError::Invalid("grids in one file must share axes".into()));
        }
        let mut columns = vec![first.axis1.label.clone(), first.axis2.label.clone()];
        columns.extend(grids.iter().map(|g| g.quantity.clone()));
        let (n1, n2) = first.shape();
        let rows = (0..n1).flat_map(|i| {
            (0..n2).map(move |j| {
                let mut row = vec![first.axis1.values[i], first.axis2.values[j]];
                row.extend(grids.iter().map(|g| g.get(i, j)));
                row
            })
        });
        let mut meta = BTreeMap::new();
        for g in grids {
            meta.extend(g.metadata.iter().map(|(k, v)| (format!("meta.{k}"), v.clone())));
        }
        let missing: usize = grids.iter().map(|g| g.missing_count()).sum();
        meta.insert("missing_cells".into(), missing.to_string());
        let path = self.write_table(&format!("{stem}.csv"), &meta, &columns, rows)?;

        let cells: Vec<MissingCell> = grids
            .iter()
            .flat_map(|g| {
                g.missing().into_iter().map(|(i, j, reason)| MissingCell {
                    quantity: g.quantity.clone(),
                    axis1: g.axis1.values[i],
                    axis2: g.axis2.values[j],
                    reason,
                })
            })
            .collect();
        self.write_json(
            &format!("{stem}.missing.json"),
            &MissingReport {
                count: cells.len(),
                cells,
            },
        )?;
        Ok(path)
    }
}

#[derive(Debug, Serialize)]
struct MissingCell {
    quantity: String,
    axis1: f64,
    axis2: f64,
    reason: String,
}

#[derive(Debug, Serialize)]
struct MissingReport {
    count: usize,
    cells: Vec<MissingCell>,
}

/// Lines of a CSV file that are not `#` comments.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Reads a file written by [`Sink::write_grids`] back into one grid per
/// quantity column. Axis values keep their order of first appearance and
/// `meta.` header lines come back as metadata.
pub fn read_grids(path: &Path) -> Result<Vec<SensitivityGrid>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let bad = |msg: String| CliError::Invalid(format!("{}: {msg}", path.display()));
    let mut metadata = BTreeMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix("# meta.")) {
        if let Some((k, v)) = line.split_once(": ") {
            metadata.insert(k.to_string(), v.to_string());
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() < 3 {
        return Err(bad("expected two axis columns and at least one quantity".into()));
    }
    let mut cells: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        cells.push(row);
    }
    let mut a1: Vec<f64> = Vec::new();
    let mut a2: Vec<f64> = Vec::new();
    for row in &cells {
        if !a1.iter().any(|v| v.to_bits() == row[0].to_bits()) {
            a1.push(row[0]);
        }
        if !a2.iter().any(|v| v.to_bits() == row[1].to_bits()) {
            a2.push(row[1]);
        }
    }
    if cells.len() != a1.len() * a2.len() {
        return Err(bad(format!(
            "{} rows do not form a {}x{} grid",
            cells.len(),
            a1.len(),
            a2.len()
        )));
    }
    let index = |axis: &[f64], v: f64| {
        axis.iter()
            .position(|a| a.to_bits() == v.to_bits())
            .expect("axis built from rows")
    };
    let mut grids = Vec::new();
    for q in 2..headers.len() {
        let mut g = SensitivityGrid::new(
            Axis::new(&headers[0], a1.clone()),
            Axis::new(&headers[1], a2.clone()),
            &headers[q],
        );
        for row in &cells {
            let (i, j) = (index(&a1, row[0]), index(&a2, row[1]));
            if row[q].is_nan() {
                g.set_missing(i, j, "missing in file");
            } else {
                g.set(i, j, row[q]);
            }
        }
        g.metadata = metadata.clone();
        grids.push(g);
    }
    Ok(grids)
}
