//! Atomic file writes and the on-disk result formats.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use ui_rkd::welfare::{WelfareInputs, WelfareResult};

use crate::config::SCHEMA_VERSION;
use crate::grid::CellResult;

/// Writes through a temporary file in the target directory, then renames it
/// into place; readers never observe a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes a CSV with the given header; an empty row set leaves only the header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for row in rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub schema_version: u32,
    pub cells: Vec<CellResult>,
}

impl FitsFile {
    pub fn new(cells: Vec<CellResult>) -> Self {
        FitsFile { schema_version: SCHEMA_VERSION, cells }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let f: FitsFile = read_json(path)?;
        check_version(f.schema_version, path)?;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub label: String,
    pub outcome: String,
    pub error: String,
}

/// Written next to an output whenever some cells failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorManifest {
    pub schema_version: u32,
    pub failures: Vec<Failure>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".errors.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub label: String,
    pub ok: bool,
    pub inputs: Option<WelfareInputs>,
    pub result: Option<WelfareResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub schema_version: u32,
    pub rows: Vec<CalibrationRow>,
}

impl CalibrationFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let f: CalibrationFile = read_json(path)?;
        check_version(f.schema_version, path)?;
        Ok(f)
    }
}

fn check_version(v: u32, path: &Path) -> anyhow::Result<()> {
    if v != SCHEMA_VERSION {
        anyhow::bail!("{}: unsupported schema_version {v}", path.display());
    }
    Ok(())
}

/// Fixed-precision formatting for presentation tables; missing values are
/// empty and magnitudes from 1e9 up use scientific notation.
pub fn fmt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() && x.abs() >= 1e9 => format!("{x:.3e}"),
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => String::new(),
    }
}

pub const FITS_HEADER: [&str; 15] = [
    "label", "outcome", "regime", "kink", "ok", "coefficient", "se", "elasticity", "mean_outcome", "first_stage_f",
    "weak_instrument", "bandwidth", "n", "kink_point", "error",
];

pub fn fits_rows(cells: &[CellResult]) -> Vec<Vec<String>> {
    cells
        .iter()
        .map(|c| {
            let f = c.fit.as_ref();
            vec![
                c.label.clone(),
                c.outcome.as_str().to_string(),
                crate::grid::plain(&c.regime),
                crate::grid::plain(&c.kink),
                c.ok.to_string(),
                fmt(f.map(|f| f.alpha), 4),
                fmt(f.map(|f| f.se_alpha), 4),
                fmt(f.and_then(|f| f.elasticity), 3),
                fmt(f.map(|f| f.mean_outcome), 3),
                fmt(f.and_then(|f| f.first_stage_f), 1),
                f.map(|f| f.weak_instrument.to_string()).unwrap_or_default(),
                fmt(f.map(|f| f.h_used), 1),
                f.map(|f| f.n_used.to_string()).unwrap_or_default(),
                fmt(f.map(|f| f.kink_point), 2),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

pub const WELFARE_HEADER: [&str; 10] =
    ["label", "eta_wb", "dr_db", "r_over_b", "delta", "lhs", "rhs", "gains", "se_gains", "error"];

pub fn welfare_rows(rows: &[CalibrationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let i = r.inputs.as_ref();
            let w = r.result.as_ref();
            vec![
                r.label.clone(),
                fmt(i.map(|i| i.eta_wb), 3),
                fmt(i.map(|i| i.dr_db), 2),
                fmt(i.map(|i| i.r_over_b), 2),
                fmt(i.map(|i| i.delta), 3),
                fmt(w.map(|w| w.lhs), 3),
                fmt(w.map(|w| w.rhs), 3),
                fmt(w.map(|w| w.gains), 3),
                fmt(w.and_then(|w| w.se_gains), 3),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"first version")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"second")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "second");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        assert!(write_atomic(&p, |_| anyhow::bail!("boom")).is_err());
        assert!(!p.exists());
    }

    #[test]
    fn formatting_rounds_and_blanks() {
        assert_eq!(fmt(Some(0.12345), 3), "0.123");
        assert_eq!(fmt(None, 3), "");
        assert_eq!(fmt(Some(f64::NAN), 3), "");
        assert_eq!(manifest_path(Path::new("out/fits.json")), PathBuf::from("out/fits.json.errors.json"));
    }
}
