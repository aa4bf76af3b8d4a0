use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use ndarray::ArrayView2;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// `f64` in shortest round-trip form; missing and non-finite values become empty cells.
pub fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:?}"),
        _ => String::new(),
    }
}

/// Rows of `(x, T̂(x))` with header `x0,…,t0,…`.
pub fn snapshot_csv(xs: ArrayView2<'_, f64>, ts: ArrayView2<'_, f64>) -> String {
    let mut header: Vec<String> = (0..xs.ncols()).map(|k| format!("x{k}")).collect();
    header.extend((0..ts.ncols()).map(|k| format!("t{k}")));
    let mut out = header.join(",");
    out.push('\n');
    for (x, t) in xs.rows().into_iter().zip(ts.rows()) {
        let row: Vec<String> = x.iter().chain(t.iter()).map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub struct Table {
    text: String,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { text: columns.join(",") + "\n" }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}
