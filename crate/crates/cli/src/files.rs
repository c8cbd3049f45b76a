use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use isodrift::io::{
    read_embeddings_binary_path, read_embeddings_csv_path, write_embeddings_binary_path,
    write_embeddings_csv_path, EmbeddingSet,
};
use isodrift::EmbeddingRecord;

use crate::Format;

fn format_for(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("bin") => Format::Bin,
        _ => Format::Csv,
    })
}

pub fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Bin => "bin",
    }
}

pub fn read_records(path: &Path, explicit: Option<Format>) -> Result<EmbeddingSet> {
    let set = match format_for(path, explicit) {
        Format::Csv => read_embeddings_csv_path(path),
        Format::Bin => read_embeddings_binary_path(path),
    };
    set.with_context(|| format!("reading {}", path.display()))
}

pub fn write_records(path: &Path, format: Format, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    let res = match format {
        Format::Csv => write_embeddings_csv_path(path, dim, records),
        Format::Bin => write_embeddings_binary_path(path, dim, records),
    };
    res.with_context(|| format!("writing {}", path.display()))
}

/// Reads a score file: either CSV with a `score` column (as written by
/// `isodrift score`) or one number per line.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let column = match lines.peek() {
        Some((_, first)) if first.trim().parse::<f64>().is_err() => {
            let col = first
                .split(',')
                .position(|c| c.trim() == "score")
                .with_context(|| format!("{}: header has no `score` column", path.display()))?;
            lines.next();
            Some(col)
        }
        _ => None,
    };
    let mut out = Vec::new();
    for (i, line) in lines {
        let cell = match column {
            Some(c) => line.split(',').nth(c).unwrap_or(""),
            None => line,
        };
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("{}:{}: not a number: {:?}", path.display(), i + 1, cell.trim()))?;
        if !v.is_finite() {
            bail!("{}:{}: score is not finite", path.display(), i + 1);
        }
        out.push(v);
    }
    Ok(out)
}
