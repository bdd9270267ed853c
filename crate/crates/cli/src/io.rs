//! CSV and JSON files. Floats are written in Rust's shortest round-trip
//! form, so rereading a file recovers the exact values.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context as _};
use serde::Serialize;
use sha2::{Digest, Sha256};

use flare_core::linalg::Matrix;
use flare_core::uncertainty::UncertaintyScore;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn writer(path: &Path) -> anyhow::Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn matrix_header(cols: usize) -> Vec<String> {
    (0..cols).map(|j| format!("x{j}")).collect()
}

/// Header `x0,…,x{d−1}`, one row per line.
pub fn write_matrix(path: &Path, m: &Matrix) -> anyhow::Result<()> {
    let header = matrix_header(m.cols());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &header, (0..m.rows()).map(|i| m.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>()))
}

pub fn read_matrix(path: &Path) -> anyhow::Result<Matrix> {
    let ctx = || format!("reading {}", path.display());
    let mut r = csv::Reader::from_path(path).with_context(ctx)?;
    let header: Vec<String> = r.headers().with_context(ctx)?.iter().map(str::to_string).collect();
    if header.is_empty() || header != matrix_header(header.len()) {
        bail!("{}: expected header x0,...,x{{d-1}}, found {}", path.display(), header.join(","));
    }
    let d = header.len();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(ctx)?;
        for field in rec.iter() {
            let v: f64 = field.trim().parse().with_context(|| format!("{}: row {}: bad number {field:?}", path.display(), i + 1))?;
            data.push(v);
        }
    }
    let rows = data.len() / d;
    if rows == 0 {
        bail!("{}: no data rows", path.display());
    }
    Ok(Matrix::from_vec(rows, d, data)?)
}

pub const SCORE_HEADER: [&str; 3] = ["sample_id", "score", "raw_trace"];

pub fn write_scores(path: &Path, scores: &[UncertaintyScore]) -> anyhow::Result<()> {
    write_rows(
        path,
        &SCORE_HEADER,
        scores.iter().map(|s| vec![s.sample_id.to_string(), s.score.to_string(), s.raw_trace.to_string()]),
    )
}

/// The `score` column, checking that ids run `0, 1, …` in order.
pub fn read_scores(path: &Path) -> anyhow::Result<Vec<f64>> {
    let ctx = || format!("reading {}", path.display());
    let mut r = csv::Reader::from_path(path).with_context(ctx)?;
    let header: Vec<String> = r.headers().with_context(ctx)?.iter().map(str::to_string).collect();
    if header != SCORE_HEADER {
        bail!("{}: expected header {}, found {}", path.display(), SCORE_HEADER.join(","), header.join(","));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(ctx)?;
        let id: usize = rec[0].parse().with_context(|| format!("{}: row {}: bad sample id", path.display(), i + 1))?;
        if id != i {
            bail!("{}: sample ids must run 0, 1, ... in order; row {} has id {id}", path.display(), i + 1);
        }
        out.push(rec[1].parse().with_context(|| format!("{}: row {}: bad score", path.display(), i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = Matrix::from_fn(4, 3, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) - 1e-17);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,x2\n"));
    }

    #[test]
    fn scores_round_trip_and_validate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let scores: Vec<_> = (0..3).map(|i| UncertaintyScore::new(i, i as f64 * 0.3, 2)).collect();
        write_scores(&path, &scores).unwrap();
        assert_eq!(read_scores(&path).unwrap(), vec![0.0, 0.15, 0.3]);
        std::fs::write(&path, "sample_id,score,raw_trace\n1,0.5,1.0\n").unwrap();
        assert!(read_scores(&path).is_err());
    }

    #[test]
    fn bad_csv_reports_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let err = format!("{:#}", read_matrix(&path).unwrap_err());
        assert!(err.contains("bad.csv"), "{err}");
        assert!(format!("{:#}", read_matrix(&dir.path().join("missing.csv")).unwrap_err()).contains("missing.csv"));
    }
}
