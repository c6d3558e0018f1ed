//! Output files and result-table summaries.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{ExperimentOutput, ExperimentSpec, ResultTable, Verdict};

pub const SUMMARY_FILE: &str = "summary.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Creates `dir` if needed and checks that a file can be written into it.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".chaoslrd-write-probe");
    fs::write(&probe, b"").map_err(io_err(dir))?;
    fs::remove_file(&probe).map_err(io_err(dir))?;
    Ok(())
}

/// `# key=value` lines, one per setting, plus the build id.
pub fn header_lines(config: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in config {
        let _ = writeln!(s, "# {k}={v}");
    }
    let _ = writeln!(s, "# build={}", crate::stats::build_id());
    s
}

/// Writes a CSV with `#` header lines followed by the serialized records.
pub fn write_csv<T: Serialize>(path: &Path, config: &[(String, String)], records: &[T]) -> Result<()> {
    let mut buf = header_lines(config).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in records {
            w.serialize(r).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))?;
    Ok(())
}

/// Writes the CSV to `dir` and a header-only file when there are no records,
/// so the column line is still present.
fn write_csv_or_header<T: Serialize>(
    path: &Path,
    config: &[(String, String)],
    records: &[T],
    columns: &[&str],
) -> Result<()> {
    if records.is_empty() {
        let mut s = header_lines(config);
        s.push_str(&columns.join(","));
        s.push('\n');
        return fs::write(path, s).map_err(io_err(path));
    }
    write_csv(path, config, records)
}

#[derive(Serialize)]
struct MarginalRecord {
    replication: usize,
    value: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    timestamp_unix: u64,
    #[serde(flatten)]
    table: &'a ResultTable,
}

/// Writes covariance.csv, scaling.csv, marginal.csv, moments.csv and
/// summary.json into `dir`.
pub fn write_outputs(dir: &Path, spec: &ExperimentSpec, out: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    ensure_writable(dir)?;
    let mut config = spec.config_lines();
    let mut written = Vec::new();
    if spec.stages.covariance {
        let path = dir.join("covariance.csv");
        write_csv_or_header(&path, &config, &out.covariance, &["lag", "estimate", "stderr", "oracle", "verdict"])?;
        written.push(path);
    }
    if spec.stages.scaling {
        let path = dir.join("scaling.csv");
        write_csv_or_header(&path, &config, &out.scaling, &["n", "variance", "stderr"])?;
        written.push(path);
    }
    if spec.stages.marginal {
        config.push(("marginal".into(), out.marginal_label.clone()));
        let recs: Vec<MarginalRecord> =
            out.marginal.iter().enumerate().map(|(replication, &value)| MarginalRecord { replication, value }).collect();
        let path = dir.join("marginal.csv");
        write_csv_or_header(&path, &config, &recs, &["replication", "value"])?;
        config.pop();
        written.push(path);
    }
    if spec.stages.moments {
        let path = dir.join("moments.csv");
        write_csv_or_header(&path, &config, &out.moments, &["order_tuple", "estimate", "stderr", "formula", "verdict"])?;
        written.push(path);
    }
    let path = dir.join(SUMMARY_FILE);
    write_summary(&path, &out.table)?;
    written.push(path);
    Ok(written)
}

/// Single JSON document with all rows, metadata and a timestamp.
pub fn write_summary(path: &Path, table: &ResultTable) -> Result<()> {
    let timestamp_unix =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let json = serde_json::to_string_pretty(&Summary { timestamp_unix, table })
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<ResultTable> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Summaries found in `dir` itself and its immediate subdirectories, sorted by path.
pub fn collect_summaries(dir: &Path) -> Result<Vec<(PathBuf, ResultTable)>> {
    let mut paths = Vec::new();
    let own = dir.join(SUMMARY_FILE);
    if own.is_file() {
        paths.push(own);
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let candidate = entry.path().join(SUMMARY_FILE);
        if entry.path().is_dir() && candidate.is_file() {
            paths.push(candidate);
        }
    }
    paths.sort();
    paths.into_iter().map(|p| read_summary(&p).map(|t| (p, t))).collect()
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.6}")
    }
}

/// Fixed-width text rendering of a result table.
pub fn format_table(table: &ResultTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<32} {:>14} {:>12} {:>14} {:>12}  verdict",
        "row", "estimate", "stderr", "oracle", "tolerance"
    );
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{:<32} {:>14} {:>12} {:>14} {:>12}  {}",
            r.id,
            fmt_num(r.estimate),
            r.stderr.map(fmt_num).unwrap_or_else(|| "-".into()),
            fmt_num(r.oracle),
            fmt_num(r.tolerance),
            r.verdict
        );
    }
    let scored = table.rows.iter().filter(|r| r.verdict != Verdict::Info).count();
    let passed = table.rows.iter().filter(|r| r.verdict == Verdict::Pass).count();
    let _ = writeln!(
        s,
        "{passed}/{scored} scored rows pass; seed {}; {:.1}s; build {}",
        table.metadata.seed, table.metadata.wall_time_s, table.metadata.build
    );
    s
}
