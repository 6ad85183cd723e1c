//! Matrix CSV loading/saving and result emission (trace, report, plot
//! data).
//!
//! The CSV dialect is deliberately narrow: comma-separated, '.' decimal
//! point, one pixel (or endmember) per row, with an optional single header
//! line detected by a non-numeric first token. All numeric output uses
//! Rust's shortest round-trip decimal formatting.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::sampler::UnmixingResult;

/// Parse a CSV matrix file; ragged rows and non-numeric cells fail with
/// the offending line number.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if idx + 1 == text.lines().count() {
                continue; // trailing blank line
            }
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "empty line inside matrix".into(),
            });
        }
        // Header detection: a non-numeric first token on the first line.
        if rows.is_empty() && width.is_none() {
            let first_token = trimmed.split(',').next().unwrap_or("").trim();
            if first_token.parse::<f64>().is_err() {
                width = None; // header consumed; width set by the first data row
                continue;
            }
        }
        let mut row = Vec::new();
        for cell in trimmed.split(',') {
            let cell = cell.trim();
            let value = cell.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            row.push(value);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("expected {w} columns, found {}", row.len()),
                });
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty file".into(),
    })?;
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no data rows".into(),
        });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / width;
    Array2::from_shape_vec((n, width), flat)
        .map_err(|e| Error::Input(format!("matrix shape error: {e}")))
}

/// Write a matrix as CSV with shortest round-trip decimals.
pub fn save_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Serializable run report.
#[derive(Debug, serde::Serialize)]
pub struct RunReport {
    pub estimated_k: usize,
    pub map_log_posterior: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_sid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_true: Option<usize>,
}

/// Write all artifacts of one unmixing run into `out_dir`:
/// `endmembers.csv`, `abundances.csv`, `trace.jsonl`, `report.json`, and
/// `plotdata/{k_vs_sweep,log_posterior_vs_sweep}.csv`. When an evaluation
/// report is supplied its metrics land in `report.json`.
pub fn save_result(
    result: &UnmixingResult,
    eval: Option<&EvalReport>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let f = result.map_state.endmembers();
    let endmembers_path = out_dir.join("endmembers.csv");
    save_matrix(&endmembers_path, &f)?;
    written.push(endmembers_path);

    let abundances_path = out_dir.join("abundances.csv");
    save_matrix(&abundances_path, &result.map_state.s)?;
    written.push(abundances_path);

    let trace_path = out_dir.join("trace.jsonl");
    {
        let mut file = fs::File::create(&trace_path)?;
        for record in &result.trace.records {
            serde_json::to_writer(&mut file, record)
                .map_err(|e| Error::Input(format!("trace serialization: {e}")))?;
            file.write_all(b"\n")?;
        }
    }
    written.push(trace_path);

    let report = RunReport {
        estimated_k: result.estimated_k,
        map_log_posterior: result.map_log_posterior,
        theta_f: eval.map(|e| e.theta_f),
        theta_s: eval.map(|e| e.theta_s),
        mean_sid: eval.map(|e| e.mean_sid),
        accuracy: eval.map(|e| if e.k_est == e.k_true { 1.0 } else { 0.0 }),
        k_true: eval.map(|e| e.k_true),
    };
    let report_path = out_dir.join("report.json");
    fs::write(
        &report_path,
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Input(format!("report serialization: {e}")))?,
    )?;
    written.push(report_path);

    let plot_dir = out_dir.join("plotdata");
    fs::create_dir_all(&plot_dir)?;
    let k_path = plot_dir.join("k_vs_sweep.csv");
    let lp_path = plot_dir.join("log_posterior_vs_sweep.csv");
    let mut k_csv = String::from("sweep,k\n");
    let mut lp_csv = String::from("sweep,log_posterior\n");
    for record in &result.trace.records {
        k_csv.push_str(&format!("{},{}\n", record.sweep, record.k));
        lp_csv.push_str(&format!("{},{}\n", record.sweep, record.log_posterior));
    }
    fs::write(&k_path, k_csv)?;
    fs::write(&lp_path, lp_csv)?;
    written.push(k_path);
    written.push(lp_path);

    Ok(written)
}
