//! CSV tables and the JSON metadata sidecar.

use std::path::Path;

use serde::Serialize;
use tmb_core::asympt::{FormulaReport, MemberRecord};
use tmb_core::bessel::Eigenpair;
use tmb_core::blowup::BubbleDiagnostics;

use crate::CliError;

/// 17 significant digits: enough to round-trip every binary64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Writes an RFC-4180 table. An empty table is refused before the file is
/// created.
pub fn emit_csv(table: &Table, path: &Path) -> Result<(), CliError> {
    if table.rows.is_empty() {
        return Err(CliError::EmptyOutput(path.display().to_string()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(&table.header).map_err(|e| CliError::io(path, e))?;
    for row in &table.rows {
        w.write_record(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One row per family member. Failed members keep their schedule values
/// and leave the solution columns empty.
pub fn solutions_table(records: &[MemberRecord], k: usize, hash: &str) -> Table {
    let mut header: Vec<String> = ["n", "lambda", "beta", "k", "amplitude"].map(String::from).to_vec();
    for i in 1..=k + 1 {
        for c in ["r", "rho", "mu", "du_at_r", "dirichlet"] {
            header.push(format!("{c}_{i}"));
        }
    }
    header.extend(
        ["full_dirichlet", "functional", "nehari_residual", "identity_residual_max"].map(String::from),
    );
    for i in 1..=k + 1 {
        header.push(format!("log_r_{i}"));
        header.push(format!("log_abs_du_{i}"));
    }
    header.push("failure".into());
    header.push("config_hash".into());

    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![r.index.to_string(), fmt_f64(r.lambda), fmt_f64(r.beta), k.to_string()];
            match &r.summary {
                Some(s) => {
                    row.push(fmt_f64(s.amplitude));
                    for d in &s.domains {
                        row.extend(
                            [d.outer_radius, d.peak_radius, d.peak_value, d.outer_slope, d.dirichlet].map(fmt_f64),
                        );
                    }
                    row.extend(
                        [s.full_dirichlet, s.functional, s.nehari_residual, s.identity_residual_max].map(fmt_f64),
                    );
                    for d in &s.domains {
                        row.push(fmt_f64(d.log_outer_radius));
                        row.push(fmt_f64(d.log_abs_outer_slope));
                    }
                    row.push(String::new());
                }
                None => {
                    row.resize(header.len() - 2, String::new());
                    row.push(r.failure.clone().unwrap_or_default());
                }
            }
            row.push(hash.to_string());
            row
        })
        .collect();
    Table { header, rows }
}

pub fn formulas_table(reports: &[FormulaReport], hash: &str) -> Table {
    let header = [
        "formula_id",
        "applicable",
        "raw_last",
        "extrapolated",
        "target",
        "rel_error",
        "slow_rate_flag",
        "note",
        "config_hash",
    ]
    .map(String::from)
    .to_vec();
    let rows = reports
        .iter()
        .map(|f| {
            vec![
                f.formula_id.clone(),
                f.applicable.to_string(),
                fmt_f64(f.raw_last),
                fmt_f64(f.extrapolated),
                fmt_f64(f.target),
                fmt_f64(f.rel_error),
                f.slow_rate_flag.to_string(),
                f.note.clone().unwrap_or_default(),
                hash.to_string(),
            ]
        })
        .collect();
    Table { header, rows }
}

/// The per-member sequences behind each applicable report.
pub fn formula_sequences_table(reports: &[FormulaReport], hash: &str) -> Table {
    let header = ["formula_id", "n", "value", "config_hash"].map(String::from).to_vec();
    let rows = reports
        .iter()
        .filter(|f| f.applicable)
        .flat_map(|f| {
            f.raw
                .iter()
                .enumerate()
                .map(|(n, v)| vec![f.formula_id.clone(), n.to_string(), fmt_f64(*v), hash.to_string()])
        })
        .collect();
    Table { header, rows }
}

pub fn profile_table(diag: &BubbleDiagnostics, hash: &str) -> Table {
    let header = ["r", "z_n", "z_exact", "phi", "config_hash"].map(String::from).to_vec();
    let rows = diag
        .samples
        .iter()
        .map(|s| {
            let mut row = [s.r, s.z_n, s.z_exact, s.phi].map(fmt_f64).to_vec();
            row.push(hash.to_string());
            row
        })
        .collect();
    Table { header, rows }
}

pub fn bessel_table(pairs: &[Eigenpair], hash: &str) -> Table {
    let header = ["k", "t_k", "lambda_k", "config_hash"].map(String::from).to_vec();
    let rows = pairs
        .iter()
        .map(|p| vec![p.k.to_string(), fmt_f64(p.t_k), fmt_f64(p.lambda_k), hash.to_string()])
        .collect();
    Table { header, rows }
}

/// Run facts that vary between otherwise identical runs; kept out of the CSVs.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub config_hash: String,
    pub command: String,
    pub seed_note: Option<String>,
    pub tool_version: String,
    pub precision: String,
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub failures: Vec<String>,
}

pub fn write_metadata(meta: &Metadata, path: &Path) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_exactly() {
        for x in [0.1, 1.0 / 3.0, 5.783185962946785, 1e-300, -2.5e300, f64::MIN_POSITIVE, 4.9e-324] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x:e}");
        }
    }

    #[test]
    fn empty_table_creates_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let t = Table {
            header: vec!["a".into()],
            rows: vec![],
        };
        assert!(emit_csv(&t, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn one_row_gives_header_plus_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        let pairs = tmb_core::bessel::eigenpairs(1).unwrap();
        emit_csv(&bessel_table(&pairs, "h"), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "k,t_k,lambda_k,config_hash");
        assert!(lines[1].starts_with("1,2.4048255576957"));
    }

    #[test]
    fn failed_member_row_has_full_width() {
        let rec = MemberRecord {
            index: 3,
            lambda: 1e-9,
            beta: 1.2,
            summary: None,
            failure: Some("overflow, \"quoted\"".into()),
        };
        let t = solutions_table(&[rec], 1, "abc");
        assert_eq!(t.rows[0].len(), t.header.len());
        assert_eq!(t.rows[0].last().unwrap(), "abc");
        assert_eq!(t.header.len(), 5 + 2 * 5 + 4 + 2 * 2 + 2);
    }
}
