//! QSD-vs-oracle discrepancy tables built from observable CSVs.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// A numeric CSV as written by the exporters.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table, CliError> {
        let input = |e: std::io::Error| CliError::Input {
            path: path.to_path_buf(),
            source: e,
        };
        let file = std::fs::File::open(path).map_err(input)?;
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(file);
        let bad = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
        let columns: Vec<String> = rdr
            .headers()
            .map_err(bad)?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(bad)?;
            let row = rec
                .iter()
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        CliError::Config(format!("{}: `{v}` is not a number", path.display()))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Absolute floor under the error bar so exactly-known points (t = 0)
/// are not failed by rounding.
pub const ABS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantitySummary {
    pub name: String,
    pub within: usize,
    pub total: usize,
    pub fraction: f64,
    pub max_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub sigmas: f64,
    pub min_fraction: f64,
    pub matched_times: usize,
    pub quantities: Vec<QuantitySummary>,
    pub passed: bool,
}

/// Columns compared by default: χ plus every population and coherence the
/// two tables share, provided the QSD side carries an error column.
pub fn default_columns(qsd: &Table, oracle: &Table) -> Vec<String> {
    oracle
        .columns
        .iter()
        .filter(|c| *c == "chi" || c.starts_with("P_") || c.starts_with("zeta_"))
        .filter(|c| !c.ends_with("_err"))
        .filter(|c| qsd.index(c).is_some() && qsd.index(&format!("{c}_err")).is_some())
        .cloned()
        .collect()
}

/// Compare `columns` at the times present in both tables and write the
/// per-time table to `out`.
pub fn compare<W: Write>(
    qsd: &Table,
    oracle: &Table,
    columns: &[String],
    sigmas: f64,
    min_fraction: f64,
    out: &mut W,
) -> Result<CompareSummary, CliError> {
    let tq = qsd
        .column("t_fs")
        .ok_or_else(|| CliError::Config("QSD table lacks t_fs".into()))?;
    let to = oracle
        .column("t_fs")
        .ok_or_else(|| CliError::Config("oracle table lacks t_fs".into()))?;
    if columns.is_empty() {
        return Err(CliError::Config("no comparable columns".into()));
    }
    let mut idx = Vec::new();
    for c in columns {
        let q = qsd.index(c);
        let e = qsd.index(&format!("{c}_err"));
        let o = oracle.index(c);
        match (q, e, o) {
            (Some(q), Some(e), Some(o)) => idx.push((q, e, o)),
            _ => {
                return Err(CliError::Config(format!(
                    "column `{c}` (with `{c}_err` on the QSD side) missing"
                )))
            }
        }
    }
    let mut pairs = Vec::new();
    let mut j = 0;
    for (i, &t) in tq.iter().enumerate() {
        while j < to.len() && to[j] < t - 1e-9 * t.abs().max(1.0) {
            j += 1;
        }
        if j < to.len() && (to[j] - t).abs() <= 1e-9 * t.abs().max(1.0) {
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Config(
            "the two tables share no recorded times".into(),
        ));
    }

    let io = |e: std::io::Error| CliError::Output {
        path: "compare table".into(),
        source: e,
    };
    let mut header = vec!["t_fs".to_string()];
    for c in columns {
        for s in ["qsd", "err", "oracle", "diff", "ok"] {
            header.push(format!("{c}_{s}"));
        }
    }
    writeln!(
        out,
        "# morse-qsd compare v{}",
        morse_qsd::export::SCHEMA_VERSION
    )
    .map_err(io)?;
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let mut within = vec![0usize; columns.len()];
    let mut worst = vec![0.0f64; columns.len()];
    for &(i, j) in &pairs {
        let mut line = format!("{:e}", tq[i]);
        for (k, &(q, e, o)) in idx.iter().enumerate() {
            let (vq, ve, vo) = (qsd.rows[i][q], qsd.rows[i][e], oracle.rows[j][o]);
            let d = vq - vo;
            let ok = d.abs() <= sigmas * ve + ABS_FLOOR;
            if ok {
                within[k] += 1;
            }
            if ve > 0.0 {
                worst[k] = worst[k].max(d.abs() / ve);
            }
            line.push_str(&format!(",{vq:e},{ve:e},{vo:e},{d:e},{}", ok as u8));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    let total = pairs.len();
    let quantities: Vec<QuantitySummary> = columns
        .iter()
        .zip(within.iter().zip(&worst))
        .map(|(c, (&w, &m))| QuantitySummary {
            name: c.clone(),
            within: w,
            total,
            fraction: w as f64 / total as f64,
            max_sigma: m,
        })
        .collect();
    let passed = quantities.iter().all(|q| q.fraction >= min_fraction);
    Ok(CompareSummary {
        sigmas,
        min_fraction,
        matched_times: total,
        quantities,
        passed,
    })
}
