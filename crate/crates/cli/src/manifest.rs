//! Run manifest: the materialized config plus checksums of every output.

use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use morse_qsd::units::{self, RateUnit};

use crate::compare::CompareSummary;
use crate::config::{Resolved, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BathRecord {
    pub rate_au: f64,
    pub rate_per_angstrom2_fs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    /// 4k_BT/ħω₀ and whether it clears the validity threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub code_version: &'static str,
    pub config: RunConfig,
    pub seed: u64,
    pub realizations: usize,
    pub stability_substeps: usize,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
    pub bath: BathRecord,
    pub outputs: Vec<OutputEntry>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSummary>,
    pub diagnostics: Value,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let err = |e| CliError::Input {
        path: path.to_path_buf(),
        source: e,
    };
    let mut f = std::fs::File::open(path).map_err(err)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(err)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        bytes += n as u64;
    }
    let hex = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, bytes))
}

impl Manifest {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        cfg: &RunConfig,
        out_dir: &Path,
        r: &Resolved,
        files: &[String],
        wall_clock_s: f64,
        warnings: &[String],
        compare: Option<&CompareSummary>,
        diagnostics: Value,
    ) -> Result<Manifest, CliError> {
        let mut outputs = Vec::with_capacity(files.len());
        for f in files {
            let (sha256, bytes) = sha256_file(&out_dir.join(f))?;
            outputs.push(OutputEntry {
                file: f.clone(),
                sha256,
                bytes,
            });
        }
        let rate = r.bath.rate();
        let validity = match r.bath.thermal() {
            Some(t) => Some(units::markov_validity(
                t.temperature_k,
                r.spec.harmonic_frequency(),
            )?),
            None => None,
        };
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
            .saturating_sub(wall_clock_s as u64);
        Ok(Manifest {
            schema_version: morse_qsd::export::SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION"),
            config: cfg.materialized(out_dir),
            seed: cfg.ensemble.seed,
            realizations: cfg.ensemble.realizations,
            stability_substeps: r.propagator.validate(&r.grid)?.substeps,
            started_unix_s: started,
            wall_clock_s,
            bath: BathRecord {
                rate_au: rate,
                rate_per_angstrom2_fs: units::convert_rate(
                    rate,
                    RateUnit::AtomicUnits,
                    RateUnit::PerAngstromSqFs,
                ),
                xi: r.bath.xi(),
                validity_ratio: validity.map(|v| v.ratio),
                valid: validity.map(|v| v.valid),
            },
            outputs,
            warnings: warnings.to_vec(),
            compare: compare.cloned(),
            diagnostics,
        })
    }
}

pub fn write(m: &Manifest, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Output {
        path: path.to_path_buf(),
        source: e,
    })
}

/// The config recorded in a manifest, revalidated.
pub fn config_from_manifest(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        source: e,
    })?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = v
        .get("config")
        .ok_or_else(|| CliError::Config(format!("{}: no `config` entry", path.display())))?;
    let cfg: RunConfig = serde_json::from_value(cfg.clone())
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
