//! Executes a validated [`RunConfig`] and writes its artifacts.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use morse_qsd::ensemble::{self, EnsembleAccumulator};
use morse_qsd::export::{self, ObservableColumns};
use morse_qsd::lindblad::{self, DensityMatrix};
use morse_qsd::morse::MorseBasis;
use morse_qsd::observables::{fit_decay, DecayFit, ObservableSeries};
use morse_qsd::qstate::{self, GridState, EDGE_LIMIT};
use morse_qsd::units;

use crate::compare::{self, CompareSummary, Table};
use crate::config::{Artifact, FitSection, Mode, Resolved, RunConfig};
use crate::error::CliError;
use crate::manifest::{self, Manifest};

pub const QSD_OBSERVABLES: &str = "observables_qsd.csv";
pub const ORACLE_OBSERVABLES: &str = "observables_oracle.csv";
pub const COMPARE_TABLE: &str = "compare.csv";
pub const MANIFEST: &str = "manifest.json";

/// Significance and coverage used by `compare` mode.
pub const COMPARE_SIGMAS: f64 = 3.0;
pub const COMPARE_MIN_FRACTION: f64 = 0.95;

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// Written files, relative to `out_dir`, in write order.
    pub outputs: Vec<String>,
    pub compare: Option<CompareSummary>,
    pub warnings: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Writer<'_> {
    fn file(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let err = |e| CliError::Output {
            path: path.clone(),
            source: e,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(err)?);
        body(&mut w).and_then(|_| w.flush()).map_err(err)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

fn initial_state(cfg: &RunConfig, r: &Resolved, basis: &MorseBasis) -> Result<GridState, CliError> {
    if let Some(g) = &cfg.initial.gaussian {
        let sigma = g
            .sigma_angstrom
            .map_or_else(|| qstate::coherent_width(&r.spec), units::angstrom_to_bohr);
        let p0 = g.k0_per_angstrom * units::consts::BOHR_IN_ANGSTROM;
        return Ok(qstate::gaussian(
            &r.grid,
            units::angstrom_to_bohr(g.x0_angstrom),
            p0,
            sigma,
        )?);
    }
    let s = cfg.initial.superposition.as_ref().expect("validated");
    Ok(qstate::superposition(
        basis,
        s.levels[0],
        s.levels[1],
        s.weights[0],
        s.weights[1],
    )?)
}

fn columns(cfg: &RunConfig) -> ObservableColumns {
    let pairs = match (&cfg.output.pairs, &cfg.initial.superposition) {
        (Some(p), _) => p.iter().map(|p| (p[0], p[1])).collect(),
        (None, Some(s)) => vec![(s.levels[0], s.levels[1])],
        (None, None) => Vec::new(),
    };
    ObservableColumns {
        levels: cfg.output.levels.clone().unwrap_or_default(),
        pairs,
    }
}

fn fit_report(series: &ObservableSeries, fit: &FitSection) -> Value {
    let t: Vec<f64> = series.times.iter().map(|&t| units::au_to_fs(t)).collect();
    match fit_decay(&t, &series.purity, fit.model.into(), fit.window()) {
        Ok(f) => fit_json(&f, "chi", fit),
        Err(e) => json!({ "column": "chi", "error": e.to_string() }),
    }
}

pub fn fit_json(f: &DecayFit, column: &str, fit: &FitSection) -> Value {
    json!({
        "column": column,
        "model": fit.model,
        "t_min_fs": fit.t_min_fs,
        "t_max_fs": fit.t_max_fs,
        "taus_fs": f.taus,
        "tau_errors_fs": f.tau_errors,
        "amplitudes": f.amplitudes,
        "offset": f.offset,
        "correlation": f.correlation,
        "rms_residual": f.rms_residual,
        "points": f.points,
    })
}

fn write_json(w: &mut impl Write, v: &Value) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, v)?;
    w.write_all(b"\n")
}

fn qsd_artifacts(
    cfg: &RunConfig,
    acc: &EnsembleAccumulator,
    out: &mut Writer,
    warnings: &mut Vec<String>,
) -> Result<ObservableSeries, CliError> {
    let series = acc.observables()?;
    let want = |a| cfg.output.artifacts.contains(&a);
    if want(Artifact::Observables) || cfg.mode.runs_oracle() {
        out.file(QSD_OBSERVABLES, |w| {
            export::write_observables(w, &series, &columns(cfg))
        })?;
    }
    let times = acc.snapshot_times();
    if want(Artifact::Densities) && !times.is_empty() {
        let d = acc.snapshot_density();
        out.file("density.csv", |w| {
            export::write_densities(w, &acc.grid, &times, &d)
        })?;
    }
    if want(Artifact::RhoXx) {
        let points = acc.sampled_points();
        for &t in &times {
            let m = acc.density_matrix_xx(t)?;
            let tag = format!("{:.1}", units::au_to_fs(t));
            out.file(&format!("rho_xx_t{tag}fs_re.csv"), |w| {
                export::write_matrix(w, &points, &m, false)
            })?;
            out.file(&format!("rho_xx_t{tag}fs_im.csv"), |w| {
                export::write_matrix(w, &points, &m, true)
            })?;
        }
    }
    if want(Artifact::Trajectories) && !acc.trajectories().is_empty() {
        out.file("trajectories.csv", |w| {
            export::write_trajectories(w, acc.dt, &acc.trajectories())
        })?;
    }
    if let (true, Some(fit)) = (want(Artifact::Fit), &cfg.fit) {
        let v = fit_report(&series, fit);
        out.file("fit_qsd.json", |w| write_json(w, &v))?;
    }
    let edge = acc.max_edge_amplitude();
    if edge > EDGE_LIMIT {
        warnings.push(format!(
            "wavefunction reached the grid edge (relative amplitude {edge:.3e}); enlarge the grid"
        ));
    }
    Ok(series)
}

/// Run `cfg`, writing everything (including the manifest) into `out_dir`.
pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let r = cfg.resolve()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Output {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let mut out = Writer {
        dir: out_dir,
        written: Vec::new(),
    };
    let mut warnings = Vec::new();
    let basis = r.spec.diagonalize(&r.grid, cfg.system.basis_states)?;
    let initial = initial_state(cfg, &r, &basis)?;
    if cfg.output.artifacts.contains(&Artifact::Basis) {
        out.file("basis.csv", |w| export::write_basis(w, &basis))?;
    }
    let projection = qstate::project(&initial, &basis)?;
    let mut extra = serde_json::Map::new();
    extra.insert("initial_residual".into(), json!(projection.residual));

    if cfg.mode.runs_qsd() {
        let acc =
            ensemble::run_ensemble(&initial, &r.spec, Some(&basis), &r.propagator, &r.ensemble)?;
        qsd_artifacts(cfg, &acc, &mut out, &mut warnings)?;
    }

    if cfg.mode.runs_oracle() {
        let ops = lindblad::build_operators(&basis);
        extra.insert("x2_truncation_error".into(), json!(ops.truncation_error));
        let rho0 = DensityMatrix::pure(&projection.coefficients);
        let every = ((cfg.propagation.cadence as f64 * r.propagator.dt / r.oracle_dt).round()
            as usize)
            .max(1);
        let run = lindblad::evolve_master(
            &rho0,
            &ops,
            r.bath.rate(),
            r.oracle_dt,
            r.propagator.t_final,
            every,
        )?;
        let series = ObservableSeries::from_density_matrices(&run)?;
        out.file(ORACLE_OBSERVABLES, |w| {
            export::write_observables(w, &series, &columns(cfg))
        })?;
        if let (true, Some(fit)) = (cfg.output.artifacts.contains(&Artifact::Fit), &cfg.fit) {
            let v = fit_report(&series, fit);
            out.file("fit_oracle.json", |w| write_json(w, &v))?;
        }
    }

    let mut summary = None;
    if matches!(cfg.mode, Mode::Both | Mode::Compare) {
        let q = Table::read(&out_dir.join(QSD_OBSERVABLES))?;
        let o = Table::read(&out_dir.join(ORACLE_OBSERVABLES))?;
        let cols = compare::default_columns(&q, &o);
        let mut result = None;
        out.file(COMPARE_TABLE, |w| {
            let s = compare::compare(&q, &o, &cols, COMPARE_SIGMAS, COMPARE_MIN_FRACTION, w)
                .map_err(|e| io::Error::other(e.to_string()))?;
            result = Some(s);
            Ok(())
        })?;
        summary = result;
    }

    let manifest = Manifest::build(
        cfg,
        out_dir,
        &r,
        &out.written,
        started.elapsed().as_secs_f64(),
        &warnings,
        summary.as_ref(),
        Value::Object(extra),
    )?;
    manifest::write(&manifest, &out_dir.join(MANIFEST))?;

    let report = RunReport {
        out_dir: out_dir.to_path_buf(),
        outputs: out.written,
        compare: summary,
        warnings,
    };
    if cfg.mode == Mode::Compare {
        if let Some(s) = &report.compare {
            if !s.passed {
                let worst = s
                    .quantities
                    .iter()
                    .map(|q| format!("{} {:.1}%", q.name, 100.0 * q.fraction))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(CliError::Threshold(format!(
                    "QSD and oracle disagree beyond {COMPARE_SIGMAS}σ too often: {worst}"
                )));
            }
        }
    }
    Ok(report)
}
