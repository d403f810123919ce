//! TOML run configuration. See the README for the full schema.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use morse_qsd::ensemble::EnsembleConfig;
use morse_qsd::morse::MorseSpec;
use morse_qsd::observables::{DecayModel, FitWindow};
use morse_qsd::qsd::PropagatorConfig;
use morse_qsd::qstate::Grid;
use morse_qsd::units::{self, BathSpec};

use crate::error::CliError;

pub const OUT_ENV: &str = "MORSE_QSD_OUT";
pub const DEFAULT_OUT: &str = "morse-qsd-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Qsd,
    Oracle,
    Both,
    Compare,
}

impl Mode {
    pub fn runs_qsd(self) -> bool {
        !matches!(self, Mode::Oracle)
    }

    pub fn runs_oracle(self) -> bool {
        !matches!(self, Mode::Qsd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub system: SystemConfig,
    pub initial: InitialConfig,
    pub bath: BathConfig,
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub depth_cm: f64,
    pub alpha_per_angstrom: f64,
    pub x_eq_angstrom: f64,
    /// Mass of the homonuclear molecule; the reduced mass is a quarter of it.
    pub molecule_mass_g: f64,
    pub grid_min_angstrom: f64,
    pub grid_max_angstrom: f64,
    pub grid_points: usize,
    /// Eigenstates kept for coefficient-space observables and the oracle.
    pub basis_states: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            depth_cm: 12547.0,
            alpha_per_angstrom: 1.8576,
            x_eq_angstrom: 2.6663,
            molecule_mass_g: 4.22e-22,
            grid_min_angstrom: 1.6,
            grid_max_angstrom: 6.4,
            grid_points: 1024,
            basis_states: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superposition: Option<SuperpositionInit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianInit {
    pub x0_angstrom: f64,
    #[serde(default)]
    pub k0_per_angstrom: f64,
    /// Defaults to the ground-state coherent width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_angstrom: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionInit {
    pub levels: [usize; 2],
    pub weights: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BathConfig {
    /// Λ with a unit suffix, e.g. "9e-3 A^-2fs^-1".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<String>,
    /// Reduced friction η_e.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    #[serde(default = "default_dt")]
    pub dt_fs: f64,
    pub t_final_fs: f64,
    #[serde(default)]
    pub snapshots_fs: Vec<f64>,
    /// Steps between recorded observables.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_substeps: Option<usize>,
}

fn default_dt() -> f64 {
    0.1
}

fn default_cadence() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    pub realizations: usize,
    pub seed: u64,
    pub batches: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub density_stride: usize,
    pub keep_trajectories: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            realizations: 500,
            seed: 0,
            batches: EnsembleConfig::DEFAULT_BATCHES,
            workers: None,
            density_stride: 4,
            keep_trajectories: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    /// Defaults to the propagation step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_fs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Observables,
    Densities,
    RhoXx,
    Trajectories,
    Basis,
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    pub artifacts: Vec<Artifact>,
    /// Population columns; all levels when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    /// Coherence columns; the superposition pair when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[usize; 2]>>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: None,
            artifacts: vec![
                Artifact::Observables,
                Artifact::Densities,
                Artifact::RhoXx,
                Artifact::Trajectories,
                Artifact::Fit,
            ],
            levels: None,
            pairs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    #[default]
    Single,
    Double,
}

impl From<FitModel> for DecayModel {
    fn from(m: FitModel) -> Self {
        match m {
            FitModel::Single => DecayModel::Single,
            FitModel::Double => DecayModel::Double,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    pub model: FitModel,
    pub t_min_fs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max_fs: Option<f64>,
}

impl FitSection {
    pub fn window(&self) -> FitWindow {
        FitWindow {
            t_min: self.t_min_fs,
            t_max: self.t_max_fs.unwrap_or(f64::INFINITY),
        }
    }
}

/// Apply `key.path=value` overrides to a parsed document. Values are read
/// as TOML when possible and as bare strings otherwise.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (path, raw) = o.split_once('=').ok_or_else(|| {
            CliError::Config(format!("override `{o}` is not of the form key=value"))
        })?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let keys: Vec<&str> = path.trim().split('.').collect();
        let (last, parents) = keys.split_last().expect("split yields one item");
        let mut table = &mut *doc;
        for k in parents {
            let entry = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| {
                CliError::Config(format!("override `{path}`: `{k}` is not a table"))
            })?;
        }
        table.insert(last.to_string(), value);
    }
    Ok(())
}

/// Parse and validate a configuration, rejecting unknown keys.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    parse_with_overrides(text, &[])
}

pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    apply_overrides(&mut doc, overrides)?;
    from_table(doc)
}

fn from_table(doc: toml::Table) -> Result<RunConfig, CliError> {
    let mut unknown = Vec::new();
    let cfg: RunConfig = serde_ignored::deserialize(toml::Value::Table(doc), |path| {
        unknown.push(path.to_string())
    })
    .map_err(|e| CliError::Config(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(CliError::Config(format!(
            "unknown keys: {}",
            unknown.join(", ")
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a run needs, in atomic units.
pub struct Resolved {
    pub spec: MorseSpec,
    pub grid: Grid,
    pub bath: BathSpec,
    pub propagator: PropagatorConfig,
    pub ensemble: EnsembleConfig,
    pub oracle_dt: f64,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let init = &self.initial;
        match (&init.gaussian, &init.superposition) {
            (Some(_), Some(_)) => return Err(CliError::Config(
                "initial state: give exactly one of [initial.gaussian] or [initial.superposition]"
                    .into(),
            )),
            (None, None) => return Err(CliError::Config("initial state missing".into())),
            _ => {}
        }
        let b = &self.bath;
        match (&b.rate, b.friction, b.temperature_k) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => {
                return Err(CliError::Config(
                    "bath: give either `rate` or both `friction` and `temperature_k`, not both"
                        .into(),
                ))
            }
            _ => {
                return Err(CliError::Config(
                    "bath: need `rate`, or both `friction` and `temperature_k`".into(),
                ))
            }
        }
        if let Some(s) = &init.superposition {
            let top = s.levels[0].max(s.levels[1]);
            if top >= self.system.basis_states {
                return Err(CliError::Config(format!(
                    "superposition level {top} needs basis_states > {top}"
                )));
            }
        }
        self.resolve().map(|_| ())
    }

    pub fn spec(&self) -> Result<MorseSpec, CliError> {
        let s = &self.system;
        Ok(MorseSpec::from_lab(
            s.depth_cm,
            s.alpha_per_angstrom,
            s.x_eq_angstrom,
            units::homonuclear_reduced_mass(s.molecule_mass_g),
        )?)
    }

    pub fn bath(&self, spec: &MorseSpec) -> Result<BathSpec, CliError> {
        let b = &self.bath;
        Ok(match (&b.rate, b.friction, b.temperature_k) {
            (Some(r), _, _) => BathSpec::from_rate(units::parse_rate(r)?)?,
            (None, Some(f), Some(t)) => {
                BathSpec::from_friction(f, t, spec.mass(), spec.harmonic_frequency())?
            }
            _ => unreachable!("checked in validate"),
        })
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let spec = self.spec()?;
        let s = &self.system;
        let grid = Grid::from_angstrom(s.grid_min_angstrom, s.grid_max_angstrom, s.grid_points)?;
        let bath = self.bath(&spec)?;
        let p = &self.propagation;
        let propagator = PropagatorConfig {
            dt: units::fs_to_au(p.dt_fs),
            t_final: units::fs_to_au(p.t_final_fs),
            rate: bath.rate(),
            snapshot_times: p.snapshots_fs.iter().map(|&t| units::fs_to_au(t)).collect(),
            renormalize: true,
            seed: self.ensemble.seed,
            diffusion_substeps: p.diffusion_substeps,
        };
        propagator.validate(&grid)?;
        let e = &self.ensemble;
        let ensemble = EnsembleConfig {
            realizations: e.realizations,
            cadence: p.cadence,
            density_stride: e.density_stride,
            batches: e.batches,
            workers: e.workers,
            keep_trajectories: e.keep_trajectories,
        };
        ensemble.validate()?;
        let oracle_dt = units::fs_to_au(self.oracle.dt_fs.unwrap_or(p.dt_fs));
        if !(oracle_dt.is_finite() && oracle_dt > 0.0) {
            return Err(CliError::Config("oracle.dt_fs must be > 0".into()));
        }
        if s.basis_states == 0 {
            return Err(CliError::Config("basis_states must be ≥ 1".into()));
        }
        Ok(Resolved {
            spec,
            grid,
            bath,
            propagator,
            ensemble,
            oracle_dt,
        })
    }

    /// Output directory: explicit override, then the config, then the
    /// environment, then the built-in default.
    pub fn output_dir(&self, cli: Option<PathBuf>) -> PathBuf {
        cli.or_else(|| self.output.directory.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Copy with every defaulted value written out.
    pub fn materialized(&self, out: &std::path::Path) -> RunConfig {
        let mut c = self.clone();
        c.output.directory = Some(out.to_path_buf());
        c.oracle.dt_fs = Some(self.oracle.dt_fs.unwrap_or(self.propagation.dt_fs));
        if let Some(g) = c.initial.gaussian.as_mut() {
            if g.sigma_angstrom.is_none() {
                if let Ok(spec) = self.spec() {
                    g.sigma_angstrom = Some(units::bohr_to_angstrom(
                        morse_qsd::qstate::coherent_width(&spec),
                    ));
                }
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSSIAN: &str = r#"
mode = "qsd"

[initial.gaussian]
x0_angstrom = 2.4

[bath]
rate = "1e-3 au"

[propagation]
t_final_fs = 1600.0
snapshots_fs = [192.0, 640.0, 1600.0]

[ensemble]
realizations = 2500
"#;

    #[test]
    fn gaussian_run_round_trips() {
        let c = parse_config(GAUSSIAN).unwrap();
        assert_eq!(c.ensemble.realizations, 2500);
        assert_eq!(c.propagation.dt_fs, 0.1);
        assert_eq!(c.system, SystemConfig::default());
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        let r = c.resolve().unwrap();
        assert_eq!(r.spec, MorseSpec::iodine());
        assert!((r.bath.rate() - 1e-3).abs() < 1e-18);
        assert_eq!(r.propagator.steps(), 16_000);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let text = format!("{GAUSSIAN}\nbogus = 1\n[system]\ngrid_pts = 512\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(
            err.contains("bogus") && err.contains("system.grid_pts"),
            "{err}"
        );
    }

    #[test]
    fn bath_must_be_exclusive() {
        let both = GAUSSIAN.replace(
            "[bath]\n",
            "[bath]\nfriction = 0.05\ntemperature_k = 300.0\n",
        );
        assert!(matches!(parse_config(&both), Err(CliError::Config(_))));
        let half = GAUSSIAN.replace("rate = \"1e-3 au\"", "friction = 0.05");
        assert!(parse_config(&half).is_err());
        let thermal = GAUSSIAN.replace(
            "rate = \"1e-3 au\"",
            "friction = 0.05\ntemperature_k = 300.0",
        );
        let c = parse_config(&thermal).unwrap();
        let b = c.bath(&c.spec().unwrap()).unwrap();
        assert!((b.xi().unwrap() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn rates_need_a_unit_suffix() {
        let bare = GAUSSIAN.replace("1e-3 au", "1e-3");
        assert!(parse_config(&bare).is_err());
        let lab = GAUSSIAN.replace("1e-3 au", "9e-3 A^-2fs^-1");
        let r = parse_config(&lab).unwrap().resolve().unwrap();
        assert!((r.bath.rate() - units::parse_rate("9e-3 A^-2fs^-1").unwrap()).abs() < 1e-20);
    }

    #[test]
    fn exactly_one_initial_state() {
        let two =
            format!("{GAUSSIAN}\n[initial.superposition]\nlevels = [0, 3]\nweights = [0.5, 0.5]\n");
        assert!(parse_config(&two).is_err());
        let none = GAUSSIAN.replace("[initial.gaussian]\nx0_angstrom = 2.4\n", "");
        assert!(parse_config(&none).is_err());
    }

    #[test]
    fn stability_guard_reports_bound() {
        let text = GAUSSIAN
            .replace(
                "t_final_fs = 1600.0",
                "t_final_fs = 1600.0\ndiffusion_substeps = 1",
            )
            .replace("1e-3 au", "0.5 au");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(
            err.contains("stability guard") && err.contains("substeps"),
            "{err}"
        );
    }

    #[test]
    fn overrides_take_precedence() {
        let over = [
            "ensemble.realizations=8".to_string(),
            "bath.rate=2e-3 au".to_string(),
            "mode=\"both\"".to_string(),
        ];
        let c = parse_with_overrides(GAUSSIAN, &over).unwrap();
        assert_eq!(c.ensemble.realizations, 8);
        assert_eq!(c.bath.rate.as_deref(), Some("2e-3 au"));
        assert_eq!(c.mode, Mode::Both);
        assert!(parse_with_overrides(GAUSSIAN, &["nonsense".into()]).is_err());
        assert!(parse_with_overrides(GAUSSIAN, &["ensemble.nope=1".into()]).is_err());
    }
}
