use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use morse_qsd::ensemble::{self, EnsembleConfig};
use morse_qsd::export::{self, ObservableColumns};
use morse_qsd::morse::MorseSpec;
use morse_qsd::qsd::PropagatorConfig;
use morse_qsd::qstate::{self, Grid};
use morse_qsd::units::*;

const SMALL: &str = r#"
[system]
grid_points = 256
basis_states = 12

[initial.superposition]
levels = [0, 3]
weights = [0.5, 0.5]

[bath]
rate = "1e-3 au"

[propagation]
t_final_fs = 60.0
snapshots_fs = [30.0]
cadence = 20

[ensemble]
realizations = 24
seed = 9
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_morse-qsd"))
}

fn run_config(dir: &Path, text: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, text).unwrap();
    bin()
        .arg("run")
        .arg(&cfg)
        .args(args)
        .env_remove("MORSE_QSD_OUT")
        .output()
        .unwrap()
}

fn error_record(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("error record on stderr");
    serde_json::from_str(line).unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn checksums(m: &Value) -> Vec<(String, String)> {
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            (
                o["file"].as_str().unwrap().to_string(),
                o["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn zero_rate_single_member_matches_unitary_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let text = SMALL
        .replace("1e-3 au", "0 au")
        .replace("realizations = 24", "realizations = 1")
        .replace(
            "[system]",
            "[system]\ngrid_points = 1024\nbasis_states = 60",
        )
        .replace("grid_points = 256\nbasis_states = 12\n", "")
        .replace(
            "[initial.superposition]\nlevels = [0, 3]\nweights = [0.5, 0.5]",
            "[initial.gaussian]\nx0_angstrom = 2.4",
        );
    let o = run_config(tmp.path(), &text, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let s = MorseSpec::iodine();
    let g = Grid::standard();
    let basis = s.diagonalize(&g, 60).unwrap();
    let init =
        qstate::gaussian(&g, angstrom_to_bohr(2.4), 0.0, qstate::coherent_width(&s)).unwrap();
    let mut cfg = PropagatorConfig::new(fs_to_au(60.0), 0.0);
    cfg.seed = 9;
    cfg.snapshot_times = vec![fs_to_au(30.0)];
    let acc =
        ensemble::unitary_reference(&init, &s, Some(&basis), &cfg, &EnsembleConfig::new(1, 20))
            .unwrap();
    let mut want = Vec::new();
    export::write_observables(
        &mut want,
        &acc.observables().unwrap(),
        &ObservableColumns::default(),
    )
    .unwrap();
    let got = std::fs::read(out.join("observables_qsd.csv")).unwrap();
    assert!(got == want, "observables differ from the unitary reference");
}

#[test]
fn both_mode_writes_comparison_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    // Top basis levels carry the oracle's truncation error, so only the
    // low ones are written and compared.
    let body = SMALL
        .replace("basis_states = 12", "basis_states = 16")
        .replace("realizations = 24", "realizations = 48");
    let text = format!("mode = \"both\"\n{body}\n[output]\nlevels = [0, 1, 2, 3, 4, 5]\n\n[fit]\nmodel = \"single\"\n");
    let o = run_config(tmp.path(), &text, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "observables_qsd.csv",
        "observables_oracle.csv",
        "compare.csv",
        "density.csv",
        "rho_xx_t30.0fs_re.csv",
        "rho_xx_t30.0fs_im.csv",
        "trajectories.csv",
        "fit_qsd.json",
        "fit_oracle.json",
    ] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        if f.ends_with(".csv") {
            assert!(text.starts_with("# morse-qsd "), "{f}");
        }
    }
    let m = manifest(&out);
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["seed"], 9);
    assert!(m["compare"]["passed"].as_bool().unwrap());
    assert_eq!(m["config"]["oracle"]["dt_fs"], 0.1);
    let cs = checksums(&m);
    assert_eq!(cs.len(), 9);
    assert!(cs.iter().all(|(_, h)| h.len() == 64));

    // The standalone subcommands read these files back.
    let c = bin()
        .arg("compare")
        .arg(out.join("observables_qsd.csv"))
        .arg(out.join("observables_oracle.csv"))
        .output()
        .unwrap();
    assert!(c.status.success());
    let f = bin()
        .arg("fit")
        .arg(out.join("observables_oracle.csv"))
        .output()
        .unwrap();
    assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
    let v: Value = serde_json::from_slice(&f.stdout).unwrap();
    assert!(v["taus_fs"][0].as_f64().unwrap() > 0.0);
}

#[test]
fn artifacts_do_not_depend_on_worker_count_and_manifest_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert!(run_config(
        tmp.path(),
        SMALL,
        &["--out", a.to_str().unwrap(), "--workers", "1"]
    )
    .status
    .success());
    assert!(run_config(
        tmp.path(),
        SMALL,
        &["--out", b.to_str().unwrap(), "--workers", "3"]
    )
    .status
    .success());
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(checksums(&ma), checksums(&mb));
    for (f, _) in checksums(&ma) {
        assert_eq!(
            std::fs::read(a.join(&f)).unwrap(),
            std::fs::read(b.join(&f)).unwrap(),
            "{f}"
        );
    }
    let r = bin()
        .args(["run", "--manifest"])
        .arg(a.join("manifest.json"))
        .arg("--out")
        .arg(&c)
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(checksums(&manifest(&c)), checksums(&ma));
}

#[test]
fn overrides_apply_and_output_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from-env");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let o = bin()
        .arg("run")
        .arg(&cfg)
        .args([
            "--set",
            "ensemble.realizations=2",
            "--set",
            "ensemble.seed=5",
        ])
        .env("MORSE_QSD_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&env_dir);
    assert_eq!(m["realizations"], 2);
    assert_eq!(m["seed"], 5);
}

#[test]
fn thermal_bath_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let text = SMALL
        .replace(
            "rate = \"1e-3 au\"",
            "friction = 0.05\ntemperature_k = 300.0",
        )
        .replace("realizations = 24", "realizations = 2")
        .replace("t_final_fs = 60.0", "t_final_fs = 30.0");
    let o = run_config(tmp.path(), &text, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert!((m["bath"]["xi"].as_f64().unwrap() - 15.0).abs() < 1e-12);
    let ratio = m["bath"]["validity_ratio"].as_f64().unwrap();
    // 4 k_B T / ħω₀ with k_B·300 K = 208.51 cm⁻¹ and ω₀ = 214.36 cm⁻¹.
    assert!((ratio - 3.891).abs() < 2e-3, "{ratio}");
    assert_eq!(m["bath"]["valid"], false);
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_config(tmp.path(), &format!("{SMALL}\nunexpected = true\n"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&o);
    assert_eq!(rec["kind"], "config");
    assert!(rec["message"].as_str().unwrap().contains("unexpected"));

    let guard = SMALL
        .replace(
            "t_final_fs = 60.0",
            "t_final_fs = 60.0\ndiffusion_substeps = 1",
        )
        .replace("1e-3 au", "1 au");
    let o = run_config(tmp.path(), &guard, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_record(&o)["message"]
        .as_str()
        .unwrap()
        .contains("substeps"));

    let o = bin()
        .args(["run", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    // An RK4 step far beyond the stability region blows up the trace.
    let text = format!("mode = \"oracle\"\n{SMALL}\n[oracle]\ndt_fs = 40.0\n")
        .replace("t_final_fs = 60.0", "t_final_fs = 2000.0");
    let o = run_config(tmp.path(), &text, &["--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(error_record(&o)["kind"], "numerical");
}

#[test]
fn failed_comparison_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let q = tmp.path().join("q.csv");
    let o = tmp.path().join("o.csv");
    std::fs::write(
        &q,
        "# morse-qsd observables v1\nt_fs,chi,chi_err\n0e0,1e0,0e0\n1e0,9e-1,1e-3\n2e0,8e-1,1e-3\n",
    )
    .unwrap();
    std::fs::write(
        &o,
        "# morse-qsd observables v1\nt_fs,chi\n0e0,1e0\n1e0,9e-1\n2e0,7e-1\n",
    )
    .unwrap();
    let r = bin().arg("compare").arg(&q).arg(&o).output().unwrap();
    assert_eq!(r.status.code(), Some(4));
    assert_eq!(error_record(&r)["kind"], "threshold");
}

#[test]
fn table1_lists_six_rows() {
    let o = bin().arg("table1").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("1e-4,192,0.209997"));
}
