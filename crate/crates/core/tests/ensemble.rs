use std::sync::OnceLock;

use morse_qsd::ensemble::{self, EnsembleAccumulator, EnsembleConfig};
use morse_qsd::morse::{MorseBasis, MorseSpec};
use morse_qsd::observables;
use morse_qsd::qsd::{self, Propagator, PropagatorConfig, UnitaryPropagator};
use morse_qsd::qstate::{self, Grid, GridState};
use morse_qsd::units::*;
use morse_qsd::{Complex64, Error};
use nalgebra::DMatrix;

fn basis() -> &'static MorseBasis {
    static B: OnceLock<MorseBasis> = OnceLock::new();
    B.get_or_init(|| {
        let g = Grid::from_angstrom(1.6, 6.4, 256).unwrap();
        MorseSpec::iodine().diagonalize(&g, 12).unwrap()
    })
}

fn psi03() -> GridState {
    qstate::superposition(basis(), 0, 3, 0.5, 0.5).unwrap()
}

fn config(t_fs: f64, rate: f64) -> PropagatorConfig {
    let mut c = PropagatorConfig::new(fs_to_au(t_fs), rate);
    c.seed = 42;
    c.snapshot_times = vec![fs_to_au(t_fs / 2.0), fs_to_au(t_fs)];
    c
}

fn run(_n: usize, cfg: &PropagatorConfig, ens: &EnsembleConfig) -> EnsembleAccumulator {
    ensemble::run_ensemble(&psi03(), &MorseSpec::iodine(), Some(basis()), cfg, ens).unwrap()
}

#[test]
fn single_member_equals_its_realization() {
    let cfg = config(20.0, 1e-3);
    let ens = EnsembleConfig::new(1, 10);
    let acc = run(1, &cfg, &ens);
    let mut p = Propagator::new(&MorseSpec::iodine(), basis().grid(), &cfg).unwrap();
    let r = p.realization(&psi03(), 0, 10, Some(basis())).unwrap();
    let coeffs = r.coefficients.unwrap();
    let rhos = acc.density_matrices();
    assert_eq!(rhos.len(), coeffs.len());
    for (rho, c) in rhos.iter().zip(&coeffs) {
        for i in 0..c.len() {
            for j in 0..c.len() {
                assert!((rho[(i, j)] - c[i] * c[j].conj()).norm() < 1e-15);
            }
        }
    }
    let (mx, _) = acc.mean_position();
    assert_eq!(mx.last(), r.mean_x.last());
    assert_eq!(acc.trajectories()[0].1, r.mean_x.as_slice());
    let final_density: Vec<f64> = r.final_state.psi.iter().map(|c| c.norm_sqr()).collect();
    assert_eq!(acc.snapshot_density()[1], final_density);
}

#[test]
fn worker_count_and_merge_do_not_change_results() {
    let cfg = config(10.0, 2e-3);
    let mut ens = EnsembleConfig::new(24, 20);
    ens.workers = Some(1);
    let a = run(24, &cfg, &ens);
    ens.workers = Some(3);
    let b = run(24, &cfg, &ens);
    assert_eq!(a, b);
    ens.batches = 5;
    let c = run(24, &cfg, &ens);
    assert_eq!(c.count(), 24);
    assert_eq!(c.batches.len(), 5);

    // Concatenation is exactly associative.
    let parts: Vec<EnsembleAccumulator> = [1, 2, 3]
        .iter()
        .map(|&s| {
            let mut cf = cfg.clone();
            cf.seed = s;
            run(4, &cf, &EnsembleConfig::new(4, 20))
        })
        .collect();
    let mut left = parts[0].clone();
    left.merge(parts[1].clone()).unwrap();
    left.merge(parts[2].clone()).unwrap();
    let mut bc = parts[1].clone();
    bc.merge(parts[2].clone()).unwrap();
    let mut right = parts[0].clone();
    right.merge(bc).unwrap();
    assert_eq!(left.density_matrices(), right.density_matrices());
    assert_eq!(left.observables().unwrap(), right.observables().unwrap());
    assert_eq!(left.count(), 12);

    let other = run(4, &config(20.0, 2e-3), &EnsembleConfig::new(4, 20));
    assert!(left.merge(other).is_err());
}

#[test]
fn averaged_density_matrix_is_a_state() {
    let cfg = config(30.0, 5e-3);
    let acc = run(40, &cfg, &EnsembleConfig::new(40, 30));
    let obs = acc.observables().unwrap();
    for (slot, rho) in acc.density_matrices().iter().enumerate() {
        let herm = (rho - rho.adjoint()).norm();
        assert!(herm < 1e-14);
        let ev = rho.clone().symmetric_eigen().eigenvalues;
        assert!(ev.min() > -1e-12, "{}", ev.min());
        let tr: f64 = rho.diagonal().iter().map(|c| c.re).sum();
        assert!((tr + obs.residual[slot] - 1.0).abs() < 1e-10);
        assert!(obs.purity[slot] <= 1.0 + 1e-12);
    }
    let errs = obs.errors.unwrap();
    assert!(errs.purity[1..].iter().all(|e| e.is_finite() && *e > 0.0));
}

#[test]
fn zero_rate_keeps_purity_and_matches_unitary_reference() {
    let cfg = config(30.0, 0.0);
    let ens = EnsembleConfig::new(6, 30);
    let acc = run(6, &cfg, &ens);
    let obs = acc.observables().unwrap();
    for (chi, r) in obs.purity.iter().zip(&obs.residual) {
        // Pure state in the truncated basis: χ = (1 − residual)².
        assert!((chi - (1.0 - r).powi(2)).abs() < 1e-8, "{chi}");
        assert!(*r < 1e-8);
    }
    let reference =
        ensemble::unitary_reference(&psi03(), &MorseSpec::iodine(), Some(basis()), &cfg, &ens)
            .unwrap();
    let want = reference.density_matrices();
    for (a, b) in acc.density_matrices().iter().zip(&want) {
        assert!((a - b).norm() < 1e-13);
    }
    for (a, b) in acc.snapshot_density()[1]
        .iter()
        .zip(&reference.snapshot_density()[1])
    {
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
    }
}

#[test]
fn position_density_matrix_symmetries() {
    let cfg = config(20.0, 5e-3);
    let acc = run(16, &cfg, &EnsembleConfig::new(16, 50));
    let t = acc.snapshot_times()[0];
    let rho = acc.density_matrix_xx(t).unwrap();
    let diag = &acc.snapshot_density()[0];
    let stride = acc.density_stride;
    for a in 0..rho.nrows() {
        assert_eq!(rho[(a, a)].im, 0.0);
        assert!((rho[(a, a)].re - diag[a * stride]).abs() < 1e-15);
        for b in 0..rho.ncols() {
            assert_eq!(rho[(a, b)], rho[(b, a)].conj());
            // Cauchy–Schwarz for a positive kernel.
            assert!(
                rho[(a, b)].norm_sqr() <= rho[(a, a)].re * rho[(b, b)].re * (1.0 + 1e-12) + 1e-300
            );
        }
    }
    let dx = acc.grid.dx();
    let norm: f64 = diag.iter().sum::<f64>() * dx;
    assert!((norm - 1.0).abs() < 1e-10);
    assert!(matches!(
        acc.density_matrix_xx(fs_to_au(3.0)),
        Err(Error::UnknownSnapshot(_))
    ));
}

#[test]
fn standard_errors_scale_as_inverse_root_n() {
    let cfg = config(40.0, 5e-3);
    let err = |n: usize| {
        let obs = run(n, &cfg, &EnsembleConfig::new(n, 100))
            .observables()
            .unwrap();
        let e = obs.errors.unwrap();
        e.purity[1..].iter().sum::<f64>() / (e.purity.len() - 1) as f64
    };
    let r = err(64) / err(256);
    assert!((1.3..=3.0).contains(&r), "{r}");
}

fn mean_x(psi: &[Complex64], g: &Grid) -> f64 {
    let (mut w, mut n) = (0.0, 0.0);
    for (j, c) in psi.iter().enumerate() {
        w += g.point(j) * c.norm_sqr();
        n += c.norm_sqr();
    }
    w / n
}

fn qsd_step(
    u: &mut UnitaryPropagator,
    psi: &mut [Complex64],
    g: &Grid,
    rate: f64,
    dxi: Complex64,
    dt: f64,
) {
    u.step(psi);
    let x = mean_x(psi, g);
    let norm = qsd::diffusive_step(psi, g, rate, x, dxi, dt);
    psi.iter_mut().for_each(|c| *c /= norm);
}

#[test]
fn halving_dt_leaves_purity_unchanged() {
    // Coupled paths: each coarse increment is the sum of the two fine ones,
    // so the comparison measures the time-step bias rather than the noise.
    let s = MorseSpec::iodine();
    let b = basis();
    let g = *b.grid();
    let rate = parse_rate("9e-3 A^-2fs^-1").unwrap();
    let dt = fs_to_au(0.1);
    let steps = 5000;
    let n = 64;
    let mut coarse = UnitaryPropagator::new(&s, &g, dt);
    let mut fine = UnitaryPropagator::new(&s, &g, 0.5 * dt);
    let k = b.len();
    let mut rho_c = DMatrix::<Complex64>::zeros(k, k);
    let mut rho_f = DMatrix::<Complex64>::zeros(k, k);
    for i in 0..n {
        let mut rng = qsd::realization_rng(3, i);
        let mut pc = psi03().psi;
        let mut pf = pc.clone();
        for _ in 0..steps {
            let d1 = qsd::wiener_increment(&mut rng, 0.5 * dt);
            let d2 = qsd::wiener_increment(&mut rng, 0.5 * dt);
            qsd_step(&mut fine, &mut pf, &g, rate, d1, 0.5 * dt);
            qsd_step(&mut fine, &mut pf, &g, rate, d2, 0.5 * dt);
            qsd_step(&mut coarse, &mut pc, &g, rate, d1 + d2, dt);
        }
        for (rho, psi) in [(&mut rho_c, pc), (&mut rho_f, pf)] {
            let c = qstate::project(&GridState::new(g, psi).unwrap(), b)
                .unwrap()
                .coefficients;
            *rho += DMatrix::from_fn(k, k, |i, j| c[i] * c[j].conj());
        }
    }
    let scale = Complex64::new(1.0 / n as f64, 0.0);
    let a = observables::purity(&(rho_c * scale)).unwrap();
    let f = observables::purity(&(rho_f * scale)).unwrap();
    assert!(a < 0.99, "{a}");
    assert!(((a - f) / f).abs() < 0.01, "{a} vs {f}");
}

#[test]
fn invalid_ensembles_are_rejected() {
    let cfg = config(5.0, 1e-3);
    let s = MorseSpec::iodine();
    let bad = EnsembleConfig::new(0, 1);
    assert!(matches!(
        ensemble::run_ensemble(&psi03(), &s, Some(basis()), &cfg, &bad),
        Err(Error::Config(_))
    ));
    let mut w = EnsembleConfig::new(2, 1);
    w.workers = Some(0);
    assert!(ensemble::run_ensemble(&psi03(), &s, Some(basis()), &cfg, &w).is_err());
    let other = qstate::gaussian(&Grid::standard(), angstrom_to_bohr(2.7), 0.0, 0.1).unwrap();
    assert!(matches!(
        ensemble::run_ensemble(&other, &s, Some(basis()), &cfg, &EnsembleConfig::new(2, 1)),
        Err(Error::GridMismatch)
    ));
}
