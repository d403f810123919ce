//! Purity, populations, coherences, coherence length and decay-time fits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lindblad::{hermiticity_error, DensityMatrix};

pub const HERMITICITY_TOLERANCE: f64 = 1e-8;

/// Position of (i, j), i < j, in the packed list of K(K−1)/2 pairs.
pub fn pair_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * (2 * k - i - 1) / 2 + (j - i - 1)
}

pub fn pair_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// χ = Σ|ρ_ij|² for Hermitian ρ.
pub fn purity(rho: &DMatrix<Complex64>) -> Result<f64> {
    let h = hermiticity_error(rho);
    if h > HERMITICITY_TOLERANCE {
        return Err(Error::NotHermitian(h));
    }
    Ok(purity_unchecked(rho))
}

pub(crate) fn purity_unchecked(rho: &DMatrix<Complex64>) -> f64 {
    rho.iter().map(|c| c.norm_sqr()).sum()
}

pub fn populations(rho: &DMatrix<Complex64>) -> Vec<f64> {
    (0..rho.nrows()).map(|i| rho[(i, i)].re).collect()
}

/// ζ_ij = |ρ_ij|² for i < j, packed by [`pair_index`].
pub fn coherences(rho: &DMatrix<Complex64>) -> Vec<f64> {
    let k = rho.nrows();
    let mut out = Vec::with_capacity(pair_count(k));
    for i in 0..k {
        for j in i + 1..k {
            out.push(rho[(i, j)].norm_sqr());
        }
    }
    out
}

/// ℓ = (8Λt)^{−1/2}; infinite when Λt = 0.
pub fn coherence_length(rate: f64, t: f64) -> Result<f64> {
    if !(rate >= 0.0 && t >= 0.0 && rate.is_finite() && t.is_finite()) {
        return Err(Error::Domain(format!(
            "coherence length needs Λ ≥ 0 and t ≥ 0, got Λ = {rate}, t = {t}"
        )));
    }
    let lt = rate * t;
    if lt == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((8.0 * lt).powf(-0.5))
}

/// Standard errors matching the fields of [`ObservableSeries`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesErrors {
    pub purity: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    pub coherences: Vec<Vec<f64>>,
    pub mean_x: Vec<f64>,
}

/// Time series of energy-basis observables. Times in a.u.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub purity: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    pub coherences: Vec<Vec<f64>>,
    /// Weight outside the truncated basis, 1 − Tr ρ.
    pub residual: Vec<f64>,
    pub mean_x: Option<Vec<f64>>,
    pub errors: Option<SeriesErrors>,
}

impl ObservableSeries {
    pub fn from_density_matrices(series: &[DensityMatrix]) -> Result<Self> {
        let mut out = ObservableSeries::default();
        for d in series {
            out.push(d.time, &d.rho)?;
        }
        Ok(out)
    }

    pub(crate) fn push(&mut self, time: f64, rho: &DMatrix<Complex64>) -> Result<()> {
        self.times.push(time);
        self.purity.push(purity(rho)?);
        let p = populations(rho);
        self.residual.push(1.0 - p.iter().sum::<f64>());
        self.populations.push(p);
        self.coherences.push(coherences(rho));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn basis_size(&self) -> usize {
        self.populations.first().map_or(0, |p| p.len())
    }

    pub fn population(&self, i: usize) -> Vec<f64> {
        self.populations.iter().map(|p| p[i]).collect()
    }

    pub fn coherence(&self, i: usize, j: usize) -> Vec<f64> {
        let (i, j) = (i.min(j), i.max(j));
        let k = self.basis_size();
        let idx = pair_index(i, j, k);
        self.coherences.iter().map(|c| c[idx]).collect()
    }

    /// Levels outside `initial` in the order their populations first
    /// reach `threshold`, with the crossing time.
    pub fn occupation_order(&self, initial: &[usize], threshold: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = (0..self.basis_size())
            .filter(|i| !initial.contains(i))
            .filter_map(|i| {
                self.populations
                    .iter()
                    .position(|p| p[i] >= threshold)
                    .map(|s| (i, self.times[s]))
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Times of samples that are the largest value within ±`half_window`, i.e.
/// the crests of an oscillation with ripples shorter than the window.
pub fn windowed_maxima(t: &[f64], x: &[f64], half_window: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut lo = 0;
    for i in 0..x.len() {
        while t[lo] < t[i] - half_window {
            lo += 1;
        }
        // Crests closer than a full window to the end are not confirmed.
        if t[i] - t[0] < half_window || t[x.len() - 1] - t[i] < half_window {
            continue;
        }
        let is_max = (lo..x.len())
            .take_while(|&j| t[j] <= t[i] + half_window)
            .all(|j| x[j] < x[i] || (x[j] == x[i] && j >= i));
        if is_max {
            out.push(t[i]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayModel {
    /// a·e^{−t/τ} + c
    Single,
    /// a·e^{−t/τ₁} + b·e^{−t/τ₂} + c with τ₁ < τ₂
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    pub t_min: f64,
    pub t_max: f64,
}

impl FitWindow {
    pub fn from(t_min: f64) -> Self {
        FitWindow {
            t_min,
            t_max: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub model: DecayModel,
    pub amplitudes: Vec<f64>,
    /// Decay times, fastest first, in the units of the input times.
    pub taus: Vec<f64>,
    /// Asymptotic standard errors of `taus` from the fit Jacobian.
    pub tau_errors: Vec<f64>,
    pub offset: f64,
    /// Pearson correlation between data and fitted curve.
    pub correlation: f64,
    pub rms_residual: f64,
    pub points: usize,
}

impl DecayFit {
    pub fn evaluate(&self, t: f64) -> f64 {
        self.offset
            + self
                .amplitudes
                .iter()
                .zip(&self.taus)
                .map(|(a, tau)| a * (-t / tau).exp())
                .sum::<f64>()
    }
}

pub const MIN_FIT_POINTS: usize = 10;
const MAX_ITERATIONS: usize = 500;

/// Least-squares fit of a decaying exponential model to (t, y) within
/// `window`. Times are shifted to the window start internally, and
/// amplitudes are reported for the unshifted times.
pub fn fit_decay(t: &[f64], y: &[f64], model: DecayModel, window: FitWindow) -> Result<DecayFit> {
    if t.len() != y.len() {
        return Err(Error::Fit(format!(
            "{} times but {} values",
            t.len(),
            y.len()
        )));
    }
    let (ts, ys): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(&ti, _)| ti >= window.t_min && ti <= window.t_max)
        .map(|(&a, &b)| (a, b))
        .unzip();
    if ts.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} points in window, need at least {MIN_FIT_POINTS}",
            ts.len()
        )));
    }
    if ys.iter().chain(&ts).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite data in window".into()));
    }
    let t0 = ts[0];
    let u: Vec<f64> = ts.iter().map(|v| v - t0).collect();
    let span = u[u.len() - 1];
    if span <= 0.0 {
        return Err(Error::Fit("window has zero time span".into()));
    }
    let (mut params, taus_idx) = match model {
        DecayModel::Single => (fit_single(&u, &ys, span)?, vec![1]),
        DecayModel::Double => (fit_double(&u, &ys, span)?, vec![1, 3]),
    };
    // Polish all parameters together and get the covariance.
    let cov = levenberg_marquardt(&u, &ys, &mut params, model)?;
    let mut terms: Vec<(f64, f64, f64)> = taus_idx
        .iter()
        .map(|&k| {
            let tau = params[k];
            let err = cov.as_ref().map_or(f64::NAN, |c| c[(k, k)].max(0.0).sqrt());
            // Undo the shift: a·e^{−(t−t₀)/τ} = a·e^{t₀/τ}·e^{−t/τ}.
            (params[k - 1] * (t0 / tau).exp(), tau, err)
        })
        .collect();
    terms.sort_by(|a, b| a.1.total_cmp(&b.1));
    if terms
        .iter()
        .any(|&(_, tau, _)| !(tau > 0.0 && tau.is_finite()))
    {
        return Err(Error::Fit("fitted decay time is not positive".into()));
    }
    if model == DecayModel::Double && terms[0].1 >= terms[1].1 {
        return Err(Error::Fit(
            "double-exponential fit collapsed to one time scale".into(),
        ));
    }
    let offset = *params.last().unwrap();
    let fitted: Vec<f64> = u
        .iter()
        .map(|&ui| model_value(&params, model, ui))
        .collect();
    let rms = (fitted
        .iter()
        .zip(&ys)
        .map(|(f, v)| (f - v) * (f - v))
        .sum::<f64>()
        / ys.len() as f64)
        .sqrt();
    Ok(DecayFit {
        model,
        amplitudes: terms.iter().map(|x| x.0).collect(),
        taus: terms.iter().map(|x| x.1).collect(),
        tau_errors: terms.iter().map(|x| x.2).collect(),
        offset,
        correlation: pearson(&ys, &fitted),
        rms_residual: rms,
        points: ys.len(),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return if saa == sbb { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

/// Linear least squares for fixed decay times: returns (coefficients, SSR).
/// Columns are e^{−u/τ_k} followed by a constant.
fn linear_part(u: &[f64], y: &[f64], taus: &[f64]) -> Option<(Vec<f64>, f64)> {
    let m = taus.len() + 1;
    let a = DMatrix::from_fn(u.len(), m, |r, c| {
        if c < taus.len() {
            (-u[r] / taus[c]).exp()
        } else {
            1.0
        }
    });
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-13).ok()?;
    let r = &a * &x - &b;
    Some((x.iter().copied().collect(), r.norm_squared()))
}

fn fit_single(u: &[f64], y: &[f64], span: f64) -> Result<Vec<f64>> {
    let ssr = |log_tau: f64| linear_part(u, y, &[log_tau.exp()]).map_or(f64::INFINITY, |(_, s)| s);
    let (lo, hi) = ((span * 1e-3).ln(), (span * 1e3).ln());
    let n = 240;
    let grid: Vec<f64> = (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&g| ssr(g)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(n)];
    let log_tau = golden_section(ssr, a, b, 1e-12);
    let tau = log_tau.exp();
    let (coef, _) =
        linear_part(u, y, &[tau]).ok_or_else(|| Error::Fit("singular design".into()))?;
    Ok(vec![coef[0], tau, coef[1]])
}

fn fit_double(u: &[f64], y: &[f64], span: f64) -> Result<Vec<f64>> {
    // Smallest resolvable time scale is a few sample spacings.
    let du = u
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((du.max(span * 1e-4)).ln(), (span * 1e2).ln());
    let n = 48;
    let g: Vec<f64> = (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .collect();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=n {
        for j in i + 2..=n {
            let taus = [g[i].exp(), g[j].exp()];
            if let Some((_, s)) = linear_part(u, y, &taus) {
                if s < best.0 {
                    best = (s, taus[0], taus[1]);
                }
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Fit("no admissible double-exponential seed".into()));
    }
    let taus = [best.1, best.2];
    let (c, _) = linear_part(u, y, &taus).ok_or_else(|| Error::Fit("singular design".into()))?;
    Ok(vec![c[0], taus[0], c[1], taus[1], c[2]])
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn model_value(p: &[f64], model: DecayModel, u: f64) -> f64 {
    match model {
        DecayModel::Single => p[0] * (-u / p[1]).exp() + p[2],
        DecayModel::Double => p[0] * (-u / p[1]).exp() + p[2] * (-u / p[3]).exp() + p[4],
    }
}

fn jacobian_row(p: &[f64], model: DecayModel, u: f64) -> Vec<f64> {
    let term = |a: f64, tau: f64| {
        let e = (-u / tau).exp();
        [e, a * e * u / (tau * tau)]
    };
    match model {
        DecayModel::Single => {
            let t = term(p[0], p[1]);
            vec![t[0], t[1], 1.0]
        }
        DecayModel::Double => {
            let t1 = term(p[0], p[1]);
            let t2 = term(p[2], p[3]);
            vec![t1[0], t1[1], t2[0], t2[1], 1.0]
        }
    }
}

fn ssr_of(u: &[f64], y: &[f64], p: &[f64], model: DecayModel) -> f64 {
    u.iter()
        .zip(y)
        .map(|(&ui, &yi)| {
            let r = model_value(p, model, ui) - yi;
            r * r
        })
        .sum()
}

/// Damped Gauss–Newton refinement. Returns the parameter covariance
/// s²(JᵀJ)⁻¹ when it is well defined.
fn levenberg_marquardt(
    u: &[f64],
    y: &[f64],
    p: &mut Vec<f64>,
    model: DecayModel,
) -> Result<Option<DMatrix<f64>>> {
    let m = p.len();
    let mut lambda = 1e-3;
    let mut ssr = ssr_of(u, y, p, model);
    let build = |p: &[f64]| {
        let mut jtj = DMatrix::<f64>::zeros(m, m);
        let mut jtr = DVector::<f64>::zeros(m);
        for (&ui, &yi) in u.iter().zip(y) {
            let row = jacobian_row(p, model, ui);
            let r = yi - model_value(p, model, ui);
            for a in 0..m {
                jtr[a] += row[a] * r;
                for b in 0..m {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        (jtj, jtr)
    };
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (jtj, jtr) = build(p);
        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for a in 0..m {
                damped[(a, a)] += lambda * jtj[(a, a)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            let taus_ok = match model {
                DecayModel::Single => trial[1] > 0.0,
                DecayModel::Double => trial[1] > 0.0 && trial[3] > 0.0,
            };
            let s = if taus_ok {
                ssr_of(u, y, &trial, model)
            } else {
                f64::INFINITY
            };
            if s <= ssr {
                let rel = (ssr - s) / ssr.max(f64::MIN_POSITIVE);
                let small_step = step
                    .iter()
                    .zip(p.iter())
                    .all(|(d, v)| d.abs() <= 1e-12 * v.abs().max(1e-300));
                *p = trial;
                ssr = s;
                lambda = (lambda * 0.3).max(1e-15);
                improved = true;
                if rel < 1e-15 || small_step || ssr == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if converged || !improved {
            // No downhill step at any damping: already at the minimum to
            // working precision.
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "no convergence after {MAX_ITERATIONS} iterations (rms residual {:.3e})",
            (ssr / u.len() as f64).sqrt()
        )));
    }
    let (jtj, _) = build(p);
    let dof = u.len().saturating_sub(m).max(1) as f64;
    Ok(jtj.try_inverse().map(|inv| inv * (ssr / dof)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(p: &[f64]) -> DMatrix<Complex64> {
        DMatrix::from_fn(p.len(), p.len(), |i, j| {
            Complex64::new(if i == j { p[i] } else { 0.0 }, 0.0)
        })
    }

    #[test]
    fn purity_examples() {
        let c = [Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)];
        let pure = DensityMatrix::pure(&c).rho;
        assert!((purity(&pure).unwrap() - 1.0).abs() < 1e-15);
        assert!((purity(&diag(&[0.5, 0.5])).unwrap() - 0.5).abs() < 1e-15);
        let p = [0.1, 0.2, 0.3, 0.4];
        assert!((purity(&diag(&p)).unwrap() - 0.3).abs() < 1e-15);
        let mut bad = pure.clone();
        bad[(0, 1)] += Complex64::new(1e-6, 0.0);
        assert!(purity(&bad).is_err());
    }

    #[test]
    fn populations_and_coherences_of_superposition() {
        let mut c = vec![Complex64::new(0.0, 0.0); 5];
        c[0] = Complex64::new(0.4f64.sqrt(), 0.0);
        c[3] = Complex64::new(0.6f64.sqrt(), 0.0);
        let r = DensityMatrix::pure(&c).rho;
        let p = populations(&r);
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[3] - 0.6).abs() < 1e-15);
        let z = coherences(&r);
        assert_eq!(z.len(), 10);
        assert!((z[pair_index(0, 3, 5)] - 0.24).abs() < 1e-15);
        assert_eq!(z.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn pair_index_is_dense() {
        let k = 7;
        let mut seen = vec![false; pair_count(k)];
        for i in 0..k {
            for j in i + 1..k {
                let idx = pair_index(i, j, k);
                assert!(!seen[idx]);
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn coherence_length_table() {
        use crate::units::{bohr_to_angstrom, fs_to_au};
        let l = |rate: f64, t_fs: f64| {
            bohr_to_angstrom(coherence_length(rate, fs_to_au(t_fs)).unwrap())
        };
        assert!((l(1e-4, 192.0) - 0.21).abs() < 0.005);
        assert!((l(1e-4, 1600.0) - 0.073).abs() < 0.0005);
        assert!((l(1e-3, 192.0) - 0.066).abs() < 0.0005);
        assert!(coherence_length(0.0, 1.0).unwrap().is_infinite());
        assert!(coherence_length(-1.0, 1.0).is_err());
        let a = coherence_length(1e-3, 50.0).unwrap();
        let b = coherence_length(4e-3, 50.0).unwrap();
        assert!((a / b - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_single_exponential_recovered() {
        let t: Vec<f64> = (0..400).map(|k| k as f64 * 2.0).collect();
        let y: Vec<f64> = t.iter().map(|&t| 0.7 * (-t / 111.0).exp() + 0.3).collect();
        let f = fit_decay(&t, &y, DecayModel::Single, FitWindow::from(20.0)).unwrap();
        assert!(((f.taus[0] - 111.0) / 111.0).abs() < 1e-6, "{:?}", f.taus);
        assert!((f.offset - 0.3).abs() < 1e-8);
        assert!((f.amplitudes[0] - 0.7).abs() < 1e-6);
        assert!(f.correlation > 1.0 - 1e-12);
    }

    #[test]
    fn double_exponential_separates_time_scales() {
        let t: Vec<f64> = (0..600).map(|k| k as f64 * 2.0).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&t| 0.3 * (-t / 61.0).exp() + 0.4 * (-t / 998.0).exp() + 0.3)
            .collect();
        let d = fit_decay(&t, &y, DecayModel::Double, FitWindow::from(0.0)).unwrap();
        assert!(((d.taus[0] - 61.0) / 61.0).abs() < 1e-5, "{:?}", d.taus);
        assert!(((d.taus[1] - 998.0) / 998.0).abs() < 1e-5, "{:?}", d.taus);
        let s = fit_decay(&t, &y, DecayModel::Single, FitWindow::from(0.0)).unwrap();
        assert!(d.correlation > s.correlation);
    }

    #[test]
    fn fit_rejects_short_window() {
        let t: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let y: Vec<f64> = t.iter().map(|&t| (-t / 5.0).exp()).collect();
        assert!(matches!(
            fit_decay(
                &t,
                &y,
                DecayModel::Single,
                FitWindow {
                    t_min: 25.0,
                    t_max: 40.0
                }
            ),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn occupation_order_by_first_crossing() {
        let mk = |p: Vec<f64>| diag(&p);
        let series = [
            DensityMatrix {
                rho: mk(vec![0.5, 0.0, 0.5, 0.0]),
                time: 0.0,
            },
            DensityMatrix {
                rho: mk(vec![0.45, 0.0, 0.45, 0.1]),
                time: 1.0,
            },
            DensityMatrix {
                rho: mk(vec![0.4, 0.1, 0.4, 0.1]),
                time: 2.0,
            },
        ];
        let s = ObservableSeries::from_density_matrices(&series).unwrap();
        assert_eq!(s.occupation_order(&[0, 2], 0.01), vec![(3, 1.0), (1, 2.0)]);
    }
}
