//! Wavefunctions on a uniform periodic grid.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::morse::{MorseBasis, MorseSpec};
use crate::spectral::{self, FftPair};
use crate::units;

/// Uniform grid over the periodic cell [x_min, x_max); points sit at
/// x_min + j·dx for j < n. Stored in bohr.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n: usize,
}

impl Grid {
    pub const MIN_POINTS: usize = 64;

    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::InvalidGrid(format!(
                "need x_max > x_min, got [{x_min}, {x_max}]"
            )));
        }
        if n < Self::MIN_POINTS || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "point count must be a power of two ≥ {}, got {n}",
                Self::MIN_POINTS
            )));
        }
        Ok(Grid { x_min, x_max, n })
    }

    pub fn from_angstrom(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        Self::new(
            units::angstrom_to_bohr(x_min),
            units::angstrom_to_bohr(x_max),
            n,
        )
    }

    /// [1.6, 6.4] Å with 1024 points.
    pub fn standard() -> Self {
        Self::from_angstrom(1.6, 6.4, 1024).expect("standard grid is valid")
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.point(j)).collect()
    }
}

/// Complex amplitudes on a [`Grid`] at time `time` (a.u.).
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub grid: Grid,
    pub psi: Vec<Complex64>,
    pub time: f64,
}

/// Edge amplitudes above this fraction of the peak count as wraparound.
pub const EDGE_LIMIT: f64 = 1e-6;

impl GridState {
    pub fn new(grid: Grid, psi: Vec<Complex64>) -> Result<Self> {
        if psi.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} amplitudes for a {}-point grid",
                psi.len(),
                grid.len()
            )));
        }
        Ok(GridState {
            grid,
            psi,
            time: 0.0,
        })
    }

    pub fn from_real(grid: Grid, values: &[f64]) -> Result<Self> {
        Self::new(
            grid,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn norm_sqr(&self) -> f64 {
        spectral::norm_sqr(&self.psi, self.grid.dx())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        let inv = 1.0 / n;
        self.psi.iter_mut().for_each(|c| *c *= inv);
        n
    }

    pub fn density(&self) -> Vec<f64> {
        self.psi.iter().map(|c| c.norm_sqr()).collect()
    }

    /// ⟨x̂⟩ per unit norm, in bohr.
    pub fn expectation_x(&self) -> f64 {
        mean_position(&self.psi, &self.grid)
    }

    /// ⟨p̂⟩ per unit norm, in a.u.
    pub fn expectation_p(&self) -> f64 {
        let fft = FftPair::new(self.grid.len());
        spectral::momentum_expectation(&self.psi, &self.grid, &fft) / self.norm_sqr()
    }

    /// ⟨Ĥ⟩ per unit norm for the Morse Hamiltonian, kinetic part spectral.
    pub fn expectation_h(&self, spec: &MorseSpec) -> f64 {
        let fft = FftPair::new(self.grid.len());
        self.expectation_h_with(spec, &fft)
    }

    pub fn expectation_h_with(&self, spec: &MorseSpec, fft: &FftPair) -> f64 {
        let dx = self.grid.dx();
        let t = spectral::kinetic_expectation(&self.psi, &self.grid, spec.mass(), fft);
        let v: f64 = self
            .psi
            .iter()
            .enumerate()
            .map(|(j, c)| c.norm_sqr() * spec.potential(self.grid.point(j)))
            .sum::<f64>()
            * dx;
        (t + v) / self.norm_sqr()
    }

    /// Largest |ψ| at the two outermost points relative to the peak |ψ|.
    pub fn edge_amplitude(&self) -> f64 {
        relative_edge(self.psi.iter().map(|c| c.norm()))
    }

    pub fn dot(&self, other: &GridState) -> Result<Complex64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let s: Complex64 = self
            .psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.grid.dx())
    }
}

pub(crate) fn mean_position(psi: &[Complex64], grid: &Grid) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    let dx = grid.dx();
    for (j, c) in psi.iter().enumerate() {
        let w = c.norm_sqr();
        num += w * (grid.x_min() + j as f64 * dx);
        den += w;
    }
    num / den
}

pub(crate) fn relative_edge(mut amps: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = amps.len();
    let mut peak = 0.0f64;
    let mut edge = 0.0f64;
    for j in 0..n {
        let a = amps.next().unwrap_or(0.0);
        peak = peak.max(a);
        if j == 0 || j + 1 == n {
            edge = edge.max(a);
        }
    }
    if peak == 0.0 {
        0.0
    } else {
        edge / peak
    }
}

/// Ψ₀(x) = (2πσ²)^{−1/4} exp[−(x−x₀)²/4σ² + ip₀(x−x₀)], renormalized on the
/// grid. All arguments in atomic units.
pub fn gaussian(grid: &Grid, x0: f64, p0: f64, sigma: f64) -> Result<GridState> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InitialState(format!(
            "width must be > 0, got {sigma}"
        )));
    }
    let margin = 5.0 * sigma;
    if x0 - margin < grid.x_min() || x0 + margin > grid.point(grid.len() - 1) {
        return Err(Error::InitialState(format!(
            "Gaussian at {:.4} Å needs a 5σ = {:.4} Å margin inside the grid [{:.4}, {:.4}] Å",
            units::bohr_to_angstrom(x0),
            units::bohr_to_angstrom(margin),
            units::bohr_to_angstrom(grid.x_min()),
            units::bohr_to_angstrom(grid.x_max()),
        )));
    }
    let pref = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25);
    let psi = (0..grid.len())
        .map(|j| {
            let d = grid.point(j) - x0;
            let env = pref * (-d * d / (4.0 * sigma * sigma)).exp();
            Complex64::from_polar(env, p0 * d)
        })
        .collect();
    let mut state = GridState::new(*grid, psi)?;
    state.normalize();
    Ok(state)
}

/// Minimum-uncertainty width σ₀ = (ħ/2mω₀)^{1/2} of the spec's harmonic ground state.
pub fn coherent_width(spec: &MorseSpec) -> f64 {
    (1.0 / (2.0 * spec.mass() * spec.harmonic_frequency())).sqrt()
}

/// c_mΦ_m + c_nΦ_n with real positive c = √weight.
pub fn superposition(
    basis: &MorseBasis,
    m: usize,
    n: usize,
    weight_m: f64,
    weight_n: f64,
) -> Result<GridState> {
    if n <= m {
        return Err(Error::InitialState(format!(
            "superposition needs n > m, got m = {m}, n = {n}"
        )));
    }
    if n >= basis.len() {
        return Err(Error::InitialState(format!(
            "level {n} is outside the {}-state basis",
            basis.len()
        )));
    }
    if weight_m < 0.0 || weight_n < 0.0 {
        return Err(Error::InitialState("weights must be nonnegative".into()));
    }
    let sum = weight_m + weight_n;
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::WeightSum { sum });
    }
    let mut coeffs = vec![Complex64::new(0.0, 0.0); basis.len()];
    coeffs[m] = Complex64::new(weight_m.sqrt(), 0.0);
    coeffs[n] = Complex64::new(weight_n.sqrt(), 0.0);
    let mut state = reconstruct(basis, &coeffs);
    state.normalize();
    Ok(state)
}

/// Σ c_iΦ_i on the basis grid.
pub fn reconstruct(basis: &MorseBasis, coeffs: &[Complex64]) -> GridState {
    let grid = *basis.grid();
    let mut psi = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (i, c) in coeffs.iter().enumerate().take(basis.len()) {
        if c.norm_sqr() == 0.0 {
            continue;
        }
        for (p, f) in psi.iter_mut().zip(basis.function(i)) {
            *p += c * f;
        }
    }
    GridState {
        grid,
        psi,
        time: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coefficients: Vec<Complex64>,
    /// ⟨Ψ|Ψ⟩ − Σ|c_i|², the weight outside the retained basis.
    pub residual: f64,
}

/// c_i = ⟨Φ_i|Ψ⟩ by quadrature.
pub fn project(state: &GridState, basis: &MorseBasis) -> Result<Projection> {
    if state.grid != *basis.grid() {
        return Err(Error::GridMismatch);
    }
    let coefficients = project_amplitudes(&state.psi, basis);
    let captured: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    Ok(Projection {
        coefficients,
        residual: state.norm_sqr() - captured,
    })
}

pub(crate) fn project_amplitudes(psi: &[Complex64], basis: &MorseBasis) -> Vec<Complex64> {
    let dx = basis.grid().dx();
    (0..basis.len())
        .map(|i| {
            let (mut re, mut im) = (0.0, 0.0);
            for (p, f) in psi.iter().zip(basis.function(i)) {
                re += p.re * f;
                im += p.im * f;
            }
            Complex64::new(re * dx, im * dx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::from_angstrom(1.6, 6.4, 1000).is_err());
        assert!(Grid::from_angstrom(1.6, 6.4, 32).is_err());
        assert!(Grid::from_angstrom(6.4, 1.6, 1024).is_err());
        let g = Grid::standard();
        assert_eq!(g.len(), 1024);
        let dx_a = units::bohr_to_angstrom(g.dx());
        assert!((dx_a - 4.8 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_margin_enforced() {
        let g = Grid::standard();
        let s = units::angstrom_to_bohr(0.035);
        assert!(gaussian(&g, units::angstrom_to_bohr(1.7), 0.0, s).is_err());
        assert!(gaussian(&g, units::angstrom_to_bohr(2.4), 0.0, s).is_ok());
        assert!(gaussian(&g, units::angstrom_to_bohr(2.4), 0.0, -s).is_err());
    }

    #[test]
    fn symmetric_state_centered() {
        let g = Grid::standard();
        let x0 = g.point(300);
        let st = gaussian(&g, x0, 0.0, units::angstrom_to_bohr(0.05)).unwrap();
        assert!((st.expectation_x() - x0).abs() < 1e-10);
        assert!(st.expectation_p().abs() < 1e-10);
        assert!((st.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moving_gaussian_momentum() {
        let g = Grid::standard();
        let st = gaussian(
            &g,
            units::angstrom_to_bohr(3.0),
            5.0,
            units::angstrom_to_bohr(0.1),
        )
        .unwrap();
        assert!((st.expectation_p() - 5.0).abs() < 1e-8);
    }
}
