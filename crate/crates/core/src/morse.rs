//! Morse potential, its analytic spectrum and a Fourier-grid eigenbasis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qstate::{relative_edge, Grid, EDGE_LIMIT};
use crate::units;

/// V(x) = D[1 − e^{−α(x−x_e)}]², all fields in atomic units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorseSpec {
    depth: f64,
    alpha: f64,
    x_eq: f64,
    mass: f64,
}

impl MorseSpec {
    pub fn new(depth: f64, alpha: f64, x_eq: f64, mass: f64) -> Result<Self> {
        for (name, v) in [("D", depth), ("α", alpha), ("x_e", x_eq), ("m", mass)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("Morse {name} must be > 0, got {v}")));
            }
        }
        let spec = MorseSpec {
            depth,
            alpha,
            x_eq,
            mass,
        };
        if spec.lambda() <= 0.5 {
            return Err(Error::Domain(format!(
                "λ = {:.4} ≤ 1/2: the potential has no bound state",
                spec.lambda()
            )));
        }
        Ok(spec)
    }

    /// Laboratory units: D in cm⁻¹, α in Å⁻¹, x_e in Å, m in electron masses.
    pub fn from_lab(depth_cm: f64, alpha_per_a: f64, x_eq_a: f64, mass: f64) -> Result<Self> {
        Self::new(
            units::inv_cm_to_hartree(depth_cm),
            alpha_per_a * units::consts::BOHR_IN_ANGSTROM,
            units::angstrom_to_bohr(x_eq_a),
            mass,
        )
    }

    /// Ground-state I₂: D = 12547 cm⁻¹, α = 1.8576 Å⁻¹, x_e = 2.6663 Å,
    /// m = m₀/4 with m₀ = 4.22×10⁻²² g.
    pub fn iodine() -> Self {
        Self::from_lab(
            12547.0,
            1.8576,
            2.6663,
            units::homonuclear_reduced_mass(4.22e-22),
        )
        .expect("iodine parameters are valid")
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn x_eq(&self) -> f64 {
        self.x_eq
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn potential(&self, x: f64) -> f64 {
        let u = 1.0 - (-self.alpha * (x - self.x_eq)).exp();
        self.depth * u * u
    }

    /// ω₀ = √(2α²D/m).
    pub fn harmonic_frequency(&self) -> f64 {
        (2.0 * self.alpha * self.alpha * self.depth / self.mass).sqrt()
    }

    /// ω_M = ω₀√(1 − E/D), the classical frequency at energy E.
    pub fn anharmonic_frequency(&self, energy: f64) -> Result<f64> {
        if !(0.0..self.depth).contains(&energy) {
            return Err(Error::Domain(format!(
                "energy {energy} outside [0, D = {}) for the classical frequency",
                self.depth
            )));
        }
        Ok(self.harmonic_frequency() * (1.0 - energy / self.depth).sqrt())
    }

    /// λ_M = √(2mD)/α.
    pub fn lambda(&self) -> f64 {
        (2.0 * self.mass * self.depth).sqrt() / self.alpha
    }

    /// Highest bound level, floor(λ_M − 1/2).
    pub fn n_max(&self) -> usize {
        (self.lambda() - 0.5).floor() as usize
    }

    pub fn bound_state_count(&self) -> usize {
        self.n_max() + 1
    }

    /// E_n = ω₀(n+½) − [ω₀(n+½)]²/4D.
    pub fn analytic_energy(&self, n: usize) -> Result<f64> {
        if n > self.n_max() {
            return Err(Error::TooManyStates {
                requested: n + 1,
                available: self.bound_state_count(),
            });
        }
        let h = self.harmonic_frequency() * (n as f64 + 0.5);
        Ok(h - h * h / (4.0 * self.depth))
    }

    /// Classical turning points at energy E (inner, outer).
    pub fn turning_points(&self, energy: f64) -> Result<(f64, f64)> {
        if !(0.0..self.depth).contains(&energy) {
            return Err(Error::Domain(format!(
                "energy {energy} outside [0, D) for turning points"
            )));
        }
        let s = (energy / self.depth).sqrt();
        let inner = self.x_eq - (1.0 + s).ln() / self.alpha;
        let outer = self.x_eq - (1.0 - s).ln() / self.alpha;
        Ok((inner, outer))
    }

    /// The K lowest eigenpairs of the Fourier-grid Hamiltonian.
    pub fn diagonalize(&self, grid: &Grid, count: usize) -> Result<MorseBasis> {
        MorseBasis::compute(self, grid, count)
    }
}

/// τ = 2π/|E_n − E_m|; infinite for degenerate levels.
pub fn recurrence_time(e_m: f64, e_n: f64) -> f64 {
    let gap = (e_n - e_m).abs();
    if gap == 0.0 {
        f64::INFINITY
    } else {
        2.0 * std::f64::consts::PI / gap
    }
}

/// Δ = (E_n − E_m)/E_n × 100.
pub fn relative_difference(e_m: f64, e_n: f64) -> f64 {
    if e_m == e_n {
        return 0.0;
    }
    (e_n - e_m) / e_n * 100.0
}

/// Truncated Morse eigenbasis on a grid. Eigenfunctions are real,
/// orthonormal under Σ f g dx, with the outermost lobe positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MorseBasis {
    grid: Grid,
    energies: Vec<f64>,
    // Row-major by state: functions[i * n + j] = Φ_i(x_j).
    functions: Vec<f64>,
}

impl MorseBasis {
    fn compute(spec: &MorseSpec, grid: &Grid, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Domain("need at least one eigenstate".into()));
        }
        if count > spec.bound_state_count() {
            return Err(Error::TooManyStates {
                requested: count,
                available: spec.bound_state_count(),
            });
        }
        let n = grid.len();
        if count > n {
            return Err(Error::TooManyStates {
                requested: count,
                available: n,
            });
        }
        let hamiltonian = fourier_grid_hamiltonian(spec, grid);
        let eig = hamiltonian.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let scale = 1.0 / grid.dx().sqrt();
        let mut energies = Vec::with_capacity(count);
        let mut functions = Vec::with_capacity(count * n);
        for (state, &col) in order.iter().take(count).enumerate() {
            let e = eig.eigenvalues[col];
            if e >= spec.depth() {
                return Err(Error::TooManyStates {
                    requested: count,
                    available: state,
                });
            }
            let mut phi: Vec<f64> = eig
                .eigenvectors
                .column(col)
                .iter()
                .map(|v| v * scale)
                .collect();
            let edge = relative_edge(phi.iter().map(|v| v.abs()));
            if edge > EDGE_LIMIT {
                return Err(Error::GridTooSmall {
                    state,
                    amplitude: edge,
                    limit: EDGE_LIMIT,
                });
            }
            if outer_lobe_sign(&phi) < 0.0 {
                phi.iter_mut().for_each(|v| *v = -*v);
            }
            energies.push(e);
            functions.extend_from_slice(&phi);
        }
        Ok(MorseBasis {
            grid: *grid,
            energies,
            functions,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn function(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.functions[i * n..(i + 1) * n]
    }

    /// Keep only the lowest `count` states.
    pub fn truncated(&self, count: usize) -> MorseBasis {
        let count = count.min(self.len());
        MorseBasis {
            grid: self.grid,
            energies: self.energies[..count].to_vec(),
            functions: self.functions[..count * self.grid.len()].to_vec(),
        }
    }

    /// Quadrature overlap ⟨Φ_i|Φ_j⟩.
    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        self.function(i)
            .iter()
            .zip(self.function(j))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.dx()
    }
}

/// Sign of Φ at the outermost point where |Φ| reaches 1% of its peak.
/// Beyond the outer turning point the tail decays monotonically, so that
/// point lies in the outermost lobe.
fn outer_lobe_sign(phi: &[f64]) -> f64 {
    let peak = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    phi.iter()
        .rev()
        .find(|v| v.abs() >= 0.01 * peak)
        .map_or(1.0, |v| v.signum())
}

/// H = T + V with T the periodic sinc-DVR kinetic matrix
/// T_jl = (1/N) Σ_k (k²/2m) cos(k(x_j − x_l)).
fn fourier_grid_hamiltonian(spec: &MorseSpec, grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let spectrum = crate::spectral::kinetic_spectrum(grid, spec.mass());
    let two_pi_over_n = 2.0 * std::f64::consts::PI / n as f64;
    // Circulant first row t_d, d = j − l mod N.
    let row: Vec<f64> = (0..n)
        .map(|d| {
            spectrum
                .iter()
                .enumerate()
                .map(|(k, t)| t * (two_pi_over_n * ((k * d) % n) as f64).cos())
                .sum::<f64>()
                / n as f64
        })
        .collect();
    DMatrix::from_fn(n, n, |j, l| {
        let d = (j + n - l) % n;
        let mut h = row[d];
        if j == l {
            h += spec.potential(grid.point(j));
        }
        h
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn potential_values() {
        let s = MorseSpec::iodine();
        assert_eq!(s.potential(s.x_eq()), 0.0);
        assert!(rel(s.potential(1e6), s.depth()) < 1e-15);
        let v = s.potential(angstrom_to_bohr(2.4)) / s.depth();
        assert!((v - 0.409_56).abs() < 5e-5, "{v}");
    }

    #[test]
    fn harmonic_frequency_and_scaling() {
        let s = MorseSpec::iodine();
        let w = s.harmonic_frequency();
        assert!(rel(angular_au_to_inv_cm(w), 214.362_45) < 1e-6);
        assert!(rel(angular_au_to_per_ps(w), 40.378_42) < 1e-6);
        let tau0 = au_to_fs(2.0 * std::f64::consts::PI / w);
        assert!((tau0 - 155.61).abs() < 0.01, "{tau0}");
        let s4 = MorseSpec::new(4.0 * s.depth(), s.alpha(), s.x_eq(), s.mass()).unwrap();
        assert!(rel(s4.harmonic_frequency(), 2.0 * w) < 1e-14);
    }

    #[test]
    fn anharmonic_frequency_values() {
        let s = MorseSpec::iodine();
        let w = s.harmonic_frequency();
        assert_eq!(s.anharmonic_frequency(0.0).unwrap(), w);
        let r = s.anharmonic_frequency(0.4 * s.depth()).unwrap() / w;
        assert!((r - 0.6f64.sqrt()).abs() < 1e-14);
        assert!((r - 0.77).abs() < 0.005);
        let tau = au_to_fs(2.0 * std::f64::consts::PI / (r * w));
        assert!((tau - 200.89).abs() < 0.01, "{tau}");
        assert!(s.anharmonic_frequency(s.depth()).is_err());
        assert!(s.anharmonic_frequency(-1e-9).is_err());
    }

    #[test]
    fn analytic_spectrum() {
        let s = MorseSpec::iodine();
        assert!((s.lambda() - 117.06).abs() < 0.01, "{}", s.lambda());
        assert_eq!(s.n_max(), 116);
        assert!((115..=122).contains(&s.bound_state_count()));
        let e0 = hartree_to_inv_cm(s.analytic_energy(0).unwrap());
        // ω₀/2 − (ω₀/2)²/4D with ω₀ = 214.3625 cm⁻¹
        let h = 214.362_451_1 / 2.0;
        assert!((e0 - (h - h * h / (4.0 * 12547.0))).abs() < 1e-5, "{e0}");
        assert!(s.analytic_energy(116).is_ok());
        assert!(matches!(
            s.analytic_energy(117),
            Err(Error::TooManyStates { .. })
        ));
    }

    #[test]
    fn harmonic_limit() {
        let s = MorseSpec::iodine();
        let w = s.harmonic_frequency();
        // D → ∞ at fixed ω₀ means α ∝ D^{-1/2}.
        let f = 1e6;
        let deep = MorseSpec::new(s.depth() * f, s.alpha() / f.sqrt(), s.x_eq(), s.mass()).unwrap();
        for n in [0, 5, 40] {
            let e = deep.analytic_energy(n).unwrap();
            assert!(rel(e, w * (n as f64 + 0.5)) < 1e-4);
        }
    }

    #[test]
    fn timescales() {
        let s = MorseSpec::iodine();
        let e: Vec<f64> = (0..10).map(|n| s.analytic_energy(n).unwrap()).collect();
        let t = |m: usize, n: usize| au_to_fs(recurrence_time(e[m], e[n]));
        assert!((t(0, 1) - 156.95).abs() < 0.01);
        assert!((t(4, 5) - 162.55).abs() < 0.01);
        assert!((t(8, 9) - 168.57).abs() < 0.01);
        assert_eq!(t(4, 5), t(5, 4));
        assert!(recurrence_time(e[3], e[3]).is_infinite());

        let d = |m: usize, n: usize| relative_difference(e[m], e[n]);
        assert!((d(0, 1) - 66.52).abs() < 0.01);
        assert!((d(4, 5) - 17.82).abs() < 0.01);
        assert!((d(8, 9) - 10.13).abs() < 0.01);
        assert_eq!(d(2, 2), 0.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(MorseSpec::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(MorseSpec::new(1.0, 0.0, 1.0, 1.0).is_err());
        // λ = √(2·1·0.1)/1 < 1/2
        assert!(MorseSpec::new(0.1, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn too_many_states_rejected() {
        let s = MorseSpec::iodine();
        let g = Grid::from_angstrom(1.6, 6.4, 64).unwrap();
        assert!(matches!(
            s.diagonalize(&g, 118),
            Err(Error::TooManyStates { .. })
        ));
    }

    #[test]
    fn narrow_grid_rejected() {
        let s = MorseSpec::iodine();
        let g = Grid::from_angstrom(2.3, 3.1, 128).unwrap();
        assert!(matches!(
            s.diagonalize(&g, 40),
            Err(Error::GridTooSmall { .. })
        ));
    }
}
