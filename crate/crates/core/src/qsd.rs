//! Single-realization propagation of the diffusive Schrödinger equation
//!
//! dψ = −iĤψdt − Λ(x−⟨x⟩)²ψdt + √Λ(x−⟨x⟩)ψdξ.
//!
//! Each step applies a Strang-split unitary step and then a stochastic Heun
//! step of the position-diffusion terms, followed by renormalization.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::morse::{MorseBasis, MorseSpec};
use crate::qstate::{self, Grid, GridState, EDGE_LIMIT};
use crate::spectral::{self, FftPair};
use crate::units;

/// Upper bound on Λ·(L/2)²·h for each diffusion substep of length h.
pub const STABILITY_LIMIT: f64 = 0.1;

/// Propagation settings, atomic units throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Decoherence rate Λ.
    pub rate: f64,
    pub snapshot_times: Vec<f64>,
    pub renormalize: bool,
    pub seed: u64,
    /// Diffusion substeps per time step. `None` picks the smallest count
    /// that satisfies the stability guard.
    pub diffusion_substeps: Option<usize>,
}

impl PropagatorConfig {
    /// dt = 0.1 fs, no snapshots, renormalization on.
    pub fn new(t_final: f64, rate: f64) -> Self {
        PropagatorConfig {
            dt: units::fs_to_au(0.1),
            t_final,
            rate,
            snapshot_times: Vec::new(),
            renormalize: true,
            seed: 0,
            diffusion_substeps: None,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Λ·(L/2)²·dt for the whole step.
    pub fn stability_value(&self, grid: &Grid) -> f64 {
        let half = 0.5 * grid.length();
        self.rate * half * half * self.dt
    }

    pub fn required_substeps(&self, grid: &Grid) -> usize {
        let v = self.stability_value(grid);
        // Exactly on the limit still violates the strict bound.
        ((v / STABILITY_LIMIT).floor() as usize + 1).max(1)
    }

    /// Check the invariants and resolve derived quantities.
    pub fn validate(&self, grid: &Grid) -> Result<Plan> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::Config(format!(
                "t_final must be ≥ 0, got {}",
                self.t_final
            )));
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::Config(format!(
                "decoherence rate must be ≥ 0, got {}",
                self.rate
            )));
        }
        let steps = self.steps();
        let mut snapshot_steps = Vec::with_capacity(self.snapshot_times.len());
        for &t in &self.snapshot_times {
            if !(t.is_finite() && t >= 0.0 && t <= self.t_final + 1e-9 * self.dt.max(1.0)) {
                return Err(Error::Config(format!(
                    "snapshot at {:.3} fs lies outside [0, {:.3}] fs",
                    units::au_to_fs(t),
                    units::au_to_fs(self.t_final)
                )));
            }
            snapshot_steps.push(((t / self.dt).round() as usize).min(steps));
        }
        let required = self.required_substeps(grid);
        let substeps = match self.diffusion_substeps {
            None => required,
            Some(0) => return Err(Error::Config("diffusion_substeps must be ≥ 1".into())),
            Some(s) => {
                let value = self.stability_value(grid) / s as f64;
                if value >= STABILITY_LIMIT {
                    return Err(Error::StabilityGuard {
                        value,
                        limit: STABILITY_LIMIT,
                        required_substeps: required,
                    });
                }
                s
            }
        };
        Ok(Plan {
            steps,
            snapshot_steps,
            substeps,
        })
    }
}

/// Derived step counts of a validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub steps: usize,
    pub snapshot_steps: Vec<usize>,
    pub substeps: usize,
}

/// RNG for realization `index`: ChaCha20 seeded by the master seed, on its
/// own stream, so draws do not depend on scheduling.
pub fn realization_rng(master_seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

/// dξ = √dt·(g₁ + ig₂): E dξ = 0, E dξ² = 0, E |dξ|² = 2dt.
pub fn wiener_increment<R: rand::Rng + ?Sized>(rng: &mut R, dt: f64) -> Complex64 {
    let s = dt.sqrt();
    let g1: f64 = StandardNormal.sample(rng);
    let g2: f64 = StandardNormal.sample(rng);
    Complex64::new(s * g1, s * g2)
}

/// Sample moments of `n` Wiener increments with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerMoments {
    pub n: usize,
    pub dt: f64,
    /// Sample E dξ.
    pub mean: Complex64,
    /// Sample E dξ².
    pub mean_square: Complex64,
    /// Sample E |dξ|².
    pub mean_abs_square: f64,
}

impl WienerMoments {
    pub fn sample<R: rand::Rng + ?Sized>(rng: &mut R, dt: f64, n: usize) -> Self {
        let mut mean = Complex64::new(0.0, 0.0);
        let mut sq = Complex64::new(0.0, 0.0);
        let mut abs_sq = 0.0;
        for _ in 0..n {
            let d = wiener_increment(rng, dt);
            mean += d;
            sq += d * d;
            abs_sq += d.norm_sqr();
        }
        let inv = 1.0 / n as f64;
        WienerMoments {
            n,
            dt,
            mean: mean * inv,
            mean_square: sq * inv,
            mean_abs_square: abs_sq * inv,
        }
    }

    /// Standard error of |E dξ|: √(2dt/n).
    pub fn mean_error(&self) -> f64 {
        (2.0 * self.dt / self.n as f64).sqrt()
    }

    /// Standard error of |E dξ²|: each of Re, Im has variance 4dt²/n.
    pub fn mean_square_error(&self) -> f64 {
        (8.0 * self.dt * self.dt / self.n as f64).sqrt()
    }

    /// E|dξ|²/2dt, ideally 1.
    pub fn variance_ratio(&self) -> f64 {
        self.mean_abs_square / (2.0 * self.dt)
    }
}

/// Strang step e^{−iTdt/2} e^{−iVdt} e^{−iTdt/2} on a fixed grid.
#[derive(Clone)]
pub struct UnitaryPropagator {
    fft: FftPair,
    // Kinetic half-step phases with the inverse-FFT 1/N folded in.
    kinetic_half: Vec<Complex64>,
    potential_phase: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl UnitaryPropagator {
    pub fn new(spec: &MorseSpec, grid: &Grid, dt: f64) -> Self {
        let n = grid.len();
        let fft = FftPair::new(n);
        let inv_n = 1.0 / n as f64;
        let kinetic_half = spectral::kinetic_spectrum(grid, spec.mass())
            .into_iter()
            .map(|t| Complex64::from_polar(inv_n, -0.5 * t * dt))
            .collect();
        let potential_phase = (0..n)
            .map(|j| Complex64::from_polar(1.0, -spec.potential(grid.point(j)) * dt))
            .collect();
        let scratch = fft.scratch();
        UnitaryPropagator {
            fft,
            kinetic_half,
            potential_phase,
            scratch,
        }
    }

    pub fn fft(&self) -> &FftPair {
        &self.fft
    }

    pub fn step(&mut self, psi: &mut [Complex64]) {
        self.kinetic(psi);
        for (p, v) in psi.iter_mut().zip(&self.potential_phase) {
            *p *= v;
        }
        self.kinetic(psi);
    }

    fn kinetic(&mut self, psi: &mut [Complex64]) {
        self.fft
            .forward
            .process_with_scratch(psi, &mut self.scratch);
        for (p, k) in psi.iter_mut().zip(&self.kinetic_half) {
            *p *= k;
        }
        self.fft
            .inverse
            .process_with_scratch(psi, &mut self.scratch);
    }
}

/// One stochastic Heun step of the diffusive terms with ⟨x⟩ frozen at
/// `mean_x`. Because both terms are multiplication by functions of x, the
/// Heun update collapses to ψ ← ψ·(1 + c + c²/2) with
/// c = −Λ(x−⟨x⟩)²dt + √Λ(x−⟨x⟩)dξ. Returns the norm before any
/// renormalization.
pub fn diffusive_step(
    psi: &mut [Complex64],
    grid: &Grid,
    rate: f64,
    mean_x: f64,
    dxi: Complex64,
    dt: f64,
) -> f64 {
    if rate == 0.0 {
        return spectral::norm_sqr(psi, grid.dx()).sqrt();
    }
    let sq = rate.sqrt();
    let x0 = grid.x_min();
    let h = grid.dx();
    let mut norm = 0.0;
    for (j, p) in psi.iter_mut().enumerate() {
        let a = x0 + j as f64 * h - mean_x;
        let c = dxi * (sq * a) - rate * a * a * dt;
        *p *= Complex64::new(1.0, 0.0) + c + 0.5 * c * c;
        norm += p.norm_sqr();
    }
    (norm * h).sqrt()
}

/// Per-realization time series and snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationRecord {
    pub index: usize,
    /// Times (a.u.) of every step, including t = 0.
    pub times: Vec<f64>,
    /// ⟨x̂⟩ after every step (bohr).
    pub mean_x: Vec<f64>,
    /// Basis coefficients at the recording cadence, when a basis was given.
    pub coefficients: Option<Vec<Vec<Complex64>>>,
    pub snapshots: Vec<GridState>,
    pub final_state: GridState,
    /// Largest relative edge amplitude seen; above [`EDGE_LIMIT`] the
    /// packet has reached the periodic boundary.
    pub max_edge_amplitude: f64,
}

impl RealizationRecord {
    pub fn edge_warning(&self) -> bool {
        self.max_edge_amplitude > EDGE_LIMIT
    }
}

/// Callbacks issued by [`Propagator::run`].
pub trait Observer {
    /// Called at t = 0 and after every step whose index is a multiple of the
    /// cadence, and after the final step.
    fn record(&mut self, slot: usize, step: usize, psi: &[Complex64]);
    /// Called at each requested snapshot step, with its position in the
    /// snapshot list.
    fn snapshot(&mut self, _slot: usize, _step: usize, _psi: &[Complex64]) {}
    /// Called after every step with ⟨x̂⟩.
    fn position(&mut self, _step: usize, _mean_x: f64) {}
}

/// Recording times for `steps` steps at the given cadence.
pub fn record_steps(steps: usize, cadence: usize) -> Vec<usize> {
    let cadence = cadence.max(1);
    let mut out: Vec<usize> = (0..=steps).step_by(cadence).collect();
    if *out.last().unwrap_or(&0) != steps {
        out.push(steps);
    }
    out
}

/// Reusable propagator for one (spec, grid, config) triple.
#[derive(Clone)]
pub struct Propagator {
    grid: Grid,
    config: PropagatorConfig,
    plan: Plan,
    unitary: UnitaryPropagator,
}

impl Propagator {
    pub fn new(spec: &MorseSpec, grid: &Grid, config: &PropagatorConfig) -> Result<Self> {
        let plan = config.validate(grid)?;
        Ok(Propagator {
            grid: *grid,
            config: config.clone(),
            plan,
            unitary: UnitaryPropagator::new(spec, grid, config.dt),
        })
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn config(&self) -> &PropagatorConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Propagate realization `index` from `initial`, reporting to `observer`.
    /// Returns the final state and the largest relative edge amplitude.
    pub fn run<O: Observer>(
        &mut self,
        initial: &GridState,
        index: usize,
        cadence: usize,
        observer: &mut O,
    ) -> Result<(GridState, f64)> {
        if initial.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let steps = self.plan.steps;
        let cadence = cadence.max(1);
        let rate = self.config.rate;
        let substeps = self.plan.substeps;
        let h = self.config.dt / substeps as f64;
        let mut rng = realization_rng(self.config.seed, index);
        let mut psi = initial.psi.clone();
        let mut slot = 0;
        let mut max_edge = qstate::relative_edge(psi.iter().map(|c| c.norm()));

        observer.position(0, qstate::mean_position(&psi, &self.grid));
        observer.record(slot, 0, &psi);
        slot += 1;
        self.emit_snapshots(0, &psi, observer);

        for step in 1..=steps {
            self.unitary.step(&mut psi);
            if rate > 0.0 {
                for _ in 0..substeps {
                    let mean = qstate::mean_position(&psi, &self.grid);
                    let dxi = wiener_increment(&mut rng, h);
                    let norm = diffusive_step(&mut psi, &self.grid, rate, mean, dxi, h);
                    if !(0.5..=2.0).contains(&norm) {
                        return Err(Error::Instability { step, norm });
                    }
                    if self.config.renormalize {
                        let inv = 1.0 / norm;
                        psi.iter_mut().for_each(|c| *c *= inv);
                    }
                }
            }
            observer.position(step, qstate::mean_position(&psi, &self.grid));
            if step % cadence == 0 || step == steps {
                max_edge = max_edge.max(qstate::relative_edge(psi.iter().map(|c| c.norm())));
                observer.record(slot, step, &psi);
                slot += 1;
            }
            self.emit_snapshots(step, &psi, observer);
        }
        let mut final_state = GridState::new(self.grid, psi)?;
        final_state.time = steps as f64 * self.config.dt;
        Ok((final_state, max_edge))
    }

    fn emit_snapshots<O: Observer>(&self, step: usize, psi: &[Complex64], observer: &mut O) {
        for (k, &s) in self.plan.snapshot_steps.iter().enumerate() {
            if s == step {
                observer.snapshot(k, step, psi);
            }
        }
    }

    /// Full per-step record of one realization.
    pub fn realization(
        &mut self,
        initial: &GridState,
        index: usize,
        cadence: usize,
        basis: Option<&MorseBasis>,
    ) -> Result<RealizationRecord> {
        let dt = self.config.dt;
        let grid = self.grid;
        let mut rec = Collector {
            grid,
            dt,
            basis,
            mean_x: Vec::with_capacity(self.plan.steps + 1),
            coefficients: Vec::new(),
            snapshots: Vec::new(),
        };
        let (final_state, max_edge) = self.run(initial, index, cadence, &mut rec)?;
        Ok(RealizationRecord {
            index,
            times: (0..=self.plan.steps).map(|s| s as f64 * dt).collect(),
            mean_x: rec.mean_x,
            coefficients: basis.map(|_| rec.coefficients),
            snapshots: rec.snapshots,
            final_state,
            max_edge_amplitude: max_edge,
        })
    }
}

struct Collector<'a> {
    grid: Grid,
    dt: f64,
    basis: Option<&'a MorseBasis>,
    mean_x: Vec<f64>,
    coefficients: Vec<Vec<Complex64>>,
    snapshots: Vec<GridState>,
}

impl Observer for Collector<'_> {
    fn record(&mut self, _slot: usize, _step: usize, psi: &[Complex64]) {
        if let Some(b) = self.basis {
            self.coefficients.push(qstate::project_amplitudes(psi, b));
        }
    }

    fn snapshot(&mut self, _slot: usize, step: usize, psi: &[Complex64]) {
        self.snapshots.push(GridState {
            grid: self.grid,
            psi: psi.to_vec(),
            time: step as f64 * self.dt,
        });
    }

    fn position(&mut self, _step: usize, mean_x: f64) {
        self.mean_x.push(mean_x);
    }
}

/// One realization with default cadence and no coefficient recording.
pub fn propagate_realization(
    initial: &GridState,
    spec: &MorseSpec,
    config: &PropagatorConfig,
    index: usize,
) -> Result<RealizationRecord> {
    Propagator::new(spec, &initial.grid, config)?.realization(initial, index, 1, None)
}
