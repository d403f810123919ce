//! Ensembles of realizations reduced into averaged densities, density
//! matrices and observables.
//!
//! Realizations are split into contiguous index batches. Each batch folds
//! its realizations in index order and batches are summed in batch order,
//! so every result is independent of how many workers ran the batches.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::morse::{MorseBasis, MorseSpec};
use crate::observables::{self, ObservableSeries, SeriesErrors};
use crate::qsd::{self, Observer, Propagator, PropagatorConfig};
use crate::qstate::{self, Grid, GridState};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub realizations: usize,
    /// Steps between observable recordings.
    pub cadence: usize,
    /// Keep every `stride`-th grid point in ρ(x, x′).
    pub density_stride: usize,
    /// Number of reduction batches; also the jackknife block count.
    pub batches: usize,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Realizations whose per-step ⟨x̂⟩ᵢ(t) are kept.
    pub keep_trajectories: usize,
}

impl EnsembleConfig {
    pub const DEFAULT_BATCHES: usize = 16;

    pub fn new(realizations: usize, cadence: usize) -> Self {
        EnsembleConfig {
            realizations,
            cadence,
            density_stride: 4,
            batches: Self::DEFAULT_BATCHES,
            workers: None,
            keep_trajectories: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("need at least one realization".into()));
        }
        if self.cadence == 0 || self.density_stride == 0 || self.batches == 0 {
            return Err(Error::Config(
                "cadence, stride and batch count must be ≥ 1".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Index range of batch `b`.
    pub fn batch_range(&self, b: usize) -> std::ops::Range<usize> {
        let n = self.realizations;
        let nb = self.batch_count();
        (b * n / nb)..((b + 1) * n / nb)
    }

    pub fn batch_count(&self) -> usize {
        self.batches.min(self.realizations).max(1)
    }
}

fn packed_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Sums over one contiguous block of realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSums {
    pub first: usize,
    pub count: usize,
    basis_size: usize,
    grid_len: usize,
    sample_len: usize,
    /// [record][point] Σ|ψ|².
    density: Vec<f64>,
    /// [record][packed i ≤ j] Σ c_i c_j*.
    coefficients: Vec<Complex64>,
    residual: Vec<f64>,
    mean_x: Vec<f64>,
    mean_x_sq: Vec<f64>,
    /// [snapshot][point] Σ|ψ|² at full resolution.
    snapshot_density: Vec<f64>,
    /// [snapshot][packed a ≤ b] Σ ψ(x_a)ψ*(x_b) on the downsampled grid.
    snapshot_matrix: Vec<Complex64>,
    pub trajectories: Vec<(usize, Vec<f64>)>,
    pub max_edge_amplitude: f64,
}

impl BatchSums {
    fn new(first: usize, records: usize, snapshots: usize, k: usize, n: usize, m: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        BatchSums {
            first,
            count: 0,
            basis_size: k,
            grid_len: n,
            sample_len: m,
            density: vec![0.0; records * n],
            coefficients: vec![z; records * packed_len(k)],
            residual: vec![0.0; records],
            mean_x: vec![0.0; records],
            mean_x_sq: vec![0.0; records],
            snapshot_density: vec![0.0; snapshots * n],
            snapshot_matrix: vec![z; snapshots * packed_len(m)],
            trajectories: Vec::new(),
            max_edge_amplitude: 0.0,
        }
    }
}

struct BatchObserver<'a> {
    sums: &'a mut BatchSums,
    grid: Grid,
    basis: Option<&'a MorseBasis>,
    stride: usize,
    trajectory: Option<Vec<f64>>,
    coeffs: Vec<Complex64>,
}

impl Observer for BatchObserver<'_> {
    fn record(&mut self, slot: usize, _step: usize, psi: &[Complex64]) {
        let s = &mut *self.sums;
        let n = s.grid_len;
        for (acc, p) in s.density[slot * n..(slot + 1) * n].iter_mut().zip(psi) {
            *acc += p.norm_sqr();
        }
        let x = qstate::mean_position(psi, &self.grid);
        s.mean_x[slot] += x;
        s.mean_x_sq[slot] += x * x;
        if let Some(b) = self.basis {
            self.coeffs = qstate::project_amplitudes(psi, b);
            let k = s.basis_size;
            let base = slot * packed_len(k);
            let mut idx = base;
            let mut captured = 0.0;
            for i in 0..k {
                captured += self.coeffs[i].norm_sqr();
                for j in i..k {
                    s.coefficients[idx] += self.coeffs[i] * self.coeffs[j].conj();
                    idx += 1;
                }
            }
            let norm = crate::spectral::norm_sqr(psi, self.grid.dx());
            s.residual[slot] += norm - captured;
        }
    }

    fn snapshot(&mut self, slot: usize, _step: usize, psi: &[Complex64]) {
        let s = &mut *self.sums;
        let n = s.grid_len;
        for (acc, p) in s.snapshot_density[slot * n..(slot + 1) * n]
            .iter_mut()
            .zip(psi)
        {
            *acc += p.norm_sqr();
        }
        let m = s.sample_len;
        let sampled: Vec<Complex64> = psi.iter().step_by(self.stride).copied().collect();
        let mut idx = slot * packed_len(m);
        for a in 0..m {
            for b in a..m {
                s.snapshot_matrix[idx] += sampled[a] * sampled[b].conj();
                idx += 1;
            }
        }
    }

    fn position(&mut self, _step: usize, mean_x: f64) {
        if let Some(t) = self.trajectory.as_mut() {
            t.push(mean_x);
        }
    }
}

/// Per-batch sums for an ensemble; merging concatenates batch lists, so
/// merges are exactly associative.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    pub grid: Grid,
    pub dt: f64,
    pub record_steps: Vec<usize>,
    pub snapshot_steps: Vec<usize>,
    pub density_stride: usize,
    pub basis_size: usize,
    pub batches: Vec<BatchSums>,
}

impl EnsembleAccumulator {
    pub fn count(&self) -> usize {
        self.batches.iter().map(|b| b.count).sum()
    }

    /// Append `other`'s batches. Layouts must agree.
    pub fn merge(&mut self, other: EnsembleAccumulator) -> Result<()> {
        if self.grid != other.grid
            || self.record_steps != other.record_steps
            || self.snapshot_steps != other.snapshot_steps
            || self.basis_size != other.basis_size
            || self.density_stride != other.density_stride
        {
            return Err(Error::Config(
                "cannot merge ensembles with different layouts".into(),
            ));
        }
        self.batches.extend(other.batches);
        Ok(())
    }

    pub fn record_times(&self) -> Vec<f64> {
        self.record_steps
            .iter()
            .map(|&s| s as f64 * self.dt)
            .collect()
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshot_steps
            .iter()
            .map(|&s| s as f64 * self.dt)
            .collect()
    }

    fn total<T: Copy + std::ops::AddAssign + Default>(
        &self,
        field: impl Fn(&BatchSums) -> &[T],
    ) -> Vec<T> {
        let mut out: Vec<T> = vec![T::default(); field(&self.batches[0]).len()];
        for b in &self.batches {
            for (o, v) in out.iter_mut().zip(field(b)) {
                *o += *v;
            }
        }
        out
    }

    /// Mean |Ψ(x)|² (bohr⁻¹) at each recording time.
    pub fn averaged_density(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let inv = 1.0 / self.count() as f64;
        self.total(|b| &b.density)
            .chunks(n)
            .map(|c| c.iter().map(|v| v * inv).collect())
            .collect()
    }

    /// Mean |Ψ(x)|² at each snapshot time.
    pub fn snapshot_density(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let inv = 1.0 / self.count() as f64;
        self.total(|b| &b.snapshot_density)
            .chunks(n)
            .map(|c| c.iter().map(|v| v * inv).collect())
            .collect()
    }

    /// Downsampled grid points used by [`Self::density_matrix_xx`].
    pub fn sampled_points(&self) -> Vec<f64> {
        (0..self.grid.len())
            .step_by(self.density_stride)
            .map(|j| self.grid.point(j))
            .collect()
    }

    /// ρ(x, x′) on the downsampled grid at snapshot time `t` (a.u.).
    pub fn density_matrix_xx(&self, t: f64) -> Result<DMatrix<Complex64>> {
        let slot = self
            .snapshot_steps
            .iter()
            .position(|&s| (s as f64 * self.dt - t).abs() <= 0.5 * self.dt)
            .ok_or(Error::UnknownSnapshot(t))?;
        let m = self.sampled_points().len();
        let len = packed_len(m);
        let inv = 1.0 / self.count() as f64;
        let mut packed = vec![Complex64::new(0.0, 0.0); len];
        for b in &self.batches {
            for (o, v) in packed
                .iter_mut()
                .zip(&b.snapshot_matrix[slot * len..(slot + 1) * len])
            {
                *o += *v;
            }
        }
        let mut out = DMatrix::from_element(m, m, Complex64::new(0.0, 0.0));
        let mut idx = 0;
        for a in 0..m {
            for b in a..m {
                let v = packed[idx] * inv;
                out[(a, b)] = v;
                out[(b, a)] = v.conj();
                idx += 1;
            }
        }
        Ok(out)
    }

    fn unpack(&self, packed: &[Complex64], scale: f64) -> DMatrix<Complex64> {
        let k = self.basis_size;
        let mut out = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
        let mut idx = 0;
        for i in 0..k {
            for j in i..k {
                let v = packed[idx] * scale;
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
                idx += 1;
            }
        }
        out
    }

    /// Coefficient-space ρ at every recording time.
    pub fn density_matrices(&self) -> Vec<DMatrix<Complex64>> {
        let len = packed_len(self.basis_size);
        if len == 0 {
            return Vec::new();
        }
        let inv = 1.0 / self.count() as f64;
        self.total(|b| &b.coefficients)
            .chunks(len)
            .map(|c| self.unpack(c, inv))
            .collect()
    }

    /// Mean ⟨x̂⟩ and its standard error at each recording time.
    pub fn mean_position(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count() as f64;
        let s = self.total(|b| &b.mean_x);
        let sq = self.total(|b| &b.mean_x_sq);
        let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
        let err = s
            .iter()
            .zip(&sq)
            .map(|(a, b)| {
                if n < 2.0 {
                    return f64::NAN;
                }
                let var = ((b - a * a / n) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect();
        (mean, err)
    }

    pub fn trajectories(&self) -> Vec<(usize, &[f64])> {
        self.batches
            .iter()
            .flat_map(|b| b.trajectories.iter().map(|(i, t)| (*i, t.as_slice())))
            .collect()
    }

    pub fn max_edge_amplitude(&self) -> f64 {
        self.batches
            .iter()
            .fold(0.0f64, |m, b| m.max(b.max_edge_amplitude))
    }

    /// Purity, populations, coherences and ⟨x̂⟩ with jackknife errors over
    /// batches (⟨x̂⟩ errors from the sample variance).
    pub fn observables(&self) -> Result<ObservableSeries> {
        let mut series = ObservableSeries::default();
        let times = self.record_times();
        let rhos = self.density_matrices();
        let n = self.count() as f64;
        let residual = self.total(|b| &b.residual);
        for (slot, rho) in rhos.iter().enumerate() {
            series.push(times[slot], rho)?;
            // Report the projection residual; 1 − Tr ρ is its ensemble mean.
            series.residual[slot] = residual[slot] / n;
        }
        let (mean_x, mean_x_err) = self.mean_position();
        if rhos.is_empty() {
            series.times = times;
        }
        series.mean_x = Some(mean_x);
        series.errors = Some(self.jackknife(&rhos, mean_x_err));
        Ok(series)
    }

    fn jackknife(&self, full: &[DMatrix<Complex64>], mean_x_err: Vec<f64>) -> SeriesErrors {
        let nb = self.batches.len();
        let records = full.len();
        let k = self.basis_size;
        let pairs = observables::pair_count(k);
        let nan = |len| vec![vec![f64::NAN; len]; records];
        let mut err = SeriesErrors {
            purity: vec![f64::NAN; records],
            populations: nan(k),
            coherences: nan(pairs),
            mean_x: mean_x_err,
        };
        if nb < 2 || records == 0 {
            return err;
        }
        let len = packed_len(k);
        let total: Vec<Complex64> = self.total(|b| &b.coefficients);
        let n = self.count() as f64;
        let factor = (nb as f64 - 1.0) / nb as f64;
        for slot in 0..records {
            let range = slot * len..(slot + 1) * len;
            let mut chi = Vec::with_capacity(nb);
            let mut pops = Vec::with_capacity(nb);
            let mut cohs = Vec::with_capacity(nb);
            for b in &self.batches {
                let rest: Vec<Complex64> = total[range.clone()]
                    .iter()
                    .zip(&b.coefficients[range.clone()])
                    .map(|(t, v)| t - v)
                    .collect();
                let rho = self.unpack(&rest, 1.0 / (n - b.count as f64));
                chi.push(observables::purity_unchecked(&rho));
                pops.push(observables::populations(&rho));
                cohs.push(observables::coherences(&rho));
            }
            let spread = |vals: &[f64]| {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                (factor * vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt()
            };
            err.purity[slot] = spread(&chi);
            for i in 0..k {
                let v: Vec<f64> = pops.iter().map(|p| p[i]).collect();
                err.populations[slot][i] = spread(&v);
            }
            for p in 0..pairs {
                let v: Vec<f64> = cohs.iter().map(|c| c[p]).collect();
                err.coherences[slot][p] = spread(&v);
            }
        }
        err
    }
}

fn new_accumulator(
    grid: &Grid,
    prop: &Propagator,
    ens: &EnsembleConfig,
    basis: Option<&MorseBasis>,
) -> EnsembleAccumulator {
    EnsembleAccumulator {
        grid: *grid,
        dt: prop.config().dt,
        record_steps: qsd::record_steps(prop.plan().steps, ens.cadence),
        snapshot_steps: prop.plan().snapshot_steps.clone(),
        density_stride: ens.density_stride,
        basis_size: basis.map_or(0, |b| b.len()),
        batches: Vec::new(),
    }
}

fn run_batch(
    mut prop: Propagator,
    initial: &GridState,
    basis: Option<&MorseBasis>,
    ens: &EnsembleConfig,
    layout: &EnsembleAccumulator,
    b: usize,
) -> Result<BatchSums> {
    let range = ens.batch_range(b);
    let m = layout.sampled_points().len();
    let mut sums = BatchSums::new(
        range.start,
        layout.record_steps.len(),
        layout.snapshot_steps.len(),
        layout.basis_size,
        layout.grid.len(),
        m,
    );
    for index in range {
        let keep = index < ens.keep_trajectories;
        let mut obs = BatchObserver {
            sums: &mut sums,
            grid: layout.grid,
            basis,
            stride: ens.density_stride,
            trajectory: keep.then(|| Vec::with_capacity(prop.plan().steps + 1)),
            coeffs: Vec::new(),
        };
        let (_, edge) = prop
            .run(initial, index, ens.cadence, &mut obs)
            .map_err(|e| Error::Realization {
                index,
                source: Box::new(e),
            })?;
        let traj = obs.trajectory.take();
        sums.count += 1;
        sums.max_edge_amplitude = sums.max_edge_amplitude.max(edge);
        if let Some(t) = traj {
            sums.trajectories.push((index, t));
        }
    }
    Ok(sums)
}

/// Run `ens.realizations` realizations of `initial`. Coefficient-space
/// quantities are accumulated when `basis` is given.
pub fn run_ensemble(
    initial: &GridState,
    spec: &MorseSpec,
    basis: Option<&MorseBasis>,
    prop: &PropagatorConfig,
    ens: &EnsembleConfig,
) -> Result<EnsembleAccumulator> {
    ens.validate()?;
    if let Some(b) = basis {
        if b.grid() != &initial.grid {
            return Err(Error::GridMismatch);
        }
    }
    let propagator = Propagator::new(spec, &initial.grid, prop)?;
    let mut acc = new_accumulator(&initial.grid, &propagator, ens, basis);
    let nb = ens.batch_count();
    let work = || -> Vec<Result<BatchSums>> {
        (0..nb)
            .into_par_iter()
            .map(|b| run_batch(propagator.clone(), initial, basis, ens, &acc, b))
            .collect()
    };
    let results = match ens.workers {
        None => work(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(work),
    };
    // Batches are contiguous and each stops at its first failure, so the
    // first error in batch order is the lowest failing index.
    let mut batches = Vec::with_capacity(nb);
    for r in results {
        batches.push(r?);
    }
    acc.batches = batches;
    Ok(acc)
}

/// Single noiseless realization through the bare unitary propagator, laid
/// out like a one-member ensemble. Reference for Λ = 0 runs.
pub fn unitary_reference(
    initial: &GridState,
    spec: &MorseSpec,
    basis: Option<&MorseBasis>,
    prop: &PropagatorConfig,
    ens: &EnsembleConfig,
) -> Result<EnsembleAccumulator> {
    let mut cfg = prop.clone();
    cfg.rate = 0.0;
    let propagator = Propagator::new(spec, &initial.grid, &cfg)?;
    let single = EnsembleConfig {
        realizations: 1,
        ..ens.clone()
    };
    let mut acc = new_accumulator(&initial.grid, &propagator, &single, basis);
    let m = acc.sampled_points().len();
    let mut sums = BatchSums::new(
        0,
        acc.record_steps.len(),
        acc.snapshot_steps.len(),
        acc.basis_size,
        acc.grid.len(),
        m,
    );
    let mut unitary = qsd::UnitaryPropagator::new(spec, &initial.grid, cfg.dt);
    let mut psi = initial.psi.clone();
    let steps = propagator.plan().steps;
    let mut traj = Vec::with_capacity(steps + 1);
    let mut obs = BatchObserver {
        sums: &mut sums,
        grid: initial.grid,
        basis,
        stride: ens.density_stride,
        trajectory: None,
        coeffs: Vec::new(),
    };
    let mut slot = 0;
    let mut edge = 0.0f64;
    for step in 0..=steps {
        if step > 0 {
            unitary.step(&mut psi);
        }
        traj.push(qstate::mean_position(&psi, &initial.grid));
        if acc.record_steps.get(slot) == Some(&step) {
            edge = edge.max(qstate::relative_edge(psi.iter().map(|c| c.norm())));
            obs.record(slot, step, &psi);
            slot += 1;
        }
        for (k, &s) in acc.snapshot_steps.iter().enumerate() {
            if s == step {
                obs.snapshot(k, step, &psi);
            }
        }
    }
    sums.count = 1;
    sums.max_edge_amplitude = edge;
    if ens.keep_trajectories > 0 {
        sums.trajectories.push((0, traj));
    }
    acc.batches.push(sums);
    Ok(acc)
}
