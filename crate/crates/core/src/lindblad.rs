//! Master equation dρ/dt = −i[H,ρ] − Λ[X,[X,ρ]] in a truncated eigenbasis,
//! integrated with fixed-step RK4.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::morse::MorseBasis;

/// Trace drift that aborts an integration.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;
/// Off-diagonal weight below which populations count as asymptotic.
pub const ASYMPTOTIC_THRESHOLD: f64 = 1e-4;

/// H (diagonal) and X in the eigenbasis; X² is the square of truncated X.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisOperators {
    pub energies: Vec<f64>,
    pub x: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    /// max |(X·X)_ij − ⟨Φ_i|x²|Φ_j⟩| over the retained block.
    pub truncation_error: f64,
}

impl BasisOperators {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

fn matrix_element(basis: &MorseBasis, i: usize, j: usize, f: impl Fn(f64) -> f64) -> f64 {
    let g = basis.grid();
    basis
        .function(i)
        .iter()
        .zip(basis.function(j))
        .enumerate()
        .map(|(k, (a, b))| a * b * f(g.point(k)))
        .sum::<f64>()
        * g.dx()
}

pub fn build_operators(basis: &MorseBasis) -> BasisOperators {
    let k = basis.len();
    let mut x = DMatrix::zeros(k, k);
    let mut x2q = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let xij = matrix_element(basis, i, j, |x| x);
            let xji = matrix_element(basis, j, i, |x| x);
            let v = 0.5 * (xij + xji);
            x[(i, j)] = v;
            x[(j, i)] = v;
            let q = matrix_element(basis, i, j, |x| x * x);
            x2q[(i, j)] = q;
            x2q[(j, i)] = q;
        }
    }
    let x2 = &x * &x;
    let truncation_error = (&x2 - &x2q).amax();
    BasisOperators {
        energies: basis.energies().to_vec(),
        x,
        x2,
        truncation_error,
    }
}

/// ρ at time `time` (a.u.).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: DMatrix<Complex64>,
    pub time: f64,
}

impl DensityMatrix {
    /// |c⟩⟨c|.
    pub fn pure(coeffs: &[Complex64]) -> Self {
        let k = coeffs.len();
        DensityMatrix {
            rho: DMatrix::from_fn(k, k, |i, j| coeffs[i] * coeffs[j].conj()),
            time: 0.0,
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rho.nrows()).map(|i| self.rho[(i, i)].re).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.rho)
    }
}

pub fn hermiticity_error(rho: &DMatrix<Complex64>) -> f64 {
    let k = rho.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in i..k {
            worst = worst.max((rho[(i, j)] - rho[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Real/imaginary split ρ = A + iB with A symmetric and B antisymmetric.
struct Split {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

struct Workspace {
    xa: DMatrix<f64>,
    xb: DMatrix<f64>,
    xcr: DMatrix<f64>,
    xci: DMatrix<f64>,
    cr: DMatrix<f64>,
    ci: DMatrix<f64>,
}

impl Workspace {
    fn new(k: usize) -> Self {
        let z = || DMatrix::zeros(k, k);
        Workspace {
            xa: z(),
            xb: z(),
            xcr: z(),
            xci: z(),
            cr: z(),
            ci: z(),
        }
    }
}

/// Writes dA/dt, dB/dt into `out`. Uses
/// [X,ρ] = (XA − (XA)ᵀ) + i(XB + (XB)ᵀ) and
/// [X,C] = (XC_r + (XC_r)ᵀ) + i(XC_i − (XC_i)ᵀ),
/// four real products per evaluation.
fn derivative(ops: &BasisOperators, rate: f64, s: &Split, w: &mut Workspace, out: &mut Split) {
    let k = ops.len();
    let e = &ops.energies;
    if rate != 0.0 {
        ops.x.mul_to(&s.a, &mut w.xa);
        ops.x.mul_to(&s.b, &mut w.xb);
        for i in 0..k {
            for j in 0..k {
                w.cr[(i, j)] = w.xa[(i, j)] - w.xa[(j, i)];
                w.ci[(i, j)] = w.xb[(i, j)] + w.xb[(j, i)];
            }
        }
        ops.x.mul_to(&w.cr, &mut w.xcr);
        ops.x.mul_to(&w.ci, &mut w.xci);
    }
    for j in 0..k {
        for i in 0..k {
            let de = e[i] - e[j];
            let (mut da, mut db) = (de * s.b[(i, j)], -de * s.a[(i, j)]);
            if rate != 0.0 {
                da -= rate * (w.xcr[(i, j)] + w.xcr[(j, i)]);
                db -= rate * (w.xci[(i, j)] - w.xci[(j, i)]);
            }
            out.a[(i, j)] = da;
            out.b[(i, j)] = db;
        }
    }
}

/// Fixed-step RK4 integrator that keeps its buffers between steps.
pub struct MasterIntegrator<'a> {
    ops: &'a BasisOperators,
    rate: f64,
    dt: f64,
    state: Split,
    stage: Split,
    k: [Split; 4],
    work: Workspace,
    pub time: f64,
}

impl<'a> MasterIntegrator<'a> {
    pub fn new(
        initial: &DensityMatrix,
        ops: &'a BasisOperators,
        rate: f64,
        dt: f64,
    ) -> Result<Self> {
        let k = ops.len();
        if initial.rho.nrows() != k || initial.rho.ncols() != k {
            return Err(Error::Config(format!(
                "density matrix is {}×{}, operators are {k}×{k}",
                initial.rho.nrows(),
                initial.rho.ncols()
            )));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::Config(format!(
                "decoherence rate must be ≥ 0, got {rate}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        let herm = initial.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::NotHermitian(herm));
        }
        let z = || Split {
            a: DMatrix::zeros(k, k),
            b: DMatrix::zeros(k, k),
        };
        Ok(MasterIntegrator {
            ops,
            rate,
            dt,
            state: Split {
                a: initial.rho.map(|c| c.re),
                b: initial.rho.map(|c| c.im),
            },
            stage: z(),
            k: [z(), z(), z(), z()],
            work: Workspace::new(k),
            time: initial.time,
        })
    }

    pub fn step(&mut self) {
        let h = self.dt;
        let [k1, k2, k3, k4] = &mut self.k;
        derivative(self.ops, self.rate, &self.state, &mut self.work, k1);
        axpy_into(&mut self.stage, &self.state, 0.5 * h, k1);
        derivative(self.ops, self.rate, &self.stage, &mut self.work, k2);
        axpy_into(&mut self.stage, &self.state, 0.5 * h, k2);
        derivative(self.ops, self.rate, &self.stage, &mut self.work, k3);
        axpy_into(&mut self.stage, &self.state, h, k3);
        derivative(self.ops, self.rate, &self.stage, &mut self.work, k4);
        let w = h / 6.0;
        for idx in 0..self.state.a.len() {
            self.state.a[idx] += w * (k1.a[idx] + 2.0 * k2.a[idx] + 2.0 * k3.a[idx] + k4.a[idx]);
            self.state.b[idx] += w * (k1.b[idx] + 2.0 * k2.b[idx] + 2.0 * k3.b[idx] + k4.b[idx]);
        }
        self.time += h;
    }

    pub fn trace(&self) -> f64 {
        self.state.a.diagonal().sum()
    }

    pub fn density(&self) -> DensityMatrix {
        let k = self.ops.len();
        DensityMatrix {
            rho: DMatrix::from_fn(k, k, |i, j| {
                Complex64::new(self.state.a[(i, j)], self.state.b[(i, j)])
            }),
            time: self.time,
        }
    }
}

fn axpy_into(out: &mut Split, base: &Split, h: f64, k: &Split) {
    for idx in 0..base.a.len() {
        out.a[idx] = base.a[idx] + h * k.a[idx];
        out.b[idx] = base.b[idx] + h * k.b[idx];
    }
}

/// Integrate to `t_final`, returning ρ at t = 0, every `record_every` steps
/// and at the final step.
pub fn evolve_master(
    initial: &DensityMatrix,
    ops: &BasisOperators,
    rate: f64,
    dt: f64,
    t_final: f64,
    record_every: usize,
) -> Result<Vec<DensityMatrix>> {
    let mut integ = MasterIntegrator::new(initial, ops, rate, dt)?;
    let steps = (t_final / dt - 1e-9).ceil().max(0.0) as usize;
    let record_every = record_every.max(1);
    let trace0 = integ.trace();
    let mut out = vec![integ.density()];
    for step in 1..=steps {
        integ.step();
        let drift = (integ.trace() - trace0).abs();
        if drift > TRACE_DRIFT_LIMIT || !drift.is_finite() {
            return Err(Error::TraceDrift { step, drift });
        }
        if step % record_every == 0 || step == steps {
            let mut d = integ.density();
            d.time = initial.time + step as f64 * dt;
            out.push(d);
        }
    }
    Ok(out)
}

/// χ∞ = Σ ρ_ii², valid once the off-diagonal weight is below threshold.
pub fn asymptotic_purity(rho: &DMatrix<Complex64>) -> Result<f64> {
    asymptotic_purity_with_threshold(rho, ASYMPTOTIC_THRESHOLD)
}

pub fn asymptotic_purity_with_threshold(rho: &DMatrix<Complex64>, threshold: f64) -> Result<f64> {
    let k = rho.nrows();
    let mut off = 0.0;
    let mut diag = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                diag += rho[(i, i)].re * rho[(i, i)].re;
            } else {
                off += rho[(i, j)].norm_sqr();
            }
        }
    }
    if off >= threshold {
        return Err(Error::NotAsymptotic {
            coherence: off,
            threshold,
        });
    }
    Ok(diag)
}
