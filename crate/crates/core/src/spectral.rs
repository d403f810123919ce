//! FFT plumbing shared by the propagator and the kinetic-energy expectation.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::qstate::Grid;

/// Angular wavenumbers of the discrete Fourier modes in FFT order.
pub fn wavenumbers(grid: &Grid) -> Vec<f64> {
    let n = grid.len();
    let dk = 2.0 * std::f64::consts::PI / grid.length();
    (0..n)
        // The Nyquist mode is assigned −N/2, as numpy's fftfreq does.
        .map(|j| {
            let m = if j < n / 2 {
                j as f64
            } else {
                j as f64 - n as f64
            };
            m * dk
        })
        .collect()
}

/// Kinetic energy k²/2m of each Fourier mode.
pub fn kinetic_spectrum(grid: &Grid, mass: f64) -> Vec<f64> {
    wavenumbers(grid)
        .into_iter()
        .map(|k| k * k / (2.0 * mass))
        .collect()
}

/// Forward/inverse plan pair for one grid size. Cheap to clone.
#[derive(Clone)]
pub struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        FftPair {
            forward,
            inverse,
            scratch_len,
        }
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.scratch_len]
    }
}

/// ⟨ψ|T̂|ψ⟩ with T̂ diagonal in the discrete Fourier basis. Independent of
/// the normalization of `psi`'s quadrature only through the usual
/// Parseval factor, so the result is per unit ∫|ψ|²dx.
pub fn kinetic_expectation(psi: &[Complex64], grid: &Grid, mass: f64, fft: &FftPair) -> f64 {
    let mut buf = psi.to_vec();
    let mut scratch = fft.scratch();
    fft.forward.process_with_scratch(&mut buf, &mut scratch);
    let spectrum = kinetic_spectrum(grid, mass);
    let (mut num, mut den) = (0.0, 0.0);
    for (c, t) in buf.iter().zip(&spectrum) {
        let w = c.norm_sqr();
        num += w * t;
        den += w;
    }
    num / den * norm_sqr(psi, grid.dx())
}

/// ⟨ψ|p̂|ψ⟩ computed spectrally, per unit norm times ∫|ψ|²dx.
pub fn momentum_expectation(psi: &[Complex64], grid: &Grid, fft: &FftPair) -> f64 {
    let mut buf = psi.to_vec();
    let mut scratch = fft.scratch();
    fft.forward.process_with_scratch(&mut buf, &mut scratch);
    let k = wavenumbers(grid);
    let n = grid.len();
    let (mut num, mut den) = (0.0, 0.0);
    for (j, (c, kj)) in buf.iter().zip(&k).enumerate() {
        // The Nyquist mode has no definite sign; leave it out of ⟨p⟩.
        let w = c.norm_sqr();
        den += w;
        if !(n.is_multiple_of(2) && j == n / 2) {
            num += w * kj;
        }
    }
    num / den * norm_sqr(psi, grid.dx())
}

pub(crate) fn norm_sqr(psi: &[Complex64], dx: f64) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx
}
