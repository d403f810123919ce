//! CSV writers. Every file starts with a `# morse-qsd <kind> v<N>` comment
//! line followed by a header row naming columns and units. Output is in
//! laboratory units: fs, Å, Å⁻¹ for densities, cm⁻¹ for energies.

use std::io::{self, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::morse::MorseBasis;
use crate::observables::{pair_index, ObservableSeries};
use crate::qstate::{Grid, GridState};
use crate::units;

pub const SCHEMA_VERSION: u32 = 1;

fn preamble<W: Write>(w: &mut W, kind: &str, header: &[String]) -> io::Result<()> {
    writeln!(w, "# morse-qsd {kind} v{SCHEMA_VERSION}")?;
    writeln!(w, "{}", header.join(","))
}

fn row<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        write!(w, "{v:e}")?;
    }
    w.write_all(b"\n")
}

/// Bohr⁻¹ densities to Å⁻¹.
fn per_angstrom(v: f64) -> f64 {
    v / units::consts::BOHR_IN_ANGSTROM
}

/// Which columns of an [`ObservableSeries`] to write.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservableColumns {
    /// Levels whose populations are written; empty means all.
    pub levels: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

pub fn write_observables<W: Write>(
    w: &mut W,
    s: &ObservableSeries,
    cols: &ObservableColumns,
) -> io::Result<()> {
    let k = s.basis_size();
    let levels: Vec<usize> = if cols.levels.is_empty() {
        (0..k).collect()
    } else {
        cols.levels.iter().copied().filter(|&i| i < k).collect()
    };
    let pairs: Vec<(usize, usize)> = cols
        .pairs
        .iter()
        .map(|&(i, j)| (i.min(j), i.max(j)))
        .filter(|&(i, j)| i != j && j < k)
        .collect();
    let errs = s.errors.as_ref();
    let mut header = vec!["t_fs".to_string()];
    if s.mean_x.is_some() {
        header.push("mean_x_A".into());
        if errs.is_some() {
            header.push("mean_x_err_A".into());
        }
    }
    header.push("chi".into());
    if errs.is_some() {
        header.push("chi_err".into());
    }
    header.push("residual".into());
    for &i in &levels {
        header.push(format!("P_{i}"));
        if errs.is_some() {
            header.push(format!("P_{i}_err"));
        }
    }
    for &(i, j) in &pairs {
        header.push(format!("zeta_{i}_{j}"));
        if errs.is_some() {
            header.push(format!("zeta_{i}_{j}_err"));
        }
    }
    preamble(w, "observables", &header)?;
    for r in 0..s.len() {
        let mut v = vec![units::au_to_fs(s.times[r])];
        if let Some(mx) = &s.mean_x {
            v.push(units::bohr_to_angstrom(mx[r]));
            if let Some(e) = errs {
                v.push(units::bohr_to_angstrom(e.mean_x[r]));
            }
        }
        v.push(s.purity[r]);
        if let Some(e) = errs {
            v.push(e.purity[r]);
        }
        v.push(s.residual[r]);
        for &i in &levels {
            v.push(s.populations[r][i]);
            if let Some(e) = errs {
                v.push(e.populations[r][i]);
            }
        }
        for &(i, j) in &pairs {
            let idx = pair_index(i, j, k);
            v.push(s.coherences[r][idx]);
            if let Some(e) = errs {
                v.push(e.coherences[r][idx]);
            }
        }
        row(w, v)?;
    }
    Ok(())
}

/// Averaged densities, one column per time.
pub fn write_densities<W: Write>(
    w: &mut W,
    grid: &Grid,
    times: &[f64],
    densities: &[Vec<f64>],
) -> io::Result<()> {
    let mut header = vec!["x_A".to_string()];
    header.extend(
        times
            .iter()
            .map(|t| format!("rho_t{:.3}fs_perA", units::au_to_fs(*t))),
    );
    preamble(w, "density", &header)?;
    for j in 0..grid.len() {
        let mut v = vec![units::bohr_to_angstrom(grid.point(j))];
        v.extend(densities.iter().map(|d| per_angstrom(d[j])));
        row(w, v)?;
    }
    Ok(())
}

/// Real or imaginary part of ρ(x, x′): first column x, remaining columns x′.
pub fn write_matrix<W: Write>(
    w: &mut W,
    points: &[f64],
    m: &DMatrix<Complex64>,
    imaginary: bool,
) -> io::Result<()> {
    let mut header = vec!["x_A".to_string()];
    header.extend(
        points
            .iter()
            .map(|p| format!("{:.6}", units::bohr_to_angstrom(*p))),
    );
    preamble(
        w,
        if imaginary {
            "rho_xx_imag"
        } else {
            "rho_xx_real"
        },
        &header,
    )?;
    for (a, &xa) in points.iter().enumerate() {
        let mut v = vec![units::bohr_to_angstrom(xa)];
        v.extend((0..points.len()).map(|b| {
            let c = m[(a, b)];
            per_angstrom(if imaginary { c.im } else { c.re })
        }));
        row(w, v)?;
    }
    Ok(())
}

pub fn write_state<W: Write>(w: &mut W, state: &GridState) -> io::Result<()> {
    let header = ["x_A", "re_psi", "im_psi", "abs2_perA"].map(String::from);
    preamble(w, "state", &header)?;
    let s = units::consts::BOHR_IN_ANGSTROM.sqrt();
    for (j, c) in state.psi.iter().enumerate() {
        // ψ in Å^{-1/2}
        row(
            w,
            [
                units::bohr_to_angstrom(state.grid.point(j)),
                c.re / s,
                c.im / s,
                per_angstrom(c.norm_sqr()),
            ],
        )?;
    }
    Ok(())
}

/// Eigenfunctions (Å^{-1/2}) as columns, preceded by their energies in a
/// second header-like row starting with `E_cm-1`.
pub fn write_basis<W: Write>(w: &mut W, basis: &MorseBasis) -> io::Result<()> {
    let mut header = vec!["x_A".to_string()];
    header.extend((0..basis.len()).map(|i| format!("phi_{i}")));
    preamble(w, "basis", &header)?;
    let mut e = vec![f64::NAN];
    e.extend(
        basis
            .energies()
            .iter()
            .map(|v| units::hartree_to_inv_cm(*v)),
    );
    row(w, e)?;
    let s = units::consts::BOHR_IN_ANGSTROM.sqrt();
    for j in 0..basis.grid().len() {
        let mut v = vec![units::bohr_to_angstrom(basis.grid().point(j))];
        v.extend((0..basis.len()).map(|i| basis.function(i)[j] / s));
        row(w, v)?;
    }
    Ok(())
}

/// Per-realization ⟨x̂⟩ᵢ(t) in Å, one column per realization.
pub fn write_trajectories<W: Write>(
    w: &mut W,
    dt: f64,
    trajectories: &[(usize, &[f64])],
) -> io::Result<()> {
    let mut header = vec!["t_fs".to_string()];
    header.extend(trajectories.iter().map(|(i, _)| format!("x_{i}_A")));
    preamble(w, "trajectories", &header)?;
    let len = trajectories.iter().map(|t| t.1.len()).max().unwrap_or(0);
    for s in 0..len {
        let mut v = vec![units::au_to_fs(s as f64 * dt)];
        v.extend(
            trajectories
                .iter()
                .map(|(_, t)| t.get(s).map_or(f64::NAN, |x| units::bohr_to_angstrom(*x))),
        );
        row(w, v)?;
    }
    Ok(())
}
