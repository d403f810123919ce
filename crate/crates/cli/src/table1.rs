//! Coherence lengths ℓ = (8Λt)^{-1/2} at the tabulated rates and times.

use std::io::Write;

use morse_qsd::observables::coherence_length;
use morse_qsd::units;

/// Published rows: Λ (a.u.), t (fs) and ℓ (Å) as printed.
pub const ROWS: [(f64, f64, &str); 6] = [
    (1e-4, 192.0, "0.21"),
    (1e-4, 640.0, "0.11"),
    (1e-4, 1600.0, "0.073"),
    (1e-3, 192.0, "0.066"),
    (1e-3, 640.0, "0.036"),
    (1e-3, 1600.0, "0.023"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub rate_au: f64,
    pub t_fs: f64,
    pub ell_angstrom: f64,
    pub printed: &'static str,
}

impl Row {
    /// ℓ rounded to as many decimals as the printed value carries.
    pub fn rounded(&self) -> String {
        let decimals = self.printed.split('.').nth(1).map_or(0, str::len);
        format!("{:.*}", decimals, self.ell_angstrom)
    }

    pub fn matches_printed(&self) -> bool {
        self.rounded() == self.printed
    }
}

pub fn rows() -> Vec<Row> {
    ROWS.iter()
        .map(|&(rate, t, printed)| Row {
            rate_au: rate,
            t_fs: t,
            ell_angstrom: units::bohr_to_angstrom(
                coherence_length(rate, units::fs_to_au(t)).expect("positive rate"),
            ),
            printed,
        })
        .collect()
}

pub fn write<W: Write>(w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "# morse-qsd table1 v{}",
        morse_qsd::export::SCHEMA_VERSION
    )?;
    writeln!(w, "rate_au,t_fs,ell_A,ell_rounded_A,printed_A")?;
    for r in rows() {
        writeln!(
            w,
            "{:e},{},{:.6},{},{}",
            r.rate_au,
            r.t_fs,
            r.ell_angstrom,
            r.rounded(),
            r.printed
        )?;
    }
    Ok(())
}
