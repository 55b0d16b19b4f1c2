//! CSV writers. Every number is written with 17 significant digits so that
//! reruns with the same configuration give byte-identical files.

use std::io::{self, Write};

use crate::memory::{MemoryKernel, VolterraSolution};
use crate::moments::{components, GaussianState, Quantity};
use crate::trajectories::TrajectoryEnsemble;

pub const TIME_UNIT: &str = "1/freq";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn unit(q: Quantity) -> &'static str {
    match q {
        Quantity::Mean => "amp",
        Quantity::Normal | Quantity::Anomalous => "photons",
    }
}

/// Column headers for the flattened moments, e.g. `re_N_0_1 [photons]`.
pub fn moment_headers(modes: usize) -> Vec<String> {
    components(modes).iter().map(|c| format!("{} [{}]", c.label(), unit(c.quantity))).collect()
}

fn write_row<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    let line: Vec<String> = values.into_iter().map(fmt_f64).collect();
    writeln!(w, "{}", line.join(","))
}

pub fn write_moment_series<W: Write>(w: &mut W, states: &[GaussianState]) -> io::Result<()> {
    let modes = states.first().map_or(0, |s| s.modes());
    let mut header = vec![format!("t [{TIME_UNIT}]")];
    header.extend(moment_headers(modes));
    writeln!(w, "{}", header.join(","))?;
    for s in states {
        write_row(w, std::iter::once(s.t).chain(s.flatten()))?;
    }
    Ok(())
}

/// Ensemble means followed by their standard errors (`stderr_` columns).
pub fn write_ensemble_estimates<W: Write>(w: &mut W, ensemble: &TrajectoryEnsemble) -> io::Result<()> {
    let comps = components(ensemble.modes());
    let mut header = vec![format!("t [{TIME_UNIT}]")];
    header.extend(comps.iter().map(|c| format!("{} [{}]", c.label(), unit(c.quantity))));
    header.extend(comps.iter().map(|c| format!("stderr_{} [{}]", c.label(), unit(c.quantity))));
    writeln!(w, "{}", header.join(","))?;
    for k in 0..ensemble.times().len() {
        let e = ensemble.estimate(k);
        write_row(w, std::iter::once(e.t).chain(e.mean).chain(e.stderr))?;
    }
    Ok(())
}

/// Long format `t,series,value` for external plotting.
pub fn write_long_format<W: Write>(w: &mut W, times: &[f64], series: &[String], rows: &[Vec<f64>]) -> io::Result<()> {
    writeln!(w, "t [{TIME_UNIT}],series,value")?;
    for (t, row) in times.iter().zip(rows) {
        for (name, v) in series.iter().zip(row) {
            writeln!(w, "{},{},{}", fmt_f64(*t), name, fmt_f64(*v))?;
        }
    }
    Ok(())
}

pub fn kernel_headers(modes: usize) -> Vec<String> {
    let mut header = vec![format!("tau [{TIME_UNIT}]")];
    for name in ["Gamma", "Sigma"] {
        for i in 0..modes {
            for j in 0..modes {
                for part in ["re", "im"] {
                    header.push(format!("{part}_{name}_{i}_{j} [freq^2]"));
                }
            }
        }
    }
    header
}

pub fn kernel_rows(kernel: &MemoryKernel) -> Vec<Vec<f64>> {
    (0..kernel.grid.len)
        .map(|k| {
            let mut row = vec![kernel.grid.tau(k)];
            for m in [&kernel.gamma[k], &kernel.sigma[k]] {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        row.push(m[(i, j)].re);
                        row.push(m[(i, j)].im);
                    }
                }
            }
            row
        })
        .collect()
}

pub fn write_kernel<W: Write>(w: &mut W, kernel: &MemoryKernel) -> io::Result<()> {
    writeln!(w, "{}", kernel_headers(kernel.modes()).join(","))?;
    for row in kernel_rows(kernel) {
        write_row(w, row)?;
    }
    Ok(())
}

pub fn volterra_headers(modes: usize) -> Vec<String> {
    let mut header = vec![format!("t [{TIME_UNIT}]")];
    for name in ["a", "adag"] {
        for i in 0..modes {
            header.push(format!("re_{name}_{i} [amp]"));
            header.push(format!("im_{name}_{i} [amp]"));
        }
    }
    header
}

pub fn volterra_rows(sol: &VolterraSolution) -> Vec<Vec<f64>> {
    sol.times
        .iter()
        .zip(&sol.z)
        .map(|(t, z)| std::iter::once(*t).chain(z.iter().flat_map(|v| [v.re, v.im])).collect())
        .collect()
}

pub fn write_volterra<W: Write>(w: &mut W, sol: &VolterraSolution) -> io::Result<()> {
    writeln!(w, "{}", volterra_headers(sol.modes()).join(","))?;
    for row in volterra_rows(sol) {
        write_row(w, row)?;
    }
    Ok(())
}
