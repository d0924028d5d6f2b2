//! CSV and JSON emission. Floats are written with 17 significant digits
//! and LF line endings so that identical inputs give identical bytes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use collision_spin::dynamics::{Layout, Sample};
use collision_spin::gradflow::DecayReport;
use collision_spin::spin::LiftResult;
use serde::Serialize;

use crate::CliError;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Builds a CSV document from a header and rows of floats.
pub fn csv<I>(header: &[String], rows: I) -> String
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn trajectory_header(shape_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = vec!["tau".into(), "r".into(), "v".into()];
    for k in 1..=shape_dim {
        h.push(format!("s{k}_re"));
        h.push(format!("s{k}_im"));
    }
    for k in 1..=shape_dim {
        h.push(format!("w{k}_re"));
        h.push(format!("w{k}_im"));
    }
    h.extend(["theta", "arclength", "energy_residual"].map(String::from));
    h
}

pub fn trajectory_csv(layout: &Layout, samples: &[Sample]) -> String {
    let shape_dim = layout.s().len() / 2;
    let rows = samples.iter().map(|smp| {
        let mut row = vec![smp.time, smp.r, smp.radial];
        row.extend(smp.s.iter().flat_map(|c| [c.re, c.im]));
        row.extend(smp.velocity.iter().flat_map(|c| [c.re, c.im]));
        row.extend([smp.theta, smp.arclength, smp.energy_residual]);
        row
    });
    csv(&trajectory_header(shape_dim), rows)
}

pub const SPIN_HEADER: [&str; 7] = [
    "t",
    "re_s1",
    "im_s1",
    "theta",
    "theta_closed_form",
    "J_residual",
    "rot_component_norm",
];

pub fn spin_csv(lift: &LiftResult) -> String {
    let header: Vec<String> = SPIN_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = (0..lift.time.len()).map(|i| {
        vec![
            lift.time[i],
            lift.s1[i].0,
            lift.s1[i].1,
            lift.theta[i],
            lift.closed_form.as_ref().map_or(f64::NAN, |c| c[i]),
            lift.j_residual[i],
            lift.rotation_norm[i],
        ]
    });
    csv(&header, rows)
}

pub const DECAY_HEADER: [&str; 4] = ["tau", "W", "bound", "arclength"];

pub fn decay_csv(rep: &DecayReport) -> String {
    let header: Vec<String> = DECAY_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = (0..rep.tau.len()).map(|i| vec![rep.tau[i], rep.w[i], rep.bound[i], rep.arclength[i]]);
    csv(&header, rows)
}

pub fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Domain(e.into()))?;
    s.push('\n');
    Ok(s)
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(doc: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, doc).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(doc.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
