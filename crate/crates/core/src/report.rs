//! Plain-text renderings shared by the CLI and the determinism checks.
//!
//! Numbers use 17 significant digits, states are 1-based, lines end in `\n`.

use std::fmt::Write;

use crate::dividend::DividendValue;
use crate::simulator::{EmpiricalCdf, RegenerationEstimate};
use crate::stationary::StationaryCdf;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Columns `state,z,cdf,density`.
pub fn cdf_csv(dist: &dyn StationaryCdf, grid: &[f64]) -> String {
    let mut s = String::from("state,z,cdf,density\n");
    for i in 0..dist.n_states() {
        for &z in grid {
            let _ = writeln!(s, "{},{},{},{}", i + 1, num(z), num(dist.cdf(i, z)), num(dist.density(i, z)));
        }
    }
    s
}

/// Columns `state,z,value,derivative`.
pub fn value_csv(v: &dyn DividendValue, grid: &[f64]) -> String {
    let mut s = String::from("state,z,value,derivative\n");
    for j in 0..v.n_states() {
        for &z in grid {
            let _ = writeln!(s, "{},{},{},{}", j + 1, num(z), num(v.value(z, j)), num(v.derivative(z, j, 1)));
        }
    }
    s
}

/// Columns `z,H`.
pub fn regen_csv(h: impl Fn(f64) -> f64, grid: &[f64]) -> String {
    let mut s = String::from("z,H\n");
    for &z in grid {
        let _ = writeln!(s, "{},{}", num(z), num(h(z)));
    }
    s
}

/// Columns `state,z,cdf,density,cdf_se`.
pub fn empirical_cdf_csv(e: &EmpiricalCdf) -> String {
    let mut s = String::from("state,z,cdf,density,cdf_se\n");
    for i in 0..e.cdf.len() {
        for (p, &z) in e.grid.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                i + 1,
                num(z),
                num(e.cdf[i][p]),
                num(e.density[i][p]),
                num(e.std_error[i][p])
            );
        }
    }
    s
}

/// Columns `z,H,H_halfwidth`.
pub fn empirical_regen_csv(r: &RegenerationEstimate, grid: &[f64]) -> String {
    let mut s = String::from("z,H,H_halfwidth\n");
    for &z in grid {
        let _ = writeln!(s, "{},{},{}", num(z), num(r.h(z)), num(r.h_half_width));
    }
    s
}
