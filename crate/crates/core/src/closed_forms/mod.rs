//! Explicit solutions for small models, used as independent oracles.
//!
//! Every closed form is assembled from [`ExpSum`] pieces (finite sums of exponentials plus an
//! affine part), so values and derivatives of any order are exact.

mod common;
mod dividend;
mod nodiff;
mod single;

pub use common::{cf_common_two_state, cf_regeneration, CommonTwoState, RegenerationResult, TwoStateCommonParams};
pub use dividend::{cf_dividend_two_state, characteristic_quartic, DividendTwoStateParams, TwoStateDividend};
pub use nodiff::{cf_nodiff_state1, cf_nodiff_state2, NoDiffParams};
pub use single::cf_single_state;

use crate::error::{Error, Result};
use crate::model::{validate_model, validate_structure, MmbmModel, RawModel};
use crate::stationary::{Atom, StationaryCdf};

/// One exponential `coef · e^{rate (z − shift)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub rate: f64,
    pub coef: f64,
    pub shift: f64,
}

/// `constant + slope·z + Σ coef·e^{rate (z − shift)}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpSum {
    pub constant: f64,
    pub slope: f64,
    pub terms: Vec<ExpTerm>,
}

impl ExpSum {
    pub fn constant(c: f64) -> Self {
        ExpSum {
            constant: c,
            ..Default::default()
        }
    }

    pub fn push(&mut self, rate: f64, coef: f64, shift: f64) -> &mut Self {
        self.terms.push(ExpTerm { rate, coef, shift });
        self
    }

    /// Adds `scale · e^{d (z − s0)} · sinh(λ (z − z0))`, expanded around `s0`.
    pub fn push_exp_sinh(&mut self, scale: f64, d: f64, s0: f64, lam: f64, z0: f64) -> &mut Self {
        let w = lam * (s0 - z0);
        self.push(d + lam, 0.5 * scale * w.exp(), s0);
        self.push(d - lam, -0.5 * scale * (-w).exp(), s0)
    }

    /// `d`-th derivative at `z`.
    pub fn eval(&self, z: f64, d: u32) -> f64 {
        let affine = match d {
            0 => self.constant + self.slope * z,
            1 => self.slope,
            _ => 0.0,
        };
        affine
            + self
                .terms
                .iter()
                .map(|t| t.coef * t.rate.powi(d as i32) * (t.rate * (z - t.shift)).exp())
                .sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> ExpSum {
        ExpSum {
            constant: self.constant * s,
            slope: self.slope * s,
            terms: self
                .terms
                .iter()
                .map(|t| ExpTerm { coef: t.coef * s, ..*t })
                .collect(),
        }
    }

    pub fn add(&self, other: &ExpSum) -> ExpSum {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        ExpSum {
            constant: self.constant + other.constant,
            slope: self.slope + other.slope,
            terms,
        }
    }
}

/// Per-state piecewise CDF on `[a(i), b(i)]` with explicit atoms.
#[derive(Debug, Clone)]
pub struct ClosedFormCdf {
    pi: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// `(lo, hi, Π_i)` pieces covering `[a(i), b(i)]` for every state.
    pieces: Vec<Vec<(f64, f64, ExpSum)>>,
    atoms: Vec<Atom>,
}

impl ClosedFormCdf {
    pub(crate) fn new(pi: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, pieces: Vec<Vec<(f64, f64, ExpSum)>>, atoms: Vec<Atom>) -> Self {
        ClosedFormCdf {
            pi,
            lower,
            upper,
            pieces,
            atoms,
        }
    }

    fn piece(&self, i: usize, z: f64) -> Option<&ExpSum> {
        let ps = &self.pieces[i];
        ps.iter()
            .find(|(lo, hi, _)| *lo <= z && z < *hi)
            .or_else(|| ps.iter().find(|(lo, hi, _)| *lo <= z && z <= *hi))
            .map(|(_, _, f)| f)
    }
}

impl StationaryCdf for ClosedFormCdf {
    fn n_states(&self) -> usize {
        self.pi.len()
    }

    fn pi(&self, i: usize) -> f64 {
        self.pi[i]
    }

    fn cdf(&self, i: usize, z: f64) -> f64 {
        if z < self.lower[i] {
            0.0
        } else if z >= self.upper[i] {
            self.pi[i]
        } else {
            self.piece(i, z).map_or(0.0, |f| f.eval(z, 0))
        }
    }

    fn derivative(&self, i: usize, z: f64, d: u32) -> f64 {
        if z < self.lower[i] || z > self.upper[i] {
            return 0.0;
        }
        self.piece(i, z).map_or(0.0, |f| f.eval(z, d))
    }

    fn atoms(&self) -> Vec<Atom> {
        self.atoms.clone()
    }
}

fn pi2(q12: f64, q21: f64) -> (f64, f64) {
    (q21 / (q12 + q21), q12 / (q12 + q21))
}

fn require(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::SignConstraintViolated(what.to_string()))
    }
}

/// The two-state model with `a = (0, 0)` matching closed-form parameters.
pub(crate) fn two_state_model(q12: f64, q21: f64, mu: [f64; 2], sigma: [f64; 2], b: [f64; 2]) -> Result<MmbmModel> {
    Ok(validate_model(&two_state_raw(q12, q21, mu, sigma, b))?)
}

fn two_state_raw(q12: f64, q21: f64, mu: [f64; 2], sigma: [f64; 2], b: [f64; 2]) -> RawModel {
    RawModel {
        q: vec![vec![-q12, q12], vec![q21, -q21]],
        mu: mu.to_vec(),
        sigma: sigma.to_vec(),
        a: vec![0.0, 0.0],
        b: b.to_vec(),
    }
}

/// Dividend models have no stationary regime, so only the structure is checked.
pub(crate) fn two_state_structure(q12: f64, q21: f64, mu: [f64; 2], sigma: [f64; 2], b: [f64; 2]) -> Result<MmbmModel> {
    Ok(validate_structure(&two_state_raw(q12, q21, mu, sigma, b))?)
}

/// `coth x`, accurate for small and large arguments.
pub(crate) fn coth(x: f64) -> f64 {
    1.0 / x.tanh()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_sinh_expansion() {
        let mut f = ExpSum::default();
        f.push_exp_sinh(0.7, -0.3, 1.2, 1.9, 0.4);
        for z in [0.0f64, 0.5, 1.7] {
            let exact = 0.7 * (-0.3 * (z - 1.2)).exp() * (1.9 * (z - 0.4)).sinh();
            assert!((f.eval(z, 0) - exact).abs() < 1e-13);
            let h = 1e-5;
            let fd = (f.eval(z + h, 0) - f.eval(z - h, 0)) / (2.0 * h);
            assert!((f.eval(z, 1) - fd).abs() < 1e-8);
        }
    }
}
