//! Piecewise exponential representations and the dense gluing systems built from them.
//!
//! On interval `k` the solution vector is `Γ_k e^{Λ_k (z − z_ref)} u_k + α_k·[1, c] + β_k z`,
//! where `c` are optional external parameters (the dividend boundary constants). Each mode is
//! anchored at the interval end where its exponential is largest, so every basis function
//! is bounded by one on its interval.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{JordanPair, ParticularSolution, C64};

/// Condition number above which a gluing system is declared singular.
pub const CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPiece {
    pub lo: f64,
    pub hi: f64,
    pub active: Vec<usize>,
    pub pair: JordanPair,
    pub anchors: Vec<f64>,
    pub particular: ParticularSolution,
    /// Column of this piece's first mode coefficient in the global unknown vector.
    pub offset: usize,
}

impl IntervalPiece {
    pub fn new(lo: f64, hi: f64, active: Vec<usize>, pair: JordanPair, particular: ParticularSolution, offset: usize) -> Self {
        let anchors = pair
            .modes
            .iter()
            .map(|l| if l.re > 0.0 { hi } else { lo })
            .collect();
        IntervalPiece {
            lo,
            hi,
            active,
            pair,
            anchors,
            particular,
            offset,
        }
    }

    pub fn mode_count(&self) -> usize {
        self.pair.mode_count()
    }

    pub fn position(&self, state: usize) -> Option<usize> {
        self.active.iter().position(|&i| i == state)
    }

    pub fn contains(&self, z: f64) -> bool {
        self.lo <= z && z <= self.hi
    }

    /// `d`-th derivative of each basis function for active row `r` at `z`.
    pub fn mode_row(&self, r: usize, z: f64, d: u32) -> Vec<C64> {
        self.pair
            .modes
            .iter()
            .zip(&self.anchors)
            .enumerate()
            .map(|(c, (l, &anchor))| self.pair.gamma[(r, c)] * (l * (z - anchor)).exp() * l.powu(d))
            .collect()
    }

    /// Known part of the particular solution and its coefficients on the external parameters.
    pub fn particular_row(&self, r: usize, z: f64, d: u32) -> (f64, Vec<f64>) {
        let p = &self.particular;
        let params = p.alpha.ncols() - 1;
        match d {
            0 => (
                p.alpha[(r, 0)] + p.beta[r] * z,
                (0..params).map(|c| p.alpha[(r, c + 1)]).collect(),
            ),
            1 => (p.beta[r], vec![0.0; params]),
            _ => (0.0, vec![0.0; params]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSolution {
    pub pieces: Vec<IntervalPiece>,
    pub coeffs: DVector<C64>,
    pub params: DVector<f64>,
}

impl PiecewiseSolution {
    /// Complex value of the `d`-th derivative of active state `state` on piece `k`.
    pub fn eval_complex(&self, k: usize, state: usize, z: f64, d: u32) -> C64 {
        let piece = &self.pieces[k];
        let r = piece
            .position(state)
            .expect("state is not active on this piece");
        let modes = piece.mode_row(r, z, d);
        let mut v: C64 = modes
            .iter()
            .enumerate()
            .map(|(c, b)| b * self.coeffs[piece.offset + c])
            .sum();
        let (known, weights) = piece.particular_row(r, z, d);
        v += known + weights.iter().zip(self.params.iter()).map(|(w, p)| w * p).sum::<f64>();
        v
    }

    pub fn eval(&self, k: usize, state: usize, z: f64, d: u32) -> f64 {
        self.eval_complex(k, state, z, d).re
    }

    /// Largest imaginary residue over a uniform grid on every piece.
    pub fn max_imaginary(&self, points: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, piece) in self.pieces.iter().enumerate() {
            for &i in &piece.active {
                for j in 0..points {
                    let z = piece.lo + (piece.hi - piece.lo) * j as f64 / (points - 1).max(1) as f64;
                    worst = worst.max(self.eval_complex(k, i, z, 0).im.abs());
                }
            }
        }
        worst
    }
}

/// What a row of a gluing system enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstraintFamily {
    /// No mass strictly below a lower barrier.
    EntryZero,
    /// Full marginal mass reached at an upper barrier.
    ExitPi,
    Continuity,
    Differentiability,
    /// Value fixed at a point (dividend: `V(0, j) = 0`).
    ValueAt,
    /// Slope fixed at a point (dividend: `V'(b(j), j) = 1`).
    SlopeAt,
    /// Ties an external parameter to the representation.
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowLabel {
    pub family: ConstraintFamily,
    pub state: usize,
    pub at: f64,
}

/// Square complex system over mode coefficients followed by external parameters.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub matrix: DMatrix<C64>,
    pub rhs: DVector<C64>,
    pub labels: Vec<RowLabel>,
    pub n_modes: usize,
    pub n_params: usize,
}

/// Accumulates rows of the form `Σ (basis terms)·x = target − known`.
pub struct SystemBuilder<'a> {
    pieces: &'a [IntervalPiece],
    n_modes: usize,
    n_params: usize,
    rows: Vec<(Vec<C64>, C64, RowLabel)>,
}

impl<'a> SystemBuilder<'a> {
    pub fn new(pieces: &'a [IntervalPiece], n_params: usize) -> Self {
        let n_modes = pieces.iter().map(|p| p.mode_count()).sum();
        SystemBuilder {
            pieces,
            n_modes,
            n_params,
            rows: Vec::new(),
        }
    }

    fn width(&self) -> usize {
        self.n_modes + self.n_params
    }

    /// Row and known constant for the `d`-th derivative of `state` on piece `k` at `z`.
    pub fn term(&self, k: usize, state: usize, z: f64, d: u32) -> (Vec<C64>, f64) {
        let piece = &self.pieces[k];
        let r = piece.position(state).expect("inactive state in constraint");
        let mut row = vec![C64::from(0.0); self.width()];
        for (c, v) in piece.mode_row(r, z, d).into_iter().enumerate() {
            row[piece.offset + c] = v;
        }
        let (known, weights) = piece.particular_row(r, z, d);
        for (p, w) in weights.into_iter().enumerate() {
            row[self.n_modes + p] += C64::from(w);
        }
        (row, known)
    }

    /// `value(k, state, z, d) = target`.
    pub fn fix(&mut self, label: RowLabel, k: usize, z: f64, d: u32, target: f64) {
        let (row, known) = self.term(k, label.state, z, d);
        self.rows.push((row, C64::from(target - known), label));
    }

    /// `value(k1, ..) − value(k2, ..) = 0` at a shared point.
    pub fn glue(&mut self, label: RowLabel, k1: usize, k2: usize, z: f64, d: u32) {
        let (r1, c1) = self.term(k1, label.state, z, d);
        let (r2, c2) = self.term(k2, label.state, z, d);
        let row = r1.iter().zip(&r2).map(|(a, b)| a - b).collect();
        self.rows.push((row, C64::from(c2 - c1), label));
    }

    /// `value(k, state, z, 0) − params[p] = 0`.
    pub fn tie(&mut self, label: RowLabel, k: usize, z: f64, p: usize) {
        let (mut row, known) = self.term(k, label.state, z, 0);
        row[self.n_modes + p] -= C64::from(1.0);
        self.rows.push((row, C64::from(-known), label));
    }

    pub fn finish(self) -> Result<ConstraintSystem> {
        let cols = self.width();
        if self.rows.len() != cols {
            return Err(Error::CountMismatch {
                rows: self.rows.len(),
                cols,
            });
        }
        let matrix = DMatrix::from_fn(cols, cols, |r, c| self.rows[r].0[c]);
        let rhs = DVector::from_fn(cols, |r, _| self.rows[r].1);
        let labels = self.rows.iter().map(|r| r.2).collect();
        Ok(ConstraintSystem {
            matrix,
            rhs,
            labels,
            n_modes: self.n_modes,
            n_params: self.n_params,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub condition: f64,
    /// `‖A x − b‖∞ / max(‖b‖∞, 1e-300)`.
    pub relative_residual: f64,
}

/// Dense LU solve; the condition number comes from the singular values.
pub fn solve_system(sys: &ConstraintSystem) -> Result<(DVector<C64>, SolveDiagnostics)> {
    let n = sys.matrix.nrows();
    if n == 0 {
        return Ok((
            DVector::zeros(0),
            SolveDiagnostics {
                condition: 1.0,
                relative_residual: 0.0,
            },
        ));
    }
    let sv = sys.matrix.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::NumericallySingular { condition });
    }
    let x = sys
        .matrix
        .clone()
        .lu()
        .solve(&sys.rhs)
        .ok_or(Error::NumericallySingular { condition })?;
    let r = &sys.matrix * &x - &sys.rhs;
    let rn = r.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let bn = sys.rhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok((
        x,
        SolveDiagnostics {
            condition,
            relative_residual: rn / bn.max(1e-300),
        },
    ))
}
