//! Expected discounted dividends under state-dependent barrier strategies.
//!
//! With ruin at 0 and payouts whenever the surplus is pushed above `b(J)`, the value
//! `V(z, j)` solves on `0 < z < b(j)`
//!
//! ```text
//! (σ²(j)/2) V'' + μ(j) V' − δ V + Σ_k q_jk [V(z ∧ b(k), k) + (z − b(k))⁺] = 0
//! ```
//!
//! with `V(0, j) = 0` and `V'(b(j), j) = 1`. Above its barrier a state pays out the excess at
//! once, so `V(z, j) = V(b(j), j) + z − b(j)`. The constants `C_k = V(b(k), k)` make the
//! forcing of higher intervals depend on the solution itself; they are carried as extra
//! unknowns, each with a tie row, so the whole problem is one dense linear solve.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::decomposition::IntervalPartition;
use crate::error::{Error, Result};
use crate::model::MmbmModel;
use crate::piecewise::{
    solve_system, ConstraintFamily, ConstraintSystem, IntervalPiece, PiecewiseSolution, RowLabel, SolveDiagnostics,
    SystemBuilder,
};
use crate::spectral::{pencil_for, particular_solution, solve_pencil_on, PencilKind};

/// Anything that can be queried like a dividend value function.
pub trait DividendValue {
    fn n_states(&self) -> usize;
    fn barrier(&self, j: usize) -> f64;
    /// `V(z, j)`, extended by `V(b(j), j) + z − b(j)` above the barrier and by 0 below 0.
    fn value(&self, z: f64, j: usize) -> f64;
    /// `d`-th derivative (`d ≥ 1`) with the same extension.
    fn derivative(&self, z: f64, j: usize, d: u32) -> f64;
}

#[derive(Debug, Clone)]
pub struct DividendModel {
    base: MmbmModel,
    delta: f64,
}

impl DividendModel {
    /// Requires `δ > 0`, `a ≡ 0`, `b > 0` and no state with `σ = μ = 0`.
    pub fn new(base: MmbmModel, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("discount rate must be positive, got {delta}")));
        }
        for j in 0..base.n_states() {
            if base.a(j) != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "dividend models need a = 0 (state {} has a = {})",
                    j + 1,
                    base.a(j)
                )));
            }
            if !(base.b(j) > 0.0) {
                return Err(Error::InvalidArgument(format!("state {} has b <= 0", j + 1)));
            }
            if base.sigma(j) == 0.0 && base.mu(j) == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "state {} has neither drift nor diffusion",
                    j + 1
                )));
            }
        }
        Ok(DividendModel { base, delta })
    }

    pub fn base(&self) -> &MmbmModel {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_states(&self) -> usize {
        self.base.n_states()
    }

    /// Breakpoints `{0} ∪ {b(j)}`; a state is active below its barrier.
    pub fn partition(&self) -> IntervalPartition {
        let n = self.n_states();
        IntervalPartition::from_barriers(&vec![0.0; n], &self.base.params().b)
    }
}

fn build_pieces(dm: &DividendModel, part: &IntervalPartition) -> Result<Vec<IntervalPiece>> {
    let m = &dm.base;
    let q = m.q().matrix();
    let n_states = m.n_states();
    let mut offset = 0;
    let mut pieces = Vec::new();
    for k in 0..part.n_intervals() {
        let (lo, hi) = part.bounds(k);
        let active = part.active_sets[k].clone();
        let n = active.len();
        let pencil = pencil_for(m, &active, PencilKind::Dividend { delta: dm.delta });
        let pair = solve_pencil_on(&pencil, k)?;
        // Capped states contribute q_ik (C_k + z − b_k) and move to the right-hand side.
        let mut rhs0 = DMatrix::zeros(n, n_states + 1);
        let mut rhs1 = DVector::zeros(n);
        for (r, &i) in active.iter().enumerate() {
            for c in (0..n_states).filter(|&c| m.b(c) <= lo) {
                rhs0[(r, 0)] += q[(i, c)] * m.b(c);
                rhs0[(r, c + 1)] -= q[(i, c)];
                rhs1[r] -= q[(i, c)];
            }
        }
        let particular = particular_solution(&pencil, &rhs0, &rhs1, k)?;
        let piece = IntervalPiece::new(lo, hi, active, pair, particular, offset);
        offset += piece.mode_count();
        pieces.push(piece);
    }
    Ok(pieces)
}

/// Ruin, smooth-pasting, regularity and tie rows over modes and the constants `V(b(k), k)`.
pub fn assemble_dividend_system(dm: &DividendModel, part: &IntervalPartition, pieces: &[IntervalPiece]) -> Result<ConstraintSystem> {
    let m = &dm.base;
    let mut b = SystemBuilder::new(pieces, m.n_states());
    for j in 0..m.n_states() {
        let ks = part.intervals_of(j);
        let (first, last) = (ks[0], ks[ks.len() - 1]);
        let (sigma, mu, bj) = (m.sigma(j), m.mu(j), m.b(j));
        let label = |family, at| RowLabel { family, state: j, at };
        if sigma > 0.0 || mu < 0.0 {
            b.fix(label(ConstraintFamily::ValueAt, 0.0), first, 0.0, 0, 0.0);
        }
        if sigma > 0.0 || mu > 0.0 {
            b.fix(label(ConstraintFamily::SlopeAt, bj), last, bj, 1, 1.0);
        }
        for w in ks.windows(2) {
            let z = part.breakpoints[w[1]];
            b.glue(label(ConstraintFamily::Continuity, z), w[0], w[1], z, 0);
            if sigma > 0.0 {
                b.glue(label(ConstraintFamily::Differentiability, z), w[0], w[1], z, 1);
            }
        }
        b.tie(label(ConstraintFamily::Tie, bj), last, bj, j);
    }
    b.finish()
}

#[derive(Debug, Clone)]
pub struct ValueFunction {
    model: DividendModel,
    partition: IntervalPartition,
    solution: PiecewiseSolution,
    diagnostics: SolveDiagnostics,
}

pub fn solve_value_function(dm: &DividendModel) -> Result<ValueFunction> {
    let part = dm.partition();
    let pieces = build_pieces(dm, &part)?;
    let sys = assemble_dividend_system(dm, &part, &pieces)?;
    let (x, diagnostics) = solve_system(&sys)?;
    let coeffs = x.rows(0, sys.n_modes).into_owned();
    let params = DVector::from_fn(sys.n_params, |p, _| x[sys.n_modes + p].re);
    Ok(ValueFunction {
        model: dm.clone(),
        partition: part,
        solution: PiecewiseSolution { pieces, coeffs, params },
        diagnostics,
    })
}

impl ValueFunction {
    pub fn model(&self) -> &DividendModel {
        &self.model
    }

    pub fn diagnostics(&self) -> SolveDiagnostics {
        self.diagnostics
    }

    pub fn solution(&self) -> &PiecewiseSolution {
        &self.solution
    }

    pub fn partition(&self) -> &IntervalPartition {
        &self.partition
    }

    /// `V(b(j), j)` for every state.
    pub fn constants(&self) -> Vec<f64> {
        self.solution.params.iter().copied().collect()
    }

    /// Mutable access for negative-control tests.
    #[doc(hidden)]
    pub fn solution_mut(&mut self) -> &mut PiecewiseSolution {
        &mut self.solution
    }

    fn piece_of(&self, z: f64, j: usize, left: bool) -> Option<usize> {
        self.partition.intervals_of(j).into_iter().find(|&k| {
            let (lo, hi) = self.partition.bounds(k);
            if left {
                lo < z && z <= hi
            } else {
                lo <= z && z < hi
            }
        })
    }

    /// Representation on the interval left (`left = true`) or right of `z`.
    pub fn one_sided(&self, z: f64, j: usize, d: u32, left: bool) -> Option<f64> {
        self.piece_of(z, j, left).map(|k| self.solution.eval(k, j, z, d))
    }
}

impl DividendValue for ValueFunction {
    fn n_states(&self) -> usize {
        self.model.n_states()
    }

    fn barrier(&self, j: usize) -> f64 {
        self.model.base.b(j)
    }

    fn value(&self, z: f64, j: usize) -> f64 {
        evaluate_value(self, z, j)
    }

    fn derivative(&self, z: f64, j: usize, d: u32) -> f64 {
        let bj = self.barrier(j);
        if z < 0.0 {
            0.0
        } else if z > bj {
            if d == 1 {
                1.0
            } else {
                0.0
            }
        } else {
            self.one_sided(z, j, d, z == bj).unwrap_or(0.0)
        }
    }
}

pub fn evaluate_value(vf: &ValueFunction, z: f64, j: usize) -> f64 {
    let bj = vf.barrier(j);
    if z <= 0.0 {
        0.0
    } else if z >= bj {
        vf.solution.params[j] + z - bj
    } else {
        vf.one_sided(z, j, 0, false).unwrap_or(0.0)
    }
}

/// Analytic `dV/dz`; at `b(j)` the left derivative of the representation.
pub fn evaluate_value_derivative(vf: &ValueFunction, z: f64, j: usize) -> f64 {
    vf.derivative(z, j, 1)
}

/// Pass thresholds for [`verify_boundary`].
pub const VALUE_AT_ZERO_TOL: f64 = 1e-9;
pub const SMOOTH_PASTING_TOL: f64 = 1e-6;
pub const REGULARITY_TOL: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    /// `|V(0, j)|` per state.
    pub value_at_zero: Vec<f64>,
    /// `V'(b(j), j) − 1` per state.
    pub smooth_pasting: Vec<f64>,
    /// Largest jump of `V(·, j)` across an interior breakpoint.
    pub continuity_gap: f64,
    /// Largest jump of `V'(·, j)` across an interior breakpoint (diffusive states).
    pub differentiability_gap: f64,
    /// Largest |central difference − analytic derivative| at the barriers (`h = 1e-6`).
    pub fd_derivative_gap: f64,
    /// Largest second difference of `V(·, j)` on `(0, b(j))` for diffusive states;
    /// `≤ 0` means concave. Reported, not part of the pass criterion.
    pub concavity_margin: f64,
    /// Smallest grid increment of `V(·, j)`.
    pub min_increment: f64,
    pub passed: bool,
}

pub fn verify_boundary(vf: &ValueFunction) -> BoundaryReport {
    let m = vf.model.base();
    let n = m.n_states();
    let value_at_zero: Vec<f64> = (0..n)
        .map(|j| vf.one_sided(0.0, j, 0, false).unwrap_or(0.0).abs())
        .collect();
    let smooth_pasting: Vec<f64> = (0..n)
        .map(|j| vf.one_sided(m.b(j), j, 1, true).unwrap_or(f64::NAN) - 1.0)
        .collect();
    let mut continuity_gap: f64 = 0.0;
    let mut differentiability_gap: f64 = 0.0;
    for j in 0..n {
        let ks = vf.partition.intervals_of(j);
        for w in ks.windows(2) {
            let z = vf.partition.breakpoints[w[1]];
            let gap = |d| (vf.solution.eval(w[0], j, z, d) - vf.solution.eval(w[1], j, z, d)).abs();
            continuity_gap = continuity_gap.max(gap(0));
            if m.sigma(j) > 0.0 {
                differentiability_gap = differentiability_gap.max(gap(1));
            }
        }
    }
    let h = 1e-6;
    let fd_derivative_gap = (0..n)
        .map(|j| {
            let b = m.b(j);
            // Central difference of the interval representation continued across b(j).
            let piece = vf.piece_of(b, j, true).unwrap();
            let rep = |z: f64| vf.solution.eval(piece, j, z, 0);
            ((rep(b + h) - rep(b - h)) / (2.0 * h) - vf.solution.eval(piece, j, b, 1)).abs()
        })
        .fold(0.0, f64::max);
    let points = 1000;
    let mut concavity_margin = f64::NEG_INFINITY;
    let mut min_increment = f64::INFINITY;
    for j in 0..n {
        let b = m.b(j);
        let step = b / points as f64;
        let vals: Vec<f64> = (0..=points).map(|p| evaluate_value(vf, p as f64 * step, j)).collect();
        for w in vals.windows(2) {
            min_increment = min_increment.min(w[1] - w[0]);
        }
        if m.sigma(j) > 0.0 {
            for w in vals.windows(3) {
                concavity_margin = concavity_margin.max(w[0] - 2.0 * w[1] + w[2]);
            }
        }
    }
    let passed = value_at_zero
        .iter()
        .enumerate()
        .all(|(j, v)| *v <= VALUE_AT_ZERO_TOL || !(m.sigma(j) > 0.0 || m.mu(j) < 0.0))
        && smooth_pasting
            .iter()
            .enumerate()
            .all(|(j, v)| v.abs() <= SMOOTH_PASTING_TOL || !(m.sigma(j) > 0.0 || m.mu(j) > 0.0))
        && continuity_gap <= REGULARITY_TOL
        && differentiability_gap <= REGULARITY_TOL
        && fd_derivative_gap <= FD_TOL
        && min_increment >= -REGULARITY_TOL;
    BoundaryReport {
        value_at_zero,
        smooth_pasting,
        continuity_gap,
        differentiability_gap,
        fd_derivative_gap,
        concavity_margin,
        min_increment,
        passed,
    }
}

/// Largest residual of the dividend equation on `points` interior nodes of every interval.
pub fn dividend_residual(dm: &DividendModel, v: &dyn DividendValue, points: usize) -> f64 {
    let m = dm.base();
    let q = m.q().matrix();
    let part = dm.partition();
    let mut worst: f64 = 0.0;
    for k in 0..part.n_intervals() {
        let (lo, hi) = part.bounds(k);
        for p in 0..points {
            let z = lo + (hi - lo) * (p as f64 + 0.5) / points as f64;
            for &j in &part.active_sets[k] {
                let mut r = 0.5 * m.sigma(j).powi(2) * v.derivative(z, j, 2) + m.mu(j) * v.derivative(z, j, 1)
                    - dm.delta * v.value(z, j);
                for c in 0..m.n_states() {
                    r += q[(j, c)] * v.value(z, c);
                }
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_structure, RawModel};
    use approx::assert_abs_diff_eq;

    fn dm(q: Vec<Vec<f64>>, mu: Vec<f64>, sigma: Vec<f64>, b: Vec<f64>, delta: f64) -> DividendModel {
        let n = mu.len();
        let base = validate_structure(&RawModel {
            q,
            mu,
            sigma,
            a: vec![0.0; n],
            b,
        })
        .unwrap();
        DividendModel::new(base, delta).unwrap()
    }

    fn scalar_reference() -> DividendModel {
        dm(vec![vec![0.0]], vec![0.0], vec![2f64.sqrt()], vec![1.0], 0.5)
    }

    #[test]
    fn scalar_oracle() {
        let d = scalar_reference();
        let vf = solve_value_function(&d).unwrap();
        let r = 0.5f64.sqrt();
        for p in 0..=50 {
            let z = p as f64 / 50.0;
            let exact = (r * z).sinh() / (r * r.cosh());
            assert_abs_diff_eq!(vf.value(z, 0), exact, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(vf.value(1.3, 0), vf.constants()[0] + 0.3, epsilon = 1e-15);
        assert_eq!(vf.value(0.0, 0), 0.0);
        let rep = verify_boundary(&vf);
        assert!(rep.passed, "{rep:?}");
        assert!(dividend_residual(&d, &vf, 1000) < 1e-10);
    }

    #[test]
    fn system_sizes() {
        let d = dm(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![0.5, -0.5],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            0.5,
        );
        let part = d.partition();
        let pieces = build_pieces(&d, &part).unwrap();
        let sys = assemble_dividend_system(&d, &part, &pieces).unwrap();
        assert_eq!(sys.matrix.nrows(), 8);
        let d = scalar_reference();
        let part = d.partition();
        let pieces = build_pieces(&d, &part).unwrap();
        assert_eq!(assemble_dividend_system(&d, &part, &pieces).unwrap().matrix.nrows(), 3);
    }

    #[test]
    fn reference_values() {
        let d = dm(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![0.5, -0.5],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            0.5,
        );
        let vf = solve_value_function(&d).unwrap();
        for (z, v) in [(0.5, 0.42992332), (1.0, 0.86937734)] {
            assert_abs_diff_eq!(vf.value(z, 0), v, epsilon = 1e-8);
        }
        for (z, v) in [(0.5, 0.20413529), (1.0, 0.46594806), (1.5, 0.78929300), (2.0, 1.20822386)] {
            assert_abs_diff_eq!(vf.value(z, 1), v, epsilon = 1e-8);
        }
        assert!(verify_boundary(&vf).passed);
        assert!(dividend_residual(&d, &vf, 1000) < 1e-9);
    }

    #[test]
    fn symmetric_states_collapse() {
        let two = dm(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![0.3, 0.3],
            vec![1.0, 1.0],
            vec![1.2, 1.2],
            0.5,
        );
        let one = dm(vec![vec![0.0]], vec![0.3], vec![1.0], vec![1.2], 0.5);
        let v2 = solve_value_function(&two).unwrap();
        let v1 = solve_value_function(&one).unwrap();
        for p in 0..=24 {
            let z = p as f64 * 0.05;
            for j in 0..2 {
                assert_abs_diff_eq!(v2.value(z, j), v1.value(z, 0), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn perturbation_fails_verification() {
        let mut vf = solve_value_function(&scalar_reference()).unwrap();
        vf.solution_mut().coeffs[0] += crate::spectral::C64::from(1e-3);
        assert!(!verify_boundary(&vf).passed);
    }

    #[test]
    fn zero_diffusion_state() {
        // State 2 drifts down without noise: only its ruin row applies.
        let d = dm(
            vec![vec![-1.0, 1.0], vec![2.0, -2.0]],
            vec![0.4, -0.6],
            vec![0.8, 0.0],
            vec![1.0, 1.5],
            0.3,
        );
        let vf = solve_value_function(&d).unwrap();
        assert!(verify_boundary(&vf).passed);
        assert!(dividend_residual(&d, &vf, 500) < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let base = validate_structure(&RawModel {
            q: vec![vec![0.0]],
            mu: vec![0.1],
            sigma: vec![1.0],
            a: vec![0.5],
            b: vec![1.0],
        })
        .unwrap();
        assert!(DividendModel::new(base.clone(), 0.5).is_err());
        let base = base.shifted(-0.5);
        assert!(DividendModel::new(base.clone(), 0.0).is_err());
        assert!(DividendModel::new(base, 0.5).is_ok());
    }
}
