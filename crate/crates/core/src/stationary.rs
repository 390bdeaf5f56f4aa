//! Joint stationary distribution `Π_i(z) = P(Z ≤ z, J = i)`.
//!
//! Per interval the CDF vector solves a linear second-order system (see [`crate::spectral`]);
//! the mode coefficients are fixed by a single dense system of boundary, continuity and
//! differentiability rows across all intervals.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::decomposition::{compute_partition, forcing_constants, IntervalPartition};
use crate::error::{Error, Result};
use crate::model::MmbmModel;
use crate::piecewise::{
    solve_system, ConstraintFamily, ConstraintSystem, IntervalPiece, PiecewiseSolution, RowLabel, SolveDiagnostics,
    SystemBuilder,
};
use crate::spectral::{build_pencil, particular_solution, solve_pencil_on, PencilKind};

/// Point mass of the stationary law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub state: usize,
    pub location: f64,
    pub mass: f64,
}

/// Anything that can be queried like a stationary distribution.
pub trait StationaryCdf {
    fn n_states(&self) -> usize;
    fn pi(&self, i: usize) -> f64;
    /// Right-continuous CDF `P(Z ≤ z, J = i)`.
    fn cdf(&self, i: usize, z: f64) -> f64;
    /// `d`-th derivative of the absolutely continuous part at an interior point (`d ≥ 1`).
    fn derivative(&self, i: usize, z: f64, d: u32) -> f64;
    fn atoms(&self) -> Vec<Atom>;

    fn density(&self, i: usize, z: f64) -> f64 {
        self.derivative(i, z, 1)
    }
}

#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    model: MmbmModel,
    partition: IntervalPartition,
    solution: PiecewiseSolution,
    atoms: Vec<Atom>,
    diagnostics: SolveDiagnostics,
}

fn build_pieces(model: &MmbmModel, part: &IntervalPartition) -> Result<Vec<IntervalPiece>> {
    let mut offset = 0;
    let mut pieces = Vec::with_capacity(part.n_intervals());
    for k in 0..part.n_intervals() {
        let (lo, hi) = part.bounds(k);
        let active = part.active_sets[k].clone();
        let pencil = build_pencil(model, part, k, PencilKind::Stationary);
        let pair = solve_pencil_on(&pencil, k)?;
        let n = active.len();
        let rhs = DMatrix::from_column_slice(n, 1, &forcing_constants(part, model, k));
        let particular = particular_solution(&pencil, &rhs, &DVector::zeros(n), k)?;
        let piece = IntervalPiece::new(lo, hi, active, pair, particular, offset);
        offset += piece.mode_count();
        pieces.push(piece);
    }
    Ok(pieces)
}

/// Boundary, continuity and differentiability rows over all mode coefficients.
pub fn assemble_constraints(model: &MmbmModel, part: &IntervalPartition, pieces: &[IntervalPiece]) -> Result<ConstraintSystem> {
    let class = model.classification();
    let pi = model.pi();
    let mut b = SystemBuilder::new(pieces, 0);
    for i in 0..model.n_states() {
        let ks = part.intervals_of(i);
        let (Some(&first), Some(&last)) = (ks.first(), ks.last()) else {
            continue;
        };
        let (plus, minus) = (class.is_plus(i), class.is_minus(i));
        let label = |family, at| RowLabel { family, state: i, at };
        if plus {
            b.fix(label(ConstraintFamily::EntryZero, model.a(i)), first, model.a(i), 0, 0.0);
        }
        if minus {
            b.fix(label(ConstraintFamily::ExitPi, model.b(i)), last, model.b(i), 0, pi[i]);
        }
        for w in ks.windows(2) {
            let z = part.breakpoints[w[1]];
            if plus || minus {
                b.glue(label(ConstraintFamily::Continuity, z), w[0], w[1], z, 0);
            }
            if plus && minus {
                b.glue(label(ConstraintFamily::Differentiability, z), w[0], w[1], z, 1);
            }
        }
    }
    b.finish()
}

pub fn solve_coefficients(sys: &ConstraintSystem) -> Result<(DVector<crate::spectral::C64>, SolveDiagnostics)> {
    solve_system(sys)
}

/// Full pipeline: partition, per-interval modes, gluing solve, atoms.
pub fn solve_stationary(model: &MmbmModel) -> Result<StationaryDistribution> {
    if model.is_deterministic_of_environment() {
        return Err(Error::NoDynamicStates);
    }
    let part = compute_partition(model)?;
    let pieces = build_pieces(model, &part)?;
    let sys = assemble_constraints(model, &part, &pieces)?;
    let (coeffs, diagnostics) = solve_coefficients(&sys)?;
    let solution = PiecewiseSolution {
        pieces,
        coeffs,
        params: DVector::zeros(0),
    };
    let mut dist = StationaryDistribution {
        model: model.clone(),
        partition: part,
        solution,
        atoms: Vec::new(),
        diagnostics,
    };
    dist.atoms = dist.compute_atoms();
    Ok(dist)
}

impl StationaryDistribution {
    pub fn model(&self) -> &MmbmModel {
        &self.model
    }

    pub fn partition(&self) -> &IntervalPartition {
        &self.partition
    }

    pub fn solution(&self) -> &PiecewiseSolution {
        &self.solution
    }

    pub fn diagnostics(&self) -> SolveDiagnostics {
        self.diagnostics
    }

    /// Value of the interval representation, approaching `z` from the right (`left = false`)
    /// or from the left. `None` when no interval on that side has `i` active.
    fn side_value(&self, i: usize, z: f64, d: u32, left: bool) -> Option<f64> {
        let k = self.partition.intervals_of(i).into_iter().find(|&k| {
            let (lo, hi) = self.partition.bounds(k);
            if left {
                lo < z && z <= hi
            } else {
                lo <= z && z < hi
            }
        })?;
        Some(self.solution.eval(k, i, z, d))
    }

    /// `Π_i(z−)`.
    pub fn left_limit(&self, i: usize, z: f64) -> f64 {
        if z <= self.model.a(i) {
            0.0
        } else if z > self.model.b(i) {
            self.model.pi()[i]
        } else {
            self.side_value(i, z, 0, true).unwrap_or(0.0)
        }
    }

    fn compute_atoms(&self) -> Vec<Atom> {
        let class = self.model.classification();
        let pi = self.model.pi();
        let mut atoms = Vec::new();
        for i in 0..self.model.n_states() {
            let (a, b) = (self.model.a(i), self.model.b(i));
            if a == b {
                atoms.push(Atom {
                    state: i,
                    location: a,
                    mass: pi[i],
                });
                continue;
            }
            let (plus, minus) = (class.is_plus(i), class.is_minus(i));
            let mut sites = Vec::new();
            if !plus {
                sites.push(a);
            }
            if !plus && !minus {
                sites.extend(self.partition.breakpoints.iter().copied().filter(|&l| a < l && l < b));
            }
            if !minus {
                sites.push(b);
            }
            for z in sites {
                let mass = self.cdf(i, z) - self.left_limit(i, z);
                atoms.push(Atom {
                    state: i,
                    location: z,
                    mass,
                });
            }
        }
        atoms
    }

    /// Largest gap between `Π_i(b(i)−)` plus the atom at `b(i)` and `π_i`, and between the
    /// total mass and one.
    pub fn boundary_errors(&self) -> (f64, f64) {
        let pi = self.model.pi();
        let mut worst: f64 = 0.0;
        let mut total = 0.0;
        for i in 0..self.model.n_states() {
            let b = self.model.b(i);
            let atom: f64 = self
                .atoms
                .iter()
                .filter(|t| t.state == i && t.location == b)
                .map(|t| t.mass)
                .sum();
            let top = if self.model.a(i) == b {
                atom
            } else {
                self.left_limit(i, b) + atom
            };
            worst = worst.max((top - pi[i]).abs());
            total += top;
        }
        (worst, (total - 1.0).abs())
    }

    /// Largest imaginary residue of the real-valued representation on a grid.
    pub fn max_imaginary(&self) -> f64 {
        self.solution.max_imaginary(101)
    }
}

impl StationaryCdf for StationaryDistribution {
    fn n_states(&self) -> usize {
        self.model.n_states()
    }

    fn pi(&self, i: usize) -> f64 {
        self.model.pi()[i]
    }

    fn cdf(&self, i: usize, z: f64) -> f64 {
        evaluate_cdf(self, z, i)
    }

    fn derivative(&self, i: usize, z: f64, d: u32) -> f64 {
        if z < self.model.a(i) || z > self.model.b(i) {
            return 0.0;
        }
        self.side_value(i, z, d, false)
            .or_else(|| self.side_value(i, z, d, true))
            .unwrap_or(0.0)
    }

    fn atoms(&self) -> Vec<Atom> {
        self.atoms.clone()
    }
}

/// `Π_i(a(i) ∨ z ∧ b(i))`, right-continuous, zero below `a(i)`.
pub fn evaluate_cdf(dist: &StationaryDistribution, z: f64, i: usize) -> f64 {
    let m = &dist.model;
    if z < m.a(i) {
        0.0
    } else if z >= m.b(i) {
        m.pi()[i]
    } else {
        dist.side_value(i, z, 0, false).unwrap_or(0.0)
    }
}

pub fn evaluate_density(dist: &StationaryDistribution, z: f64, i: usize) -> f64 {
    dist.density(i, z)
}

/// Largest residual of the balance equations
/// `(σ²/2) Π_i'' − μ Π_i' + Σ_j q_ji Π_j(a(j) ∨ z ∧ b(j)) = 0` on `points` interior nodes of
/// every interval (inactive states use the left-limit convention at their lower barrier).
pub fn balance_residual(model: &MmbmModel, dist: &dyn StationaryCdf, points: usize) -> f64 {
    let part = IntervalPartition::from_barriers(&model.params().a, &model.params().b);
    let q = model.q().matrix();
    let pi = model.pi();
    let mut worst: f64 = 0.0;
    for k in 0..part.n_intervals() {
        let (lo, hi) = part.bounds(k);
        let active = &part.active_sets[k];
        for j in 0..points {
            let z = lo + (hi - lo) * (j as f64 + 0.5) / points as f64;
            for &i in active {
                let s2 = model.sigma(i).powi(2);
                let mut r = 0.5 * s2 * dist.derivative(i, z, 2) - model.mu(i) * dist.derivative(i, z, 1);
                for src in 0..model.n_states() {
                    let v = if active.contains(&src) {
                        dist.cdf(src, z)
                    } else if model.b(src) <= lo {
                        pi[src]
                    } else {
                        0.0
                    };
                    r += q[(src, i)] * v;
                }
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// Smallest increment of each CDF over a grid of `points` per interval, with probes just
/// inside every breakpoint.
pub fn min_increment(model: &MmbmModel, dist: &dyn StationaryCdf, points: usize) -> f64 {
    let part = IntervalPartition::from_barriers(&model.params().a, &model.params().b);
    let mut zs = Vec::new();
    for k in 0..part.n_intervals() {
        let (lo, hi) = part.bounds(k);
        for j in 0..points {
            zs.push(lo + (hi - lo) * j as f64 / points as f64);
        }
    }
    for &l in &part.breakpoints {
        zs.extend([l - 1e-9, l, l + 1e-9]);
    }
    zs.sort_by(f64::total_cmp);
    let mut worst = f64::INFINITY;
    for i in 0..model.n_states() {
        for w in zs.windows(2) {
            worst = worst.min(dist.cdf(i, w[1]) - dist.cdf(i, w[0]));
        }
    }
    worst
}

/// `E[Z^r ; J = i]` for every state: atoms plus adaptive quadrature of `z^r` against the density.
pub fn moments(model: &MmbmModel, dist: &dyn StationaryCdf, r: u32) -> Vec<f64> {
    let part = IntervalPartition::from_barriers(&model.params().a, &model.params().b);
    let mut out = vec![0.0; model.n_states()];
    for atom in dist.atoms() {
        out[atom.state] += atom.mass * atom.location.powi(r as i32);
    }
    for (i, slot) in out.iter_mut().enumerate() {
        for k in 0..part.n_intervals() {
            if !part.active_sets[k].contains(&i) {
                continue;
            }
            let (lo, hi) = part.bounds(k);
            let integral = quadrature::integrate(|z| z.powi(r as i32) * dist.derivative(i, z, 1), lo, hi, 1e-11).integral;
            *slot += integral;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, RawModel};
    use approx::assert_abs_diff_eq;

    pub(crate) fn raw(q: Vec<Vec<f64>>, mu: Vec<f64>, sigma: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> RawModel {
        RawModel { q, mu, sigma, a, b }
    }

    fn single(mu: f64, sigma: f64, a: f64, b: f64) -> MmbmModel {
        validate_model(&raw(vec![vec![0.0]], vec![mu], vec![sigma], vec![a], vec![b])).unwrap()
    }

    fn reference41() -> MmbmModel {
        validate_model(&raw(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![-0.5, -0.5],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
        ))
        .unwrap()
    }

    #[test]
    fn single_state_matches_hand_solution() {
        let m = single(-1.0, 2f64.sqrt(), 0.0, 1.0);
        let d = solve_stationary(&m).unwrap();
        let e1 = (-1f64).exp();
        for j in 0..=20 {
            let z = j as f64 / 20.0;
            let exact = (1.0 - (-z).exp()) / (1.0 - e1);
            assert_abs_diff_eq!(d.cdf(0, z), exact, epsilon = 1e-13);
        }
        assert!(balance_residual(&m, &d, 1000) < 1e-12);
        assert!(d.atoms().is_empty());
    }

    #[test]
    fn two_state_reference_values() {
        let d = solve_stationary(&reference41()).unwrap();
        let expect = [(0.0, 0.0), (0.5, 0.26535), (1.0, 0.41082), (1.5, 0.47318), (2.0, 0.5)];
        for (z, v) in expect {
            assert_abs_diff_eq!(d.cdf(1, z), v, epsilon = 1e-5);
        }
        assert_abs_diff_eq!(d.cdf(1, 1.0), 0.4108187318725392, epsilon = 1e-12);
        let sys_rows = d.solution().pieces.iter().map(|p| p.mode_count()).sum::<usize>();
        assert_eq!(sys_rows, 6);
    }

    #[test]
    fn translation_equivariance() {
        let m = reference41();
        let d0 = solve_stationary(&m).unwrap();
        let d5 = solve_stationary(&m.shifted(5.0)).unwrap();
        for j in 0..=40 {
            let z = j as f64 * 0.05;
            for i in 0..2 {
                assert_abs_diff_eq!(d0.cdf(i, z), d5.cdf(i, z + 5.0), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn atom_for_zero_diffusion_state() {
        let m = validate_model(&raw(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![-1.0, 0.5],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
        ))
        .unwrap();
        let d = solve_stationary(&m).unwrap();
        let atoms = d.atoms();
        assert_eq!(atoms.len(), 1);
        assert_eq!((atoms[0].state, atoms[0].location), (0, 0.0));
        assert!(atoms[0].mass > 0.0);
        assert_abs_diff_eq!(d.cdf(0, 0.0), atoms[0].mass, epsilon = 1e-14);
        let (b_err, mass_err) = d.boundary_errors();
        assert!(b_err < 1e-9 && mass_err < 1e-9);
    }

    struct Ramp(MmbmModel);

    impl StationaryCdf for Ramp {
        fn n_states(&self) -> usize {
            self.0.n_states()
        }
        fn pi(&self, i: usize) -> f64 {
            self.0.pi()[i]
        }
        fn cdf(&self, i: usize, z: f64) -> f64 {
            let (a, b) = (self.0.a(i), self.0.b(i));
            self.pi(i) * ((z - a) / (b - a)).clamp(0.0, 1.0)
        }
        fn derivative(&self, i: usize, _z: f64, d: u32) -> f64 {
            if d == 1 {
                self.pi(i) / (self.0.b(i) - self.0.a(i))
            } else {
                0.0
            }
        }
        fn atoms(&self) -> Vec<Atom> {
            Vec::new()
        }
    }

    #[test]
    fn negative_controls() {
        let m = reference41();
        let mut d = solve_stationary(&m).unwrap();
        assert!(balance_residual(&m, &d, 200) < 1e-9);
        assert!(balance_residual(&m, &Ramp(m.clone()), 200) > 1e-2);

        // A perturbed coefficient still solves the ODE but breaks a gluing row.
        let sys = assemble_constraints(&m, &d.partition, &d.solution.pieces).unwrap();
        d.solution.coeffs[0] += crate::spectral::C64::from(1e-3);
        let r = &sys.matrix * &d.solution.coeffs - &sys.rhs;
        assert!(r.iter().map(|v| v.norm()).fold(0.0, f64::max) > 1e-6);
    }

    #[test]
    fn moments_of_near_uniform_model() {
        let m = single(-1e-6, 1.0, 0.0, 1.0);
        let d = solve_stationary(&m).unwrap();
        assert_abs_diff_eq!(moments(&m, &d, 0)[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(moments(&m, &d, 1)[0], 0.5, epsilon = 1e-4);
    }

    #[test]
    fn all_static_model_is_rejected() {
        let m = validate_model(&raw(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
        ));
        // κ = 0 on a shared interval is already excluded by validation.
        assert!(m.is_err());
        let m = crate::model::validate_structure(&raw(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 2.0],
        ))
        .unwrap();
        assert!(matches!(solve_stationary(&m), Err(Error::NoDynamicStates)));
    }
}
