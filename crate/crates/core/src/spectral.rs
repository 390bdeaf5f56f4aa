//! Exponential modes of the per-interval second-order systems.
//!
//! On one interval the unknown vector `x(z)` solves `A2 x'' + A1 x' + A0 x = rhs(z)` with
//! diagonal `A2` (≥ 0) and `A1`. Homogeneous solutions are `Γ e^{Λ z}` where the columns of
//! `Γ` and the diagonal of `Λ` are eigenpairs of the pencil `P(λ) = A2 λ² + A1 λ + A0`.
//!
//! Because the leading coefficients are diagonal, the pencil is reduced exactly before the
//! eigensolve: rows with `A2 = A1 = 0` are algebraic and eliminated by a Schur complement,
//! rows with `A2 = 0` are first order. The companion matrix of the reduced problem has
//! exactly one eigenvalue per mode, so no infinite eigenvalues ever have to be filtered.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::decomposition::IntervalPartition;
use crate::error::{Error, Result};
use crate::model::MmbmModel;

pub type C64 = Complex<f64>;

/// Relative imaginary part below which an eigenvalue is taken as real.
const REAL_TOL: f64 = 1e-10;
/// Relative distance below which two modes count as coincident.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Relative size below which a mode counts as zero. A defective double zero splits into
/// a pair of size ~√ε, so this has to sit well above `CLUSTER_TOL`.
pub const ZERO_MODE_TOL: f64 = 1e-7;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const RANK_TOL: f64 = 1e-10;

/// Which interval equation the pencil comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PencilKind {
    /// `A2 = σ²/2`, `A1 = −μ`, `A0 = Q_kᵀ`.
    Stationary,
    /// `A2 = σ²/2`, `A1 = μ`, `A0 = Q_k − δ I`.
    Dividend { delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPencil {
    pub a2: DVector<f64>,
    pub a1: DVector<f64>,
    pub a0: DMatrix<f64>,
}

impl QuadraticPencil {
    pub fn new(a2: DVector<f64>, a1: DVector<f64>, a0: DMatrix<f64>) -> Self {
        assert_eq!(a2.len(), a1.len());
        assert_eq!(a0.nrows(), a2.len());
        assert_eq!(a0.ncols(), a2.len());
        QuadraticPencil { a2, a1, a0 }
    }

    pub fn dim(&self) -> usize {
        self.a2.len()
    }

    /// `2·#{A2 > 0} + #{A2 = 0, A1 ≠ 0}`.
    pub fn mode_count(&self) -> usize {
        (0..self.dim())
            .map(|i| match (self.a2[i] > 0.0, self.a1[i] != 0.0) {
                (true, _) => 2,
                (false, true) => 1,
                _ => 0,
            })
            .sum()
    }

    pub fn eval(&self, lam: C64) -> DMatrix<C64> {
        let mut p = self.a0.map(C64::from);
        for i in 0..self.dim() {
            p[(i, i)] += lam * lam * self.a2[i] + lam * self.a1[i];
        }
        p
    }

    fn eval_derivative(&self, lam: C64) -> DVector<C64> {
        DVector::from_fn(self.dim(), |i, _| lam * (2.0 * self.a2[i]) + self.a1[i])
    }

    /// Size of `P(λ)` for tolerance scaling.
    pub fn magnitude(&self, lam: C64) -> f64 {
        let r = lam.norm();
        self.a2.amax() * r * r + self.a1.amax() * r + self.a0.amax()
    }
}

pub fn build_pencil(model: &MmbmModel, part: &IntervalPartition, k: usize, kind: PencilKind) -> QuadraticPencil {
    pencil_for(model, &part.active_sets[k], kind)
}

pub fn pencil_for(model: &MmbmModel, active: &[usize], kind: PencilKind) -> QuadraticPencil {
    let q = model.q().matrix();
    let n = active.len();
    let a2 = DVector::from_fn(n, |r, _| 0.5 * model.sigma(active[r]).powi(2));
    match kind {
        PencilKind::Stationary => QuadraticPencil::new(
            a2,
            DVector::from_fn(n, |r, _| -model.mu(active[r])),
            DMatrix::from_fn(n, n, |r, c| q[(active[c], active[r])]),
        ),
        PencilKind::Dividend { delta } => QuadraticPencil::new(
            a2,
            DVector::from_fn(n, |r, _| model.mu(active[r])),
            DMatrix::from_fn(n, n, |r, c| {
                q[(active[r], active[c])] - if r == c { delta } else { 0.0 }
            }),
        ),
    }
}

/// Semisimple Jordan pair: `P(λ_c) Γ[:, c] = 0` for every mode `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct JordanPair {
    pub gamma: DMatrix<C64>,
    pub modes: Vec<C64>,
}

impl JordanPair {
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn lambda(&self) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.modes))
    }

    /// `‖A2 Γ Λ² + A1 Γ Λ + A0 Γ‖∞`, each column relative to the size of `P(λ)`.
    pub fn residual(&self, pencil: &QuadraticPencil) -> f64 {
        (0..self.mode_count())
            .map(|c| {
                let lam = self.modes[c];
                let r = pencil.eval(lam) * self.gamma.column(c);
                r.iter().map(|v| v.norm()).fold(0.0, f64::max) / pencil.magnitude(lam).max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// Numerical rank of `[Γ; ΓΛ]`.
    pub fn stacked_rank(&self) -> usize {
        let n = self.gamma.nrows();
        let m = self.mode_count();
        if m == 0 {
            return 0;
        }
        let mut stacked = DMatrix::<C64>::zeros(2 * n, m);
        for c in 0..m {
            for r in 0..n {
                stacked[(r, c)] = self.gamma[(r, c)];
                stacked[(n + r, c)] = self.gamma[(r, c)] * self.modes[c];
            }
        }
        let sv = stacked.singular_values();
        let top = sv.max();
        sv.iter().filter(|&&s| s > RANK_TOL * top).count()
    }
}

struct Reduction {
    dyn_idx: Vec<usize>,
    first_idx: Vec<usize>,
    static_idx: Vec<usize>,
    /// `−A0_SS⁻¹ A0_SR`, mapping reduced unknowns to static ones.
    recover: DMatrix<f64>,
    companion: DMatrix<f64>,
}

fn reduce(p: &QuadraticPencil, interval: usize) -> Result<Reduction> {
    let n = p.dim();
    let dyn_idx: Vec<usize> = (0..n).filter(|&i| p.a2[i] > 0.0).collect();
    let first_idx: Vec<usize> = (0..n).filter(|&i| p.a2[i] == 0.0 && p.a1[i] != 0.0).collect();
    let static_idx: Vec<usize> = (0..n).filter(|&i| p.a2[i] == 0.0 && p.a1[i] == 0.0).collect();
    let reduced: Vec<usize> = dyn_idx.iter().chain(&first_idx).copied().collect();
    let nr = reduced.len();
    let ns = static_idx.len();
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| p.a0[(rows[r], cols[c])])
    };
    let mut a0r = sub(&reduced, &reduced);
    let mut recover = DMatrix::zeros(ns, nr);
    if ns > 0 {
        let lu = sub(&static_idx, &static_idx).lu();
        let x = lu
            .solve(&sub(&static_idx, &reduced))
            .ok_or(Error::SingularA0 { interval })?;
        a0r -= sub(&reduced, &static_idx) * &x;
        recover = -x;
    }

    let nd = dyn_idx.len();
    let nf = first_idx.len();
    let m = 2 * nd + nf;
    // State vector y = [x_D, x_F, λ x_D].
    let mut c = DMatrix::zeros(m, m);
    for r in 0..nd {
        c[(r, nr + r)] = 1.0;
    }
    for r in 0..nf {
        let a1 = p.a1[first_idx[r]];
        for col in 0..nr {
            c[(nd + r, col)] = -a0r[(nd + r, col)] / a1;
        }
    }
    for r in 0..nd {
        let i = dyn_idx[r];
        for col in 0..nr {
            c[(nr + r, col)] = -a0r[(r, col)] / p.a2[i];
        }
        c[(nr + r, nr + r)] = -p.a1[i] / p.a2[i];
    }
    Ok(Reduction {
        dyn_idx,
        first_idx,
        static_idx,
        recover,
        companion: c,
    })
}

/// Scales `x` so its largest component is exactly 1; returns that index.
fn normalize(x: &mut DVector<C64>) -> usize {
    let (p, _) = x
        .iter()
        .enumerate()
        .fold((0, -1.0), |(bi, bv), (i, v)| if v.norm() > bv { (i, v.norm()) } else { (bi, bv) });
    let pivot = x[p];
    if pivot.norm() > 0.0 {
        x.iter_mut().for_each(|v| *v /= pivot);
        x[p] = C64::from(1.0);
    }
    p
}

/// Eigenvector of the companion matrix for eigenvalue `lam`, by shifted inverse iteration.
fn companion_vector(c: &DMatrix<f64>, lam: C64) -> DVector<C64> {
    let m = c.nrows();
    let shift = lam + C64::new(1e-10 * lam.norm().max(1.0), 0.0);
    let mut a = c.map(C64::from);
    for i in 0..m {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut y = DVector::from_fn(m, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.0));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(next) if next.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => {
                let s = next.norm();
                y = next / C64::from(s);
            }
            _ => break,
        }
    }
    y
}

/// Bordered Newton steps on `P(λ)x = 0`, `x_p = 1`.
fn polish(p: &QuadraticPencil, lam: &mut C64, x: &mut DVector<C64>) {
    let n = p.dim();
    let pivot = normalize(x);
    let mut best = (p.eval(*lam) * &*x).norm();
    for _ in 0..2 {
        let pm = p.eval(*lam);
        let r = &pm * &*x;
        let dp = p.eval_derivative(*lam);
        let mut j = DMatrix::<C64>::zeros(n + 1, n + 1);
        j.view_mut((0, 0), (n, n)).copy_from(&pm);
        for i in 0..n {
            j[(i, n)] = dp[i] * x[i];
        }
        j[(n, pivot)] = C64::from(1.0);
        let mut rhs = DVector::<C64>::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -r[i];
        }
        let Some(step) = j.lu().solve(&rhs) else { break };
        let mut x_new = x.clone();
        for i in 0..n {
            x_new[i] += step[i];
        }
        let lam_new = *lam + step[n];
        let res = (p.eval(lam_new) * &x_new).norm();
        if res.is_finite() && res <= best {
            best = res;
            *x = x_new;
            *lam = lam_new;
        } else {
            break;
        }
    }
    normalize(x);
}

pub fn solve_pencil(p: &QuadraticPencil) -> Result<JordanPair> {
    solve_pencil_on(p, 0)
}

/// Modes sorted by (real part, imaginary part); `interval` only labels errors.
pub fn solve_pencil_on(p: &QuadraticPencil, interval: usize) -> Result<JordanPair> {
    let n = p.dim();
    let m = p.mode_count();
    if m == 0 {
        return Ok(JordanPair {
            gamma: DMatrix::zeros(n, 0),
            modes: Vec::new(),
        });
    }
    let red = reduce(p, interval)?;
    let nr = red.dyn_idx.len() + red.first_idx.len();
    let eig = red.companion.complex_eigenvalues();

    let scale = eig.iter().fold(1.0_f64, |s, v| s.max(v.norm()));
    let mut reals = Vec::new();
    let mut uppers = Vec::new();
    let mut lowers = 0usize;
    for &v in eig.iter() {
        if v.im.abs() <= REAL_TOL * scale {
            reals.push(C64::new(v.re, 0.0));
        } else if v.im > 0.0 {
            uppers.push(v);
        } else {
            lowers += 1;
        }
    }
    if lowers != uppers.len() {
        return Err(Error::RankDeficient {
            interval,
            rank: reals.len() + 2 * lowers.min(uppers.len()),
            expected: m,
        });
    }

    let full_vector = |y: &DVector<C64>| -> DVector<C64> {
        let mut x = DVector::<C64>::zeros(n);
        let xr: Vec<C64> = (0..nr).map(|i| y[i]).collect();
        for (pos, &i) in red.dyn_idx.iter().chain(&red.first_idx).enumerate() {
            x[i] = xr[pos];
        }
        for (s, &i) in red.static_idx.iter().enumerate() {
            x[i] = (0..nr).map(|c| xr[c] * red.recover[(s, c)]).sum();
        }
        x
    };

    let mut pairs: Vec<(C64, DVector<C64>)> = Vec::with_capacity(m);
    for lam0 in reals {
        let mut lam = lam0;
        let mut x = full_vector(&companion_vector(&red.companion, lam));
        normalize(&mut x);
        x.iter_mut().for_each(|v| v.im = 0.0);
        polish(p, &mut lam, &mut x);
        pairs.push((lam, x));
    }
    for lam0 in uppers {
        let mut lam = lam0;
        let mut x = full_vector(&companion_vector(&red.companion, lam));
        polish(p, &mut lam, &mut x);
        pairs.push((lam.conj(), x.map(|v| v.conj())));
        pairs.push((lam, x));
    }
    pairs.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));

    let zeros = pairs.iter().filter(|(l, _)| l.norm() <= ZERO_MODE_TOL * scale).count();
    if zeros >= 2 {
        return Err(Error::DegenerateZeroMode { interval });
    }
    for a in 0..pairs.len() {
        for b in a + 1..pairs.len() {
            if (pairs[a].0 - pairs[b].0).norm() < CLUSTER_TOL * scale {
                return Err(Error::NotSemisimple {
                    interval,
                    first: a,
                    second: b,
                });
            }
        }
    }

    let modes: Vec<C64> = pairs.iter().map(|(l, _)| *l).collect();
    let gamma = DMatrix::from_fn(n, m, |r, c| pairs[c].1[r]);
    let pair = JordanPair { gamma, modes };
    let residual = pair.residual(p);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::PencilResidual { interval, residual });
    }
    let rank = pair.stacked_rank();
    if rank < m {
        return Err(Error::RankDeficient {
            interval,
            rank,
            expected: m,
        });
    }
    Ok(pair)
}

/// Affine particular solution `w(z) = α·[1, c_1, .., c_p] + β z`.
///
/// Column 0 of `alpha` is the constant part; further columns multiply external parameters
/// (the unknown boundary constants of the dividend problem). The slope never depends on them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticularSolution {
    pub alpha: DMatrix<f64>,
    pub beta: DVector<f64>,
}

impl ParticularSolution {
    pub fn zero(n: usize, params: usize) -> Self {
        ParticularSolution {
            alpha: DMatrix::zeros(n, params + 1),
            beta: DVector::zeros(n),
        }
    }

    /// `‖A1 β + A0 (α + β z) − (rhs0 + rhs1 z)‖∞` for the constant column at `z`.
    pub fn residual(&self, p: &QuadraticPencil, rhs0: &DMatrix<f64>, rhs1: &DVector<f64>, z: f64) -> f64 {
        let w = self.alpha.column(0) + &self.beta * z;
        let lhs = p.a1.component_mul(&self.beta) + &p.a0 * w;
        let mut worst = (lhs - (rhs0.column(0) + rhs1 * z)).amax();
        for c in 1..self.alpha.ncols() {
            let r = &p.a0 * self.alpha.column(c) - rhs0.column(c);
            worst = worst.max(r.amax());
        }
        worst
    }
}

/// Solves `A0 β = rhs1`, then `A0 α = rhs0 − A1 β` (column 0 only gets the slope term).
pub fn particular_solution(
    p: &QuadraticPencil,
    rhs0: &DMatrix<f64>,
    rhs1: &DVector<f64>,
    interval: usize,
) -> Result<ParticularSolution> {
    let n = p.dim();
    let params = rhs0.ncols().saturating_sub(1);
    if rhs0.iter().all(|&v| v == 0.0) && rhs1.iter().all(|&v| v == 0.0) {
        return Ok(ParticularSolution::zero(n, params));
    }
    let lu = p.a0.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::SingularA0 { interval });
    }
    let beta = lu.solve(rhs1).ok_or(Error::SingularA0 { interval })?;
    let mut target = rhs0.clone();
    let shift = p.a1.component_mul(&beta);
    for r in 0..n {
        target[(r, 0)] -= shift[r];
    }
    let alpha = lu.solve(&target).ok_or(Error::SingularA0 { interval })?;
    Ok(ParticularSolution { alpha, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, RawModel};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(a2: f64, a1: f64, a0: f64) -> QuadraticPencil {
        QuadraticPencil::new(
            DVector::from_element(1, a2),
            DVector::from_element(1, a1),
            DMatrix::from_element(1, 1, a0),
        )
    }

    fn re(modes: &[C64]) -> Vec<f64> {
        modes.iter().map(|l| l.re).collect()
    }

    #[test]
    fn scalar_pencils() {
        // σ² = 2, μ = −1 (stationary): λ² + λ.
        let pair = solve_pencil(&scalar(1.0, 1.0, 0.0)).unwrap();
        let m = re(&pair.modes);
        assert_abs_diff_eq!(m[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], 0.0, epsilon = 1e-14);

        let pair = solve_pencil(&scalar(1.0, 0.0, -1.0)).unwrap();
        assert_abs_diff_eq!(pair.modes[0].re, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pair.modes[1].re, 1.0, epsilon = 1e-14);
        assert_eq!(pair.gamma[(0, 0)], C64::from(1.0));

        // Dividend, σ² = 2, μ = 0, δ = 1/2.
        let pair = solve_pencil(&scalar(1.0, 0.0, -0.5)).unwrap();
        assert_abs_diff_eq!(pair.modes[1].re, 0.5f64.sqrt(), epsilon = 1e-14);

        // (σ²/2) z² − μ z − q21 with μ = 0, σ² = 2, q21 = 2.
        let pair = solve_pencil(&scalar(1.0, 0.0, -2.0)).unwrap();
        assert_abs_diff_eq!(pair.modes[0].re, -(2.0f64.sqrt()), epsilon = 1e-14);
    }

    fn two_state(mu: [f64; 2], sigma: [f64; 2], q12: f64, q21: f64) -> MmbmModel {
        validate_model(&RawModel {
            q: vec![vec![-q12, q12], vec![q21, -q21]],
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
            a: vec![0.0, 0.0],
            b: vec![1.0, 2.0],
        })
        .unwrap()
    }

    #[test]
    fn common_parameters_factor() {
        let s = 2.0f64.sqrt();
        let m = two_state([-1.0, -1.0], [s, s], 1.0, 1.0);
        let pair = solve_pencil(&pencil_for(&m, &[0, 1], PencilKind::Stationary)).unwrap();
        let got = re(&pair.modes);
        for (g, e) in got.iter().zip([-2.0, -1.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*g, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_diffusion_state_drops_a_mode() {
        let m = two_state([-1.0, 0.5], [0.0, 1.0], 1.0, 1.0);
        let p = pencil_for(&m, &[0, 1], PencilKind::Stationary);
        assert_eq!(p.mode_count(), 3);
        let pair = solve_pencil(&p).unwrap();
        let got = re(&pair.modes);
        let r2 = 2.0f64.sqrt();
        for (g, e) in got.iter().zip([1.0 - r2, 0.0, 1.0 + r2]) {
            assert_abs_diff_eq!(*g, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_drift_is_degenerate() {
        let p = QuadraticPencil::new(
            DVector::from_vec(vec![0.5, 0.5]),
            DVector::from_vec(vec![-1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        );
        assert!(matches!(solve_pencil(&p), Err(Error::DegenerateZeroMode { .. })));
    }

    #[test]
    fn static_states_are_eliminated() {
        // State 2 has no motion: its row is algebraic.
        let p = QuadraticPencil::new(
            DVector::from_vec(vec![0.5, 0.0, 0.5]),
            DVector::from_vec(vec![1.0, 0.0, -0.3]),
            DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.5, 1.0, -2.0, 1.0, 1.0, 1.0, -1.5]),
        );
        assert_eq!(p.mode_count(), 4);
        let pair = solve_pencil(&p).unwrap();
        assert_eq!(pair.mode_count(), 4);
        assert!(pair.residual(&p) < 1e-12);
    }

    #[test]
    fn complex_modes_come_in_conjugate_pairs() {
        // Strongly non-symmetric coupling gives a complex pair.
        let p = QuadraticPencil::new(
            DVector::from_vec(vec![0.5, 0.5]),
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, -5.0, -1.0]),
        );
        let pair = solve_pencil(&p).unwrap();
        let complex: Vec<&C64> = pair.modes.iter().filter(|l| l.im != 0.0).collect();
        assert!(!complex.is_empty());
        for l in &complex {
            assert!(pair.modes.iter().any(|o| *o == l.conj()));
        }
    }

    #[test]
    fn particular_examples() {
        let p = pencil_for(
            &two_state([-1.0, 0.5], [1.0, 1.0], 1.0, 1.0),
            &[0, 1],
            PencilKind::Stationary,
        );
        let part = particular_solution(&p, &DMatrix::zeros(2, 1), &DVector::zeros(2), 0).unwrap();
        assert_eq!(part.alpha.amax(), 0.0);

        // Upper interval of the two-state model: −q21 α = −q12 π1 → α = π2.
        let (q12, q21) = (1.0, 3.0);
        let pi1 = q21 / (q12 + q21);
        let p = scalar(0.5, -1.0, -q21);
        let rhs0 = DMatrix::from_element(1, 1, -q12 * pi1);
        let part = particular_solution(&p, &rhs0, &DVector::zeros(1), 0).unwrap();
        assert_abs_diff_eq!(part.alpha[(0, 0)], q12 / (q12 + q21), epsilon = 1e-15);

        // Affine forcing with one symbolic constant C: rhs(z) = −λ (C − b) − λ z.
        let (lam, delta, b) = (1.0, 0.5, 1.0);
        let p = scalar(0.5, -0.5, -lam - delta);
        let rhs0 = DMatrix::from_row_slice(1, 2, &[lam * b, -lam]);
        let rhs1 = DVector::from_element(1, -lam);
        let part = particular_solution(&p, &rhs0, &rhs1, 0).unwrap();
        for z in [0.0, 0.4, 1.3] {
            assert!(part.residual(&p, &rhs0, &rhs1, z) < 1e-14);
        }
        assert_abs_diff_eq!(part.alpha[(0, 1)], lam / (lam + delta), epsilon = 1e-15);
    }

    #[test]
    fn singular_a0_with_forcing() {
        let p = scalar(0.5, 1.0, 0.0);
        let rhs0 = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            particular_solution(&p, &rhs0, &DVector::zeros(1), 3),
            Err(Error::SingularA0 { interval: 3 })
        ));
    }

    /// Degree of `det P(λ)` from its values on a circle (discrete Fourier inversion).
    fn det_degree(p: &QuadraticPencil) -> usize {
        let n = p.dim();
        let pts = 2 * n + 1;
        let radius = 2.0;
        let vals: Vec<C64> = (0..pts)
            .map(|j| {
                let w = C64::from_polar(radius, 2.0 * std::f64::consts::PI * j as f64 / pts as f64);
                p.eval(w).determinant()
            })
            .collect();
        let coeffs: Vec<f64> = (0..pts)
            .map(|k| {
                let s: C64 = (0..pts)
                    .map(|j| {
                        vals[j]
                            * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * (j * k) as f64 / pts as f64)
                    })
                    .sum();
                (s / pts as f64).norm() / radius.powi(k as i32)
            })
            .collect();
        let top = coeffs.iter().cloned().fold(0.0, f64::max);
        (0..pts).rev().find(|&k| coeffs[k] > 1e-9 * top).unwrap_or(0)
    }

    fn random_pencil(
        n: usize,
        kinds: &[u8],
        rates: &[f64],
        mus: &[f64],
        sigmas: &[f64],
    ) -> QuadraticPencil {
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    q[(i, j)] = rates[i * 4 + j];
                }
            }
            q[(i, i)] = -q.row(i).sum() - 0.3;
        }
        let a2 = DVector::from_fn(n, |i, _| if kinds[i] == 0 { 0.5 * sigmas[i] * sigmas[i] } else { 0.0 });
        let a1 = DVector::from_fn(n, |i, _| if kinds[i] == 2 { 0.0 } else { mus[i] });
        QuadraticPencil::new(a2, a1, q.transpose())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn random_pencils_satisfy_pair_invariants(
            n in 1usize..=4,
            kinds in proptest::collection::vec(0u8..3, 4),
            rates in proptest::collection::vec(0.1f64..3.0, 16),
            mus in proptest::collection::vec(prop_oneof![-2.0f64..-0.1, 0.1f64..2.0], 4),
            sigmas in proptest::collection::vec(0.3f64..2.0, 4),
        ) {
            let mut kinds = kinds;
            kinds[0] = 0;
            let p = random_pencil(n, &kinds, &rates, &mus, &sigmas);
            let pair = solve_pencil(&p).unwrap();
            prop_assert_eq!(pair.mode_count(), p.mode_count());
            prop_assert!(pair.residual(&p) <= 1e-10);
            prop_assert_eq!(pair.stacked_rank(), p.mode_count());
            for w in pair.modes.windows(2) {
                prop_assert!(w[0].re <= w[1].re);
            }
            // A real combination of a conjugate pair stays real.
            for (c, l) in pair.modes.iter().enumerate() {
                if l.im > 0.0 {
                    let partner = pair.modes.iter().position(|o| *o == l.conj()).unwrap();
                    let z = 0.37;
                    for r in 0..n {
                        let v = pair.gamma[(r, c)] * (l * z).exp()
                            + pair.gamma[(r, partner)] * (pair.modes[partner] * z).exp();
                        prop_assert!(v.im.abs() <= 1e-10 * v.norm().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn mode_count_matches_determinant_degree(
            n in 1usize..=3,
            kinds in proptest::collection::vec(0u8..3, 4),
            rates in proptest::collection::vec(0.1f64..3.0, 16),
            mus in proptest::collection::vec(prop_oneof![-2.0f64..-0.1, 0.1f64..2.0], 4),
            sigmas in proptest::collection::vec(0.3f64..2.0, 4),
        ) {
            let p = random_pencil(n, &kinds, &rates, &mus, &sigmas);
            prop_assert_eq!(det_degree(&p), p.mode_count());
        }
    }
}
