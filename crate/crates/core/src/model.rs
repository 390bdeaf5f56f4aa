//! Problem instances: the modulating chain and the per-state Brownian parameters.
//!
//! A model is built from a [`RawModel`] (the JSON schema consumed by the CLI) and is
//! immutable once validated. The stationary vector of the chain is computed during
//! validation and cached, since every solver needs it.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, Violation};

/// Relative tolerance on row sums of the rate matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Relative distance under which two distinct barrier levels are rejected.
pub const BARRIER_MERGE_TOL: f64 = 1e-12;
/// Relative size of the asymptotic drift treated as zero.
pub const KAPPA_ZERO_TOL: f64 = 1e-10;

/// Model description as read from JSON: `{"q": [[..]], "mu": [..], "sigma": [..], "a": [..], "b": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawModel {
    pub q: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl RawModel {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Generator of an irreducible continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(DMatrix<f64>);

impl RateMatrix {
    /// Wraps a matrix after checking the generator invariants. Row sums within
    /// [`ROW_SUM_TOL`] (relative to the largest rate) are repaired through the diagonal.
    pub fn new(q: DMatrix<f64>) -> std::result::Result<Self, ValidationError> {
        let mut violations = Vec::new();
        let q = check_generator(q, &mut violations);
        if violations.is_empty() {
            Ok(RateMatrix(q))
        } else {
            Err(ValidationError { violations })
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Largest absolute rate, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.0.amax()
    }
}

/// Drift, diffusion and barriers of each environment state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Which barriers a state can reach by its own motion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateClassification {
    plus: Vec<bool>,
    minus: Vec<bool>,
}

impl StateClassification {
    /// States able to move upward (σ > 0 or μ > 0).
    pub fn e_plus(&self) -> Vec<usize> {
        select(&self.plus)
    }

    /// States able to move downward (σ > 0 or μ < 0).
    pub fn e_minus(&self) -> Vec<usize> {
        select(&self.minus)
    }

    pub fn is_plus(&self, i: usize) -> bool {
        self.plus[i]
    }

    pub fn is_minus(&self, i: usize) -> bool {
        self.minus[i]
    }

    pub fn is_empty(&self) -> bool {
        !self.plus.iter().chain(&self.minus).any(|&x| x)
    }
}

fn select(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect()
}

/// A validated model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MmbmModel {
    q: RateMatrix,
    params: StateParams,
    pi: DVector<f64>,
}

impl MmbmModel {
    pub fn n_states(&self) -> usize {
        self.params.mu.len()
    }

    pub fn q(&self) -> &RateMatrix {
        &self.q
    }

    pub fn params(&self) -> &StateParams {
        &self.params
    }

    pub fn mu(&self, i: usize) -> f64 {
        self.params.mu[i]
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.params.sigma[i]
    }

    pub fn a(&self, i: usize) -> f64 {
        self.params.a[i]
    }

    pub fn b(&self, i: usize) -> f64 {
        self.params.b[i]
    }

    /// Stationary vector of the modulating chain.
    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn kappa(&self) -> f64 {
        asymptotic_drift(self)
    }

    pub fn classification(&self) -> StateClassification {
        classify_states(self)
    }

    /// True when no state moves on its own, so the content only changes by clamping.
    pub fn is_deterministic_of_environment(&self) -> bool {
        self.classification().is_empty()
    }

    /// Largest absolute rate (at least 1e-300 to keep ratios finite).
    pub fn rate_scale(&self) -> f64 {
        self.q.scale().max(1e-300)
    }

    /// Lowest and highest barrier levels.
    pub fn content_range(&self) -> (f64, f64) {
        let lo = self.params.a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.params.b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Whether some interval between breakpoints has every state active.
    pub fn has_full_interval(&self) -> bool {
        let max_a = self.params.a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_b = self.params.b.iter().copied().fold(f64::INFINITY, f64::min);
        max_a < min_b
    }

    /// Same model with every barrier moved by `shift`.
    pub fn shifted(&self, shift: f64) -> MmbmModel {
        let mut params = self.params.clone();
        params.a.iter_mut().for_each(|x| *x += shift);
        params.b.iter_mut().for_each(|x| *x += shift);
        MmbmModel {
            q: self.q.clone(),
            params,
            pi: self.pi.clone(),
        }
    }

    pub fn to_raw(&self) -> RawModel {
        let q = self.q.matrix();
        RawModel {
            q: (0..q.nrows())
                .map(|i| (0..q.ncols()).map(|j| q[(i, j)]).collect())
                .collect(),
            mu: self.params.mu.clone(),
            sigma: self.params.sigma.clone(),
            a: self.params.a.clone(),
            b: self.params.b.clone(),
        }
    }
}

/// Full validation for the stationary problem: structure plus the zero-drift exclusion.
pub fn validate_model(raw: &RawModel) -> std::result::Result<MmbmModel, ValidationError> {
    let model = validate_structure(raw)?;
    if model.has_full_interval() {
        let kappa = model.kappa();
        let mu_scale = model.params.mu.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if kappa.abs() <= KAPPA_ZERO_TOL * mu_scale.max(f64::MIN_POSITIVE) {
            return Err(ValidationError {
                violations: vec![Violation::AllBarriersDegenerateWithKappaZero { kappa }],
            });
        }
    }
    Ok(model)
}

/// Structural validation only (dimensions, generator, irreducibility, barriers).
pub fn validate_structure(raw: &RawModel) -> std::result::Result<MmbmModel, ValidationError> {
    let n = raw.mu.len();
    let mut violations = Vec::new();
    if n == 0 {
        violations.push(Violation::EmptyModel);
        return Err(ValidationError { violations });
    }
    for (field, len) in [
        ("sigma", raw.sigma.len()),
        ("a", raw.a.len()),
        ("b", raw.b.len()),
        ("q", raw.q.len()),
    ] {
        if len != n {
            violations.push(Violation::DimensionMismatch {
                field,
                expected: n,
                found: len,
            });
        }
    }
    for row in &raw.q {
        if row.len() != n {
            violations.push(Violation::DimensionMismatch {
                field: "q",
                expected: n,
                found: row.len(),
            });
            break;
        }
    }
    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }

    for (field, values) in [
        ("mu", &raw.mu),
        ("sigma", &raw.sigma),
        ("a", &raw.a),
        ("b", &raw.b),
    ] {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                violations.push(Violation::NonFinite { field, index });
            }
        }
    }
    for (i, row) in raw.q.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                violations.push(Violation::NonFinite {
                    field: "q",
                    index: i * n + j,
                });
            }
        }
    }
    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }

    let canon = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| x + 0.0).collect() };
    let q = DMatrix::from_fn(n, n, |i, j| raw.q[i][j] + 0.0);
    let q = check_generator(q, &mut violations);

    for (state, &s) in raw.sigma.iter().enumerate() {
        if s < 0.0 {
            violations.push(Violation::NegativeSigma { state, value: s });
        }
    }
    for state in 0..n {
        if raw.a[state] > raw.b[state] {
            violations.push(Violation::BarrierOrder {
                state,
                a: raw.a[state],
                b: raw.b[state],
            });
        }
    }
    let mut levels: Vec<f64> = raw.a.iter().chain(&raw.b).map(|&x| x + 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let level_scale = levels.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    for w in levels.windows(2) {
        if w[1] - w[0] < BARRIER_MERGE_TOL * level_scale {
            violations.push(Violation::BarriersTooClose {
                left: w[0],
                right: w[1],
            });
        }
    }
    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }

    let q = RateMatrix(q);
    let pi = stationary_vector(&q).map_err(|_| ValidationError {
        violations: vec![Violation::Reducible {
            unreachable_from_first: Vec::new(),
        }],
    })?;
    Ok(MmbmModel {
        q,
        params: StateParams {
            mu: canon(&raw.mu),
            sigma: canon(&raw.sigma),
            a: canon(&raw.a),
            b: canon(&raw.b),
        },
        pi,
    })
}

fn check_generator(mut q: DMatrix<f64>, violations: &mut Vec<Violation>) -> DMatrix<f64> {
    let n = q.nrows();
    if q.ncols() != n {
        violations.push(Violation::DimensionMismatch {
            field: "q",
            expected: n,
            found: q.ncols(),
        });
        return q;
    }
    let scale = q.amax();
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] < 0.0 {
                violations.push(Violation::NegativeRate {
                    row: i,
                    col: j,
                    value: q[(i, j)],
                });
            }
        }
        let sum: f64 = q.row(i).sum();
        if sum.abs() > ROW_SUM_TOL * scale {
            violations.push(Violation::RowSumViolation { row: i, sum });
        } else {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
            q[(i, i)] = -off;
        }
    }
    if violations.is_empty() {
        let missing = unreachable_states(&q);
        if !missing.is_empty() {
            violations.push(Violation::Reducible {
                unreachable_from_first: missing,
            });
        }
    }
    q
}

/// States that are not mutually reachable with state 0 on the support graph.
fn unreachable_states(q: &DMatrix<f64>) -> Vec<usize> {
    let n = q.nrows();
    let reach = |forward: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let rate = if forward { q[(i, j)] } else { q[(j, i)] };
                if j != i && rate > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    (0..n).filter(|&i| !(fwd[i] && bwd[i])).collect()
}

/// Stationary vector of an irreducible generator by GTH state reduction.
///
/// Only off-diagonal rates enter the elimination, so no cancellation occurs and
/// every component comes out strictly positive.
pub fn stationary_vector(q: &RateMatrix) -> Result<DVector<f64>> {
    let n = q.n_states();
    let mut m = q.matrix().clone();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| m[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(Error::SingularSystem);
        }
        for i in 0..k {
            m[(i, k)] /= s;
        }
        for i in 0..k {
            let f = m[(i, k)];
            if f != 0.0 {
                for j in 0..k {
                    if j != i {
                        m[(i, j)] += f * m[(k, j)];
                    }
                }
            }
        }
    }
    let mut pi = DVector::zeros(n);
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * m[(i, k)]).sum();
    }
    let total = pi.sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::SingularSystem);
    }
    Ok(pi / total)
}

/// Long-run mean drift κ = Σ μ(i) π_i.
pub fn asymptotic_drift(model: &MmbmModel) -> f64 {
    model
        .params
        .mu
        .iter()
        .zip(model.pi.iter())
        .map(|(m, p)| m * p)
        .sum()
}

pub fn classify_states(model: &MmbmModel) -> StateClassification {
    classify(&model.params.mu, &model.params.sigma)
}

pub(crate) fn classify(mu: &[f64], sigma: &[f64]) -> StateClassification {
    StateClassification {
        plus: mu
            .iter()
            .zip(sigma)
            .map(|(&m, &s)| s > 0.0 || m > 0.0)
            .collect(),
        minus: mu
            .iter()
            .zip(sigma)
            .map(|(&m, &s)| s > 0.0 || m < 0.0)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn raw2(q: [[f64; 2]; 2], mu: [f64; 2], sigma: [f64; 2], a: [f64; 2], b: [f64; 2]) -> RawModel {
        RawModel {
            q: q.iter().map(|r| r.to_vec()).collect(),
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
            a: a.to_vec(),
            b: b.to_vec(),
        }
    }

    #[test]
    fn accepts_reference_model() {
        let raw = raw2(
            [[-1.0, 1.0], [1.0, -1.0]],
            [-1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [1.0, 2.0],
        );
        // κ = 0 here while the first interval is shared by both states: structurally
        // valid, but excluded from the stationary problem.
        let m = validate_structure(&raw).unwrap();
        assert_eq!(m.n_states(), 2);
        assert!(validate_model(&raw).is_err());

        let mut raw = raw;
        raw.mu = vec![-1.0, 0.5];
        assert!(validate_model(&raw).is_ok());
    }

    #[test]
    fn rejects_row_sum() {
        let raw = raw2(
            [[-1.0, 0.5], [1.0, -1.0]],
            [-1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [1.0, 2.0],
        );
        let err = validate_model(&raw).unwrap_err();
        assert!(matches!(
            err.violations[0],
            Violation::RowSumViolation { row: 0, .. }
        ));
    }

    #[test]
    fn rejects_barrier_order() {
        let raw = raw2(
            [[-1.0, 1.0], [1.0, -1.0]],
            [-1.0, 1.0],
            [1.0, 1.0],
            [0.0, 3.0],
            [1.0, 2.0],
        );
        let err = validate_model(&raw).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BarrierOrder { state: 1, .. })));
    }

    #[test]
    fn rejects_negative_rate_and_reducible() {
        let raw = raw2(
            [[1.0, -1.0], [1.0, -1.0]],
            [-1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [1.0, 2.0],
        );
        let err = validate_model(&raw).unwrap_err();
        assert!(matches!(err.violations[0], Violation::NegativeRate { .. }));

        let raw = raw2(
            [[0.0, 0.0], [1.0, -1.0]],
            [-1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [1.0, 2.0],
        );
        let err = validate_model(&raw).unwrap_err();
        assert!(matches!(err.violations[0], Violation::Reducible { .. }));
    }

    #[test]
    fn rejects_zero_drift_on_shared_interval() {
        let raw = raw2(
            [[-1.0, 1.0], [1.0, -1.0]],
            [1.0, -1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [1.0, 2.0],
        );
        let err = validate_model(&raw).unwrap_err();
        assert!(matches!(
            err.violations[0],
            Violation::AllBarriersDegenerateWithKappaZero { .. }
        ));
        // Structure alone is fine (the dividend problem accepts it).
        assert!(validate_structure(&raw).is_ok());
    }

    #[test]
    fn near_zero_row_sum_is_repaired() {
        let raw = raw2(
            [[-1.0, 1.0 + 1e-15], [2.0, -2.0]],
            [-1.0, 1.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [1.0, 2.0],
        );
        let m = validate_model(&raw).unwrap();
        assert_eq!(m.q().matrix().row(0).sum(), 0.0);
    }

    #[test]
    fn stationary_vector_examples() {
        let q = RateMatrix::new(DMatrix::from_row_slice(2, 2, &[-3.0, 3.0, 3.0, -3.0])).unwrap();
        let pi = stationary_vector(&q).unwrap();
        assert_relative_eq!(pi[0], 0.5, epsilon = 1e-15);

        let q = RateMatrix::new(DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
        assert_eq!(stationary_vector(&q).unwrap()[0], 1.0);

        // πQ = 0 solved by hand: π1 = 2 π2.
        let q = RateMatrix::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0])).unwrap();
        let pi = stationary_vector(&q).unwrap();
        assert_relative_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn drift_examples() {
        let mk = |q: [[f64; 2]; 2], mu: [f64; 2]| {
            validate_structure(&raw2(q, mu, [1.0, 1.0], [0.0, 0.0], [1.0, 2.0])).unwrap()
        };
        assert_eq!(mk([[-1.0, 1.0], [1.0, -1.0]], [1.0, -1.0]).kappa(), 0.0);
        assert_relative_eq!(
            mk([[-1.0, 1.0], [2.0, -2.0]], [2.0, -1.0]).kappa(),
            1.0,
            epsilon = 1e-14
        );
        let single = validate_model(&RawModel {
            q: vec![vec![0.0]],
            mu: vec![-1.0],
            sigma: vec![1.0],
            a: vec![0.0],
            b: vec![1.0],
        })
        .unwrap();
        assert_eq!(single.kappa(), -1.0);
    }

    #[test]
    fn classification_examples() {
        let c = classify(&[-1.0, 0.3], &[0.0, 1.0]);
        assert_eq!(c.e_plus(), vec![1]);
        assert_eq!(c.e_minus(), vec![0, 1]);
        let c = classify(&[0.4, 1.0], &[1.0, 0.0]);
        assert_eq!(c.e_plus(), vec![0, 1]);
        assert_eq!(c.e_minus(), vec![0]);
        let c = classify(&[0.0, 0.0], &[0.0, 0.0]);
        assert!(c.e_plus().is_empty() && c.e_minus().is_empty() && c.is_empty());
    }

    fn random_generator(n: usize, rates: &[f64], mask: &[bool]) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let idx = i * n + j;
                    // Keep a cycle so the chain is always irreducible.
                    let on = mask[idx] || j == (i + 1) % n;
                    if on {
                        q[(i, j)] = rates[idx];
                    }
                }
            }
            let s: f64 = q.row(i).sum();
            q[(i, i)] = -s;
        }
        q
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn stationary_vector_balances(
            n in 1usize..=6,
            rates in proptest::collection::vec(0.01f64..10.0, 36),
            mask in proptest::collection::vec(any::<bool>(), 36),
        ) {
            let q = RateMatrix::new(random_generator(n, &rates, &mask)).unwrap();
            let pi = stationary_vector(&q).unwrap();
            let residual = (pi.transpose() * q.matrix()).amax();
            prop_assert!(residual <= 1e-10 * q.scale().max(1.0));
            prop_assert!((pi.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(pi.iter().all(|&p| p > 0.0));
        }

        #[test]
        fn classification_depends_only_on_signs(
            mu in proptest::collection::vec(-5.0f64..5.0, 1..6),
            sigma_on in proptest::collection::vec(any::<bool>(), 6),
            factor in 0.1f64..10.0,
        ) {
            let n = mu.len();
            let sigma: Vec<f64> = (0..n).map(|i| if sigma_on[i] { 0.7 } else { 0.0 }).collect();
            let base = classify(&mu, &sigma);
            let mu2: Vec<f64> = mu.iter().map(|m| m * factor).collect();
            let sigma2: Vec<f64> = sigma.iter().map(|s| s * factor).collect();
            prop_assert_eq!(&base, &classify(&mu2, &sigma2));
            // Idempotent: classifying again yields the same sets.
            prop_assert_eq!(&base, &classify(&mu, &sigma));
        }
    }
}
