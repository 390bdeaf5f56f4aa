//! Two states where one of them has no diffusion, barriers `[0, b1]` and `[0, b2]`.
//!
//! State 1 without diffusion and negative drift leaves an atom at 0; state 2 without
//! diffusion and positive drift leaves an atom at `b2`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{coth, pi2, require, two_state_model, ClosedFormCdf, ExpSum};
use crate::error::Result;
use crate::model::MmbmModel;
use crate::stationary::Atom;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoDiffParams {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub q12: f64,
    pub q21: f64,
    pub b1: f64,
    pub b2: f64,
}

impl NoDiffParams {
    pub fn model(&self) -> Result<MmbmModel> {
        two_state_model(self.q12, self.q21, self.mu, self.sigma, [self.b1, self.b2])
    }

    fn kappa(&self) -> f64 {
        let (p1, p2) = pi2(self.q12, self.q21);
        self.mu[0] * p1 + self.mu[1] * p2
    }

    fn common_checks(&self) -> Result<()> {
        require(self.q12 > 0.0 && self.q21 > 0.0, "q12, q21 > 0")?;
        require(0.0 < self.b1 && self.b1 < self.b2, "0 < b1 < b2")?;
        require(self.kappa() < 0.0, "kappa < 0")
    }

    /// Exponents of the state-1-without-diffusion case: `(λ_1^+, γ_1^+, λ_12^−, λ_21^−)`.
    pub fn case1_exponents(&self) -> (f64, f64, f64, f64) {
        let [m1, m2] = self.mu;
        let (q12, q21) = (self.q12, self.q21);
        let s = self.sigma[1] * self.sigma[1];
        let d1 = (m1 * m1 * m2 * m2 + m1 * m2 * q12 * s + 2.0 * m1 * m1 * q21 * s + q12 * q12 * s * s / 4.0).sqrt();
        let l1 = m2 / s - q12 / (2.0 * m1) + d1 / (m1 * s);
        let g1 = -0.5 * (m2 / m1) * (q12 / q21) - q12 * q12 * s / (4.0 * q21 * m1 * m1) + d1 * q12 / (2.0 * m1 * m1 * q21);
        let d2 = (2.0 * q21 * m1 * m1 * s + (m1 * m2 + q12 * s / 2.0).powi(2)).sqrt();
        let l12 = -q12 / m1;
        let l21 = m2 / s + q12 / (2.0 * m1) - d2 / (m1 * s);
        (l1, g1, l12, l21)
    }

    /// Residuals of the defining equations of the case-1 exponents.
    pub fn case1_residuals(&self) -> [f64; 4] {
        let (l, g, l12, l21) = self.case1_exponents();
        let [m1, m2] = self.mu;
        let s = self.sigma[1] * self.sigma[1];
        [
            self.q12 * (1.0 - g) - m1 * l * g,
            -self.q21 * (1.0 - g) - m2 * l + 0.5 * s * l * l,
            self.q12 + m1 * l12,
            self.q21 + m2 * l21 - 0.5 * s * l12 * l21 - 0.5 * s * l21 * l21,
        ]
    }

    /// Exponents of the state-2-without-diffusion case: `(λ_12^+, λ_21^+, λ_1^−, γ_2^−)`.
    pub fn case2_exponents(&self) -> (f64, f64, f64, f64) {
        let [m1, m2] = self.mu;
        let (q12, q21) = (self.q12, self.q21);
        let s = self.sigma[0] * self.sigma[0];
        let d1 = (2.0 * q12 * m2 * m2 * s + (m2 * m1 + q21 * s / 2.0).powi(2)).sqrt();
        let l12 = -m1 / s - q21 / (2.0 * m2) + d1 / (m2 * s);
        let l21 = q21 / m2;
        let d2 = (m2 * m2 * m1 * m1 + m2 * m1 * q21 * s + 2.0 * m2 * m2 * q12 * s + q21 * q21 * s * s / 4.0).sqrt();
        let l1 = -m1 / s + q21 / (2.0 * m2) - d2 / (m2 * s);
        let g2 = -0.5 * (m1 / m2) * (q21 / q12) - q21 * q21 * s / (4.0 * q12 * m2 * m2) + d2 * q21 / (2.0 * m2 * m2 * q12);
        (l12, l21, l1, g2)
    }

    pub fn case2_residuals(&self) -> [f64; 4] {
        let (l12, l21, l, g) = self.case2_exponents();
        let [m1, m2] = self.mu;
        let s = self.sigma[0] * self.sigma[0];
        [
            self.q12 - m1 * l12 - 0.5 * s * l21 * l12 - 0.5 * s * l12 * l12,
            self.q21 - m2 * l21,
            -self.q12 * (1.0 - g) + m1 * l + 0.5 * s * l * l,
            self.q21 * (1.0 - g) + m2 * l * g,
        ]
    }
}

/// `e^{tG}` for `G = [[−p, p], [r, −r]]` split as `E0 + E1 e^{−(p+r) t}`.
fn generator_exp_parts(p: f64, r: f64) -> (Matrix2<f64>, Matrix2<f64>, f64) {
    let s = p + r;
    let e0 = Matrix2::new(r, p, r, p) / s;
    let e1 = Matrix2::new(p, -p, -r, r) / s;
    (e0, e1, s)
}

/// Upper piece shared with the common-parameter case: `π2 − c e^{Δ(z−b1)} sinh(Θ(b2−z))/sinh(Θ(b2−b1))`.
fn sinh_upper(p2: f64, c: f64, delta: f64, theta: f64, b1: f64, b2: f64) -> ExpSum {
    let mut f = ExpSum::constant(p2);
    f.push_exp_sinh(c / (theta * (b2 - b1)).sinh(), delta, b1, theta, b2);
    f
}

/// State 1: `σ1 = 0`, `μ1 < 0`; state 2: `σ2 > 0`; `κ < 0`.
pub fn cf_nodiff_state1(p: NoDiffParams) -> Result<ClosedFormCdf> {
    require(p.sigma[0] == 0.0 && p.mu[0] < 0.0, "sigma1 = 0, mu1 < 0")?;
    require(p.sigma[1] > 0.0, "sigma2 > 0")?;
    p.common_checks()?;
    let (p1, p2) = pi2(p.q12, p.q21);
    let (l1, g1, l12, l21) = p.case1_exponents();
    let s = p.sigma[1] * p.sigma[1];
    let mu2 = p.mu[1];

    let ghat = Matrix2::new(0.0, g1, 0.0, 1.0);
    // e^{−zΛ−} with Λ− = [[−λ12, λ12], [λ21, −λ21]].
    let (e0, e1, rate) = generator_exp_parts(-l12, -l21);
    let bmat = |z: f64| ghat * (l1 * z).exp() - e0 - e1 * (-rate * z).exp();
    let bprime = |z: f64| ghat * (l1 * (l1 * z).exp()) + e1 * (rate * (-rate * z).exp());
    let pm = Matrix2::new(p1, 0.0, 0.0, p2);
    let pinv = Matrix2::new(1.0 / p1, 0.0, 0.0, 1.0 / p2);
    let cinv = bmat(p.b1).try_inverse().ok_or(crate::error::Error::SingularSystem)?;
    let kmat = pm * bprime(p.b1) * cinv * pinv;
    let (k1, k2) = (kmat[(1, 0)], kmat[(1, 1)]);
    let theta2 = -(mu2 * mu2 + 2.0 * p.q21 * s).sqrt() / s;
    let delta2 = mu2 / s;
    let k3 = theta2 * coth(theta2 * (p.b2 - p.b1));
    let x = (p2 * (k3 - delta2) - p1 * k1) / (k2 + k3 - delta2);

    let m = cinv * pinv * Vector2::new(p1, x);
    let (gm, e0m, e1m) = (ghat * m, e0 * m, e1 * m);
    let lower: Vec<ExpSum> = (0..2)
        .map(|i| {
            let mut f = ExpSum::constant(-pm[(i, i)] * e0m[i]);
            f.push(l1, pm[(i, i)] * gm[i], 0.0);
            f.push(-rate, -pm[(i, i)] * e1m[i], 0.0);
            f
        })
        .collect();
    let atom = (pm * (ghat - Matrix2::identity()) * m)[0];
    let upper = sinh_upper(p2, p2 - x, delta2, theta2, p.b1, p.b2);
    Ok(ClosedFormCdf::new(
        vec![p1, p2],
        vec![0.0, 0.0],
        vec![p.b1, p.b2],
        vec![
            vec![(0.0, p.b1, lower[0].clone())],
            vec![(0.0, p.b1, lower[1].clone()), (p.b1, p.b2, upper)],
        ],
        vec![Atom {
            state: 0,
            location: 0.0,
            mass: atom,
        }],
    ))
}

/// State 1: `σ1 > 0`; state 2: `σ2 = 0`, `μ2 > 0`; `κ < 0`.
pub fn cf_nodiff_state2(p: NoDiffParams) -> Result<ClosedFormCdf> {
    require(p.sigma[0] > 0.0, "sigma1 > 0")?;
    require(p.sigma[1] == 0.0 && p.mu[1] > 0.0, "sigma2 = 0, mu2 > 0")?;
    p.common_checks()?;
    let (p1, p2) = pi2(p.q12, p.q21);
    let (l12, l21, l1, g2) = p.case2_exponents();

    // e^{zΛ+} with Λ+ = [[−λ12, λ12], [λ21, −λ21]].
    let (e0, e1, rate) = generator_exp_parts(l12, l21);
    let g = Vector2::new(1.0, g2);
    let (e0g, e1g) = (e0 * g, e1 * g);
    let pd = [p1, p2];
    let v = |z: f64, i: usize| pd[i] * (g[i] * (-l1 * z).exp() - e0g[i] - e1g[i] * (-rate * z).exp());
    let c1 = v(p.b1, 0);
    let scale = p1 / c1;
    let lower: Vec<ExpSum> = (0..2)
        .map(|i| {
            let mut f = ExpSum::constant(-scale * pd[i] * e0g[i]);
            f.push(-l1, scale * pd[i] * g[i], 0.0);
            f.push(-rate, -scale * pd[i] * e1g[i], 0.0);
            f
        })
        .collect();
    let x = scale * v(p.b1, 1);
    // I_2: Π_2(z) = π2 − e^{−(q21/μ2)(z − b1)} (π2 − Π_2(b1)).
    let mut upper = ExpSum::constant(p2);
    upper.push(-l21, -(p2 - x), p.b1);
    let atom = (-l21 * (p.b2 - p.b1)).exp() * (p2 - x);
    Ok(ClosedFormCdf::new(
        vec![p1, p2],
        vec![0.0, 0.0],
        vec![p.b1, p.b2],
        vec![
            vec![(0.0, p.b1, lower[0].clone())],
            vec![(0.0, p.b1, lower[1].clone()), (p.b1, p.b2, upper)],
        ],
        vec![Atom {
            state: 1,
            location: p.b2,
            mass: atom,
        }],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::{balance_residual, StationaryCdf};
    use approx::assert_abs_diff_eq;

    const CASE1: NoDiffParams = NoDiffParams {
        mu: [-1.0, 0.5],
        sigma: [0.0, 1.0],
        q12: 1.0,
        q21: 1.0,
        b1: 1.0,
        b2: 2.0,
    };
    const CASE2: NoDiffParams = NoDiffParams {
        mu: [-2.0, 1.0],
        sigma: [1.0, 0.0],
        q12: 1.0,
        q21: 1.0,
        b1: 1.0,
        b2: 2.0,
    };

    #[test]
    fn printed_substitutions() {
        let p = NoDiffParams { mu: [-2.0, 0.5], ..CASE1 };
        assert_abs_diff_eq!(p.case1_exponents().2, 0.5, epsilon = 1e-15);
        let p = NoDiffParams { mu: [-2.0, 4.0], q21: 2.0, ..CASE2 };
        assert_abs_diff_eq!(p.case2_exponents().1, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn exponents_solve_their_defining_systems() {
        for r in CASE1.case1_residuals() {
            assert!(r.abs() < 1e-10);
        }
        for r in CASE2.case2_residuals() {
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn case1_shape() {
        let cdf = cf_nodiff_state1(CASE1).unwrap();
        let atom = cdf.atoms()[0];
        assert!(atom.mass > 0.0);
        assert_abs_diff_eq!(cdf.cdf(0, 0.0), atom.mass, epsilon = 1e-14);
        assert_abs_diff_eq!(cdf.cdf(0, 1.0 - 1e-12), 0.5, epsilon = 1e-9);
        assert!(balance_residual(&CASE1.model().unwrap(), &cdf, 1000) < 1e-8);
    }

    #[test]
    fn case2_shape() {
        let cdf = cf_nodiff_state2(CASE2).unwrap();
        let atom = cdf.atoms()[0];
        assert!(atom.mass > 0.0);
        assert_abs_diff_eq!(cdf.cdf(1, 0.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cdf.cdf(1, 2.0 - 1e-12) + atom.mass, 0.5, epsilon = 1e-9);
        assert!(balance_residual(&CASE2.model().unwrap(), &cdf, 1000) < 1e-8);
    }

    #[test]
    fn sign_constraints_are_enforced() {
        assert!(cf_nodiff_state1(NoDiffParams { mu: [1.0, 0.5], ..CASE1 }).is_err());
        assert!(cf_nodiff_state1(NoDiffParams { mu: [-0.1, 2.0], ..CASE1 }).is_err());
        assert!(cf_nodiff_state2(NoDiffParams { mu: [-2.0, -1.0], ..CASE2 }).is_err());
        assert!(cf_nodiff_state2(CASE1).is_err());
    }
}
