//! Two states sharing drift and diffusion, barriers `[0, b1]` and `[0, b2]`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{coth, pi2, require, two_state_model, ClosedFormCdf, ExpSum};
use crate::error::Result;
use crate::model::MmbmModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStateCommonParams {
    pub mu: f64,
    pub sigma: f64,
    pub q12: f64,
    pub q21: f64,
    pub b1: f64,
    pub b2: f64,
}

impl TwoStateCommonParams {
    pub fn validate(&self) -> Result<()> {
        require(self.sigma > 0.0, "sigma > 0")?;
        require(self.mu != 0.0, "mu != 0")?;
        require(self.q12 > 0.0 && self.q21 > 0.0, "q12, q21 > 0")?;
        require(0.0 < self.b1 && self.b1 < self.b2, "0 < b1 < b2")
    }

    pub fn model(&self) -> Result<MmbmModel> {
        two_state_model(self.q12, self.q21, [self.mu; 2], [self.sigma; 2], [self.b1, self.b2])
    }

    /// Reads the parameters back from a two-state model with shared drift and diffusion and `a = 0`.
    pub fn from_model(m: &MmbmModel) -> Result<Self> {
        require(m.n_states() == 2, "two states")?;
        require(m.mu(0) == m.mu(1) && m.sigma(0) == m.sigma(1), "common drift and diffusion")?;
        require(m.a(0) == 0.0 && m.a(1) == 0.0, "a = 0")?;
        let p = TwoStateCommonParams {
            mu: m.mu(0),
            sigma: m.sigma(0),
            q12: m.q().rate(0, 1),
            q21: m.q().rate(1, 0),
            b1: m.b(0),
            b2: m.b(1),
        };
        p.validate()?;
        Ok(p)
    }

    /// `Δ = μ/σ²`.
    pub fn delta(&self) -> f64 {
        self.mu / (self.sigma * self.sigma)
    }

    /// `Θ_2 = −√(μ² + 2 q21 σ²)/σ²`.
    pub fn theta2(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        -(self.mu * self.mu + 2.0 * self.q21 * s2).sqrt() / s2
    }

    /// Second eigenvalue of `Θ_1`: `−√(μ² + 2 (q12 + q21) σ²)/σ²`.
    pub fn theta1(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        -(self.mu * self.mu + 2.0 * (self.q12 + self.q21) * s2).sqrt() / s2
    }

    /// `Θ_1 = V diag(Δ, θ_1) V⁻¹`.
    pub fn theta1_matrix(&self) -> Matrix2<f64> {
        let (v, vinv) = self.eigenbasis();
        v * Matrix2::from_diagonal(&Vector2::new(self.delta(), self.theta1())) * vinv
    }

    fn eigenbasis(&self) -> (Matrix2<f64>, Matrix2<f64>) {
        let (p1, p2) = pi2(self.q12, self.q21);
        // Columns (1, 1) and (π2, −π1); the determinant is −1.
        let v = Matrix2::new(1.0, p2, 1.0, -p1);
        let vinv = Matrix2::new(p1, p2, 1.0, -1.0);
        (v, vinv)
    }
}

#[derive(Debug, Clone)]
pub struct CommonTwoState {
    pub params: TwoStateCommonParams,
    /// `(k1, k2, k3)`.
    pub k: [f64; 3],
    /// `Π_2(b1)`.
    pub pi2_at_b1: f64,
    pub cdf: ClosedFormCdf,
}

pub fn cf_common_two_state(params: TwoStateCommonParams) -> Result<CommonTwoState> {
    params.validate()?;
    let p = params;
    let (p1, p2) = pi2(p.q12, p.q21);
    let d = p.delta();
    let t1 = p.theta1();
    let t2 = p.theta2();
    let (v, vinv) = p.eigenbasis();
    let pm = Matrix2::new(p1, 0.0, 0.0, p2);
    let pinv = Matrix2::new(1.0 / p1, 0.0, 0.0, 1.0 / p2);

    let kmat = pm * v * Matrix2::new(d * coth(d * p.b1), 0.0, 0.0, t1 * coth(t1 * p.b1)) * vinv * pinv;
    let k1 = kmat[(1, 0)];
    let k2 = kmat[(1, 1)];
    let k3 = t2 * coth(t2 * (p.b2 - p.b1));
    let x = (p2 * (k3 - d) - p1 * k1) / (k2 + k3);

    // I_1: Π(z) = e^{Δ(z−b1)} P V diag(sinh(λ z)/sinh(λ b1)) V⁻¹ P⁻¹ (π1, Π_2(b1)).
    let w = vinv * pinv * Vector2::new(p1, x);
    let lams = [d, t1];
    let mut lower = [ExpSum::default(), ExpSum::default()];
    for (i, f) in lower.iter_mut().enumerate() {
        for c in 0..2 {
            let scale = pm[(i, i)] * v[(i, c)] * w[c] / (lams[c] * p.b1).sinh();
            f.push_exp_sinh(scale, d, p.b1, lams[c], 0.0);
        }
    }
    // I_2: Π_2(z) = π2 − (π2 − Π_2(b1)) e^{Δ(z−b1)} sinh(Θ_2(b2−z))/sinh(Θ_2(b2−b1)).
    let mut upper = ExpSum::constant(p2);
    upper.push_exp_sinh((p2 - x) / (t2 * (p.b2 - p.b1)).sinh(), d, p.b1, t2, p.b2);

    let [l0, l1] = lower;
    let cdf = ClosedFormCdf::new(
        vec![p1, p2],
        vec![0.0, 0.0],
        vec![p.b1, p.b2],
        vec![vec![(0.0, p.b1, l0)], vec![(0.0, p.b1, l1), (p.b1, p.b2, upper)]],
        Vec::new(),
    );
    Ok(CommonTwoState {
        params: p,
        k: [k1, k2, k3],
        pi2_at_b1: x,
        cdf,
    })
}

/// Rate and overshoot law of the clamping down-jumps into state 1.
#[derive(Debug, Clone)]
pub struct RegenerationResult {
    pub eta: f64,
    pub b1: f64,
    pub b2: f64,
    h: ExpSum,
}

impl RegenerationResult {
    /// `H(z) = P(b1 ≤ Z(τ−) ≤ z)`, clamped to `[0, 1]` outside `(b1, b2]`.
    pub fn h(&self, z: f64) -> f64 {
        if z <= self.b1 {
            0.0
        } else if z >= self.b2 {
            1.0
        } else {
            self.h.eval(z, 0)
        }
    }

    pub fn h_prime(&self, z: f64) -> f64 {
        if z < self.b1 || z > self.b2 {
            0.0
        } else {
            self.h.eval(z, 1)
        }
    }
}

/// `η = q21 (π2 − Π_2(b1))`, `H(z) = 1 − e^{Δ(z−b1)} sinh(Θ_2(b2−z))/sinh(Θ_2(b2−b1))`.
pub fn cf_regeneration(params: TwoStateCommonParams) -> Result<RegenerationResult> {
    let sol = cf_common_two_state(params)?;
    let p = params;
    let (_, p2) = pi2(p.q12, p.q21);
    let t2 = p.theta2();
    let mut h = ExpSum::constant(1.0);
    h.push_exp_sinh(1.0 / (t2 * (p.b2 - p.b1)).sinh(), p.delta(), p.b1, t2, p.b2);
    Ok(RegenerationResult {
        eta: p.q21 * (p2 - sol.pi2_at_b1),
        b1: p.b1,
        b2: p.b2,
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::{balance_residual, StationaryCdf};
    use approx::assert_abs_diff_eq;

    const REF: TwoStateCommonParams = TwoStateCommonParams {
        mu: -0.5,
        sigma: 1.0,
        q12: 1.0,
        q21: 1.0,
        b1: 1.0,
        b2: 2.0,
    };

    #[test]
    fn printed_constants() {
        let p = TwoStateCommonParams { mu: -1.0, ..REF };
        assert_eq!(p.delta(), -1.0);
        let p = TwoStateCommonParams { mu: -1.0, q21: 1.5, ..REF };
        assert_abs_diff_eq!(p.theta2(), -2.0, epsilon = 1e-15);
    }

    #[test]
    fn theta1_has_printed_structure() {
        let (p1, p2) = (0.5, 0.5);
        let th = REF.theta1_matrix();
        let d = REF.delta();
        let t1 = REF.theta1();
        let expect = Matrix2::new(p2, -p2, -p1, p1) * t1 + Matrix2::new(p1, p2, p1, p2) * d;
        assert!((th - expect).amax() < 1e-14);
    }

    #[test]
    fn reference_values() {
        let s = cf_common_two_state(REF).unwrap();
        assert_abs_diff_eq!(s.pi2_at_b1, 0.4108187318725392, epsilon = 1e-13);
        for (z, v) in [(0.0, 0.0), (0.5, 0.26535), (1.0, 0.41082), (1.5, 0.47318), (2.0, 0.5)] {
            assert_abs_diff_eq!(s.cdf.cdf(1, z), v, epsilon = 1e-5);
        }
        let m = REF.model().unwrap();
        assert!(balance_residual(&m, &s.cdf, 1000) < 1e-8);
    }

    #[test]
    fn regeneration_identities() {
        let r = cf_regeneration(REF).unwrap();
        assert_abs_diff_eq!(r.h.eval(REF.b1, 0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.h.eval(REF.b2, 0), 1.0, epsilon = 1e-14);
        assert!(r.eta > 0.0);
        let s = cf_common_two_state(REF).unwrap();
        for j in 1..20 {
            let z = REF.b1 + (REF.b2 - REF.b1) * j as f64 / 20.0;
            assert_abs_diff_eq!(r.eta * r.h_prime(z), REF.q21 * s.cdf.density(1, z), epsilon = 1e-9);
        }
    }

    #[test]
    fn parameters_round_trip_through_model() {
        let m = REF.model().unwrap();
        assert_eq!(TwoStateCommonParams::from_model(&m).unwrap(), REF);
        let other = TwoStateCommonParams { mu: 0.3, ..REF }.model().unwrap().shifted(1.0);
        assert!(TwoStateCommonParams::from_model(&other).is_err());
    }

    #[test]
    fn out_of_case_is_refused() {
        let p = TwoStateCommonParams { mu: 0.0, ..REF };
        assert!(cf_common_two_state(p).is_err());
        let p = TwoStateCommonParams { b1: 3.0, ..REF };
        assert!(cf_common_two_state(p).is_err());
    }
}
