//! Two diffusive states with symmetric switching rate `λ`, barriers `b1 < b2` and ruin at 0.

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::{require, two_state_structure, ExpSum};
use crate::dividend::{DividendModel, DividendValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DividendTwoStateParams {
    pub lambda: f64,
    pub delta: f64,
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub b: [f64; 2],
}

impl DividendTwoStateParams {
    pub fn validate(&self) -> Result<()> {
        require(self.lambda > 0.0, "lambda > 0")?;
        require(self.delta > 0.0, "delta > 0")?;
        require(self.sigma[0] > 0.0 && self.sigma[1] > 0.0, "sigma > 0")?;
        require(self.mu[1] != 0.0, "mu2 != 0")?;
        require(0.0 < self.b[0] && self.b[0] < self.b[1], "0 < b1 < b2")
    }

    pub fn model(&self) -> Result<DividendModel> {
        let base = two_state_structure(self.lambda, self.lambda, self.mu, self.sigma, self.b)?;
        DividendModel::new(base, self.delta)
    }
}

/// Monic coefficients `[1, c3, c2, c1, c0]` of the characteristic polynomial on `[0, b1]`.
pub fn characteristic_quartic(p: &DividendTwoStateParams) -> [f64; 5] {
    let (s1, s2) = (p.sigma[0].powi(2), p.sigma[1].powi(2));
    let (m1, m2) = (2.0 * p.mu[0] / s1, 2.0 * p.mu[1] / s2);
    let l = p.lambda + p.delta;
    [
        1.0,
        m1 + m2,
        m1 * m2 - l * (2.0 / s1 + 2.0 / s2),
        -l * 4.0 * (p.mu[0] + p.mu[1]) / (s1 * s2),
        4.0 * p.delta * (2.0 * p.lambda + p.delta) / (s1 * s2),
    ]
}

fn quartic_roots(c: &[f64; 5]) -> Result<[f64; 4]> {
    let mut comp = Matrix4::zeros();
    for j in 0..4 {
        comp[(0, j)] = -c[j + 1];
    }
    for i in 1..4 {
        comp[(i, i - 1)] = 1.0;
    }
    let eig = comp.complex_eigenvalues();
    let scale = eig.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if eig.iter().any(|z| z.im.abs() > 1e-10 * scale) {
        return Err(Error::ComplexRoots);
    }
    let poly = |x: f64| c.iter().fold(0.0, |acc, &a| acc * x + a);
    let dpoly = |x: f64| (0..4).fold(0.0, |acc, k| acc * x + (4 - k) as f64 * c[k]);
    let mut roots = [0.0; 4];
    for (r, z) in roots.iter_mut().zip(eig.iter()) {
        let mut x = z.re;
        for _ in 0..2 {
            let d = dpoly(x);
            if d != 0.0 {
                x -= poly(x) / d;
            }
        }
        *r = x;
    }
    roots.sort_by(f64::total_cmp);
    if roots.windows(2).any(|w| w[1] - w[0] < 1e-8 * scale) {
        return Err(Error::RootMultiplicity);
    }
    Ok(roots)
}

#[derive(Debug, Clone)]
pub struct TwoStateDividend {
    pub params: DividendTwoStateParams,
    /// Ascending roots of the characteristic quartic.
    pub roots: [f64; 4],
    /// `(k1, k2, k3)`.
    pub k: [f64; 3],
    /// `V(b1, 1)` and `V(b2, 2)`.
    pub constants: [f64; 2],
    lower: [ExpSum; 2],
    upper: ExpSum,
}

pub fn cf_dividend_two_state(params: DividendTwoStateParams) -> Result<TwoStateDividend> {
    params.validate()?;
    let p = params;
    let (lam, del) = (p.lambda, p.delta);
    let (s1, s2) = (p.sigma[0].powi(2), p.sigma[1].powi(2));
    let m1 = 2.0 * p.mu[0] / s1;
    let l = lam + del;
    let [b1, b2] = p.b;
    let z = quartic_roots(&characteristic_quartic(&p))?;

    // Null vectors of the 2×2 symbol at each root, one column per root.
    let mut x = [[0.0; 4]; 2];
    for i in 0..4 {
        let d: f64 = (0..4).filter(|&j| j != i).map(|j| z[i] - z[j]).product();
        x[0][i] = -(2.0 * lam / s1) / d;
        x[1][i] = -(2.0 * l / s1 - z[i] * (m1 + z[i])) / d;
    }
    // F(t) = X1 e^{J1 t} X1⁻¹ − X2 e^{J2 t} X2⁻¹ as rank-one exponential terms.
    let mut terms: Vec<(f64, Matrix2<f64>)> = Vec::new();
    for (block, sign) in [(0usize, 1.0), (2usize, -1.0)] {
        let xb = Matrix2::new(x[0][block], x[0][block + 1], x[1][block], x[1][block + 1]);
        let inv = xb.try_inverse().ok_or(Error::SingularSystem)?;
        for c in 0..2 {
            let outer = xb.column(c) * inv.row(c) * sign;
            terms.push((z[block + c], outer));
        }
    }
    let f_at = |t: f64, d: i32| {
        terms
            .iter()
            .fold(Matrix2::zeros(), |acc, (r, m)| acc + m * (r.powi(d) * (r * t).exp()))
    };

    let th = p.mu[1] / s2;
    let de = (th * th + 2.0 * l / s2).sqrt();
    let fc = -(del / l) * (s2 / p.mu[1]);
    // f(t) = fc e^{Θ(b2−t)} cosh(Δ(b2−t)),  h(t) = e^{−Θ(t−b2)}[cosh(Δ(t−b2)) + (Θ/Δ) sinh(Δ(t−b2))].
    let mut f = ExpSum::default();
    f.push(-(th + de), 0.5 * fc, b2).push(-(th - de), 0.5 * fc, b2);
    let mut h = ExpSum::default();
    h.push(de - th, 0.5 * (1.0 + th / de), b2).push(-de - th, 0.5 * (1.0 - th / de), b2);
    let mut g = ExpSum::constant(lam * p.mu[1] / (l * l) - lam / l * b1);
    g.slope = lam / l;

    let (f1, fp) = (f_at(b1, 0), f_at(b1, 1));
    let a = Matrix3::new(
        fp[(0, 0)],
        fp[(0, 1)],
        0.0,
        fp[(1, 0)],
        fp[(1, 1)],
        -h.eval(b1, 1),
        f1[(1, 0)] - lam / l * f1[(0, 0)],
        f1[(1, 1)] - lam / l * f1[(0, 1)],
        -h.eval(b1, 0),
    );
    let r = Vector3::new(1.0, f.eval(b1, 1) + lam / l, f.eval(b1, 0) + g.eval(b1, 0));
    let k = a.lu().solve(&r).ok_or(Error::SingularSystem)?;

    let mut lower = [ExpSum::default(), ExpSum::default()];
    for (s, e) in lower.iter_mut().enumerate() {
        for (rate, m) in &terms {
            e.push(*rate, m[(s, 0)] * k[0] + m[(s, 1)] * k[1], 0.0);
        }
    }
    let c1 = lower[0].eval(b1, 0);
    let mut upper = f.add(&h.scaled(k[2])).add(&g);
    upper.constant += lam / l * c1;
    let c2 = upper.eval(b2, 0);
    Ok(TwoStateDividend {
        params: p,
        roots: z,
        k: [k[0], k[1], k[2]],
        constants: [c1, c2],
        lower,
        upper,
    })
}

impl DividendValue for TwoStateDividend {
    fn n_states(&self) -> usize {
        2
    }

    fn barrier(&self, j: usize) -> f64 {
        self.params.b[j]
    }

    fn value(&self, z: f64, j: usize) -> f64 {
        let [b1, b2] = self.params.b;
        if z <= 0.0 {
            0.0
        } else if z >= self.params.b[j] {
            self.constants[j] + z - self.params.b[j]
        } else if z <= b1 {
            self.lower[j].eval(z, 0)
        } else {
            debug_assert!(j == 1 && z < b2);
            self.upper.eval(z, 0)
        }
    }

    fn derivative(&self, z: f64, j: usize, d: u32) -> f64 {
        let b1 = self.params.b[0];
        if z < 0.0 {
            0.0
        } else if z > self.params.b[j] {
            u32::from(d == 1) as f64
        } else if z <= b1 {
            self.lower[j].eval(z, d)
        } else {
            self.upper.eval(z, d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dividend::{dividend_residual, solve_value_function};
    use approx::assert_abs_diff_eq;

    const REF: DividendTwoStateParams = DividendTwoStateParams {
        lambda: 1.0,
        delta: 0.5,
        mu: [0.5, -0.5],
        sigma: [1.0, 1.0],
        b: [1.0, 2.0],
    };

    #[test]
    fn roots_are_real_and_distinct() {
        let c = characteristic_quartic(&REF);
        let z = quartic_roots(&c).unwrap();
        for r in z {
            let v = c.iter().fold(0.0, |acc, &a| acc * r + a);
            assert!(v.abs() < 1e-12);
        }
        assert!(z[0] < z[1] && z[1] < z[2] && z[2] < z[3]);
    }

    #[test]
    fn reference_values() {
        let v = cf_dividend_two_state(REF).unwrap();
        assert_abs_diff_eq!(v.value(0.0, 0), 0.0);
        assert_abs_diff_eq!(v.lower[0].eval(0.0, 0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(v.lower[1].eval(0.0, 0), 0.0, epsilon = 1e-13);
        for (z, x) in [(0.5, 0.42992332), (1.0, 0.86937734)] {
            assert_abs_diff_eq!(v.value(z, 0), x, epsilon = 1e-8);
        }
        for (z, x) in [(0.5, 0.20413529), (1.0, 0.46594806), (1.5, 0.78929300), (2.0, 1.20822386)] {
            assert_abs_diff_eq!(v.value(z, 1), x, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(v.upper.eval(2.0, 1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.lower[0].eval(1.0, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_general_solver() {
        let cases = [
            REF,
            DividendTwoStateParams {
                lambda: 0.7,
                delta: 0.3,
                mu: [0.2, 0.9],
                sigma: [1.2, 0.7],
                b: [0.6, 1.7],
            },
            DividendTwoStateParams {
                lambda: 2.0,
                delta: 1.0,
                mu: [-0.3, 0.4],
                sigma: [0.8, 1.5],
                b: [1.5, 2.2],
            },
        ];
        for p in cases {
            let cf = cf_dividend_two_state(p).unwrap();
            let dm = p.model().unwrap();
            let vf = solve_value_function(&dm).unwrap();
            for s in 0..=200 {
                let z = p.b[1] * s as f64 / 200.0;
                for j in 0..2 {
                    assert_abs_diff_eq!(cf.value(z, j), vf.value(z, j), epsilon = 1e-6);
                }
            }
            assert!(dividend_residual(&dm, &cf, 500) < 1e-8);
        }
    }

    #[test]
    fn out_of_case_is_refused() {
        let p = DividendTwoStateParams { b: [2.0, 1.0], ..REF };
        assert!(cf_dividend_two_state(p).is_err());
        let p = DividendTwoStateParams { mu: [0.5, 0.0], ..REF };
        assert!(cf_dividend_two_state(p).is_err());
    }
}
