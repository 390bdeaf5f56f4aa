use super::{require, ClosedFormCdf, ExpSum};
use crate::error::Result;

/// One state on `[a, b]`: `Π(z) = (e^{m(z−a)} − 1)/(e^{m(b−a)} − 1)` with `m = 2μ/σ²`.
pub fn cf_single_state(mu: f64, sigma: f64, a: f64, b: f64) -> Result<ClosedFormCdf> {
    require(mu != 0.0, "mu != 0")?;
    require(sigma > 0.0, "sigma > 0")?;
    require(a < b, "a < b")?;
    let m = 2.0 * mu / (sigma * sigma);
    let len = b - a;
    let mut f = ExpSum::default();
    if m > 0.0 {
        // Expand around b so nothing overflows for steep upward drift.
        let den = -(-m * len).exp_m1();
        f.push(m, 1.0 / den, b);
        f.constant = -(-m * len).exp() / den;
    } else {
        let den = (m * len).exp_m1();
        f.push(m, 1.0 / den, a);
        f.constant = -1.0 / den;
    }
    Ok(ClosedFormCdf::new(vec![1.0], vec![a], vec![b], vec![vec![(a, b, f)]], Vec::new()))
}
