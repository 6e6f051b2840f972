//! Independent reference values used by the self-tests and the acceptance suite.

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::Result;
use crate::time_stepping::{l1_coefficients, l1_known_part};

/// Two-parameter Mittag-Leffler function `E_{α,β}(z) = Σ z^k / Γ(αk+β)` by its power series.
///
/// Terms are summed until they fall below `1e-17` relative to the partial sum; accurate for
/// moderate `|z|` (cancellation limits negative arguments to roughly `|z| ≲ 10`).
pub fn mittag_leffler(alpha: f64, beta: f64, z: f64) -> f64 {
    let mut sum = 0.0;
    let (mag, sign) = (z.abs().ln(), z.signum());
    for k in 0..2000usize {
        let arg = alpha * k as f64 + beta;
        let term = if k == 0 {
            1.0 / gamma(arg)
        } else if arg < 150.0 && k < 150 {
            z.powi(k as i32) / gamma(arg)
        } else {
            let s = if sign < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            s * (k as f64 * mag - ln_gamma(arg)).exp()
        };
        sum += term;
        if k > 5 && term.abs() <= 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Exact solution `E_α(-λ t^α)` of `D^α u = -λ u`, `u(0) = 1`.
pub fn relaxation_exact(alpha: f64, lambda: f64, t: f64) -> f64 {
    mittag_leffler(alpha, 1.0, -lambda * t.powf(alpha))
}

/// L1 approximation of the same problem after `steps` steps of size `tau`.
pub fn relaxation_l1(alpha: f64, lambda: f64, tau: f64, steps: usize) -> Result<f64> {
    let c = l1_coefficients(alpha, steps)?;
    let m = 1.0 / (tau.powf(alpha) * c.c_alpha);
    let mut hist = vec![vec![1.0]];
    for _ in 0..steps {
        let k = l1_known_part(&c, &hist, tau)?[0];
        hist.push(vec![k / (m + lambda)]);
    }
    Ok(hist.last().map(|v| v[0]).unwrap_or(1.0))
}

/// Empirical order `log2(e(τ) / e(τ/2))` of the L1 relaxation error at `t = steps·τ`.
pub fn relaxation_order(alpha: f64, lambda: f64, tau: f64, steps: usize) -> Result<(f64, f64, f64)> {
    let t = tau * steps as f64;
    let exact = relaxation_exact(alpha, lambda, t);
    let e1 = (relaxation_l1(alpha, lambda, tau, steps)? - exact).abs();
    let e2 = (relaxation_l1(alpha, lambda, tau / 2.0, 2 * steps)? - exact).abs();
    Ok((e1, e2, (e1 / e2).log2()))
}
