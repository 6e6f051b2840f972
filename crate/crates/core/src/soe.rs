//! Sum-of-exponentials compression of the kernel `t^{-(1+α)}`.
//!
//! The kernel is written as a Gamma-type integral over the real line,
//! `t^{-(1+α)} = Γ(α+1)^{-1} ∫ F(s; t) ds`, and the integral is discretized by
//! a truncated sinc (trapezoid) rule with `2N+1` nodes `s_m = m·π/√N`. After
//! rescaling `t ↦ (α+1) t / τ_f` every node becomes one exponential term
//! `ω_j e^{-λ_j t}`, accurate uniformly for `t ≥ τ_f`.

use std::fmt::Write as _;

use statrs::function::gamma::gamma;

use crate::error::{Result, WempError};

/// Default cap on the number of exponential terms.
pub const DEFAULT_MAX_TERMS: usize = 20_000;

/// `ln(1 + e^s)` without overflow.
pub fn softplus(s: f64) -> f64 {
    if s > 30.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Integrand `F(s; t) = e^{-t ln(1+e^s)} (ln(1+e^s))^α / (1+e^{-s})`.
pub fn weight_function(s: f64, t: f64, alpha: f64) -> f64 {
    let l = softplus(s);
    if l == 0.0 {
        return 0.0;
    }
    (-t * l + alpha * l.ln()).exp() * logistic(s)
}

/// Truncation bound `τ_f^{-1-α} (2/(1-e^{-π√N}) + 2) e^{-π√N}` for `2N+1` terms.
/// `half_terms` may be fractional (the bound is a smooth function of N).
pub fn truncation_bound(alpha: f64, tau_f: f64, half_terms: f64) -> f64 {
    let decay = (-std::f64::consts::PI * half_terms.sqrt()).exp();
    tau_f.powf(-1.0 - alpha) * (2.0 / (1.0 - decay) + 2.0) * decay
}

/// Bound reported for a term count `N_exp`, i.e. with `N = (N_exp - 1)/2`.
pub fn realized_bound(alpha: f64, tau_f: f64, n_exp: usize) -> f64 {
    truncation_bound(alpha, tau_f, (n_exp as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone)]
pub struct SoeApproximation {
    pub alpha: f64,
    pub tau_f: f64,
    pub epsilon: f64,
    /// `N`; the sum has `2N + 1` terms.
    pub half_terms: usize,
    pub n_exp: usize,
    pub node_spacing: f64,
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
    pub gamma: f64,
}

impl SoeApproximation {
    /// Smallest `N` whose truncation bound meets `epsilon`.
    pub fn build(alpha: f64, tau_f: f64, epsilon: f64) -> Result<Self> {
        Self::build_with_cap(alpha, tau_f, epsilon, DEFAULT_MAX_TERMS)
    }

    pub fn build_with_cap(alpha: f64, tau_f: f64, epsilon: f64, max_terms: usize) -> Result<Self> {
        check_params(alpha, tau_f)?;
        if !(epsilon > 0.0) {
            return Err(WempError::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let max_half = max_terms.saturating_sub(1) / 2;
        let n = (1..=max_half)
            .find(|&n| truncation_bound(alpha, tau_f, n as f64) <= epsilon)
            .ok_or_else(|| {
                WempError::BudgetExceeded(format!(
                    "epsilon {epsilon:e} needs more than {max_terms} exponential terms"
                ))
            })?;
        let mut soe = Self::with_half_terms(alpha, tau_f, n)?;
        soe.epsilon = epsilon;
        Ok(soe)
    }

    /// Approximation with `2N + 1` terms; `epsilon` is set to the truncation bound.
    pub fn with_half_terms(alpha: f64, tau_f: f64, n: usize) -> Result<Self> {
        check_params(alpha, tau_f)?;
        if n == 0 {
            return Err(WempError::InvalidArgument("N must be >= 1".into()));
        }
        let h = std::f64::consts::PI / (n as f64).sqrt();
        let scale = tau_f.powf(-1.0 - alpha) * (alpha + 1.0).powf(1.0 + alpha) * h / gamma(alpha + 1.0);
        let mut weights = Vec::with_capacity(2 * n + 1);
        let mut rates = Vec::with_capacity(2 * n + 1);
        for m in -(n as i64)..=(n as i64) {
            let s = m as f64 * h;
            let l = softplus(s);
            weights.push(scale * l.powf(alpha) * logistic(s));
            rates.push((alpha + 1.0) * l / tau_f);
        }
        let gamma_min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            alpha,
            tau_f,
            epsilon: truncation_bound(alpha, tau_f, n as f64),
            half_terms: n,
            n_exp: 2 * n + 1,
            node_spacing: h,
            weights,
            rates,
            gamma: gamma_min,
        })
    }

    pub fn len(&self) -> usize {
        self.n_exp
    }

    pub fn is_empty(&self) -> bool {
        self.n_exp == 0
    }

    /// `Σ_j ω_j e^{-λ_j t}`.
    pub fn evaluate(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, l)| w * (-l * t).exp())
            .sum()
    }

    /// Same sum evaluated through the sinc quadrature of [`weight_function`].
    pub fn evaluate_by_quadrature(&self, t: f64) -> f64 {
        let a = self.alpha;
        let sigma = (a + 1.0) * t / self.tau_f;
        let n = self.half_terms as i64;
        let sum: f64 = (-n..=n)
            .map(|m| weight_function(m as f64 * self.node_spacing, sigma, a))
            .sum();
        ((a + 1.0) / self.tau_f).powf(1.0 + a) * self.node_spacing / gamma(a + 1.0) * sum
    }

    /// `|t^{-(1+α)} - Σ ω_j e^{-λ_j t}|`.
    pub fn residual(&self, t: f64) -> f64 {
        (t.powf(-1.0 - self.alpha) - self.evaluate(t)).abs()
    }

    /// Maximum residual over `points` log-spaced samples of `[τ_f, t_max]`.
    pub fn max_residual(&self, t_max: f64, points: usize) -> f64 {
        use rayon::prelude::*;
        let lo = self.tau_f.ln();
        let hi = t_max.ln();
        let last = points.max(2) - 1;
        (0..=last)
            .into_par_iter()
            .map(|k| self.residual((lo + (hi - lo) * k as f64 / last as f64).exp()))
            .reduce(|| 0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,omega,lambda\n");
        for (j, (w, l)) in self.weights.iter().zip(&self.rates).enumerate() {
            let _ = writeln!(out, "{},{:.17e},{:.17e}", j + 1, w, l);
        }
        out
    }

    pub fn step_coefficients(&self, tau: f64) -> StepCoefficients {
        StepCoefficients::new(&self.rates, tau)
    }

    /// Right-hand side of the bound on `|Σ_j ω_j c_{i,j}^τ|`.
    pub fn coefficient_sum_bound(&self, tau: f64) -> f64 {
        (-self.gamma * tau).exp() * (tau.powf(-self.alpha) / (1.0 - self.alpha) + self.epsilon * tau / 2.0)
    }
}

fn check_params(alpha: f64, tau_f: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(WempError::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(tau_f > 0.0 && tau_f < 1.0) {
        return Err(WempError::InvalidArgument(format!("tau_f must lie in (0,1), got {tau_f}")));
    }
    Ok(())
}

/// Per-step quadrature weights of the exponential history recurrence.
///
/// `c1`, `c2` integrate `e^{-λ(t_{n+1}-s)}` against the two linear hats of
/// `[t_{n-1}, t_n]`; `c1_local`, `c2_local` are the same integrals without the
/// trailing decay factor `e^{-λτ}` (weights for `[t_n, t_{n+1}]` seen from `t_{n+1}`).
#[derive(Debug, Clone)]
pub struct StepCoefficients {
    pub tau: f64,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub decay: Vec<f64>,
    pub c1_local: Vec<f64>,
    pub c2_local: Vec<f64>,
}

impl StepCoefficients {
    pub fn new(rates: &[f64], tau: f64) -> Self {
        assert!(tau > 0.0, "step size must be positive");
        let n = rates.len();
        let mut out = Self {
            tau,
            c1: Vec::with_capacity(n),
            c2: Vec::with_capacity(n),
            decay: Vec::with_capacity(n),
            c1_local: Vec::with_capacity(n),
            c2_local: Vec::with_capacity(n),
        };
        for &lambda in rates {
            let (a, b) = local_weights(lambda, tau);
            let d = (-lambda * tau).exp();
            out.decay.push(d);
            out.c1_local.push(a);
            out.c2_local.push(b);
            out.c1.push(d * a);
            out.c2.push(d * b);
        }
        out
    }
}

/// `(∫_0^τ e^{-λr} r/τ dr, ∫_0^τ e^{-λr} (1 - r/τ) dr)`.
pub fn local_weights(lambda: f64, tau: f64) -> (f64, f64) {
    let x = lambda * tau;
    if x < 1.0 {
        // Σ (-x)^k/k! · 1/(k+2) and Σ (-x)^k/k! · 1/((k+1)(k+2))
        let mut term = 1.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for k in 0..40 {
            let kf = k as f64;
            let t1 = term / (kf + 2.0);
            let t2 = term / ((kf + 1.0) * (kf + 2.0));
            s1 += t1;
            s2 += t2;
            if t1.abs() < 1e-18 * s1.abs() {
                break;
            }
            term *= -x / (kf + 1.0);
        }
        (tau * s1, tau * s2)
    } else {
        let em1 = (-x).exp_m1();
        let e = (-x).exp();
        ((-em1 - x * e) / (lambda * x), (x + em1) / (lambda * x))
    }
}

/// Outcome of the stability requirement on the SOE tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonCheck {
    pub stability_bound: f64,
    pub horizon_bound: f64,
    pub threshold: f64,
    pub passes: bool,
    /// `threshold - epsilon`; negative when the requirement is violated.
    pub margin: f64,
}

/// Checks `ε ≤ min{α M_f^α η / T^{1+α}, 1 / (2 T^{1+α})}`.
pub fn validate_epsilon(epsilon: f64, alpha: f64, t_final: f64, fine_steps: usize, eta: f64) -> EpsilonCheck {
    let tt = t_final.powf(1.0 + alpha);
    let stability_bound = alpha * (fine_steps as f64).powf(alpha) * eta / tt;
    let horizon_bound = 1.0 / (2.0 * tt);
    let threshold = stability_bound.min(horizon_bound);
    EpsilonCheck {
        stability_bound,
        horizon_bound,
        threshold,
        passes: epsilon <= threshold,
        margin: threshold - epsilon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_function_at_origin() {
        let v = weight_function(0.0, 1.0, 1.0);
        let ln2 = std::f64::consts::LN_2;
        assert!((v - ln2 / 4.0).abs() < 1e-15);
        assert!((v - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn weight_function_limits() {
        assert!(weight_function(-50.0, 1.0, 0.5) < 1e-20);
        assert!(weight_function(-800.0, 2.0, 0.5) == 0.0);
        assert!(weight_function(800.0, 2.0, 0.5) == 0.0);
        assert!(weight_function(1e6, 0.5, 0.3).is_finite());
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!(softplus(-745.0) > 0.0);
    }

    #[test]
    fn build_picks_smallest_n() {
        let soe = SoeApproximation::build(0.5, 1e-3, 1e-2).unwrap();
        let n = soe.half_terms as f64;
        assert!(truncation_bound(0.5, 1e-3, n) <= 1e-2);
        assert!(truncation_bound(0.5, 1e-3, n - 1.0) > 1e-2);
        assert_eq!(soe.n_exp, 2 * soe.half_terms + 1);
        assert_eq!(soe.weights.len(), soe.n_exp);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(SoeApproximation::build(1.0, 1e-3, 1.0).is_err());
        assert!(SoeApproximation::build(0.5, 1.5, 1.0).is_err());
        assert!(SoeApproximation::build(0.5, 1e-3, 0.0).is_err());
        assert!(matches!(
            SoeApproximation::build_with_cap(0.5, 1e-3, 1e-30, 41),
            Err(WempError::BudgetExceeded(_))
        ));
    }

    #[test]
    fn rates_and_weights_positive_and_ordered() {
        let soe = SoeApproximation::build(0.9, 1e-4, 0.5).unwrap();
        assert!(soe.weights.iter().all(|&w| w > 0.0 && w.is_finite()));
        assert!(soe.rates.iter().all(|&l| l > 0.0 && l.is_finite()));
        assert!(soe.rates.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(soe.gamma, soe.rates[0]);
        assert!(soe.n_exp % 2 == 1);
    }

    #[test]
    fn step_coefficient_small_argument_limit() {
        let (a, b) = local_weights(1e-9, 1.0);
        assert!((a - 0.5).abs() < 1e-9);
        assert!((b - 0.5).abs() < 1e-9);
        let sc = StepCoefficients::new(&[1e-10], 0.2);
        assert!((sc.c1[0] - 0.1).abs() < 1e-10);
        assert!((sc.c2[0] - 0.1).abs() < 1e-10);
    }

    #[test]
    fn step_coefficient_closed_form_identity_at_three() {
        let lambda = 6.0;
        let tau = 0.5;
        let sc = StepCoefficients::new(&[lambda], tau);
        let x: f64 = 3.0;
        let expected = (-x).exp() * (1.0 - (-x).exp()) / lambda;
        assert!(((sc.c1[0] + sc.c2[0]) - expected).abs() < 1e-15 * expected);
        // printed closed forms
        let e = (-x).exp();
        let c1 = e / (lambda * lambda * tau) * (1.0 - e - x * e);
        let c2 = e / (lambda * lambda * tau) * (-1.0 + e + x);
        assert!((sc.c1[0] - c1).abs() < 1e-14 * c1);
        assert!((sc.c2[0] - c2).abs() < 1e-14 * c2);
    }

    #[test]
    fn series_and_closed_form_meet_smoothly() {
        let lambda = 1.0;
        let below = local_weights(lambda, 1.0 - 1e-12);
        let above = local_weights(lambda, 1.0 + 1e-12);
        assert!((below.0 - above.0).abs() < 1e-11);
        assert!((below.1 - above.1).abs() < 1e-11);
    }

    #[test]
    fn epsilon_validation() {
        let c = validate_epsilon(0.1, 0.5, 1.0, 10_000, 0.5);
        assert_eq!(c.horizon_bound, 0.5);
        assert_eq!(c.threshold, 0.5);
        assert!(c.passes);
        let c10 = validate_epsilon(0.1, 0.5, 10.0, 10_000, 0.5);
        assert!((c10.horizon_bound - 0.015811388300841896).abs() < 1e-12);
        assert!(!c10.passes);
        assert!(c10.margin < 0.0);
        assert!(validate_epsilon(0.0, 0.3, 7.0, 10, 0.1).passes);
    }

    #[test]
    fn csv_has_one_row_per_term() {
        let soe = SoeApproximation::with_half_terms(0.5, 1e-3, 3).unwrap();
        let csv = soe.to_csv();
        assert_eq!(csv.lines().count(), 1 + 7);
        assert!(csv.starts_with("j,omega,lambda"));
    }
}
