//! Caputo time integrators: the L1 scheme and the SOE-compressed step with its history recurrence.
//!
//! History moments are stored unshifted, `h_j(t_n) = ∫_0^{t_n} e^{-λ_j (t_n - s)} v(s) ds` with `v`
//! piecewise linear in time. The step-dependent moments `ψ_j = e^{-λ_j τ} h_j` are produced on demand,
//! which lets one state be consumed by integrators with different step sizes.

use statrs::function::gamma::gamma;

use crate::error::{Result, WempError};
use crate::soe::{SoeApproximation, StepCoefficients};
use crate::sparse::{dot, LinearOperator};

#[derive(Debug, Clone, PartialEq)]
pub struct L1Coefficients {
    pub alpha: f64,
    /// `b_j = (j+1)^{1-α} - j^{1-α}` for `j = 0..=n`.
    pub b: Vec<f64>,
    /// `Γ(2-α)`.
    pub c_alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(WempError::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

pub fn l1_coefficients(alpha: f64, n: usize) -> Result<L1Coefficients> {
    check_alpha(alpha)?;
    let e = 1.0 - alpha;
    let b = (0..=n)
        .map(|j| {
            let j = j as f64;
            (j + 1.0).powf(e) - j.powf(e)
        })
        .collect();
    Ok(L1Coefficients {
        alpha,
        b,
        c_alpha: gamma(2.0 - alpha),
    })
}

impl L1Coefficients {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `min_j (b_{j-1} - b_j) / (α(1-α)(n+1)^{-α-1})` over `1 ≤ j ≤ n`; never below 1.
    pub fn lower_bound_ratio(&self) -> f64 {
        let n = self.b.len() - 1;
        let a = self.alpha;
        let floor = a * (1.0 - a) * ((n + 1) as f64).powf(-a - 1.0);
        (1..=n)
            .map(|j| (self.b[j - 1] - self.b[j]) / floor)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Known part of the L1 step: `(v^n - Σ_{j=1}^n b_j (v^{n+1-j} - v^{n-j})) / (τ^α c_α)`.
///
/// `history` holds `v^0..v^n`; the implicit system is `(M/(τ^α c_α) + A) v^{n+1} = M·known + F`.
pub fn l1_known_part(coeffs: &L1Coefficients, history: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    let Some(last) = history.last() else {
        return Err(WempError::InvalidArgument("L1 step needs at least the initial state".into()));
    };
    let n = history.len() - 1;
    if coeffs.b.len() <= n {
        return Err(WempError::DimensionMismatch {
            expected: n + 1,
            got: coeffs.b.len(),
            context: "L1 coefficients shorter than history",
        });
    }
    let dim = last.len();
    let b = &coeffs.b;
    let mut out = vec![0.0; dim];
    // weight of v^k: b_{n-k} - b_{n+1-k} for k ≥ 1, b_n for k = 0
    for (k, v) in history.iter().enumerate() {
        if v.len() != dim {
            return Err(WempError::DimensionMismatch {
                expected: dim,
                got: v.len(),
                context: "L1 history state",
            });
        }
        let w = if k == 0 {
            if n == 0 {
                1.0
            } else {
                b[n]
            }
        } else {
            b[n - k] - b[n + 1 - k]
        };
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    let scale = 1.0 / (tau.powf(coeffs.alpha) * coeffs.c_alpha);
    out.iter_mut().for_each(|o| *o *= scale);
    Ok(out)
}

/// Exponential moments of the solution history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    pub step_index: usize,
    /// Unshifted moments `h_j`, one vector per exponential.
    pub components: Vec<Vec<f64>>,
    /// Step size of the most recent propagation.
    pub step_size: Option<f64>,
    /// Time `t_n` at which the moments are evaluated.
    pub time: f64,
}

impl HistoryState {
    pub fn zeros(n_exp: usize, dim: usize) -> Self {
        Self {
            step_index: 0,
            components: vec![vec![0.0; dim]; n_exp],
            step_size: None,
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, Vec::len)
    }

    /// Step-dependent moments `ψ_j = e^{-λ_j τ} h_j`.
    pub fn psi(&self, soe: &SoeApproximation, tau: f64) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .zip(&soe.rates)
            .map(|(h, &l)| {
                let d = (-l * tau).exp();
                h.iter().map(|x| d * x).collect()
            })
            .collect()
    }

    /// `Σ_j w_j h_j`, summed in index order.
    pub fn weighted_sum(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (h, &w) in self.components.iter().zip(weights) {
            for (o, x) in out.iter_mut().zip(h) {
                *o += w * x;
            }
        }
        out
    }

    /// In-place recurrence `h ← e^{-λτ} h + ĉ1 v_prev + ĉ2 v_next`.
    pub fn advance(&mut self, coeffs: &StepCoefficients, v_prev: &[f64], v_next: &[f64]) -> Result<()> {
        let dim = self.dim();
        if coeffs.decay.len() != self.components.len() {
            return Err(WempError::DimensionMismatch {
                expected: self.components.len(),
                got: coeffs.decay.len(),
                context: "step coefficients vs history terms",
            });
        }
        for v in [v_prev, v_next] {
            if v.len() != dim {
                return Err(WempError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                    context: "history propagation vector",
                });
            }
        }
        for (j, h) in self.components.iter_mut().enumerate() {
            let (d, a, b) = (coeffs.decay[j], coeffs.c1_local[j], coeffs.c2_local[j]);
            for ((x, p), q) in h.iter_mut().zip(v_prev).zip(v_next) {
                *x = d * *x + a * p + b * q;
            }
        }
        self.step_index += 1;
        self.step_size = Some(coeffs.tau);
        self.time += coeffs.tau;
        Ok(())
    }
}

/// Functional form of the history recurrence.
pub fn propagate_history(
    state: &HistoryState,
    soe: &SoeApproximation,
    tau: f64,
    v_prev: &[f64],
    v_next: &[f64],
) -> Result<HistoryState> {
    if !(tau > 0.0) {
        return Err(WempError::InvalidArgument(format!("step must be positive, got {tau}")));
    }
    if state.len() != soe.n_exp {
        return Err(WempError::DimensionMismatch {
            expected: soe.n_exp,
            got: state.len(),
            context: "history terms vs SOE terms",
        });
    }
    let mut next = state.clone();
    next.advance(&soe.step_coefficients(tau), v_prev, v_next)?;
    Ok(next)
}

/// Precomputed scalars for the SOE step with a fixed step size.
#[derive(Debug, Clone)]
pub struct SoeStepper {
    pub alpha: f64,
    pub tau: f64,
    /// `1/(τ^α Γ(2-α))`, the mass coefficient of the implicit system.
    pub mass_coefficient: f64,
    pub coefficients: StepCoefficients,
    /// `α ω_j e^{-λ_j τ} / Γ(1-α)`.
    history_weights: Vec<f64>,
    inv_gamma_1ma: f64,
}

impl SoeStepper {
    pub fn new(soe: &SoeApproximation, tau: f64) -> Result<Self> {
        check_alpha(soe.alpha)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(WempError::InvalidArgument(format!("step must be positive, got {tau}")));
        }
        let alpha = soe.alpha;
        let coefficients = soe.step_coefficients(tau);
        let inv_gamma_1ma = 1.0 / gamma(1.0 - alpha);
        let history_weights = soe
            .weights
            .iter()
            .zip(&coefficients.decay)
            .map(|(w, d)| alpha * w * d * inv_gamma_1ma)
            .collect();
        Ok(Self {
            alpha,
            tau,
            mass_coefficient: 1.0 / (tau.powf(alpha) * gamma(2.0 - alpha)),
            coefficients,
            history_weights,
            inv_gamma_1ma,
        })
    }

    /// `α/(τ^α c_α) v_curr + (v0/t_next^α + α Σ_j ω_j ψ_j) / Γ(1-α)`.
    pub fn known_part(&self, state: &HistoryState, v_curr: &[f64], v0: &[f64], t_next: f64) -> Result<Vec<f64>> {
        let dim = v_curr.len();
        if v0.len() != dim || state.dim() != dim {
            return Err(WempError::DimensionMismatch {
                expected: dim,
                got: if v0.len() != dim { v0.len() } else { state.dim() },
                context: "SOE step operands",
            });
        }
        if state.len() != self.history_weights.len() {
            return Err(WempError::DimensionMismatch {
                expected: self.history_weights.len(),
                got: state.len(),
                context: "history terms vs SOE terms",
            });
        }
        if !(t_next > 0.0) {
            return Err(WempError::InvalidArgument(format!("t_next must be positive, got {t_next}")));
        }
        let gap = t_next - state.time - self.tau;
        if gap.abs() > 1e-9 * t_next.max(self.tau) {
            return Err(WempError::InvalidArgument(format!(
                "history is at t = {} but the step targets t = {t_next} with τ = {}; propagate the history first",
                state.time, self.tau
            )));
        }
        let mut out = state.weighted_sum(&self.history_weights);
        let a = self.alpha * self.mass_coefficient;
        let b = self.inv_gamma_1ma * t_next.powf(-self.alpha);
        for ((o, c), z) in out.iter_mut().zip(v_curr).zip(v0) {
            *o += a * c + b * z;
        }
        Ok(out)
    }

    pub fn advance(&self, state: &mut HistoryState, v_prev: &[f64], v_next: &[f64]) -> Result<()> {
        state.advance(&self.coefficients, v_prev, v_next)
    }
}

/// Free-function form of [`SoeStepper::known_part`].
pub fn soe_caputo_known_part(
    state: &HistoryState,
    soe: &SoeApproximation,
    tau: f64,
    v_curr: &[f64],
    v0: &[f64],
    t_next: f64,
) -> Result<Vec<f64>> {
    SoeStepper::new(soe, tau)?.known_part(state, v_curr, v0, t_next)
}

/// History contribution `τ_c^α ‖Σ_j ω_j ψ_j‖_M` with `ψ_j` taken at step `τ_c`.
pub fn history_norm(state: &HistoryState, soe: &SoeApproximation, tau_c: f64, mass: &dyn LinearOperator) -> f64 {
    let w: Vec<f64> = soe
        .weights
        .iter()
        .zip(&soe.rates)
        .map(|(w, l)| w * (-l * tau_c).exp())
        .collect();
    let s = state.weighted_sum(&w);
    tau_c.powf(soe.alpha) * dot(&s, &mass.apply(&s)).max(0.0).sqrt()
}
