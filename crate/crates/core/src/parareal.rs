//! Parareal iteration in the multiscale space with SOE history (WEMP).
//!
//! The coarse propagator takes one implicit step of size `τ_c`; the fine propagator takes `τ_c/τ_f`
//! steps of size `τ_f`. Both consume a history state and return the propagated state. Per iteration
//! the jumps `S = F − G` are evaluated on all slabs in parallel from the previous iterate, then the
//! corrected solutions are swept sequentially while the history is rebuilt with the coarse recurrence.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Result, WempError};
use crate::fem::OperatorPair;
use crate::soe::SoeApproximation;
use crate::solvers::{relative_errors, soe_step, DiscreteSystem, ProblemSpec, StepFactor};
use crate::sparse::norm2;
use crate::time_stepping::{HistoryState, SoeStepper};

pub const DEFAULT_DELTA: f64 = 1e-8;
pub const DEFAULT_K_MAX: usize = 10;

/// Operators and cached factorizations shared by all slabs.
pub struct PropagatorContext<'a> {
    pub sys: &'a DiscreteSystem,
    pub spec: &'a ProblemSpec,
    pub soe: &'a SoeApproximation,
    pub coarse: SoeStepper,
    pub fine: SoeStepper,
    coarse_factor: StepFactor,
    fine_factor: StepFactor,
    pub substeps: usize,
    pub slabs: usize,
}

impl<'a> PropagatorContext<'a> {
    pub fn new(sys: &'a DiscreteSystem, spec: &'a ProblemSpec, soe: &'a SoeApproximation) -> Result<Self> {
        spec.validate()?;
        if soe.alpha != spec.alpha {
            return Err(WempError::InvalidArgument("SOE built for a different alpha".into()));
        }
        let coarse = SoeStepper::new(soe, spec.tau_c)?;
        let fine = SoeStepper::new(soe, spec.tau_f)?;
        let coarse_factor = sys.operators.factor(coarse.mass_coefficient)?;
        let fine_factor = sys.operators.factor(fine.mass_coefficient)?;
        let ctx = Self {
            sys,
            spec,
            soe,
            coarse,
            fine,
            coarse_factor,
            fine_factor,
            substeps: spec.substeps(),
            slabs: spec.coarse_steps(),
        };
        let (lhs, rhs) = ctx.contraction_condition();
        if lhs < rhs {
            log::info!("contraction condition holds: {lhs:.3e} < {rhs:.3e}");
        } else {
            log::info!("contraction condition not met: {lhs:.3e} >= {rhs:.3e}");
        }
        Ok(ctx)
    }

    /// `(e^{-τ_c γ}((1-α)^{-1} + ε τ_c^{1+α}/2), α(θ-α)/(1+α))` with `θ = (1+α)/2`.
    pub fn contraction_condition(&self) -> (f64, f64) {
        let a = self.spec.alpha;
        let tc = self.spec.tau_c;
        let lhs = (-tc * self.soe.gamma).exp() * (1.0 / (1.0 - a) + self.soe.epsilon * tc.powf(1.0 + a) / 2.0);
        let theta = 0.5 * (1.0 + a);
        (lhs, a / (1.0 + a) * (theta - a))
    }

    /// Time of coarse point `T^n`, computed on the fine grid so slab ends coincide exactly.
    pub fn coarse_time(&self, n: usize) -> f64 {
        self.spec.fine_time(n * self.substeps)
    }

    fn check_slab(&self, n: usize, u: &[f64], phi: &HistoryState) -> Result<()> {
        if n >= self.slabs {
            return Err(WempError::InvalidArgument(format!("slab {n} out of range ({} slabs)", self.slabs)));
        }
        if u.len() != self.sys.dim() || phi.dim() != self.sys.dim() {
            return Err(WempError::DimensionMismatch {
                expected: self.sys.dim(),
                got: if u.len() != self.sys.dim() { u.len() } else { phi.dim() },
                context: "propagator input",
            });
        }
        Ok(())
    }

    /// One `τ_c` step from `T^n`; returns the solution at `T^{n+1}` and the history propagated once.
    pub fn coarse_propagate(&self, n: usize, u: &[f64], phi: &HistoryState) -> Result<(Vec<f64>, HistoryState)> {
        self.check_slab(n, u, phi)?;
        let mut state = phi.clone();
        let next = soe_step(self.sys, &self.coarse, &self.coarse_factor, &mut state, u, self.coarse_time(n + 1))?;
        Ok((next, state))
    }

    /// `τ_c/τ_f` steps of size `τ_f` across slab `n`, with the global clock and global `U⁰`.
    pub fn fine_propagate(&self, n: usize, u: &[f64], phi: &HistoryState) -> Result<(Vec<f64>, HistoryState)> {
        self.check_slab(n, u, phi)?;
        let mut state = phi.clone();
        let mut v = u.to_vec();
        for j in 0..self.substeps {
            let t = self.spec.fine_time(n * self.substeps + j + 1);
            v = soe_step(self.sys, &self.fine, &self.fine_factor, &mut state, &v, t)?;
        }
        Ok((v, state))
    }

    /// `F(T^n, U; Φ)₁ − G(T^n, U; Φ)₁`.
    pub fn jump(&self, n: usize, u: &[f64], phi: &HistoryState) -> Result<Vec<f64>> {
        let (f, _) = self.fine_propagate(n, u, phi)?;
        let (g, _) = self.coarse_propagate(n, u, phi)?;
        Ok(f.iter().zip(&g).map(|(a, b)| a - b).collect())
    }

    /// Coarse-step history recurrence `H(Φ; τ_c, U^n, U^{n+1})`.
    pub fn coarse_history(&self, phi: &HistoryState, u_prev: &[f64], u_next: &[f64]) -> Result<HistoryState> {
        let mut s = phi.clone();
        self.coarse.advance(&mut s, u_prev, u_next)?;
        Ok(s)
    }

    pub fn initial_history(&self) -> HistoryState {
        HistoryState::zeros(self.soe.n_exp, self.sys.dim())
    }
}

/// Solutions and histories at the coarse points for one iteration.
#[derive(Debug, Clone)]
pub struct PararealIterate {
    pub k: usize,
    pub u: Vec<Vec<f64>>,
    pub phi: Vec<HistoryState>,
    /// `S_{k-1}^n` for `n = 0..M_c` (empty for the initial coarse sweep).
    pub jumps: Vec<Vec<f64>>,
    /// Mean Euclidean change against the previous iterate (NaN for `k = 0`).
    pub err: f64,
    pub parallel_time: Duration,
    pub sequential_time: Duration,
}

#[derive(Debug, Clone)]
pub struct PararealState {
    pub iterates: Vec<PararealIterate>,
    pub converged: bool,
    pub workers: usize,
    pub total_time: Duration,
}

impl PararealState {
    pub fn last(&self) -> &PararealIterate {
        self.iterates.last().expect("at least the coarse sweep")
    }
}

fn check_finite(v: &[f64], k: usize, n: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(WempError::NonFinite { iteration: k, slab: n })
    }
}

/// Sequential coarse sweep providing the initial iterate.
pub fn coarse_sweep(ctx: &PropagatorContext) -> Result<PararealIterate> {
    let start = Instant::now();
    let mut u = vec![ctx.sys.initial.clone()];
    let mut phi = vec![ctx.initial_history()];
    for n in 0..ctx.slabs {
        let (next, _) = ctx.coarse_propagate(n, &u[n], &phi[n])?;
        check_finite(&next, 0, n + 1)?;
        phi.push(ctx.coarse_history(&phi[n], &u[n], &next)?);
        u.push(next);
    }
    Ok(PararealIterate {
        k: 0,
        u,
        phi,
        jumps: Vec::new(),
        err: f64::NAN,
        parallel_time: Duration::ZERO,
        sequential_time: start.elapsed(),
    })
}

/// One parareal iteration from `prev`; slab work runs on `pool`.
pub fn wemp_iteration(ctx: &PropagatorContext, prev: &PararealIterate, pool: &rayon::ThreadPool) -> Result<PararealIterate> {
    let k = prev.k + 1;
    let t0 = Instant::now();
    let jumps: Vec<Vec<f64>> = pool.install(|| {
        (0..ctx.slabs)
            .into_par_iter()
            .map(|n| ctx.jump(n, &prev.u[n], &prev.phi[n]))
            .collect::<Result<_>>()
    })?;
    let parallel_time = t0.elapsed();

    let t1 = Instant::now();
    let mut u = vec![ctx.sys.initial.clone()];
    let mut phi = vec![ctx.initial_history()];
    for n in 0..ctx.slabs {
        let (g, _) = ctx.coarse_propagate(n, &u[n], &phi[n])?;
        let next: Vec<f64> = jumps[n].iter().zip(&g).map(|(s, g)| s + g).collect();
        check_finite(&next, k, n + 1)?;
        phi.push(ctx.coarse_history(&phi[n], &u[n], &next)?);
        u.push(next);
    }
    let err = (1..=ctx.slabs)
        .map(|n| {
            let d: Vec<f64> = u[n].iter().zip(&prev.u[n]).map(|(a, b)| a - b).collect();
            norm2(&d)
        })
        .sum::<f64>()
        / ctx.slabs as f64;
    Ok(PararealIterate {
        k,
        u,
        phi,
        jumps,
        err,
        parallel_time,
        sequential_time: t1.elapsed(),
    })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| WempError::InvalidArgument(format!("cannot build a pool of {workers} workers: {e}")))
}

/// Runs iterations until `err ≤ delta` or `k = k_max`; returns every iterate including `k = 0`.
pub fn wemp_solve(ctx: &PropagatorContext, delta: f64, k_max: usize, workers: usize) -> Result<PararealState> {
    let start = Instant::now();
    let pool = thread_pool(workers)?;
    let mut iterates = vec![coarse_sweep(ctx)?];
    let mut converged = false;
    for _ in 0..k_max {
        let next = wemp_iteration(ctx, iterates.last().unwrap(), &pool)?;
        log::info!(
            "iteration {}: err {:.3e}, parallel {:?}, sequential {:?}",
            next.k,
            next.err,
            next.parallel_time,
            next.sequential_time
        );
        let done = next.err <= delta;
        iterates.push(next);
        if done {
            converged = true;
            break;
        }
    }
    Ok(PararealState {
        iterates,
        converged,
        workers: workers.max(1),
        total_time: start.elapsed(),
    })
}

/// Relative errors of every iterate at every coarse point against fine nodal reference states.
///
/// Rows are `(k, n, relL2, relEnergy, err)`; `reference[n]` is the fine solution at `T^n`.
pub fn iteration_errors(
    state: &PararealState,
    sys: &DiscreteSystem,
    ops: &OperatorPair,
    reference: &[Vec<f64>],
) -> Vec<(usize, usize, f64, f64, f64)> {
    let mut rows = Vec::new();
    for it in &state.iterates {
        for (n, u) in it.u.iter().enumerate().skip(1) {
            if let Some(r) = reference.get(n) {
                let (l2, en) = relative_errors(ops, r, &sys.to_fine(u));
                rows.push((it.k, n, l2, en, it.err));
            }
        }
    }
    rows
}

pub fn iteration_csv(rows: &[(usize, usize, f64, f64, f64)]) -> String {
    let mut out = String::from("k,n,relL2,relEnergy,err\n");
    for (k, n, l2, en, err) in rows {
        let _ = writeln!(out, "{k},{n},{l2:.10e},{en:.10e},{err:.10e}");
    }
    out
}

pub fn timing_log(state: &PararealState) -> String {
    let mut out = format!("workers {}\ntotal_s {:.6}\n", state.workers, state.total_time.as_secs_f64());
    for it in &state.iterates {
        let _ = writeln!(
            out,
            "k {} parallel_s {:.6} sequential_s {:.6}",
            it.k,
            it.parallel_time.as_secs_f64(),
            it.sequential_time.as_secs_f64()
        );
    }
    out
}
