//! Sequential time integration in the fine space and in the multiscale space.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, WempError};
use crate::fem::{interpolate, l2_project, norms, OperatorPair};
use crate::mesh::TwoLevelMesh;
use crate::multiscale::{edge_projection, MultiscaleSpace};
use crate::soe::SoeApproximation;
use crate::sparse::{LinearOperator, ProfileCholesky, SparseMatrix};
use crate::time_stepping::{l1_coefficients, l1_known_part, HistoryState, SoeStepper};

pub type SpatialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type SourceFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Default cap on the memory held by the full L1 history, in bytes.
pub const DEFAULT_L1_MEMORY_BUDGET: usize = 4 << 30;

/// Magic bytes opening a binary state dump.
pub const STATE_MAGIC: &[u8; 8] = b"WEMPSTAT";

#[derive(Clone)]
pub struct ProblemSpec {
    pub alpha: f64,
    pub t_final: f64,
    pub tau_f: f64,
    pub tau_c: f64,
    pub u0: SpatialFn,
    pub f: SourceFn,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("alpha", &self.alpha)
            .field("t_final", &self.t_final)
            .field("tau_f", &self.tau_f)
            .field("tau_c", &self.tau_c)
            .finish_non_exhaustive()
    }
}

fn integer_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let q = num / den;
    let r = q.round();
    if r < 1.0 || (q - r).abs() > 1e-9 * r {
        return Err(WempError::InvalidArgument(format!("{what} must be a positive integer, got {q}")));
    }
    Ok(r as usize)
}

impl ProblemSpec {
    pub fn new(alpha: f64, t_final: f64, tau_f: f64, tau_c: f64, u0: SpatialFn, f: SourceFn) -> Result<Self> {
        let s = Self {
            alpha,
            t_final,
            tau_f,
            tau_c,
            u0,
            f,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(WempError::InvalidArgument(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.t_final > 0.0 && self.tau_f > 0.0 && self.tau_c > 0.0) {
            return Err(WempError::InvalidArgument("T, tau_f and tau_c must be positive".into()));
        }
        integer_ratio(self.t_final, self.tau_c, "T/tau_c")?;
        integer_ratio(self.tau_c, self.tau_f, "tau_c/tau_f")?;
        Ok(())
    }

    pub fn coarse_steps(&self) -> usize {
        (self.t_final / self.tau_c).round() as usize
    }

    pub fn substeps(&self) -> usize {
        (self.tau_c / self.tau_f).round() as usize
    }

    pub fn fine_steps(&self) -> usize {
        self.coarse_steps() * self.substeps()
    }

    /// Time of fine step `n`.
    pub fn fine_time(&self, n: usize) -> f64 {
        n as f64 * self.tau_f
    }
}

/// Mass and stiffness in the active coordinates.
#[derive(Debug, Clone)]
pub enum Operators {
    Sparse { mass: SparseMatrix, stiffness: SparseMatrix },
    Dense { mass: DMatrix<f64>, stiffness: DMatrix<f64> },
}

/// Factorization of `c·M + A`.
#[derive(Debug, Clone)]
pub enum StepFactor {
    Sparse(ProfileCholesky),
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl StepFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            StepFactor::Sparse(c) => c.solve(rhs),
            StepFactor::Dense(c) => c.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec(),
        }
    }
}

impl Operators {
    pub fn dim(&self) -> usize {
        match self {
            Operators::Sparse { mass, .. } => mass.nrows,
            Operators::Dense { mass, .. } => mass.nrows(),
        }
    }

    pub fn mass(&self) -> &dyn LinearOperator {
        match self {
            Operators::Sparse { mass, .. } => mass,
            Operators::Dense { mass, .. } => mass,
        }
    }

    pub fn mass_apply(&self, x: &[f64]) -> Vec<f64> {
        self.mass().apply(x)
    }

    pub fn stiffness_apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Operators::Sparse { stiffness, .. } => stiffness.apply(x),
            Operators::Dense { stiffness, .. } => stiffness.apply(x),
        }
    }

    pub fn factor(&self, mass_coefficient: f64) -> Result<StepFactor> {
        match self {
            Operators::Sparse { mass, stiffness } => Ok(StepFactor::Sparse(ProfileCholesky::factor(
                &mass.linear_combination(mass_coefficient, stiffness, 1.0),
            )?)),
            Operators::Dense { mass, stiffness } => {
                let m = mass * mass_coefficient + stiffness;
                nalgebra::Cholesky::new(m)
                    .map(StepFactor::Dense)
                    .ok_or(WempError::NotPositiveDefinite { row: 0, pivot: f64::NAN })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    Fine,
    Multiscale,
}

#[derive(Debug, Clone)]
enum Reduction {
    /// Fine free dofs of the full node vector.
    Free(Vec<usize>),
    /// `Ψᵀ` and `Ψ`.
    Basis { basis: SparseMatrix, basis_t: SparseMatrix },
}

/// A semi-discrete problem `M u' + A u = F` in fine-free or multiscale coordinates.
#[derive(Clone)]
pub struct DiscreteSystem {
    pub space: SpaceTag,
    pub operators: Operators,
    pub initial: Vec<f64>,
    coords: Vec<[f64; 2]>,
    full_mass: SparseMatrix,
    reduction: Reduction,
    source: SourceFn,
}

impl DiscreteSystem {
    /// Fine P1 system on interior nodes with `u⁰` the L² projection of the initial data.
    pub fn fine(mesh: &TwoLevelMesh, ops: &OperatorPair, spec: &ProblemSpec) -> Result<Self> {
        let u0 = spec.u0.clone();
        let projected = l2_project(ops, &interpolate(mesh, |x, y| u0(x, y)))?;
        Ok(Self {
            space: SpaceTag::Fine,
            operators: Operators::Sparse {
                mass: ops.mass_free.clone(),
                stiffness: ops.stiffness_free.clone(),
            },
            initial: ops.restrict(&projected),
            coords: mesh.fine_node_coords.clone(),
            full_mass: ops.mass.clone(),
            reduction: Reduction::Free(ops.free_dofs.clone()),
            source: spec.f.clone(),
        })
    }

    /// Multiscale system with `u⁰` the M-orthogonal projection of the initial data.
    pub fn multiscale(mesh: &TwoLevelMesh, ops: &OperatorPair, space: &MultiscaleSpace, spec: &ProblemSpec) -> Result<Self> {
        let u0 = spec.u0.clone();
        let initial = edge_projection(space, ops, &interpolate(mesh, |x, y| u0(x, y)))?;
        let basis = space.basis.clone();
        let basis_t = space.basis_transpose().clone();
        Ok(Self {
            space: SpaceTag::Multiscale,
            operators: Operators::Dense {
                mass: space.mass.clone(),
                stiffness: space.stiffness.clone(),
            },
            initial,
            coords: mesh.fine_node_coords.clone(),
            full_mass: ops.mass.clone(),
            reduction: Reduction::Basis { basis, basis_t },
            source: spec.f.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.operators.dim()
    }

    /// Load vector at time `t` (nodal quadrature, then reduced to the active coordinates).
    pub fn load(&self, t: f64) -> Vec<f64> {
        let f = &self.source;
        let vals: Vec<f64> = self.coords.iter().map(|p| f(p[0], p[1], t)).collect();
        self.reduce(&self.full_mass.mul_vec(&vals))
    }

    /// Maps a fine dual vector (full nodes) to the active coordinates.
    pub fn reduce(&self, fine: &[f64]) -> Vec<f64> {
        match &self.reduction {
            Reduction::Free(free) => free.iter().map(|&k| fine[k]).collect(),
            Reduction::Basis { basis_t, .. } => basis_t.mul_vec(fine),
        }
    }

    /// Full fine nodal vector represented by `x`.
    pub fn to_fine(&self, x: &[f64]) -> Vec<f64> {
        match &self.reduction {
            Reduction::Free(free) => {
                let mut out = vec![0.0; self.coords.len()];
                for (&k, &v) in free.iter().zip(x) {
                    out[k] = v;
                }
                out
            }
            Reduction::Basis { basis, .. } => basis.mul_vec(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    /// Store every `store_every`-th state (the initial and final states are always stored).
    pub store_every: usize,
    /// Memory cap for the L1 history in bytes.
    pub l1_memory_budget: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            store_every: 1,
            l1_memory_budget: DEFAULT_L1_MEMORY_BUDGET,
        }
    }
}

impl SolveOptions {
    pub fn coarse_snapshots(spec: &ProblemSpec) -> Self {
        Self {
            store_every: spec.substeps(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub space: SpaceTag,
}

impl Trajectory {
    fn new(space: SpaceTag, u0: Vec<f64>) -> Self {
        Self {
            times: vec![0.0],
            steps: vec![0],
            states: vec![u0],
            space,
        }
    }

    fn record(&mut self, opts: &SolveOptions, n: usize, total: usize, t: f64, v: &[f64]) {
        if n.is_multiple_of(opts.store_every.max(1)) || n == total {
            self.times.push(t);
            self.steps.push(n);
            self.states.push(v.to_vec());
        }
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// State stored at fine step `n`, if any.
    pub fn at_step(&self, n: usize) -> Option<&[f64]> {
        self.steps.binary_search(&n).ok().map(|k| self.states[k].as_slice())
    }
}

fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(WempError::NonFinite { iteration: 0, slab: step })
    }
}

/// Galerkin L1 scheme on the given system; keeps the full history.
pub fn l1_solve(sys: &DiscreteSystem, spec: &ProblemSpec, opts: &SolveOptions) -> Result<Trajectory> {
    spec.validate()?;
    let steps = spec.fine_steps();
    let need = (steps + 1).saturating_mul(sys.dim()).saturating_mul(8);
    if need > opts.l1_memory_budget {
        return Err(WempError::BudgetExceeded(format!(
            "L1 history needs {need} bytes (budget {}); use the SOE solver instead",
            opts.l1_memory_budget
        )));
    }
    let tau = spec.tau_f;
    let coeffs = l1_coefficients(spec.alpha, steps)?;
    let factor = sys.operators.factor(1.0 / (tau.powf(spec.alpha) * coeffs.c_alpha))?;
    let mut history = Vec::with_capacity(steps + 1);
    history.push(sys.initial.clone());
    let mut traj = Trajectory::new(sys.space, sys.initial.clone());
    for n in 0..steps {
        let t_next = spec.fine_time(n + 1);
        let known = l1_known_part(&coeffs, &history, tau)?;
        let mut rhs = sys.operators.mass_apply(&known);
        for (r, f) in rhs.iter_mut().zip(sys.load(t_next)) {
            *r += f;
        }
        let next = factor.solve(&rhs);
        check_finite(&next, n + 1)?;
        traj.record(opts, n + 1, steps, t_next, &next);
        history.push(next);
    }
    Ok(traj)
}

/// One implicit SOE step `(cM + A) v_next = M·known + F(t_next)` followed by the history update.
pub fn soe_step(
    sys: &DiscreteSystem,
    stepper: &SoeStepper,
    factor: &StepFactor,
    state: &mut HistoryState,
    v: &[f64],
    t_next: f64,
) -> Result<Vec<f64>> {
    let known = stepper.known_part(state, v, &sys.initial, t_next)?;
    let mut rhs = sys.operators.mass_apply(&known);
    for (r, f) in rhs.iter_mut().zip(sys.load(t_next)) {
        *r += f;
    }
    let next = factor.solve(&rhs);
    stepper.advance(state, v, &next)?;
    Ok(next)
}

/// SOE scheme with step `τ_f` on the given system.
pub fn soe_solve(sys: &DiscreteSystem, spec: &ProblemSpec, soe: &SoeApproximation, opts: &SolveOptions) -> Result<Trajectory> {
    spec.validate()?;
    if (soe.alpha - spec.alpha).abs() > 0.0 {
        return Err(WempError::InvalidArgument("SOE built for a different alpha".into()));
    }
    let steps = spec.fine_steps();
    let stepper = SoeStepper::new(soe, spec.tau_f)?;
    let factor = sys.operators.factor(stepper.mass_coefficient)?;
    let mut state = HistoryState::zeros(soe.n_exp, sys.dim());
    let mut v = sys.initial.clone();
    let mut traj = Trajectory::new(sys.space, v.clone());
    for n in 0..steps {
        let t_next = spec.fine_time(n + 1);
        let next = soe_step(sys, &stepper, &factor, &mut state, &v, t_next)?;
        check_finite(&next, n + 1)?;
        traj.record(opts, n + 1, steps, t_next, &next);
        v = next;
    }
    Ok(traj)
}

/// Fine-space Galerkin L1 reference solution.
pub fn reference_l1_solve(mesh: &TwoLevelMesh, ops: &OperatorPair, spec: &ProblemSpec, opts: &SolveOptions) -> Result<Trajectory> {
    l1_solve(&DiscreteSystem::fine(mesh, ops, spec)?, spec, opts)
}

pub fn fine_soe_solve(
    mesh: &TwoLevelMesh,
    ops: &OperatorPair,
    spec: &ProblemSpec,
    soe: &SoeApproximation,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    soe_solve(&DiscreteSystem::fine(mesh, ops, spec)?, spec, soe, opts)
}

/// Multiscale SOE scheme; states are multiscale coefficients (see [`DiscreteSystem::to_fine`]).
pub fn multiscale_soe_solve(
    mesh: &TwoLevelMesh,
    ops: &OperatorPair,
    space: &MultiscaleSpace,
    spec: &ProblemSpec,
    soe: &SoeApproximation,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    soe_solve(&DiscreteSystem::multiscale(mesh, ops, space, spec)?, spec, soe, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub t: f64,
    pub rel_l2: f64,
    pub rel_energy: f64,
}

/// Relative L² and energy errors of `approx` against `reference` (both full fine nodal vectors).
pub fn relative_errors(ops: &OperatorPair, reference: &[f64], approx: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = reference.iter().zip(approx).map(|(a, b)| a - b).collect();
    let (dl, de) = norms(ops, &d);
    let (rl, re) = norms(ops, reference);
    let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
    (rel(dl, rl), rel(de, re))
}

/// Errors at every step stored in both trajectories, skipping `t = 0`.
pub fn compare_trajectories(
    ops: &OperatorPair,
    reference: (&Trajectory, &DiscreteSystem),
    approx: (&Trajectory, &DiscreteSystem),
) -> Vec<ErrorRow> {
    let (rt, rs) = reference;
    let (at, asys) = approx;
    rt.steps
        .iter()
        .zip(&rt.states)
        .zip(&rt.times)
        .filter(|((&n, _), _)| n > 0)
        .filter_map(|((&n, r), &t)| {
            at.at_step(n).map(|a| {
                let (rel_l2, rel_energy) = relative_errors(ops, &rs.to_fine(r), &asys.to_fine(a));
                ErrorRow { t, rel_l2, rel_energy }
            })
        })
        .collect()
}

/// CSV with header `t,relL2,relEnergy` (relative errors as fractions).
pub fn error_csv(rows: &[ErrorRow]) -> String {
    let mut out = String::from("t,relL2,relEnergy\n");
    for r in rows {
        let _ = writeln!(out, "{:.10e},{:.10e},{:.10e}", r.t, r.rel_l2, r.rel_energy);
    }
    out
}

/// Binary dump: 8 magic bytes, dof count as little-endian u64, then little-endian f64 values.
pub fn write_state_dump(path: &Path, state: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * state.len());
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&(state.len() as u64).to_le_bytes());
    for v in state {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_state_dump(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != STATE_MAGIC {
        return Err(WempError::Config(format!("{} is not a state dump", path.display())));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 8 * n {
        return Err(WempError::Config(format!("{} is truncated", path.display())));
    }
    Ok(bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
