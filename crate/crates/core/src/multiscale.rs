//! Wavelet-based edge multiscale space.
//!
//! Every interior coarse vertex `O_i` contributes basis functions `χ_i · v`, where `χ_i` is a
//! κ-harmonic partition of unity and `v` ranges over κ-harmonic lifts of Haar functions on the four
//! sides of `∂ω_i` plus one Neumann corrector driven by the weighted coefficient `κ̃`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Result, WempError};
use crate::fem::{assemble_patch, cell_triangles, p1_gradients, CoefficientField, OperatorPair};
use crate::mesh::{CoarseNeighborhood, EdgeTrace, NodeRect, TwoLevelMesh};
use crate::sparse::{dot, ProfileCholesky, SparseMatrix};

/// Relative tolerance of the Gram-based rank filter.
pub const RANK_DROP_TOL: f64 = 1e-10;

/// Values of a function on the fine nodes of a node rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalField {
    pub rect: NodeRect,
    pub values: Vec<f64>,
}

impl LocalField {
    /// Value at grid position `(i, j)`, zero outside the rectangle.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.rect.contains(i, j) {
            self.values[self.rect.local(i, j)]
        } else {
            0.0
        }
    }

    pub fn to_global(&self, mesh: &TwoLevelMesh) -> Vec<f64> {
        let mut out = vec![0.0; mesh.node_count()];
        for ((i, j), v) in self.rect.positions().zip(&self.values) {
            out[mesh.node(i, j)] = *v;
        }
        out
    }
}

/// Local stiffness, mass and interior Dirichlet factorization on a node rectangle.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    pub rect: NodeRect,
    pub h: f64,
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    interior: Vec<usize>,
    dirichlet: ProfileCholesky,
}

impl LocalProblem {
    pub fn new(mesh: &TwoLevelMesh, kappa: &CoefficientField, rect: NodeRect) -> Result<Self> {
        kappa.check_mesh(mesh)?;
        let (mass, stiffness) = assemble_patch(mesh, kappa, &rect);
        let interior: Vec<usize> = rect
            .positions()
            .enumerate()
            .filter(|(_, (i, j))| !rect.on_boundary(*i, *j))
            .map(|(k, _)| k)
            .collect();
        let dirichlet = ProfileCholesky::factor(&stiffness.principal_submatrix(&interior))?;
        Ok(Self {
            rect,
            h: mesh.fine_h(),
            mass,
            stiffness,
            interior,
            dirichlet,
        })
    }

    /// Discrete κ-harmonic extension of the boundary entries of `boundary_values`.
    pub fn harmonic_extension(&self, boundary_values: &[f64]) -> Vec<f64> {
        let mut g = boundary_values.to_vec();
        for &k in &self.interior {
            g[k] = 0.0;
        }
        let ag = self.stiffness.mul_vec(&g);
        let mut rhs: Vec<f64> = self.interior.iter().map(|&k| -ag[k]).collect();
        self.dirichlet.solve_in_place(&mut rhs);
        for (&k, v) in self.interior.iter().zip(rhs) {
            g[k] = v;
        }
        g
    }
}

/// κ-harmonic partition of unity, one local field per coarse vertex on its neighborhood rectangle.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub chi: Vec<LocalField>,
}

impl PartitionOfUnity {
    /// `Σ_i χ_i` at every fine node.
    pub fn sum(&self, mesh: &TwoLevelMesh) -> Vec<f64> {
        let mut out = vec![0.0; mesh.node_count()];
        for f in &self.chi {
            for ((i, j), v) in f.rect.positions().zip(&f.values) {
                out[mesh.node(i, j)] += v;
            }
        }
        out
    }
}

fn neighborhood_rect(mesh: &TwoLevelMesh, vertex: usize) -> NodeRect {
    let (vi, vj) = mesh.coarse_vertices[vertex].index;
    let nc = mesh.coarse_divisions;
    let r = mesh.refinements_per_coarse;
    NodeRect {
        x0: vi.saturating_sub(1) * r,
        x1: (vi.min(nc - 1) + 1) * r,
        y0: vj.saturating_sub(1) * r,
        y1: (vj.min(nc - 1) + 1) * r,
    }
}

pub fn build_partition_of_unity(mesh: &TwoLevelMesh, kappa: &CoefficientField) -> Result<PartitionOfUnity> {
    kappa.check_mesh(mesh)?;
    let nc = mesh.coarse_divisions;
    let r = mesh.refinements_per_coarse as f64;
    // corners counterclockwise from (x0, y0)
    let per_cell: Vec<[Vec<f64>; 4]> = (0..nc * nc)
        .into_par_iter()
        .map(|c| -> Result<[Vec<f64>; 4]> {
            let rect = mesh.coarse_cell_rect(c % nc, c / nc);
            let local = LocalProblem::new(mesh, kappa, rect)?;
            let solve = |corner: usize| {
                let data: Vec<f64> = rect
                    .positions()
                    .map(|(i, j)| {
                        let s = (i - rect.x0) as f64 / r;
                        let t = (j - rect.y0) as f64 / r;
                        match corner {
                            0 => (1.0 - s) * (1.0 - t),
                            1 => s * (1.0 - t),
                            2 => s * t,
                            _ => (1.0 - s) * t,
                        }
                    })
                    .collect();
                local.harmonic_extension(&data)
            };
            Ok([solve(0), solve(1), solve(2), solve(3)])
        })
        .collect::<Result<_>>()?;

    let chi = (0..mesh.coarse_vertices.len())
        .map(|v| {
            let rect = neighborhood_rect(mesh, v);
            let (vi, vj) = mesh.coarse_vertices[v].index;
            let mut values = vec![0.0; rect.node_count()];
            for cj in vj.saturating_sub(1)..=vj.min(nc - 1) {
                for ci in vi.saturating_sub(1)..=vi.min(nc - 1) {
                    let corner = match (vi == ci, vj == cj) {
                        (true, true) => 0,
                        (false, true) => 1,
                        (false, false) => 2,
                        (true, false) => 3,
                    };
                    let cell_rect = mesh.coarse_cell_rect(ci, cj);
                    for ((i, j), val) in cell_rect.positions().zip(&per_cell[cj * nc + ci][corner]) {
                        values[rect.local(i, j)] = *val;
                    }
                }
            }
            LocalField { rect, values }
        })
        .collect();
    Ok(PartitionOfUnity { chi })
}

/// Orthonormal Haar functions on an edge, as values per fine segment.
///
/// Returns the normalized constant followed by Haar wavelets of generations `0..level`, so `2^level`
/// functions in total. Orthonormality holds in `L²(edge)` with segment length `h`.
pub fn edge_wavelets(level: u32, edge: &EdgeTrace, h: f64) -> Result<Vec<Vec<f64>>> {
    let segments = edge.segments();
    let count = 1usize << level;
    if segments < count || !segments.is_multiple_of(count) {
        return Err(WempError::InvalidArgument(format!(
            "edge with {segments} segments cannot carry {count} Haar functions (needs a multiple of {count})"
        )));
    }
    let length = segments as f64 * h;
    let base = 1.0 / length.sqrt();
    let mut out = vec![vec![base; segments]];
    for g in 0..level {
        let pieces = 1usize << g;
        let width = segments / pieces;
        let amp = base * (pieces as f64).sqrt();
        for p in 0..pieces {
            let mut f = vec![0.0; segments];
            for (s, v) in f.iter_mut().enumerate().skip(p * width).take(width) {
                *v = if s < p * width + width / 2 { amp } else { -amp };
            }
            out.push(f);
        }
    }
    Ok(out)
}

/// Nodal values on the neighborhood rectangle of a piecewise constant function on side `side`.
///
/// Each boundary node takes the mean of its two adjacent segments along `∂ω`; the function is zero
/// on the other sides.
pub fn edge_trace_nodal(nb: &CoarseNeighborhood, side: usize, segment_values: &[f64], mesh: &TwoLevelMesh) -> Vec<f64> {
    let rect = nb.rect;
    let mut out = vec![0.0; rect.node_count()];
    let nodes = &nb.boundary_edges[side].nodes;
    let last = nodes.len() - 1;
    for (k, &node) in nodes.iter().enumerate() {
        let before = if k > 0 { segment_values[k - 1] } else { 0.0 };
        let after = if k < last { segment_values[k] } else { 0.0 };
        let (i, j) = mesh.node_position(node);
        out[rect.local(i, j)] += 0.5 * (before + after);
    }
    out
}

/// κ-harmonic lift of a nodal trace on `∂ω` (entries off the boundary are ignored).
pub fn harmonic_lift(mesh: &TwoLevelMesh, kappa: &CoefficientField, nb: &CoarseNeighborhood, trace: &[f64]) -> Result<Vec<f64>> {
    if trace.len() != nb.rect.node_count() {
        return Err(WempError::DimensionMismatch {
            expected: nb.rect.node_count(),
            got: trace.len(),
            context: "trace on neighborhood rectangle",
        });
    }
    Ok(LocalProblem::new(mesh, kappa, nb.rect)?.harmonic_extension(trace))
}

/// Per fine cell `κ̃ = H² κ Σ_i |∇χ_i|²`, averaged over the two triangles of the cell.
pub fn weighted_coefficient(mesh: &TwoLevelMesh, kappa: &CoefficientField, pou: &PartitionOfUnity) -> Result<Vec<f64>> {
    kappa.check_mesh(mesh)?;
    let n = mesh.fine_divisions();
    let r = mesh.refinements_per_coarse;
    let h = mesh.fine_h();
    let big_h2 = mesh.coarse_h().powi(2);
    let mut out = vec![0.0; n * n];
    for cj in 0..n {
        for ci in 0..n {
            let (ki, kj) = (ci / r, cj / r);
            let corners = [
                mesh.coarse_vertex_index(ki, kj),
                mesh.coarse_vertex_index(ki + 1, kj),
                mesh.coarse_vertex_index(ki + 1, kj + 1),
                mesh.coarse_vertex_index(ki, kj + 1),
            ];
            let mut acc = 0.0;
            for tri in cell_triangles(ci, cj) {
                let (_, g) = p1_gradients(tri.map(|(i, j)| [i as f64 * h, j as f64 * h]));
                for &v in &corners {
                    let f = &pou.chi[v];
                    let mut grad = [0.0; 2];
                    for (a, &(i, j)) in tri.iter().enumerate() {
                        let x = f.get(i, j);
                        grad[0] += x * g[a][0];
                        grad[1] += x * g[a][1];
                    }
                    acc += grad[0] * grad[0] + grad[1] * grad[1];
                }
            }
            out[cj * n + ci] = big_h2 * kappa.at(ci, cj) * acc / 2.0;
        }
    }
    Ok(out)
}

/// `H·max(κ̃)^{1/2} + 2^{-ℓ/2}·max κ` over fine cells touching a coarse edge.
pub fn eta_indicator(mesh: &TwoLevelMesh, level: u32, kappa: &CoefficientField, kappa_tilde: &[f64]) -> f64 {
    let r = mesh.refinements_per_coarse;
    let n = mesh.fine_divisions();
    let mut edge_max = 0.0f64;
    for cj in 0..n {
        for ci in 0..n {
            let touches = ci % r == 0 || ci % r == r - 1 || cj % r == 0 || cj % r == r - 1;
            if touches {
                edge_max = edge_max.max(kappa.at(ci, cj));
            }
        }
    }
    let kt = kappa_tilde.iter().copied().fold(0.0, f64::max);
    mesh.coarse_h() * kt.sqrt() + 2f64.powf(-(level as f64) / 2.0) * edge_max
}

fn neumann_on(local: &LocalProblem, mesh: &TwoLevelMesh, kappa_tilde: &[f64]) -> Result<Vec<f64>> {
    let rect = local.rect;
    let h = local.h;
    let n = mesh.fine_divisions();
    let total: f64 = rect.cells().map(|(ci, cj)| kappa_tilde[cj * n + ci]).sum::<f64>() * h * h;
    if !(total > 0.0) {
        return Err(WempError::InvalidArgument("weighted coefficient vanishes on the neighborhood".into()));
    }
    let mut rhs = vec![0.0; rect.node_count()];
    for (ci, cj) in rect.cells() {
        let f = kappa_tilde[cj * n + ci] / total;
        for tri in cell_triangles(ci, cj) {
            for (i, j) in tri {
                rhs[rect.local(i, j)] += f * h * h / 6.0;
            }
        }
    }
    let perimeter = 2.0 * ((rect.nx() - 1) + (rect.ny() - 1)) as f64 * h;
    for (k, (i, j)) in rect.positions().enumerate() {
        if rect.on_boundary(i, j) {
            rhs[k] -= h / perimeter;
        }
    }
    let imbalance: f64 = rhs.iter().sum();
    if imbalance.abs() > 1e-10 {
        return Err(WempError::Incompatible(imbalance.abs()));
    }
    // gauge: pin node 0, then shift to zero mean
    let keep: Vec<usize> = (1..rect.node_count()).collect();
    let reduced = local.stiffness.principal_submatrix(&keep);
    let sol = ProfileCholesky::factor(&reduced)?.solve(&rhs[1..]);
    let mut v = Vec::with_capacity(rect.node_count());
    v.push(0.0);
    v.extend(sol);
    let ones = vec![1.0; v.len()];
    let m1 = local.mass.mul_vec(&ones);
    let mean = dot(&m1, &v) / dot(&m1, &ones);
    v.iter_mut().for_each(|x| *x -= mean);
    Ok(v)
}

/// Zero-mean solution of `-∇·(κ∇v) = κ̃/∫κ̃` in `ω` with outward flux density `-|∂ω|^{-1}`.
pub fn neumann_corrector(
    mesh: &TwoLevelMesh,
    kappa: &CoefficientField,
    nb: &CoarseNeighborhood,
    kappa_tilde: &[f64],
) -> Result<Vec<f64>> {
    neumann_on(&LocalProblem::new(mesh, kappa, nb.rect)?, mesh, kappa_tilde)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Edge { side: usize, wavelet: usize },
    Corrector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnInfo {
    pub vertex: usize,
    pub kind: ColumnKind,
}

/// A basis function stored on its neighborhood: global node indices and values.
#[derive(Debug, Clone)]
pub struct LocalColumn {
    pub info: ColumnInfo,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MultiscaleSpace {
    pub level: u32,
    pub n_nodes: usize,
    /// All generated columns, including those removed by the rank filter.
    pub candidates: Vec<LocalColumn>,
    /// Indices into `candidates` spanning the space, in increasing order.
    pub kept: Vec<usize>,
    /// `Ψ`: fine nodes × multiscale dofs.
    pub basis: SparseMatrix,
    basis_t: SparseMatrix,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    mass_factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub kappa_tilde: Vec<f64>,
}

fn neighborhood_columns(
    mesh: &TwoLevelMesh,
    kappa: &CoefficientField,
    pou: &PartitionOfUnity,
    kappa_tilde: &[f64],
    level: u32,
    vertex: usize,
) -> Result<Vec<LocalColumn>> {
    let nb = mesh.coarse_neighborhood(vertex)?;
    let local = LocalProblem::new(mesh, kappa, nb.rect)?;
    let chi = &pou.chi[vertex];
    debug_assert_eq!(chi.rect, nb.rect);
    let h = mesh.fine_h();
    let finish = |info: ColumnInfo, v: Vec<f64>| {
        let values = nb
            .fine_nodes
            .iter()
            .zip(chi.values.iter().zip(&v))
            .map(|(&node, (c, x))| if mesh.is_boundary(node) { 0.0 } else { c * x })
            .collect();
        LocalColumn {
            info,
            nodes: nb.fine_nodes.clone(),
            values,
        }
    };
    let mut cols = Vec::with_capacity(4 * (1 << level) + 1);
    for side in 0..4 {
        for (w, seg) in edge_wavelets(level, &nb.boundary_edges[side], h)?.into_iter().enumerate() {
            let trace = edge_trace_nodal(&nb, side, &seg, mesh);
            let lift = local.harmonic_extension(&trace);
            cols.push(finish(ColumnInfo { vertex, kind: ColumnKind::Edge { side, wavelet: w } }, lift));
        }
    }
    let corr = neumann_on(&local, mesh, kappa_tilde)?;
    cols.push(finish(ColumnInfo { vertex, kind: ColumnKind::Corrector }, corr));
    Ok(cols)
}

/// Dense Gram `G_ab = ψ_aᵀ K ψ_b` of local columns, using supports to skip disjoint pairs.
fn gram(mesh: &TwoLevelMesh, k: &SparseMatrix, cols: &[LocalColumn]) -> DMatrix<f64> {
    let n = cols.len();
    let idx = |c: &LocalColumn| mesh.coarse_vertices[c.info.vertex].index;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let mut full = vec![0.0; k.ncols];
            for (&node, &v) in cols[b].nodes.iter().zip(&cols[b].values) {
                full[node] = v;
            }
            let (bi, bj) = idx(&cols[b]);
            let mut row = vec![0.0; n];
            for (a, ca) in cols.iter().enumerate().take(b + 1) {
                let (ai, aj) = idx(ca);
                if ai.abs_diff(bi) > 2 || aj.abs_diff(bj) > 2 {
                    continue;
                }
                let mut s = 0.0;
                for (&node, &v) in ca.nodes.iter().zip(&ca.values) {
                    if v != 0.0 {
                        let mut kv = 0.0;
                        for (c, w) in k.row(node) {
                            kv += w * full[c];
                        }
                        s += v * kv;
                    }
                }
                row[a] = s;
            }
            row
        })
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for (b, row) in rows.iter().enumerate() {
        for a in 0..=b {
            g[(a, b)] = row[a];
            g[(b, a)] = row[a];
        }
    }
    g
}

/// Greedy pivoted Cholesky on the normalized Gram; returns the kept indices in increasing order.
pub fn rank_filter(gram: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let n = gram.nrows();
    let scale: Vec<f64> = (0..n).map(|i| gram[(i, i)].max(0.0).sqrt()).collect();
    let g = |i: usize, j: usize| {
        if scale[i] == 0.0 || scale[j] == 0.0 {
            0.0
        } else {
            gram[(i, j)] / (scale[i] * scale[j])
        }
    };
    let mut d: Vec<f64> = (0..n).map(|i| if scale[i] > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut chosen = vec![false; n];
    let mut l: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    while let Some(p) = (0..n)
        .filter(|&i| !chosen[i])
        .max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a)))
    {
        if d[p] <= tol {
            break;
        }
        chosen[p] = true;
        let sp = d[p].sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let mut s = g(i, p);
            for lk in &l {
                s -= lk[i] * lk[p];
            }
            col[i] = s / sp;
            d[i] -= col[i] * col[i];
        }
        col[p] = sp;
        l.push(col);
        pivots.push(p);
    }
    let mut kept: Vec<usize> = pivots;
    kept.sort_unstable();
    kept
}

/// Builds `V_ms,ℓ` with its projected mass and stiffness matrices.
pub fn assemble_space(
    mesh: &TwoLevelMesh,
    kappa: &CoefficientField,
    ops: &OperatorPair,
    pou: &PartitionOfUnity,
    level: u32,
) -> Result<MultiscaleSpace> {
    let kappa_tilde = weighted_coefficient(mesh, kappa, pou)?;
    let interior = mesh.interior_coarse_vertices();
    if interior.is_empty() {
        return Err(WempError::InvalidArgument(
            "the coarse grid has no interior vertex; use at least 2 coarse divisions".into(),
        ));
    }
    let candidates: Vec<LocalColumn> = interior
        .par_iter()
        .map(|&v| neighborhood_columns(mesh, kappa, pou, &kappa_tilde, level, v))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let full_mass = gram(mesh, &ops.mass, &candidates);
    let kept = rank_filter(&full_mass, RANK_DROP_TOL);
    let removed = candidates.len() - kept.len();
    if 2 * removed > candidates.len() {
        return Err(WempError::RankDeficient {
            removed,
            total: candidates.len(),
        });
    }
    if removed > 0 {
        log::info!("rank filter removed {removed} of {} columns", candidates.len());
    }
    let cols: Vec<LocalColumn> = kept.iter().map(|&k| candidates[k].clone()).collect();
    let mass = full_mass.select_rows(&kept).select_columns(&kept);
    let stiffness = gram(mesh, &ops.stiffness, &cols);

    let n_nodes = mesh.node_count();
    let mut trip = Vec::new();
    for (c, col) in cols.iter().enumerate() {
        for (&node, &v) in col.nodes.iter().zip(&col.values) {
            if v != 0.0 {
                trip.push((node, c, v));
            }
        }
    }
    let basis_t = SparseMatrix::from_triplets(cols.len(), n_nodes, trip.iter().map(|&(r, c, v)| (c, r, v)).collect());
    let basis = SparseMatrix::from_triplets(n_nodes, cols.len(), trip);
    let mass_factor = nalgebra::Cholesky::new(mass.clone()).ok_or(WempError::NotPositiveDefinite {
        row: 0,
        pivot: f64::NAN,
    })?;
    Ok(MultiscaleSpace {
        level,
        n_nodes,
        candidates,
        kept,
        basis,
        basis_t,
        mass,
        stiffness,
        mass_factor,
        kappa_tilde,
    })
}

impl MultiscaleSpace {
    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    pub fn column_info(&self, c: usize) -> ColumnInfo {
        self.candidates[self.kept[c]].info
    }

    /// `Ψᵀ` as a sparse matrix.
    pub fn basis_transpose(&self) -> &SparseMatrix {
        &self.basis_t
    }

    /// Fine nodal vector `Ψ c`.
    pub fn lift(&self, coeffs: &[f64]) -> Vec<f64> {
        self.basis.mul_vec(coeffs)
    }

    /// `Ψᵀ x` for a fine nodal vector `x`.
    pub fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        self.basis_t.mul_vec(fine)
    }

    /// Solves `M_ms c = b`.
    pub fn solve_mass(&self, rhs: &[f64]) -> Vec<f64> {
        let b = nalgebra::DVector::from_column_slice(rhs);
        self.mass_factor.solve(&b).as_slice().to_vec()
    }

    /// Sparse triplet export `row col value` of `Ψ`, preceded by a `rows cols nnz` header.
    pub fn to_triplets(&self) -> String {
        let mut out = format!("{} {} {}\n", self.basis.nrows, self.basis.ncols, self.basis.nnz());
        for r in 0..self.basis.nrows {
            for (c, v) in self.basis.row(r) {
                let _ = writeln!(out, "{r} {c} {v:?}");
            }
        }
        out
    }
}

/// M-orthogonal projection of a fine nodal vector: solves `M_ms c = Ψᵀ M_h v`.
pub fn edge_projection(space: &MultiscaleSpace, ops: &OperatorPair, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != space.n_nodes {
        return Err(WempError::DimensionMismatch {
            expected: space.n_nodes,
            got: v.len(),
            context: "projection input",
        });
    }
    Ok(space.solve_mass(&space.restrict(&ops.mass.mul_vec(v))))
}

/// Edge-trace projection `Σ_i χ_i P_{i,ℓ} v` as a fine nodal vector, built from all generated
/// columns: each Haar coefficient is the `L²(Γ)` inner product of the trace of `v` with the wavelet.
pub fn edge_trace_projection(space: &MultiscaleSpace, mesh: &TwoLevelMesh, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != space.n_nodes {
        return Err(WempError::DimensionMismatch {
            expected: space.n_nodes,
            got: v.len(),
            context: "projection input",
        });
    }
    let h = mesh.fine_h();
    let mut out = vec![0.0; space.n_nodes];
    let mut current: Option<(usize, CoarseNeighborhood)> = None;
    let mut haar: Vec<Vec<Vec<f64>>> = Vec::new();
    for col in &space.candidates {
        let ColumnKind::Edge { side, wavelet } = col.info.kind else {
            continue;
        };
        if current.as_ref().map(|c| c.0) != Some(col.info.vertex) {
            let nb = mesh.coarse_neighborhood(col.info.vertex)?;
            haar = (0..4)
                .map(|s| edge_wavelets(space.level, &nb.boundary_edges[s], h))
                .collect::<Result<_>>()?;
            current = Some((col.info.vertex, nb));
        }
        let nb = &current.as_ref().unwrap().1;
        let nodes = &nb.boundary_edges[side].nodes;
        let coef: f64 = nodes
            .windows(2)
            .zip(&haar[side][wavelet])
            .map(|(pair, w)| h * 0.5 * (v[pair[0]] + v[pair[1]]) * w)
            .sum();
        for (&node, &x) in col.nodes.iter().zip(&col.values) {
            out[node] += coef * x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_operators;
    use crate::sparse::solve_spd;
    use approx::assert_relative_eq;

    fn inclusions(mesh: &TwoLevelMesh, contrast: f64) -> CoefficientField {
        let n = mesh.fine_divisions();
        let vals = (0..n * n)
            .map(|k| {
                let (i, j) = (k % n, k / n);
                if (i / 3 + j / 5) % 4 == 1 && (i + 2 * j) % 7 < 3 {
                    contrast
                } else {
                    1.0
                }
            })
            .collect();
        CoefficientField::new(n, n, vals).unwrap()
    }

    #[test]
    fn partition_of_unity_sums_to_one_at_high_contrast() {
        let m = TwoLevelMesh::build(3, 6).unwrap();
        let k = inclusions(&m, 1e4);
        let pou = build_partition_of_unity(&m, &k).unwrap();
        let s = pou.sum(&m);
        assert!(s.iter().all(|x| (x - 1.0).abs() <= 1e-10));
        for f in &pou.chi {
            assert!(f.values.iter().all(|&x| (-1e-10..=1.0 + 1e-10).contains(&x)));
        }
        for (v, cv) in m.coarse_vertices.iter().enumerate() {
            let (ci, cj) = cv.index;
            let r = m.refinements_per_coarse;
            for (w, f) in pou.chi.iter().enumerate() {
                let expect = if v == w { 1.0 } else { 0.0 };
                assert_eq!(f.get(ci * r, cj * r), expect);
            }
        }
    }

    #[test]
    fn partition_of_unity_matches_dense_cell_solve() {
        let m = TwoLevelMesh::build(2, 4).unwrap();
        let k = CoefficientField::constant(&m, 1.0).unwrap();
        let pou = build_partition_of_unity(&m, &k).unwrap();
        // one coarse cell, corner (0,0) solved with a dense five-point system
        let r = 4usize;
        let n_in = (r - 1) * (r - 1);
        let g = |i: usize, j: usize| (1.0 - i as f64 / r as f64) * (1.0 - j as f64 / r as f64);
        let mut a = DMatrix::zeros(n_in, n_in);
        let mut b = nalgebra::DVector::zeros(n_in);
        let id = |i: usize, j: usize| (j - 1) * (r - 1) + (i - 1);
        for j in 1..r {
            for i in 1..r {
                a[(id(i, j), id(i, j))] = 4.0;
                for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    if ni == 0 || nj == 0 || ni == r || nj == r {
                        b[id(i, j)] += g(ni, nj);
                    } else {
                        a[(id(i, j), id(ni, nj))] = -1.0;
                    }
                }
            }
        }
        let x = a.lu().solve(&b).unwrap();
        let chi0 = &pou.chi[m.coarse_vertex_index(0, 0)];
        for j in 1..r {
            for i in 1..r {
                assert_relative_eq!(chi0.get(i, j), x[id(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn haar_wavelets_are_orthonormal() {
        let m = TwoLevelMesh::build(3, 8).unwrap();
        let nb = m.coarse_neighborhood(m.coarse_vertex_index(1, 1)).unwrap();
        let h = m.fine_h();
        for level in 0..=4 {
            let w = edge_wavelets(level, &nb.boundary_edges[0], h).unwrap();
            assert_eq!(w.len(), 1 << level);
            for a in 0..w.len() {
                for b in 0..w.len() {
                    let g: f64 = w[a].iter().zip(&w[b]).map(|(x, y)| h * x * y).sum();
                    let e = if a == b { 1.0 } else { 0.0 };
                    assert!((g - e).abs() < 1e-12, "level {level} ({a},{b}) = {g}");
                }
            }
        }
        assert!(edge_wavelets(5, &nb.boundary_edges[0], h).is_err());
    }

    #[test]
    fn haar_step_function_values() {
        let edge = EdgeTrace { nodes: (0..5).collect() };
        let h = 0.25;
        let w = edge_wavelets(2, &edge, h).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[0], vec![1.0; 4]);
        assert_eq!(w[1], vec![1.0, 1.0, -1.0, -1.0]);
        let w0 = edge_wavelets(0, &edge, h).unwrap();
        assert_eq!(w0, vec![vec![1.0; 4]]);
    }

    #[test]
    fn lifts_of_constants_and_antisymmetric_traces() {
        let m = TwoLevelMesh::build(2, 4).unwrap();
        let k = CoefficientField::constant(&m, 1.0).unwrap();
        let nb = m.coarse_neighborhood(m.coarse_vertex_index(1, 1)).unwrap();
        let h = m.fine_h();
        let mut total = vec![0.0; nb.rect.node_count()];
        for side in 0..4 {
            let w = edge_wavelets(0, &nb.boundary_edges[side], h).unwrap();
            let t = edge_trace_nodal(&nb, side, &w[0], &m);
            total.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
        }
        let lift = harmonic_lift(&m, &k, &nb, &total).unwrap();
        let c = lift[0];
        assert!(lift.iter().all(|x| (x - c).abs() < 1e-12));

        let w = edge_wavelets(1, &nb.boundary_edges[0], h).unwrap();
        let t = edge_trace_nodal(&nb, 0, &w[1], &m);
        let v = harmonic_lift(&m, &k, &nb, &t).unwrap();
        let rect = nb.rect;
        for (i, j) in rect.positions() {
            let mirror = rect.x1 - (i - rect.x0);
            assert!((v[rect.local(i, j)] + v[rect.local(mirror, j)]).abs() < 1e-12);
        }
        let scaled: Vec<f64> = t.iter().map(|x| 3.0 * x).collect();
        let v3 = harmonic_lift(&m, &k, &nb, &scaled).unwrap();
        for (a, b) in v3.iter().zip(&v) {
            assert_relative_eq!(*a, 3.0 * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_coefficient_hand_case() {
        // single coarse cell split 2×2: interior node value of χ at (0,0) is 1/4
        let m = TwoLevelMesh::build(1, 2).unwrap();
        let k = CoefficientField::constant(&m, 1.0).unwrap();
        let pou = build_partition_of_unity(&m, &k).unwrap();
        assert_relative_eq!(pou.chi[0].get(1, 1), 0.25, epsilon = 1e-14);
        let kt = weighted_coefficient(&m, &k, &pou).unwrap();
        // lower-left cell, h = 1/2: χ values at the cell corners for the four coarse vertices
        let chi = [[1.0, 0.5, 0.25, 0.5], [0.0, 0.5, 0.25, 0.0], [0.0, 0.0, 0.25, 0.0], [0.0, 0.0, 0.25, 0.5]];
        let h = 0.5;
        let mut acc = 0.0;
        for c in chi {
            // corners (0,0),(1,0),(1,1),(0,1); lower triangle (0,0),(1,0),(1,1), upper (0,0),(1,1),(0,1)
            let g_lo = [(c[1] - c[0]) / h, (c[2] - c[1]) / h];
            let g_up = [(c[2] - c[3]) / h, (c[3] - c[0]) / h];
            acc += g_lo[0] * g_lo[0] + g_lo[1] * g_lo[1] + g_up[0] * g_up[0] + g_up[1] * g_up[1];
        }
        assert_relative_eq!(kt[0], acc / 2.0, epsilon = 1e-12);
        assert!(kt.iter().all(|&x| x > 0.0));
        let kt5 = weighted_coefficient(&m, &k.scaled(5.0).unwrap(), &pou).unwrap();
        for (a, b) in kt5.iter().zip(&kt) {
            assert_relative_eq!(*a, 5.0 * b, max_relative = 1e-14);
        }
    }

    #[test]
    fn eta_indicator_behaviour() {
        let eta_for = |nc: usize, level: u32| {
            let m = TwoLevelMesh::build(nc, 4).unwrap();
            let k = CoefficientField::constant(&m, 1.0).unwrap();
            let pou = build_partition_of_unity(&m, &k).unwrap();
            let kt = weighted_coefficient(&m, &k, &pou).unwrap();
            (eta_indicator(&m, level, &k, &kt), eta_indicator(&m, 60, &k, &kt))
        };
        let (e0, first4) = eta_for(4, 0);
        let (e2, _) = eta_for(4, 2);
        assert!(e2 < e0);
        let (_, first8) = eta_for(8, 0);
        let ratio = first4 / first8;
        assert!(ratio > 1.6 && ratio < 2.4, "ratio {ratio}");
    }

    #[test]
    fn neumann_corrector_properties() {
        let m = TwoLevelMesh::build(4, 4).unwrap();
        let k = CoefficientField::constant(&m, 1.0).unwrap();
        let pou = build_partition_of_unity(&m, &k).unwrap();
        let kt = weighted_coefficient(&m, &k, &pou).unwrap();
        let nb = m.coarse_neighborhood(m.coarse_vertex_index(2, 2)).unwrap();
        let v = neumann_corrector(&m, &k, &nb, &kt).unwrap();
        let local = LocalProblem::new(&m, &k, nb.rect).unwrap();
        let ones = vec![1.0; v.len()];
        assert!(dot(&local.mass.mul_vec(&ones), &v).abs() < 1e-10);
        assert!(dot(&local.stiffness.mul_vec(&v), &ones).abs() < 1e-10);
        // symmetries of the triangulation: transpose and half-turn
        let rect = nb.rect;
        let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for (i, j) in rect.positions() {
            let (li, lj) = (i - rect.x0, j - rect.y0);
            let t = rect.local(rect.x0 + lj, rect.y0 + li);
            let rot = rect.local(rect.x1 - li, rect.y1 - lj);
            assert!((v[rect.local(i, j)] - v[t]).abs() <= 1e-8 * scale);
            assert!((v[rect.local(i, j)] - v[rot]).abs() <= 1e-8 * scale);
        }
    }

    fn space(nc: usize, r: usize, level: u32, contrast: f64) -> (TwoLevelMesh, OperatorPair, MultiscaleSpace) {
        let m = TwoLevelMesh::build(nc, r).unwrap();
        let k = inclusions(&m, contrast);
        let ops = assemble_operators(&m, &k).unwrap();
        let pou = build_partition_of_unity(&m, &k).unwrap();
        let s = assemble_space(&m, &k, &ops, &pou, level).unwrap();
        (m, ops, s)
    }

    #[test]
    fn space_structure() {
        let (m, ops, s) = space(4, 4, 1, 1e3);
        assert_eq!(s.candidates.len(), 81);
        assert!(s.dim() <= 81 && 2 * s.dim() >= 81);
        for c in 0..s.dim() {
            let mut e = vec![0.0; s.dim()];
            e[c] = 1.0;
            let f = s.lift(&e);
            assert!(m.boundary_fine_nodes.iter().all(|&b| f[b] == 0.0));
            let nb = m.coarse_neighborhood(s.column_info(c).vertex).unwrap();
            for (node, x) in f.iter().enumerate() {
                if *x != 0.0 {
                    assert!(nb.fine_nodes.contains(&node));
                }
            }
        }
        assert!(s.mass.clone().cholesky().is_some());
        let c: Vec<f64> = (0..s.dim()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let f = s.lift(&c);
        let fine = ops.stiffness.quadratic_form(&f);
        let cv = nalgebra::DVector::from_column_slice(&c);
        let coarse = (cv.transpose() * &s.stiffness * &cv)[(0, 0)];
        assert_relative_eq!(fine, coarse, max_relative = 1e-12);
        let tri = s.to_triplets();
        assert_eq!(tri.lines().count(), s.basis.nnz() + 1);
    }

    #[test]
    fn projection_reproduces_span_and_is_idempotent() {
        let (_, ops, s) = space(3, 4, 1, 10.0);
        let c: Vec<f64> = (0..s.dim()).map(|i| (i as f64 * 0.7).sin()).collect();
        let v = s.lift(&c);
        let p = edge_projection(&s, &ops, &v).unwrap();
        let diff: Vec<f64> = s.lift(&p).iter().zip(&v).map(|(a, b)| a - b).collect();
        let (l2d, _) = crate::fem::norms(&ops, &diff);
        let (l2v, _) = crate::fem::norms(&ops, &v);
        assert!(l2d <= 1e-10 * l2v);
        let rough: Vec<f64> = (0..ops.n_nodes()).map(|k| ((k * 7919) % 13) as f64).collect();
        let p1 = edge_projection(&s, &ops, &rough).unwrap();
        let p2 = edge_projection(&s, &ops, &s.lift(&p1)).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn projection_error_decreases_with_level() {
        let mut errs = Vec::new();
        for level in 0..=2 {
            let (m, ops, s) = space(4, 8, level, 100.0);
            let v = crate::fem::interpolate(&m, |x, y| (9.0 * x).sin() * (7.0 * y).cos() * x * (1.0 - x) * y * (1.0 - y));
            let p = s.lift(&edge_projection(&s, &ops, &v).unwrap());
            let d: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a - b).collect();
            errs.push(crate::fem::norms(&ops, &d).0);
            let alt = edge_trace_projection(&s, &m, &v).unwrap();
            assert!(alt.iter().all(|x| x.is_finite()));
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn steady_energy_error_monotone_in_level() {
        let m = TwoLevelMesh::build(4, 8).unwrap();
        let k = inclusions(&m, 1e4);
        let ops = assemble_operators(&m, &k).unwrap();
        let pou = build_partition_of_unity(&m, &k).unwrap();
        let f = ops.mass.mul_vec(&vec![1.0; ops.n_nodes()]);
        let u = ops.extend(&solve_spd(&ops.stiffness_free, &ops.restrict(&f)).unwrap());
        let mut errs = Vec::new();
        for level in 0..=3 {
            let s = assemble_space(&m, &k, &ops, &pou, level).unwrap();
            let rhs = nalgebra::DVector::from_column_slice(&s.restrict(&f));
            let c = s.stiffness.clone().cholesky().unwrap().solve(&rhs);
            let d: Vec<f64> = s.lift(c.as_slice()).iter().zip(&u).map(|(a, b)| a - b).collect();
            errs.push(crate::fem::norms(&ops, &d).1);
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }
}
