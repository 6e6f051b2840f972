//! P1 finite elements on the fine triangulation: coefficient fields, operator
//! assembly, load vectors, L² projection and norms.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, WempError};
use crate::mesh::{NodeRect, TwoLevelMesh};
use crate::sparse::{dot, ProfileCholesky, SparseMatrix};

/// Piecewise constant diffusivity, one positive value per fine square cell,
/// row-major from the cell at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(WempError::DimensionMismatch {
                expected: nx * ny,
                got: values.len(),
                context: "coefficient values",
            });
        }
        if let Some(k) = values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(WempError::InvalidArgument(format!(
                "coefficient value at cell {k} is not a positive finite number: {}",
                values[k]
            )));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn constant(mesh: &TwoLevelMesh, value: f64) -> Result<Self> {
        let n = mesh.fine_divisions();
        Self::new(n, n, vec![value; n * n])
    }

    pub fn at(&self, ci: usize, cj: usize) -> f64 {
        self.values[cj * self.nx + ci]
    }

    pub fn check_mesh(&self, mesh: &TwoLevelMesh) -> Result<()> {
        let n = mesh.fine_divisions();
        if self.nx != n || self.ny != n {
            return Err(WempError::DimensionMismatch {
                expected: n * n,
                got: self.nx * self.ny,
                context: "coefficient field vs mesh cells",
            });
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.nx, self.ny, self.values.iter().map(|v| v * c).collect())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Parses the `kappa <nx> <ny>` raster text format.
    pub fn parse_raster(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        match tokens.next() {
            Some("kappa") => {}
            other => {
                return Err(WempError::Config(format!(
                    "raster header must start with 'kappa', found {other:?}"
                )))
            }
        }
        let mut dim = |name: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| WempError::Config(format!("raster header missing {name}")))?
                .parse::<usize>()
                .map_err(|e| WempError::Config(format!("raster {name}: {e}")))
        };
        let nx = dim("nx")?;
        let ny = dim("ny")?;
        let values = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| WempError::Config(format!("raster value '{t}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(nx, ny, values)
    }

    pub fn to_raster(&self) -> String {
        let mut out = format!("kappa {} {}\n", self.nx, self.ny);
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn read_raster(path: &Path) -> Result<Self> {
        Self::parse_raster(&std::fs::read_to_string(path)?)
    }

    pub fn write_raster(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_raster())?;
        Ok(())
    }
}

/// Area and constant gradients of the three P1 hat functions on a triangle.
pub fn p1_gradients(p: [[f64; 2]; 3]) -> (f64, [[f64; 2]; 3]) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        g[a] = [(p[b][1] - p[c][1]) / det, (p[c][0] - p[b][0]) / det];
    }
    (area, g)
}

/// Fine grid positions of the two triangles in cell `(ci, cj)`, matching
/// [`TwoLevelMesh::fine_triangles`].
pub fn cell_triangles(ci: usize, cj: usize) -> [[(usize, usize); 3]; 2] {
    [
        [(ci, cj), (ci + 1, cj), (ci + 1, cj + 1)],
        [(ci, cj), (ci + 1, cj + 1), (ci, cj + 1)],
    ]
}

/// Mass and stiffness matrices over a node rectangle, in its local row-major numbering.
pub fn assemble_patch(
    mesh: &TwoLevelMesh,
    kappa: &CoefficientField,
    rect: &NodeRect,
) -> (SparseMatrix, SparseMatrix) {
    let h = mesh.fine_h();
    let n = rect.node_count();
    let cells = (rect.nx() - 1) * (rect.ny() - 1);
    let mut mass = Vec::with_capacity(18 * cells);
    let mut stiff = Vec::with_capacity(18 * cells);
    for (ci, cj) in rect.cells() {
        let k = kappa.at(ci, cj);
        for tri in cell_triangles(ci, cj) {
            let pts = tri.map(|(i, j)| [i as f64 * h, j as f64 * h]);
            let loc = tri.map(|(i, j)| rect.local(i, j));
            let (area, g) = p1_gradients(pts);
            for a in 0..3 {
                for b in 0..3 {
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    let s = k * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    mass.push((loc[a], loc[b], m));
                    stiff.push((loc[a], loc[b], s));
                }
            }
        }
    }
    (
        SparseMatrix::from_triplets(n, n, mass),
        SparseMatrix::from_triplets(n, n, stiff),
    )
}

/// Fine-scale mass and stiffness matrices with their interior-dof restrictions.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    pub free_dofs: Vec<usize>,
    pub mass_free: SparseMatrix,
    pub stiffness_free: SparseMatrix,
}

impl OperatorPair {
    pub fn n_nodes(&self) -> usize {
        self.mass.nrows
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&k| full[k]).collect()
    }

    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (&k, &v) in self.free_dofs.iter().zip(free) {
            full[k] = v;
        }
        full
    }
}

pub fn assemble_operators(mesh: &TwoLevelMesh, kappa: &CoefficientField) -> Result<OperatorPair> {
    kappa.check_mesh(mesh)?;
    let (mass, stiffness) = assemble_patch(mesh, kappa, &mesh.full_rect());
    let free_dofs = mesh.free_nodes();
    let mass_free = mass.principal_submatrix(&free_dofs);
    let stiffness_free = stiffness.principal_submatrix(&free_dofs);
    Ok(OperatorPair {
        mass,
        stiffness,
        free_dofs,
        mass_free,
        stiffness_free,
    })
}

/// Nodal interpolant of `f(x, y)` on the fine mesh.
pub fn interpolate(mesh: &TwoLevelMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    mesh.fine_node_coords.iter().map(|p| f(p[0], p[1])).collect()
}

/// Load vector `(f(·,t), φ_i)` by nodal quadrature: `M_h` times the nodal interpolant.
pub fn assemble_load(
    mesh: &TwoLevelMesh,
    ops: &OperatorPair,
    f: impl Fn(f64, f64, f64) -> f64,
    t: f64,
) -> Vec<f64> {
    ops.mass.mul_vec(&interpolate(mesh, |x, y| f(x, y, t)))
}

/// L² projection onto the P1 functions vanishing on the boundary; returns full nodal values.
pub fn l2_project(ops: &OperatorPair, nodal_values: &[f64]) -> Result<Vec<f64>> {
    if nodal_values.len() != ops.n_nodes() {
        return Err(WempError::DimensionMismatch {
            expected: ops.n_nodes(),
            got: nodal_values.len(),
            context: "l2_project input",
        });
    }
    let rhs = ops.restrict(&ops.mass.mul_vec(nodal_values));
    if rhs.is_empty() {
        return Ok(vec![0.0; ops.n_nodes()]);
    }
    let chol = ProfileCholesky::factor(&ops.mass_free)?;
    Ok(ops.extend(&chol.solve(&rhs)))
}

/// `(‖v‖_{L²}, ‖v‖_{energy})` of a full nodal vector.
pub fn norms(ops: &OperatorPair, v: &[f64]) -> (f64, f64) {
    let l2 = ops.mass.quadratic_form(v).max(0.0).sqrt();
    let en = ops.stiffness.quadratic_form(v).max(0.0).sqrt();
    (l2, en)
}

/// Same norms for vectors on the free dofs.
pub fn norms_free(ops: &OperatorPair, v: &[f64]) -> (f64, f64) {
    let l2 = dot(v, &ops.mass_free.mul_vec(v)).max(0.0).sqrt();
    let en = dot(v, &ops.stiffness_free.mul_vec(v)).max(0.0).sqrt();
    (l2, en)
}
