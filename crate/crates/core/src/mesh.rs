//! Two-level structured discretization of the unit square.
//!
//! The domain is split into `coarse_divisions²` square coarse cells, each
//! refined into `refinements_per_coarse²` fine squares. Every fine square is
//! cut along its (0,0)-(1,1) diagonal into two P1 triangles. Grid positions are
//! kept as integer index pairs so conformity checks are exact.

use crate::error::{Result, WempError};

/// Default upper bound on fine node count accepted by [`TwoLevelMesh::build`].
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// Inclusive rectangle of fine grid indices `[x0, x1] × [y0, y1]` (node indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl NodeRect {
    pub fn nx(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn ny(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn node_count(&self) -> usize {
        self.nx() * self.ny()
    }

    /// Local row-major index of global grid position `(i, j)`.
    pub fn local(&self, i: usize, j: usize) -> usize {
        (j - self.y0) * self.nx() + (i - self.x0)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.x0 && i <= self.x1 && j >= self.y0 && j <= self.y1
    }

    pub fn on_boundary(&self, i: usize, j: usize) -> bool {
        i == self.x0 || i == self.x1 || j == self.y0 || j == self.y1
    }

    /// Grid positions of the rectangle, row-major from `(x0, y0)`.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..=self.y1).flat_map(move |j| (self.x0..=self.x1).map(move |i| (i, j)))
    }

    /// Fine cells `(ci, cj)` covered by the rectangle.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |j| (self.x0..self.x1).map(move |i| (i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseVertex {
    pub index: (usize, usize),
    pub point: [f64; 2],
    pub interior: bool,
}

#[derive(Debug, Clone)]
pub struct TwoLevelMesh {
    pub coarse_divisions: usize,
    pub refinements_per_coarse: usize,
    pub fine_node_coords: Vec<[f64; 2]>,
    pub fine_triangles: Vec<[usize; 3]>,
    pub boundary_fine_nodes: Vec<usize>,
    pub coarse_vertices: Vec<CoarseVertex>,
    is_boundary: Vec<bool>,
}

/// One side `Γ_{i,k}` of a coarse neighborhood boundary: fine nodes in traversal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTrace {
    pub nodes: Vec<usize>,
}

impl EdgeTrace {
    pub fn segments(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }
}

/// Union of coarse cells sharing one coarse vertex.
#[derive(Debug, Clone)]
pub struct CoarseNeighborhood {
    pub center_vertex: usize,
    pub cells: Vec<usize>,
    pub fine_nodes: Vec<usize>,
    /// Bottom, right, top, left; counterclockwise around `∂ω_i`.
    pub boundary_edges: [EdgeTrace; 4],
    pub rect: NodeRect,
}

impl TwoLevelMesh {
    pub fn build(coarse_divisions: usize, refinements_per_coarse: usize) -> Result<Self> {
        Self::build_with_budget(coarse_divisions, refinements_per_coarse, DEFAULT_NODE_BUDGET)
    }

    pub fn build_with_budget(
        coarse_divisions: usize,
        refinements_per_coarse: usize,
        node_budget: usize,
    ) -> Result<Self> {
        if coarse_divisions == 0 || refinements_per_coarse == 0 {
            return Err(WempError::InvalidArgument(
                "coarse_divisions and refinements_per_coarse must be >= 1".into(),
            ));
        }
        let n = coarse_divisions
            .checked_mul(refinements_per_coarse)
            .ok_or_else(|| WempError::BudgetExceeded("fine division count overflows".into()))?;
        let nodes = (n + 1)
            .checked_mul(n + 1)
            .ok_or_else(|| WempError::BudgetExceeded("node count overflows".into()))?;
        if nodes > node_budget {
            return Err(WempError::BudgetExceeded(format!(
                "{nodes} fine nodes exceed the budget of {node_budget}"
            )));
        }

        let h = 1.0 / n as f64;
        let mut coords = Vec::with_capacity(nodes);
        let mut is_boundary = Vec::with_capacity(nodes);
        for j in 0..=n {
            for i in 0..=n {
                coords.push([i as f64 * h, j as f64 * h]);
                is_boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let boundary_fine_nodes = (0..nodes).filter(|&k| is_boundary[k]).collect();

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = j * (n + 1) + i;
                let b = a + 1;
                let c = a + n + 2;
                let d = a + n + 1;
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }

        let nc = coarse_divisions;
        let hc = 1.0 / nc as f64;
        let mut coarse_vertices = Vec::with_capacity((nc + 1) * (nc + 1));
        for j in 0..=nc {
            for i in 0..=nc {
                coarse_vertices.push(CoarseVertex {
                    index: (i, j),
                    point: [i as f64 * hc, j as f64 * hc],
                    interior: i > 0 && j > 0 && i < nc && j < nc,
                });
            }
        }

        Ok(Self {
            coarse_divisions,
            refinements_per_coarse,
            fine_node_coords: coords,
            fine_triangles: triangles,
            boundary_fine_nodes,
            coarse_vertices,
            is_boundary,
        })
    }

    /// Fine cells per axis.
    pub fn fine_divisions(&self) -> usize {
        self.coarse_divisions * self.refinements_per_coarse
    }

    pub fn fine_h(&self) -> f64 {
        1.0 / self.fine_divisions() as f64
    }

    pub fn coarse_h(&self) -> f64 {
        1.0 / self.coarse_divisions as f64
    }

    pub fn node_count(&self) -> usize {
        self.fine_node_coords.len()
    }

    pub fn cell_count(&self) -> usize {
        self.fine_divisions() * self.fine_divisions()
    }

    pub fn coarse_cell_count(&self) -> usize {
        self.coarse_divisions * self.coarse_divisions
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.fine_divisions() + 1) + i
    }

    pub fn node_position(&self, node: usize) -> (usize, usize) {
        let stride = self.fine_divisions() + 1;
        (node % stride, node / stride)
    }

    pub fn cell(&self, ci: usize, cj: usize) -> usize {
        cj * self.fine_divisions() + ci
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.is_boundary[node]
    }

    /// Interior fine nodes in increasing order.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&k| !self.is_boundary[k]).collect()
    }

    /// Fine cell that owns triangle `t` (two triangles per cell).
    pub fn triangle_cell(&self, t: usize) -> usize {
        t / 2
    }

    /// Coarse cell containing the fine cell `(ci, cj)`.
    pub fn coarse_cell_of(&self, ci: usize, cj: usize) -> usize {
        let r = self.refinements_per_coarse;
        (cj / r) * self.coarse_divisions + ci / r
    }

    pub fn coarse_vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.coarse_divisions + 1) + i
    }

    /// Fine node rectangle spanned by coarse cell `(ci, cj)`.
    pub fn coarse_cell_rect(&self, ci: usize, cj: usize) -> NodeRect {
        let r = self.refinements_per_coarse;
        NodeRect {
            x0: ci * r,
            x1: (ci + 1) * r,
            y0: cj * r,
            y1: (cj + 1) * r,
        }
    }

    pub fn full_rect(&self) -> NodeRect {
        let n = self.fine_divisions();
        NodeRect {
            x0: 0,
            x1: n,
            y0: 0,
            y1: n,
        }
    }

    /// Coarse neighborhood `ω_i` of coarse vertex `vertex`.
    pub fn coarse_neighborhood(&self, vertex: usize) -> Result<CoarseNeighborhood> {
        let Some(v) = self.coarse_vertices.get(vertex) else {
            return Err(WempError::InvalidArgument(format!(
                "coarse vertex {vertex} out of range ({} vertices)",
                self.coarse_vertices.len()
            )));
        };
        let (vi, vj) = v.index;
        let nc = self.coarse_divisions;
        let r = self.refinements_per_coarse;
        let ci0 = vi.saturating_sub(1);
        let ci1 = vi.min(nc - 1);
        let cj0 = vj.saturating_sub(1);
        let cj1 = vj.min(nc - 1);
        let mut cells = Vec::new();
        for cj in cj0..=cj1 {
            for ci in ci0..=ci1 {
                cells.push(cj * nc + ci);
            }
        }
        let rect = NodeRect {
            x0: ci0 * r,
            x1: (ci1 + 1) * r,
            y0: cj0 * r,
            y1: (cj1 + 1) * r,
        };
        let fine_nodes = rect.positions().map(|(i, j)| self.node(i, j)).collect();

        let bottom = (rect.x0..=rect.x1).map(|i| self.node(i, rect.y0)).collect();
        let right = (rect.y0..=rect.y1).map(|j| self.node(rect.x1, j)).collect();
        let top = (rect.x0..=rect.x1).rev().map(|i| self.node(i, rect.y1)).collect();
        let left = (rect.y0..=rect.y1).rev().map(|j| self.node(rect.x0, j)).collect();

        Ok(CoarseNeighborhood {
            center_vertex: vertex,
            cells,
            fine_nodes,
            boundary_edges: [
                EdgeTrace { nodes: bottom },
                EdgeTrace { nodes: right },
                EdgeTrace { nodes: top },
                EdgeTrace { nodes: left },
            ],
            rect,
        })
    }

    /// Indices of interior coarse vertices.
    pub fn interior_coarse_vertices(&self) -> Vec<usize> {
        self.coarse_vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.interior)
            .map(|(k, _)| k)
            .collect()
    }
}
