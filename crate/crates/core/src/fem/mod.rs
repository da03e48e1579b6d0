//! Trilinear hexahedral FEM for the coupled elasticity-electrostatics system.
//!
//! The element and global matrices use the symmetrized arrangement: the
//! electrostatic rows are negated so the assembled matrix is symmetric
//! quasi-definite, [[A, B], [B^T, -C]] with A, C positive (semi)definite.
//! DOF order is node-major (u1, u2, u3, phi per node), which keeps the
//! coupling inside 4x4 node blocks; the sparse factorization works on those
//! blocks directly.
//!
//! Two solver paths implement the same solve contract (relative residual
//! <= 1e-10, or absolute 1e-12 for zero loads):
//! - Dirichlet-box systems: direct block LDL^T with a geometric
//!   nested-dissection ordering ([`ldl`]).
//! - periodic (torus) systems: preconditioned MINRES, block-diagonal spectral
//!   preconditioner applied per frequency via FFT ([`minres`], [`fftprec`]).

mod element;
mod fftprec;
mod ldl;
mod minres;
mod operator;

pub use element::{element_matrices, ElementMatrix, GAUSS_1D};
pub use operator::{
    assemble, assemble_cell, prepare, solve_prepared, AssembledOperator, LinearSystem,
    SolverHandle, SystemKind,
};

/// Solve a fully specified linear system.
pub fn solve(sys: &LinearSystem) -> crate::Result<CoupledField> {
    sys.solve()
}

use crate::grid::StructuredGrid3;
use serde::{Deserialize, Serialize};

/// Default relative residual bound of the solve contract.
pub const SOLVE_RTOL: f64 = 1e-10;
/// Absolute residual bound when the right-hand side vanishes.
pub const SOLVE_ATOL: f64 = 1e-12;

/// Nodal solution on a structured grid: 4 values per node (u1, u2, u3, phi).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledField {
    pub grid: StructuredGrid3,
    /// len = 4 * node_count, node-major
    pub values: Vec<f64>,
}

impl CoupledField {
    pub fn zeros(grid: StructuredGrid3) -> Self {
        let n = grid.node_count();
        CoupledField {
            grid,
            values: vec![0.0; 4 * n],
        }
    }

    #[inline]
    pub fn u(&self, node: usize) -> [f64; 3] {
        [
            self.values[4 * node],
            self.values[4 * node + 1],
            self.values[4 * node + 2],
        ]
    }

    #[inline]
    pub fn phi(&self, node: usize) -> f64 {
        self.values[4 * node + 3]
    }

    /// Mean of one component over all nodes.
    pub fn component_mean(&self, comp: usize) -> f64 {
        let n = self.grid.node_count();
        let mut s = 0.0;
        for node in 0..n {
            s += self.values[4 * node + comp];
        }
        s / n as f64
    }

    /// Subtract per-component means computed over the periodic master set
    /// (nodes with all indices < n per axis), then re-copy masters onto the
    /// +face slaves so the field stays periodic.
    pub fn subtract_periodic_means(&mut self) {
        let nel = self.grid.nel;
        let npa = self.grid.nodes_per_axis();
        let mut sums = [0.0f64; 4];
        let mut count = 0usize;
        for k in 0..nel[2] {
            for j in 0..nel[1] {
                for i in 0..nel[0] {
                    let node = self.grid.node_index(i, j, k);
                    for c in 0..4 {
                        sums[c] += self.values[4 * node + c];
                    }
                    count += 1;
                }
            }
        }
        for c in 0..4 {
            sums[c] /= count as f64;
        }
        for k in 0..npa[2] {
            for j in 0..npa[1] {
                for i in 0..npa[0] {
                    let node = self.grid.node_index(i, j, k);
                    let master = self.grid.node_index(i % nel[0], j % nel[1], k % nel[2]);
                    for c in 0..4 {
                        self.values[4 * node + c] = self.values[4 * master + c] - sums[c];
                    }
                }
            }
        }
    }
}

/// Shape-function values and reference gradients at one quadrature point.
#[derive(Clone, Copy)]
pub struct ShapeEval {
    pub n: [f64; 8],
    /// d n_a / d xi_axis on the [-1,1]^3 reference cube
    pub dn: [[f64; 3]; 8],
}

/// Evaluate the 8 trilinear shape functions at a reference point.
pub fn shape_eval(xi: f64, eta: f64, zeta: f64) -> ShapeEval {
    use crate::grid::HEX_OFFSETS;
    let mut out = ShapeEval {
        n: [0.0; 8],
        dn: [[0.0; 3]; 8],
    };
    for (a, off) in HEX_OFFSETS.iter().enumerate() {
        let sx = 2.0 * off[0] as f64 - 1.0;
        let sy = 2.0 * off[1] as f64 - 1.0;
        let sz = 2.0 * off[2] as f64 - 1.0;
        let fx = 0.5 * (1.0 + sx * xi);
        let fy = 0.5 * (1.0 + sy * eta);
        let fz = 0.5 * (1.0 + sz * zeta);
        out.n[a] = fx * fy * fz;
        out.dn[a] = [0.5 * sx * fy * fz, fx * 0.5 * sy * fz, fx * fy * 0.5 * sz];
    }
    out
}

/// The 8 Gauss points of the 2x2x2 rule on the reference cube, with the
/// shape evaluations baked in. Weight per point is 1 in reference
/// coordinates; the Jacobian factor h1*h2*h3/8 is applied by callers.
pub fn gauss_points() -> [ShapeEval; 8] {
    let g = GAUSS_1D;
    let mut out = [shape_eval(0.0, 0.0, 0.0); 8];
    let mut idx = 0;
    for &zeta in &[-g, g] {
        for &eta in &[-g, g] {
            for &xi in &[-g, g] {
                out[idx] = shape_eval(xi, eta, zeta);
                idx += 1;
            }
        }
    }
    out
}

/// Physical gradients of the four fields at the 8 Gauss points of one
/// element. `nodal` is the element-local value vector (node-major, 32).
///
/// # Output
/// `out[gp][field]` = spatial gradient of field (u1, u2, u3, phi).
pub fn element_gauss_gradients(
    h: [f64; 3],
    shapes: &[ShapeEval; 8],
    nodal: &[f64; 32],
) -> [[[f64; 3]; 4]; 8] {
    let scale = [2.0 / h[0], 2.0 / h[1], 2.0 / h[2]];
    let mut out = [[[0.0; 3]; 4]; 8];
    for (gp, sh) in shapes.iter().enumerate() {
        for a in 0..8 {
            let gx = sh.dn[a][0] * scale[0];
            let gy = sh.dn[a][1] * scale[1];
            let gz = sh.dn[a][2] * scale[2];
            for f in 0..4 {
                let v = nodal[4 * a + f];
                out[gp][f][0] += gx * v;
                out[gp][f][1] += gy * v;
                out[gp][f][2] += gz * v;
            }
        }
    }
    out
}

/// Gather the 32 element-local values of a field.
#[inline]
pub fn gather_element(field: &[f64], nodes: &[usize; 8]) -> [f64; 32] {
    let mut out = [0.0; 32];
    for (a, &node) in nodes.iter().enumerate() {
        out[4 * a] = field[4 * node];
        out[4 * a + 1] = field[4 * node + 1];
        out[4 * a + 2] = field[4 * node + 2];
        out[4 * a + 3] = field[4 * node + 3];
    }
    out
}
