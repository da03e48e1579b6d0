//! Global system assembly and the solve entry points.
//!
//! Assembly is element-compressed: a voxel grid with p distinct materials
//! needs only p cached element matrices. The global operator is kept in
//! 27-offset block-stencil form and applied as regular sweeps, one offset at
//! a time; the direct solver materializes a block-sparse matrix from the
//! element data.
//!
//! Constraints are kept in the global numbering instead of renumbering
//! equations:
//! - Dirichlet dofs become signed identity rows (+1 mechanical, -1
//!   electrostatic, preserving quasi-definiteness); their couplings move to
//!   the right-hand side.
//! - periodic slave dofs fold onto their masters; the solve runs on the
//!   master set and slave values are copied back afterwards.

use super::element::{element_matrices, ElementMatrix};
use super::{fftprec, ldl, CoupledField, SOLVE_ATOL, SOLVE_RTOL};
use crate::grid::{DofConstraint, DofMap, StructuredGrid3, VoxelCell, HEX_OFFSETS};
use crate::materials::MaterialTensorSet;
use crate::{Error, Result};

/// Which solve strategy a system requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// Box domain with Dirichlet data; direct block factorization.
    DirichletBox,
    /// Fully periodic cell; preconditioned Krylov iteration on the torus.
    PeriodicTorus,
}

/// Element-compressed global operator: grid, distinct element matrices,
/// per-element material slots and the constraint map.
pub struct AssembledOperator {
    pub grid: StructuredGrid3,
    pub dofs: DofMap,
    pub kind: SystemKind,
    /// distinct element matrices, indexed by material slot
    pub elements: Vec<ElementMatrix>,
    /// material slot per element
    pub element_material: Vec<u16>,
    /// volume-weighted mean material, reference for preconditioning
    pub reference: MaterialTensorSet,
    /// 32 global dofs per element
    conn: Vec<u32>,
    /// per-dof +-1 for Dirichlet identity rows (sign of the symmetrized block)
    fixed_sign: Vec<i8>,
    /// 27 offset-major slabs of 4x4 node blocks (16 f64 per node, zero where
    /// the neighbor leaves the grid): the assembled operator in stencil form,
    /// applied as 27 regular sweeps instead of an element gather/scatter
    stencil: Vec<Vec<f64>>,
}

impl AssembledOperator {
    pub fn new(
        grid: StructuredGrid3,
        materials: &[MaterialTensorSet],
        element_material: Vec<u16>,
        dofs: DofMap,
    ) -> Result<Self> {
        let ne = grid.element_count();
        if element_material.len() != ne {
            return Err(Error::invalid(format!(
                "element material map has {} entries for {} elements",
                element_material.len(),
                ne
            )));
        }
        if materials.is_empty() {
            return Err(Error::invalid("no materials supplied"));
        }
        if let Some(&bad) = element_material
            .iter()
            .find(|&&s| s as usize >= materials.len())
        {
            return Err(Error::invalid(format!(
                "element references material slot {bad}, only {} defined",
                materials.len()
            )));
        }
        if dofs.node_count != grid.node_count() {
            return Err(Error::invalid(format!(
                "dof map covers {} nodes, grid has {}",
                dofs.node_count,
                grid.node_count()
            )));
        }

        let h = grid.h;
        let elements = materials
            .iter()
            .map(|m| element_matrices(h, m))
            .collect::<Result<Vec<_>>>()?;

        // volume fractions per slot (uniform voxels: counts suffice)
        let mut counts = vec![0usize; materials.len()];
        for &s in &element_material {
            counts[s as usize] += 1;
        }
        let mut reference = MaterialTensorSet::zeros();
        for (slot, m) in materials.iter().enumerate() {
            let f = counts[slot] as f64 / ne as f64;
            reference.add_scaled(m, f);
        }
        let mut conn = Vec::with_capacity(32 * ne);
        for el in 0..ne {
            let nodes = grid.element_nodes(el);
            for &node in &nodes {
                for c in 0..4 {
                    conn.push((4 * node + c) as u32);
                }
            }
        }

        let kind = if dofs.count_slaves() > 0 {
            SystemKind::PeriodicTorus
        } else {
            SystemKind::DirichletBox
        };
        if kind == SystemKind::PeriodicTorus {
            // the torus solver fixes the constant null space by working in
            // the mean-free quotient; pinned values would conflict with that
            for d in 0..dofs.dof_count() {
                if matches!(dofs.constraint(d), DofConstraint::Fixed(_)) {
                    return Err(Error::invalid(
                        "periodic systems must not pin dofs; uniqueness comes from mean-free gauge",
                    ));
                }
            }
        }

        let mut fixed_sign = vec![0i8; dofs.dof_count()];
        for d in 0..dofs.dof_count() {
            if matches!(dofs.constraint(d), DofConstraint::Fixed(_)) {
                fixed_sign[d] = if d % 4 == 3 { -1 } else { 1 };
            }
        }

        let nn = grid.node_count();
        let mut stencil = vec![vec![0.0f64; 16 * nn]; 27];
        for el in 0..ne {
            let k = &elements[element_material[el] as usize];
            let nodes = grid.element_nodes(el);
            for a in 0..8 {
                let oa = HEX_OFFSETS[a];
                for b in 0..8 {
                    let ob = HEX_OFFSETS[b];
                    let o_idx = (ob[0] as i32 - oa[0] as i32 + 1)
                        + 3 * (ob[1] as i32 - oa[1] as i32 + 1)
                        + 9 * (ob[2] as i32 - oa[2] as i32 + 1);
                    let blk = k.node_block(a, b);
                    let dst = &mut stencil[o_idx as usize][16 * nodes[a]..16 * nodes[a] + 16];
                    for (d, v) in dst.iter_mut().zip(blk.iter()) {
                        *d += *v;
                    }
                }
            }
        }

        Ok(AssembledOperator {
            grid,
            dofs,
            kind,
            elements,
            element_material,
            reference,
            conn,
            fixed_sign,
            stencil,
        })
    }

    #[inline]
    pub fn element(&self, el: usize) -> &ElementMatrix {
        &self.elements[self.element_material[el] as usize]
    }

    #[inline]
    pub fn element_dofs(&self, el: usize) -> &[u32] {
        &self.conn[32 * el..32 * el + 32]
    }

    pub fn dof_count(&self) -> usize {
        4 * self.grid.node_count()
    }

    /// y = K x with no constraints applied: plain element-loop operator.
    pub fn raw_apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let npa = self.grid.nodes_per_axis();
        let (nx, ny, nz) = (npa[0], npa[1], npa[2]);
        for (o_idx, slab) in self.stencil.iter().enumerate() {
            let o = [
                (o_idx % 3) as isize - 1,
                ((o_idx / 3) % 3) as isize - 1,
                (o_idx / 9) as isize - 1,
            ];
            let d = o[0] + o[1] * nx as isize + o[2] * (nx * ny) as isize;
            let i0 = (-o[0]).max(0) as usize;
            let i1 = nx - o[0].max(0) as usize;
            let j0 = (-o[1]).max(0) as usize;
            let j1 = ny - o[1].max(0) as usize;
            let k0 = (-o[2]).max(0) as usize;
            let k1 = nz - o[2].max(0) as usize;
            for k in k0..k1 {
                for j in j0..j1 {
                    let row = nx * (j + ny * k);
                    for p in row + i0..row + i1 {
                        let q = (p as isize + d) as usize;
                        let s: &[f64; 16] = slab[16 * p..16 * p + 16].try_into().unwrap();
                        let xq: &[f64; 4] = x[4 * q..4 * q + 4].try_into().unwrap();
                        let yp = &mut y[4 * p..4 * p + 4];
                        for r in 0..4 {
                            yp[r] += s[4 * r] * xq[0]
                                + s[4 * r + 1] * xq[1]
                                + s[4 * r + 2] * xq[2]
                                + s[4 * r + 3] * xq[3];
                        }
                    }
                }
            }
        }
    }

    /// Add slave entries onto their masters and zero the slave slots.
    pub fn fold_slaves(&self, v: &mut [f64]) {
        for d in 0..v.len() {
            if let DofConstraint::Slave(m) = self.dofs.constraint(d) {
                v[m as usize] += v[d];
                v[d] = 0.0;
            }
        }
    }

    /// Copy master values onto slave slots.
    pub fn spread_masters(&self, v: &mut [f64]) {
        for d in 0..v.len() {
            if let DofConstraint::Slave(m) = self.dofs.constraint(d) {
                v[d] = v[m as usize];
            }
        }
    }

    /// y = A~ x for the constrained (identity-row Dirichlet, folded periodic)
    /// matrix that the solvers factorize or iterate on.
    pub fn constrained_apply(&self, x: &[f64], y: &mut [f64]) {
        let mut xin = x.to_vec();
        for (d, &s) in self.fixed_sign.iter().enumerate() {
            if s != 0 {
                xin[d] = 0.0;
            }
        }
        self.spread_masters(&mut xin);
        self.raw_apply(&xin, y);
        self.fold_slaves(y);
        for (d, &s) in self.fixed_sign.iter().enumerate() {
            if s != 0 {
                y[d] = s as f64 * x[d];
            } else if matches!(self.dofs.constraint(d), DofConstraint::Slave(_)) {
                y[d] = 0.0;
            }
        }
    }

    /// Build the reduced right-hand side: external load minus the couplings
    /// of the Dirichlet values, folded onto the master set, with the signed
    /// identity entries for fixed dofs.
    ///
    /// `dofs` supplies the Dirichlet values for this particular problem; its
    /// constraint shape must match the assembled one.
    pub fn condensed_rhs(&self, dofs: &DofMap, load: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_same_shape(dofs)?;
        let n = self.dof_count();
        let mut g = vec![0.0; n];
        let mut any_fixed = false;
        for d in 0..n {
            if let DofConstraint::Fixed(v) = dofs.constraint(d) {
                g[d] = v;
                any_fixed = any_fixed || v != 0.0;
            }
        }
        let mut b = vec![0.0; n];
        if any_fixed {
            self.raw_apply(&g, &mut b);
            for v in b.iter_mut() {
                *v = -*v;
            }
        }
        if let Some(f) = load {
            if f.len() != n {
                return Err(Error::invalid(format!(
                    "load vector has {} entries, expected {n}",
                    f.len()
                )));
            }
            for d in 0..n {
                b[d] += f[d];
            }
        }
        self.fold_slaves(&mut b);
        for d in 0..n {
            match dofs.constraint(d) {
                DofConstraint::Fixed(v) => b[d] = self.fixed_sign[d] as f64 * v,
                DofConstraint::Slave(_) => b[d] = 0.0,
                DofConstraint::Free => {}
            }
        }
        Ok(b)
    }

    /// Residual and rhs norms of the constrained system at `x`, reported
    /// for the worse of the two physical blocks: mechanical and potential
    /// rows are normed separately and the pair with the larger relative
    /// residual wins. A single Euclidean norm would let the mechanical
    /// equations (entries ~1e10 in SI units) mask arbitrarily bad potential
    /// equations (~1e-9). `x` must carry the Dirichlet values in its fixed
    /// slots; slave slots are excluded.
    pub fn residual_norm(&self, b: &[f64], x: &[f64]) -> (f64, f64) {
        let mut y = vec![0.0; b.len()];
        self.constrained_apply(x, &mut y);
        let mut rr = [0.0f64; 2];
        let mut bb = [0.0f64; 2];
        for d in 0..b.len() {
            if matches!(self.dofs.constraint(d), DofConstraint::Slave(_)) {
                continue;
            }
            let blk = (d % 4 == 3) as usize;
            let r = b[d] - y[d];
            rr[blk] += r * r;
            bb[blk] += b[d] * b[d];
        }
        let ratio = |r: f64, b: f64| {
            if b > 0.0 {
                r / b
            } else if r > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        let (rm, bm) = (rr[0].sqrt(), bb[0].sqrt());
        let (rp, bp) = (rr[1].sqrt(), bb[1].sqrt());
        if ratio(rp, bp) > ratio(rm, bm) {
            (rp, bp)
        } else {
            (rm, bm)
        }
    }

    pub(crate) fn fixed_sign(&self, dof: usize) -> i8 {
        self.fixed_sign[dof]
    }

    fn check_same_shape(&self, dofs: &DofMap) -> Result<()> {
        if dofs.node_count != self.dofs.node_count {
            return Err(Error::invalid("dof map size mismatch"));
        }
        // cheap structural check; full comparison only in debug builds
        if dofs.count_free() != self.dofs.count_free()
            || dofs.count_slaves() != self.dofs.count_slaves()
        {
            return Err(Error::invalid(
                "dof map constraint shape differs from the assembled system",
            ));
        }
        #[cfg(debug_assertions)]
        for d in 0..dofs.dof_count() {
            let same = matches!(
                (dofs.constraint(d), self.dofs.constraint(d)),
                (DofConstraint::Free, DofConstraint::Free)
                    | (DofConstraint::Fixed(_), DofConstraint::Fixed(_))
                    | (DofConstraint::Slave(_), DofConstraint::Slave(_))
            );
            debug_assert!(same, "constraint shape differs at dof {d}");
        }
        Ok(())
    }

    /// Assemble the solution field: solved master values plus the Dirichlet
    /// data, with slave slots filled from their masters.
    pub fn finalize_field(&self, dofs: &DofMap, mut x: Vec<f64>) -> CoupledField {
        for d in 0..x.len() {
            if let DofConstraint::Fixed(v) = dofs.constraint(d) {
                x[d] = v;
            }
        }
        self.spread_masters(&mut x);
        CoupledField {
            grid: self.grid,
            values: x,
        }
    }
}

/// A fully specified linear problem: operator, per-problem constraint
/// values, optional external load and the solve tolerance.
pub struct LinearSystem {
    pub op: AssembledOperator,
    pub load: Option<Vec<f64>>,
    pub rtol: f64,
}

impl LinearSystem {
    pub fn solve(&self) -> Result<CoupledField> {
        let handle = prepare(&self.op)?;
        solve_prepared(
            &self.op,
            &handle,
            &self.op.dofs,
            self.load.as_deref(),
            self.rtol,
        )
    }
}

/// Assemble a linear system for a structured grid with per-element material
/// slots. `body_load` is a constant mechanical volume force.
pub fn assemble(
    grid: StructuredGrid3,
    materials: &[MaterialTensorSet],
    element_material: Vec<u16>,
    dofs: DofMap,
    body_load: Option<[f64; 3]>,
) -> Result<LinearSystem> {
    let op = AssembledOperator::new(grid, materials, element_material, dofs)?;
    let load = body_load.map(|f| {
        let mut b = vec![0.0; op.dof_count()];
        let w = op.grid.h[0] * op.grid.h[1] * op.grid.h[2] / 8.0;
        for el in 0..op.grid.element_count() {
            for &node in &op.grid.element_nodes(el) {
                for i in 0..3 {
                    b[4 * node + i] += w * f[i];
                }
            }
        }
        b
    });
    Ok(LinearSystem {
        op,
        load,
        rtol: SOLVE_RTOL,
    })
}

/// Assemble a system over a voxel cell, mapping its phases to material
/// slots in ascending phase order.
pub fn assemble_cell(
    cell: &VoxelCell,
    dofs: DofMap,
    body_load: Option<[f64; 3]>,
) -> Result<LinearSystem> {
    let (materials, element_material) = cell.material_slots()?;
    assemble(cell.grid(), &materials, element_material, dofs, body_load)
}

/// A reusable solver: direct factorization or iterative context. Prepare
/// once, then solve many right-hand sides / Dirichlet value sets against
/// the same operator.
pub enum SolverHandle {
    Direct(ldl::BlockLdl),
    Iterative(fftprec::PeriodicSolver),
}

pub fn prepare(op: &AssembledOperator) -> Result<SolverHandle> {
    match op.kind {
        SystemKind::DirichletBox => Ok(SolverHandle::Direct(ldl::BlockLdl::factor(op)?)),
        SystemKind::PeriodicTorus => Ok(SolverHandle::Iterative(fftprec::PeriodicSolver::new(op)?)),
    }
}

/// Solve the constrained system for one set of Dirichlet values and an
/// optional external load, enforcing the residual contract.
pub fn solve_prepared(
    op: &AssembledOperator,
    handle: &SolverHandle,
    dofs: &DofMap,
    load: Option<&[f64]>,
    rtol: f64,
) -> Result<CoupledField> {
    let b = op.condensed_rhs(dofs, load)?;
    if b.iter().all(|&v| v == 0.0) {
        return Ok(op.finalize_field(dofs, vec![0.0; b.len()]));
    }
    let mut x = match handle {
        SolverHandle::Direct(f) => {
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            // iterative refinement against the constrained operator
            for _ in 0..4 {
                let (r, bn) = op.residual_norm(&b, &x);
                if r <= rtol * bn {
                    break;
                }
                let mut y = vec![0.0; b.len()];
                op.constrained_apply(&x, &mut y);
                let mut dr: Vec<f64> = b.iter().zip(&y).map(|(bi, yi)| bi - yi).collect();
                f.solve_in_place(&mut dr);
                for d in 0..x.len() {
                    x[d] += dr[d];
                }
            }
            x
        }
        SolverHandle::Iterative(p) => p.solve(op, &b, rtol)?,
    };
    let (r, bn) = op.residual_norm(&b, &x);
    let ok = if bn > 0.0 {
        r <= rtol * bn || r <= SOLVE_ATOL
    } else {
        r <= SOLVE_ATOL
    };
    if !ok {
        return Err(Error::Solver {
            context: format!("{:?} system, {} dofs", op.kind, op.dof_count()),
            residual: r / bn.max(f64::MIN_POSITIVE),
            iterations: 0,
            tolerance: rtol,
        });
    }
    // exact Dirichlet values and periodic copies
    for d in 0..x.len() {
        if let DofConstraint::Fixed(v) = dofs.constraint(d) {
            x[d] = v;
        }
    }
    Ok(op.finalize_field(dofs, x))
}
