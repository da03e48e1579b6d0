//! Structured voxel grids: unit cells, sampling boxes, macro meshes, and the
//! degree-of-freedom constraint bookkeeping shared by every solve.
//!
//! Conventions used everywhere downstream:
//! - voxel and node storage is x-fastest: index = i + nx*(j + ny*k);
//! - each node carries 4 DOFs in the order u1, u2, u3, phi, so
//!   dof = 4*node + component;
//! - element-local node order is the usual hexahedron cycle (0,0,0), (1,0,0),
//!   (1,1,0), (0,1,0), then the same square shifted one layer in z.

use crate::materials::MaterialTensorSet;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How a cell's phase array came to be; carried along for output provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellProvenance {
    /// Pattern supplied directly (e.g. imported from a voxel file).
    Unit,
    Homogeneous,
    Fiber {
        r_frac: f64,
    },
    Laminate {
        fraction: f64,
        axis: usize,
    },
    /// Sampling box cut from a periodic pattern.
    Sample {
        x_alpha: [f64; 3],
        delta: f64,
        epsilon: f64,
        /// false when delta is not an integer multiple of epsilon
        integer_multiple: bool,
    },
}

/// Cubic structured grid of material voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelCell {
    /// voxels per edge
    pub n: usize,
    /// physical edge length, m (the period for a unit cell, delta for a sample)
    pub edge_length: f64,
    /// physical coordinates of the low corner, m
    pub origin: [f64; 3],
    /// n^3 phase ids, x-fastest
    pub phase: Vec<u8>,
    pub phase_materials: BTreeMap<u8, MaterialTensorSet>,
    pub provenance: CellProvenance,
}

impl VoxelCell {
    fn validated(self) -> Result<Self> {
        if self.n < 2 {
            return Err(Error::geometry(format!(
                "cell needs at least 2 voxels per edge, got {}",
                self.n
            )));
        }
        if self.edge_length <= 0.0 {
            return Err(Error::geometry("cell edge length must be positive"));
        }
        for p in &self.phase {
            if !self.phase_materials.contains_key(p) {
                return Err(Error::geometry(format!(
                    "phase id {p} has no registered material"
                )));
            }
        }
        Ok(self)
    }

    /// Voxel edge length.
    #[inline]
    pub fn h(&self) -> f64 {
        self.edge_length / self.n as f64
    }

    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn phase_at(&self, i: usize, j: usize, k: usize) -> u8 {
        self.phase[self.voxel_index(i, j, k)]
    }

    /// Physical center of voxel (i, j, k).
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.h();
        [
            self.origin[0] + (i as f64 + 0.5) * h,
            self.origin[1] + (j as f64 + 0.5) * h,
            self.origin[2] + (k as f64 + 0.5) * h,
        ]
    }

    pub fn material_for(&self, phase: u8) -> Result<&MaterialTensorSet> {
        self.phase_materials
            .get(&phase)
            .ok_or_else(|| Error::geometry(format!("phase id {phase} has no registered material")))
    }

    /// Volume fraction of one phase id.
    pub fn fraction_of(&self, phase: u8) -> f64 {
        let hits = self.phase.iter().filter(|p| **p == phase).count();
        hits as f64 / self.phase.len() as f64
    }

    /// The node/element grid this cell induces.
    pub fn grid(&self) -> StructuredGrid3 {
        let h = self.h();
        StructuredGrid3 {
            nel: [self.n, self.n, self.n],
            origin: self.origin,
            h: [h, h, h],
        }
    }

    /// Distinct materials in ascending phase order plus the per-voxel slot
    /// map, the form element assembly consumes.
    pub fn material_slots(&self) -> Result<(Vec<MaterialTensorSet>, Vec<u16>)> {
        let mut ids: Vec<u8> = self.phase_materials.keys().copied().collect();
        ids.sort_unstable();
        let mut lookup = [u16::MAX; 256];
        let mut materials = Vec::with_capacity(ids.len());
        for (slot, &phase) in ids.iter().enumerate() {
            lookup[phase as usize] = slot as u16;
            materials.push(self.phase_materials[&phase].clone());
        }
        let mut element_material = Vec::with_capacity(self.phase.len());
        for &p in &self.phase {
            let s = lookup[p as usize];
            if s == u16::MAX {
                return Err(Error::geometry(format!(
                    "voxel references unregistered phase {p}"
                )));
            }
            element_material.push(s);
        }
        Ok((materials, element_material))
    }

    /// Same pattern re-anchored at a new physical scale and position.
    pub fn rescaled(&self, edge_length: f64, origin: [f64; 3]) -> VoxelCell {
        VoxelCell {
            edge_length,
            origin,
            ..self.clone()
        }
    }
}

/// Single-phase cell.
pub fn build_homogeneous_cell(n: usize, mat: MaterialTensorSet) -> Result<VoxelCell> {
    let mut phase_materials = BTreeMap::new();
    phase_materials.insert(0u8, mat);
    VoxelCell {
        n,
        edge_length: 1.0,
        origin: [0.0; 3],
        phase: vec![0u8; n * n * n],
        phase_materials,
        provenance: CellProvenance::Homogeneous,
    }
    .validated()
}

/// Cylindrical fiber along axis 3, centered in the cell.
///
/// A voxel belongs to the fiber (phase 1) iff its center's in-plane distance
/// to the cell center is below r_frac * edge. Membership is by center only;
/// no sub-voxel fractions.
pub fn build_fiber_cell(
    n: usize,
    r_frac: f64,
    fiber_mat: MaterialTensorSet,
    matrix_mat: MaterialTensorSet,
) -> Result<VoxelCell> {
    if !(0.0..0.5).contains(&r_frac) {
        return Err(Error::geometry(format!(
            "fiber radius fraction must lie in [0, 0.5), got {r_frac} (fibers of neighboring periods would touch)"
        )));
    }
    let mut phase = vec![0u8; n * n * n];
    let r = r_frac * n as f64; // in voxel units
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let dx = i as f64 + 0.5 - n as f64 / 2.0;
                let dy = j as f64 + 0.5 - n as f64 / 2.0;
                if (dx * dx + dy * dy).sqrt() < r {
                    phase[i + n * (j + n * k)] = 1;
                }
            }
        }
    }
    let mut phase_materials = BTreeMap::new();
    phase_materials.insert(0u8, matrix_mat);
    phase_materials.insert(1u8, fiber_mat);
    VoxelCell {
        n,
        edge_length: 1.0,
        origin: [0.0; 3],
        phase,
        phase_materials,
        provenance: CellProvenance::Fiber { r_frac },
    }
    .validated()
}

/// Two-layer laminate with layers normal to `axis` (0-based). Phase 1 fills
/// [0, fraction) of the edge, phase 0 the rest. With fraction * n integral the
/// interface is voxel-exact.
pub fn build_laminate_cell(
    n: usize,
    fraction: f64,
    axis: usize,
    mat_a: MaterialTensorSet,
    mat_b: MaterialTensorSet,
) -> Result<VoxelCell> {
    if axis > 2 {
        return Err(Error::invalid(format!(
            "laminate axis must be 0..=2, got {axis}"
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::geometry(format!(
            "laminate fraction must lie in [0,1], got {fraction}"
        )));
    }
    let mut phase = vec![0u8; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let along = [i, j, k][axis] as f64 + 0.5;
                if along < fraction * n as f64 {
                    phase[i + n * (j + n * k)] = 1;
                }
            }
        }
    }
    let mut phase_materials = BTreeMap::new();
    phase_materials.insert(0u8, mat_b);
    phase_materials.insert(1u8, mat_a);
    VoxelCell {
        n,
        edge_length: 1.0,
        origin: [0.0; 3],
        phase,
        phase_materials,
        provenance: CellProvenance::Laminate { fraction, axis },
    }
    .validated()
}

/// Cut a sampling box of edge `delta` centered at `x_alpha` out of the
/// periodic extension of `pattern`, at `n_sub` voxels per period.
///
/// Voxel phases are looked up by absolute voxel-center coordinate reduced mod
/// the period, so shifted boxes honor the global pattern rather than
/// restarting it at the box corner. With delta = k * epsilon the result has
/// k * n_sub voxels per edge; other ratios are allowed but marked
/// non-integer in the provenance (the box then cuts partial periods).
pub fn cut_sample(
    pattern: &VoxelCell,
    x_alpha: [f64; 3],
    delta: f64,
    n_sub: usize,
) -> Result<VoxelCell> {
    if delta <= 0.0 {
        return Err(Error::invalid(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if n_sub < 2 {
        return Err(Error::invalid(format!(
            "sample resolution must be at least 2 voxels per period, got {n_sub}"
        )));
    }
    let eps = pattern.edge_length;
    let ratio = delta / eps;
    let k_round = ratio.round();
    let integer_multiple = k_round >= 1.0 && (ratio - k_round).abs() <= 1e-9 * ratio.max(1.0);
    let m = if integer_multiple {
        k_round as usize * n_sub
    } else {
        (ratio * n_sub as f64).ceil() as usize
    };
    let origin = [
        x_alpha[0] - 0.5 * delta,
        x_alpha[1] - 0.5 * delta,
        x_alpha[2] - 0.5 * delta,
    ];
    let h = delta / m as f64;
    let np = pattern.n;
    let mut phase = vec![0u8; m * m * m];
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let mut idx = [0usize; 3];
                for (axis, &ii) in [i, j, k].iter().enumerate() {
                    let x = origin[axis] + (ii as f64 + 0.5) * h;
                    let mut y = ((x - pattern.origin[axis]) / eps).rem_euclid(1.0);
                    if y >= 1.0 {
                        y = 0.0;
                    }
                    idx[axis] = ((y * np as f64) as usize).min(np - 1);
                }
                phase[i + m * (j + m * k)] = pattern.phase_at(idx[0], idx[1], idx[2]);
            }
        }
    }
    VoxelCell {
        n: m,
        edge_length: delta,
        origin,
        phase,
        phase_materials: pattern.phase_materials.clone(),
        provenance: CellProvenance::Sample {
            x_alpha,
            delta,
            epsilon: eps,
            integer_multiple,
        },
    }
    .validated()
}

/// Parse the plain-text voxel pattern format: two leading tokens n and
/// edge_length, then n^3 whitespace-separated phase ids, x-fastest.
pub fn parse_voxel_pattern(
    text: &str,
    phase_materials: BTreeMap<u8, MaterialTensorSet>,
) -> Result<VoxelCell> {
    let mut tokens = text.split_whitespace();
    let n: usize = tokens
        .next()
        .ok_or_else(|| Error::invalid("voxel pattern: missing voxel count"))?
        .parse()
        .map_err(|_| Error::invalid("voxel pattern: voxel count is not an integer"))?;
    let edge_length: f64 = tokens
        .next()
        .ok_or_else(|| Error::invalid("voxel pattern: missing edge length"))?
        .parse()
        .map_err(|_| Error::invalid("voxel pattern: edge length is not a number"))?;
    let mut phase = Vec::with_capacity(n * n * n);
    for tok in tokens {
        let id: u8 = tok
            .parse()
            .map_err(|_| Error::invalid(format!("voxel pattern: bad phase id {tok:?}")))?;
        phase.push(id);
    }
    if phase.len() != n * n * n {
        return Err(Error::invalid(format!(
            "voxel pattern: expected {} phase ids, got {}",
            n * n * n,
            phase.len()
        )));
    }
    VoxelCell {
        n,
        edge_length,
        origin: [0.0; 3],
        phase,
        phase_materials,
        provenance: CellProvenance::Unit,
    }
    .validated()
}

/// Render a cell in the voxel pattern text format (one z-slab per line group).
pub fn format_voxel_pattern(cell: &VoxelCell) -> String {
    let mut out = format!("{} {:e}\n", cell.n, cell.edge_length);
    for k in 0..cell.n {
        for j in 0..cell.n {
            let row: Vec<String> = (0..cell.n)
                .map(|i| cell.phase_at(i, j, k).to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Structured hexahedral element grid: `nel` elements per axis, uniform
/// spacing `h` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid3 {
    pub nel: [usize; 3],
    pub origin: [f64; 3],
    pub h: [f64; 3],
}

/// Local node offsets of the hexahedron, matching the shape-function order.
pub const HEX_OFFSETS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

impl StructuredGrid3 {
    pub fn nodes_per_axis(&self) -> [usize; 3] {
        [self.nel[0] + 1, self.nel[1] + 1, self.nel[2] + 1]
    }

    pub fn node_count(&self) -> usize {
        let n = self.nodes_per_axis();
        n[0] * n[1] * n[2]
    }

    pub fn element_count(&self) -> usize {
        self.nel[0] * self.nel[1] * self.nel[2]
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.nodes_per_axis();
        i + n[0] * (j + n[1] * k)
    }

    /// Inverse of [`Self::node_index`].
    pub fn node_ijk(&self, node: usize) -> [usize; 3] {
        let n = self.nodes_per_axis();
        let i = node % n[0];
        let j = (node / n[0]) % n[1];
        let k = node / (n[0] * n[1]);
        [i, j, k]
    }

    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let [i, j, k] = self.node_ijk(node);
        [
            self.origin[0] + i as f64 * self.h[0],
            self.origin[1] + j as f64 * self.h[1],
            self.origin[2] + k as f64 * self.h[2],
        ]
    }

    #[inline]
    pub fn element_index(&self, ex: usize, ey: usize, ez: usize) -> usize {
        ex + self.nel[0] * (ey + self.nel[1] * ez)
    }

    pub fn element_ijk(&self, el: usize) -> [usize; 3] {
        let i = el % self.nel[0];
        let j = (el / self.nel[0]) % self.nel[1];
        let k = el / (self.nel[0] * self.nel[1]);
        [i, j, k]
    }

    /// Global node ids of an element in local order.
    pub fn element_nodes(&self, el: usize) -> [usize; 8] {
        let [ex, ey, ez] = self.element_ijk(el);
        let mut out = [0usize; 8];
        for (a, off) in HEX_OFFSETS.iter().enumerate() {
            out[a] = self.node_index(ex + off[0], ey + off[1], ez + off[2]);
        }
        out
    }

    /// True when the node lies on the outer boundary.
    pub fn is_boundary_node(&self, node: usize) -> bool {
        let [i, j, k] = self.node_ijk(node);
        let n = self.nodes_per_axis();
        i == 0 || j == 0 || k == 0 || i == n[0] - 1 || j == n[1] - 1 || k == n[2] - 1
    }
}

/// Macroscopic structured mesh over a box domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMesh {
    pub divisions: [usize; 3],
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
}

impl MacroMesh {
    pub fn new(divisions: [usize; 3], box_min: [f64; 3], box_max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if divisions[a] < 1 {
                return Err(Error::geometry(
                    "macro mesh needs at least 1 division per axis",
                ));
            }
            if box_max[a] <= box_min[a] {
                return Err(Error::geometry("macro mesh box must have positive extent"));
            }
        }
        Ok(MacroMesh {
            divisions,
            box_min,
            box_max,
        })
    }

    /// Unit cube with equal divisions.
    pub fn unit(divisions: usize) -> Self {
        MacroMesh {
            divisions: [divisions; 3],
            box_min: [0.0; 3],
            box_max: [1.0; 3],
        }
    }

    pub fn grid(&self) -> StructuredGrid3 {
        StructuredGrid3 {
            nel: self.divisions,
            origin: self.box_min,
            h: [
                (self.box_max[0] - self.box_min[0]) / self.divisions[0] as f64,
                (self.box_max[1] - self.box_min[1]) / self.divisions[1] as f64,
                (self.box_max[2] - self.box_min[2]) / self.divisions[2] as f64,
            ],
        }
    }

    /// Barycenter of a macro element.
    pub fn element_barycenter(&self, el: usize) -> [f64; 3] {
        let g = self.grid();
        let [i, j, k] = g.element_ijk(el);
        [
            g.origin[0] + (i as f64 + 0.5) * g.h[0],
            g.origin[1] + (j as f64 + 0.5) * g.h[1],
            g.origin[2] + (k as f64 + 0.5) * g.h[2],
        ]
    }
}

/// Per-DOF constraint state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofConstraint {
    Free,
    /// Dirichlet value, enforced exactly.
    Fixed(f64),
    /// Periodic slave pointing at its master DOF.
    Slave(u32),
}

/// Constraint map over all 4*nodes DOFs of a grid.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub node_count: usize,
    status: Vec<DofConstraint>,
}

/// Boundary faces of a box grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMinus,
        Face::XPlus,
        Face::YMinus,
        Face::YPlus,
        Face::ZMinus,
        Face::ZPlus,
    ];

    /// (axis, node-index on that axis selecting the face)
    pub fn axis_and_layer(&self, grid: &StructuredGrid3) -> (usize, usize) {
        let n = grid.nodes_per_axis();
        match self {
            Face::XMinus => (0, 0),
            Face::XPlus => (0, n[0] - 1),
            Face::YMinus => (1, 0),
            Face::YPlus => (1, n[1] - 1),
            Face::ZMinus => (2, 0),
            Face::ZPlus => (2, n[2] - 1),
        }
    }
}

impl DofMap {
    pub fn all_free(node_count: usize) -> Self {
        DofMap {
            node_count,
            status: vec![DofConstraint::Free; 4 * node_count],
        }
    }

    #[inline]
    pub fn dof(node: usize, comp: usize) -> usize {
        4 * node + comp
    }

    pub fn dof_count(&self) -> usize {
        self.status.len()
    }

    #[inline]
    pub fn constraint(&self, dof: usize) -> DofConstraint {
        self.status[dof]
    }

    /// Fix one DOF to a value. Fixing a slave is rejected; re-fixing a fixed
    /// DOF overwrites (later boundary faces win, which makes the face
    /// application order part of the problem definition).
    pub fn set_dirichlet(&mut self, dof: usize, value: f64) -> Result<()> {
        match self.status[dof] {
            DofConstraint::Slave(_) => Err(Error::invalid(format!(
                "dof {dof} is a periodic slave and cannot take Dirichlet data"
            ))),
            _ => {
                self.status[dof] = DofConstraint::Fixed(value);
                Ok(())
            }
        }
    }

    /// Slave one DOF to a master. The master must not itself be a slave.
    pub fn set_slave(&mut self, dof: usize, master: usize) -> Result<()> {
        if dof == master {
            return Err(Error::invalid("a DOF cannot be slaved to itself"));
        }
        if let DofConstraint::Slave(_) = self.status[master] {
            return Err(Error::invalid("chained periodic slaving is not allowed"));
        }
        match self.status[dof] {
            DofConstraint::Fixed(_) => Err(Error::invalid(format!(
                "dof {dof} already carries Dirichlet data and cannot be slaved"
            ))),
            _ => {
                self.status[dof] = DofConstraint::Slave(master as u32);
                Ok(())
            }
        }
    }

    /// Resolve a DOF through at most one level of slaving.
    #[inline]
    pub fn resolve(&self, dof: usize) -> usize {
        match self.status[dof] {
            DofConstraint::Slave(m) => m as usize,
            _ => dof,
        }
    }

    pub fn count_free(&self) -> usize {
        self.status
            .iter()
            .filter(|s| matches!(s, DofConstraint::Free))
            .count()
    }

    pub fn count_slaves(&self) -> usize {
        self.status
            .iter()
            .filter(|s| matches!(s, DofConstraint::Slave(_)))
            .count()
    }

    /// Apply `value` to component `comp` of every node on a face.
    pub fn set_face_dirichlet(
        &mut self,
        grid: &StructuredGrid3,
        face: Face,
        comp: usize,
        value: f64,
    ) -> Result<()> {
        let (axis, layer) = face.axis_and_layer(grid);
        let n = grid.nodes_per_axis();
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    if [i, j, k][axis] == layer {
                        self.set_dirichlet(Self::dof(grid.node_index(i, j, k), comp), value)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Periodic identification for a cubic cell grid: every node on a +face is
/// slaved (all 4 components) to its image on the opposite face, so corner and
/// edge nodes resolve to the single low-corner master. No node is pinned: the
/// constant-per-component null space is handled by the solver, which works in
/// the mean-free quotient and returns fields with zero component means over
/// the master lattice.
///
/// # Output
/// A DofMap with (n+1)^3 - n^3 slave nodes and no constrained DOFs.
pub fn periodic_pairs(cell: &VoxelCell) -> Result<DofMap> {
    let grid = cell.grid();
    let n = cell.n;
    let mut dofs = DofMap::all_free(grid.node_count());
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                let (mi, mj, mk) = (i % n, j % n, k % n);
                if (mi, mj, mk) != (i, j, k) {
                    let node = grid.node_index(i, j, k);
                    let master = grid.node_index(mi, mj, mk);
                    for comp in 0..4 {
                        dofs.set_slave(DofMap::dof(node, comp), DofMap::dof(master, comp))?;
                    }
                }
            }
        }
    }
    Ok(dofs)
}
