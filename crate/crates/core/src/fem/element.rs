//! Element stiffness matrices for the coupled trilinear hexahedron.

use crate::materials::MaterialTensorSet;
use crate::Result;

/// 1D Gauss point of the 2-point rule, +-1/sqrt(3). Exact for the
/// polynomial degrees produced by trilinear gradients on a voxel.
pub const GAUSS_1D: f64 = 0.577_350_269_189_625_8;

/// Coupled element matrix of one voxel, stored as the symmetric
/// quasi-definite 32x32 node-major matrix (dielectric block negated).
/// Local dof = 4*node + comp with comp 0..2 = displacement, 3 = potential.
#[derive(Debug, Clone)]
pub struct ElementMatrix {
    pub k: [[f64; 32]; 32],
}

impl ElementMatrix {
    /// Mechanical block, 24x24, rows/cols ordered (node, component).
    pub fn k_uu(&self) -> [[f64; 24]; 24] {
        let mut out = [[0.0; 24]; 24];
        for a in 0..8 {
            for i in 0..3 {
                for b in 0..8 {
                    for j in 0..3 {
                        out[3 * a + i][3 * b + j] = self.k[4 * a + i][4 * b + j];
                    }
                }
            }
        }
        out
    }

    /// Coupling block, 24x8: mechanical rows against potential columns.
    pub fn k_uphi(&self) -> [[f64; 8]; 24] {
        let mut out = [[0.0; 8]; 24];
        for a in 0..8 {
            for i in 0..3 {
                for b in 0..8 {
                    out[3 * a + i][b] = self.k[4 * a + i][4 * b + 3];
                }
            }
        }
        out
    }

    /// Dielectric block, 8x8 positive semi-definite (the sign flip of the
    /// symmetrized storage is undone here).
    pub fn k_phiphi(&self) -> [[f64; 8]; 8] {
        let mut out = [[0.0; 8]; 8];
        for a in 0..8 {
            for b in 0..8 {
                out[a][b] = -self.k[4 * a + 3][4 * b + 3];
            }
        }
        out
    }

    /// Largest absolute asymmetry of the stored matrix.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..32 {
            for q in (p + 1)..32 {
                worst = worst.max((self.k[p][q] - self.k[q][p]).abs());
            }
        }
        worst
    }

    /// y += K x for element-local vectors.
    #[inline]
    pub fn mulvec_add(&self, x: &[f64; 32], y: &mut [f64; 32]) {
        for p in 0..32 {
            let row = &self.k[p];
            let mut s = 0.0;
            for q in 0..32 {
                s += row[q] * x[q];
            }
            y[p] += s;
        }
    }

    /// 4x4 node block (a, b), row-major.
    #[inline]
    pub fn node_block(&self, a: usize, b: usize) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[4 * i + j] = self.k[4 * a + i][4 * b + j];
            }
        }
        out
    }
}

/// Integrate the element matrices of a voxel with edge lengths `h` filled
/// with material `m`. The 2x2x2 Gauss rule is exact here because the
/// coefficients are constant per voxel.
///
/// Entries follow the weak form of the constitutive law
/// sigma = c grad_s u + e grad phi, d = e grad_s u - eps grad phi. The
/// result is the stationarity system of the coupled saddle functional:
/// couplings are transposes of each other and only the dielectric block
/// carries a minus sign, so the stored matrix is exactly symmetric.
pub fn element_matrices(h: [f64; 3], m: &MaterialTensorSet) -> Result<ElementMatrix> {
    if h.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(crate::Error::invalid(format!(
            "element edge lengths must be positive and finite, got {h:?}"
        )));
    }
    let c = m.c_tensor();
    let e = m.e_tensor();
    let eps = &m.eps;
    let shapes = super::gauss_points();
    let scale = [2.0 / h[0], 2.0 / h[1], 2.0 / h[2]];
    let w = h[0] * h[1] * h[2] / 8.0;

    let mut k = [[0.0f64; 32]; 32];
    for sh in shapes.iter() {
        // physical gradients of the 8 shape functions at this point
        let mut g = [[0.0f64; 3]; 8];
        for a in 0..8 {
            for ax in 0..3 {
                g[a][ax] = sh.dn[a][ax] * scale[ax];
            }
        }
        for a in 0..8 {
            for b in 0..8 {
                // K_uu[(a,i),(b,l)] += w * c[i][j][l][n] g[a][j] g[b][n]
                for i in 0..3 {
                    for l in 0..3 {
                        let mut s = 0.0;
                        for j in 0..3 {
                            for n in 0..3 {
                                s += c[i][j][l][n] * g[a][j] * g[b][n];
                            }
                        }
                        k[4 * a + i][4 * b + l] += w * s;
                    }
                }
                // K_uphi[(a,i), b] += w * e[k][i][j] g[a][j] g[b][k]
                for i in 0..3 {
                    let mut s = 0.0;
                    for j in 0..3 {
                        for kk in 0..3 {
                            s += e[kk][i][j] * g[a][j] * g[b][kk];
                        }
                    }
                    k[4 * a + i][4 * b + 3] += w * s;
                }
                // K_phiu[a,(b,l)] += w * e[i][l][n] g[a][i] g[b][n]; this is
                // K_uphi^T, entering with a plus sign in the saddle form
                for l in 0..3 {
                    let mut s = 0.0;
                    for i in 0..3 {
                        for n in 0..3 {
                            s += e[i][l][n] * g[a][i] * g[b][n];
                        }
                    }
                    k[4 * a + 3][4 * b + l] += w * s;
                }
                // K_phiphi[a,b] += w * eps[i][j] g[a][i] g[b][j], negated
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += eps[i][j] * g[a][i] * g[b][j];
                    }
                }
                k[4 * a + 3][4 * b + 3] -= w * s;
            }
        }
    }
    Ok(ElementMatrix { k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials;

    #[test]
    fn symmetrized_storage_is_symmetric() {
        let m = materials::from_transversely_isotropic(&materials::pzt5_params()).unwrap();
        let k = element_matrices([0.25, 0.5, 1.0], &m).unwrap();
        let scale = k.k.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        // rounding-level only: an asymmetry of coupling-block size would mean
        // a sign error in the saddle arrangement
        assert!(
            k.asymmetry() <= 1e-12 * scale,
            "asymmetry {}",
            k.asymmetry()
        );
    }

    #[test]
    fn unit_cube_identity_permittivity_diagonal() {
        // For a unit voxel with eps = I and no coupling the dielectric
        // diagonal entries are exactly 1/3.
        let mut m = materials::from_transversely_isotropic(&materials::polymer_params()).unwrap();
        m.eps = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let k = element_matrices([1.0, 1.0, 1.0], &m).unwrap();
        let kpp = k.k_phiphi();
        for a in 0..8 {
            assert!((kpp[a][a] - 1.0 / 3.0).abs() < 1e-14, "got {}", kpp[a][a]);
        }
    }

    #[test]
    fn rigid_motion_in_nullspace() {
        let m = materials::from_transversely_isotropic(&materials::pzt5_params()).unwrap();
        let k = element_matrices([0.125, 0.125, 0.125], &m).unwrap();
        // constant displacement + constant potential produce zero generalized force
        let mut x = [0.0f64; 32];
        for a in 0..8 {
            x[4 * a] = 1.0;
            x[4 * a + 1] = -2.0;
            x[4 * a + 2] = 0.5;
            x[4 * a + 3] = 3.0;
        }
        let mut y = [0.0f64; 32];
        k.mulvec_add(&x, &mut y);
        let worst = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-4, "rigid motion residual {worst}"); // entries ~1e10
    }
}
