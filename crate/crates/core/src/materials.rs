//! Material tensor sets in Voigt notation and their structural checks.
//!
//! Storage convention: the stiffness `c` is the 6x6 Voigt contraction of
//! c_ijkl with pair order 11, 22, 33, 23, 13, 12. Strain vectors carry
//! engineering shears (gamma = 2 s), so `c` multiplies strain without extra
//! factors and every Voigt entry equals the corresponding tensor component.
//! The piezoelectric array `e` stores e_kij as 3x6 (field axis k by strain
//! pair), the permittivity `eps` is a plain symmetric 3x3. Units are SI
//! throughout: Pa, C/m^2, F/m.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Voigt pair order: slot -> (i, j), 0-based axes.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Seed for the sampled positive-definiteness test; fixed so reports are
/// reproducible run to run.
pub const DEFAULT_PD_SEED: u64 = 0x70ab_5c1d;

/// Number of sampled directions in the positive-definiteness test.
pub const PD_SAMPLES: usize = 256;

/// Voigt index of an axis pair, 1-based on both sides: (1,1) -> 1,
/// (2,3) -> 4, (2,1) -> 6.
///
/// # Input
/// `i`, `j` axis indices in 1..=3.
pub fn voigt_map(i: usize, j: usize) -> Result<usize> {
    if !(1..=3).contains(&i) || !(1..=3).contains(&j) {
        return Err(Error::invalid(format!(
            "voigt_map axes must lie in 1..=3, got ({i},{j})"
        )));
    }
    Ok(vm(i - 1, j - 1) + 1)
}

/// 0-based Voigt slot of a 0-based axis pair. Internal workhorse.
#[inline]
pub(crate) const fn vm(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) | (2, 1) => 3,
        (0, 2) | (2, 0) => 4,
        (0, 1) | (1, 0) => 5,
        _ => panic!("axis index out of range"),
    }
}

/// One phase's (c, e, eps) in Voigt storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialTensorSet {
    /// Elastic moduli, Pa. Symmetric 6x6.
    pub c: [[f64; 6]; 6],
    /// Piezoelectric constants e_kij, C/m^2. Row = field axis, column = strain pair.
    pub e: [[f64; 6]; 3],
    /// Permittivities, F/m. Symmetric 3x3.
    pub eps: [[f64; 3]; 3],
}

/// The 11 independent coefficients of a transversely isotropic piezoelectric
/// phase, symmetry axis 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverselyIsotropicParams {
    pub c11: f64,
    pub c12: f64,
    pub c13: f64,
    pub c33: f64,
    pub c44: f64,
    pub c66: f64,
    pub e15: f64,
    pub e13: f64,
    pub e33: f64,
    pub eps11: f64,
    pub eps33: f64,
}

impl TransverselyIsotropicParams {
    /// All diagonal moduli must be positive for the phase to be admissible.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("c11", self.c11),
            ("c33", self.c33),
            ("c44", self.c44),
            ("c66", self.c66),
            ("eps11", self.eps11),
            ("eps33", self.eps33),
        ];
        for (name, v) in checks {
            if v <= 0.0 {
                return Err(Error::Validation(format!(
                    "{name} must be positive, got {v:e}"
                )));
            }
        }
        Ok(())
    }
}

/// PZT-5 piezoceramic constants (SI).
pub fn pzt5_params() -> TransverselyIsotropicParams {
    TransverselyIsotropicParams {
        c11: 12.1e10,
        c12: 7.54e10,
        c13: 7.52e10,
        c33: 11.1e10,
        c44: 2.11e10,
        c66: 2.28e10,
        e15: 12.3,
        e13: -5.4,
        e33: 15.8,
        eps11: 8.11e-9,
        eps33: 7.35e-9,
    }
}

/// Soft isotropic polymer matrix constants (SI). No piezoelectric coupling.
pub fn polymer_params() -> TransverselyIsotropicParams {
    TransverselyIsotropicParams {
        c11: 0.386e10,
        c12: 0.257e10,
        c13: 0.257e10,
        c33: 0.386e10,
        c44: 0.064e10,
        c66: 0.064e10,
        e15: 0.0,
        e13: 0.0,
        e33: 0.0,
        eps11: 7.965e-11,
        eps33: 7.965e-11,
    }
}

/// Build the full tensor set of a transversely isotropic phase.
///
/// The layout matches the coupled constitutive matrix: c11 pairs the in-plane
/// normal slots, c44 the 23/13 shears, c66 the 12 shear; e15 couples the
/// in-plane field axes to the matching shears, e13/e33 couple the symmetry
/// axis to the normal strains.
pub fn from_transversely_isotropic(p: &TransverselyIsotropicParams) -> Result<MaterialTensorSet> {
    p.validate()?;
    let mut c = [[0.0; 6]; 6];
    c[0][0] = p.c11;
    c[1][1] = p.c11;
    c[2][2] = p.c33;
    c[0][1] = p.c12;
    c[1][0] = p.c12;
    c[0][2] = p.c13;
    c[2][0] = p.c13;
    c[1][2] = p.c13;
    c[2][1] = p.c13;
    c[3][3] = p.c44;
    c[4][4] = p.c44;
    c[5][5] = p.c66;

    let mut e = [[0.0; 6]; 3];
    e[0][4] = p.e15;
    e[1][3] = p.e15;
    e[2][0] = p.e13;
    e[2][1] = p.e13;
    e[2][2] = p.e33;

    let eps = [
        [p.eps11, 0.0, 0.0],
        [0.0, p.eps11, 0.0],
        [0.0, 0.0, p.eps33],
    ];

    Ok(MaterialTensorSet { c, e, eps })
}

impl MaterialTensorSet {
    /// Full-tensor component c_ijkl, 0-based axes.
    #[inline]
    pub fn c_full(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[vm(i, j)][vm(k, l)]
    }

    /// Full-tensor component e_kij, 0-based axes (k = field axis).
    #[inline]
    pub fn e_full(&self, k: usize, i: usize, j: usize) -> f64 {
        self.e[k][vm(i, j)]
    }

    /// Stiffness expanded to the full rank-4 array.
    pub fn c_tensor(&self) -> [[[[f64; 3]; 3]; 3]; 3] {
        let mut out = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        out[i][j][k][l] = self.c_full(i, j, k, l);
                    }
                }
            }
        }
        out
    }

    /// Coupling expanded to the full rank-3 array, e[k][i][j].
    pub fn e_tensor(&self) -> [[[f64; 3]; 3]; 3] {
        let mut out = [[[0.0; 3]; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    out[k][i][j] = self.e_full(k, i, j);
                }
            }
        }
        out
    }

    pub fn zeros() -> Self {
        MaterialTensorSet {
            c: [[0.0; 6]; 6],
            e: [[0.0; 6]; 3],
            eps: [[0.0; 3]; 3],
        }
    }

    /// self += f * other, entrywise on all three tensors.
    pub fn add_scaled(&mut self, other: &MaterialTensorSet, f: f64) {
        for i in 0..6 {
            for j in 0..6 {
                self.c[i][j] += f * other.c[i][j];
            }
        }
        for k in 0..3 {
            for j in 0..6 {
                self.e[k][j] += f * other.e[k][j];
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                self.eps[i][j] += f * other.eps[i][j];
            }
        }
    }

    /// Copy with the piezoelectric coupling removed.
    pub fn without_coupling(&self) -> MaterialTensorSet {
        MaterialTensorSet {
            c: self.c,
            e: [[0.0; 6]; 3],
            eps: self.eps,
        }
    }

    /// True when the coupling block is identically zero.
    pub fn is_decoupled(&self) -> bool {
        self.e.iter().flatten().all(|v| *v == 0.0)
    }
}

/// Coupled 9x9 constitutive matrix in the display convention: rows 1..6 give
/// stress from (strain, E), rows 7..9 give electric displacement, with -e in
/// the stress rows and +e in the D rows. Solvers use the gradient convention
/// (sigma = c grad u + e grad phi, D = e grad u - eps grad phi); the two
/// agree under E = -grad phi.
pub fn coupled_constitutive_matrix(m: &MaterialTensorSet) -> [[f64; 9]; 9] {
    let mut out = [[0.0; 9]; 9];
    for i in 0..6 {
        for j in 0..6 {
            out[i][j] = m.c[i][j];
        }
        for k in 0..3 {
            out[i][6 + k] = -m.e[k][i];
        }
    }
    for k in 0..3 {
        for j in 0..6 {
            out[6 + k][j] = m.e[k][j];
        }
        for j in 0..3 {
            out[6 + k][6 + j] = m.eps[k][j];
        }
    }
    out
}

/// Outcome of the structural checks on a tensor set. Failures are reported
/// through the numbers, never thrown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyReport {
    /// max |c_IJ - c_JI| / max |c_IJ|
    pub c_symmetry: f64,
    /// Zero by construction for Voigt storage; kept so reports list all three.
    pub e_symmetry: f64,
    /// max |eps_ij - eps_ji| / max |eps_ij|
    pub eps_symmetry: f64,
    /// min over sampled unit symmetric X of c_ijkl X_ij X_kl
    pub elastic_min_quadratic: f64,
    /// smallest eigenvalue of eps
    pub eps_min_eigenvalue: f64,
    /// number of sampled directions behind `elastic_min_quadratic`
    pub pd_samples: usize,
    pub pd_seed: u64,
}

impl PropertyReport {
    /// Both positivity measures strictly positive.
    pub fn is_positive(&self) -> bool {
        self.elastic_min_quadratic > 0.0 && self.eps_min_eigenvalue > 0.0
    }

    /// Symmetry residuals all below `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.c_symmetry <= tol && self.e_symmetry <= tol && self.eps_symmetry <= tol
    }
}

/// Symmetry residuals plus sampled positivity of a tensor set, with the
/// default seed and sample count.
pub fn check_tensor_properties(m: &MaterialTensorSet) -> PropertyReport {
    check_tensor_properties_seeded(m, DEFAULT_PD_SEED, PD_SAMPLES)
}

/// Same as [`check_tensor_properties`] with caller-chosen seed and sample
/// count (the count is clamped to at least 200).
pub fn check_tensor_properties_seeded(
    m: &MaterialTensorSet,
    seed: u64,
    samples: usize,
) -> PropertyReport {
    let samples = samples.max(200);
    let c_max = m.c.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut c_asym = 0.0f64;
    for i in 0..6 {
        for j in 0..6 {
            c_asym = c_asym.max((m.c[i][j] - m.c[j][i]).abs());
        }
    }
    let eps_max = m
        .eps
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut eps_asym = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            eps_asym = eps_asym.max((m.eps[i][j] - m.eps[j][i]).abs());
        }
    }

    // Quadratic form over unit-Frobenius symmetric directions. Sampling uses
    // the full-tensor contraction, so engineering-shear bookkeeping cannot
    // skew the minimum.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_q = f64::INFINITY;
    for _ in 0..samples {
        let mut x = [[0.0f64; 3]; 3];
        for (i, j) in VOIGT_PAIRS {
            let v: f64 = rng.gen_range(-1.0..1.0);
            x[i][j] = v;
            x[j][i] = v;
        }
        let norm = x.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        q += m.c_full(i, j, k, l) * x[i][j] * x[k][l];
                    }
                }
            }
        }
        min_q = min_q.min(q / (norm * norm));
    }

    let eig = crate::linalg::sym3_eigenvalues(&m.eps);

    PropertyReport {
        c_symmetry: if c_max > 0.0 { c_asym / c_max } else { 0.0 },
        e_symmetry: 0.0,
        eps_symmetry: if eps_max > 0.0 {
            eps_asym / eps_max
        } else {
            0.0
        },
        elastic_min_quadratic: min_q,
        eps_min_eigenvalue: eig[0],
        pd_samples: samples,
        pd_seed: seed,
    }
}

/// Expand the Voigt 6x6 stiffness to the full 3x3x3x3 tensor.
pub fn expand_stiffness(c: &[[f64; 6]; 6]) -> [[[[f64; 3]; 3]; 3]; 3] {
    let mut out = [[[[0.0; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    out[i][j][k][l] = c[vm(i, j)][vm(k, l)];
                }
            }
        }
    }
    out
}

/// Contract a full 3x3x3x3 tensor back to Voigt 6x6.
pub fn contract_stiffness(c: &[[[[f64; 3]; 3]; 3]; 3]) -> [[f64; 6]; 6] {
    let mut out = [[0.0; 6]; 6];
    for (slot_a, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        for (slot_b, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
            out[slot_a][slot_b] = c[i][j][k][l];
        }
    }
    out
}
