//! Preconditioned MINRES for symmetric indefinite systems.
//!
//! Follows the Paige-Saunders recurrence with an SPD preconditioner applied
//! as M^-1. The built-in estimate tracks the residual in the M^-1 norm;
//! because the solve contract is Euclidean, the iteration verifies the true
//! residual explicitly whenever the estimate crosses the target and learns
//! the ratio between the two norms.
//!
//! All reductions are serial so repeated runs are bitwise identical.

use crate::{Error, Result};

pub struct MinresStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn nrm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimize the residual of `A x = b` over growing Krylov spaces.
///
/// `apply` must be self-adjoint and `precond` symmetric positive definite
/// on the subspace containing `b`; both take (input, output).
pub fn minres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    rtol: f64,
    maxit: usize,
) -> Result<(Vec<f64>, MinresStats)> {
    let n = b.len();
    let bnorm = nrm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            MinresStats {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }

    let mut r1 = b.to_vec();
    let mut y = vec![0.0; n];
    precond(&r1, &mut y);
    let beta1sq = dot(&r1, &y);
    if beta1sq < 0.0 {
        return Err(Error::invalid(
            "preconditioner is not positive definite on the residual space",
        ));
    }
    let beta1 = beta1sq.sqrt();
    if beta1 == 0.0 {
        return Ok((
            x,
            MinresStats {
                iterations: 0,
                rel_residual: 1.0,
            },
        ));
    }

    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    let mut av = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];

    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs: f64 = -1.0;
    let mut sn: f64 = 0.0;
    // learned ratio between the Euclidean and M^-1 residual norms
    let mut kappa = 1.0f64;
    let mut best_rel = f64::INFINITY;

    fn true_rel(
        apply: &mut impl FnMut(&[f64], &mut [f64]),
        b: &[f64],
        bnorm: f64,
        x: &[f64],
        av: &mut [f64],
    ) -> f64 {
        apply(x, av);
        let mut rr = 0.0;
        for i in 0..b.len() {
            let r = b[i] - av[i];
            rr += r * r;
        }
        rr.sqrt() / bnorm
    }

    for itn in 1..=maxit {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        apply(&v, &mut av);
        if itn >= 2 {
            let c = beta / oldb;
            for i in 0..n {
                av[i] -= c * r1[i];
            }
        }
        let alfa = dot(&v, &av);
        let c = alfa / beta;
        for i in 0..n {
            av[i] -= c * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        std::mem::swap(&mut r2, &mut av);
        precond(&r2, &mut y);
        oldb = beta;
        let betasq = dot(&r2, &y);
        if betasq < 0.0 {
            return Err(Error::invalid(
                "preconditioner lost positive definiteness during iteration",
            ));
        }
        beta = betasq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        // w = (v - oldeps*w1 - delta*w2) / gamma, reusing the w buffer
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }

        let due = phibar * kappa <= 0.9 * rtol * bnorm || itn % 128 == 0 || beta == 0.0;
        if due {
            let rel = true_rel(&mut apply, b, bnorm, &x, &mut av);
            best_rel = best_rel.min(rel);
            if rel <= rtol {
                return Ok((
                    x,
                    MinresStats {
                        iterations: itn,
                        rel_residual: rel,
                    },
                ));
            }
            kappa = (rel * bnorm / phibar.max(f64::MIN_POSITIVE)).max(1e-8) * 1.25;
            if beta == 0.0 {
                // Krylov space exhausted; the current iterate is final
                break;
            }
        }
    }

    let rel = {
        let mut tmp = vec![0.0; n];
        apply(&x, &mut tmp);
        let mut rr = 0.0;
        for i in 0..n {
            let r = b[i] - tmp[i];
            rr += r * r;
        }
        rr.sqrt() / bnorm
    };
    if rel <= rtol {
        return Ok((
            x,
            MinresStats {
                iterations: maxit,
                rel_residual: rel,
            },
        ));
    }
    Err(Error::Solver {
        context: format!("minres on {n} unknowns"),
        residual: rel.min(best_rel),
        iterations: maxit,
        tolerance: rtol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_indefinite_system() {
        // A = diag(3, 2, -1, -4) is symmetric indefinite
        let a = [3.0, 2.0, -1.0, -4.0];
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..4 {
                y[i] = a[i] * x[i];
            }
        };
        let precond = |x: &[f64], y: &mut [f64]| {
            for i in 0..4 {
                y[i] = x[i] / a[i].abs();
            }
        };
        let b = [1.0, -2.0, 0.5, 4.0];
        let (x, stats) = minres(apply, precond, &b, 1e-12, 50).unwrap();
        for i in 0..4 {
            assert!((x[i] - b[i] / a[i]).abs() < 1e-10);
        }
        assert!(stats.iterations <= 8);
    }
}
