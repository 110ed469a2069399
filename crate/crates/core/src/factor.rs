//! Shared machinery for linear-Gaussian latent factor models `x = μ + B z + ε`
//! where every group of samples shares one draw of `z ~ N(0, I)`.
//!
//! Both the classical and the joint model reduce to this form: the joint model
//! stacks `z = [u; v]` and `B = [S T]` per cell.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::Group;
use crate::error::{Error, Result};
use crate::gaussmath::{Cholesky, DiagMatrix, LN_2PI, VARIANCE_FLOOR};

/// Quantities of `(B, Σ)` reused by every group.
pub(crate) struct Precomputed {
    /// `Bᵀ Σ^{-1}` (N x d)
    bt_sinv: DMatrix<f64>,
    /// `Bᵀ Σ^{-1} B` (N x N)
    w: DMatrix<f64>,
    sinv: DVector<f64>,
    log_det_sigma: f64,
}

impl Precomputed {
    pub fn new(b: &DMatrix<f64>, sigma: &DiagMatrix) -> Self {
        let sinv = sigma.inverse_diagonal();
        let bt_sinv = DMatrix::from_fn(b.ncols(), b.nrows(), |r, c| b[(c, r)] * sinv[c]);
        let w = &bt_sinv * b;
        let w = (&w + w.transpose()) * 0.5;
        Precomputed {
            bt_sinv,
            w,
            sinv,
            log_det_sigma: sigma.log_det(),
        }
    }

    fn latent_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `I + H Bᵀ Σ^{-1} B`, factorized.
    fn precision(&self, count: usize) -> Result<Cholesky> {
        let n = self.latent_dim();
        let m = DMatrix::identity(n, n) + &self.w * count as f64;
        Cholesky::new(&m, "posterior precision")
    }
}

/// Posterior of the shared latent variable of one group.
#[derive(Debug, Clone)]
pub(crate) struct Posterior {
    pub mean: DVector<f64>,
    /// `E[z zᵀ] = Cov + mean meanᵀ`, exactly symmetric.
    pub second: DMatrix<f64>,
}

pub(crate) fn posterior(pre: &Precomputed, group: &Group) -> Result<Posterior> {
    let n = pre.latent_dim();
    if n == 0 {
        return Ok(Posterior {
            mean: DVector::zeros(0),
            second: DMatrix::zeros(0, 0),
        });
    }
    let chol = pre.precision(group.count)?;
    let cov = chol.inverse();
    let mean = &cov * (&pre.bt_sinv * &group.sum);
    let outer = &mean * mean.transpose();
    let outer = (&outer + outer.transpose()) * 0.5;
    Ok(Posterior {
        second: cov + outer,
        mean,
    })
}

/// Parallel map over groups; output order follows `groups`.
pub(crate) fn e_step(b: &DMatrix<f64>, sigma: &DiagMatrix, groups: &[Group]) -> Result<Vec<Posterior>> {
    let pre = Precomputed::new(b, sigma);
    groups.par_iter().map(|g| posterior(&pre, g)).collect()
}

/// Log density of one group's stacked samples with the latent draw integrated out.
fn group_loglik(pre: &Precomputed, group: &Group) -> Result<f64> {
    let h = group.count as f64;
    let d = group.sum.len() as f64;
    let quad: f64 = group.sumsq.iter().zip(pre.sinv.iter()).map(|(s, w)| s * w).sum();
    let (log_det_m, correction) = if pre.latent_dim() == 0 {
        (0.0, 0.0)
    } else {
        let chol = pre.precision(group.count)?;
        let f = &pre.bt_sinv * &group.sum;
        (chol.log_det(), chol.quad_form(&f))
    };
    Ok(-0.5 * (h * d * LN_2PI + h * pre.log_det_sigma + log_det_m + quad - correction))
}

/// Sum of per-group log densities (fixed-order reduction).
pub(crate) fn log_likelihood(b: &DMatrix<f64>, sigma: &DiagMatrix, groups: &[Group]) -> Result<f64> {
    let pre = Precomputed::new(b, sigma);
    let parts: Vec<f64> = groups
        .par_iter()
        .map(|g| group_loglik(&pre, g))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// M-step accumulators, reduced in group order.
pub(crate) struct Accumulators {
    /// `Σ_g s_g E[z_g]ᵀ` (d x N)
    pub cross: DMatrix<f64>,
    /// `Σ_g H_g E[z_g z_gᵀ]` (N x N)
    pub second: DMatrix<f64>,
    /// `Σ (x − μ)²` per coordinate
    pub sumsq: DVector<f64>,
    pub total: usize,
}

pub(crate) fn accumulate(groups: &[Group], posts: &[Posterior], latent_dim: usize) -> Accumulators {
    let d = groups.first().map(|g| g.sum.len()).unwrap_or(0);
    let mut acc = Accumulators {
        cross: DMatrix::zeros(d, latent_dim),
        second: DMatrix::zeros(latent_dim, latent_dim),
        sumsq: DVector::zeros(d),
        total: 0,
    };
    for (g, p) in groups.iter().zip(posts) {
        acc.cross += &g.sum * p.mean.transpose();
        acc.second += &p.second * g.count as f64;
        acc.sumsq += &g.sumsq;
        acc.total += g.count;
    }
    acc
}

/// `numer · Z^{-1}` for a symmetric positive definite `Z`.
pub(crate) fn solve_right(numer: &DMatrix<f64>, z: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if z.nrows() == 0 {
        return Ok(DMatrix::zeros(numer.nrows(), 0));
    }
    let chol = Cholesky::new(z, context).map_err(|_| Error::SingularAccumulator { context })?;
    Ok(chol.solve_matrix(&numer.transpose()).transpose())
}

/// `Σ = diag(Σ(x−μ)(x−μ)ᵀ − Σ (x−μ) E[z]ᵀ Bᵀ) / n`, floored.
pub(crate) fn residual_variance(acc: &Accumulators, b: &DMatrix<f64>) -> Result<DiagMatrix> {
    let n = acc.total as f64;
    let diag = DVector::from_fn(acc.sumsq.len(), |r, _| {
        let explained: f64 = (0..b.ncols()).map(|k| acc.cross[(r, k)] * b[(r, k)]).sum();
        ((acc.sumsq[r] - explained) / n).max(VARIANCE_FLOOR)
    });
    DiagMatrix::new(diag)
}
