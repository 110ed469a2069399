//! Dense Gaussian and low-rank linear algebra shared by the model code.
//!
//! Everything here works in the log domain. Positive definiteness is decided
//! by the Cholesky pivots, and one factorization serves both the
//! log-determinant and the triangular solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower bound applied to every diagonal covariance entry.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

const SYMMETRY_TOL: f64 = 1e-12;

/// Basis matrix of a latent subspace (`d` rows, one column per latent dimension).
pub type FactorMatrix = DMatrix<f64>;

/// A square symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates squareness, a positive dimension and symmetry to 1e-12 relative.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "SymMatrix (columns vs rows)",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidConfig("SymMatrix must have dimension > 0".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SymMatrix"));
        }
        let scale = m.amax().max(1.0);
        for r in 0..m.nrows() {
            for c in 0..r {
                let gap = (m[(r, c)] - m[(c, r)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric { row: r, col: c, gap });
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds `(m + mᵀ) / 2`, which is exactly symmetric.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// A diagonal covariance, stored as its diagonal, floored at [`VARIANCE_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagMatrix(DVector<f64>);

impl DiagMatrix {
    /// Floors every entry. Fails on an empty or non-finite diagonal.
    pub fn new(diag: DVector<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidConfig("DiagMatrix must have dimension > 0".into()));
        }
        if diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DiagMatrix"));
        }
        Ok(DiagMatrix(diag.map(|v| v.max(VARIANCE_FLOOR))))
    }

    pub fn from_slice(diag: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(diag))
    }

    pub fn from_element(dim: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, value))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn inverse_diagonal(&self) -> DVector<f64> {
        self.0.map(|v| 1.0 / v)
    }

    pub fn log_det(&self) -> f64 {
        self.0.iter().map(|v| v.ln()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.0)
    }
}

/// Cholesky factorization `m = L Lᵀ` with its log-determinant.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: DMatrix<f64>,
    log_det: f64,
}

impl Cholesky {
    /// Factorizes the lower triangle of `m`. Any pivot `<= 0` (or NaN) is rejected.
    pub fn new(m: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                found: m.ncols(),
            });
        }
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut pivot = m[(j, j)];
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            // `!(pivot > 0)` also catches NaN.
            if pivot.is_nan() || pivot <= 0.0 {
                return Err(Error::NotPositiveDefinite { context });
            }
            let diag = pivot.sqrt();
            l[(j, j)] = diag;
            for i in (j + 1)..n {
                let mut v = m[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / diag;
            }
        }
        let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(Cholesky { lower: l, log_det })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = &self.lower;
        let n = l.nrows();
        let mut y = b.clone();
        for i in 0..n {
            let mut v = y[i];
            for k in 0..i {
                v -= l[(i, k)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    fn backward(&self, y: &DVector<f64>) -> DVector<f64> {
        let l = &self.lower;
        let n = l.nrows();
        let mut x = y.clone();
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..n {
                v -= l[(k, i)] * x[k];
            }
            x[i] = v / l[(i, i)];
        }
        x
    }

    /// Solves `m x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.backward(&self.forward(b))
    }

    /// Solves `m X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col = self.solve(&b.column(c).into_owned());
            out.set_column(c, &col);
        }
        out
    }

    /// `m^{-1}`, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let inv = self.solve_matrix(&DMatrix::identity(n, n));
        let t = inv.transpose();
        (inv + t) * 0.5
    }

    /// `xᵀ m^{-1} x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        self.forward(x).norm_squared()
    }
}

/// Cholesky factor and log-determinant of a symmetric positive definite matrix.
pub fn chol_logdet(m: &SymMatrix) -> Result<(f64, DMatrix<f64>)> {
    let c = Cholesky::new(m.as_matrix(), "chol_logdet")?;
    Ok((c.log_det, c.lower))
}

fn check_factor(sigma: &DiagMatrix, b: &FactorMatrix, context: &'static str) -> Result<()> {
    if b.nrows() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            context,
            expected: sigma.dim(),
            found: b.nrows(),
        });
    }
    Ok(())
}

/// `(Σ + B C Bᵀ)^{-1}` given `C^{-1}`, via the Woodbury identity.
///
/// Only the `N x N` matrix `C^{-1} + Bᵀ Σ^{-1} B` is factorized.
pub fn woodbury_inverse(sigma: &DiagMatrix, b: &FactorMatrix, core_inverse: &DMatrix<f64>) -> Result<SymMatrix> {
    check_factor(sigma, b, "woodbury_inverse")?;
    let sinv = sigma.inverse_diagonal();
    let mut out = DMatrix::from_diagonal(&sinv);
    if b.ncols() == 0 {
        return Ok(SymMatrix(out));
    }
    // Σ^{-1} B
    let sinv_b = DMatrix::from_fn(b.nrows(), b.ncols(), |r, c| sinv[r] * b[(r, c)]);
    let inner = core_inverse + b.transpose() * &sinv_b;
    let chol = Cholesky::new(&inner, "woodbury inner matrix")?;
    let solved = chol.solve_matrix(&sinv_b.transpose());
    out -= &sinv_b * solved;
    Ok(SymMatrix::symmetrize(out))
}

/// `(Σ + B Bᵀ)^{-1} = Σ^{-1} − Σ^{-1}B(I + BᵀΣ^{-1}B)^{-1}BᵀΣ^{-1}`.
pub fn lowrank_inverse(sigma: &DiagMatrix, b: &FactorMatrix) -> Result<SymMatrix> {
    let n = b.ncols();
    woodbury_inverse(sigma, b, &DMatrix::identity(n, n))
}

/// `B Bᵀ`, exactly symmetric.
pub fn outer_gram(b: &FactorMatrix) -> DMatrix<f64> {
    let g = b * b.transpose();
    let t = g.transpose();
    (g + t) * 0.5
}

/// Log density of `x` under `N(mu, C)` where `chol` factorizes `C`.
pub fn gauss_logpdf(x: &DVector<f64>, mu: &DVector<f64>, chol: &Cholesky) -> f64 {
    let r = x - mu;
    -0.5 * (x.len() as f64 * LN_2PI + chol.log_det() + chol.quad_form(&r))
}

/// Stacked Gaussian of a pair `[xt; xs]` with covariance `[[D, O], [O, D]]`.
///
/// The orthogonal change of variables `((xt+xs)/√2, (xt−xs)/√2)` block
/// diagonalizes the covariance into `D + O` and `D − O`, so only two `d x d`
/// factorizations are needed and the density is exactly symmetric in the
/// order of the pair.
#[derive(Debug, Clone)]
pub struct PairGaussian {
    mu: DVector<f64>,
    sum: Cholesky,
    diff: Cholesky,
}

impl PairGaussian {
    pub fn new(mu: &DVector<f64>, diag_block: &DMatrix<f64>, off_block: &DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        for (m, context) in [
            (diag_block, "pair diagonal block"),
            (off_block, "pair off-diagonal block"),
        ] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: d,
                    found: m.nrows().max(m.ncols()),
                });
            }
        }
        let sum = Cholesky::new(&(diag_block + off_block), "pair covariance (D + O)")?;
        let diff = Cholesky::new(&(diag_block - off_block), "pair covariance (D - O)")?;
        Ok(PairGaussian {
            mu: mu.clone(),
            sum,
            diff,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn logpdf(&self, xt: &DVector<f64>, xs: &DVector<f64>) -> f64 {
        let a = xt - &self.mu;
        let b = xs - &self.mu;
        let plus = (&a + &b) * std::f64::consts::FRAC_1_SQRT_2;
        let minus = (&a - &b) * std::f64::consts::FRAC_1_SQRT_2;
        let d = self.dim() as f64;
        -0.5 * (2.0 * d * LN_2PI
            + self.sum.log_det()
            + self.diff.log_det()
            + self.sum.quad_form(&plus)
            + self.diff.quad_form(&minus))
    }
}

pub(crate) fn check_len(v: &DVector<f64>, d: usize, context: &'static str) -> Result<()> {
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            context,
            expected: d,
            found: v.len(),
        });
    }
    Ok(())
}

/// Log density of `[xt; xs]` under `N([μ; μ], [[D, O], [O, D]])`.
pub fn pair_gauss_logpdf(
    xt: &DVector<f64>,
    xs: &DVector<f64>,
    mu: &DVector<f64>,
    diag_block: &SymMatrix,
    off_block: &SymMatrix,
) -> Result<f64> {
    let d = mu.len();
    check_len(xt, d, "pair_gauss_logpdf xt")?;
    check_len(xs, d, "pair_gauss_logpdf xs")?;
    let g = PairGaussian::new(mu, diag_block.as_matrix(), off_block.as_matrix())?;
    Ok(g.logpdf(xt, xs))
}

/// `ln Σ_k w_k exp(l_k)` over `(w_k, l_k)` pairs. Zero weights drop out.
///
/// Returns `-inf` when every weight is zero.
pub fn log_mix(terms: &[(f64, f64)]) -> f64 {
    let max = terms
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let acc: f64 = terms
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, l)| w * (l - max).exp())
        .sum();
    max + acc.ln()
}
