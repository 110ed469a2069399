//! Multi-view (joint) PLDA.
//!
//! A feature carrying view-A label `i` and view-B label `j` is generated as
//!
//! ```text
//! x_ijk = μ + S u_i + T v_j + ε_ijk,   u_i ~ N(0, I),  v_j ~ N(0, I),  ε ~ N(0, Σ)
//! ```
//!
//! with diagonal `Σ`. Training runs EM over cells `(i, j)`: the E-step gives
//! the posterior of `z_ij = [u_i; v_j]` from the cell's own samples, and the
//! M-step updates `S` (using the previous `T`), then `T` (using the new `S`),
//! then `Σ`. `μ` stays at the global sample mean.
//!
//! Verification compares the hypothesis that two features share both latent
//! variables against a prior-weighted mixture of the alternatives. Every
//! hypothesis is a stacked Gaussian with diagonal blocks `SSᵀ + TTᵀ + Σ` and
//! an off-diagonal block containing `SSᵀ` when `u` is shared and `TTᵀ` when
//! `v` is shared.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dataset::{group_stats, Dataset, Group, Grouping};
use crate::error::{Error, Result};
use crate::factor::{self, Posterior};
use crate::gaussmath::{check_len, log_mix, outer_gram, DiagMatrix, FactorMatrix, PairGaussian, SymMatrix};
use crate::plda::{random_factor, stats_to_posteriors, LlTrace, PldaModel};

pub const DEFAULT_ITERATIONS: usize = 10;
/// Default dimension of each of the two latent subspaces.
pub const DEFAULT_VIEW_DIM: usize = 20;

const PRIOR_TOL: f64 = 1e-12;

/// Parameters `{μ, S, T, Σ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPldaModel {
    mu: DVector<f64>,
    s: FactorMatrix,
    t: FactorMatrix,
    sigma: DiagMatrix,
}

impl JointPldaModel {
    pub fn new(mu: DVector<f64>, s: FactorMatrix, t: FactorMatrix, sigma: DiagMatrix) -> Result<Self> {
        let d = mu.len();
        for (rows, context) in [(s.nrows(), "S rows"), (t.nrows(), "T rows"), (sigma.dim(), "Σ")] {
            if rows != d {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: d,
                    found: rows,
                });
            }
        }
        if s.ncols() + t.ncols() == 0 {
            return Err(Error::InvalidConfig("at least one latent dimension is required".into()));
        }
        if mu.iter().chain(s.iter()).chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint PLDA parameters"));
        }
        Ok(JointPldaModel { mu, s, t, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn n_u(&self) -> usize {
        self.s.ncols()
    }

    pub fn n_v(&self) -> usize {
        self.t.ncols()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn s(&self) -> &FactorMatrix {
        &self.s
    }

    pub fn t(&self) -> &FactorMatrix {
        &self.t
    }

    pub fn sigma(&self) -> &DiagMatrix {
        &self.sigma
    }

    /// `B = [S T]`
    pub fn stacked(&self) -> FactorMatrix {
        let d = self.dim();
        let mut b = DMatrix::zeros(d, self.n_u() + self.n_v());
        b.view_mut((0, 0), (d, self.n_u())).copy_from(&self.s);
        b.view_mut((0, self.n_u()), (d, self.n_v())).copy_from(&self.t);
        b
    }

    /// The classical model with `B = [S T]`.
    pub fn to_plda(&self) -> Result<PldaModel> {
        PldaModel::new(self.mu.clone(), self.stacked(), self.sigma.clone())
    }

    /// Same model with the roles of the two views exchanged.
    pub fn swap_views(&self) -> Self {
        JointPldaModel {
            mu: self.mu.clone(),
            s: self.t.clone(),
            t: self.s.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

/// Posterior moments of `z_ij = [u_i; v_j]` for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub cell: (usize, usize),
    pub count: usize,
    /// `E[z_ij]`
    pub mean: DVector<f64>,
    /// `E[z_ij z_ijᵀ]`
    pub second: SymMatrix,
    /// Split point between the `u` and `v` blocks.
    pub n_u: usize,
}

impl CellStats {
    fn n_v(&self) -> usize {
        self.mean.len() - self.n_u
    }

    /// `E[u_i]`
    pub fn u_mean(&self) -> DVector<f64> {
        self.mean.rows(0, self.n_u).into_owned()
    }

    /// `E[v_j]`
    pub fn v_mean(&self) -> DVector<f64> {
        self.mean.rows(self.n_u, self.n_v()).into_owned()
    }

    /// `E[u_i u_iᵀ]`
    pub fn uu(&self) -> DMatrix<f64> {
        self.second.as_matrix().view((0, 0), (self.n_u, self.n_u)).into_owned()
    }

    /// `E[v_j v_jᵀ]`
    pub fn vv(&self) -> DMatrix<f64> {
        let nu = self.n_u;
        self.second
            .as_matrix()
            .view((nu, nu), (self.n_v(), self.n_v()))
            .into_owned()
    }

    /// `E[u_i v_jᵀ]`
    pub fn uv(&self) -> DMatrix<f64> {
        self.second
            .as_matrix()
            .view((0, self.n_u), (self.n_u, self.n_v()))
            .into_owned()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.second.as_matrix() - &self.mean * self.mean.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub iterations: usize,
    pub seed: u64,
    pub n_u: usize,
    pub n_v: usize,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            n_u: DEFAULT_VIEW_DIM,
            n_v: DEFAULT_VIEW_DIM,
        }
    }
}

fn check_dataset(data: &Dataset, d: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "dataset vs model",
            expected: d,
            found: data.dim(),
        });
    }
    Ok(())
}

/// Per-cell posterior moments, ordered by cell.
pub fn e_step(model: &JointPldaModel, data: &Dataset) -> Result<Vec<CellStats>> {
    check_dataset(data, model.dim())?;
    let groups = group_stats(data, Grouping::Cell, &model.mu);
    let posts = factor::e_step(&model.stacked(), &model.sigma, &groups)?;
    Ok(groups
        .iter()
        .zip(posts)
        .map(|(g, p)| CellStats {
            cell: g.key,
            count: g.count,
            mean: p.mean,
            second: SymMatrix::symmetrize(p.second),
            n_u: model.n_u(),
        })
        .collect())
}

fn m_step_groups(model: &JointPldaModel, groups: &[Group], posts: &[Posterior]) -> Result<JointPldaModel> {
    let (nu, nv) = (model.n_u(), model.n_v());
    let d = model.dim();
    let acc = factor::accumulate(groups, posts, nu + nv);
    let r_u = acc.cross.view((0, 0), (d, nu)).into_owned();
    let r_v = acc.cross.view((0, nu), (d, nv)).into_owned();
    let z_uu = acc.second.view((0, 0), (nu, nu)).into_owned();
    let z_vv = acc.second.view((nu, nu), (nv, nv)).into_owned();
    let z_uv = acc.second.view((0, nu), (nu, nv)).into_owned();

    // S = (Σ(x−μ)E[u]ᵀ − T Σ E[v uᵀ]) (Σ E[u uᵀ])^{-1}, previous T
    let s = factor::solve_right(&(r_u - &model.t * z_uv.transpose()), &z_uu, "Σ E[u uᵀ]")?;
    // T = (Σ(x−μ)E[v]ᵀ − S Σ E[u vᵀ]) (Σ E[v vᵀ])^{-1}, updated S
    let t = factor::solve_right(&(r_v - &s * &z_uv), &z_vv, "Σ E[v vᵀ]")?;

    let mut b = DMatrix::zeros(d, nu + nv);
    b.view_mut((0, 0), (d, nu)).copy_from(&s);
    b.view_mut((0, nu), (d, nv)).copy_from(&t);
    let sigma = factor::residual_variance(&acc, &b)?;
    JointPldaModel::new(model.mu.clone(), s, t, sigma)
}

/// Updates `S`, then `T`, then `Σ` from per-cell statistics. `μ` is carried over.
pub fn m_step(model: &JointPldaModel, stats: &[CellStats], data: &Dataset) -> Result<JointPldaModel> {
    check_dataset(data, model.dim())?;
    if stats
        .iter()
        .any(|s| s.n_u != model.n_u() || s.mean.len() != model.n_u() + model.n_v())
    {
        return Err(Error::InvalidConfig(
            "cell statistics do not match the model's latent sizes".into(),
        ));
    }
    let groups = group_stats(data, Grouping::Cell, &model.mu);
    let view: Vec<_> = stats.iter().map(|s| (s.cell.0, s.cell.1, &s.mean, &s.second)).collect();
    let posts = stats_to_posteriors(&groups, &view)?;
    m_step_groups(model, &groups, &posts)
}

/// Sum over cells of the log density of the cell's stacked samples, the cell
/// sharing one draw of `(u, v)`.
pub fn loglik_dataset(model: &JointPldaModel, data: &Dataset) -> Result<f64> {
    check_dataset(data, model.dim())?;
    let groups = group_stats(data, Grouping::Cell, &model.mu);
    factor::log_likelihood(&model.stacked(), &model.sigma, &groups)
}

/// Leading `cols` principal directions of the scatter of per-label means,
/// scaled by the square root of their variance.
fn label_subspace(data: &Dataset, mu: &DVector<f64>, by_a: bool, cols: usize) -> DMatrix<f64> {
    let d = data.dim();
    let grouping = if by_a { Grouping::LabelA } else { Grouping::LabelB };
    let groups = group_stats(data, grouping, mu);
    let mut scatter = DMatrix::zeros(d, d);
    for g in &groups {
        let m = &g.sum / g.count as f64;
        scatter += &m * m.transpose();
    }
    scatter /= groups.len() as f64;
    let eig = SymmetricEigen::new((&scatter + scatter.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(d, cols);
    for (c, &k) in order.iter().take(cols).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        out.set_column(c, &(eig.eigenvectors.column(k) * scale));
    }
    out
}

/// Seeded starting point.
///
/// `μ` is the global mean and `Σ` the empirical diagonal covariance. `S`
/// starts on the principal directions of the view-A label means and `T` on
/// those of the view-B label means, plus small seeded noise
/// (`0.1 × per-coordinate std`). The labels are what tell the two subspaces
/// apart: the per-cell likelihood itself only sees `[S T]`.
pub fn initialize(data: &Dataset, config: &JointConfig) -> Result<JointPldaModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.n_u + config.n_v == 0 {
        return Err(Error::InvalidConfig("n_u + n_v must be >= 1".into()));
    }
    let mu = data.global_mean()?;
    let var = data.diag_variance(&mu)?;
    let std = var.map(f64::sqrt);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let s = label_subspace(data, &mu, true, config.n_u) + random_factor(&mut rng, &std, config.n_u);
    let t = label_subspace(data, &mu, false, config.n_v) + random_factor(&mut rng, &std, config.n_v);
    JointPldaModel::new(mu, s, t, DiagMatrix::new(var)?)
}

pub fn train(data: &Dataset, config: &JointConfig) -> Result<(JointPldaModel, LlTrace)> {
    let init = initialize(data, config)?;
    train_from(init, data, config)
}

/// EM from an explicit starting model; only `config.iterations` is used.
pub fn train_from(init: JointPldaModel, data: &Dataset, config: &JointConfig) -> Result<(JointPldaModel, LlTrace)> {
    check_dataset(data, init.dim())?;
    for (what, found) in [("view-A", data.num_a()), ("view-B", data.num_b())] {
        if found < 2 {
            return Err(Error::TooFewLabels { what, needed: 2, found });
        }
    }
    let groups = group_stats(data, Grouping::Cell, &init.mu);
    let mut model = init;
    let mut trace = LlTrace::default();
    trace.push(factor::log_likelihood(&model.stacked(), &model.sigma, &groups)?);
    for _ in 0..config.iterations {
        let posts = factor::e_step(&model.stacked(), &model.sigma, &groups)?;
        model = m_step_groups(&model, &groups, &posts)?;
        trace.push(factor::log_likelihood(&model.stacked(), &model.sigma, &groups)?);
    }
    Ok((model, trace))
}

/// Which latent variables two features are assumed to share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShareSpec {
    pub share_u: bool,
    pub share_v: bool,
}

impl ShareSpec {
    /// Same `u`, same `v`: the target hypothesis.
    pub const BOTH: ShareSpec = ShareSpec {
        share_u: true,
        share_v: true,
    };
    /// Different `u`, same `v`.
    pub const V_ONLY: ShareSpec = ShareSpec {
        share_u: false,
        share_v: true,
    };
    /// Same `u`, different `v`.
    pub const U_ONLY: ShareSpec = ShareSpec {
        share_u: true,
        share_v: false,
    };
    pub const NONE: ShareSpec = ShareSpec {
        share_u: false,
        share_v: false,
    };

    fn index(self) -> usize {
        (self.share_u as usize) * 2 + self.share_v as usize
    }
}

fn check_prior(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidPriors(format!("{p} is not a probability")));
    }
    Ok(())
}

fn check_sum(ps: &[f64], what: &str) -> Result<()> {
    let sum: f64 = ps.iter().sum();
    if (sum - 1.0).abs() > PRIOR_TOL {
        return Err(Error::InvalidPriors(format!("{what} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Weights of the three alternatives in the joint test:
/// `p1` (different `u`, same `v`), `p2` (same `u`, different `v`),
/// `p3` (both different).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPriors {
    p: [f64; 3],
}

impl JointPriors {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let p = [p1, p2, p3];
        p.iter().try_for_each(|v| check_prior(*v))?;
        check_sum(&p, "joint priors")?;
        Ok(JointPriors { p })
    }

    pub fn values(&self) -> [f64; 3] {
        self.p
    }
}

impl Default for JointPriors {
    fn default() -> Self {
        JointPriors { p: [1.0 / 3.0; 3] }
    }
}

/// Weights of the single-view test. For view A: `p0` (same `u`, same `v`)
/// and `p1` (same `u`, different `v`) under the target hypothesis, `p2`
/// (different `u`, same `v`) and `p3` (both different) under the alternative.
/// View B mirrors this with `u` and `v` exchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPriors {
    p: [f64; 4],
}

impl ViewPriors {
    pub fn new(p0: f64, p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let p = [p0, p1, p2, p3];
        p.iter().try_for_each(|v| check_prior(*v))?;
        check_sum(&p[..2], "target-hypothesis priors (p0, p1)")?;
        check_sum(&p[2..], "alternative-hypothesis priors (p2, p3)")?;
        Ok(ViewPriors { p })
    }

    pub fn values(&self) -> [f64; 4] {
        self.p
    }
}

impl Default for ViewPriors {
    fn default() -> Self {
        ViewPriors { p: [0.5; 4] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    A,
    B,
}

/// Scoring state for one model: the four pair Gaussians, factorized once.
#[derive(Debug, Clone)]
pub struct JointScorer {
    // indexed by ShareSpec::index
    pairs: [PairGaussian; 4],
}

impl JointScorer {
    pub fn new(model: &JointPldaModel) -> Result<Self> {
        let ss = outer_gram(&model.s);
        let tt = outer_gram(&model.t);
        let diag = &ss + &tt + model.sigma.to_dense();
        let d = model.dim();
        let pair = |off: DMatrix<f64>| PairGaussian::new(&model.mu, &diag, &off);
        Ok(JointScorer {
            pairs: [
                pair(DMatrix::zeros(d, d))?,
                pair(tt.clone())?,
                pair(ss.clone())?,
                pair(&ss + &tt)?,
            ],
        })
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].dim()
    }

    fn check(&self, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<()> {
        check_len(xt, self.dim(), "joint score xt")?;
        check_len(xs, self.dim(), "joint score xs")
    }

    pub fn pair_loglik(&self, xt: &DVector<f64>, xs: &DVector<f64>, spec: ShareSpec) -> Result<f64> {
        self.check(xt, xs)?;
        Ok(self.pairs[spec.index()].logpdf(xt, xs))
    }

    fn ll(&self, xt: &DVector<f64>, xs: &DVector<f64>, spec: ShareSpec) -> f64 {
        self.pairs[spec.index()].logpdf(xt, xs)
    }

    /// `log P(both shared) − log[p1 L(v only) + p2 L(u only) + p3 L(none)]`
    pub fn llr(&self, priors: &JointPriors, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
        self.check(xt, xs)?;
        let [p1, p2, p3] = priors.p;
        let num = self.ll(xt, xs, ShareSpec::BOTH);
        let den = log_mix(&[
            (p1, self.ll(xt, xs, ShareSpec::V_ONLY)),
            (p2, self.ll(xt, xs, ShareSpec::U_ONLY)),
            (p3, self.ll(xt, xs, ShareSpec::NONE)),
        ]);
        Ok(num - den)
    }

    /// Verifies one latent variable, marginalizing over whether the other is shared.
    pub fn llr_view(&self, priors: &ViewPriors, view: View, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
        self.check(xt, xs)?;
        let [p0, p1, p2, p3] = priors.p;
        let (same_other_diff, diff_same_other) = match view {
            View::A => (ShareSpec::U_ONLY, ShareSpec::V_ONLY),
            View::B => (ShareSpec::V_ONLY, ShareSpec::U_ONLY),
        };
        let num = log_mix(&[
            (p0, self.ll(xt, xs, ShareSpec::BOTH)),
            (p1, self.ll(xt, xs, same_other_diff)),
        ]);
        let den = log_mix(&[
            (p2, self.ll(xt, xs, diff_same_other)),
            (p3, self.ll(xt, xs, ShareSpec::NONE)),
        ]);
        Ok(num - den)
    }
}

/// Log density of the pair under the sharing pattern `spec`.
pub fn pair_loglik(model: &JointPldaModel, xt: &DVector<f64>, xs: &DVector<f64>, spec: ShareSpec) -> Result<f64> {
    JointScorer::new(model)?.pair_loglik(xt, xs, spec)
}

/// Joint-test log-likelihood ratio; see [`JointScorer::llr`].
pub fn llr(model: &JointPldaModel, priors: &JointPriors, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
    JointScorer::new(model)?.llr(priors, xt, xs)
}

/// Single-view log-likelihood ratio; see [`JointScorer::llr_view`].
pub fn llr_view(
    model: &JointPldaModel,
    priors: &ViewPriors,
    view: View,
    xt: &DVector<f64>,
    xs: &DVector<f64>,
) -> Result<f64> {
    JointScorer::new(model)?.llr_view(priors, view, xt, xs)
}
