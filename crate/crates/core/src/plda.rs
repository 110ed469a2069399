//! Classical PLDA: `x_ij = μ + B z_i + ε_ij` with `z_i ~ N(0, I)` and
//! diagonal `ε_ij ~ N(0, Σ)`.
//!
//! Training is EM with `μ` fixed at the global sample mean, which keeps each
//! iteration an exact EM step over `{B, Σ}`. Scoring comes in two flavours:
//! [`NaiveScorer`] evaluates the three Gaussians directly, [`FastScorer`]
//! reduces the log-likelihood ratio to a quadratic form whose matrices are
//! built with the Woodbury identity (only `N x N` systems are factorized).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{group_stats, Dataset, Group, Grouping};
use crate::error::{Error, Result};
use crate::factor::{self, Posterior};
use crate::gaussmath::{
    check_len, lowrank_inverse, outer_gram, woodbury_inverse, Cholesky, DiagMatrix, FactorMatrix, PairGaussian,
    SymMatrix,
};

/// Default number of EM iterations.
pub const DEFAULT_ITERATIONS: usize = 10;
/// Default between-class subspace dimension.
pub const DEFAULT_SUBSPACE_DIM: usize = 40;

/// Parameters `{μ, B, Σ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    mu: DVector<f64>,
    b: FactorMatrix,
    sigma: DiagMatrix,
}

impl PldaModel {
    pub fn new(mu: DVector<f64>, b: FactorMatrix, sigma: DiagMatrix) -> Result<Self> {
        let d = mu.len();
        if b.nrows() != d {
            return Err(Error::DimensionMismatch {
                context: "PLDA factor rows",
                expected: d,
                found: b.nrows(),
            });
        }
        if sigma.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "PLDA Σ",
                expected: d,
                found: sigma.dim(),
            });
        }
        if b.ncols() == 0 {
            return Err(Error::InvalidConfig("PLDA subspace dimension must be >= 1".into()));
        }
        if mu.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PLDA parameters"));
        }
        Ok(PldaModel { mu, b, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn b(&self) -> &FactorMatrix {
        &self.b
    }

    pub fn sigma(&self) -> &DiagMatrix {
        &self.sigma
    }

    /// Total covariance `B Bᵀ + Σ`.
    pub fn total_covariance(&self) -> DMatrix<f64> {
        outer_gram(&self.b) + self.sigma.to_dense()
    }
}

/// Posterior moments of one class's latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class: (usize, usize),
    pub count: usize,
    /// `E[z_i]`
    pub mean: DVector<f64>,
    /// `E[z_i z_iᵀ]`
    pub second: SymMatrix,
}

impl ClassStats {
    pub(crate) fn from_posterior(group: &Group, p: Posterior) -> Self {
        ClassStats {
            class: group.key,
            count: group.count,
            mean: p.mean,
            second: SymMatrix::symmetrize(p.second),
        }
    }

    /// `E[z zᵀ] − E[z] E[z]ᵀ`
    pub fn covariance(&self) -> DMatrix<f64> {
        self.second.as_matrix() - &self.mean * self.mean.transpose()
    }
}

/// Dataset log-likelihood per EM iteration.
///
/// `values()[0]` is the log-likelihood of the initial model; entry `k` is the
/// value after the `k`-th M-step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlTrace(Vec<f64>);

impl LlTrace {
    pub fn new(values: Vec<f64>) -> Self {
        LlTrace(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn increments(&self) -> Vec<f64> {
        self.0.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Every increment is `>= -slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.increments().iter().all(|d| *d >= -slack)
    }

    pub(crate) fn push(&mut self, v: f64) {
        self.0.push(v);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PldaConfig {
    pub iterations: usize,
    pub seed: u64,
    pub subspace_dim: usize,
    /// What counts as a class. The multi-view experiments use the joint label.
    pub grouping: Grouping,
}

impl Default for PldaConfig {
    fn default() -> Self {
        PldaConfig {
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            subspace_dim: DEFAULT_SUBSPACE_DIM,
            grouping: Grouping::Cell,
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

/// Posterior moments of every class, ordered by class key.
pub fn e_step(model: &PldaModel, data: &Dataset, grouping: Grouping) -> Result<Vec<ClassStats>> {
    check_dataset(data, model.dim())?;
    let groups = group_stats(data, grouping, &model.mu);
    let posts = factor::e_step(&model.b, &model.sigma, &groups)?;
    Ok(groups
        .iter()
        .zip(posts)
        .map(|(g, p)| ClassStats::from_posterior(g, p))
        .collect())
}

pub(crate) fn stats_to_posteriors(
    groups: &[Group],
    stats: &[(usize, usize, &DVector<f64>, &SymMatrix)],
) -> Result<Vec<Posterior>> {
    if groups.len() != stats.len() || groups.iter().zip(stats).any(|(g, s)| g.key != (s.0, s.1)) {
        return Err(Error::InvalidConfig(
            "posterior statistics do not cover the dataset's groups".into(),
        ));
    }
    Ok(stats
        .iter()
        .map(|s| Posterior {
            mean: s.2.clone(),
            second: s.3.as_matrix().clone(),
        })
        .collect())
}

fn m_step_groups(model: &PldaModel, groups: &[Group], posts: &[Posterior]) -> Result<PldaModel> {
    let acc = factor::accumulate(groups, posts, model.subspace_dim());
    let b = factor::solve_right(&acc.cross, &acc.second, "Σ E[z zᵀ]")?;
    let sigma = factor::residual_variance(&acc, &b)?;
    PldaModel::new(model.mu.clone(), b, sigma)
}

/// Re-estimates `B` and `Σ` from E-step statistics; `μ` is carried over from `model`.
pub fn m_step(model: &PldaModel, stats: &[ClassStats], data: &Dataset, grouping: Grouping) -> Result<PldaModel> {
    check_dataset(data, model.dim())?;
    let groups = group_stats(data, grouping, &model.mu);
    let view: Vec<_> = stats
        .iter()
        .map(|s| (s.class.0, s.class.1, &s.mean, &s.second))
        .collect();
    let posts = stats_to_posteriors(&groups, &view)?;
    m_step_groups(model, &groups, &posts)
}

/// Log-likelihood of the dataset, each class's samples sharing one latent draw.
pub fn log_likelihood(model: &PldaModel, data: &Dataset, grouping: Grouping) -> Result<f64> {
    check_dataset(data, model.dim())?;
    let groups = group_stats(data, grouping, &model.mu);
    factor::log_likelihood(&model.b, &model.sigma, &groups)
}

/// `i.i.d. N(0, 1)` entries scaled by `0.1 × per-coordinate std`.
pub(crate) fn random_factor(rng: &mut ChaCha20Rng, std: &DVector<f64>, cols: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(std.len(), cols);
    for r in 0..std.len() {
        for c in 0..cols {
            let z: f64 = StandardNormal.sample(rng);
            b[(r, c)] = 0.1 * std[r] * z;
        }
    }
    b
}

/// Seeded starting point: `μ` = global mean, `Σ` = empirical diagonal covariance,
/// `B` random and small.
pub fn initialize(data: &Dataset, config: &PldaConfig) -> Result<PldaModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.subspace_dim == 0 {
        return Err(Error::InvalidConfig("subspace dimension must be >= 1".into()));
    }
    let mu = data.global_mean()?;
    let var = data.diag_variance(&mu)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let b = random_factor(&mut rng, &var.map(f64::sqrt), config.subspace_dim);
    PldaModel::new(mu, b, DiagMatrix::new(var)?)
}

/// EM from `initialize(data, config)`.
pub fn train(data: &Dataset, config: &PldaConfig) -> Result<(PldaModel, LlTrace)> {
    let init = initialize(data, config)?;
    train_from(init, data, config)
}

/// EM from an explicit starting model. `config.seed` and `config.subspace_dim` are unused.
pub fn train_from(init: PldaModel, data: &Dataset, config: &PldaConfig) -> Result<(PldaModel, LlTrace)> {
    check_dataset(data, init.dim())?;
    let groups = group_stats(data, config.grouping, &init.mu);
    if groups.len() < 2 {
        return Err(Error::TooFewLabels {
            what: "class",
            needed: 2,
            found: groups.len(),
        });
    }
    let mut model = init;
    let mut trace = LlTrace::default();
    trace.push(factor::log_likelihood(&model.b, &model.sigma, &groups)?);
    for _ in 0..config.iterations {
        let posts = factor::e_step(&model.b, &model.sigma, &groups)?;
        model = m_step_groups(&model, &groups, &posts)?;
        trace.push(factor::log_likelihood(&model.b, &model.sigma, &groups)?);
    }
    Ok((model, trace))
}

/// Direct evaluation of the same-class vs different-class log-likelihood ratio.
#[derive(Debug, Clone)]
pub struct NaiveScorer {
    pair: PairGaussian,
    single: Cholesky,
    mu: DVector<f64>,
}

impl NaiveScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let between = outer_gram(&model.b);
        let total = &between + model.sigma.to_dense();
        Ok(NaiveScorer {
            pair: PairGaussian::new(&model.mu, &total, &between)?,
            single: Cholesky::new(&total, "B Bᵀ + Σ")?,
            mu: model.mu.clone(),
        })
    }

    pub fn score(&self, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
        let d = self.mu.len();
        check_len(xt, d, "PLDA score xt")?;
        check_len(xs, d, "PLDA score xs")?;
        let marginal = crate::gaussmath::gauss_logpdf(xt, &self.mu, &self.single)
            + crate::gaussmath::gauss_logpdf(xs, &self.mu, &self.single);
        Ok(self.pair.logpdf(xt, xs) - marginal)
    }
}

/// `log N([xt;xs] | [μ;μ], [[BBᵀ+Σ, BBᵀ],[BBᵀ, BBᵀ+Σ]]) − log N(xt|μ, BBᵀ+Σ) − log N(xs|μ, BBᵀ+Σ)`
pub fn llr_naive(model: &PldaModel, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
    NaiveScorer::new(model)?.score(xt, xs)
}

/// Quadratic-form scorer:
/// `½[(xt−μ)ᵀQ(xt−μ) + 2(xt−μ)ᵀP(xs−μ) + (xs−μ)ᵀQ(xs−μ)] + constant`.
#[derive(Debug, Clone)]
pub struct FastScorer {
    q: SymMatrix,
    p: SymMatrix,
    constant: f64,
    mu: DVector<f64>,
}

impl FastScorer {
    /// With `Σ1 = BBᵀ + Σ`, `Σ2 = BBᵀ` and `Y = (Σ1 − Σ2 Σ1^{-1} Σ2)^{-1}`:
    /// `Q = Σ1^{-1} − Y`, `P = Σ1^{-1} Σ2 Y`.
    ///
    /// `Y = (Σ + B X Bᵀ)^{-1}` with `X = I − Bᵀ Σ1^{-1} B`, so both inverses
    /// come from the Woodbury identity.
    pub fn new(model: &PldaModel) -> Result<Self> {
        let b = &model.b;
        let n = b.ncols();
        let sigma1_inv = lowrank_inverse(&model.sigma, b)?;
        let x = DMatrix::identity(n, n) - b.transpose() * sigma1_inv.as_matrix() * b;
        let x = (&x + x.transpose()) * 0.5;
        let x_inv = Cholesky::new(&x, "X = I − Bᵀ Σ1^{-1} B")?.inverse();
        let y = woodbury_inverse(&model.sigma, b, &x_inv)?;

        let q = SymMatrix::symmetrize(sigma1_inv.as_matrix() - y.as_matrix());
        let p = SymMatrix::symmetrize(sigma1_inv.as_matrix() * outer_gram(b) * y.as_matrix());

        // Normalizers: ln|Σ1| − ½ln|Σ1+Σ2| − ½ln|Σ1−Σ2|, reduced by the
        // determinant lemma to ln|I + W| − ½ ln|I + 2W|, W = Bᵀ Σ^{-1} B.
        let sinv = model.sigma.inverse_diagonal();
        let w = DMatrix::from_fn(n, n, |r, c| {
            (0..b.nrows()).map(|k| b[(k, r)] * sinv[k] * b[(k, c)]).sum()
        });
        let w = (&w + w.transpose()) * 0.5;
        let eye = DMatrix::<f64>::identity(n, n);
        let ld1 = Cholesky::new(&(&eye + &w), "I + W")?.log_det();
        let ld2 = Cholesky::new(&(&eye + &w * 2.0), "I + 2W")?.log_det();

        Ok(FastScorer {
            q,
            p,
            constant: ld1 - 0.5 * ld2,
            mu: model.mu.clone(),
        })
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn p(&self) -> &SymMatrix {
        &self.p
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn score(&self, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
        let d = self.mu.len();
        check_len(xt, d, "PLDA score xt")?;
        check_len(xs, d, "PLDA score xs")?;
        let a = xt - &self.mu;
        let b = xs - &self.mu;
        let q = self.q.as_matrix();
        let quad = a.dot(&(q * &a)) + 2.0 * a.dot(&(self.p.as_matrix() * &b)) + b.dot(&(q * &b));
        Ok(0.5 * quad + self.constant)
    }
}

/// One-shot form of [`FastScorer::score`].
pub fn llr_fast(scorer: &FastScorer, xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
    scorer.score(xt, xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledVector;

    fn scalar_model(b: f64, sigma: f64) -> PldaModel {
        PldaModel::new(
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, b),
            DiagMatrix::from_slice(&[sigma]).unwrap(),
        )
        .unwrap()
    }

    fn one_point(x: f64) -> Dataset {
        Dataset::new(
            1,
            vec![LabeledVector {
                features: DVector::from_element(1, x),
                label_a: 0,
                label_b: 0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn estep_zero_factor_gives_prior() {
        let model = PldaModel::new(
            DVector::zeros(2),
            DMatrix::zeros(2, 3),
            DiagMatrix::from_slice(&[1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let data = Dataset::new(
            2,
            vec![
                LabeledVector {
                    features: DVector::from_vec(vec![1.0, 2.0]),
                    label_a: 0,
                    label_b: 0,
                },
                LabeledVector {
                    features: DVector::from_vec(vec![-1.0, 0.5]),
                    label_a: 1,
                    label_b: 0,
                },
            ],
        )
        .unwrap();
        for s in e_step(&model, &data, Grouping::LabelA).unwrap() {
            assert_eq!(s.mean, DVector::zeros(3));
            assert_eq!(s.second.as_matrix(), &DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn estep_scalar_closed_form() {
        let stats = e_step(&scalar_model(1.0, 1.0), &one_point(2.0), Grouping::Cell).unwrap();
        assert!((stats[0].mean[0] - 1.0).abs() < 1e-15);
        assert!((stats[0].second.as_matrix()[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn mstep_scalar_updates() {
        let model = scalar_model(1.0, 1.0);
        let data = one_point(2.0);
        let stats = e_step(&model, &data, Grouping::Cell).unwrap();
        let next = m_step(&model, &stats, &data, Grouping::Cell).unwrap();
        assert!((next.b()[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((next.sigma().diagonal()[0] - 4.0 / 3.0).abs() < 1e-14);
        assert_eq!(next.mu()[0], 0.0);
    }

    #[test]
    fn mstep_zero_expectations() {
        let model = PldaModel::new(
            DVector::zeros(2),
            DMatrix::from_element(2, 1, 0.0),
            DiagMatrix::from_slice(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let data = Dataset::new(
            2,
            vec![
                LabeledVector {
                    features: DVector::from_vec(vec![1.0, 2.0]),
                    label_a: 0,
                    label_b: 0,
                },
                LabeledVector {
                    features: DVector::from_vec(vec![-1.0, 4.0]),
                    label_a: 1,
                    label_b: 0,
                },
            ],
        )
        .unwrap();
        let stats = e_step(&model, &data, Grouping::LabelA).unwrap();
        let next = m_step(&model, &stats, &data, Grouping::LabelA).unwrap();
        assert_eq!(next.b(), &DMatrix::zeros(2, 1));
        assert_eq!(next.sigma().diagonal().as_slice(), &[1.0, 10.0]);
    }

    #[test]
    fn mstep_zero_residuals_hit_floor() {
        let model = PldaModel::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::zeros(2, 1),
            DiagMatrix::from_slice(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let data = Dataset::new(
            2,
            (0..2)
                .map(|a| LabeledVector {
                    features: DVector::from_element(2, 1.0),
                    label_a: a,
                    label_b: 0,
                })
                .collect(),
        )
        .unwrap();
        let stats = e_step(&model, &data, Grouping::LabelA).unwrap();
        let next = m_step(&model, &stats, &data, Grouping::LabelA).unwrap();
        assert!(next
            .sigma()
            .diagonal()
            .iter()
            .all(|v| *v == crate::gaussmath::VARIANCE_FLOOR));
    }

    #[test]
    fn mstep_rejects_mismatched_stats() {
        let model = scalar_model(1.0, 1.0);
        let stats = e_step(&model, &one_point(2.0), Grouping::Cell).unwrap();
        let two = Dataset::new(
            1,
            vec![
                LabeledVector {
                    features: DVector::from_element(1, 1.0),
                    label_a: 0,
                    label_b: 0,
                },
                LabeledVector {
                    features: DVector::from_element(1, 1.0),
                    label_a: 1,
                    label_b: 0,
                },
            ],
        )
        .unwrap();
        assert!(m_step(&model, &stats, &two, Grouping::Cell).is_err());
    }

    #[test]
    fn naive_scalar_and_zero_factor() {
        let z = DVector::from_element(1, 0.0);
        let v = llr_naive(&scalar_model(1.0, 1.0), &z, &z).unwrap();
        assert!((v - (2f64.ln() - 0.5 * 3f64.ln())).abs() < 1e-14);
        assert!((v - 0.14384).abs() < 1e-5);
        let flat = scalar_model(0.0, 2.0);
        let x = DVector::from_element(1, 1.7);
        assert!(llr_naive(&flat, &x, &z).unwrap().abs() < 1e-14);
    }

    #[test]
    fn fast_scalar_matrices() {
        let f = FastScorer::new(&scalar_model(1.0, 1.0)).unwrap();
        assert!((f.q().as_matrix()[(0, 0)] + 1.0 / 6.0).abs() < 1e-14);
        assert!((f.p().as_matrix()[(0, 0)] - 1.0 / 3.0).abs() < 1e-14);
        assert!((f.constant() - 0.143841).abs() < 1e-6);
        let z = DVector::from_element(1, 0.0);
        assert_eq!(f.score(&z, &z).unwrap(), f.constant());

        let flat = FastScorer::new(&scalar_model(0.0, 1.0)).unwrap();
        assert_eq!(flat.q().as_matrix()[(0, 0)], 0.0);
        assert_eq!(flat.p().as_matrix()[(0, 0)], 0.0);
        assert_eq!(flat.constant(), 0.0);
    }

    #[test]
    fn zero_iterations_returns_init() {
        let data = Dataset::new(
            1,
            (0..4)
                .map(|i| LabeledVector {
                    features: DVector::from_element(1, i as f64),
                    label_a: i % 2,
                    label_b: 0,
                })
                .collect(),
        )
        .unwrap();
        let config = PldaConfig {
            iterations: 0,
            subspace_dim: 1,
            ..Default::default()
        };
        let init = initialize(&data, &config).unwrap();
        let (model, trace) = train(&data, &config).unwrap();
        assert_eq!(model, init);
        assert_eq!(trace.values().len(), 1);
    }

    #[test]
    fn train_needs_two_classes() {
        let config = PldaConfig {
            subspace_dim: 1,
            ..Default::default()
        };
        assert!(matches!(
            train(&one_point(1.0), &config),
            Err(Error::TooFewLabels { .. })
        ));
    }
}
