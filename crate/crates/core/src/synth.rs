//! Ground-truth models and datasets drawn from the joint generative model.
//!
//! Randomness comes from ChaCha20 seeded with `SynthConfig::seed`, one
//! stream per draw category so that changing e.g. the number of samples per
//! cell does not perturb the latent draws:
//!
//! | stream | draws                                   |
//! |--------|-----------------------------------------|
//! | 0      | truth parameters `μ`, `S`, `T`          |
//! | 1      | view-A latents `u_i`                    |
//! | 2      | view-B latents `v_j`                    |
//! | 3      | per-sample noise `ε_ijk`                |
//! | 4-6    | as 1-3, for held-out data               |

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub use crate::dataset::{Dataset, LabeledVector};
use crate::error::{Error, Result};
use crate::gaussmath::{outer_gram, DiagMatrix};
use crate::jplda::JointPldaModel;

/// Samples per cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellCounts {
    Uniform(usize),
    /// `table[i][j]` samples in cell `(i, j)`.
    Table(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub n_u: usize,
    pub n_v: usize,
    /// Number of view-A labels (`I`).
    pub n_a: usize,
    /// Number of view-B labels (`J`).
    pub n_b: usize,
    pub per_cell: CellCounts,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_a == 0 || self.n_b == 0 {
            return Err(Error::InvalidConfig("d, I and J must all be >= 1".into()));
        }
        if self.n_u + self.n_v == 0 {
            return Err(Error::InvalidConfig("n_u + n_v must be >= 1".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("noise scale must be finite and >= 0".into()));
        }
        match &self.per_cell {
            CellCounts::Uniform(0) => Err(Error::InvalidConfig("samples per cell must be >= 1".into())),
            CellCounts::Uniform(_) => Ok(()),
            CellCounts::Table(t) => {
                if t.len() != self.n_a || t.iter().any(|row| row.len() != self.n_b) {
                    return Err(Error::InvalidConfig("cell-count table must be I x J".into()));
                }
                if t.iter().flatten().any(|&h| h == 0) {
                    return Err(Error::InvalidConfig("samples per cell must be >= 1".into()));
                }
                Ok(())
            }
        }
    }

    fn count(&self, i: usize, j: usize) -> usize {
        match &self.per_cell {
            CellCounts::Uniform(h) => *h,
            CellCounts::Table(t) => t[i][j],
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = StandardNormal.sample(rng);
        }
    }
    m
}

fn normal_vector(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// `μ`, `S`, `T` with i.i.d. standard normal entries and `Σ = noise_scale² I`.
pub fn make_truth(config: &SynthConfig) -> Result<JointPldaModel> {
    config.validate()?;
    let mut rng = stream(config.seed, 0);
    let mu = normal_vector(&mut rng, config.d);
    let s = normal_matrix(&mut rng, config.d, config.n_u);
    let t = normal_matrix(&mut rng, config.d, config.n_v);
    let sigma = DiagMatrix::from_element(config.d, config.noise_scale * config.noise_scale)?;
    JointPldaModel::new(mu, s, t, sigma)
}

fn sample_with(
    truth: &JointPldaModel,
    config: &SynthConfig,
    first_stream: u64,
    id_offset: (u64, u64),
) -> Result<Dataset> {
    config.validate()?;
    if truth.dim() != config.d || truth.n_u() != config.n_u || truth.n_v() != config.n_v {
        return Err(Error::DimensionMismatch {
            context: "truth model vs synth config",
            expected: config.d,
            found: truth.dim(),
        });
    }
    let mut rng_u = stream(config.seed, first_stream);
    let mut rng_v = stream(config.seed, first_stream + 1);
    let mut rng_e = stream(config.seed, first_stream + 2);
    let signal_a: Vec<DVector<f64>> = (0..config.n_a)
        .map(|_| truth.s() * normal_vector(&mut rng_u, config.n_u))
        .collect();
    let signal_b: Vec<DVector<f64>> = (0..config.n_b)
        .map(|_| truth.t() * normal_vector(&mut rng_v, config.n_v))
        .collect();
    let noise_sd = truth.sigma().diagonal().map(f64::sqrt);

    let mut vectors = Vec::new();
    for (i, sa) in signal_a.iter().enumerate() {
        for (j, sb) in signal_b.iter().enumerate() {
            let centre = truth.mu() + sa + sb;
            for _ in 0..config.count(i, j) {
                let eps = normal_vector(&mut rng_e, config.d).component_mul(&noise_sd);
                vectors.push(LabeledVector {
                    features: &centre + eps,
                    label_a: i,
                    label_b: j,
                });
            }
        }
    }
    Dataset::with_ids(
        config.d,
        vectors,
        (0..config.n_a as u64).map(|i| i + id_offset.0).collect(),
        (0..config.n_b as u64).map(|j| j + id_offset.1).collect(),
    )
}

/// Draws `u_i`, `v_j`, then `x_ijk = μ + S u_i + T v_j + ε_ijk` cell by cell.
pub fn sample_dataset(truth: &JointPldaModel, config: &SynthConfig) -> Result<Dataset> {
    sample_with(truth, config, 1, (0, 0))
}

/// Fresh latent draws from the same truth; label ids start at `I` and `J`
/// so they never collide with [`sample_dataset`]'s.
pub fn sample_heldout(truth: &JointPldaModel, config: &SynthConfig) -> Result<Dataset> {
    sample_with(truth, config, 4, (config.n_a as u64, config.n_b as u64))
}

/// Relative Frobenius errors of the identifiable quantities `SSᵀ`, `TTᵀ`, `Σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceError {
    pub err_s: f64,
    pub err_t: f64,
    pub err_sigma: f64,
}

fn relative(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> f64 {
    let gap = (truth - est).norm();
    let scale = truth.norm();
    if scale == 0.0 {
        gap
    } else {
        gap / scale
    }
}

/// `‖SSᵀ_true − SSᵀ_est‖_F / ‖SSᵀ_true‖_F`, likewise for `T` and the diagonal of `Σ`.
/// A zero truth block falls back to the absolute error.
pub fn subspace_error(truth: &JointPldaModel, estimate: &JointPldaModel) -> Result<SubspaceError> {
    if truth.dim() != estimate.dim() {
        return Err(Error::DimensionMismatch {
            context: "subspace_error",
            expected: truth.dim(),
            found: estimate.dim(),
        });
    }
    let sig = |m: &JointPldaModel| DMatrix::from_column_slice(m.dim(), 1, m.sigma().diagonal().as_slice());
    Ok(SubspaceError {
        err_s: relative(&outer_gram(truth.s()), &outer_gram(estimate.s())),
        err_t: relative(&outer_gram(truth.t()), &outer_gram(estimate.t())),
        err_sigma: relative(&sig(truth), &sig(estimate)),
    })
}
