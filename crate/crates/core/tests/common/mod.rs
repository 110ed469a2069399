//! Helpers shared by the integration tests: random models and dense oracles
//! that use nothing from the library's own linear algebra.
#![allow(dead_code)]

use mvplda::gaussmath::DiagMatrix;
use mvplda::{Dataset, JointPldaModel, LabeledVector, PldaModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * {
            let z: f64 = StandardNormal.sample(rng);
            z
        }
    })
}

pub fn normal_vector<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        scale * {
            let z: f64 = StandardNormal.sample(rng);
            z
        }
    })
}

pub fn random_diag<R: Rng>(rng: &mut R, d: usize) -> DiagMatrix {
    DiagMatrix::new(DVector::from_fn(d, |_, _| rng.random_range(0.2..2.0))).unwrap()
}

pub fn random_plda<R: Rng>(rng: &mut R, d: usize, n: usize) -> PldaModel {
    PldaModel::new(
        normal_vector(rng, d, 1.0),
        normal_matrix(rng, d, n, 0.7),
        random_diag(rng, d),
    )
    .unwrap()
}

pub fn random_joint<R: Rng>(rng: &mut R, d: usize, n_u: usize, n_v: usize) -> JointPldaModel {
    JointPldaModel::new(
        normal_vector(rng, d, 1.0),
        normal_matrix(rng, d, n_u, 0.7),
        normal_matrix(rng, d, n_v, 0.7),
        random_diag(rng, d),
    )
    .unwrap()
}

/// Every (a, b) cell gets between 1 and `max_h` samples.
pub fn random_dataset<R: Rng>(rng: &mut R, d: usize, n_a: usize, n_b: usize, max_h: usize) -> Dataset {
    let mut vectors = Vec::new();
    for a in 0..n_a {
        for b in 0..n_b {
            for _ in 0..rng.random_range(1..=max_h) {
                vectors.push(LabeledVector {
                    features: normal_vector(rng, d, 1.5),
                    label_a: a,
                    label_b: b,
                });
            }
        }
    }
    Dataset::new(d, vectors).unwrap()
}

/// Log density of `N(mu, cov)` through an eigendecomposition.
pub fn dense_logpdf(x: &DVector<f64>, mu: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(cov.clone());
    let r = eig.eigenvectors.transpose() * (x - mu);
    let mut acc = x.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        assert!(*lambda > 0.0, "oracle covariance not positive definite");
        acc += lambda.ln() + r[k] * r[k] / lambda;
    }
    -0.5 * acc
}

/// Log density of the stacked pair `[xt; xs]` under `[[diag, off], [off, diag]]`.
pub fn dense_pair_logpdf(
    xt: &DVector<f64>,
    xs: &DVector<f64>,
    mu: &DVector<f64>,
    diag: &DMatrix<f64>,
    off: &DMatrix<f64>,
) -> f64 {
    let d = xt.len();
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(diag);
    cov.view_mut((d, d), (d, d)).copy_from(diag);
    cov.view_mut((0, d), (d, d)).copy_from(off);
    cov.view_mut((d, 0), (d, d)).copy_from(off);
    let x = DVector::from_iterator(2 * d, xt.iter().chain(xs.iter()).cloned());
    let m = DVector::from_iterator(2 * d, mu.iter().chain(mu.iter()).cloned());
    dense_logpdf(&x, &m, &cov)
}

/// Posterior of the shared `z ~ N(0, I)` given samples `x_h = mu + B z + e_h`,
/// `e_h ~ N(0, diag(sigma))`, from the joint Gaussian of `(z, x_1, .., x_H)`.
/// Returns `(E[z], E[z zᵀ])`.
#[allow(clippy::needless_range_loop)]
pub fn conditional_posterior(
    samples: &[DVector<f64>],
    mu: &DVector<f64>,
    b: &DMatrix<f64>,
    sigma: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (d, n, h) = (mu.len(), b.ncols(), samples.len());
    let bbt = b * b.transpose();
    let mut cxx = DMatrix::zeros(h * d, h * d);
    let mut czx = DMatrix::zeros(n, h * d);
    let mut centred = DVector::zeros(h * d);
    for i in 0..h {
        czx.view_mut((0, i * d), (n, d)).copy_from(&b.transpose());
        centred.rows_mut(i * d, d).copy_from(&(&samples[i] - mu));
        for j in 0..h {
            let mut block = bbt.clone();
            if i == j {
                for k in 0..d {
                    block[(k, k)] += sigma[k];
                }
            }
            cxx.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    let lu = cxx.lu();
    let gain = lu
        .solve(&czx.transpose())
        .expect("oracle covariance singular")
        .transpose();
    let mean = &gain * centred;
    let cov = DMatrix::identity(n, n) - &gain * czx.transpose();
    let second = cov + &mean * mean.transpose();
    (mean, second)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest entrywise `|a − b| / max(|a|, |b|, tiny)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// FAR/FRR at every threshold between distinct scores by direct counting,
/// interpolated where FAR − FRR changes sign.
pub fn brute_force_eer(scores: &[(f64, bool)]) -> f64 {
    let mut distinct: Vec<f64> = scores.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(distinct.iter().cloned());
    thresholds.push(f64::INFINITY);
    let nt = scores.iter().filter(|s| s.1).count() as f64;
    let nn = scores.len() as f64 - nt;
    let mut prev: Option<(f64, f64)> = None;
    for t in thresholds {
        let far = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64 / nn;
        let frr = scores.iter().filter(|s| s.1 && s.0 < t).count() as f64 / nt;
        if far - frr <= 0.0 {
            return match prev {
                Some((pf, pr)) if far - frr < 0.0 => {
                    let alpha = (pf - pr) / ((pf - pr) - (far - frr));
                    pf + alpha * (far - pf)
                }
                _ => far,
            };
        }
        prev = Some((far, frr));
    }
    unreachable!("FAR − FRR reaches −1 at +inf")
}
