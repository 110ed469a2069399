//! Trials, enrollment averaging, scoring and equal error rates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::jplda::{JointPriors, JointScorer, View, ViewPriors};
use crate::plda::{FastScorer, NaiveScorer};

/// Target trials and the three kinds of nontarget trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialType {
    /// Same speaker, same phrase.
    Tgt,
    /// Impostor, wrong phrase.
    Iw,
    /// Target speaker, wrong phrase.
    Tw,
    /// Impostor, correct phrase.
    Ic,
}

impl TrialType {
    pub const NONTARGET: [TrialType; 3] = [TrialType::Iw, TrialType::Ic, TrialType::Tw];

    pub fn tag(self) -> &'static str {
        match self {
            TrialType::Tgt => "TGT",
            TrialType::Iw => "IW",
            TrialType::Tw => "TW",
            TrialType::Ic => "IC",
        }
    }

    pub fn is_target(self) -> bool {
        self == TrialType::Tgt
    }
}

impl fmt::Display for TrialType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TrialType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "TGT" => Ok(TrialType::Tgt),
            "IW" => Ok(TrialType::Iw),
            "TW" => Ok(TrialType::Tw),
            "IC" => Ok(TrialType::Ic),
            other => Err(format!("unknown trial type {other:?}")),
        }
    }
}

/// Enrollment rows are averaged into one model vector; `test` is scored against it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: Vec<usize>,
    pub test: usize,
    pub kind: TrialType,
}

/// Coordinate-wise mean.
pub fn average_enroll(vectors: &[&DVector<f64>]) -> Result<DVector<f64>> {
    let first = vectors.first().ok_or(Error::EmptyEnrollment)?;
    let mut acc = DVector::zeros(first.len());
    for v in vectors {
        if v.len() != first.len() {
            return Err(Error::DimensionMismatch {
                context: "enrollment vectors",
                expected: first.len(),
                found: v.len(),
            });
        }
        acc += *v;
    }
    Ok(acc / vectors.len() as f64)
}

/// `dot(xt, xs) / (‖xt‖ ‖xs‖)`
pub fn cosine_score(xt: &DVector<f64>, xs: &DVector<f64>) -> Result<f64> {
    if xt.len() != xs.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine",
            expected: xt.len(),
            found: xs.len(),
        });
    }
    let (nt, ns) = (xt.norm(), xs.norm());
    if nt == 0.0 || ns == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(xt.dot(xs) / (nt * ns))
}

/// One operating point: accept when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points at `-inf`, every distinct score and `+inf`, by increasing threshold.
pub fn roc_points(scores: &[(f64, bool)]) -> Result<Vec<OperatingPoint>> {
    let n_tgt = scores.iter().filter(|s| s.1).count();
    let n_non = scores.len() - n_tgt;
    if n_tgt == 0 || n_non == 0 {
        return Err(Error::DegenerateTrialSet);
    }
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::NonFinite("trial scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (n_tgt as f64, n_non as f64);
    let mut points = vec![OperatingPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    }];
    // Counts of scores strictly below the current threshold.
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let thr = sorted[k].0;
        points.push(OperatingPoint {
            threshold: thr,
            far: (n_non - non_below) as f64 / nn,
            frr: tgt_below as f64 / nt,
        });
        while k < sorted.len() && sorted[k].0 == thr {
            if sorted[k].1 {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            k += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate and the threshold where it is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Linear interpolation between the two operating points where `FAR − FRR`
/// changes sign.
pub(crate) fn eer_from_points(points: &[OperatingPoint]) -> Eer {
    let gap = |p: &OperatingPoint| p.far - p.frr;
    let k = points
        .iter()
        .position(|p| gap(p) <= 0.0)
        .expect("last operating point has FAR − FRR = −1");
    let b = points[k];
    if k == 0 || gap(&b) == 0.0 {
        return Eer {
            eer: b.far,
            threshold: b.threshold,
        };
    }
    let a = points[k - 1];
    let alpha = gap(&a) / (gap(&a) - gap(&b));
    let eer = a.far + alpha * (b.far - a.far);
    let threshold = match (a.threshold.is_finite(), b.threshold.is_finite()) {
        (true, true) => a.threshold + alpha * (b.threshold - a.threshold),
        (true, false) => a.threshold,
        (false, true) => b.threshold,
        (false, false) => 0.0,
    };
    Eer { eer, threshold }
}

/// EER over `(score, is_target)` pairs by a full threshold sweep.
/// Ties at the threshold count as acceptances.
pub fn sweep_eer(scores: &[(f64, bool)]) -> Result<Eer> {
    Ok(eer_from_points(&roc_points(scores)?))
}

/// Anything that scores an (enrollment, test) pair.
pub trait PairScorer: Sync {
    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64>;
}

/// Cosine similarity baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cosine;

impl PairScorer for Cosine {
    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        cosine_score(test, enroll)
    }
}

impl PairScorer for NaiveScorer {
    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        NaiveScorer::score(self, test, enroll)
    }
}

impl PairScorer for FastScorer {
    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        FastScorer::score(self, test, enroll)
    }
}

/// Which joint-model test to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointHypothesis {
    Joint(JointPriors),
    View(View, ViewPriors),
}

/// A [`JointScorer`] bound to one hypothesis test.
#[derive(Debug, Clone)]
pub struct BoundJointScorer {
    pub scorer: JointScorer,
    pub hypothesis: JointHypothesis,
}

impl PairScorer for BoundJointScorer {
    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        match &self.hypothesis {
            JointHypothesis::Joint(p) => self.scorer.llr(p, test, enroll),
            JointHypothesis::View(view, p) => self.scorer.llr_view(p, *view, test, enroll),
        }
    }
}

/// EER of one nontarget type (or all of them pooled) against the target scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EerRow {
    /// `IW`, `IC`, `TW` or `Total`.
    pub label: String,
    pub nontarget_count: usize,
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub target_count: usize,
    /// Nontarget types present, in IW, IC, TW order, then `Total`.
    pub rows: Vec<EerRow>,
    /// Raw score of every trial, in trial order.
    pub scores: Vec<f64>,
    pub kinds: Vec<TrialType>,
}

impl EvalReport {
    pub fn row(&self, label: &str) -> Option<&EerRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn total(&self) -> &EerRow {
        self.row("Total").expect("every report has a Total row")
    }

    /// Recomputes the rows from `scores` and `kinds`.
    pub fn from_scores(scores: Vec<f64>, kinds: Vec<TrialType>) -> Result<Self> {
        let targets: Vec<(f64, bool)> = scores
            .iter()
            .zip(&kinds)
            .filter(|(_, k)| k.is_target())
            .map(|(s, _)| (*s, true))
            .collect();
        let mut rows = Vec::new();
        let mut pooled = targets.clone();
        for kind in TrialType::NONTARGET {
            let non: Vec<(f64, bool)> = scores
                .iter()
                .zip(&kinds)
                .filter(|(_, k)| **k == kind)
                .map(|(s, _)| (*s, false))
                .collect();
            if non.is_empty() {
                continue;
            }
            let mut set = targets.clone();
            set.extend_from_slice(&non);
            let e = sweep_eer(&set)?;
            rows.push(EerRow {
                label: kind.tag().to_string(),
                nontarget_count: non.len(),
                eer: e.eer,
                threshold: e.threshold,
            });
            pooled.extend(non);
        }
        let e = sweep_eer(&pooled)?;
        rows.push(EerRow {
            label: "Total".to_string(),
            nontarget_count: pooled.len() - targets.len(),
            eer: e.eer,
            threshold: e.threshold,
        });
        Ok(EvalReport {
            target_count: targets.len(),
            rows,
            scores,
            kinds,
        })
    }
}

/// Scores every trial (in parallel), then reports per-type and pooled EERs.
pub fn score_trials<S: PairScorer + ?Sized>(
    scorer: &S,
    features: &[DVector<f64>],
    trials: &[Trial],
) -> Result<Vec<f64>> {
    let annotate = |index: usize| {
        move |e: Error| Error::Trial {
            index,
            source: Box::new(e),
        }
    };
    trials
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            let lookup = |row: usize| {
                features.get(row).ok_or_else(|| {
                    annotate(index)(Error::InvalidConfig(format!(
                        "feature row {row} out of range ({} rows)",
                        features.len()
                    )))
                })
            };
            let enroll_rows = t.enroll.iter().map(|&r| lookup(r)).collect::<Result<Vec<_>>>()?;
            let enroll = average_enroll(&enroll_rows).map_err(annotate(index))?;
            let test = lookup(t.test)?;
            scorer.score(&enroll, test).map_err(annotate(index))
        })
        .collect()
}

pub fn evaluate_trials<S: PairScorer + ?Sized>(
    scorer: &S,
    features: &[DVector<f64>],
    trials: &[Trial],
) -> Result<EvalReport> {
    let scores = score_trials(scorer, features, trials)?;
    EvalReport::from_scores(scores, trials.iter().map(|t| t.kind).collect())
}

/// Draws up to `per_type` trials of each type from a dataset.
///
/// Each cell's first `enroll_size` rows form that cell's enrollment; its
/// remaining rows are test candidates. A trial pairs an enrollment with a
/// test row from: the same cell (TGT), the same A label and another B label
/// (TW), another A label and the same B label (IC), or neither (IW).
pub fn make_trials(data: &Dataset, enroll_size: usize, per_type: usize, seed: u64) -> Result<Vec<Trial>> {
    if enroll_size == 0 {
        return Err(Error::EmptyEnrollment);
    }
    let (na, nb) = (data.num_a(), data.num_b());
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); na * nb];
    for (row, v) in data.vectors().iter().enumerate() {
        cells[v.label_a * nb + v.label_b].push(row);
    }
    let enrolls: Vec<(usize, usize, Vec<usize>)> = cells
        .iter()
        .enumerate()
        .filter(|(_, rows)| rows.len() > enroll_size)
        .map(|(c, rows)| (c / nb, c % nb, rows[..enroll_size].to_vec()))
        .collect();
    if enrolls.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no cell has more than {enroll_size} samples"
        )));
    }
    let tests_of = |a: usize, b: usize| &cells[a * nb + b][enroll_size.min(cells[a * nb + b].len())..];

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut trials = Vec::new();
    for kind in [TrialType::Tgt, TrialType::Iw, TrialType::Tw, TrialType::Ic] {
        let mut made = 0;
        let mut attempts = 0;
        while made < per_type && attempts < per_type * 50 {
            attempts += 1;
            let (a, b, enroll) = enrolls.choose(&mut rng).expect("non-empty");
            let pool: Vec<(usize, usize)> = match kind {
                TrialType::Tgt => vec![(*a, *b)],
                TrialType::Tw => (0..nb).filter(|&j| j != *b).map(|j| (*a, j)).collect(),
                TrialType::Ic => (0..na).filter(|&i| i != *a).map(|i| (i, *b)).collect(),
                TrialType::Iw => (0..na)
                    .filter(|&i| i != *a)
                    .flat_map(|i| (0..nb).filter(|&j| j != *b).map(move |j| (i, j)))
                    .collect(),
            };
            let Some(&(ta, tb)) = pool.choose(&mut rng) else {
                continue;
            };
            let Some(&test) = tests_of(ta, tb).choose(&mut rng) else {
                continue;
            };
            trials.push(Trial {
                enroll: enroll.clone(),
                test,
                kind,
            });
            made += 1;
        }
    }
    Ok(trials)
}
