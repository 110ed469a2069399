//! `mvplda`: synthesize data, train PLDA / joint PLDA, score trials, report EERs.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvplda::eval::{self, BoundJointScorer, Cosine, EvalReport, JointHypothesis, PairScorer};
use mvplda::formats::{self, AnyModel, FormatError, ReportSummary};
use mvplda::jplda::{self, JointConfig, JointScorer};
use mvplda::plda::{self, FastScorer, NaiveScorer, PldaConfig};
use mvplda::synth::{self, CellCounts, SynthConfig};
use mvplda::{Dataset, Grouping, JointPriors, View, ViewPriors};

#[derive(Parser)]
#[command(name = "mvplda", version, about = "PLDA and joint PLDA toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labelled feature file from a random joint model.
    Synth(SynthArgs),
    /// Fit a model with EM.
    Train(TrainArgs),
    /// Score a trial list and write one score per line.
    Score(ScoreArgs),
    /// Score a trial list and write a per-type EER report, or check a report.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    nu: usize,
    #[arg(long, default_value_t = 2)]
    nv: usize,
    /// Number of view-A labels.
    #[arg(long)]
    speakers: usize,
    /// Number of view-B labels.
    #[arg(long)]
    phrases: usize,
    #[arg(long, default_value_t = 5)]
    per_cell: usize,
    /// Residual standard deviation.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating model.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write a held-out set with fresh labels from the same model.
    #[arg(long)]
    eval_out: Option<PathBuf>,
    /// Write a trial list over the held-out set (needs --eval-out).
    #[arg(long, requires = "eval_out")]
    trials_out: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    trials_per_type: usize,
    /// Enrollment rows per trial.
    #[arg(long, default_value_t = 3)]
    enroll: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Plda,
    Jplda,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupBy {
    /// One class per (A, B) label pair.
    Cell,
    A,
    B,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = plda::DEFAULT_ITERATIONS)]
    iters: usize,
    /// Subspace dimension for plda.
    #[arg(long, default_value_t = plda::DEFAULT_SUBSPACE_DIM)]
    n: usize,
    #[arg(long, default_value_t = jplda::DEFAULT_VIEW_DIM)]
    nu: usize,
    #[arg(long, default_value_t = jplda::DEFAULT_VIEW_DIM)]
    nv: usize,
    /// Class definition for plda.
    #[arg(long, value_enum, default_value_t = GroupBy::Cell)]
    grouping: GroupBy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    /// Model file; the log-likelihood trace goes to `<out>.ll`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Hypothesis {
    Joint,
    ViewA,
    ViewB,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Naive,
    Fast,
}

#[derive(Args)]
struct ScoringArgs {
    /// Joint-model test (jplda only). Default: joint.
    #[arg(long, value_enum)]
    hypothesis: Option<Hypothesis>,
    /// PLDA scorer (plda only). Default: fast.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Comma-separated priors: 3 for joint, 4 for view-a/view-b.
    #[arg(long)]
    priors: Option<String>,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    trials: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Parse a report and print it. With --scores, also recompute its rows.
    #[arg(long, conflicts_with_all = ["model", "cosine", "features", "trials", "report"])]
    check: Option<PathBuf>,
    #[arg(long, conflicts_with = "cosine")]
    model: Option<PathBuf>,
    /// Score with cosine similarity instead of a model.
    #[arg(long)]
    cosine: bool,
    #[arg(long, value_enum)]
    hypothesis: Option<Hypothesis>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    priors: Option<String>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Raw scores: written when evaluating, read when checking.
    #[arg(long)]
    scores: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<mvplda::Error> for Failure {
    fn from(e: mvplda::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else if matches!(e, mvplda::Error::InvalidPriors(_) | mvplda::Error::InvalidConfig(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

/// Format errors carry the file they came from.
fn format_failure(path: &Path, e: FormatError) -> Failure {
    match e {
        FormatError::Model(inner) => match Failure::from(inner) {
            Failure::Numeric(m) => Failure::Numeric(format!("{}: {m}", path.display())),
            other => Failure::Data(format!("{}: {}", path.display(), other.message())),
        },
        other => Failure::Data(format!("{}: {other}", path.display())),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_features(path: &Path) -> CliResult<Dataset> {
    formats::parse_features(&read(path)?).map_err(|e| format_failure(path, e))
}

fn load_model(path: &Path) -> CliResult<AnyModel> {
    formats::parse_model(&read(path)?).map_err(|e| format_failure(path, e))
}

fn load_trials(path: &Path, rows: usize) -> CliResult<Vec<eval::Trial>> {
    formats::parse_trials(&read(path)?, rows).map_err(|e| format_failure(path, e))
}

fn parse_priors(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("--priors: cannot parse {t:?}")))
        })
        .collect()
}

fn joint_hypothesis(hypothesis: Hypothesis, priors: Option<&str>) -> CliResult<JointHypothesis> {
    let values = priors.map(parse_priors).transpose()?;
    let wrong_len = |n: usize| Failure::Usage(format!("--priors: this hypothesis takes {n} values"));
    Ok(match hypothesis {
        Hypothesis::Joint => JointHypothesis::Joint(match values {
            None => JointPriors::default(),
            Some(v) if v.len() == 3 => JointPriors::new(v[0], v[1], v[2])?,
            Some(_) => return Err(wrong_len(3)),
        }),
        Hypothesis::ViewA | Hypothesis::ViewB => {
            let view = if matches!(hypothesis, Hypothesis::ViewA) {
                View::A
            } else {
                View::B
            };
            JointHypothesis::View(
                view,
                match values {
                    None => ViewPriors::default(),
                    Some(v) if v.len() == 4 => ViewPriors::new(v[0], v[1], v[2], v[3])?,
                    Some(_) => return Err(wrong_len(4)),
                },
            )
        }
    })
}

fn build_scorer(
    model: AnyModel,
    hypothesis: Option<Hypothesis>,
    mode: Option<Mode>,
    priors: Option<&str>,
) -> CliResult<Box<dyn PairScorer>> {
    match model {
        AnyModel::Plda(m) => {
            if hypothesis.is_some() || priors.is_some() {
                return Err(Failure::Usage(
                    "--hypothesis and --priors apply to jplda models only".into(),
                ));
            }
            Ok(match mode.unwrap_or(Mode::Fast) {
                Mode::Fast => Box::new(FastScorer::new(&m)?),
                Mode::Naive => Box::new(NaiveScorer::new(&m)?),
            })
        }
        AnyModel::Joint(m) => {
            if mode.is_some() {
                return Err(Failure::Usage("--mode applies to plda models only".into()));
            }
            Ok(Box::new(BoundJointScorer {
                scorer: JointScorer::new(&m)?,
                hypothesis: joint_hypothesis(hypothesis.unwrap_or(Hypothesis::Joint), priors)?,
            }))
        }
    }
}

fn run_synth(a: SynthArgs) -> CliResult {
    let config = SynthConfig {
        d: a.d,
        n_u: a.nu,
        n_v: a.nv,
        n_a: a.speakers,
        n_b: a.phrases,
        per_cell: CellCounts::Uniform(a.per_cell),
        noise_scale: a.noise,
        seed: a.seed,
    };
    let truth = synth::make_truth(&config)?;
    write(
        &a.out,
        &formats::write_features(&synth::sample_dataset(&truth, &config)?),
    )?;
    if let Some(path) = &a.truth {
        write(path, &formats::write_model(&AnyModel::Joint(truth.clone())))?;
    }
    if let Some(path) = &a.eval_out {
        let held = synth::sample_heldout(&truth, &config)?;
        write(path, &formats::write_features(&held))?;
        if let Some(tpath) = &a.trials_out {
            let trials = eval::make_trials(&held, a.enroll, a.trials_per_type, a.seed)?;
            write(tpath, &formats::write_trials(&trials))?;
        }
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> CliResult {
    let data = load_features(&a.input)?;
    let (model, trace) = match a.kind {
        Kind::Plda => {
            let grouping = match a.grouping {
                GroupBy::Cell => Grouping::Cell,
                GroupBy::A => Grouping::LabelA,
                GroupBy::B => Grouping::LabelB,
            };
            let config = PldaConfig {
                iterations: a.iters,
                seed: a.seed,
                subspace_dim: a.n,
                grouping,
            };
            let (m, t) = plda::train(&data, &config)?;
            (AnyModel::Plda(m), t)
        }
        Kind::Jplda => {
            let config = JointConfig {
                iterations: a.iters,
                seed: a.seed,
                n_u: a.nu,
                n_v: a.nv,
            };
            let (m, t) = jplda::train(&data, &config)?;
            (AnyModel::Joint(m), t)
        }
    };
    write(&a.out, &formats::write_model(&model))?;
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".ll");
    let lines: String = trace.values().iter().map(|v| format!("{v:.16e}\n")).collect();
    write(Path::new(&sidecar), &lines)?;
    Ok(())
}

/// Loads features and trials, then scores every trial.
fn score_all(scorer: &dyn PairScorer, s: &ScoringPaths) -> CliResult<(Vec<f64>, Vec<eval::TrialType>)> {
    let data = load_features(s.features)?;
    let trials = load_trials(s.trials, data.len())?;
    let feats = formats::feature_rows(&data);
    let scores = eval::score_trials(scorer, &feats, &trials)?;
    Ok((scores, trials.iter().map(|t| t.kind).collect()))
}

struct ScoringPaths<'a> {
    features: &'a Path,
    trials: &'a Path,
}

fn run_score(a: ScoreArgs) -> CliResult {
    let s = &a.scoring;
    let scorer = build_scorer(load_model(&a.model)?, s.hypothesis, s.mode, s.priors.as_deref())?;
    let paths = ScoringPaths {
        features: &s.features,
        trials: &s.trials,
    };
    let (scores, kinds) = score_all(scorer.as_ref(), &paths)?;
    write(&a.out, &formats::write_scores(&scores, &kinds))
}

fn print_report(summary: &ReportSummary) {
    println!("{:<6} {:>8} {:>9}", "type", "trials", "EER (%)");
    println!("{:<6} {:>8}", "TGT", summary.target_count);
    for row in &summary.rows {
        println!("{:<6} {:>8} {:>9.3}", row.label, row.nontarget_count, 100.0 * row.eer);
    }
}

fn run_check(report: &Path, scores: Option<&Path>) -> CliResult {
    let summary = formats::parse_report(&read(report)?).map_err(|e| format_failure(report, e))?;
    if let Some(path) = scores {
        let (s, k) = formats::parse_scores(&read(path)?).map_err(|e| format_failure(path, e))?;
        let again = ReportSummary::from(&EvalReport::from_scores(s, k)?);
        if again != summary {
            return Err(Failure::Data(format!(
                "{} does not match the rows recomputed from {}",
                report.display(),
                path.display()
            )));
        }
    }
    print_report(&summary);
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult {
    if let Some(report) = &a.check {
        return run_check(report, a.scores.as_deref());
    }
    let missing = |flag: &str| Failure::Usage(format!("eval needs {flag} (or --check <report>)"));
    let features = a.features.as_deref().ok_or_else(|| missing("--features"))?;
    let trials = a.trials.as_deref().ok_or_else(|| missing("--trials"))?;
    let report_path = a.report.as_deref().ok_or_else(|| missing("--report"))?;
    let scorer: Box<dyn PairScorer> = match (&a.model, a.cosine) {
        (Some(path), false) => build_scorer(load_model(path)?, a.hypothesis, a.mode, a.priors.as_deref())?,
        (None, true) => {
            if a.hypothesis.is_some() || a.mode.is_some() || a.priors.is_some() {
                return Err(Failure::Usage(
                    "--cosine takes no --hypothesis, --mode or --priors".into(),
                ));
            }
            Box::new(Cosine)
        }
        _ => return Err(missing("--model or --cosine")),
    };
    let (scores, kinds) = score_all(scorer.as_ref(), &ScoringPaths { features, trials })?;
    if let Some(path) = &a.scores {
        write(path, &formats::write_scores(&scores, &kinds))?;
    }
    let report = EvalReport::from_scores(scores, kinds)?;
    write(report_path, &formats::write_report(&report))?;
    print_report(&ReportSummary::from(&report));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Score(a) => run_score(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mvplda: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
