use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use borders_core::borders::DecisionOracle;
use borders_core::data::{self, same_label, Dataset};
use borders_core::eval::{time_classifier, ConfusionMatrix, EvaluationReport, TimingReport};
use borders_core::kernel::{AgfConfig, AgfOracle, BinaryProblem};
use borders_core::multiclass::{self, MultiBordersModel};
use borders_core::svm::{self, SvmModel, SvmPairOracle};
use borders_core::{synth, Error, TrainOptions};

const TIMING_REPS: usize = 5;

/// Border-sampling acceleration of kernel classifiers.
#[derive(Parser)]
#[command(name = "borders", version)]
struct Cli {
    /// Worker threads for training [range: >= 1; default: all cores].
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the borders of a probability-enabled LIBSVM RBF model.
    Accelerate(AccelerateArgs),
    /// Train an AGF border classifier from labelled data.
    Train(TrainArgs),
    /// Classify with a border model.
    Classify(ClassifyArgs),
    /// Classify directly with a LIBSVM model (the baseline).
    ClassifySvm(ClassifySvmArgs),
    /// Score a prediction file against labelled data.
    Evaluate(EvaluateArgs),
    /// Shrink a dataset while keeping the smallest class whole.
    Subsample(SubsampleArgs),
    /// Draw points from the built-in two-class synthetic problem.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BorderArgs {
    /// Border samples per class pair [range: >= 1].
    #[arg(long = "borders", default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    n_borders: u32,
    /// Random seed [range: any u64].
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted |r| at a border sample [range: (0, 1)].
    #[arg(long, default_value_t = 1e-8, value_parser = open_unit)]
    tol: f64,
    /// Pair draws per border sample before giving up [range: >= 1].
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    max_attempts: u32,
}

impl BorderArgs {
    fn options(&self) -> TrainOptions {
        TrainOptions {
            tol: self.tol,
            max_attempts: self.max_attempts as usize,
            ..TrainOptions::default()
        }
    }
}

#[derive(Args)]
struct AccelerateArgs {
    /// LIBSVM model trained with probability estimates (svm-train -b 1).
    #[arg(long)]
    model: PathBuf,
    /// Training data in LIBSVM format.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    border: BorderArgs,
    /// Output border model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training data in LIBSVM format.
    #[arg(long)]
    data: PathBuf,
    /// Total kernel weight W [range: > 0, and < k when k > 0].
    #[arg(long, default_value_t = 10.0, value_parser = positive)]
    weight: f64,
    /// Nearest neighbours in the kernel sums, 0 for all [range: >= 0].
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[command(flatten)]
    border: BorderArgs,
    /// Output border model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictOutput {
    /// Prediction file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append the class probabilities to each prediction.
    #[arg(long)]
    prob: bool,
    /// Measure per-point time (warm-up plus median of 5 passes).
    #[arg(long)]
    timing: bool,
    /// Write a key=value evaluation report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Border model from `accelerate` or `train`.
    #[arg(long)]
    model: PathBuf,
    /// Test data in LIBSVM format.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    output: PredictOutput,
}

#[derive(Args)]
struct ClassifySvmArgs {
    /// LIBSVM RBF model.
    #[arg(long)]
    model: PathBuf,
    /// Test data in LIBSVM format.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    output: PredictOutput,
    /// Prediction file to compare against, e.g. from `classify`.
    #[arg(long)]
    agree_with: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Labelled data in LIBSVM format.
    #[arg(long)]
    truth: PathBuf,
    /// Prediction file; the first token of each line is the label.
    #[arg(long)]
    predictions: PathBuf,
    /// Key=value report file; standard output when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SubsampleArgs {
    /// Input data in LIBSVM format.
    #[arg(long)]
    data: PathBuf,
    /// Fraction of rows to keep [range: (0, 1)].
    #[arg(long, value_parser = open_unit)]
    fraction: f64,
    /// Random seed [range: any u64].
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output data file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of points [range: >= 2].
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    n: u64,
    /// Random seed [range: any u64].
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output data file.
    #[arg(long)]
    out: PathBuf,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is not positive")),
        Err(e) => Err(e.to_string()),
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("{v} is outside (0, 1)")),
        Err(e) => Err(e.to_string()),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn precondition(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } => 1,
            Error::Unsupported(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::Infeasible(_)
            | Error::MissingProbability(_)
            | Error::Io(_) => 2,
            Error::NoBandwidth(_)
            | Error::Singular(_)
            | Error::RootFinding(_)
            | Error::Untrainable(_)
            | Error::TimerResolution(_) => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

trait Context<T> {
    fn context(self, what: &Path) -> CliResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, what: &Path) -> CliResult<T> {
        self.map_err(|e| {
            let mut f = e.into();
            f.message = format!("{}: {}", what.display(), f.message);
            f
        })
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).context(path)?))
}

fn read_data(path: &Path) -> CliResult<Dataset> {
    data::parse_libsvm_data(open(path)?).context(path)
}

fn read_svm(path: &Path) -> CliResult<SvmModel> {
    svm::parse_libsvm_model(open(path)?).context(path)
}

/// Writes through a temporary file in the target directory, renamed into
/// place once complete.
fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).context(path)?;
    let mut w = BufWriter::new(tmp);
    body(&mut w).context(path)?;
    let tmp = w.into_inner().map_err(|e| e.into_error()).context(path)?;
    tmp.persist(path).map_err(|e| e.error).context(path)?;
    Ok(())
}

fn write_output(
    path: Option<&Path>,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> CliResult<()> {
    match path {
        Some(p) => write_atomic(p, body),
        None => {
            let mut out = io::stdout().lock();
            body(&mut out)?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Pads a test set up to the model dimension; trailing zero features are
/// routinely omitted from sparse files.
fn fit_dim(test: Dataset, dim: usize) -> CliResult<Dataset> {
    if test.dim() > dim {
        return Err(Failure::precondition(format!(
            "test data has {} features but the model has {dim}",
            test.dim()
        )));
    }
    Ok(test.with_dim(dim)?)
}

/// Maps test labels onto model classes. A file whose rows all carry one
/// label that names no model class is treated as unlabelled.
fn truth_ids(test: &Dataset, classes: &[String]) -> CliResult<Option<Vec<usize>>> {
    let map: Vec<Option<usize>> = test
        .class_names()
        .iter()
        .map(|name| classes.iter().position(|c| same_label(c, name)))
        .collect();
    if test.n_classes() == 1 && map[0].is_none() {
        return Ok(None);
    }
    if let Some(k) = map.iter().position(Option::is_none) {
        return Err(Failure::precondition(format!(
            "test label `{}` is not a model class",
            test.class_names()[k]
        )));
    }
    Ok(Some(
        test.labels().iter().map(|&l| map[l].unwrap()).collect(),
    ))
}

struct Predictions {
    classes: Vec<usize>,
    probabilities: Option<Vec<Vec<f64>>>,
}

fn emit(
    test: &Dataset,
    class_names: &[String],
    preds: &Predictions,
    out: &PredictOutput,
    timing: Option<TimingReport>,
) -> CliResult<()> {
    write_output(out.out.as_deref(), |w| {
        for (k, &c) in preds.classes.iter().enumerate() {
            write!(w, "{}", class_names[c])?;
            if let Some(p) = &preds.probabilities {
                for v in &p[k] {
                    write!(w, " {v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    })?;

    let confusion = match truth_ids(test, class_names)? {
        Some(truth) => Some(ConfusionMatrix::from_labels(
            &truth,
            &preds.classes,
            class_names.len(),
        )?),
        None => None,
    };
    let Some(confusion) = confusion else {
        if let Some(t) = &timing {
            eprintln!("time per point: {:.3e} s", t.seconds_per_point);
        }
        return Ok(());
    };
    let report = EvaluationReport {
        class_names: class_names.to_vec(),
        confusion,
        timing,
    };
    report.write_text(io::stderr().lock())?;
    if let Some(path) = &out.report {
        write_atomic(path, |w| report.write_key_values(w))?;
    }
    Ok(())
}

fn timing(
    out: &PredictOutput,
    test: &Dataset,
    classify: impl FnMut(&[f64]) -> borders_core::Result<(usize, Vec<f64>)>,
) -> CliResult<Option<TimingReport>> {
    if !out.timing {
        return Ok(None);
    }
    Ok(Some(time_classifier(classify, test, TIMING_REPS)?))
}

fn print_audit<'a>(
    model: &MultiBordersModel,
    oracle: impl Fn(usize, usize) -> CliResult<Box<dyn DecisionOracle + 'a>>,
) -> CliResult<()> {
    let names = model.class_names();
    for pair in model.pairs() {
        let (i, j) = (pair.class_minus, pair.class_plus);
        let residual = pair.max_residual(oracle(i, j)?.as_ref())?;
        eprintln!(
            "pair ({}, {}): {} borders, max |r| at borders {residual:.3e}",
            names[i],
            names[j],
            pair.n_borders()
        );
    }
    Ok(())
}

fn write_model(path: &Path, model: &MultiBordersModel) -> CliResult<()> {
    write_atomic(path, |w| multiclass::write_multi_borders(model, w))
}

fn cmd_accelerate(a: &AccelerateArgs) -> CliResult<()> {
    let model = read_svm(&a.model)?;
    if !model.has_probability() {
        return Err(Failure::precondition(format!(
            "{}: model has no probA/probB; retrain with `svm-train -b 1`",
            a.model.display()
        )));
    }
    let train = read_data(&a.data)?;
    let borders = multiclass::accelerate_svm(
        &model,
        &train,
        a.border.n_borders as usize,
        a.border.seed,
        &a.border.options(),
    )?;
    print_audit(&borders, |i, j| {
        Ok(Box::new(SvmPairOracle {
            model: &model,
            plus: j,
            minus: i,
        }))
    })?;
    eprintln!(
        "{} border samples in total against {} support vectors",
        borders.total_borders(),
        model.total_sv()
    );
    write_model(&a.out, &borders)
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let config = AgfConfig::new(a.weight, a.k)?;
    let train = read_data(&a.data)?;
    if train.n_classes() < 2 {
        return Err(Failure::precondition(format!(
            "{}: training data has a single class",
            a.data.display()
        )));
    }
    let borders = multiclass::train_agf_multi(
        &train,
        &config,
        a.border.n_borders as usize,
        a.border.seed,
        &a.border.options(),
    )?;
    print_audit(&borders, |i, j| {
        Ok(Box::new(AgfOracle {
            problem: BinaryProblem::from_dataset(&train, i, j)?,
            config,
        }))
    })?;
    write_model(&a.out, &borders)
}

fn cmd_classify(a: &ClassifyArgs) -> CliResult<()> {
    let model = multiclass::read_multi_borders(open(&a.model)?).context(&a.model)?;
    let test = fit_dim(read_data(&a.data)?, model.dim())?;
    let mut classes = Vec::with_capacity(test.len());
    let mut probs = Vec::with_capacity(test.len());
    for x in test.rows() {
        let (c, p) = model.predict(x)?;
        classes.push(c);
        probs.push(p);
    }
    let t = timing(&a.output, &test, |x| model.predict(x))?;
    let preds = Predictions {
        classes,
        probabilities: a.output.prob.then_some(probs),
    };
    emit(&test, model.class_names(), &preds, &a.output, t)
}

fn read_predicted_labels(path: &Path) -> CliResult<Vec<String>> {
    let mut labels = Vec::new();
    for line in open(path)?.lines() {
        let line = line.context(path)?;
        if let Some(tok) = line.split_whitespace().next() {
            labels.push(tok.to_string());
        }
    }
    Ok(labels)
}

fn cmd_classify_svm(a: &ClassifySvmArgs) -> CliResult<()> {
    let model = read_svm(&a.model)?;
    let test = fit_dim(read_data(&a.data)?, model.dim)?;
    if a.output.prob && !model.has_probability() {
        return Err(Failure::precondition(format!(
            "{}: --prob needs probA/probB; retrain with `svm-train -b 1`",
            a.model.display()
        )));
    }
    let predict = |x: &[f64]| -> borders_core::Result<(usize, Vec<f64>)> {
        if model.has_probability() {
            multiclass::svm_predict(&model, x)
        } else {
            Ok((model.vote(x)?, Vec::new()))
        }
    };
    let mut classes = Vec::with_capacity(test.len());
    let mut probs = Vec::with_capacity(test.len());
    for x in test.rows() {
        let (c, p) = predict(x)?;
        classes.push(c);
        probs.push(p);
    }
    if let Some(path) = &a.agree_with {
        let other = read_predicted_labels(path)?;
        if other.len() != classes.len() {
            return Err(Failure::precondition(format!(
                "{}: {} predictions for {} test points",
                path.display(),
                other.len(),
                classes.len()
            )));
        }
        let same = classes
            .iter()
            .zip(&other)
            .filter(|(&c, o)| same_label(&model.labels[c], o))
            .count();
        eprintln!(
            "agreement: {} ({same}/{})",
            same as f64 / classes.len() as f64,
            classes.len()
        );
    }
    let t = timing(&a.output, &test, predict)?;
    let preds = Predictions {
        classes,
        probabilities: a.output.prob.then_some(probs),
    };
    emit(&test, &model.labels, &preds, &a.output, t)
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let truth = read_data(&a.truth)?;
    let predicted = read_predicted_labels(&a.predictions)?;
    if predicted.len() != truth.len() {
        return Err(Failure::precondition(format!(
            "{} predictions for {} labelled rows",
            predicted.len(),
            truth.len()
        )));
    }
    let mut names = truth.class_names().to_vec();
    let mut estimate = Vec::with_capacity(predicted.len());
    for p in &predicted {
        let id = match names.iter().position(|n| same_label(n, p)) {
            Some(id) => id,
            None => {
                names.push(p.clone());
                names.len() - 1
            }
        };
        estimate.push(id);
    }
    let report = EvaluationReport {
        confusion: ConfusionMatrix::from_labels(truth.labels(), &estimate, names.len())?,
        class_names: names,
        timing: None,
    };
    write_output(a.report.as_deref(), |w| report.write_key_values(w))
}

fn cmd_subsample(a: &SubsampleArgs) -> CliResult<()> {
    let d = read_data(&a.data)?;
    let plan = data::subsample_plan(&d.class_counts(), a.fraction)?;
    let out = data::subsample(&d, a.fraction, a.seed)?;
    eprintln!("zeta = {:.6}", plan.zeta);
    for (name, (before, after)) in d
        .class_names()
        .iter()
        .zip(d.class_counts().iter().zip(&plan.kept))
    {
        eprintln!("class {name}: {before} -> {after}");
    }
    write_atomic(&a.out, |w| data::write_libsvm_data(&out, w))
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let n = usize::try_from(a.n).map_err(|_| Failure::precondition("--n too large"))?;
    let d = synth::synth_dataset(n, a.seed)?;
    write_atomic(&a.out, |w| data::write_libsvm_data(&d, w))
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t as usize)
            .build_global()
            .map_err(|e| Failure::precondition(e.to_string()))?;
    }
    match &cli.command {
        Command::Accelerate(a) => cmd_accelerate(a),
        Command::Train(a) => cmd_train(a),
        Command::Classify(a) => cmd_classify(a),
        Command::ClassifySvm(a) => cmd_classify_svm(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Subsample(a) => cmd_subsample(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
