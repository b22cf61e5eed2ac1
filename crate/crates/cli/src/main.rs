//! `gemmed` command-line tool.
//!
//! Exit codes: 0 success, 1 contract or validation failure, 2 input error.

mod checks;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gemmed::eval::{
    auc, detection_accuracy, detection_rates, misclassification_error, precision_recall_curve,
    write_curve_csv, EvaluationReport,
};
use gemmed::experiment::{run_sweep, write_sweep_csv, SweepConfig};
use gemmed::gem::GemConfig;
use gemmed::gemmed::{train, Detection, HyperParams};
use gemmed::kernels::{KernelKind, KernelSpec};
use gemmed::model::{ModelDocument, FORMAT_VERSION};
use gemmed::oracle::MAX_ORACLE_SIZE;
use gemmed::synthdata::{generate, RingExperimentConfig};
use gemmed::{Label, LabeledDataset};

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn contract(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<gemmed::Error> for Failure {
    fn from(e: gemmed::Error) -> Self {
        use gemmed::Error::*;
        let code = match e {
            Numeric(_) | Invariant(_) | Training(_) => 1,
            Input(_) | Config(_) | Refused(_) | Io(_) | Json(_) | Csv(_) => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "gemmed",
    version,
    about = "Robust kernel classification with jointly learned anomaly indicators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-Gaussian training/test CSVs with ring anomalies.
    Simulate(SimulateArgs),
    /// Train a model and write it as JSON.
    ///
    /// The model stores per-sample indicator means eta_hat in [0,1]. LOW eta_hat
    /// means the sample is likely anomalous; samples with eta_hat > 1/2 form the
    /// nominal set used for detection.
    Train(TrainArgs),
    /// Write one predicted label per input row.
    Predict(PredictArgs),
    /// Score rows against the learned nominal set and call anomalies.
    Detect(DetectArgs),
    /// Join outputs with truth files and emit a JSON report.
    ///
    /// The precision-recall curve ranks training samples by eta_hat, LOW values
    /// first: a sample is flagged anomalous when eta_hat <= rho.
    Evaluate(EvaluateArgs),
    /// Compare analytic dual gradients with finite differences of the exact dual.
    Gradcheck(CheckArgs),
    /// Compare Gibbs expectations with exact enumeration.
    OracleCompare(CheckArgs),
    /// Run a grid of ring experiments and write a tidy CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Inner ring radius of the anomalies.
    #[arg(long = "R", default_value_t = 55.0)]
    radius: f64,
    /// Fraction of each training class replaced by anomalies.
    #[arg(long, default_value_t = 0.2)]
    ra: f64,
    /// Training samples per class.
    #[arg(long, default_value_t = 100)]
    n_train: usize,
    /// Test samples per class.
    #[arg(long, default_value_t = 2000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "train.csv")]
    out_train: PathBuf,
    #[arg(long, default_value = "test.csv")]
    out_test: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV (`y,x1,...[,is_anomaly]`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "linear")]
    kernel: KernelKind,
    /// RBF width, or `auto` for the median heuristic.
    #[arg(long, default_value = "auto")]
    gamma: String,
    /// Neighbor count of the k-NN graph.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Fraction of each class expected to be nominal.
    #[arg(long, default_value_t = 0.8)]
    coverage: f64,
    /// Rate of the exponential slack prior.
    #[arg(long, default_value_t = 10.0)]
    c: f64,
    /// Clip bound for lambda (default 0.99 c).
    #[arg(long)]
    lambda_cap: Option<f64>,
    /// Prior probability of eta = 1 (default: the coverage).
    #[arg(long)]
    p0: Option<f64>,
    /// Step sizes `phi,psi,tau`.
    #[arg(long, value_parser = parse_rates, default_value = "0.002,0.02,0.02")]
    rates: (f64, f64, f64),
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Sampler settings `sweeps,draws,burn_in`.
    #[arg(long, value_parser = parse_gibbs, default_value = "30,20,10")]
    gibbs: (usize, usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.json")]
    model_out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (`row,label,decision`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (`row,score,call`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Truth CSV for predictions/detections (`y` and optional `is_anomaly`).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output of `predict`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output of `detect`.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Trained model; its eta_hat ranks the training samples (low = anomalous).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training CSV with `is_anomaly`, aligned with the model's samples.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Where to write the precision-recall curve CSV.
    #[arg(long, default_value = "pr_curve.csv")]
    curve_out: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Instance size (at most 16).
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep configuration (see docs/sweep-config.md).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_triple<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T, T), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated {what}"));
    }
    let p = |v: &str| {
        v.parse::<T>()
            .map_err(|_| format!("bad value {v:?} in {what}"))
    };
    Ok((p(parts[0])?, p(parts[1])?, p(parts[2])?))
}

fn parse_rates(s: &str) -> Result<(f64, f64, f64), String> {
    parse_triple(s, "rates phi,psi,tau")
}

fn parse_gibbs(s: &str) -> Result<(usize, usize, usize), String> {
    parse_triple(s, "values sweeps,draws,burn_in")
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_data(path: &Path) -> CliResult<LabeledDataset> {
    LabeledDataset::load_csv(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<ModelDocument> {
    ModelDocument::load(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> CliResult {
    let cfg = RingExperimentConfig {
        radius: a.radius,
        corruption: a.ra,
        n_train_per_class: a.n_train,
        n_test_per_class: a.n_test,
        seed: a.seed,
    };
    let (train, test) = generate(&cfg)?;
    for (set, path) in [(&train, &a.out_train), (&test, &a.out_test)] {
        set.save_csv(path, true)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }
    println!(
        "wrote {} training rows to {}",
        train.len(),
        a.out_train.display()
    );
    println!("wrote {} test rows to {}", test.len(), a.out_test.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let data = load_data(&a.data)?;
    data.require_both_classes()?;
    let kernel = match a.kernel {
        KernelKind::Linear => KernelSpec::linear(),
        KernelKind::Rbf if a.gamma == "auto" => KernelSpec::rbf_auto(&data.features)?,
        KernelKind::Rbf => KernelSpec::rbf(a.gamma.parse().map_err(|_| {
            Failure::input(format!(
                "--gamma must be a number or `auto`, got {:?}",
                a.gamma
            ))
        })?),
    };
    let gem = GemConfig {
        k: a.k,
        target_coverage: a.coverage,
        seed: a.seed,
        ..GemConfig::default()
    };
    gem.validate()?;
    let hyper = HyperParams {
        c: a.c,
        lambda_cap: a.lambda_cap,
        p0: a.p0,
        rates: a.rates,
        steps: a.steps,
        gibbs_sweeps: a.gibbs.0,
        inner_draws: a.gibbs.1,
        burn_in: a.gibbs.2,
        seed: a.seed,
        ..HyperParams::default()
    };
    hyper.validate()?;
    for w in hyper.warnings() {
        eprintln!("warning: {w}");
    }
    let model = train(&data, &kernel, &gem, &hyper)?;
    ModelDocument::from(&model)
        .save(&a.model_out)
        .map_err(|e| Failure::input(format!("{}: {e}", a.model_out.display())))?;
    let mean_eta = model.eta_hat.iter().sum::<f64>() / model.eta_hat.len() as f64;
    match model.trace.last() {
        Some(d) => println!("final dual objective estimate: {d}"),
        None => println!("final dual objective estimate: n/a (no steps run)"),
    }
    println!("mean eta_hat: {mean_eta}");
    println!(
        "nominal samples (eta_hat > 1/2): {}",
        model.nominal_indices().len()
    );
    println!("model written to {}", a.model_out.display());
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> CliResult {
    let doc = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let labels = doc.predict_all(&data.features)?;
    let rule = doc.rule();
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.write_record(["row", "label", "decision"])?;
    for (i, (x, l)) in data.features.iter().zip(&labels).enumerate() {
        w.write_record([i.to_string(), l.to_string(), rule.decision(x).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> CliResult {
    let doc = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let calls = doc.detect_all(&data.features)?;
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.write_record(["row", "score", "call"])?;
    for (i, (score, call)) in calls.iter().enumerate() {
        let call = match call {
            Detection::Nominal => "nominal",
            Detection::Anomaly => "anomaly",
        };
        w.write_record([i.to_string(), score.to_string(), call.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one column of a CSV written by `predict` or `detect`.
fn read_column(path: &Path, column: &str) -> CliResult<Vec<String>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Failure::input(format!("{}: missing `{column}` column", path.display())))?;
    r.records().map(|rec| Ok(rec?[idx].to_string())).collect()
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult {
    let mut report = EvaluationReport {
        format_version: FORMAT_VERSION,
        ..EvaluationReport::default()
    };
    let truth = a.truth.as_deref().map(load_data).transpose()?;
    if (a.predictions.is_some() || a.detections.is_some()) && truth.is_none() {
        return Err(Failure::input(
            "--truth is required with --predictions or --detections",
        ));
    }
    if let (Some(path), Some(t)) = (&a.predictions, &truth) {
        let predicted = read_column(path, "label")?
            .iter()
            .map(|s| {
                s.parse::<Label>()
                    .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
            })
            .collect::<CliResult<Vec<_>>>()?;
        report.error = Some(misclassification_error(&predicted, &t.labels)?);
    }
    if let (Some(path), Some(t)) = (&a.detections, &truth) {
        let flags = t
            .anomaly
            .as_ref()
            .ok_or_else(|| Failure::input("truth file has no `is_anomaly` column"))?;
        let calls = read_column(path, "call")?
            .iter()
            .map(|s| match s.as_str() {
                "anomaly" => Ok(true),
                "nominal" => Ok(false),
                other => Err(Failure::input(format!(
                    "{}: unknown call {other:?}",
                    path.display()
                ))),
            })
            .collect::<CliResult<Vec<_>>>()?;
        report.detection_accuracy = Some(detection_accuracy(&calls, flags)?);
        if flags.iter().any(|&f| f) && flags.iter().any(|&f| !f) {
            let (tpr, far) = detection_rates(&calls, flags)?;
            report.true_positive_rate = Some(tpr);
            report.false_alarm_rate = Some(far);
        }
    }
    match (&a.model, &a.train_data) {
        (Some(m), Some(t)) => {
            let doc = load_model(m)?;
            let train = load_data(t)?;
            let flags = train
                .anomaly
                .as_ref()
                .ok_or_else(|| Failure::input("training file has no `is_anomaly` column"))?;
            if flags.len() != doc.eta_hat.len() {
                return Err(Failure::input(format!(
                    "model has {} training samples but {} has {} rows",
                    doc.eta_hat.len(),
                    t.display(),
                    flags.len()
                )));
            }
            let curve = precision_recall_curve(&doc.eta_hat, flags)?;
            report.auc = Some(auc(&curve)?);
            let file = File::create(&a.curve_out)
                .map_err(|e| Failure::input(format!("{}: {e}", a.curve_out.display())))?;
            write_curve_csv(&curve, BufWriter::new(file))?;
            report.pr_curve_path = Some(a.curve_out.display().to_string());
        }
        (None, None) => {}
        _ => {
            return Err(Failure::input(
                "--model and --train-data must be given together",
            ))
        }
    }
    let mut out = output(a.out.as_deref())?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Failure::input(e.to_string()))?
    )?;
    out.flush()?;
    Ok(())
}

fn check_size(a: &CheckArgs) -> CliResult {
    if a.n == 0 || a.n > MAX_ORACLE_SIZE {
        return Err(Failure::input(format!(
            "--n must lie in 1..={MAX_ORACLE_SIZE}, got {}",
            a.n
        )));
    }
    if a.trials == 0 {
        return Err(Failure::input("--trials must be positive"));
    }
    Ok(())
}

fn gradcheck_cmd(a: CheckArgs) -> CliResult {
    check_size(&a)?;
    let worst = checks::gradient_check(a.n, a.seed, a.trials)?;
    println!(
        "max relative gradient error over {} trials: {worst:.3e}",
        a.trials
    );
    if worst > checks::GRADIENT_TOLERANCE {
        return Err(Failure::contract(format!(
            "gradient error {worst:.3e} exceeds {:e}",
            checks::GRADIENT_TOLERANCE
        )));
    }
    Ok(())
}

fn oracle_compare_cmd(a: CheckArgs) -> CliResult {
    check_size(&a)?;
    let s = checks::oracle_compare(a.n, a.seed, a.trials)?;
    println!("max standardized deviation: {:.3}", s.max_deviation);
    println!(
        "expectations within {} SE: {}/{} ({:.1}%)",
        checks::SE_MULTIPLE,
        s.within,
        s.total,
        100.0 * s.within as f64 / s.total as f64
    );
    if (s.within as f64) < checks::MIN_WITHIN_FRACTION * s.total as f64 {
        return Err(Failure::contract(format!(
            "fewer than {:.0}% of expectations within {} SE",
            100.0 * checks::MIN_WITHIN_FRACTION,
            checks::SE_MULTIPLE
        )));
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Failure::input(format!("{}: {e}", a.config.display())))?;
    let cfg = SweepConfig::from_json(&text)?;
    let rows = run_sweep(&cfg)?;
    write_sweep_csv(&rows, output(a.out.as_deref())?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::OracleCompare(a) => oracle_compare_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
