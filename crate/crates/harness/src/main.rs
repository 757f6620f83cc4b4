use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use smtgpr::normative::{abnormality_probability, fit_gevd, GevdFit};
use smtgpr_harness::config::{DataSource, ExperimentConfig, Method};
use smtgpr_harness::experiment::{evaluate, run_experiment, write_report, Dataset};
use smtgpr_harness::io::{labels_to_matrix, load_csv, load_labels, load_matrix, save_matrix, CsvOptions, MatrixFormat};
use smtgpr_harness::model_file::FittedModel;
use smtgpr_harness::synth::generate_synthetic;
use smtgpr::DenseMatrix;

/// Multi-task Gaussian process regression with Kronecker covariance: fit,
/// predict, evaluate and benchmark.
#[derive(Debug, Parser)]
#[command(name = "smtgpr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model to training matrices and write a model file.
    Fit(FitArgs),
    /// Predict test inputs with a saved model.
    Predict(PredictArgs),
    /// Score test data with a saved model: R², NPM abnormality, AUC, GEVD.
    Eval(EvalArgs),
    /// Run the repeated experiment described by a config file.
    Bench(BenchArgs),
    /// Write a synthetic train/test split.
    GenData(GenDataArgs),
    /// Convert a matrix file between CSV and binary-v1.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Experiment config supplying kernels and optimizer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Smtgpr)]
    method: Method,
    /// Basis size for smtgpr.
    #[arg(long)]
    p: Option<usize>,
    /// Training inputs (N × F).
    #[arg(long)]
    x: PathBuf,
    /// Training responses (N × T).
    #[arg(long)]
    y: PathBuf,
    /// Input matrix format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<MatrixFormat>,
    /// Accepted for interface uniformity; fitting is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test inputs (N* × F).
    #[arg(long)]
    x: PathBuf,
    /// Output stem: writes <out>_mean, <out>_var and <out>_noise.
    #[arg(long)]
    out: PathBuf,
    /// Format for inputs and outputs; inferred from the extension of --x when omitted.
    #[arg(long, value_enum)]
    format: Option<MatrixFormat>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// One 0/1 value per test row (1 = abnormal).
    #[arg(long)]
    labels: PathBuf,
    /// Config supplying top_fraction and robust_mean.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<MatrixFormat>,
    /// Output stem: writes <out>.json and <out>_scores.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the report stem.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restricts the methods (repeatable).
    #[arg(long, value_enum)]
    method: Vec<Method>,
    /// Overrides the basis-size grid (repeatable).
    #[arg(long)]
    p: Vec<usize>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Config whose [data] table supplies the synthetic spec; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = MatrixFormat::Csv)]
    format: MatrixFormat,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Target format; inferred from the output extension when omitted.
    #[arg(long, value_enum)]
    format: Option<MatrixFormat>,
    /// Treat the first CSV line as a header.
    #[arg(long)]
    header: bool,
}

fn read(path: &Path, format: Option<MatrixFormat>) -> Result<DenseMatrix> {
    let fmt = format.unwrap_or_else(|| MatrixFormat::from_path(path));
    load_matrix(path, fmt).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn suffixed(stem: &Path, suffix: &str, ext: &str) -> PathBuf {
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    stem.with_file_name(format!("{name}{suffix}.{ext}"))
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    let x = read(&args.x, args.format)?;
    let y = read(&args.y, args.format)?;
    let (sample_kernel, task_kernel, single_kernel) = config.kernels.specs()?;
    let model = match args.method {
        Method::Smtgpr => {
            let p = args.p.context("--p is required for smtgpr")?;
            let mc = smtgpr::smtgpr::ModelConfig {
                sample_kernel,
                task_kernel,
                p,
                optimizer: config.optimizer,
                init: None,
                variance_batch: config.variance_batch,
            };
            FittedModel::Smtgpr(smtgpr::smtgpr::fit(&mc, &x, &y)?)
        }
        Method::MtKronprod => {
            let mc = smtgpr::baselines::MtKronprodConfig {
                sample_kernel,
                task_kernel,
                optimizer: config.mt_kronprod_optimizer.take().unwrap_or(config.optimizer),
                variance_batch: config.variance_batch,
                ..Default::default()
            };
            FittedModel::MtKronprod(smtgpr::baselines::mtkronprod_fit(&mc, &x, &y)?)
        }
        Method::Stgpr => {
            let sc = smtgpr::baselines::StgprConfig {
                kernel: single_kernel,
                optimizer: config.optimizer,
                init: None,
            };
            FittedModel::Stgpr(smtgpr::baselines::stgpr_fit(&sc, &x, &y)?)
        }
    };
    model.save(&args.out)?;
    eprintln!("wrote {} model to {}", model.method(), args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = FittedModel::load(&args.model)?;
    let fmt = args.format.unwrap_or_else(|| MatrixFormat::from_path(&args.x));
    let x = read(&args.x, Some(fmt))?;
    let pred = model.predict(&x)?;
    let t = pred.mean.ncols();
    let noise = DenseMatrix::from_fn(1, t, |_, j| pred.noise_variance.at(j));
    for (suffix, m) in [("_mean", &pred.mean), ("_var", &pred.variance_diag), ("_noise", &noise)] {
        save_matrix(&suffixed(&args.out, suffix, fmt.extension()), m, fmt)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    method: Method,
    mean_r2: f64,
    auc: f64,
    gevd: Option<GevdFit>,
    warnings: Vec<String>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let model = FittedModel::load(&args.model)?;
    let x = read(&args.x, args.format)?;
    let y = read(&args.y, args.format)?;
    let labels = load_labels(&args.labels, args.format.unwrap_or_else(|| MatrixFormat::from_path(&args.labels)))?;
    if labels.len() != y.nrows() || x.nrows() != y.nrows() {
        bail!("x, y and labels must have the same number of rows");
    }
    let pred = model.predict(&x)?;
    let mut eval = evaluate(&pred, &y, &labels, config.top_fraction, config.robust_mean)?;
    let normal: Vec<f64> = (0..labels.len()).filter(|&i| !labels[i]).map(|i| eval.scores[i]).collect();
    let gevd = match fit_gevd(&normal) {
        Ok(f) => Some(f),
        Err(e) => {
            eval.warnings.push(format!("GEVD fit on normal scores: {e}"));
            None
        }
    };
    let summary = EvalSummary {
        method: model.method(),
        mean_r2: eval.mean_r2,
        auc: eval.auc,
        gevd,
        warnings: eval.warnings,
    };
    let json_path = args.out.with_extension("json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", json_path.display()))?;

    let scores_path = suffixed(&args.out, "_scores", "csv");
    let mut w = csv::Writer::from_path(&scores_path)?;
    w.write_record(["row", "label", "score", "probability"])?;
    for (i, s) in eval.scores.iter().enumerate() {
        let prob = gevd.as_ref().map(|g| abnormality_probability(g, *s)).unwrap_or(f64::NAN);
        w.write_record([i.to_string(), u8::from(labels[i]).to_string(), format!("{s:?}"), format!("{prob:?}")])?;
    }
    w.flush()?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut config = load_config(Some(&args.config))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output = out;
    }
    if !args.method.is_empty() {
        config.methods = args.method;
    }
    if !args.p.is_empty() {
        config.p_grid = args.p;
    }
    config.validate()?;
    let rows = run_experiment(&config)?;
    let (csv_path, jsonl_path) = write_report(&rows, &config.output)?;
    eprintln!("wrote {} rows to {} and {}", rows.len(), csv_path.display(), jsonl_path.display());
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let DataSource::Synthetic(spec) = &config.data else {
        bail!("config data source is not synthetic");
    };
    let data = generate_synthetic(spec, args.seed)?;
    let d = Dataset {
        x_train: data.x_train,
        y_train: data.y_train,
        x_test: data.x_test,
        y_test: data.y_test,
        labels: data.labels,
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ext = args.format.extension();
    for (name, m) in [
        ("x_train", &d.x_train),
        ("y_train", &d.y_train),
        ("x_test", &d.x_test),
        ("y_test", &d.y_test),
        ("labels", &labels_to_matrix(&d.labels)),
    ] {
        save_matrix(&args.out.join(format!("{name}.{ext}")), m, args.format)?;
    }
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let from = MatrixFormat::from_path(&args.input);
    let m = match from {
        MatrixFormat::Csv => load_csv(&args.input, CsvOptions { has_header: args.header })?,
        MatrixFormat::Binary => load_matrix(&args.input, from)?,
    };
    let to = args.format.unwrap_or_else(|| MatrixFormat::from_path(&args.out));
    save_matrix(&args.out, &m, to)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Convert(a) => cmd_convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
