mod error;
mod manifest;

use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;
use stressmon_core::dataset::{self, FeatureRow, LabeledDataset};
use stressmon_core::model::{
    map_labels, run_crossval, run_learning_curve, run_personalization, spearman, BinaryTask,
    ClassifierKind, ClassifierSpec, EvalConfig, LearningCurveConfig,
};
use stressmon_core::pipeline::{process_window, PipelineConfig};
use stressmon_core::signal::window_csv;
use stressmon_server::{ExportKind, Service, ServiceConfig};
use stressmon_sim::{make_cohort, run_cohort, HttpEndpoint, SimOptions, SimReport, SubjectProfile};

use error::CliError;
use manifest::Manifest;

/// 2024-01-01 00:00 UTC.
const DEFAULT_START_MS: i64 = 1_704_067_200_000;

#[derive(Parser)]
#[command(
    name = "stressmon",
    version,
    about = "Wearable stress monitoring toolkit"
)]
struct Cli {
    /// Service configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory; overrides the configuration file.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Seed for stochastic subcommands (simulate, experiment).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the ingestion service.
    Serve(ServeArgs),
    /// Stream synthetic subjects to a service.
    Simulate(SimulateArgs),
    /// Turn a window CSV into a feature CSV.
    Process(ProcessArgs),
    /// Evaluate classifiers on a labeled feature CSV.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Fetch a labeled or unlabeled dataset export.
    Export(ExportArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Take request time from `now_ms` parameters (simulation only).
    #[arg(long)]
    trust_client_clock: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Service base URL; without it the service runs in-process on --data-dir.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    days: f64,
    /// Cohort size when no --profile is given.
    #[arg(long, default_value_t = 3)]
    subjects: usize,
    /// Subject profile file; repeat for several subjects.
    #[arg(long = "profile")]
    profiles: Vec<PathBuf>,
    /// Simulated seconds per wall second; 0 runs as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    accel: f64,
    #[arg(long, default_value_t = DEFAULT_START_MS)]
    start_ms: i64,
    /// Do not answer prompts.
    #[arg(long)]
    no_respond: bool,
    #[arg(long, default_value_t = 20)]
    max_retries: u32,
    /// Directory for per-subject report CSVs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Labeled feature CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "T3")]
    task: BinaryTask,
    /// rf or knn.
    #[arg(long, default_value = "rf")]
    model: ClassifierKind,
    /// JSON report path; stdout when omitted.
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Stratified k-fold cross-validation.
    Crossval {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Leave-one-subject-out with and without half of the subject's data.
    Personalization {
        #[command(flatten)]
        m: ModelArgs,
        /// Held-out subject; every subject when omitted.
        #[arg(long)]
        subject: Option<String>,
    },
    /// Macro-F1 against training-set size on one subject.
    LearningCurve {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long, default_value_t = 100)]
        test_size: usize,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 50)]
        step: usize,
        /// Largest training size; defaults to all rows outside the test set.
        #[arg(long)]
        max_train: Option<usize>,
    },
}

#[derive(Args)]
struct ExportArgs {
    /// Service base URL; without it the data directory is read directly.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value = "labeled")]
    kind: ExportKind,
    #[arg(long)]
    subject: Option<String>,
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

fn require_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => Cli::command()
            .error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "this subcommand is stochastic and needs --seed <SEED>",
            )
            .exit(),
    }
}

fn service_config(cli: &Cli) -> Result<ServiceConfig, CliError> {
    let mut cfg = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::input(parent.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::input(path.display().to_string(), e))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            std::io::stdout()
                .flush()
                .map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<(), CliError> {
    let mut cfg = service_config(cli)?;
    if let Some(l) = args.listen {
        cfg.listen = l;
    }
    cfg.trust_client_clock |= args.trust_client_clock;
    let listen = cfg.listen;
    let svc = Arc::new(Service::open(cfg)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| CliError::Config(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        println!("listening on {addr}");
        let _ = std::io::stdout().flush();
        log::info!("serving {} subjects on {addr}", svc.subject_ids().len());
        stressmon_server::http::serve(svc, listener, async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
        .map_err(CliError::from)
    })
}

fn report_summary(r: &SimReport) -> serde_json::Value {
    json!({
        "subject": r.subject_id,
        "windows_emitted": r.rows.len(),
        "windows_delivered": r.delivered(),
        "prompts_seen": r.prompts_seen,
        "prompts_ignored": r.prompts_ignored,
        "responses_accepted": r.responses_accepted,
        "responses_rejected": r.responses_rejected,
        "failed_attempts": r.failed_attempts,
        "failure": r.failure,
    })
}

fn simulate(cli: &Cli, args: &SimulateArgs, seed: u64) -> Result<(), CliError> {
    if !(args.days > 0.0 && args.days.is_finite()) || args.accel < 0.0 {
        return Err(CliError::Config(
            "--days must be positive and --accel non-negative".into(),
        ));
    }
    let profiles: Vec<SubjectProfile> = if args.profiles.is_empty() {
        if args.subjects == 0 {
            return Err(CliError::Config("--subjects must be at least 1".into()));
        }
        make_cohort(args.subjects, seed)
    } else {
        args.profiles
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::input(p.display().to_string(), e))?;
                Ok(SubjectProfile::from_toml(&text)?)
            })
            .collect::<Result<_, CliError>>()?
    };
    let mut opts = SimOptions::days(args.start_ms, args.days, seed);
    opts.auto_respond = !args.no_respond;
    opts.max_retries = args.max_retries;

    let results = match &args.server {
        Some(url) => {
            let ep = HttpEndpoint::new(url);
            ep.health()?;
            run_cohort(&profiles, &opts, args.accel, &ep)
        }
        None => {
            let svc = Service::open(service_config(cli)?)?;
            let r = run_cohort(&profiles, &opts, args.accel, &svc);
            svc.checkpoint()?;
            r
        }
    };
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let summary = json!({
        "seed": seed,
        "days": args.days,
        "subjects": reports.iter().map(report_summary).collect::<Vec<_>>(),
    });
    let summary_text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if let Some(dir) = &args.out_dir {
        let mut m = Manifest::new(
            "simulate",
            Some(seed),
            json!({
                "server": args.server, "days": args.days, "subjects": profiles.len(),
                "accel": args.accel, "start_ms": args.start_ms,
                "auto_respond": !args.no_respond, "max_retries": args.max_retries,
            }),
        );
        for p in &args.profiles {
            m = m.input(p);
        }
        for (r, p) in reports.iter().zip(&profiles) {
            let mut buf = Vec::new();
            r.write_csv(&mut buf)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            let path = dir.join(format!("report_{}.csv", r.subject_id));
            write_file(&path, &String::from_utf8(buf).expect("csv is utf-8"))?;
            let prof = dir.join(format!("profile_{}.toml", p.subject_id));
            write_file(&prof, &p.to_toml())?;
            m = m.output(&path).output(&prof);
        }
        let path = dir.join("summary.json");
        write_file(&path, &summary_text)?;
        m.output(&path).write_beside(&path)?;
    }
    print!("{summary_text}");
    let failed: Vec<_> = reports
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| format!("{}: {f}", r.subject_id)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Simulation(failed.join("; ")))
    }
}

fn process(args: &ProcessArgs) -> Result<(), CliError> {
    let ctx = args.input.display().to_string();
    let f = File::open(&args.input).map_err(|e| CliError::input(&ctx, e))?;
    let windows =
        window_csv::read_windows(BufReader::new(f)).map_err(|e| CliError::input(&ctx, e))?;
    let cfg = PipelineConfig::default();
    let mut rows = Vec::new();
    let mut unusable = Vec::new();
    for w in &windows {
        match process_window(w, &cfg) {
            Ok(out) => rows.push(FeatureRow {
                subject_id: w.subject_id.clone(),
                timestamp_ms: w.start_time_ms,
                features: out.features,
                flags: out.flags,
            }),
            Err(e) => unusable.push(json!({
                "subject": w.subject_id, "start_time_ms": w.start_time_ms, "reason": e.to_string(),
            })),
        }
    }
    let mut buf = Vec::new();
    dataset::write_feature_rows(&mut buf, &rows).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&args.output, &String::from_utf8(buf).expect("csv is utf-8"))?;
    Manifest::new("process", None, json!({ "pipeline": format!("{cfg:?}") }))
        .input(&args.input)
        .output(&args.output)
        .write_beside(&args.output)?;
    let summary = json!({ "windows": windows.len(), "usable": rows.len(), "unusable": unusable });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn load_labeled(path: &Path) -> Result<LabeledDataset, CliError> {
    let f = File::open(path).map_err(|e| CliError::input(path.display().to_string(), e))?;
    dataset::read_labeled_rows(BufReader::new(f))
        .map_err(|e| CliError::input(path.display().to_string(), e))
}

fn experiment(cmd: &ExperimentCmd, seed: u64) -> Result<(), CliError> {
    let (m, name, result) = match cmd {
        ExperimentCmd::Crossval { m, folds } => {
            let data = load_labeled(&m.data)?;
            let spec = ClassifierSpec::of_kind(m.model, seed);
            let report = run_crossval(&data, m.task, &spec, &EvalConfig { k: *folds, seed })?;
            (
                m,
                "crossval",
                serde_json::to_value(report).expect("report serializes"),
            )
        }
        ExperimentCmd::Personalization { m, subject } => {
            let data = load_labeled(&m.data)?;
            let spec = ClassifierSpec::of_kind(m.model, seed);
            let subjects = match subject {
                Some(s) => vec![s.clone()],
                None => data.subjects(),
            };
            let reports = subjects
                .iter()
                .map(|s| run_personalization(&data, s, m.task, &spec, seed))
                .collect::<Result<Vec<_>, _>>()?;
            let improved = reports.iter().filter(|r| r.after >= r.before).count();
            (
                m,
                "personalization",
                json!({ "task": m.task, "classifier": m.model, "seed": seed,
                        "subjects": reports, "after_ge_before": improved }),
            )
        }
        ExperimentCmd::LearningCurve {
            m,
            subject,
            test_size,
            repeats,
            step,
            max_train,
        } => {
            let mut data = load_labeled(&m.data)?;
            let subjects = data.subjects();
            let chosen = match subject {
                Some(s) => s.clone(),
                None if subjects.len() == 1 => subjects[0].clone(),
                None => {
                    return Err(CliError::Config(format!(
                        "dataset has {} subjects; choose one with --subject",
                        subjects.len()
                    )))
                }
            };
            data.rows.retain(|r| r.subject_id == chosen);
            let bin = map_labels(&data, m.task)?;
            let max = max_train.unwrap_or(bin.len().saturating_sub(*test_size));
            let cfg = LearningCurveConfig {
                test_size: *test_size,
                train_sizes: (*step..=max).step_by((*step).max(1)).collect(),
                repeats: *repeats,
                seed,
            };
            let spec = ClassifierSpec::of_kind(m.model, seed);
            let points = run_learning_curve(&bin, &cfg, &spec)?;
            let sizes: Vec<f64> = points.iter().map(|p| p.train_size as f64).collect();
            let means: Vec<f64> = points.iter().map(|p| p.mean).collect();
            (
                m,
                "learning-curve",
                json!({ "task": m.task, "classifier": m.model, "seed": seed, "subject": chosen,
                        "config": cfg, "points": points, "spearman": spearman(&sizes, &means) }),
            )
        }
    };
    let text = serde_json::to_string_pretty(&result).expect("report serializes") + "\n";
    emit(m.output.as_deref(), &text)?;
    if let Some(out) = &m.output {
        Manifest::new(
            &format!("experiment {name}"),
            Some(seed),
            json!({ "task": m.task, "model": m.model }),
        )
        .input(&m.data)
        .output(out)
        .write_beside(out)?;
    }
    Ok(())
}

fn export(cli: &Cli, args: &ExportArgs) -> Result<(), CliError> {
    let csv = match &args.server {
        Some(url) => HttpEndpoint::new(url).export(args.subject.as_deref(), args.kind)?,
        None => {
            let cfg = service_config(cli)?;
            if !cfg.data_dir.exists() {
                return Err(CliError::input(
                    cfg.data_dir.display().to_string(),
                    "data directory does not exist",
                ));
            }
            Service::open(cfg)?.export(args.subject.as_deref(), args.kind)
        }
    };
    emit(args.output.as_deref(), &csv)?;
    if let Some(out) = &args.output {
        Manifest::new(
            "export",
            None,
            json!({ "server": args.server, "kind": args.kind, "subject": args.subject }),
        )
        .output(out)
        .write_beside(out)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Serve(a) => serve(cli, a),
        Cmd::Simulate(a) => simulate(cli, a, require_seed(cli.seed)),
        Cmd::Process(a) => process(a),
        Cmd::Experiment(c) => experiment(c, require_seed(cli.seed)),
        Cmd::Export(a) => export(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                json!({ "error": e.class(), "message": e.to_string() })
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
