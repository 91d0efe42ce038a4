//! `sentinel`: fit models, simulate labeled streams, detect and classify gross
//! errors, and score detections against ground truth.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sentinel::io::{
    eval_match, load_scenario, parse_model, parse_pipeline_config, read_events, read_truth, serialize_model,
    write_samples, write_truth, CsvSamples, NdjsonSink,
};
use sentinel::ident::{fit_arma, select_order};
use sentinel::pipeline::{run_with, Event, EventSink, OrderChoice, Pipeline, PipelineConfig, Registration, RunSummary};
use sentinel::synth::make_scenario;
use sentinel::{Error, SensorSample};

const SEED_ENV: &str = "SENTINEL_SEED";
const AUTO_MAX_N: usize = 4;
const AUTO_MAX_M: usize = 2;

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Gross-error detection and classification for sensor streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify an ARMA/ARX model from a sample CSV.
    Fit(FitArgs),
    /// Generate a labeled stream and truth sidecar from a scenario config.
    Simulate(SimulateArgs),
    /// Run detection and classification with a fixed model.
    Detect(DetectArgs),
    /// Run the full adaptive pipeline on a CSV or a scenario.
    Pipeline(PipelineArgs),
    /// Score episode events against a truth sidecar.
    Eval(EvalArgs),
}

#[derive(Args)]
struct FitArgs {
    input: PathBuf,
    /// `n,m` or `auto`.
    #[arg(long, default_value = "auto")]
    order: OrderArg,
    /// Channel to fit when the CSV holds several.
    #[arg(long)]
    sensor: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Truth sidecar path; defaults to `<out stem>.truth.csv`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Pipeline TOML for trigger settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Sample CSV; omit when using --scenario.
    input: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    scenario: Option<PathBuf>,
    /// Pipeline TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    order: Option<OrderArg>,
    #[arg(long)]
    confidence: Option<f64>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run summary JSON; defaults to stderr.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
enum OrderArg {
    Auto,
    Fixed(usize, usize),
}

impl std::str::FromStr for OrderArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(OrderArg::Auto);
        }
        let bad = || format!("expected `n,m` or `auto`, got '{s}'");
        let (n, m) = s.split_once(',').ok_or_else(bad)?;
        Ok(OrderArg::Fixed(n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
    }
}

impl OrderArg {
    fn choice(self) -> OrderChoice {
        match self {
            OrderArg::Auto => OrderChoice::Auto { max_n: AUTO_MAX_N, max_m: AUTO_MAX_M },
            OrderArg::Fixed(n, m) => OrderChoice::Fixed { n, m },
        }
    }
}

/// Exit 1 for bad input, 2 for faults inside the tool.
#[derive(Debug)]
enum Failure {
    Input(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Sink(_) | Error::SingularInnovation(_) => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        f => f,
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Internal(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_failed(e: io::Error) -> Failure {
    Failure::Internal(format!("write failed: {e}"))
}

/// `SENTINEL_SEED` wins over `--seed`.
fn resolve_seed(flag: Option<u64>) -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::Input(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn fit(args: FitArgs) -> CliResult<()> {
    let samples: Vec<SensorSample> = CsvSamples::new(open(&args.input)?).collect::<Result<_, _>>().map_err(with_path(&args.input))?;
    let sensor = match args.sensor {
        Some(s) => s,
        None => {
            let mut ids: Vec<&str> = samples.iter().map(|s| s.sensor_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            match ids.as_slice() {
                [only] => only.to_string(),
                [] => return Err(Failure::Input(format!("{}: no samples", args.input.display()))),
                _ => return Err(Failure::Input(format!("{} holds several sensors; pass --sensor", args.input.display()))),
            }
        }
    };
    let rows: Vec<&SensorSample> = samples.iter().filter(|s| s.sensor_id == sensor).collect();
    if rows.is_empty() {
        return Err(Error::UnknownSensor(sensor).into());
    }
    let y: Vec<f64> = rows.iter().map(|s| s.value).collect();
    let x: Option<Vec<f64>> = rows[0].exog.is_some().then(|| rows.iter().map(|s| s.exog.unwrap_or(0.0)).collect());
    let (n, m) = match args.order {
        OrderArg::Auto => select_order(&y, x.as_deref(), AUTO_MAX_N, AUTO_MAX_M)?,
        OrderArg::Fixed(n, m) => (n, m),
    };
    let model = fit_arma(&y, x.as_deref(), n, m)?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(serialize_model(&model).as_bytes()).and_then(|_| out.flush()).map_err(write_failed)?;
    eprintln!("fitted n={} m={} sigma={:.6} stable={} on {} samples of '{sensor}'", model.n, model.m, model.sigma, model.stable, y.len());
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let mut scenario = load_scenario(&args.config).map_err(with_path(&args.config))?;
    if let Some(seed) = resolve_seed(args.seed)? {
        scenario.seed = seed;
    }
    let stream = make_scenario(&scenario).map_err(with_path(&args.config))?;
    let truth_path = args.truth.unwrap_or_else(|| args.out.with_extension("truth.csv"));
    let header = format!("sentinel simulate seed={} sensor={} length={}", scenario.seed, scenario.sensor_id, scenario.length);
    write_samples(create(&args.out)?, &header, &stream.samples)?;
    write_truth(create(&truth_path)?, &header, &stream)?;
    eprintln!("{header}: {} faults, wrote {} and {}", stream.specs.len(), args.out.display(), truth_path.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            parse_pipeline_config(&text).map_err(with_path(p))
        }
    }
}

/// Run-level note written ahead of the events.
fn header_event(message: String) -> Event {
    Event::Diagnostic { t: 0, sensor_id: "*".into(), message }
}

fn drive<I>(pipeline: Pipeline, source: I, out: Box<dyn Write>, header: String) -> CliResult<RunSummary>
where
    I: IntoIterator<Item = sentinel::Result<SensorSample>>,
{
    let mut sink = NdjsonSink::new(out);
    sink.emit(&header_event(header))?;
    let result = run_with(pipeline, source, &mut sink);
    let flushed = sink.into_inner();
    let summary = result.map_err(|f| Failure::from(f.error))?;
    flushed.map_err(|e| Failure::Internal(e.to_string()))?;
    Ok(summary)
}

fn detect(args: DetectArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.model).map_err(|e| Failure::Input(format!("{}: {e}", args.model.display())))?;
    let model = parse_model(&text).map_err(with_path(&args.model))?;
    let mut config = load_config(args.config.as_deref())?;
    config.confidence = args.confidence;
    config.adapt = false;
    config.validate()?;
    let header = format!("sentinel detect seed=none confidence={} n={} m={}", config.confidence, model.n, model.m);
    let pipeline = Pipeline::new(config, Registration::Shared(model))?;
    let source = CsvSamples::new(open(&args.input)?).map(|r| r.map_err(|e| prefix(&args.input, e)));
    let summary = drive(pipeline, source, output(args.out.as_deref())?, header)?;
    eprintln!("{} episodes", summary.total_episodes());
    Ok(())
}

/// Keeps line context when a CSV error surfaces mid-run.
fn prefix(path: &Path, e: Error) -> Error {
    match e {
        Error::MalformedRow { line, reason } => Error::MalformedRow { line, reason: format!("{}: {reason}", path.display()) },
        other => other,
    }
}

fn pipeline(args: PipelineArgs) -> CliResult<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(o) = args.order {
        config.order = o.choice();
    }
    if let Some(c) = args.confidence {
        config.confidence = c;
    }
    config.validate()?;
    let seed = resolve_seed(args.seed)?;
    let pipeline = Pipeline::new(config.clone(), Registration::Bootstrap)?;
    let out = output(args.out.as_deref())?;
    let (summary, seed) = match (&args.input, &args.scenario) {
        (Some(input), None) => {
            let header = format!("sentinel pipeline seed=none confidence={}", config.confidence);
            let source = CsvSamples::new(open(input)?).map(|r| r.map_err(|e| prefix(input, e)));
            (drive(pipeline, source, out, header)?, None)
        }
        (None, Some(path)) => {
            let mut scenario = load_scenario(path).map_err(with_path(path))?;
            if let Some(s) = seed {
                scenario.seed = s;
            }
            let stream = make_scenario(&scenario).map_err(with_path(path))?;
            let header = format!("sentinel pipeline seed={} confidence={}", scenario.seed, config.confidence);
            (drive(pipeline, stream.samples.into_iter().map(Ok), out, header)?, Some(scenario.seed))
        }
        _ => return Err(Failure::Input("give a CSV input or --scenario".into())),
    };
    let report = serde_json::json!({ "seed": seed, "config": config, "summary": summary });
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Internal(e.to_string()))?;
    text.push('\n');
    match &args.summary {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(write_failed)?
        }
        None => eprint!("{text}"),
    }
    Ok(())
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let events = read_events(open(&args.events)?).map_err(with_path(&args.events))?;
    let truth = read_truth(open(&args.truth)?).map_err(with_path(&args.truth))?;
    let summary = eval_match(&events, &truth)?;
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Internal(e.to_string()))?;
    text.push('\n');
    let mut out = output(args.out.as_deref())?;
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(write_failed)?;
    eprintln!(
        "detected {}/{} windows, {} correctly classified, {} false alarms ({:.3} per 10k clean samples)",
        summary.detected, summary.truth_windows, summary.correctly_classified, summary.false_alarms, summary.false_alarm_rate_per_10k
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
