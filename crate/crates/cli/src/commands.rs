//! Subcommand definitions and their implementations.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pdplan_core::agent::{
    self, ActionGenerator, HttpGenerator, HttpGeneratorConfig, MockGenerator, MockGeneratorConfig,
    PlanSession, SelectionPolicy, StepOutcome, DEFAULT_MAX_STEPS,
};
use pdplan_core::conformal::{self, CalibrationConfig, CalibrationResult};
use pdplan_core::dataset::{
    self, DatasetSplits, GenConfig, PromptRecord, SplitName, DEFAULT_RATIOS,
};
use pdplan_core::estimator::{save_checkpoint, Estimator, RpcHyper};
use pdplan_core::evaluation::{self, GeneratorProvider, Mode, MultiSeedReport, Shared};
use pdplan_core::par::Exec;
use pdplan_core::trainer::{self, TrainConfig};
use serde::Serialize;
use serde_json::json;

use crate::server::{self, AppState, Model};

#[derive(Parser, Debug)]
#[command(
    name = "pdplan",
    version,
    about = "Point-wise dependency planning pipeline"
)]
pub struct Cli {
    /// Run every data-parallel stage sequentially.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus as JSON Lines.
    GenData(GenDataArgs),
    /// Train the estimator and write a checkpoint.
    Train(TrainArgs),
    /// Calibrate the EPD threshold on the calibration split.
    Calibrate(CalibrateArgs),
    /// EPD histogram of true pairs on a split.
    Histogram(HistogramArgs),
    /// Compare planning modes at one threshold.
    Eval(EvalArgs),
    /// Sweep thresholds for one or more modes.
    Sweep(SweepArgs),
    /// Run one planning session and print its transcript.
    Simulate(SimulateArgs),
    /// Serve the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_records: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mean_actions: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Corpus in JSON Lines.
    #[arg(long)]
    pub data: PathBuf,
    /// Seed of the 10:1:2 train/calib/eval split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<DatasetSplits> {
        let records = dataset::load_jsonl(&self.data)?;
        Ok(dataset::split(&records, DEFAULT_RATIOS, self.split_seed)?)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Train config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Also write the train report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 50.0)]
    pub offset: f64,
}

#[derive(Args, Debug)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "calib")]
    pub split: SplitName,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Marks the fraction of scores below this value.
    #[arg(long, default_value_t = 1.0)]
    pub reference: f64,
    /// CSV output with bin_lo,bin_hi,count.
    #[arg(long)]
    pub csv: PathBuf,
    /// Report the eval-split coverage of this calibration.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdArg {
    Value(f64),
    Calibrated,
}

impl std::str::FromStr for ThresholdArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "calibrated" => Ok(ThresholdArg::Calibrated),
            "-inf" => Ok(ThresholdArg::Value(f64::NEG_INFINITY)),
            "inf" => Ok(ThresholdArg::Value(f64::INFINITY)),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .map(ThresholdArg::Value)
                .ok_or_else(|| format!("expected a number or \"calibrated\", got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorMode {
    Mock,
    External,
}

#[derive(Args, Debug, Clone)]
pub struct GeneratorArgs {
    #[arg(long, value_enum, default_value = "mock", env = "GENERATOR_MODE")]
    pub generator_mode: GeneratorMode,
    /// Endpoint for the external generator.
    #[arg(long, env = "GENERATOR_URL")]
    pub generator_url: Option<String>,
    /// External generator config JSON {url, timeout_ms, headers?}.
    #[arg(long)]
    pub generator_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub distractor_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub generator_seed: u64,
}

impl GeneratorArgs {
    fn external(&self) -> Result<HttpGenerator> {
        let cfg = match (&self.generator_config, &self.generator_url) {
            (Some(p), _) => {
                let mut c: HttpGeneratorConfig = read_json(p)?;
                if let Some(u) = &self.generator_url {
                    c.url = u.clone();
                }
                c
            }
            (None, Some(u)) => HttpGeneratorConfig {
                url: u.clone(),
                timeout_ms: 30_000,
                headers: None,
            },
            (None, None) => bail!("external generator needs --generator-url or --generator-config"),
        };
        Ok(HttpGenerator::new(cfg)?)
    }

    /// Mock whose truth table and vocabulary come from `records`.
    fn mock(&self, records: &[PromptRecord]) -> Result<MockGenerator> {
        Ok(MockGenerator::new(MockGeneratorConfig::from_records(
            records,
            self.generator_seed,
            self.distractor_rate,
        )?)?)
    }

    fn single(&self, records: &[PromptRecord]) -> Result<Box<dyn ActionGenerator>> {
        Ok(match self.generator_mode {
            GeneratorMode::Mock => Box::new(self.mock(records)?),
            GeneratorMode::External => Box::new(self.external()?),
        })
    }

    fn provider(&self, records: &[PromptRecord]) -> Result<Box<dyn GeneratorProvider>> {
        Ok(match self.generator_mode {
            GeneratorMode::Mock => Box::new(self.mock(records)?),
            GeneratorMode::External => Box::new(Shared(self.external()?)),
        })
    }
}

#[derive(Args, Debug)]
pub struct EvalCommon {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Needed when a threshold is "calibrated".
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Markdown table path; printed to stdout when absent and --out is set.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "all_at_once,step_random,step_max"
    )]
    pub mode: Vec<Mode>,
    #[arg(long, default_value = "1.0", allow_hyphen_values = true)]
    pub threshold: ThresholdArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(long, value_delimiter = ',', default_value = "all_at_once,step_max")]
    pub mode: Vec<Mode>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.0,1.0,calibrated",
        allow_hyphen_values = true
    )]
    pub thresholds: Vec<ThresholdArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Interactive,
    Random,
    MaxEpd,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Overrides the calibrated threshold.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, value_enum, default_value = "max-epd")]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus for the mock's truth table; the default synthetic corpus otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
    /// Scripted answers for the interactive policy; stdin is read otherwise.
    #[arg(long, value_delimiter = ',')]
    pub choices: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "CHECKPOINT_PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "CALIBRATION_PATH")]
    pub calibration: Option<PathBuf>,
    /// Overrides the calibrated threshold.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 1800)]
    pub ttl_secs: u64,
    /// Allowed CORS origin, or "*".
    #[arg(long, env = "CORS_ORIGIN", default_value = "*")]
    pub cors_origin: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn resolve_threshold(t: ThresholdArg, calib: Option<&CalibrationResult>) -> Result<f64> {
    match (t, calib) {
        (ThresholdArg::Value(v), _) => Ok(v),
        (ThresholdArg::Calibrated, Some(c)) => Ok(c.epd_threshold),
        (ThresholdArg::Calibrated, None) => bail!("threshold \"calibrated\" needs --calibration"),
    }
}

fn session_threshold(
    threshold: Option<f64>,
    calibration: Option<&CalibrationResult>,
) -> Result<f64> {
    threshold
        .or(calibration.map(|c| c.epd_threshold))
        .context("need --calibration or --threshold")
}

/// Records for the mock's truth table.
fn truth_records(data: Option<&Path>) -> Result<Vec<PromptRecord>> {
    Ok(match data {
        Some(p) => dataset::load_jsonl(p)?,
        None => dataset::generate_synthetic(&GenConfig::default())?,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a, exec),
        Command::Calibrate(a) => calibrate(a, exec),
        Command::Histogram(a) => histogram(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Sweep(a) => sweep(a, exec),
        Command::Simulate(a) => simulate(a),
        Command::Serve(a) => serve(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(n) = a.n_records {
        cfg.n_records = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mean_actions {
        cfg.mean_actions_target = m;
    }
    let records = dataset::generate_synthetic(&cfg)?;
    dataset::save_jsonl(&records, &a.out)?;
    let n_actions: usize = records.iter().map(|r| r.actions.len()).sum();
    print_json(&json!({
        "out": a.out,
        "n_records": records.len(),
        "mean_actions": n_actions as f64 / records.len() as f64,
        "vocabulary": dataset::action_vocabulary(&records).len(),
        "seed": cfg.seed,
    }))
}

fn train(a: TrainArgs, exec: Exec) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.optim.learning_rate = lr;
    }
    cfg.exec = exec;
    let splits = a.data.load()?;
    let hyper = RpcHyper::default();
    let (params, report) = trainer::train(&splits, cfg.init_params()?, &hyper, &cfg)?;
    save_checkpoint(&params, &hyper, &a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    print_json(&report)
}

fn calibrate(a: CalibrateArgs, exec: Exec) -> Result<()> {
    let splits = a.data.load()?;
    let est = Estimator::load(&a.checkpoint)?;
    let cfg = CalibrationConfig {
        epsilon: a.epsilon,
        offset: a.offset,
    };
    let result = conformal::calibrate(&splits.calib, &est, &cfg, exec)?;
    if est.clamp_count() > 0 {
        log::warn!("{} calibration scores hit the clamp", est.clamp_count());
    }
    write_json(&a.out, &result)?;
    print_json(&result)
}

fn histogram(a: HistogramArgs, exec: Exec) -> Result<()> {
    let splits = a.data.load()?;
    let est = Estimator::load(&a.checkpoint)?;
    let records = a.split.select(&splits);
    let report = conformal::epd_histogram(
        &a.split.to_string(),
        records,
        &est,
        a.bins,
        a.reference,
        exec,
    )?;
    std::fs::write(&a.csv, report.to_csv())
        .with_context(|| format!("writing {}", a.csv.display()))?;
    let coverage = match &a.calibration {
        Some(p) => Some(conformal::coverage_audit(
            &splits.eval,
            &est,
            &CalibrationResult::load(p)?,
            exec,
        )?),
        None => None,
    };
    let mut summary = serde_json::to_value(&report)?;
    summary["eval_coverage"] = json!(coverage);
    print_json(&summary)
}

struct Loaded {
    splits: DatasetSplits,
    estimator: Estimator,
    calibration: Option<CalibrationResult>,
    provider: Box<dyn GeneratorProvider>,
}

fn load_eval(c: &EvalCommon) -> Result<Loaded> {
    let splits = c.data.load()?;
    let estimator = Estimator::load(&c.checkpoint)?;
    let calibration = c
        .calibration
        .as_deref()
        .map(CalibrationResult::load)
        .transpose()?;
    let provider = c.generator.provider(&splits.train)?;
    Ok(Loaded {
        splits,
        estimator,
        calibration,
        provider,
    })
}

#[derive(Serialize)]
struct ExperimentOutput<'a> {
    table: &'a str,
    distractor_rate: f64,
    generator_seed: u64,
    calibration: Option<CalibrationResult>,
    reports: &'a [MultiSeedReport],
}

fn emit(
    c: &EvalCommon,
    calibration: Option<CalibrationResult>,
    reports: &[MultiSeedReport],
    table: &str,
) -> Result<()> {
    let out = ExperimentOutput {
        table,
        distractor_rate: c.generator.distractor_rate,
        generator_seed: c.generator.generator_seed,
        calibration,
        reports,
    };
    if let Some(p) = &c.table {
        std::fs::write(p, table).with_context(|| format!("writing {}", p.display()))?;
    }
    match &c.out {
        Some(p) => {
            write_json(p, &out)?;
            if c.table.is_none() {
                print!("{table}");
            }
            Ok(())
        }
        None => print_json(&out),
    }
}

fn eval(a: EvalArgs, exec: Exec) -> Result<()> {
    let l = load_eval(&a.common)?;
    let t = resolve_threshold(a.threshold, l.calibration.as_ref())?;
    let reports = a
        .mode
        .iter()
        .map(|&m| {
            Ok(evaluation::run_multi_seed(
                &l.splits.eval,
                &l.estimator,
                l.provider.as_ref(),
                m,
                t,
                &a.common.seeds,
                a.common.max_steps,
                exec,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    emit(
        &a.common,
        l.calibration,
        &reports,
        &evaluation::table1_markdown(&reports),
    )
}

fn sweep(a: SweepArgs, exec: Exec) -> Result<()> {
    let l = load_eval(&a.common)?;
    let ts = a
        .thresholds
        .iter()
        .map(|&t| resolve_threshold(t, l.calibration.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let reports = evaluation::run_threshold_sweep(
        &l.splits.eval,
        &l.estimator,
        l.provider.as_ref(),
        &a.mode,
        &ts,
        &a.common.seeds,
        a.common.max_steps,
        exec,
    )?;
    emit(
        &a.common,
        l.calibration,
        &reports,
        &evaluation::table2_markdown(&reports),
    )
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let est = Estimator::load(&a.checkpoint)?;
    let calibration = a
        .calibration
        .as_deref()
        .map(CalibrationResult::load)
        .transpose()?;
    let threshold = session_threshold(a.threshold, calibration.as_ref())?;
    let generator = a.generator.single(&truth_records(a.data.as_deref())?)?;
    let session = match a.policy {
        PolicyArg::Random | PolicyArg::MaxEpd => {
            let policy = if a.policy == PolicyArg::Random {
                SelectionPolicy::Random { seed: a.seed }
            } else {
                SelectionPolicy::MaxEpd
            };
            agent::run_session(
                &a.prompt,
                &est,
                threshold,
                &policy,
                generator.as_ref(),
                a.max_steps,
            )?
        }
        PolicyArg::Interactive => interactive(&a, &est, threshold, generator.as_ref())?,
    };
    print_json(&session)
}

fn interactive(
    a: &SimulateArgs,
    est: &Estimator,
    threshold: f64,
    generator: &dyn ActionGenerator,
) -> Result<PlanSession> {
    let mut session = PlanSession::new("simulate", threshold, a.max_steps)?;
    session.submit_prompt(&a.prompt)?;
    let mut scripted = a.choices.clone().map(|c| c.into_iter());
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        match session.step(est, generator, &SelectionPolicy::Interactive)? {
            StepOutcome::Done(_) => return Ok(session),
            StepOutcome::AutoSelected(s) => {
                eprintln!("auto-selected {} (epd {:.3})", s.action, s.epd)
            }
            StepOutcome::NeedsUserChoice(list) => {
                for (i, s) in list.iter().enumerate() {
                    eprintln!("Action {}: {} (epd {:.3})", i + 1, s.action, s.epd);
                }
                let pick = match scripted.as_mut() {
                    Some(it) => it.next().context("ran out of scripted choices")?,
                    None => {
                        eprint!("Please select an action: ");
                        let line = lines.next().context("stdin closed")??;
                        let n: usize = line.trim().parse().context("expected an action number")?;
                        n.checked_sub(1).context("action numbers start at 1")?
                    }
                };
                session.choose(pick)?;
            }
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let estimator = Estimator::load(&a.checkpoint)?;
    let calibration = a
        .calibration
        .as_deref()
        .map(CalibrationResult::load)
        .transpose()?;
    let threshold = session_threshold(a.threshold, calibration.as_ref())?;
    let generator: Box<dyn ActionGenerator> =
        a.generator.single(&truth_records(a.data.as_deref())?)?;
    let mode = match a.generator.generator_mode {
        GeneratorMode::Mock => "mock",
        GeneratorMode::External => "external",
    };
    let model = Model {
        estimator,
        calibration,
        threshold,
        checkpoint: a.checkpoint.display().to_string(),
        generator,
        generator_mode: mode.into(),
        max_steps: a.max_steps,
    };
    let state = AppState::new(Some(model), std::time::Duration::from_secs(a.ttl_secs));
    let app = server::router(Arc::clone(&state), Some(&a.cors_origin))?;
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!(
            "{}",
            json!({ "listening": listener.local_addr()?.to_string() })
        );
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
