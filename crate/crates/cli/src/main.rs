// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;
mod config;
mod stages;
mod synth;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmdc_core::bench::{run_bench, BenchConfig};
use dmdc_core::plant::DedScenario;
use dmdc_core::validation::{CvOutcome, UncertaintyEnvelope};
use dmdc_core::{model_io, Error, ErrorKind};
use log::info;

use crate::artifacts::read_payload;
use crate::config::RunConfig;
use crate::stages::{InStage, Loaded, Run, StageError};

#[derive(Parser)]
#[command(name = "dmdc", version, about = "DMDc surrogate modeling for process time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic DED data set with a ready-to-run config.
    Synth(SynthArgs),
    /// Ingest and validate the experiments listed in the manifest.
    Ingest(RunArgs),
    /// Iterative VIF feature elimination over the candidate inputs.
    SelectFeatures(RunArgs),
    /// Wasserstein distances between train, test and uniform splits.
    DistReport(RunArgs),
    /// Fit the final model on every experiment.
    Fit(RunArgs),
    /// Leave-p-out cross-validation and the uncertainty envelope.
    Cv(RunArgs),
    /// Bounded predictions, parity, residual histogram and geometry tables.
    Predict(PredictArgs),
    /// Pulse-length by frequency spectrograms.
    Spectrogram(PredictArgs),
    /// Test R² against decimated sample rate.
    FreqStudy(RunArgs),
    /// Every stage in order.
    Pipeline(RunArgs),
    /// Fit and rollout throughput.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run config (JSON). Relative paths inside resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest, when no config is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Channel schema, when no config is given.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiments held out per fold.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Use a saved model instead of fitting one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Use a saved envelope instead of cross-validating.
    #[arg(long)]
    envelope: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    experiments: usize,
    #[arg(long, default_value_t = 16)]
    tracks: usize,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 100.0)]
    rate: f64,
    /// Melt-pool time constant in seconds.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Measurement noise sd, applied to every observable.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Camera-off probability on the working-distance channel.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the G-code program of each experiment.
    #[arg(long)]
    gcode: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1_000_000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Stage(StageError),
    Plain(Error),
}

impl Failure {
    fn kind(&self) -> ErrorKind {
        match self {
            Failure::Stage(e) => e.source.kind(),
            Failure::Plain(e) => e.kind(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Stage(e) => e.fmt(f),
            Failure::Plain(e) => e.fmt(f),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Plain(e)
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

impl RunArgs {
    fn open(&self) -> Result<Run, Failure> {
        let (mut cfg, base) = match &self.config {
            Some(path) => {
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (RunConfig::load(path)?, base)
            }
            None => match (&self.manifest, &self.schema) {
                (Some(m), Some(s)) => (RunConfig::new(m.clone(), s.clone()), PathBuf::new()),
                _ => return Err(Error::Config("give --config, or both --manifest and --schema".into()).into()),
            },
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = std::path::absolute(o).map_err(Error::from)?;
        }
        if let Some(p) = self.p {
            cfg.cv.p = p;
        }
        if let Some(r) = self.repeats {
            cfg.cv.repeats = r;
        }
        Ok(Run::open(cfg, base)?)
    }
}

fn load(run: &Run) -> Result<Loaded, Failure> {
    let mut loaded = run.ingest()?;
    run.impute(&mut loaded)?;
    Ok(loaded)
}

fn selected(run: &Run, loaded: &Loaded) -> Result<Vec<String>, Failure> {
    let constant = run.constant_inputs(loaded);
    if !constant.is_empty() {
        info!("constant inputs {constant:?} are left to VIF selection");
    }
    Ok(run.select_features(loaded)?.surviving_features)
}

fn cross_validate(run: &Run, loaded: &Loaded, inputs: &[String]) -> Result<CvOutcome, Failure> {
    let folds = run.folds(loaded.datasets.len())?;
    let outcome = run.cv(loaded, &folds, inputs)?;
    run.standardization_comparison(loaded, &folds, inputs, &outcome)?;
    Ok(outcome)
}

fn load_envelope(path: &Path) -> Result<UncertaintyEnvelope, Error> {
    Ok(serde_json::from_value(read_payload(path)?)?)
}

fn predict(args: &PredictArgs, with_bounds: bool) -> Result<(), Failure> {
    let run = args.run.open()?;
    let loaded = load(&run)?;
    let model = match &args.model {
        Some(p) => model_io::load_model(p)?,
        None => {
            let inputs = selected(&run, &loaded)?;
            run.fit(&loaded, &inputs)?
        }
    };
    if !with_bounds {
        let predicted = loaded
            .datasets
            .iter()
            .map(|d| dmdc_core::validation::predicted_dataset(&model, d))
            .collect::<dmdc_core::Result<Vec<_>>>()
            .stage("spectrogram")?;
        run.spectrogram(&loaded, Some(&predicted))?;
        return Ok(());
    }
    let envelope = match &args.envelope {
        Some(p) => load_envelope(p)?,
        None => cross_validate(&run, &loaded, &model.input_names)?.envelope,
    };
    run.predict(&loaded, &model, &envelope)?;
    Ok(())
}

fn pipeline(run: &Run) -> Result<(), Failure> {
    let loaded = load(run)?;
    let inputs = selected(run, &loaded)?;
    let folds = run.folds(loaded.datasets.len())?;
    run.dist_report(&loaded, &folds)?;
    let outcome = run.cv(&loaded, &folds, &inputs)?;
    run.standardization_comparison(&loaded, &folds, &inputs, &outcome)?;
    let model = run.fit(&loaded, &inputs)?;
    let predicted = run.predict(&loaded, &model, &outcome.envelope)?;
    run.spectrogram(&loaded, Some(&predicted))?;
    run.freq_study(&loaded, &inputs, &run.config.decimation_factors.clone())?;
    Ok(())
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Synth(a) => {
            let scenario = DedScenario {
                experiments: a.experiments,
                tracks_per_experiment: a.tracks,
                sample_rate_hz: a.rate,
                tau_s: a.tau,
                noise_sd: vec![a.noise; 3],
                dropout_probability: a.dropout,
                seed: a.seed,
            };
            let path = synth::run(&synth::SynthOptions { out: a.out, scenario, write_gcode: a.gcode })?;
            println!("{}", path.display());
        }
        Command::Ingest(a) => {
            load(&a.open()?)?;
        }
        Command::SelectFeatures(a) => {
            let run = a.open()?;
            selected(&run, &load(&run)?)?;
        }
        Command::DistReport(a) => {
            let run = a.open()?;
            let loaded = load(&run)?;
            let folds = run.folds(loaded.datasets.len())?;
            run.dist_report(&loaded, &folds)?;
        }
        Command::Fit(a) => {
            let run = a.open()?;
            let loaded = load(&run)?;
            let inputs = selected(&run, &loaded)?;
            run.fit(&loaded, &inputs)?;
        }
        Command::Cv(a) => {
            let run = a.open()?;
            let loaded = load(&run)?;
            let inputs = selected(&run, &loaded)?;
            cross_validate(&run, &loaded, &inputs)?;
        }
        Command::Predict(a) => predict(&a, true)?,
        Command::Spectrogram(a) => predict(&a, false)?,
        Command::FreqStudy(a) => {
            let run = a.open()?;
            let loaded = load(&run)?;
            let inputs = selected(&run, &loaded)?;
            run.freq_study(&loaded, &inputs, &run.config.decimation_factors.clone())?;
        }
        Command::Pipeline(a) => pipeline(&a.open()?)?,
        Command::Bench(a) => {
            let report = run_bench(&BenchConfig { points: a.points, seed: a.seed, ..BenchConfig::default() })?;
            let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            println!("{text}");
            if let Some(p) = a.out {
                std::fs::write(p, text + "\n").map_err(Error::from)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
