//! Command-line front end. [`run`] parses `argv`, executes one subcommand
//! and returns the process exit code: 0 on success, 2 for bad arguments,
//! 3 for data or contract violations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    make_splits, matched_trials_by_design, sample_categories, subsample_test, DeviceKind, ImageDesign, Sampling,
    SplitAssignment,
};
use crate::error::{Error, Result};
use crate::eval::{
    average_k_repetitions, pearson_featurewise, read_metric_records, write_metric_records, AveragingScope, Head,
    MetricRecord,
};
use crate::io::{
    config_hash, git_describe, read_json, write_json, write_report, Checkpoint, Decoder, EpochStore, RawStore,
    RunManifest, SYNTH_CONFIG_FILE,
};
use crate::linear::decoding_alpha_grid;
use crate::nn::{published_config, param_rows, BrainConfig, ModelSize};
use crate::pipeline::{
    desk_config, desk_train_config, preprocess_recordings, prediction_set, score_predictions, sensor_positions,
    targets_for, window_mode, DeepDecoder, RidgeDecoder,
};
use crate::preprocess::{window_views, PreprocessReport, WindowLabel};
use crate::scaling::{detect_plateau, fit_loglinear, solve_threshold, x_value, CostTable, PlateauReport, ScalingFit, XKind};
use crate::synth::{generate, generate_continuous, preset, SynthConfig};
use crate::training::{write_history, TrainConfig};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "NEURODEC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "neurodec", version, about = "Brain-to-image decoding benchmark kit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DeviceArg {
    Eeg,
    Meg,
    Fmri3t,
    Fmri7t,
}

impl From<DeviceArg> for DeviceKind {
    fn from(d: DeviceArg) -> Self {
        match d {
            DeviceArg::Eeg => DeviceKind::Eeg,
            DeviceArg::Meg => DeviceKind::Meg,
            DeviceArg::Fmri3t => DeviceKind::Fmri3T,
            DeviceArg::Fmri7t => DeviceKind::Fmri7T,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SizeArg {
    Medium,
    Large,
}

impl From<SizeArg> for ModelSize {
    fn from(s: SizeArg) -> Self {
        match s {
            SizeArg::Medium => ModelSize::Medium,
            SizeArg::Large => ModelSize::Large,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WindowArg {
    Full,
    Sliding,
    Growing,
}

impl WindowArg {
    fn name(self) -> &'static str {
        match self {
            WindowArg::Full => "full",
            WindowArg::Sliding => "sliding",
            WindowArg::Growing => "growing",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Single,
    Subject,
    Instance,
}

impl From<AveragingArg> for AveragingScope {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Single => AveragingScope::SingleTrial,
            AveragingArg::Subject => AveragingScope::SubjectAverage,
            AveragingArg::Instance => AveragingScope::InstanceAverage,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Ridge,
    Deep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DesignArg {
    Shared,
    PerSubject,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum XArg {
    Trials,
    Hours,
    Usd,
}

impl From<XArg> for XKind {
    fn from(x: XArg) -> Self {
        match x {
            XArg::Trials => XKind::Trials,
            XArg::Hours => XKind::Hours,
            XArg::Usd => XKind::Usd,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Apply the M/EEG or fMRI preprocessing chain to raw recordings.
    Preprocess(PreprocessArgs),
    /// Assign trials to train/valid/test without category leakage.
    Split(SplitArgs),
    /// Fit ridge or deep decoders, one per time window.
    Train(TrainArgs),
    /// Score checkpoints on the test split.
    Eval(EvalArgs),
    /// Fit log-linear scaling laws to a metrics table.
    ScaleFit(ScaleFitArgs),
    /// Print per-layer and total parameter counts.
    Paramcount(ParamcountArgs),
    /// Aggregate metric tables across seeds.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// SynthConfig JSON; defaults to the preset of --device.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    device: Option<DeviceArg>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write epochs directly instead of continuous recordings.
    #[arg(long)]
    epoched: bool,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON with optional `window` and `sampling` overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    /// Hold out this fraction of categories instead of the generator's test set.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Downsample train∪valid to this many unique images.
    #[arg(long)]
    matched: Option<usize>,
    #[arg(long, value_enum, default_value = "shared")]
    design: DesignArg,
    /// Keep this many test images.
    #[arg(long)]
    test_images: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// JSON with optional `train` (TrainConfig), `model` (BrainConfig) and `alpha_grid`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    window: WindowArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    window: WindowArg,
    #[arg(long, value_enum, default_value = "single")]
    averaging: AveragingArg,
    /// Also score averages of k repetitions, e.g. `1,2,4,8`.
    #[arg(long, value_delimiter = ',')]
    reps: Vec<usize>,
}

#[derive(Debug, Args)]
struct ScaleFitArgs {
    /// Metrics CSV (MetricRecord rows).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "trials")]
    x: XArg,
    #[arg(long)]
    out: PathBuf,
    /// Averaging label of the rows to fit.
    #[arg(long, value_enum, default_value = "single")]
    averaging: AveragingArg,
    /// Report the data needed to reach this R.
    #[arg(long)]
    threshold: Option<f64>,
    /// CostTable JSON; defaults to the built-in hourly rates.
    #[arg(long)]
    costs: Option<PathBuf>,
    /// Seconds per trial; defaults to the synthetic preset of each device.
    #[arg(long)]
    soa: Option<f64>,
}

#[derive(Debug, Args)]
struct ParamcountArgs {
    #[arg(long, value_enum, required_unless_present = "config")]
    device: Option<DeviceArg>,
    #[arg(long, value_enum, default_value = "medium")]
    size: SizeArg,
    /// BrainConfig JSON instead of a published configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// One or more metrics CSVs.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Runs one command line and returns its exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    // The program path is replaced so manifests do not depend on the install location.
    let argv: Vec<String> = std::iter::once("neurodec".to_string())
        .chain(argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()))
        .collect();
    match execute(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Collects what a command read and wrote for its manifest.
struct Run {
    command: &'static str,
    argv: Vec<String>,
    start: Instant,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, argv: Vec<String>) -> Self {
        Run { command, argv, start: Instant::now(), seeds: BTreeMap::new(), inputs: Vec::new(), outputs: Vec::new() }
    }

    fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.into(), seed);
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    fn finish<C: Serialize>(self, out: &Path, config: &C) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        RunManifest {
            command: self.command.into(),
            argv: self.argv,
            config_hash: config_hash(config)?,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            git_describe: git_describe(),
            wall_time_s: self.start.elapsed().as_secs_f64(),
        }
        .write(out)
    }
}

fn execute(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, Run::new("synth", argv)),
        Command::Preprocess(a) => preprocess(a, Run::new("preprocess", argv)),
        Command::Split(a) => split(a, Run::new("split", argv)),
        Command::Train(a) => train_cmd(a, Run::new("train", argv)),
        Command::Eval(a) => eval_cmd(a, Run::new("eval", argv)),
        Command::ScaleFit(a) => scale_fit(a, Run::new("scale-fit", argv)),
        Command::Paramcount(a) => paramcount(a, Run::new("paramcount", argv)),
        Command::Report(a) => report(a, Run::new("report", argv)),
    }
}

fn synth(a: SynthArgs, mut run: Run) -> Result<()> {
    let mut cfg: SynthConfig = match (&a.config, a.device) {
        (Some(p), _) => {
            run.input(p);
            read_json(p)?
        }
        (None, Some(d)) => preset(d.into()),
        (None, None) => return Err(Error::arg("synth needs --config or --device")),
    };
    cfg.seed = a.seed;
    cfg.validate()?;
    run.seed("seed", a.seed);
    if a.epoched {
        let d = generate(&cfg)?;
        let positions = (!cfg.device.is_fmri()).then(|| d.forward.positions.clone());
        EpochStore { device: cfg.device, epochs: d.epochs, trials: d.trials, embeddings: d.embeddings, positions }
            .write(&a.out)?;
        write_json(&a.out.join(SYNTH_CONFIG_FILE), &cfg)?;
        run.output("epochs");
    } else {
        RawStore::from(generate_continuous(&cfg)?).write(&a.out)?;
        run.output("recordings");
        run.output("events.csv");
    }
    for f in [SYNTH_CONFIG_FILE, "trials.csv", "embeddings"] {
        run.output(f);
    }
    run.finish(&a.out, &cfg)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct PreprocessConfig {
    #[serde(default)]
    window: Option<(f64, f64)>,
    #[serde(default)]
    sampling: Option<Sampling>,
}

fn preprocess(a: PreprocessArgs, mut run: Run) -> Result<()> {
    run.input(&a.input);
    let raw = RawStore::read(&a.input)?;
    let overrides: PreprocessConfig = match &a.config {
        Some(p) => {
            run.input(p);
            read_json(p)?
        }
        None => PreprocessConfig::default(),
    };
    let window = overrides.window.unwrap_or(raw.config.window);
    let sampling = overrides.sampling.unwrap_or(raw.config.sampling);
    let mut report = PreprocessReport::default();
    let epochs = preprocess_recordings(&raw.raw, sampling, window, &mut report)?;
    let store = EpochStore {
        device: raw.config.device,
        epochs,
        positions: sensor_positions(&raw.raw),
        trials: raw.trials,
        embeddings: raw.embeddings,
    };
    store.write(&a.out)?;
    write_report(&a.out, &report)?;
    write_json(&a.out.join(SYNTH_CONFIG_FILE), &raw.config)?;
    for f in ["epochs", "trials.csv", "embeddings", "preprocess_report.json", SYNTH_CONFIG_FILE] {
        run.output(f);
    }
    log::info!(
        "{} epochs of {} x {}, {} trials dropped",
        store.epochs.n_trials(),
        store.epochs.channels(),
        store.epochs.timepoints(),
        report.dropped_trials.len()
    );
    run.finish(&a.out, &PreprocessConfig { window: Some(window), sampling: Some(sampling) })
}

#[derive(Debug, Serialize)]
struct SplitSettings {
    valid_fraction: f64,
    test_fraction: Option<f64>,
    matched: Option<usize>,
    design: ImageDesign,
    test_images: Option<usize>,
    test_categories: Vec<usize>,
}

fn split(a: SplitArgs, mut run: Run) -> Result<()> {
    run.input(&a.input);
    run.seed("seed", a.seed);
    if let Some(f) = a.test_fraction.filter(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(Error::arg(format!("--test-fraction must be in (0, 1), got {f}")));
    }
    if !(a.valid_fraction > 0.0 && a.valid_fraction < 1.0) {
        return Err(Error::arg(format!("--valid-fraction must be in (0, 1), got {}", a.valid_fraction)));
    }
    let trials = crate::io::read_trials(&a.input)?;
    let test_categories = match a.test_fraction {
        Some(f) => {
            let all: Vec<usize> = (0..trials.len()).collect();
            sample_categories(&trials, &all, f, a.seed)
        }
        None => {
            let path = a.input.join(SYNTH_CONFIG_FILE);
            if !path.exists() {
                return Err(Error::arg("no generator config next to the trials; pass --test-fraction"));
            }
            read_json::<SynthConfig>(&path)?.test_categories()
        }
    };
    let mut splits = make_splits(&trials, &test_categories, a.valid_fraction, a.seed)?;
    let design = match a.design {
        DesignArg::Shared => ImageDesign::Shared,
        DesignArg::PerSubject => ImageDesign::PerSubject,
    };
    if let Some(n) = a.matched {
        let keep: std::collections::BTreeSet<usize> =
            matched_trials_by_design(design, &trials, &splits.train_valid(), n, a.seed)?.into_iter().collect();
        splits.train.retain(|i| keep.contains(i));
        splits.valid.retain(|i| keep.contains(i));
    }
    if let Some(n) = a.test_images {
        splits.test = subsample_test(&trials, &splits.test, n, a.seed)?;
    }
    splits.check_disjoint()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("splits.json"), &splits)?;
    run.output("splits.json");
    log::info!("train {} valid {} test {}", splits.train.len(), splits.valid.len(), splits.test.len());
    let settings = SplitSettings {
        valid_fraction: a.valid_fraction,
        test_fraction: a.test_fraction,
        matched: a.matched,
        design,
        test_images: a.test_images,
        test_categories: test_categories.into_iter().collect(),
    };
    run.finish(&a.out, &settings)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct TrainSpec {
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    model: Option<BrainConfig>,
    #[serde(default)]
    alpha_grid: Option<Vec<f64>>,
}

/// One entry of `windows.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub window: WindowLabel,
    pub dir: String,
}

pub const WINDOWS_FILE: &str = "windows.json";

fn train_cmd(a: TrainArgs, mut run: Run) -> Result<()> {
    run.input(&a.input);
    run.input(&a.splits);
    run.seed("seed", a.seed);
    let store = EpochStore::read(&a.input)?;
    let splits: SplitAssignment = read_json(&a.splits)?;
    splits.check_disjoint()?;
    let mut spec: TrainSpec = match &a.config {
        Some(p) => {
            run.input(p);
            read_json(p)?
        }
        None => TrainSpec::default(),
    };
    let mut train_cfg = spec.train.take().unwrap_or_else(|| desk_train_config(a.seed));
    train_cfg.seed = a.seed;
    let grid = spec.alpha_grid.clone().unwrap_or_else(decoding_alpha_grid);
    let mode = window_mode(a.window.name(), &store.epochs)?;
    let views = window_views(&store.epochs, mode)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut entries = Vec::with_capacity(views.len());
    for (i, (label, view)) in views.iter().enumerate() {
        let dir = format!("w{i:03}");
        let decoder = match a.model {
            ModelArg::Ridge => Decoder::Ridge(RidgeDecoder::fit(view, &store.trials, &store.embeddings, &splits, &grid)?),
            ModelArg::Deep => {
                let config = spec.model.clone().unwrap_or_else(|| {
                    desk_config(store.device, view, store.embeddings.dim(), store.n_subjects())
                });
                let d = DeepDecoder::fit(
                    config,
                    store.positions.as_ref(),
                    view,
                    &store.trials,
                    &store.embeddings,
                    &splits,
                    &train_cfg,
                )?;
                let path = a.out.join(&dir);
                std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
                let hist = path.join("history.csv");
                write_history(std::fs::File::create(&hist).map_err(|e| Error::io(&hist, e))?, &d.outcome.history)?;
                log::info!("window {i}: best epoch {} valid R {:.4}", d.outcome.best_epoch, d.outcome.best_valid_r);
                Decoder::Deep(d)
            }
        };
        Checkpoint { device: store.device, window: *label, decoder }.write(&a.out.join(&dir))?;
        run.output(dir.clone());
        entries.push(WindowEntry { window: *label, dir });
    }
    write_json(&a.out.join(WINDOWS_FILE), &entries)?;
    run.output(WINDOWS_FILE);
    let settings = serde_json::json!({
        "model": format!("{:?}", a.model).to_lowercase(),
        "window": a.window.name(),
        "train": train_cfg,
        "brain": spec.model,
        "alpha_grid": grid,
    });
    run.finish(&a.out, &settings)
}

fn same_window(a: &WindowLabel, b: &WindowLabel) -> bool {
    (a.start_s - b.start_s).abs() < 1e-9 && (a.end_s - b.end_s).abs() < 1e-9
}

fn eval_cmd(a: EvalArgs, mut run: Run) -> Result<()> {
    run.input(&a.input);
    run.input(&a.splits);
    run.input(&a.checkpoints);
    run.seed("seed", a.seed);
    let store = EpochStore::read(&a.input)?;
    let splits: SplitAssignment = read_json(&a.splits)?;
    let entries: Vec<WindowEntry> = read_json(&a.checkpoints.join(WINDOWS_FILE))?;
    let scope: AveragingScope = a.averaging.into();
    if a.reps.contains(&0) {
        return Err(Error::arg("--reps values must be >= 1"));
    }
    let views = window_views(&store.epochs, window_mode(a.window.name(), &store.epochs)?)?;
    let subjects: std::collections::BTreeSet<usize> = splits.test.iter().map(|&i| store.trials[i].subject_id).collect();
    let subjects = subjects.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+");
    let mut records = Vec::new();
    for (label, view) in &views {
        let entry = entries.iter().find(|e| same_window(&e.window, label)).ok_or_else(|| {
            Error::contract(format!(
                "no checkpoint for window [{:.3}, {:.3}] s; train with the same --window",
                label.start_s, label.end_s
            ))
        })?;
        let ck = Checkpoint::read(&a.checkpoints.join(&entry.dir))?;
        if ck.device != store.device {
            return Err(Error::contract("checkpoint was trained on another device"));
        }
        let (tids, mse, clip) = match &ck.decoder {
            Decoder::Ridge(d) => {
                let (t, p) = d.predict(view, &splits.test)?;
                (t, p.clone(), p)
            }
            Decoder::Deep(d) => d.predict(view, &store.trials, &splits.test)?,
        };
        let stats = ck.decoder.stats();
        let preds = prediction_set(&store.trials, &tids, &mse, &clip)?;
        let record = |averaging: String, r: f64, top1: Option<f64>, top5: Option<f64>| MetricRecord {
            dataset: format!("synthetic-{}", store.device.as_str()),
            device: store.device.as_str().into(),
            subjects: subjects.clone(),
            n_train_trials: splits.train_valid().len(),
            window_start: label.start_s,
            window_end: label.end_s,
            averaging,
            seed: a.seed,
            pearson_r: r,
            top1,
            top5,
        };
        let s = score_predictions(&preds, &store.embeddings, stats, scope)?;
        let name = serde_json::to_value(scope)?.as_str().unwrap_or("single_trial").to_string();
        records.push(record(name, s.r, Some(s.top1), Some(s.top5)));
        let single = preds.head(Head::Mse);
        for &k in &a.reps {
            let avg = average_k_repetitions(&single, k, a.seed)?;
            let r = pearson_featurewise(&avg.data, &targets_for(&store.embeddings, stats, &avg.image_ids())?)?;
            records.push(record(format!("k{k}"), r, None, None));
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join("metrics.csv");
    write_metric_records(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, &records)?;
    run.output("metrics.csv");
    for r in &records {
        println!(
            "[{:.3}, {:.3}] {:<16} R {:.4}{}",
            r.window_start,
            r.window_end,
            r.averaging,
            r.pearson_r,
            r.top5.map(|t| format!("  top-5 {t:.3}")).unwrap_or_default()
        );
    }
    let settings = serde_json::json!({
        "window": a.window.name(),
        "averaging": scope,
        "reps": a.reps,
    });
    run.finish(&a.out, &settings)
}

/// One fitted curve in `scaling_fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub dataset: String,
    pub fit: ScalingFit,
    pub plateau: Option<PlateauReport>,
    pub threshold_r: Option<f64>,
    /// x needed to reach `threshold_r`.
    pub threshold_x: Option<f64>,
    /// Cost in USD of the trials needed to reach `threshold_r`.
    pub threshold_usd: Option<f64>,
}

fn scale_fit(a: ScaleFitArgs, mut run: Run) -> Result<()> {
    run.input(&a.input);
    let path = &a.input;
    let records = read_metric_records(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)?;
    let costs = match &a.costs {
        Some(p) => {
            run.input(p);
            CostTable::load(p)?
        }
        None => CostTable::default(),
    };
    let kind: XKind = a.x.into();
    let averaging = serde_json::to_value(AveragingScope::from(a.averaging))?.as_str().unwrap_or_default().to_string();
    let mut groups: BTreeMap<(String, String), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.averaging == averaging || (r.averaging == "single" && averaging == "single_trial")) {
        groups.entry((r.dataset.clone(), r.device.clone())).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::contract(format!("no `{averaging}` rows in {}", path.display())));
    }
    let mut out = Vec::new();
    for ((dataset, device), rows) in groups {
        let device: DeviceKind = serde_json::from_value(serde_json::Value::String(device.clone()))
            .map_err(|_| Error::contract(format!("unknown device `{device}` in metrics")))?;
        let soa = a.soa.unwrap_or_else(|| preset(device).soa_seconds);
        let rate = costs.rate(device)?;
        let points: Vec<(f64, f64)> =
            rows.iter().map(|r| (x_value(kind, r.n_train_trials as f64, soa, rate), r.pearson_r)).collect();
        let mut fit = fit_loglinear(&points, kind)?;
        fit.device = Some(device);
        let plateau = detect_plateau(&points, 0.5, 0.25).ok();
        let (mut tx, mut tusd) = (None, None);
        if let Some(r_star) = a.threshold {
            let x = solve_threshold(&fit, r_star)?;
            // Convert back to trials before costing.
            let per_trial = x_value(kind, 1.0, soa, rate);
            tx = Some(x);
            tusd = Some(x_value(XKind::Usd, x / per_trial, soa, rate));
        }
        println!(
            "{dataset}: R = {:.4} log10(x) + {:.4}  (sem {:.4}, n = {})",
            fit.slope, fit.intercept, fit.sem_slope, fit.n_points
        );
        out.push(ScalingSummary {
            dataset,
            fit,
            plateau,
            threshold_r: a.threshold,
            threshold_x: tx,
            threshold_usd: tusd,
        });
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("scaling_fits.json"), &out)?;
    run.output("scaling_fits.json");
    let settings = serde_json::json!({
        "x": kind,
        "averaging": averaging,
        "threshold": a.threshold,
        "soa": a.soa,
        "costs": costs,
    });
    run.finish(&a.out, &settings)
}

/// `1234567` → `"1,234,567"`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn paramcount(a: ParamcountArgs, mut run: Run) -> Result<()> {
    let config: BrainConfig = match (&a.config, a.device) {
        (Some(p), _) => {
            run.input(p);
            read_json(p)?
        }
        (None, Some(d)) => published_config(d.into(), a.size.into()),
        (None, None) => return Err(Error::arg("paramcount needs --device or --config")),
    };
    let rows = param_rows(&config);
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
    for (name, n) in &rows {
        println!("{name:<width$}  {:>12}", thousands(*n));
    }
    let total = config.param_count();
    println!("{:<width$}  {:>12}", "total", thousands(total));
    let table: Vec<serde_json::Value> =
        rows.iter().map(|(n, c)| serde_json::json!({"layer": n, "params": c})).collect();
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("paramcount.json"), &serde_json::json!({"config": config, "rows": table, "total": total}))?;
    run.output("paramcount.json");
    run.finish(&a.out, &config)
}

/// One row of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub device: String,
    pub averaging: String,
    pub window_start: f64,
    pub window_end: f64,
    pub n_train_trials: usize,
    pub n_runs: usize,
    pub mean_r: f64,
    /// Standard error of the mean over runs; empty for a single run.
    pub sem_r: Option<f64>,
    pub mean_top1: Option<f64>,
    pub mean_top5: Option<f64>,
}

/// Groups records by everything but the seed and averages their scores.
pub fn aggregate(records: &[MetricRecord]) -> Vec<ReportRow> {
    type Key = (String, String, String, u64, u64, usize);
    let mut groups: BTreeMap<Key, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        // Times are ordered by their bit patterns, which keeps non-negative
        // windows in numeric order; the sort below fixes the rest.
        let key = (
            r.dataset.clone(),
            r.device.clone(),
            r.averaging.clone(),
            r.window_start.to_bits(),
            r.window_end.to_bits(),
            r.n_train_trials,
        );
        groups.entry(key).or_default().push(r);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let opt_mean = |v: Vec<Option<f64>>| -> Option<f64> {
        let v: Option<Vec<f64>> = v.into_iter().collect();
        v.filter(|v| !v.is_empty()).map(|v| mean(&v))
    };
    let mut rows: Vec<ReportRow> = groups
        .into_values()
        .map(|rs| {
            let rv: Vec<f64> = rs.iter().map(|r| r.pearson_r).collect();
            let m = mean(&rv);
            let sem = (rv.len() > 1).then(|| {
                let var = rv.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (rv.len() - 1) as f64;
                (var / rv.len() as f64).sqrt()
            });
            ReportRow {
                dataset: rs[0].dataset.clone(),
                device: rs[0].device.clone(),
                averaging: rs[0].averaging.clone(),
                window_start: rs[0].window_start,
                window_end: rs[0].window_end,
                n_train_trials: rs[0].n_train_trials,
                n_runs: rs.len(),
                mean_r: m,
                sem_r: sem,
                mean_top1: opt_mean(rs.iter().map(|r| r.top1).collect()),
                mean_top5: opt_mean(rs.iter().map(|r| r.top5).collect()),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.dataset, &a.averaging, a.n_train_trials)
            .cmp(&(&b.dataset, &b.averaging, b.n_train_trials))
            .then(a.window_start.total_cmp(&b.window_start))
            .then(a.window_end.total_cmp(&b.window_end))
    });
    rows
}

fn report(a: ReportArgs, mut run: Run) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.input {
        run.input(p);
        records.extend(read_metric_records(std::fs::File::open(p).map_err(|e| Error::io(p, e))?)?);
    }
    let rows = aggregate(&records);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join("report.csv");
    let mut w = csv::Writer::from_writer(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    run.output("report.csv");
    run.finish(&a.out, &serde_json::json!({"inputs": a.input.len()}))
}
