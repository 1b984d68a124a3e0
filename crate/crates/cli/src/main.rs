use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use seaice_core::baselines::BaselineKind;
use seaice_core::evaluate::{evaluate_model, merge_summaries, merged_csv, BaselineForecaster, EvalOptions, Forecaster, ModelForecaster};
use seaice_core::grid::{load_region, save_region};
use seaice_core::kv::{self, KeyValues};
use seaice_core::model::{ForecastModel, Regime};
use seaice_core::preprocess::{compute_climatology, Preprocessor};
use seaice_core::store::{channels, split_by_years, write_stack, Catalog, GridStack, HistoryView, SplitYears};
use seaice_core::synth::{generate, SynthConfig};
use seaice_core::train::{self, RegionData, TrainConfig, TrainData, BEST_WEIGHTS};
use seaice_core::{Error, Result};
use seaice_nn::DecayMode;

const REGION_FILE: &str = "region.txt";
const RUN_FILE: &str = "run.txt";

#[derive(Parser)]
#[command(name = "seaice", version, about = "Sea-ice concentration forecasting pipeline")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Fit climatologies and scalers on the training split.
    Climatology(ClimArgs),
    /// Train a U-Net in the S regime or finetune one in the R regime.
    Train(TrainArgs),
    /// Forecast from one base date with a trained checkpoint.
    Forecast(ForecastArgs),
    /// Evaluate a baseline or checkpoint on the test year.
    Evaluate(EvalArgs),
    /// Merge summaries of several runs into mean and unbiased std.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic settings as `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    years: Option<u32>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    region: Option<String>,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClimArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fit SIC only.
    #[arg(long)]
    no_weather: bool,
    /// Directory for climatologies and scalers.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directories; several are merged and shuffled together.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Expected region names of the datasets, in order.
    #[arg(long, num_args = 1..)]
    region: Vec<String>,
    /// Training settings as `key = value` lines named like the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `s` (all days at once) or `r` (one day, applied recurrently).
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
    /// Input days (default 7).
    #[arg(long)]
    din: Option<usize>,
    /// Forecast days.
    #[arg(long)]
    dout: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// S-regime epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stage-1 epochs of the R curriculum.
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Stage-2 epochs of the R curriculum.
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    /// `weight_decay` or `lr_schedule`.
    #[arg(long)]
    decay_mode: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    /// Disable flips, rotations and shifts.
    #[arg(long)]
    no_augment: bool,
    /// Predict SIC directly instead of a correction to persistence.
    #[arg(long)]
    no_residual_base: bool,
    /// Drop the weather input channels.
    #[arg(long)]
    no_weather: bool,
    /// Stage-1 checkpoint for R-regime finetuning. When it does not exist and
    /// --pretrain-epochs is given, stage 1 is trained into it first.
    #[arg(long)]
    pretrain: Option<PathBuf>,
    /// Continue from the state saved in --out.
    #[arg(long)]
    resume: bool,
    /// Run directory (checkpoints, metrics.csv, manifest).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    /// Training run directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    base_date: NaiveDate,
    #[arg(long)]
    dout: Option<usize>,
    /// Directory for one SIGS file per lead day.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// `persistence`, `climatology`, `trend`, `trend<k>w<w>` or `unet`.
    #[arg(long)]
    model: String,
    /// Training run directory, for `--model unet`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Lead days to score (default 3).
    #[arg(long)]
    dout: Option<usize>,
    /// Base dates whose forecasts are rendered as PPM maps.
    #[arg(long, num_args = 1..)]
    render: Vec<NaiveDate>,
    /// Directory for CSV tables and maps.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation output directories (each holding summary.csv).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Merged CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    Regime::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.detail().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Climatology(a) => climatology(a),
        Command::Train(a) => train_cmd(a),
        Command::Forecast(a) => forecast(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_run(dir: &Path, command: &str, mut entries: KeyValues) -> Result<()> {
    entries.insert("command".into(), command.into());
    kv::write(&dir.join(RUN_FILE), &entries)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::from_kv(&kv::read(p)?)?,
        None => SynthConfig::new(0, 3, 32, 32),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.years {
        cfg.years = v;
    }
    if let Some(v) = a.rows {
        cfg.rows = v;
        if a.config.is_none() {
            cfg.ice_edge_amplitude = SynthConfig::new(0, 1, v, 1).ice_edge_amplitude;
        }
    }
    if let Some(v) = a.cols {
        cfg.cols = v;
    }
    if let Some(v) = a.region {
        cfg.region = v;
    }
    cfg.validate()?;
    let (grid, catalog) = generate(&cfg)?;
    catalog.save(&a.out)?;
    save_region(&grid, &a.out.join(REGION_FILE))?;
    write_run(&a.out, "synth", cfg.to_kv())
}

/// Catalog and land mask of a dataset directory.
fn load_dataset(dir: &Path) -> Result<RegionData> {
    let catalog = Catalog::load(dir)?;
    let (rows, cols) = catalog.extent();
    let region_file = dir.join(REGION_FILE);
    let land = if region_file.exists() {
        let grid = load_region(&region_file)?;
        if (grid.rows, grid.cols) != (rows, cols) {
            return Err(Error::Shape(format!(
                "region file is {}×{}, records are {rows}×{cols}",
                grid.rows, grid.cols
            )));
        }
        grid.land_mask
    } else {
        vec![false; rows * cols]
    };
    Ok(RegionData { catalog, land })
}

fn climatology(a: ClimArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let splits = split_by_years(&data.catalog, SplitYears::default());
    if splits.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let prep = Preprocessor::fit(&splits.train, !a.no_weather)?;
    prep.save(&a.out)?;
    let mut run = KeyValues::new();
    run.insert("data".into(), a.data.display().to_string());
    run.insert("include_weather".into(), (!a.no_weather).to_string());
    run.insert("dataset_hash".into(), data.catalog.content_hash()?);
    write_run(&a.out, "climatology", run)
}

/// Applies `key = value` settings named like [`TrainConfig`] fields.
fn apply_config(cfg: &mut TrainConfig, kv: &KeyValues) -> Result<()> {
    for (k, v) in kv {
        let one = |key: &str| {
            let mut m = KeyValues::new();
            m.insert(key.to_string(), v.clone());
            m
        };
        let m = one(k);
        match k.as_str() {
            "regime" => cfg.regime = Regime::parse(v)?,
            "d_in" => cfg.d_in = kv::parse_value(&m, k)?,
            "d_out" => cfg.d_out = kv::parse_value(&m, k)?,
            "lr" => cfg.lr = kv::parse_value(&m, k)?,
            "weight_decay" => cfg.weight_decay = kv::parse_value(&m, k)?,
            "decay_mode" => cfg.decay_mode = parse_decay(v)?,
            "batch_size" => cfg.batch_size = kv::parse_value(&m, k)?,
            "epochs" => cfg.epochs = kv::parse_value(&m, k)?,
            "pretrain_epochs" => cfg.pretrain_epochs = kv::parse_value(&m, k)?,
            "pretrain_batch_size" => cfg.pretrain_batch_size = kv::parse_value(&m, k)?,
            "finetune_epochs" => cfg.finetune_epochs = kv::parse_value(&m, k)?,
            "seed" => cfg.seed = kv::parse_value(&m, k)?,
            "augment" => cfg.augment = kv::parse_value(&m, k)?,
            "residual_base" => cfg.residual_base = kv::parse_value(&m, k)?,
            "include_weather" => cfg.include_weather = kv::parse_value(&m, k)?,
            "depth" => cfg.depth = kv::parse_value(&m, k)?,
            "base_channels" => cfg.base_channels = kv::parse_value(&m, k)?,
            "regions" => cfg.regions = v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect(),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
    }
    Ok(())
}

fn parse_decay(s: &str) -> Result<DecayMode> {
    DecayMode::parse(s).ok_or_else(|| Error::Config(format!("unknown decay mode `{s}`")))
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let file = match &a.config {
        Some(p) => kv::read(p)?,
        None => KeyValues::new(),
    };
    let regime = match (a.regime, file.get("regime")) {
        (Some(r), _) => r,
        (None, Some(r)) => Regime::parse(r)?,
        (None, None) => Regime::S,
    };
    let d_out = a.dout.unwrap_or(3);
    let mut cfg = TrainConfig::new(regime, d_out);
    apply_config(&mut cfg, &file)?;
    cfg.regime = regime;
    if let Some(v) = a.dout {
        cfg.d_out = v;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(din => d_in, seed => seed, epochs => epochs, pretrain_epochs => pretrain_epochs,
         finetune_epochs => finetune_epochs, batch => batch_size, lr => lr,
         weight_decay => weight_decay, depth => depth, base_channels => base_channels);
    if let Some(m) = &a.decay_mode {
        cfg.decay_mode = parse_decay(m)?;
    }
    if a.no_augment {
        cfg.augment = false;
    }
    if a.no_residual_base {
        cfg.residual_base = false;
    }
    if a.no_weather {
        cfg.include_weather = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = train_config(&a)?;
    let mut regions = Vec::with_capacity(a.data.len());
    for (i, dir) in a.data.iter().enumerate() {
        let r = load_dataset(dir)?;
        if let Some(expected) = a.region.get(i) {
            if r.catalog.region() != expected {
                return Err(Error::Config(format!(
                    "{} holds region `{}`, expected `{expected}`",
                    dir.display(),
                    r.catalog.region()
                )));
            }
        }
        regions.push(r);
    }
    cfg.regions = regions.iter().map(|r| r.catalog.region().to_string()).collect();

    if cfg.regime == Regime::R {
        let Some(pretrained) = a.pretrain.as_deref() else {
            return Err(Error::Precondition(
                "R-regime training finetunes a pretrained checkpoint; pass --pretrain DIR".into(),
            ));
        };
        let data = TrainData::new(regions, SplitYears::default(), cfg.include_weather)?;
        if !pretrained.join(BEST_WEIGHTS).exists() {
            if a.pretrain_epochs.is_none() {
                return Err(Error::Precondition(format!(
                    "no pretrained checkpoint in {} (give --pretrain-epochs to train stage 1 there)",
                    pretrained.display()
                )));
            }
            train::pretrain(&cfg, &data, pretrained, a.resume)?;
        }
        let r = train::finetune(&cfg, &data, pretrained, &a.out, a.resume)?;
        println!(
            "finetuned: best epoch {} validation MAE {:.4} (before finetuning {:.4})",
            r.best_epoch, r.best_val_mae, r.initial_val_mae
        );
    } else {
        let data = TrainData::new(regions, SplitYears::default(), cfg.include_weather)?;
        let r = train::train_s(&cfg, &data, &a.out, a.resume)?;
        println!("trained: best epoch {} validation MAE {:.4}", r.best_epoch, r.best_val_mae);
    }
    Ok(())
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let (model, prep) = ForecastModel::load(&a.checkpoint, BEST_WEIGHTS, None)?;
    let d_out = a.dout.unwrap_or(model.spec.channels.d_out);
    let mut f = ModelForecaster {
        model,
        prep,
        land: data.land.clone(),
    };
    let view = HistoryView::new(&data.catalog, a.base_date);
    let preds = f.forecast(&view, d_out)?;
    mkdir(&a.out)?;
    let region = data.catalog.region().to_string();
    for (lead, r) in preds.into_iter().enumerate() {
        let date = a.base_date + chrono::Days::new(lead as u64 + 1);
        let stack = GridStack::from_rasters(region.clone(), date, vec![(channels::SIC.to_string(), r)])?;
        write_stack(&stack, &a.out.join(format!("{region}_{}_{}.sigs", a.base_date, lead + 1)))?;
    }
    let mut run = KeyValues::new();
    run.insert("checkpoint".into(), a.checkpoint.display().to_string());
    run.insert("data".into(), a.data.display().to_string());
    run.insert("base_date".into(), a.base_date.to_string());
    run.insert("d_out".into(), d_out.to_string());
    write_run(&a.out, "forecast", run)
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let splits = split_by_years(&data.catalog, SplitYears::default());
    let mut forecaster: Box<dyn Forecaster> = if a.model == "unet" {
        let dir = a
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("--model unet needs --checkpoint".into()))?;
        let (model, prep) = ForecastModel::load(dir, BEST_WEIGHTS, None)?;
        Box::new(ModelForecaster {
            model,
            prep,
            land: data.land.clone(),
        })
    } else {
        let kind = BaselineKind::parse(&a.model)?;
        let climatology = match kind {
            BaselineKind::Climatology => Some(compute_climatology(&splits.train, channels::SIC)?),
            _ => None,
        };
        Box::new(BaselineForecaster { kind, climatology })
    };
    let mut opts = EvalOptions::new(a.dout.unwrap_or(3));
    opts.render_dates = a.render.clone();
    let (rows, cols) = data.catalog.extent();
    let areas = vec![1.0; rows * cols];
    let report = evaluate_model(forecaster.as_mut(), &splits.test, &data.land, &areas, &opts)?;
    report.write(&a.out)?;
    let mut run = KeyValues::new();
    run.insert("model".into(), a.model.clone());
    if let Some(c) = &a.checkpoint {
        run.insert("checkpoint".into(), c.display().to_string());
    }
    run.insert("data".into(), a.data.display().to_string());
    run.insert("d_out".into(), opts.d_out.to_string());
    run.insert("dataset_hash".into(), data.catalog.content_hash()?);
    write_run(&a.out, "evaluate", run)?;
    print!("{}", report.summary_csv());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let bodies = a
        .runs
        .iter()
        .map(|d| {
            let p = d.join("summary.csv");
            std::fs::read_to_string(&p).map_err(|source| Error::Io { path: p, source })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = merge_summaries(&bodies)?;
    let body = merged_csv(&rows);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    std::fs::write(&a.out, &body).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    print!("{body}");
    Ok(())
}
