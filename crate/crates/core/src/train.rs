//! Training loops, the pretrain/finetune curriculum and checkpoint plumbing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seaice_nn::optim::DecayMode;
use seaice_nn::{checkpoint, Adam, Graph, Mode};

use crate::augment::draw_spec;
use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};
use crate::metrics::{metric, ActiveDomain, MetricKind, Threshold};
use crate::model::{
    prepare, rollout_loss, Batch, ChannelConfig, ForecastModel, ModelSpec, PreparedSample, Regime,
    MANIFEST_FILE, PREP_DIR,
};
use crate::preprocess::Preprocessor;
use crate::raster::Raster;
use crate::store::{split_by_years, window, Catalog, SplitYears};

pub const BEST_WEIGHTS: &str = "best.sigw";
pub const LAST_WEIGHTS: &str = "last.sigw";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PRETRAIN_DIR: &str = "pretrain";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub d_in: usize,
    pub d_out: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub decay_mode: DecayMode,
    pub batch_size: usize,
    /// Epochs of S-regime training.
    pub epochs: usize,
    /// Stage-1 epochs and batch size of the R-regime curriculum.
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    /// Stage-2 epochs of the R-regime curriculum.
    pub finetune_epochs: usize,
    pub seed: u64,
    pub augment: bool,
    pub residual_base: bool,
    pub include_weather: bool,
    pub depth: usize,
    pub base_channels: usize,
    /// Region names whose samples are merged (one entry for regional training).
    pub regions: Vec<String>,
}

impl TrainConfig {
    pub fn new(regime: Regime, d_out: usize) -> Self {
        Self {
            regime,
            d_in: 7,
            d_out,
            lr: 1e-4,
            weight_decay: 1e-2,
            decay_mode: DecayMode::WeightDecay,
            batch_size: match regime {
                Regime::S => 16,
                Regime::R => 8,
            },
            epochs: 100,
            pretrain_epochs: 100,
            pretrain_batch_size: 16,
            finetune_epochs: 20,
            seed: 0,
            augment: true,
            residual_base: true,
            include_weather: true,
            depth: 2,
            base_channels: 8,
            regions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let epochs = match self.regime {
            Regime::S => self.epochs,
            Regime::R => self.finetune_epochs.min(self.pretrain_epochs),
        };
        if epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive and decay non-negative".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> Result<ChannelConfig> {
        ChannelConfig::new(self.d_in, self.d_out, self.regime, self.include_weather)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec::new(self.channels()?, self.depth, self.base_channels, self.residual_base))
    }

    fn optimizer(&self) -> Adam {
        Adam {
            lr: self.lr,
            decay: self.weight_decay,
            decay_mode: self.decay_mode,
            ..Adam::default()
        }
    }

    /// Configuration of the S-regime, one-day stage that precedes finetuning.
    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            regime: Regime::S,
            d_out: 1,
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch_size,
            ..self.clone()
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        [
            ("regime", self.regime.to_string()),
            ("d_in", self.d_in.to_string()),
            ("d_out", self.d_out.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("decay_mode", self.decay_mode.as_str().to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_batch_size", self.pretrain_batch_size.to_string()),
            ("finetune_epochs", self.finetune_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("augment", self.augment.to_string()),
            ("residual_base", self.residual_base.to_string()),
            ("include_weather", self.include_weather.to_string()),
            ("depth", self.depth.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("regions", self.regions.join(",")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let regime = Regime::parse(kv::require(kv, "regime")?)?;
        let decay = kv::require(kv, "decay_mode")?;
        Ok(Self {
            regime,
            d_in: kv::parse_value(kv, "d_in")?,
            d_out: kv::parse_value(kv, "d_out")?,
            lr: kv::parse_value(kv, "lr")?,
            weight_decay: kv::parse_value(kv, "weight_decay")?,
            decay_mode: DecayMode::parse(decay)
                .ok_or_else(|| Error::Config(format!("unknown decay mode `{decay}`")))?,
            batch_size: kv::parse_value(kv, "batch_size")?,
            epochs: kv::parse_value(kv, "epochs")?,
            pretrain_epochs: kv::parse_value(kv, "pretrain_epochs")?,
            pretrain_batch_size: kv::parse_value(kv, "pretrain_batch_size")?,
            finetune_epochs: kv::parse_value(kv, "finetune_epochs")?,
            seed: kv::parse_value(kv, "seed")?,
            augment: kv::parse_value(kv, "augment")?,
            residual_base: kv::parse_value(kv, "residual_base")?,
            include_weather: kv::parse_value(kv, "include_weather")?,
            depth: kv::parse_value(kv, "depth")?,
            base_channels: kv::parse_value(kv, "base_channels")?,
            regions: kv::require(kv, "regions")?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        })
    }
}

/// One region's catalog and land mask.
#[derive(Clone, Debug)]
pub struct RegionData {
    pub catalog: Catalog,
    pub land: Vec<bool>,
}

/// Per-region splits, the fitted preprocessor and the windowed base dates.
pub struct TrainData {
    pub regions: Vec<RegionData>,
    pub train: Vec<Catalog>,
    pub validation: Vec<Catalog>,
    pub prep: Preprocessor,
    pub dataset_hash: String,
}

/// `(region index, base date)` of a window.
pub type Item = (usize, NaiveDate);

impl TrainData {
    /// Splits every region by year and fits one preprocessor on the merged
    /// training years.
    pub fn new(regions: Vec<RegionData>, years: SplitYears, include_weather: bool) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Config("no training regions given".into()));
        }
        let extent = regions[0].catalog.extent();
        let mut train = Vec::new();
        let mut validation = Vec::new();
        let mut hash = String::new();
        for r in &regions {
            if r.catalog.extent() != extent {
                return Err(Error::Config("merged regions must share one grid extent".into()));
            }
            if r.land.len() != extent.0 * extent.1 {
                return Err(Error::Shape("land mask extent differs from catalog".into()));
            }
            let s = split_by_years(&r.catalog, years);
            if s.train.is_empty() {
                return Err(Error::Config(format!("training split of `{}` is empty", r.catalog.region())));
            }
            if s.validation.is_empty() {
                return Err(Error::Config(format!("validation split of `{}` is empty", r.catalog.region())));
            }
            if !hash.is_empty() {
                hash.push(',');
            }
            if regions.len() > 1 {
                let _ = write!(hash, "{}:", r.catalog.region());
            }
            hash.push_str(&r.catalog.content_hash()?);
            train.push(s.train);
            validation.push(s.validation);
        }
        let prep = Preprocessor::fit_many(&train.iter().collect::<Vec<_>>(), include_weather)?;
        Ok(Self {
            regions,
            train,
            validation,
            prep,
            dataset_hash: hash,
        })
    }

    /// Base dates with complete windows, in region then date order, and the
    /// number of base dates skipped because of gaps.
    pub fn items(catalogs: &[Catalog], d_in: usize, d_out: usize) -> Result<(Vec<Item>, usize)> {
        let mut items = Vec::new();
        let mut skipped = 0;
        for (ri, cat) in catalogs.iter().enumerate() {
            for base in cat.dates() {
                match window(cat, base, d_in, d_out) {
                    Ok(_) => items.push((ri, base)),
                    Err(Error::Gap(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok((items, skipped))
    }

    fn prepared(&self, catalogs: &[Catalog], item: Item, cfg: &ChannelConfig) -> Result<PreparedSample> {
        let (ri, base) = item;
        let s = window(&catalogs[ri], base, cfg.d_in, cfg.d_out)?;
        prepare(&s, &self.prep, cfg, &self.regions[ri].land)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub dir: PathBuf,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub history: Vec<EpochLog>,
    /// Validation MAE before the first update (stage-2 starting point).
    pub initial_val_mae: f64,
    /// Loss of the first optimization step taken by this call.
    pub first_step_loss: f64,
    pub skipped_train: usize,
    pub skipped_validation: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const SHUFFLE_STREAM: u64 = 1 << 63;

/// Mean masked ℓ1 loss and the mean per-(sample, lead) MAE over `items`,
/// in eval mode.
pub fn validate(
    model: &mut ForecastModel,
    data: &TrainData,
    catalogs: &[Catalog],
    items: &[Item],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let cfg = model.spec.channels.clone();
    let mut loss_sum = 0.0f64;
    let mut loss_n = 0usize;
    let mut mae_sum = 0.0f64;
    let mut mae_n = 0usize;
    for chunk in items.chunks(batch_size) {
        let prepared = chunk
            .iter()
            .map(|&it| data.prepared(catalogs, it, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PreparedSample> = prepared.iter().collect();
        let batch = Batch::new(&refs, &cfg, model.multiple())?;
        let mut g = Graph::new();
        let preds = model.forward(&mut g, &batch, Mode::Eval)?;
        if let Ok(l) = rollout_loss(&mut g, &preds, &batch) {
            loss_sum += g.value(l).data()[0] as f64;
            loss_n += 1;
        }
        for (i, (s, &(ri, _))) in prepared.iter().zip(chunk).enumerate() {
            for (d, &p) in preds.iter().enumerate() {
                let mut data_p = batch.crop(g.value(p), i);
                for (v, b) in data_p.iter_mut().zip(&s.base) {
                    if !b.is_finite() {
                        *v = f32::NAN;
                    }
                }
                let pred = Raster::new(s.rows, s.cols, data_p)?;
                let gt = Raster::new(s.rows, s.cols, s.targets[d].clone())?;
                let areas = vec![1.0; gt.len()];
                let domain = ActiveDomain::from_truth(&gt, &data.regions[ri].land, &areas)?.restrict_finite(&pred);
                match metric(MetricKind::Mae, &pred, &gt, &domain, Threshold::default()) {
                    Ok(v) => {
                        mae_sum += v;
                        mae_n += 1;
                    }
                    Err(Error::EmptyDomain) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if mae_n == 0 {
        return Err(Error::EmptyDomain);
    }
    Ok((loss_sum / loss_n.max(1) as f64, mae_sum / mae_n as f64))
}

fn write_manifest(dir: &Path, cfg: &TrainConfig, model: &ForecastModel, extra: &[(&str, String)]) -> Result<()> {
    let mut m = cfg.to_kv();
    m.extend(model.spec.to_kv());
    for (k, v) in extra {
        m.insert(k.to_string(), v.clone());
    }
    kv::write(&dir.join(MANIFEST_FILE), &m)
}

/// Progress carried across epochs and persisted for resumption.
#[derive(Clone, Debug)]
struct RunState {
    next_epoch: usize,
    best_epoch: usize,
    best_val_mae: f64,
    initial_val_mae: f64,
}

impl RunState {
    fn extras(&self, data: &TrainData, stage: &str, skipped: (usize, usize)) -> Vec<(&'static str, String)> {
        vec![
            ("stage", stage.to_string()),
            ("dataset_hash", data.dataset_hash.clone()),
            ("epoch", self.next_epoch.to_string()),
            ("best_epoch", self.best_epoch.to_string()),
            ("best_val_mae", format!("{:?}", self.best_val_mae)),
            ("initial_val_mae", format!("{:?}", self.initial_val_mae)),
            ("skipped_train", skipped.0.to_string()),
            ("skipped_validation", skipped.1.to_string()),
        ]
    }

    fn from_manifest(m: &KeyValues) -> Result<Self> {
        Ok(Self {
            next_epoch: kv::parse_value(m, "epoch")?,
            best_epoch: kv::parse_value(m, "best_epoch")?,
            best_val_mae: kv::parse_value(m, "best_val_mae")?,
            initial_val_mae: kv::parse_value(m, "initial_val_mae")?,
        })
    }
}

fn parse_log(text: &str) -> Result<Vec<EpochLog>> {
    let mut out: Vec<EpochLog> = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format {
            field: METRICS_FILE.into(),
            msg: format!("bad line `{line}`"),
        };
        if f.len() != 4 {
            return Err(bad());
        }
        let epoch: usize = f[0].parse().map_err(|_| bad())?;
        let loss: f64 = f[2].parse().map_err(|_| bad())?;
        let mae: f64 = f[3].parse().map_err(|_| bad())?;
        match f[1] {
            "train" => out.push(EpochLog {
                epoch,
                train_loss: loss,
                val_loss: f64::NAN,
                val_mae: f64::NAN,
            }),
            "validation" => {
                let e = out.last_mut().filter(|e| e.epoch == epoch).ok_or_else(bad)?;
                e.val_loss = loss;
                e.val_mae = mae;
            }
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

fn render_log(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,split,loss,mae\n");
    for e in history {
        let _ = writeln!(s, "{},train,{:?},{:?}", e.epoch, e.train_loss, e.train_loss);
        let _ = writeln!(s, "{},validation,{:?},{:?}", e.epoch, e.val_loss, e.val_mae);
    }
    s
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs `epochs` epochs of the model's regime from its current weights,
/// writing checkpoints into `dir`. With `resume`, continues from the state
/// saved in `dir` when present.
fn run(
    cfg: &TrainConfig,
    epochs: usize,
    batch_size: usize,
    data: &TrainData,
    mut model: ForecastModel,
    dir: &Path,
    stage: &str,
    resume: bool,
) -> Result<TrainReport> {
    let channels = model.spec.channels.clone();
    let (train_items, skipped_train) = TrainData::items(&data.train, channels.d_in, channels.d_out)?;
    let (val_items, skipped_val) = TrainData::items(&data.validation, channels.d_in, channels.d_out)?;
    if train_items.is_empty() {
        return Err(Error::Config("training split yields no complete windows".into()));
    }
    if val_items.is_empty() {
        return Err(Error::Config("validation split yields no complete windows".into()));
    }
    let skipped = (skipped_train, skipped_val);
    io(dir, fs::create_dir_all(dir))?;

    let adam = cfg.optimizer();
    let last = dir.join(LAST_WEIGHTS);
    let manifest = dir.join(MANIFEST_FILE);
    let (mut state, mut history) = if resume && last.exists() && manifest.exists() {
        let m = kv::read(&manifest)?;
        let diff: Vec<String> = cfg
            .to_kv()
            .into_iter()
            .chain(model.spec.to_kv())
            .chain([("dataset_hash".to_string(), data.dataset_hash.clone()), ("stage".into(), stage.into())])
            .filter(|(k, v)| !k.ends_with("epochs") && m.get(k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        if !diff.is_empty() {
            return Err(Error::Incompatible(diff));
        }
        checkpoint::load_into(&mut model.store, &last)?;
        let log_path = dir.join(METRICS_FILE);
        let history = parse_log(&io(&log_path, fs::read_to_string(&log_path))?)?;
        (RunState::from_manifest(&m)?, history)
    } else {
        let (_, initial) = validate(&mut model, data, &data.validation, &val_items, batch_size)?;
        data.prep.save(&dir.join(PREP_DIR))?;
        (
            RunState {
                next_epoch: 0,
                best_epoch: 0,
                best_val_mae: f64::INFINITY,
                initial_val_mae: initial,
            },
            Vec::new(),
        )
    };

    let mut first_step_loss = f64::NAN;
    for epoch in state.next_epoch..epochs {
        let mut order = train_items.clone();
        order.shuffle(&mut rng_for(cfg.seed, SHUFFLE_STREAM | epoch as u64));
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            let mut prepared = Vec::with_capacity(chunk.len());
            for (k, &item) in chunk.iter().enumerate() {
                let p = data.prepared(&data.train, item, &channels)?;
                prepared.push(if cfg.augment {
                    let idx = (step * batch_size + k) as u64;
                    let spec = draw_spec(&mut rng_for(cfg.seed, ((epoch as u64) << 32) | idx));
                    p.augmented(&spec)
                } else {
                    p
                });
            }
            let refs: Vec<&PreparedSample> = prepared.iter().collect();
            let batch = Batch::new(&refs, &channels, model.multiple())?;
            let mut g = Graph::new();
            let preds = model.forward(&mut g, &batch, Mode::Train)?;
            let loss = match rollout_loss(&mut g, &preds, &batch) {
                Ok(l) => l,
                Err(Error::EmptyDomain) => continue,
                Err(e) => return Err(e),
            };
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            let grads = g.backward(loss)?;
            model.store.zero_grad();
            grads.accumulate_into(&mut model.store);
            adam.step(&mut model.store, epoch).map_err(|e| match e {
                seaice_nn::NnError::Diverged(p) => {
                    Error::Diverged(format!("non-finite gradient of `{p}` at epoch {epoch}, step {step}"))
                }
                other => other.into(),
            })?;
            if first_step_loss.is_nan() {
                first_step_loss = value as f64;
            }
            loss_sum += value as f64;
            steps += 1;
        }
        if steps == 0 {
            return Err(Error::EmptyDomain);
        }
        let (val_loss, val_mae) = validate(&mut model, data, &data.validation, &val_items, batch_size)?;
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_loss,
            val_mae,
        });
        if val_mae < state.best_val_mae {
            state.best_val_mae = val_mae;
            state.best_epoch = epoch;
            checkpoint::save(&model.store, &dir.join(BEST_WEIGHTS), false)?;
        }
        state.next_epoch = epoch + 1;
        checkpoint::save(&model.store, &last, true)?;
        let log_path = dir.join(METRICS_FILE);
        io(&log_path, fs::write(&log_path, render_log(&history)))?;
        write_manifest(dir, cfg, &model, &state.extras(data, stage, skipped))?;
    }

    Ok(TrainReport {
        dir: dir.to_path_buf(),
        best_epoch: state.best_epoch,
        best_val_mae: state.best_val_mae,
        history,
        initial_val_mae: state.initial_val_mae,
        first_step_loss,
        skipped_train,
        skipped_validation: skipped_val,
    })
}

/// Trains an S-regime model from scratch (or resumes it) into `dir`.
pub fn train_s(cfg: &TrainConfig, data: &TrainData, dir: &Path, resume: bool) -> Result<TrainReport> {
    if cfg.regime != Regime::S {
        return Err(Error::Config("train_s requires the S regime".into()));
    }
    cfg.validate()?;
    let model = ForecastModel::new(cfg.model_spec()?, &data.prep, cfg.seed)?;
    run(cfg, cfg.epochs, cfg.batch_size, data, model, dir, "s", resume)
}

/// Stage 1 of the curriculum: S-regime training with one output day.
pub fn pretrain(cfg_r: &TrainConfig, data: &TrainData, dir: &Path, resume: bool) -> Result<TrainReport> {
    train_s(&cfg_r.pretrain_config(), data, dir, resume)
}

/// Loads a stage-1 checkpoint's best weights into an R-regime model.
pub fn recurrent_from_pretrained(cfg_r: &TrainConfig, data: &TrainData, pretrained: &Path) -> Result<ForecastModel> {
    let weights = pretrained.join(BEST_WEIGHTS);
    if !weights.exists() || !pretrained.join(MANIFEST_FILE).exists() {
        return Err(Error::Precondition(format!(
            "R-regime finetuning needs a pretrained checkpoint; none found in {}",
            pretrained.display()
        )));
    }
    let expected = cfg_r.pretrain_config().model_spec()?;
    let stage1 = ModelSpec::from_kv(&kv::read(&pretrained.join(MANIFEST_FILE))?)?;
    let diff = stage1.diff(&expected);
    if !diff.is_empty() {
        return Err(Error::Incompatible(diff));
    }
    let mut model = ForecastModel::new(cfg_r.model_spec()?, &data.prep, cfg_r.seed)?;
    checkpoint::load_into(&mut model.store, &weights)?;
    Ok(model)
}

/// Stage 2 of the curriculum: recurrent rollouts of length `D_out`
/// initialized from the stage-1 checkpoint in `pretrained`.
pub fn finetune(
    cfg_r: &TrainConfig,
    data: &TrainData,
    pretrained: &Path,
    dir: &Path,
    resume: bool,
) -> Result<TrainReport> {
    if cfg_r.regime != Regime::R {
        return Err(Error::Config("finetuning requires the R regime".into()));
    }
    cfg_r.validate()?;
    let model = recurrent_from_pretrained(cfg_r, data, pretrained)?;
    run(cfg_r, cfg_r.finetune_epochs, cfg_r.batch_size, data, model, dir, "r", resume)
}

/// Both curriculum stages; stage 1 is written under `dir/pretrain`.
pub fn pretrain_then_finetune(
    cfg_r: &TrainConfig,
    data: &TrainData,
    dir: &Path,
    resume: bool,
) -> Result<(TrainReport, TrainReport)> {
    if cfg_r.regime != Regime::R {
        return Err(Error::Config("the curriculum requires the R regime".into()));
    }
    cfg_r.validate()?;
    let stage1_dir = dir.join(PRETRAIN_DIR);
    let stage1 = pretrain(cfg_r, data, &stage1_dir, resume)?;
    let stage2 = finetune(cfg_r, data, &stage1_dir, dir, resume)?;
    Ok((stage1, stage2))
}
