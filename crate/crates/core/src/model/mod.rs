//! Input channel layout, U-Net, residual head and S/R forward passes.

mod channels;
mod features;
mod unet;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seaice_nn::{checkpoint, Graph, Mode, ParamStore, Var};

pub use channels::{ChannelConfig, ChannelDesc, Prep, Regime, Source, Time, WeatherPlane, WEATHER_PLANES};
pub use features::{prepare, Batch, PreparedSample};
pub use unet::{UNet, UNetConfig, Upsample};

use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};
use crate::preprocess::{features as feat, Preprocessor};
use crate::raster::Raster;

pub const DEFAULT_ALPHA: f32 = 0.1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PREP_DIR: &str = "prep";

/// Everything that fixes the parameter layout and output semantics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub channels: ChannelConfig,
    pub unet: UNetConfig,
    pub alpha: f32,
    pub residual_base: bool,
}

impl ModelSpec {
    pub fn new(channels: ChannelConfig, depth: usize, base_channels: usize, residual_base: bool) -> Self {
        let unet = UNetConfig {
            depth,
            base_channels,
            ..UNetConfig::desk(channels.in_channels(), channels.out_channels())
        };
        Self {
            channels,
            unet,
            alpha: DEFAULT_ALPHA,
            residual_base,
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let c = &self.channels;
        let u = &self.unet;
        [
            ("d_in", c.d_in.to_string()),
            ("d_out", c.d_out.to_string()),
            ("regime", c.regime.to_string()),
            ("include_weather", c.include_weather.to_string()),
            ("channels", c.names().join(",")),
            ("depth", u.depth.to_string()),
            ("base_channels", u.base_channels.to_string()),
            ("in_channels", u.in_channels.to_string()),
            ("out_channels", u.out_channels.to_string()),
            ("upsample", u.upsample.as_str().to_string()),
            ("alpha", format!("{:?}", self.alpha)),
            ("residual_base", self.residual_base.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let channels = ChannelConfig::new(
            kv::parse_value(kv, "d_in")?,
            kv::parse_value(kv, "d_out")?,
            Regime::parse(kv::require(kv, "regime")?)?,
            kv::parse_value(kv, "include_weather")?,
        )?;
        let spec = Self {
            unet: UNetConfig {
                depth: kv::parse_value(kv, "depth")?,
                base_channels: kv::parse_value(kv, "base_channels")?,
                in_channels: kv::parse_value(kv, "in_channels")?,
                out_channels: kv::parse_value(kv, "out_channels")?,
                upsample: Upsample::parse(kv::require(kv, "upsample")?)?,
            },
            channels,
            alpha: kv::parse_value(kv, "alpha")?,
            residual_base: kv::parse_value(kv, "residual_base")?,
        };
        if spec.to_kv().get("channels") != kv.get("channels") {
            return Err(Error::Incompatible(vec!["channels".into()]));
        }
        Ok(spec)
    }

    /// Names of model fields whose values differ.
    pub fn diff(&self, other: &ModelSpec) -> Vec<String> {
        let (a, b) = (self.to_kv(), other.to_kv());
        a.keys().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
    }
}

/// Output transform: `F = clip(B + α·M)` with SIC as a fraction, or a
/// directly emitted standardized SIC when the base is ablated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Head {
    pub alpha: f32,
    pub residual_base: bool,
    pub sic_mean: f32,
    pub sic_std: f32,
}

impl Head {
    fn apply(&self, g: &mut Graph, m: Var, base: Var) -> Result<Var> {
        let raw = if self.residual_base {
            // 100·(B/100 + α·M) in percent.
            let step = g.affine(m, 100.0 * self.alpha, 0.0);
            g.add(base, step)?
        } else {
            g.affine(m, self.sic_std, self.sic_mean)
        };
        Ok(g.clamp(raw, 0.0, 100.0))
    }
}

pub struct ForecastModel {
    pub spec: ModelSpec,
    pub net: UNet,
    pub store: ParamStore,
    pub head: Head,
}

impl ForecastModel {
    pub fn new(spec: ModelSpec, prep: &Preprocessor, seed: u64) -> Result<Self> {
        if spec.unet.in_channels != spec.channels.in_channels()
            || spec.unet.out_channels != spec.channels.out_channels()
        {
            return Err(Error::Config(format!(
                "U-Net has {}→{} channels, channel layout needs {}→{}",
                spec.unet.in_channels,
                spec.unet.out_channels,
                spec.channels.in_channels(),
                spec.channels.out_channels()
            )));
        }
        if spec.channels.include_weather && !prep.includes_weather() {
            return Err(Error::State("preprocessor was fitted without weather channels".into()));
        }
        let mut store = ParamStore::new();
        let net = UNet::new(spec.unet, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let sic = prep.scaler(feat::SIC)?;
        let head = Head {
            alpha: spec.alpha,
            residual_base: spec.residual_base,
            sic_mean: sic.mean as f32,
            sic_std: sic.std as f32,
        };
        Ok(Self { spec, net, store, head })
    }

    /// Forces the network output `M` to zero everywhere.
    pub fn zero_output(&mut self) {
        let ids = [Some(self.net.head.weight), self.net.head.bias];
        for id in ids.into_iter().flatten() {
            self.store.param_mut(id).value.data_mut().fill(0.0);
        }
    }

    pub fn multiple(&self) -> usize {
        self.spec.unet.multiple()
    }

    /// All lead days from one pass; one `N × 1 × H × W` forecast per lead.
    pub fn forward_s(&mut self, g: &mut Graph, batch: &Batch, mode: Mode) -> Result<Vec<Var>> {
        let sic = g.constant(batch.sic.clone());
        let rest = g.constant(batch.rest[0].clone());
        let x = g.concat_channels(&[sic, rest])?;
        let m = self.net.forward(g, &mut self.store, x, mode)?;
        let base = g.constant(batch.base.clone());
        (0..self.spec.channels.out_channels())
            .map(|d| {
                let md = g.slice_channels(m, d, 1)?;
                self.head.apply(g, md, base)
            })
            .collect()
    }

    /// One day per pass, feeding each clipped forecast back as SIC history.
    pub fn forward_r(&mut self, g: &mut Graph, batch: &Batch, mode: Mode) -> Result<Vec<Var>> {
        let d_in = self.spec.channels.d_in;
        let d_out = self.spec.channels.d_out;
        if batch.rest.len() < d_out {
            return Err(Error::Shape(format!(
                "batch holds {} recurrent passes, need {d_out}",
                batch.rest.len()
            )));
        }
        let sic = g.constant(batch.sic.clone());
        let base0 = g.constant(batch.base.clone());
        let (mean, std) = (self.head.sic_mean, self.head.sic_std);
        let mut preds: Vec<Var> = Vec::with_capacity(d_out);
        let mut fed: Vec<Var> = Vec::with_capacity(d_out);
        for k in 0..d_out {
            let mut parts = Vec::with_capacity(d_in + 1);
            if k < d_in {
                parts.push(g.slice_channels(sic, k, d_in - k)?);
            }
            parts.extend(fed.iter().skip(k.saturating_sub(d_in)).copied());
            parts.push(g.constant(batch.rest[k].clone()));
            let x = g.concat_channels(&parts)?;
            let m = self.net.forward(g, &mut self.store, x, mode)?;
            let base = if k == 0 { base0 } else { preds[k - 1] };
            let f = self.head.apply(g, m, base)?;
            let z = g.affine(f, 1.0 / std, -mean / std);
            fed.push(g.mul_const(z, &batch.observed)?);
            preds.push(f);
        }
        Ok(preds)
    }

    pub fn forward(&mut self, g: &mut Graph, batch: &Batch, mode: Mode) -> Result<Vec<Var>> {
        match self.spec.channels.regime {
            Regime::S => self.forward_s(g, batch, mode),
            Regime::R => self.forward_r(g, batch, mode),
        }
    }

    /// Forecasts for one prepared sample; NaN where SIC was not observed.
    pub fn predict(&mut self, sample: &PreparedSample) -> Result<Vec<Raster>> {
        let batch = Batch::new(&[sample], &self.spec.channels, self.multiple())?;
        let mut g = Graph::new();
        let preds = self.forward(&mut g, &batch, Mode::Eval)?;
        preds
            .iter()
            .map(|&p| {
                let mut data = batch.crop(g.value(p), 0);
                for (v, b) in data.iter_mut().zip(&sample.base) {
                    if !b.is_finite() {
                        *v = f32::NAN;
                    }
                }
                Raster::new(sample.rows, sample.cols, data)
            })
            .collect()
    }

    /// Loads weights saved beside a manifest and preprocessor directory.
    pub fn load(dir: &Path, weights: &str, expected: Option<&ModelSpec>) -> Result<(Self, Preprocessor)> {
        let manifest = kv::read(&dir.join(MANIFEST_FILE))?;
        let spec = ModelSpec::from_kv(&manifest)?;
        if let Some(e) = expected {
            let diff = spec.diff(e);
            if !diff.is_empty() {
                return Err(Error::Incompatible(diff));
            }
        }
        let prep = Preprocessor::load(&dir.join(PREP_DIR))?;
        let mut model = Self::new(spec, &prep, 0)?;
        checkpoint::load_into(&mut model.store, &dir.join(weights))?;
        Ok((model, prep))
    }
}

/// Mean over lead days of the masked ℓ1 loss; days without any valid cell
/// are skipped.
pub fn rollout_loss(g: &mut Graph, preds: &[Var], batch: &Batch) -> Result<Var> {
    let mut terms = Vec::with_capacity(preds.len());
    for (d, &p) in preds.iter().enumerate() {
        let (Some(t), Some(m)) = (batch.targets.get(d), batch.masks.get(d)) else {
            return Err(Error::Shape(format!("batch lacks a target for lead day {}", d + 1)));
        };
        if m.iter().any(|&b| b) {
            terms.push(g.masked_l1(p, t, m)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::EmptyDomain);
    }
    Ok(g.mean(&terms)?)
}
