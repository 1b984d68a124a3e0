//! Network-ready planes and batched input tensors.

use chrono::{Days, NaiveDate};
use seaice_nn::Tensor;

use super::channels::{ChannelConfig, Source, Time, WeatherPlane, WEATHER_PLANES};
use crate::augment::{resample, source_map, AugmentSpec};
use crate::error::{Error, Result};
use crate::preprocess::{day_harmonics, doy_slot, features, Preprocessor};
use crate::store::{channels, GridStack, Sample};

/// Standardized planes of one sample, NaN where missing.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub base_date: NaiveDate,
    pub rows: usize,
    pub cols: usize,
    /// `D_in` standardized SIC planes, oldest first.
    pub sic_past: Vec<Vec<f32>>,
    /// For virtual day `v = 0..=D_out`, the standardized weather planes in
    /// [`WeatherPlane`] order; day 0 is observed, later days are forecasts
    /// issued on the base date. Empty without weather.
    pub weather: Vec<Vec<Vec<f32>>>,
    /// 1 on land, 0 at sea.
    pub land: Vec<f32>,
    /// Last observed SIC, %.
    pub base: Vec<f32>,
    /// Observed SIC per lead day, %; empty when unobserved.
    pub targets: Vec<Vec<f32>>,
}

fn weather_day(
    stack: &GridStack,
    region: &str,
    date: NaiveDate,
    prep: &Preprocessor,
) -> Result<Vec<Vec<f32>>> {
    let mut planes = vec![Vec::new(); WEATHER_PLANES];
    for (var, clim_i, anom_i, clim_name, anom_name) in [
        (channels::T2M, WeatherPlane::T2mClim, WeatherPlane::T2mAnom, features::T2M_CLIM, features::T2M_ANOM),
        (channels::MSL, WeatherPlane::MslClim, WeatherPlane::MslAnom, features::MSL_CLIM, features::MSL_ANOM),
    ] {
        let clim = prep.climatology(region, var)?.map(doy_slot(date));
        let (cs, as_) = (prep.scaler(clim_name)?, prep.scaler(anom_name)?);
        planes[clim_i as usize] = clim.iter().map(|&c| cs.apply_value(c)).collect();
        planes[anom_i as usize] = stack
            .channel(var)?
            .iter()
            .zip(clim)
            .map(|(&x, &c)| as_.apply_value(x - c))
            .collect();
    }
    for (var, idx) in [
        (channels::U10, WeatherPlane::U10),
        (channels::V10, WeatherPlane::V10),
        (channels::WIND, WeatherPlane::Wind),
    ] {
        let s = prep.scaler(var)?;
        planes[idx as usize] = stack.channel(var)?.iter().map(|&x| s.apply_value(x)).collect();
    }
    Ok(planes)
}

/// Standardizes a sample's inputs and keeps raw SIC for the head and loss.
pub fn prepare(
    sample: &Sample,
    prep: &Preprocessor,
    cfg: &ChannelConfig,
    land_mask: &[bool],
) -> Result<PreparedSample> {
    if sample.d_in() != cfg.d_in {
        return Err(Error::Shape(format!(
            "sample has {} past days, model expects {}",
            sample.d_in(),
            cfg.d_in
        )));
    }
    if sample.d_out() < cfg.d_out {
        return Err(Error::Shape(format!(
            "sample covers {} lead days, model needs {}",
            sample.d_out(),
            cfg.d_out
        )));
    }
    let (rows, cols) = sample.extent();
    if land_mask.len() != rows * cols {
        return Err(Error::Shape("land mask extent differs from sample".into()));
    }
    let sic_scaler = prep.scaler(features::SIC)?;
    let sic_past = sample
        .past
        .iter()
        .map(|s| Ok(s.channel(channels::SIC)?.iter().map(|&v| sic_scaler.apply_value(v)).collect()))
        .collect::<Result<Vec<Vec<f32>>>>()?;
    let today = sample.past.last().expect("d_in ≥ 1");
    let mut weather = Vec::new();
    if cfg.include_weather {
        weather.push(weather_day(today, &today.region, sample.base_date, prep)?);
        for (lead, stack) in sample.future_aux.iter().enumerate().take(cfg.d_out) {
            let date = sample.base_date + Days::new(lead as u64 + 1);
            weather.push(weather_day(stack, &today.region, date, prep)?);
        }
    }
    Ok(PreparedSample {
        base_date: sample.base_date,
        rows,
        cols,
        sic_past,
        weather,
        land: land_mask.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
        base: today.channel(channels::SIC)?.to_vec(),
        targets: sample.target.iter().take(cfg.d_out).map(|t| t.data.clone()).collect(),
    })
}

impl PreparedSample {
    /// Resamples every plane with one spec (NaN outside the footprint).
    pub fn augmented(&self, spec: &AugmentSpec) -> PreparedSample {
        let map = source_map(spec, self.rows, self.cols);
        let r = |p: &Vec<f32>| resample(&map, p);
        PreparedSample {
            base_date: self.base_date,
            rows: self.rows,
            cols: self.cols,
            sic_past: self.sic_past.iter().map(r).collect(),
            weather: self.weather.iter().map(|d| d.iter().map(r).collect()).collect(),
            land: r(&self.land),
            base: r(&self.base),
            targets: self.targets.iter().map(r).collect(),
        }
    }
}

/// Padded tensors for a batch of prepared samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub h: usize,
    pub w: usize,
    /// `N × D_in × H × W`, standardized and zero-imputed.
    pub sic: Tensor,
    /// Remaining input channels for each pass (one in S, `D_out` in R).
    pub rest: Vec<Tensor>,
    /// Persistence base `N × 1 × H × W` in %, zero where missing.
    pub base: Tensor,
    /// 1 where the base is observed.
    pub observed: Tensor,
    /// Per lead day `N × 1 × H × W`, zero where missing.
    pub targets: Vec<Tensor>,
    pub masks: Vec<Vec<bool>>,
}

fn pad_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

impl Batch {
    pub fn new(samples: &[&PreparedSample], cfg: &ChannelConfig, multiple: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Precondition("empty batch".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        if samples.iter().any(|s| (s.rows, s.cols) != (rows, cols)) {
            return Err(Error::Shape("batch samples differ in extent".into()));
        }
        let (h, w) = (pad_up(rows, multiple), pad_up(cols, multiple));
        let n = samples.len();
        let plane = h * w;
        let put = |dst: &mut [f32], src: &[f32]| {
            for r in 0..rows {
                for c in 0..cols {
                    let v = src[r * cols + c];
                    dst[r * w + c] = if v.is_finite() { v } else { 0.0 };
                }
            }
        };
        let fill = |dst: &mut [f32], v: f32| {
            for r in 0..rows {
                dst[r * w..r * w + cols].fill(v);
            }
        };

        let mut sic = vec![0.0f32; n * cfg.d_in * plane];
        for (i, s) in samples.iter().enumerate() {
            for (d, p) in s.sic_past.iter().enumerate() {
                let off = (i * cfg.d_in + d) * plane;
                put(&mut sic[off..off + plane], p);
            }
        }

        let passes = match cfg.regime {
            super::Regime::S => 1,
            super::Regime::R => cfg.d_out,
        };
        let rest_desc = cfg.rest();
        let crest = rest_desc.len();
        let mut rest = Vec::with_capacity(passes);
        for k in 0..passes {
            let mut data = vec![0.0f32; n * crest * plane];
            for (i, s) in samples.iter().enumerate() {
                let h = day_harmonics(s.base_date + Days::new(k as u64));
                for (ci, desc) in rest_desc.iter().enumerate() {
                    let off = (i * crest + ci) * plane;
                    let dst = &mut data[off..off + plane];
                    match desc.source {
                        Source::Weather => {
                            let day = match desc.time {
                                Time::Future(lead) => k + lead,
                                _ => k,
                            };
                            let plane_idx = desc.plane.expect("weather channels carry a plane") as usize;
                            let src = s
                                .weather
                                .get(day)
                                .and_then(|d| d.get(plane_idx))
                                .ok_or_else(|| Error::MissingChannel(desc.name.clone()))?;
                            put(dst, src);
                        }
                        Source::General => match desc.name.as_str() {
                            "date_cos" => fill(dst, h.cos_phi as f32),
                            "date_sin" => fill(dst, h.sin_phi as f32),
                            "land" => put(dst, &s.land),
                            other => return Err(Error::MissingChannel(other.to_string())),
                        },
                        Source::Sic => unreachable!("SIC channels precede the rest"),
                    }
                }
            }
            rest.push(Tensor::new(&[n, crest, h, w], data)?);
        }

        let mut base = vec![0.0f32; n * plane];
        let mut observed = vec![0.0f32; n * plane];
        for (i, s) in samples.iter().enumerate() {
            put(&mut base[i * plane..(i + 1) * plane], &s.base);
            let ones: Vec<f32> = s.base.iter().map(|v| if v.is_finite() { 1.0 } else { 0.0 }).collect();
            put(&mut observed[i * plane..(i + 1) * plane], &ones);
        }

        let leads = samples.iter().map(|s| s.targets.len()).min().unwrap_or(0);
        let mut targets = Vec::with_capacity(leads);
        let mut masks = Vec::with_capacity(leads);
        for d in 0..leads.min(cfg.d_out) {
            let mut t = vec![0.0f32; n * plane];
            let mut m = vec![false; n * plane];
            for (i, s) in samples.iter().enumerate() {
                let src = &s.targets[d];
                put(&mut t[i * plane..(i + 1) * plane], src);
                for r in 0..rows {
                    for c in 0..cols {
                        m[i * plane + r * w + c] = src[r * cols + c].is_finite();
                    }
                }
            }
            targets.push(Tensor::new(&[n, 1, h, w], t)?);
            masks.push(m);
        }

        Ok(Self {
            n,
            rows,
            cols,
            h,
            w,
            sic: Tensor::new(&[n, cfg.d_in, h, w], sic)?,
            rest,
            base: Tensor::new(&[n, 1, h, w], base)?,
            observed: Tensor::new(&[n, 1, h, w], observed)?,
            targets,
            masks,
        })
    }

    /// Crops sample `i` of an `N × 1 × H × W` tensor back to the grid.
    pub fn crop(&self, t: &Tensor, i: usize) -> Vec<f32> {
        let plane = self.h * self.w;
        let src = &t.data()[i * plane..(i + 1) * plane];
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            out.extend_from_slice(&src[r * self.w..r * self.w + self.cols]);
        }
        out
    }
}
