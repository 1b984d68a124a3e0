//! Climatology, anomalies, standardization and calendar features.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::store::{channels, sigs, Catalog, GridStack};

pub const SLOTS: usize = 366;
pub const DAYS_PER_YEAR: f64 = 365.2425;

/// Position of a date on the 366-slot leap-year circle.
pub fn doy_slot(date: NaiveDate) -> usize {
    let d = date.ordinal0() as usize;
    if date.leap_year() || d < 59 {
        d
    } else {
        d + 1
    }
}

/// Per-day-of-year mean maps for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Climatology {
    pub channel: String,
    pub rows: usize,
    pub cols: usize,
    /// `SLOTS × rows × cols`.
    maps: Vec<f32>,
    /// Records contributing to each slot's 3-day window.
    pub counts: Vec<u32>,
}

impl Climatology {
    pub fn map(&self, slot: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.maps[slot * n..(slot + 1) * n]
    }

    pub fn for_date(&self, date: NaiveDate) -> Raster {
        Raster {
            rows: self.rows,
            cols: self.cols,
            data: self.map(doy_slot(date)).to_vec(),
        }
    }

    pub fn save(&self, dir: &Path, region: &str) -> Result<()> {
        let stack = GridStack::new(
            region,
            NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            (0..SLOTS).map(|s| format!("doy{s:03}")).collect(),
            self.rows,
            self.cols,
            self.maps.clone(),
        )?;
        sigs::write_stack(&stack, &dir.join(format!("clim_{}.sigs", self.channel)))?;
        let mut counts = String::new();
        for (s, c) in self.counts.iter().enumerate() {
            let _ = writeln!(counts, "{s}\t{c}");
        }
        let path = dir.join(format!("clim_{}_counts.tsv", self.channel));
        std::fs::write(&path, counts).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, channel: &str) -> Result<Self> {
        let stack = sigs::read_stack(&dir.join(format!("clim_{channel}.sigs")))?;
        if stack.channels.len() != SLOTS {
            return Err(Error::format("channel count", format!("expected {SLOTS}")));
        }
        let path = dir.join(format!("clim_{channel}_counts.tsv"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let counts = text
            .lines()
            .map(|l| {
                l.split('\t')
                    .nth(1)
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| Error::format("counts", format!("bad line `{l}`")))
            })
            .collect::<Result<Vec<u32>>>()?;
        if counts.len() != SLOTS {
            return Err(Error::format("counts", format!("expected {SLOTS} lines")));
        }
        Ok(Self {
            channel: channel.to_string(),
            rows: stack.rows,
            cols: stack.cols,
            maps: stack.data,
            counts,
        })
    }
}

/// 3-day circular-window, NaN-ignoring climatology of one channel.
pub fn compute_climatology(train: &Catalog, channel: &str) -> Result<Climatology> {
    if train.is_empty() {
        return Err(Error::Config("training catalog is empty".into()));
    }
    let (rows, cols) = train.extent();
    let n = rows * cols;
    let mut sums = vec![0.0f64; SLOTS * n];
    let mut cells = vec![0u32; SLOTS * n];
    let mut records = [0u32; SLOTS];
    let mut seen = false;
    for stack in train.iter() {
        let Ok(plane) = stack.channel(channel) else {
            continue;
        };
        seen = true;
        let slot = doy_slot(stack.date);
        records[slot] += 1;
        let (s, c) = (&mut sums[slot * n..(slot + 1) * n], &mut cells[slot * n..(slot + 1) * n]);
        for ((acc, cnt), &v) in s.iter_mut().zip(c.iter_mut()).zip(plane) {
            if v.is_finite() {
                *acc += v as f64;
                *cnt += 1;
            }
        }
    }
    if !seen {
        return Err(Error::MissingChannel(channel.to_string()));
    }
    let mut maps = vec![f32::NAN; SLOTS * n];
    let mut counts = vec![0u32; SLOTS];
    for d in 0..SLOTS {
        let window = [(d + SLOTS - 1) % SLOTS, d, (d + 1) % SLOTS];
        counts[d] = window.iter().map(|&s| records[s]).sum();
        let out = &mut maps[d * n..(d + 1) * n];
        for (i, o) in out.iter_mut().enumerate() {
            let (mut acc, mut cnt) = (0.0f64, 0u32);
            for &s in &window {
                acc += sums[s * n + i];
                cnt += cells[s * n + i];
            }
            if cnt > 0 {
                *o = (acc / cnt as f64) as f32;
            }
        }
    }
    Ok(Climatology {
        channel: channel.to_string(),
        rows,
        cols,
        maps,
        counts,
    })
}

/// `data − climatology(date)`, NaN-propagating.
pub fn anomaly(data: &Raster, clim: &Climatology, date: NaiveDate) -> Result<Raster> {
    let c = clim.for_date(date);
    data.same_extent(&c)?;
    let out = data.data.iter().zip(&c.data).map(|(&x, &m)| x - m).collect();
    Raster::new(data.rows, data.cols, out)
}

/// Linear standardization with population moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScaler {
    pub channel: String,
    pub mean: f64,
    pub std: f64,
}

impl ChannelScaler {
    /// Fits on every finite value produced by `values`.
    pub fn fit_values(channel: &str, values: impl IntoIterator<Item = f32>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0u64, 0.0f64, 0.0f64);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            n += 1;
            sum += v as f64;
            sq += v as f64 * v as f64;
        }
        if n < 2 {
            return Err(Error::DegenerateChannel(
                channel.into(),
                format!("{n} finite values, need at least 2"),
            ));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::DegenerateChannel(channel.into(), "zero variance".into()));
        }
        Ok(Self {
            channel: channel.to_string(),
            mean,
            std,
        })
    }

    pub fn apply_value(&self, x: f32) -> f32 {
        ((x as f64 - self.mean) / self.std) as f32
    }

    pub fn invert_value(&self, z: f32) -> f32 {
        (z as f64 * self.std + self.mean) as f32
    }

    pub fn apply(&self, r: &Raster) -> Raster {
        r.map(|x| self.apply_value(x))
    }

    pub fn invert(&self, r: &Raster) -> Raster {
        r.map(|z| self.invert_value(z))
    }
}

pub fn fit_scaler(train: &Catalog, channel: &str) -> Result<ChannelScaler> {
    let mut seen = false;
    let values = train.iter().filter_map(|s| s.channel(channel).ok()).flat_map(|p| {
        seen = true;
        p.iter().copied()
    });
    let values: Vec<f32> = values.collect();
    if !seen {
        return Err(Error::MissingChannel(channel.to_string()));
    }
    ChannelScaler::fit_values(channel, values)
}

pub fn write_scaler_table(path: &Path, scalers: &BTreeMap<String, ChannelScaler>) -> Result<()> {
    let mut s = String::new();
    for sc in scalers.values() {
        let _ = writeln!(s, "{}\t{:?}\t{:?}", sc.channel, sc.mean, sc.std);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_scaler_table(path: &Path) -> Result<BTreeMap<String, ChannelScaler>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split('\t').collect();
        let bad = || Error::format(format!("scaler line {}", n + 1), "expected `channel<TAB>mean<TAB>std`");
        if parts.len() != 3 {
            return Err(bad());
        }
        let mean = parts[1].parse().map_err(|_| bad())?;
        let std = parts[2].parse().map_err(|_| bad())?;
        out.insert(
            parts[0].to_string(),
            ChannelScaler {
                channel: parts[0].to_string(),
                mean,
                std,
            },
        );
    }
    Ok(out)
}

/// Annual phase of a date.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DayHarmonics {
    pub phi: f64,
    pub cos_phi: f64,
    pub sin_phi: f64,
}

pub fn day_harmonics(date: NaiveDate) -> DayHarmonics {
    let phi = 2.0 * std::f64::consts::PI * date.ordinal0() as f64 / DAYS_PER_YEAR;
    DayHarmonics {
        phi,
        cos_phi: phi.cos(),
        sin_phi: phi.sin(),
    }
}

pub fn clip_sic(r: &Raster) -> Raster {
    r.map(clip_sic_value)
}

pub fn clip_sic_value(v: f32) -> f32 {
    if v.is_nan() {
        v
    } else {
        v.clamp(0.0, 100.0)
    }
}

/// Feature names of standardized inputs.
pub mod features {
    pub const SIC: &str = "sic";
    pub const T2M_CLIM: &str = "t2m_clim";
    pub const T2M_ANOM: &str = "t2m_anom";
    pub const MSL_CLIM: &str = "msl_clim";
    pub const MSL_ANOM: &str = "msl_anom";
}

/// Climatologies of one region.
#[derive(Clone, Debug)]
pub struct RegionClimatology {
    pub sic: Climatology,
    pub t2m: Option<Climatology>,
    pub msl: Option<Climatology>,
}

/// Everything fitted on the training split that input assembly needs:
/// per-region climatologies and scalers pooled over all regions.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub regions: BTreeMap<String, RegionClimatology>,
    pub scalers: BTreeMap<String, ChannelScaler>,
}

impl Preprocessor {
    pub fn fit(train: &Catalog, include_weather: bool) -> Result<Self> {
        Self::fit_many(&[train], include_weather)
    }

    pub fn fit_many(trains: &[&Catalog], include_weather: bool) -> Result<Self> {
        if trains.is_empty() {
            return Err(Error::Config("no training catalogs".into()));
        }
        let mut regions = BTreeMap::new();
        let mut sic_vals = Vec::new();
        let mut pooled: BTreeMap<&str, Vec<f32>> = BTreeMap::new();
        for train in trains {
            if regions.contains_key(train.region()) {
                return Err(Error::Config(format!("region `{}` given twice", train.region())));
            }
            let sic = compute_climatology(train, channels::SIC)?;
            for s in train.iter() {
                sic_vals.extend_from_slice(s.channel(channels::SIC)?);
            }
            let (mut t2m, mut msl) = (None, None);
            if include_weather {
                for (var, clim_name, anom_name, slot) in [
                    (channels::T2M, features::T2M_CLIM, features::T2M_ANOM, &mut t2m),
                    (channels::MSL, features::MSL_CLIM, features::MSL_ANOM, &mut msl),
                ] {
                    let clim = compute_climatology(train, var)?;
                    for s in train.iter() {
                        let c = clim.map(doy_slot(s.date));
                        pooled.entry(clim_name).or_default().extend_from_slice(c);
                        pooled
                            .entry(anom_name)
                            .or_default()
                            .extend(s.channel(var)?.iter().zip(c).map(|(&x, &m)| x - m));
                    }
                    *slot = Some(clim);
                }
                for var in [channels::U10, channels::V10, channels::WIND] {
                    for s in train.iter() {
                        pooled.entry(var).or_default().extend_from_slice(s.channel(var)?);
                    }
                }
            }
            regions.insert(train.region().to_string(), RegionClimatology { sic, t2m, msl });
        }
        let mut scalers = BTreeMap::new();
        scalers.insert(
            features::SIC.to_string(),
            ChannelScaler::fit_values(features::SIC, sic_vals)?,
        );
        for (name, vals) in pooled {
            scalers.insert(name.to_string(), ChannelScaler::fit_values(name, vals)?);
        }
        Ok(Self { regions, scalers })
    }

    pub fn includes_weather(&self) -> bool {
        self.scalers.contains_key(features::T2M_ANOM)
    }

    pub fn scaler(&self, feature: &str) -> Result<&ChannelScaler> {
        self.scalers
            .get(feature)
            .ok_or_else(|| Error::State(format!("no fitted scaler for `{feature}`")))
    }

    pub fn climatology(&self, region: &str, var: &str) -> Result<&Climatology> {
        let r = self
            .regions
            .get(region)
            .ok_or_else(|| Error::State(format!("no climatology fitted for region `{region}`")))?;
        match var {
            v if v == channels::SIC => Some(&r.sic),
            v if v == channels::T2M => r.t2m.as_ref(),
            v if v == channels::MSL => r.msl.as_ref(),
            _ => None,
        }
        .ok_or_else(|| Error::State(format!("no fitted climatology for `{var}` in `{region}`")))
    }

    pub const SCALER_FILE: &'static str = "scalers.tsv";

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (region, r) in &self.regions {
            let sub = dir.join(region);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for c in [Some(&r.sic), r.t2m.as_ref(), r.msl.as_ref()].into_iter().flatten() {
                c.save(&sub, region)?;
            }
        }
        write_scaler_table(&dir.join(Self::SCALER_FILE), &self.scalers)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let scalers = read_scaler_table(&dir.join(Self::SCALER_FILE))?;
        let weather = scalers.contains_key(features::T2M_ANOM);
        let mut regions = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut subdirs: Vec<_> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        subdirs.sort();
        for region in subdirs {
            let sub = dir.join(&region);
            let opt = |var: &str| -> Result<Option<Climatology>> {
                if weather {
                    Climatology::load(&sub, var).map(Some)
                } else {
                    Ok(None)
                }
            };
            let rc = RegionClimatology {
                sic: Climatology::load(&sub, channels::SIC)?,
                t2m: opt(channels::T2M)?,
                msl: opt(channels::MSL)?,
            };
            regions.insert(region, rc);
        }
        if regions.is_empty() {
            return Err(Error::State(format!("no climatologies under {}", dir.display())));
        }
        Ok(Self { regions, scalers })
    }
}
