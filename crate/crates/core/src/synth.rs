//! Synthetic regional datasets with a seasonal, wind-driven ice edge.
//!
//! The ice edge is a row position per column,
//! `e(t, j) = mean + A·cos(2π(slot − 74)/366) + meander(j) − drift(t, j)`,
//! with `drift(t, j) = 0.9·drift(t−1, j) + drift_gain·v(t, e, j)`. SIC is a
//! logistic profile across the edge plus AR(1) cell noise weighted towards
//! the marginal ice zone. Weather fields are sums of a few smooth spatial
//! modes with AR(1) coefficients. Forecast channels `<var>_f<L>` on day `t`
//! hold the truth of day `t+L` plus smooth noise.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{build_region, RegionGrid, RegionOverrides};
use crate::kv::{self, KeyValues};
use crate::preprocess::doy_slot;
use crate::store::{channels, Catalog, GridStack};

pub const MAX_LEAD: usize = 3;
const MODES: usize = 4;
const WIND_RHO: f64 = 0.8;
const FIELD_RHO: f64 = 0.9;
const NOISE_RHO: f64 = 0.7;
const DRIFT_RHO: f64 = 0.9;
const PEAK_SLOT: f64 = 74.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub years: u32,
    /// First simulated year; defaults to `2022 − years` so the last year is 2021.
    pub start_year: Option<i32>,
    pub region: String,
    pub rows: usize,
    pub cols: usize,
    /// Seasonal edge excursion, cells.
    pub ice_edge_amplitude: f64,
    /// Logistic edge width, cells.
    pub edge_width: f64,
    /// Cell noise, SIC %.
    pub noise_std: f64,
    /// Edge displacement per day per m/s of meridional wind, cells.
    pub drift_gain: f64,
    /// Wind component standard deviation, m/s.
    pub wind_std: f64,
    /// Forecast error standard deviation for lead days 1..=3, channel units.
    pub forecast_noise_std: [f64; MAX_LEAD],
}

impl SynthConfig {
    pub fn new(seed: u64, years: u32, rows: usize, cols: usize) -> Self {
        Self {
            seed,
            years,
            start_year: None,
            region: "barents".into(),
            rows,
            cols,
            ice_edge_amplitude: 0.45 * rows as f64,
            edge_width: 6.0,
            noise_std: 3.0,
            drift_gain: 0.25,
            wind_std: 5.0,
            forecast_noise_std: [0.5, 1.0, 1.5],
        }
    }

    pub fn first_year(&self) -> i32 {
        self.start_year.unwrap_or(2022 - self.years as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.years < 2 {
            return bad("synthetic data needs at least 2 years");
        }
        if self.rows < 2 || self.cols < 1 {
            return bad("synthetic grid needs at least 2 rows and 1 column");
        }
        let nonneg = [
            self.ice_edge_amplitude,
            self.noise_std,
            self.drift_gain,
            self.wind_std,
        ];
        if nonneg.iter().chain(&self.forecast_noise_std).any(|v| !(*v >= 0.0)) {
            return bad("noise and amplitude parameters must be non-negative");
        }
        if !(self.edge_width > 0.0) {
            return bad("edge width must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("years", self.years.to_string());
        put("start_year", self.first_year().to_string());
        put("region", self.region.clone());
        put("rows", self.rows.to_string());
        put("cols", self.cols.to_string());
        put("ice_edge_amplitude", format!("{:?}", self.ice_edge_amplitude));
        put("edge_width", format!("{:?}", self.edge_width));
        put("noise_std", format!("{:?}", self.noise_std));
        put("drift_gain", format!("{:?}", self.drift_gain));
        put("wind_std", format!("{:?}", self.wind_std));
        put(
            "forecast_noise_std",
            self.forecast_noise_std.map(|v| format!("{v:?}")).join(","),
        );
        kv
    }

    /// Reads a config, taking defaults for absent keys.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let get = |k: &str, d: usize| -> Result<usize> {
            if kv.contains_key(k) { kv::parse_value(kv, k) } else { Ok(d) }
        };
        let rows = get("rows", 32)?;
        let cols = get("cols", 32)?;
        let years = get("years", 3)? as u32;
        let seed = if kv.contains_key("seed") { kv::parse_value(kv, "seed")? } else { 0 };
        let mut c = Self::new(seed, years, rows, cols);
        if kv.contains_key("start_year") {
            c.start_year = Some(kv::parse_value(kv, "start_year")?);
        }
        if let Some(r) = kv.get("region") {
            c.region = r.clone();
        }
        for (k, slot) in [
            ("ice_edge_amplitude", &mut c.ice_edge_amplitude),
            ("edge_width", &mut c.edge_width),
            ("noise_std", &mut c.noise_std),
            ("drift_gain", &mut c.drift_gain),
            ("wind_std", &mut c.wind_std),
        ] {
            if kv.contains_key(k) {
                *slot = kv::parse_value(kv, k)?;
            }
        }
        if let Some(raw) = kv.get("forecast_noise_std") {
            let vals: Vec<f64> = raw
                .split(',')
                .map(|v| v.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad forecast_noise_std `{raw}`")))?;
            c.forecast_noise_std = vals
                .try_into()
                .map_err(|_| Error::Config(format!("forecast_noise_std needs {MAX_LEAD} values")))?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Number of southern rows masked as land.
pub fn land_rows(rows: usize) -> usize {
    (rows / 16).max(1)
}

struct Basis {
    /// `MODES × rows × cols`.
    values: Vec<f64>,
}

impl Basis {
    fn new(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let tau = std::f64::consts::TAU;
        let phases: Vec<f64> = (0..MODES).map(|_| rng.random_range(0.0..tau)).collect();
        let n = rows * cols;
        let mut values = vec![0.0; MODES * n];
        for i in 0..rows {
            for j in 0..cols {
                let (y, x) = (i as f64 / rows as f64, j as f64 / cols as f64);
                let cell = i * cols + j;
                values[cell] = 1.0;
                values[n + cell] = (tau * x + phases[1]).cos() * 2f64.sqrt();
                values[2 * n + cell] = (tau * y + phases[2]).cos() * 2f64.sqrt();
                values[3 * n + cell] = (tau * (x + y) + phases[3]).cos() * 2f64.sqrt();
            }
        }
        Self { values }
    }

    fn field(&self, coef: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (k, &a) in coef.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(&self.values[k * n..(k + 1) * n]) {
                *o += a * b;
            }
        }
        out
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn ar_step(state: &mut [f64], innov: &[f64], rho: f64, std: f64) {
    let s = (1.0 - rho * rho).sqrt() * std;
    for (x, e) in state.iter_mut().zip(innov) {
        *x = rho * *x + s * e;
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// True state of one simulated day.
struct Day {
    sic: Vec<f32>,
    t2m: Vec<f64>,
    msl: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn wind_module(u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter().zip(v).map(|(a, b)| a.hypot(*b)).collect()
}

/// Generates the region grid and a gap-free daily catalog.
pub fn generate(config: &SynthConfig) -> Result<(RegionGrid, Catalog)> {
    config.validate()?;
    let (rows, cols) = (config.rows, config.cols);
    let n = rows * cols;
    let land = land_rows(rows);
    let land_mask: Vec<bool> = (0..n).map(|c| c / cols >= rows - land).collect();
    let grid = build_region(
        &config.region,
        RegionOverrides {
            rows: Some(rows),
            cols: Some(cols),
            land_mask: Some(land_mask.clone()),
            ..Default::default()
        },
    )?;

    let mut setup = ChaCha8Rng::seed_from_u64(config.seed);
    let basis = Basis::new(&mut setup, rows, cols);
    let meander_phase = setup.random_range(0.0..std::f64::consts::TAU);
    let meander: Vec<f64> = (0..cols)
        .map(|j| {
            0.06 * rows as f64
                * (std::f64::consts::TAU * j as f64 / cols as f64 + meander_phase).sin()
        })
        .collect();

    let start = NaiveDate::from_ymd_opt(config.first_year(), 1, 1)
        .ok_or_else(|| Error::Config("bad start year".into()))?;
    let end = NaiveDate::from_ymd_opt(config.first_year() + config.years as i32, 1, 1)
        .ok_or_else(|| Error::Config("bad year span".into()))?;
    let days = (end - start).num_days() as usize;

    let mode_std = 1.0 / (MODES as f64).sqrt();
    let wind_std = config.wind_std * mode_std;
    let mut u_coef = vec![0.0; MODES];
    let mut v_coef = vec![0.0; MODES];
    let mut t_coef = vec![0.0; MODES];
    let mut p_coef = vec![0.0; MODES];
    let mut cell_noise = vec![0.0; n];
    let mut drift = vec![0.0; cols];
    let edge_mean = 0.4 * rows as f64;
    let tau = std::f64::consts::TAU;

    let mut truth: Vec<Day> = Vec::with_capacity(days + MAX_LEAD);
    for t in 0..days + MAX_LEAD {
        let date = start + Days::new(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64 + 1);
        let innov = normals(&mut rng, 4 * MODES + n);
        let rho = |r: f64| if t == 0 { 0.0 } else { r };
        ar_step(&mut u_coef, &innov[0..MODES], rho(WIND_RHO), wind_std);
        ar_step(&mut v_coef, &innov[MODES..2 * MODES], rho(WIND_RHO), wind_std);
        ar_step(&mut t_coef, &innov[2 * MODES..3 * MODES], rho(FIELD_RHO), 4.0 * mode_std);
        ar_step(&mut p_coef, &innov[3 * MODES..4 * MODES], rho(FIELD_RHO), 8.0 * mode_std);
        ar_step(&mut cell_noise, &innov[4 * MODES..], rho(NOISE_RHO), config.noise_std);
        let u = basis.field(&u_coef, n);
        let v = basis.field(&v_coef, n);

        let slot = doy_slot(date) as f64;
        let season = (tau * (slot - PEAK_SLOT) / 366.0).cos();
        // Wider marginal zone during melt.
        let width = config.edge_width * (1.0 + 0.5 * (tau * (slot - 150.0) / 366.0).cos());
        let mut sic = vec![f32::NAN; n];
        let mut ice = vec![0.0f64; n];
        for j in 0..cols {
            let base = edge_mean + config.ice_edge_amplitude * season + meander[j];
            let probe = (base - drift[j]).round().clamp(0.0, (rows - 1) as f64) as usize;
            drift[j] = DRIFT_RHO * drift[j] + config.drift_gain * v[probe * cols + j];
            let e = base - drift[j];
            for i in 0..rows {
                let c = i * cols + j;
                let s = logistic(4.0 * (e - i as f64) / width);
                ice[c] = s;
                if !land_mask[c] {
                    let val = 100.0 * s + 4.0 * s * (1.0 - s) * cell_noise[c];
                    sic[c] = val.clamp(0.0, 100.0) as f32;
                }
            }
        }
        let t_season = -5.0 - 12.0 * (tau * (slot - 20.0) / 366.0).cos();
        let t_field = basis.field(&t_coef, n);
        let t2m = (0..n).map(|c| t_season + t_field[c] - 3.0 * ice[c]).collect();
        let p_field = basis.field(&p_coef, n);
        let msl = p_field.iter().map(|p| 1012.0 + p).collect();
        truth.push(Day { sic, t2m, msl, u, v });
    }

    let mut names: Vec<String> = [
        channels::SIC,
        channels::T2M,
        channels::MSL,
        channels::U10,
        channels::V10,
        channels::WIND,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for lead in 1..=MAX_LEAD {
        for var in channels::WEATHER {
            names.push(channels::forecast(var, lead));
        }
    }

    let mut stacks = Vec::with_capacity(days);
    for (t, day) in truth.iter().enumerate().take(days) {
        let date = start + Days::new(t as u64);
        let mut data: Vec<f32> = Vec::with_capacity(names.len() * n);
        data.extend_from_slice(&day.sic);
        let wind = wind_module(&day.u, &day.v);
        for f in [&day.t2m, &day.msl, &day.u, &day.v, &wind] {
            data.extend(f.iter().map(|&x| x as f32));
        }
        // Forecast noise uses a stream disjoint from the truth streams.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream((1u64 << 40) + t as u64);
        for lead in 1..=MAX_LEAD {
            let future = &truth[t + lead];
            let std = config.forecast_noise_std[lead - 1] * mode_std;
            let mut noisy = |field: &[f64]| -> Vec<f64> {
                let coef: Vec<f64> = normals(&mut rng, MODES).iter().map(|e| e * std).collect();
                let noise = basis.field(&coef, n);
                field.iter().zip(&noise).map(|(a, b)| a + b).collect()
            };
            let t2m = noisy(&future.t2m);
            let msl = noisy(&future.msl);
            let u = noisy(&future.u);
            let v = noisy(&future.v);
            let wind = wind_module(&u, &v);
            for f in [&t2m, &msl, &u, &v, &wind] {
                data.extend(f.iter().map(|&x| x as f32));
            }
        }
        stacks.push(GridStack::new(
            grid.name.clone(),
            date,
            names.clone(),
            rows,
            cols,
            data,
        )?);
    }
    Ok((grid, Catalog::from_stacks(stacks)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        let mut c = SynthConfig::new(seed, 2, 16, 8);
        c.start_year = Some(2018);
        c
    }

    #[test]
    fn shape_and_validity() {
        let (grid, cat) = generate(&small(1)).unwrap();
        assert_eq!(cat.len(), 730);
        assert_eq!(cat.channels().len(), 6 + 5 * MAX_LEAD);
        assert_eq!(grid.land_mask.iter().filter(|&&l| l).count(), 8);
        for s in cat.iter() {
            let sic = s.channel("sic").unwrap();
            for (c, v) in sic.iter().enumerate() {
                assert_eq!(v.is_nan(), grid.land_mask[c]);
                assert!(v.is_nan() || (0.0..=100.0).contains(v));
            }
            assert!(s.data[s.plane_len()..].iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn default_start_year_ends_in_2021() {
        let c = SynthConfig::new(0, 3, 4, 4);
        assert_eq!(c.first_year(), 2019);
    }

    #[test]
    fn zero_noise_cycle_repeats_each_year() {
        let mut c = small(3);
        c.noise_std = 0.0;
        c.drift_gain = 0.0;
        let (_, cat) = generate(&c).unwrap();
        for d in cat.dates().filter(|d| d.format("%Y").to_string() == "2018") {
            let next = d.with_year_checked(2019);
            let a = cat.get(d).unwrap().channel("sic").unwrap().to_vec();
            let b = cat.get(next).unwrap().channel("sic").unwrap().to_vec();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    trait WithYear {
        fn with_year_checked(self, y: i32) -> NaiveDate;
    }

    impl WithYear for NaiveDate {
        fn with_year_checked(self, y: i32) -> NaiveDate {
            use chrono::Datelike;
            self.with_year(y).unwrap()
        }
    }

    #[test]
    fn zero_forecast_noise_matches_future_truth() {
        let mut c = small(4);
        c.forecast_noise_std = [0.0; MAX_LEAD];
        let (_, cat) = generate(&c).unwrap();
        let d = NaiveDate::from_ymd_opt(2018, 6, 1).unwrap();
        let issue = cat.get(d).unwrap();
        for lead in 1..=MAX_LEAD {
            let valid = cat.get(d + Days::new(lead as u64)).unwrap();
            for var in channels::WEATHER {
                assert_eq!(issue.channel(&channels::forecast(var, lead)).unwrap(), valid.channel(var).unwrap());
            }
        }
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let (_, a) = generate(&small(7)).unwrap();
        let (_, b) = generate(&small(7)).unwrap();
        let (_, c) = generate(&small(8)).unwrap();
        let bits = |cat: &Catalog| cat.iter().flat_map(|s| s.data.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn config_kv_round_trip() {
        let mut c = SynthConfig::new(5, 3, 32, 24);
        c.forecast_noise_std = [0.1, 0.2, 0.3];
        let back = SynthConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back.start_year, Some(2019));
        assert_eq!(back.forecast_noise_std, c.forecast_noise_std);
        assert_eq!(back.rows, 32);
        let mut bad = c.to_kv();
        bad.insert("years".into(), "1".into());
        assert_eq!(SynthConfig::from_kv(&bad).unwrap_err().category(), "config");
    }
}
