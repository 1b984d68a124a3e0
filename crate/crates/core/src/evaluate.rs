//! Test-year evaluation, report tables, forecast maps and multi-run merging.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};

use crate::baselines::{baseline_forecast, BaselineKind};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, correlation, improvement, metric, miz_fraction, reported, ActiveDomain, GroupBy,
    ImprovementMode, MetricKind, MetricValue, Table, Threshold,
};
use crate::model::{prepare, ForecastModel, Regime};
use crate::preprocess::{Climatology, Preprocessor};
use crate::raster::Raster;
use crate::store::{window, Catalog, HistoryView};

/// Anything that turns the observed past into `D_out` SIC forecasts.
pub trait Forecaster {
    fn name(&self) -> String;
    /// Days of history needed, including the base date.
    fn history_len(&self) -> usize;
    fn forecast(&mut self, view: &HistoryView, d_out: usize) -> Result<Vec<Raster>>;
}

pub struct BaselineForecaster {
    pub kind: BaselineKind,
    pub climatology: Option<Climatology>,
}

impl Forecaster for BaselineForecaster {
    fn name(&self) -> String {
        self.kind.name()
    }

    fn history_len(&self) -> usize {
        self.kind.history_len()
    }

    fn forecast(&mut self, view: &HistoryView, d_out: usize) -> Result<Vec<Raster>> {
        let history = view.sic_history(self.kind.history_len())?;
        baseline_forecast(self.kind, &history, self.climatology.as_ref(), view.base_date(), d_out)
    }
}

pub struct ModelForecaster {
    pub model: ForecastModel,
    pub prep: Preprocessor,
    pub land: Vec<bool>,
}

impl Forecaster for ModelForecaster {
    fn name(&self) -> String {
        match self.model.spec.channels.regime {
            Regime::S => "unet_s".into(),
            Regime::R => "unet_r".into(),
        }
    }

    fn history_len(&self) -> usize {
        self.model.spec.channels.d_in
    }

    fn forecast(&mut self, view: &HistoryView, d_out: usize) -> Result<Vec<Raster>> {
        let cfg = self.model.spec.channels.clone();
        if d_out > cfg.d_out {
            return Err(Error::Config(format!(
                "model forecasts {} days, {d_out} requested",
                cfg.d_out
            )));
        }
        let sample = view.inputs(cfg.d_in, cfg.d_out)?;
        let prepared = prepare(&sample, &self.prep, &cfg, &self.land)?;
        let mut out = self.model.predict(&prepared)?;
        out.truncate(d_out);
        Ok(out)
    }
}

/// RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

pub const LAND_COLOR: [u8; 3] = [120, 96, 64];
pub const MISSING_COLOR: [u8; 3] = [0, 0, 0];
pub const EDGE_COLOR: [u8; 3] = [255, 255, 0];
pub const PACK_COLOR: [u8; 3] = [0, 200, 0];
/// Signed error at which the overlay saturates, SIC %.
pub const ERROR_SATURATION: f32 = 50.0;

/// Grayscale truth underlay with a red (over) / blue (under) error overlay
/// and marks where the truth crosses 15 % and 80 %.
pub fn render_forecast_map(forecast: &Raster, gt: &Raster, land: &[bool]) -> Result<Image> {
    forecast.same_extent(gt)?;
    if land.len() != gt.len() {
        return Err(Error::Shape("land mask extent differs from rasters".into()));
    }
    let (rows, cols) = (gt.rows, gt.cols);
    let class = |v: f32| -> Option<u8> {
        v.is_finite().then_some(if v > 80.0 {
            2
        } else if v > 15.0 {
            1
        } else {
            0
        })
    };
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if land[i] {
                pixels.push(LAND_COLOR);
                continue;
            }
            let g = gt.data[i];
            let Some(k) = class(g) else {
                pixels.push(MISSING_COLOR);
                continue;
            };
            let mut crossing = None;
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                    continue;
                }
                let j = nr as usize * cols + nc as usize;
                if land[j] {
                    continue;
                }
                if let Some(kn) = class(gt.data[j]) {
                    if kn != k {
                        // The higher side of a 0|1 boundary marks 15 %, of 1|2 marks 80 %.
                        crossing = Some(if k.max(kn) == 1 { EDGE_COLOR } else { PACK_COLOR });
                    }
                }
            }
            if let Some(color) = crossing {
                pixels.push(color);
                continue;
            }
            let base = 40.0 + 2.0 * g.clamp(0.0, 100.0);
            let f = forecast.data[i];
            let px = if f.is_finite() {
                let e = f - g;
                let t = 0.5 * (e.abs() / ERROR_SATURATION).min(1.0);
                let tint = if e > 0.0 { [255.0, 0.0, 0.0] } else { [0.0, 0.0, 255.0] };
                tint.map(|ch| (base * (1.0 - t) + ch * t).round() as u8)
            } else {
                [base.round() as u8; 3]
            };
            pixels.push(px);
        }
    }
    Ok(Image {
        width: cols,
        height: rows,
        pixels,
    })
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub d_out: usize,
    pub threshold: Threshold,
    /// Base dates whose forecasts are rendered as maps.
    pub render_dates: Vec<NaiveDate>,
}

impl EvalOptions {
    pub fn new(d_out: usize) -> Self {
        Self {
            d_out,
            threshold: Threshold::default(),
            render_dates: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub model: String,
    pub region: String,
    pub d_out: usize,
    pub values: Vec<MetricValue>,
    /// Persistence on the same dates and cells.
    pub persistence: Vec<MetricValue>,
    /// MIZ area fraction of the observed field on each base date.
    pub miz: Vec<(NaiveDate, f64)>,
    /// Base dates without a complete window.
    pub skipped: Vec<NaiveDate>,
    /// `(base date, record date)` reads of records after the base date.
    pub leaks: Vec<(NaiveDate, NaiveDate)>,
    /// `(file name, image)` for requested maps.
    pub images: Vec<(String, Image)>,
}

/// Evaluates `forecaster` on every base date of `catalog` whose history and
/// targets lie inside it. Cells count when the truth is finite, the cell is
/// sea and the base-date observation exists.
pub fn evaluate_model(
    forecaster: &mut dyn Forecaster,
    catalog: &Catalog,
    land: &[bool],
    areas: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (Some(first), Some(last)) = (catalog.first_date(), catalog.last_date()) else {
        return Err(Error::Precondition("evaluation catalog is empty".into()));
    };
    let d_in = forecaster.history_len().max(1);
    let mut report = EvalReport {
        model: forecaster.name(),
        region: catalog.region().to_string(),
        d_out: opts.d_out,
        values: Vec::new(),
        persistence: Vec::new(),
        miz: Vec::new(),
        skipped: Vec::new(),
        leaks: Vec::new(),
        images: Vec::new(),
    };
    let mut base = first + Days::new(d_in as u64 - 1);
    let stop = last - Days::new(opts.d_out as u64);
    while base <= stop {
        let sample = match window(catalog, base, d_in, opts.d_out) {
            Ok(s) => s,
            Err(Error::Gap(_)) => {
                report.skipped.push(base);
                base = base + Days::new(1);
                continue;
            }
            Err(e) => return Err(e),
        };
        let view = HistoryView::new(catalog, base);
        let preds = forecaster.forecast(&view, opts.d_out)?;
        report
            .leaks
            .extend(view.reads().into_iter().filter(|&d| d > base).map(|d| (base, d)));
        if preds.len() != opts.d_out {
            return Err(Error::IncompleteForecast(format!(
                "{} returned {} days for {base}",
                report.model,
                preds.len()
            )));
        }
        let observed = sample.last_sic()?;
        let base_domain = ActiveDomain::from_truth(&observed, land, areas)?;
        if base_domain.total > 0.0 {
            report.miz.push((base, miz_fraction(&observed, &base_domain)?));
        }
        for (d, (pred, gt)) in preds.iter().zip(&sample.target).enumerate() {
            let domain = ActiveDomain::from_truth(gt, land, areas)?.restrict_finite(&observed);
            if domain.total <= 0.0 {
                continue;
            }
            for kind in MetricKind::ALL {
                for (out, p) in [(&mut report.values, pred), (&mut report.persistence, &observed)] {
                    out.push(MetricValue {
                        kind,
                        value: metric(kind, p, gt, &domain, opts.threshold)?,
                        lead_day: d + 1,
                        date: base,
                    });
                }
            }
            if opts.render_dates.contains(&base) {
                report.images.push((
                    format!("{}_{}_{}.ppm", report.region, base, d + 1),
                    render_forecast_map(pred, gt, land)?,
                ));
            }
        }
        base = base + Days::new(1);
    }
    if report.values.is_empty() {
        return Err(Error::Precondition("no evaluable base dates in the catalog".into()));
    }
    Ok(report)
}

/// Per-month mean of a series keyed by date.
pub fn monthly_means(series: impl IntoIterator<Item = (NaiveDate, f64)>) -> BTreeMap<u32, f64> {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (d, v) in series {
        let e = acc.entry(d.month()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
}

impl EvalReport {
    pub fn table(&self, by: GroupBy) -> Result<Table> {
        aggregate(&self.values, by)
    }

    pub fn persistence_table(&self, by: GroupBy) -> Result<Table> {
        aggregate(&self.persistence, by)
    }

    /// Mean over all lead days and dates, in reporting units.
    pub fn mean(&self, kind: MetricKind) -> f64 {
        mean_of(&self.values, kind)
    }

    pub fn persistence_mean(&self, kind: MetricKind) -> f64 {
        mean_of(&self.persistence, kind)
    }

    /// Monthly mean of the lead-averaged model MAE.
    pub fn monthly_mae(&self) -> BTreeMap<u32, f64> {
        monthly_means(
            self.values
                .iter()
                .filter(|v| v.kind == MetricKind::Mae)
                .map(|v| (v.date, v.value)),
        )
    }

    pub fn monthly_miz(&self) -> BTreeMap<u32, f64> {
        monthly_means(self.miz.iter().copied())
    }

    /// Pearson correlation between monthly MAE and monthly MIZ fraction.
    pub fn mae_miz_correlation(&self) -> Result<f64> {
        let mae = self.monthly_mae();
        let miz = self.monthly_miz();
        let months: Vec<u32> = mae.keys().filter(|m| miz.contains_key(m)).copied().collect();
        let x: Vec<f64> = months.iter().map(|m| mae[m]).collect();
        let y: Vec<f64> = months.iter().map(|m| miz[m]).collect();
        correlation(&x, &y)
    }

    /// `date,lead_day,mae,rmse,iiee` for the model, in reporting units.
    pub fn per_date_csv(&self) -> String {
        per_date_csv(&self.values)
    }

    /// Writes all CSVs and requested maps into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("per_date.csv", self.per_date_csv().as_bytes())?;
        put("persistence_per_date.csv", per_date_csv(&self.persistence).as_bytes())?;
        put("by_lead.csv", self.table(GroupBy::Lead)?.to_csv().as_bytes())?;
        put("month_lead.csv", self.table(GroupBy::LeadMonth)?.to_csv().as_bytes())?;
        let imp = improvement(
            &self.table(GroupBy::LeadMonth)?,
            &self.persistence_table(GroupBy::LeadMonth)?,
            ImprovementMode::AbsolutePp,
        )?;
        put("improvement_month_lead.csv", imp.to_csv().as_bytes())?;

        let mae = self.monthly_mae();
        let mut s = String::from("month,miz_fraction,mae\n");
        for (m, miz) in self.monthly_miz() {
            let v = mae.get(&m).copied().unwrap_or(f64::NAN);
            let _ = writeln!(s, "{m},{miz:?},{v:?}");
        }
        put("miz_month.csv", s.as_bytes())?;
        put("summary.csv", self.summary_csv().as_bytes())?;
        for (name, img) in &self.images {
            put(name, &img.to_ppm())?;
        }
        Ok(())
    }

    /// Summary rows: model and persistence, 3-day-mean metrics.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("model,region,metric,value\n");
        let mut rows = vec![(self.model.as_str(), &self.values)];
        if self.model != "persistence" {
            rows.push(("persistence", &self.persistence));
        }
        for (name, vals) in rows {
            for kind in MetricKind::ALL {
                let _ = writeln!(s, "{name},{},{kind},{:?}", self.region, mean_of(vals, kind));
            }
        }
        let r = self.mae_miz_correlation().unwrap_or(f64::NAN);
        let _ = writeln!(s, "{},{},mae_miz_correlation,{r:?}", self.model, self.region);
        let _ = writeln!(s, "{},{},leaks,{}", self.model, self.region, self.leaks.len());
        let _ = writeln!(s, "{},{},skipped_dates,{}", self.model, self.region, self.skipped.len());
        s
    }
}

fn mean_of(values: &[MetricValue], kind: MetricKind) -> f64 {
    let (sum, n) = values
        .iter()
        .filter(|v| v.kind == kind)
        .fold((0.0, 0usize), |(s, n), v| (s + v.value, n + 1));
    reported(kind, sum / n as f64)
}

fn per_date_csv(values: &[MetricValue]) -> String {
    let mut rows: BTreeMap<(NaiveDate, usize), [f64; 3]> = BTreeMap::new();
    for v in values {
        let slot = MetricKind::ALL.iter().position(|k| *k == v.kind).expect("known kind");
        rows.entry((v.date, v.lead_day)).or_insert([f64::NAN; 3])[slot] = v.reported();
    }
    let mut s = String::from("date,lead_day,mae,rmse,iiee\n");
    for ((d, l), [a, b, c]) in rows {
        let _ = writeln!(s, "{d},{l},{a:?},{b:?},{c:?}");
    }
    s
}

/// Rebuilds metric values from a `per_date.csv` body (IIEE back to a fraction).
pub fn parse_per_date_csv(text: &str) -> Result<Vec<MetricValue>> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let bad = || Error::Format {
            field: "per_date.csv".into(),
            msg: format!("bad line `{line}`"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let date: NaiveDate = f[0].parse().map_err(|_| bad())?;
        let lead_day: usize = f[1].parse().map_err(|_| bad())?;
        for (kind, raw) in MetricKind::ALL.iter().zip(&f[2..]) {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            out.push(MetricValue {
                kind: *kind,
                value: if *kind == MetricKind::Iiee { v / 100.0 } else { v },
                lead_day,
                date,
            });
        }
    }
    Ok(out)
}

/// Mean and unbiased standard deviation of one summary entry across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedRow {
    pub model: String,
    pub region: String,
    pub metric: String,
    pub mean: f64,
    /// NaN with fewer than two runs.
    pub std: f64,
    pub runs: usize,
}

/// Merges several `summary.csv` bodies keyed by (model, region, metric).
pub fn merge_summaries(bodies: &[String]) -> Result<Vec<MergedRow>> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for body in bodies {
        for line in body.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format {
                field: "summary.csv".into(),
                msg: format!("bad line `{line}`"),
            };
            if f.len() != 4 {
                return Err(bad());
            }
            let v: f64 = f[3].parse().map_err(|_| bad())?;
            groups
                .entry((f[0].to_string(), f[1].to_string(), f[2].to_string()))
                .or_default()
                .push(v);
        }
    }
    if groups.is_empty() {
        return Err(Error::Precondition("no summary rows to merge".into()));
    }
    Ok(groups
        .into_iter()
        .map(|((model, region, metric), vals)| {
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                f64::NAN
            } else {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            MergedRow {
                model,
                region,
                metric,
                mean,
                std,
                runs: n,
            }
        })
        .collect())
}

pub fn merged_csv(rows: &[MergedRow]) -> String {
    let mut s = String::from("model,region,metric,mean,std,runs\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:?},{:?},{}", r.model, r.region, r.metric, r.mean, r.std, r.runs);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(data: Vec<f32>, cols: usize) -> Raster {
        Raster::new(data.len() / cols, cols, data).unwrap()
    }

    #[test]
    fn exact_forecast_has_neutral_overlay() {
        let gt = r(vec![50.0; 9], 3);
        let img = render_forecast_map(&gt, &gt, &[false; 9]).unwrap();
        for p in &img.pixels {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
    }

    #[test]
    fn uniform_over_forecast_is_uniformly_red() {
        let gt = r(vec![50.0; 4], 2);
        let f = r(vec![60.0; 4], 2);
        let img = render_forecast_map(&f, &gt, &[false; 4]).unwrap();
        let p0 = img.pixels[0];
        assert!(img.pixels.iter().all(|&p| p == p0));
        assert!(p0[0] > p0[1] && p0[1] == p0[2]);
        // 140 gray tinted 10 % toward pure red.
        assert_eq!(p0, [152, 126, 126]);
    }

    #[test]
    fn checkerboard_error_alternates_colors() {
        let (rows, cols) = (4, 5);
        let gt = Raster::filled(rows, cols, 50.0);
        let mut f = gt.clone();
        for i in 0..rows {
            for j in 0..cols {
                f.data[i * cols + j] = if (i + j) % 2 == 0 { 60.0 } else { 40.0 };
            }
        }
        let img = render_forecast_map(&f, &gt, &vec![false; rows * cols]).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                let p = img.pixel(i, j);
                if (i + j) % 2 == 0 {
                    assert!(p[0] > p[2], "red expected at {i},{j}");
                } else {
                    assert!(p[2] > p[0], "blue expected at {i},{j}");
                }
            }
        }
    }

    #[test]
    fn land_edges_and_shape_errors() {
        let gt = r(vec![0.0, 10.0, 50.0, 90.0, 90.0, f32::NAN], 6);
        let land = [false, false, false, false, false, true];
        let img = render_forecast_map(&gt, &gt, &land).unwrap();
        assert_eq!(img.pixel(0, 5), LAND_COLOR);
        assert_eq!(img.pixel(0, 1), EDGE_COLOR);
        assert_eq!(img.pixel(0, 2), PACK_COLOR);
        assert_eq!(img.pixel(0, 4), [220; 3]);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n6 1\n255\n"));
        assert_eq!(ppm.len(), 11 + 18);
        assert!(matches!(
            render_forecast_map(&r(vec![0.0; 4], 2), &r(vec![0.0; 4], 4), &[false; 4]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn merge_uses_unbiased_std() {
        let body = |v: f64| format!("model,region,metric,value\nunet_s,barents,mae,{v}\n");
        let rows = merge_summaries(&[body(1.0), body(2.0), body(3.0)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, 2.0);
        assert_eq!(rows[0].std, 1.0);
        assert_eq!(rows[0].runs, 3);
        assert!(merge_summaries(&[body(1.0)]).unwrap()[0].std.is_nan());
    }
}
