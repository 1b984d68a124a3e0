//! Reference forecasters: persistence, climatology and cell-wise trends.

use chrono::{Days, NaiveDate};

use crate::error::{Error, Result};
use crate::preprocess::{clip_sic_value, Climatology};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Persistence,
    Climatology,
    /// Least-squares polynomial of `degree` over the last `window` days.
    Trend { degree: usize, window: usize },
}

impl BaselineKind {
    pub fn trend(degree: usize, window: usize) -> Result<Self> {
        if degree > 3 {
            return Err(Error::Config(format!("trend degree {degree} exceeds 3")));
        }
        if window < degree + 1 {
            return Err(Error::Config(format!(
                "trend of degree {degree} needs a window of at least {} days",
                degree + 1
            )));
        }
        Ok(BaselineKind::Trend { degree, window })
    }

    /// Days of SIC history needed.
    pub fn history_len(&self) -> usize {
        match self {
            BaselineKind::Persistence => 1,
            BaselineKind::Climatology => 0,
            BaselineKind::Trend { window, .. } => *window,
        }
    }

    pub fn name(&self) -> String {
        match self {
            BaselineKind::Persistence => "persistence".into(),
            BaselineKind::Climatology => "climatology".into(),
            BaselineKind::Trend { degree, window } => format!("trend{degree}w{window}"),
        }
    }

    /// Parses `persistence`, `climatology`, `trend` (linear over 3 days) or
    /// `trend<k>w<w>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "persistence" => Ok(BaselineKind::Persistence),
            "climatology" => Ok(BaselineKind::Climatology),
            "trend" => Self::trend(1, 3),
            _ => {
                let body = s
                    .strip_prefix("trend")
                    .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))?;
                let (k, w) = body
                    .split_once('w')
                    .ok_or_else(|| Error::Config(format!("expected trend<k>w<w>, got `{s}`")))?;
                let parse = |v: &str| {
                    v.parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad trend spec `{s}`")))
                };
                Self::trend(parse(k)?, parse(w)?)
            }
        }
    }
}

/// Solves the small dense system `a·x = b` by Gaussian elimination with
/// partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Weights `c` with `Σ c_t·y_t` equal to the degree-`k` least-squares fit
/// over abscissae `t = −w+1..0` evaluated at `t = lead`.
pub fn trend_weights(degree: usize, window: usize, lead: usize) -> Vec<f64> {
    let ts: Vec<f64> = (0..window).map(|i| i as f64 - (window as f64 - 1.0)).collect();
    let p = degree + 1;
    let gram: Vec<Vec<f64>> = (0..p)
        .map(|r| (0..p).map(|c| ts.iter().map(|t| t.powi((r + c) as i32)).sum()).collect())
        .collect();
    let basis: Vec<f64> = (0..p).map(|r| (lead as f64).powi(r as i32)).collect();
    // By symmetry of the Gram matrix, c = X·G⁻¹·basis.
    let z = solve(gram, basis);
    ts.iter()
        .map(|t| (0..p).map(|r| z[r] * t.powi(r as i32)).sum())
        .collect()
}

/// Unclipped trend extrapolation of one series (oldest first).
pub fn trend_value(series: &[f64], degree: usize, lead: usize) -> f64 {
    trend_weights(degree, series.len(), lead)
        .iter()
        .zip(series)
        .map(|(c, y)| c * y)
        .sum()
}

/// Forecasts `d_out` SIC rasters for the days after `base_date`.
///
/// `history` holds past SIC rasters, oldest first, ending at `base_date`.
pub fn baseline_forecast(
    kind: BaselineKind,
    history: &[Raster],
    climatology: Option<&Climatology>,
    base_date: NaiveDate,
    d_out: usize,
) -> Result<Vec<Raster>> {
    if history.len() < kind.history_len() {
        return Err(Error::History(format!(
            "{} needs {} days of history, got {}",
            kind.name(),
            kind.history_len(),
            history.len()
        )));
    }
    match kind {
        BaselineKind::Persistence => {
            let last = history.last().expect("checked length");
            Ok(vec![last.clone(); d_out])
        }
        BaselineKind::Climatology => {
            let clim = climatology
                .ok_or_else(|| Error::State("climatology baseline needs a fitted climatology".into()))?;
            Ok((1..=d_out as u64)
                .map(|lead| clim.for_date(base_date + Days::new(lead)))
                .collect())
        }
        BaselineKind::Trend { degree, window } => {
            let recent = &history[history.len() - window..];
            let (rows, cols) = (recent[0].rows, recent[0].cols);
            for r in recent {
                if (r.rows, r.cols) != (rows, cols) {
                    return Err(Error::Shape("history rasters differ in extent".into()));
                }
            }
            (1..=d_out)
                .map(|lead| {
                    let w = trend_weights(degree, window, lead);
                    let data = (0..rows * cols)
                        .map(|c| {
                            let mut acc = 0.0f64;
                            for (wt, r) in w.iter().zip(recent) {
                                let v = r.data[c];
                                if !v.is_finite() {
                                    return f32::NAN;
                                }
                                acc += wt * v as f64;
                            }
                            clip_sic_value(acc as f32)
                        })
                        .collect();
                    Raster::new(rows, cols, data)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(vals: &[f32]) -> Vec<Raster> {
        vals.iter().map(|&v| Raster::filled(1, 1, v)).collect()
    }

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 10).unwrap()
    }

    #[test]
    fn persistence_repeats_last() {
        let out = baseline_forecast(BaselineKind::Persistence, &series(&[1.0, 42.0]), None, date(), 3).unwrap();
        assert_eq!(out, series(&[42.0, 42.0, 42.0]));
        assert_eq!(
            baseline_forecast(BaselineKind::Persistence, &[], None, date(), 3).unwrap_err().category(),
            "history"
        );
    }

    #[test]
    fn linear_trend() {
        let k = BaselineKind::trend(1, 3).unwrap();
        let out = baseline_forecast(k, &series(&[1.0, 2.0, 3.0]), None, date(), 2).unwrap();
        assert!((out[0].data[0] - 4.0).abs() < 1e-6);
        assert!((out[1].data[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn trend_zero_is_window_mean_and_clips() {
        let k = BaselineKind::trend(0, 4).unwrap();
        let out = baseline_forecast(k, &series(&[9.0, 1.0, 2.0, 3.0, 6.0]), None, date(), 2).unwrap();
        assert!(out.iter().all(|r| (r.data[0] - 3.0).abs() < 1e-6));
        let k = BaselineKind::trend(1, 2).unwrap();
        let out = baseline_forecast(k, &series(&[90.0, 99.0]), None, date(), 1).unwrap();
        assert_eq!(out[0].data[0], 100.0);
        let out = baseline_forecast(k, &series(&[3.0, f32::NAN]), None, date(), 1).unwrap();
        assert!(out[0].data[0].is_nan());
    }

    #[test]
    fn cubic_is_reproduced() {
        let p = |t: f64| 0.5 * t.powi(3) - 1.5 * t * t + 2.0 * t + 7.0;
        let ys: Vec<f64> = (-4..=0).map(|t| p(t as f64)).collect();
        for lead in 1..=3 {
            let f = trend_value(&ys, 3, lead);
            assert!((f - p(lead as f64)).abs() < 1e-6, "lead {lead}: {f}");
        }
    }

    #[test]
    fn climatology_requires_fit() {
        let e = baseline_forecast(BaselineKind::Climatology, &[], None, date(), 1).unwrap_err();
        assert_eq!(e.category(), "state");
    }

    #[test]
    fn kind_validation_and_parsing() {
        assert!(BaselineKind::trend(4, 9).is_err());
        assert!(BaselineKind::trend(2, 2).is_err());
        assert_eq!(BaselineKind::parse("trend").unwrap(), BaselineKind::Trend { degree: 1, window: 3 });
        assert_eq!(BaselineKind::parse("trend2w5").unwrap(), BaselineKind::Trend { degree: 2, window: 5 });
        assert_eq!(BaselineKind::parse(&BaselineKind::Persistence.name()).unwrap(), BaselineKind::Persistence);
        assert!(BaselineKind::parse("analog").is_err());
    }
}
