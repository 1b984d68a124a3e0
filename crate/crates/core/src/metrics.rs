//! Area-weighted verification metrics and their aggregation.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Cells over which metrics are evaluated, with their areas.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveDomain {
    pub mask: Vec<bool>,
    pub areas: Vec<f64>,
    pub total: f64,
}

impl ActiveDomain {
    pub fn new(mask: Vec<bool>, areas: Vec<f64>) -> Result<Self> {
        if mask.len() != areas.len() {
            return Err(Error::Shape(format!(
                "mask has {} cells, areas {}",
                mask.len(),
                areas.len()
            )));
        }
        let total = mask.iter().zip(&areas).filter(|(m, _)| **m).map(|(_, a)| a).sum();
        Ok(Self { mask, areas, total })
    }

    /// Sea cells where the ground truth is finite.
    pub fn from_truth(gt: &Raster, land: &[bool], areas: &[f64]) -> Result<Self> {
        if land.len() != gt.len() {
            return Err(Error::Shape("land mask extent differs from raster".into()));
        }
        let mask = gt.data.iter().zip(land).map(|(v, &l)| v.is_finite() && !l).collect();
        Self::new(mask, areas.to_vec())
    }

    /// Restricts the domain to cells where `r` is finite.
    pub fn restrict_finite(&self, r: &Raster) -> ActiveDomain {
        let mask = self.mask.iter().zip(&r.data).map(|(&m, v)| m && v.is_finite()).collect();
        Self::new(mask, self.areas.clone()).expect("same length")
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricKind {
    Mae,
    Rmse,
    Iiee,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Mae, MetricKind::Rmse, MetricKind::Iiee];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Mae => "MAE",
            MetricKind::Rmse => "RMSE",
            MetricKind::Iiee => "IIEE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ice/water binarization level; a cell is ice when SIC > c0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub c0: f32,
}

impl Default for Threshold {
    fn default() -> Self {
        Self { c0: 15.0 }
    }
}

impl Threshold {
    pub fn is_ice(&self, c: f32) -> bool {
        c > self.c0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub kind: MetricKind,
    /// SIC % for MAE and RMSE, area fraction for IIEE.
    pub value: f64,
    pub lead_day: usize,
    /// Forecast base date.
    pub date: NaiveDate,
}

impl MetricValue {
    /// Value in reporting units (IIEE in %).
    pub fn reported(&self) -> f64 {
        reported(self.kind, self.value)
    }
}

pub fn reported(kind: MetricKind, value: f64) -> f64 {
    match kind {
        MetricKind::Iiee => 100.0 * value,
        _ => value,
    }
}

/// Area-weighted MAE, RMSE or IIEE of `pred` against `gt` on `domain`.
pub fn metric(
    kind: MetricKind,
    pred: &Raster,
    gt: &Raster,
    domain: &ActiveDomain,
    threshold: Threshold,
) -> Result<f64> {
    pred.same_extent(gt)?;
    if domain.mask.len() != gt.len() {
        return Err(Error::Shape("domain extent differs from rasters".into()));
    }
    if !(domain.total > 0.0) {
        return Err(Error::EmptyDomain);
    }
    let mut acc = 0.0f64;
    for c in 0..gt.len() {
        if !domain.mask[c] {
            continue;
        }
        let (p, g) = (pred.data[c], gt.data[c]);
        if !p.is_finite() {
            return Err(Error::IncompleteForecast(format!("missing prediction at cell {c}")));
        }
        if !g.is_finite() {
            return Err(Error::Shape(format!("domain includes missing truth at cell {c}")));
        }
        let ds = domain.areas[c];
        acc += match kind {
            MetricKind::Mae => (p as f64 - g as f64).abs() * ds,
            MetricKind::Rmse => {
                let d = p as f64 - g as f64;
                d * d * ds
            }
            MetricKind::Iiee => {
                if threshold.is_ice(p) != threshold.is_ice(g) {
                    ds
                } else {
                    0.0
                }
            }
        };
    }
    let mean = acc / domain.total;
    Ok(match kind {
        MetricKind::Rmse => mean.sqrt(),
        _ => mean,
    })
}

/// Area fraction of domain cells in the marginal ice zone (15 ≤ SIC ≤ 80).
pub fn miz_fraction(sic: &Raster, domain: &ActiveDomain) -> Result<f64> {
    if !(domain.total > 0.0) {
        return Err(Error::EmptyDomain);
    }
    let miz: f64 = (0..sic.len())
        .filter(|&c| domain.mask[c] && (15.0..=80.0).contains(&sic.data[c]))
        .map(|c| domain.areas[c])
        .sum();
    Ok(miz / domain.total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    Lead,
    Month,
    LeadMonth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKey {
    Lead(usize),
    Month(u32),
    MonthLead(u32, usize),
}

impl GroupKey {
    pub fn of(by: GroupBy, v: &MetricValue) -> Self {
        match by {
            GroupBy::Lead => GroupKey::Lead(v.lead_day),
            GroupBy::Month => GroupKey::Month(v.date.month()),
            GroupBy::LeadMonth => GroupKey::MonthLead(v.date.month(), v.lead_day),
        }
    }

    pub fn csv_header(by: GroupBy) -> &'static str {
        match by {
            GroupBy::Lead => "lead_day",
            GroupBy::Month => "month",
            GroupBy::LeadMonth => "month,lead_day",
        }
    }

    pub fn csv_fields(&self) -> String {
        match self {
            GroupKey::Lead(l) => l.to_string(),
            GroupKey::Month(m) => m.to_string(),
            GroupKey::MonthLead(m, l) => format!("{m},{l}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub value: f64,
    pub count: usize,
}

/// Metric values keyed by group and metric, in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub by: GroupBy,
    pub cells: BTreeMap<(GroupKey, MetricKind), Cell>,
}

impl Table {
    pub fn get(&self, key: GroupKey, kind: MetricKind) -> Option<f64> {
        self.cells.get(&(key, kind)).map(|c| c.value)
    }

    /// `group…,metric,value,count` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},metric,value,count\n", GroupKey::csv_header(self.by));
        for ((k, m), c) in &self.cells {
            s.push_str(&format!("{},{},{:?},{}\n", k.csv_fields(), m, c.value, c.count));
        }
        s
    }
}

/// Arithmetic mean of raw metric values within each group.
pub fn aggregate(values: &[MetricValue], by: GroupBy) -> Result<Table> {
    if values.is_empty() {
        return Err(Error::Precondition("nothing to aggregate".into()));
    }
    let mut sums: BTreeMap<(GroupKey, MetricKind), (f64, usize)> = BTreeMap::new();
    for v in values {
        let e = sums.entry((GroupKey::of(by, v), v.kind)).or_default();
        e.0 += v.value;
        e.1 += 1;
    }
    Ok(Table {
        by,
        cells: sums
            .into_iter()
            .map(|(k, (s, n))| (k, Cell { value: s / n as f64, count: n }))
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImprovementMode {
    AbsolutePp,
    RelativePercent,
}

/// Baseline minus model, in absolute units or percent of the baseline.
pub fn improvement_value(model: f64, baseline: f64, mode: ImprovementMode) -> Result<f64> {
    match mode {
        ImprovementMode::AbsolutePp => Ok(baseline - model),
        ImprovementMode::RelativePercent => {
            if baseline == 0.0 {
                Err(Error::UndefinedRatio("baseline value is 0".into()))
            } else {
                Ok(100.0 * (baseline - model) / baseline)
            }
        }
    }
}

pub fn improvement(model: &Table, baseline: &Table, mode: ImprovementMode) -> Result<Table> {
    if model.by != baseline.by || model.cells.len() != baseline.cells.len() {
        return Err(Error::Precondition("model and baseline tables have different groups".into()));
    }
    let mut cells = BTreeMap::new();
    for (key, m) in &model.cells {
        let b = baseline
            .cells
            .get(key)
            .ok_or_else(|| Error::Precondition(format!("baseline lacks group {key:?}")))?;
        cells.insert(
            *key,
            Cell {
                value: improvement_value(m.value, b.value, mode)?,
                count: m.count,
            },
        );
    }
    Ok(Table { by: model.by, cells })
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Precondition(format!(
            "correlation needs two equal series of length ≥ 2 (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: &[f32]) -> Raster {
        Raster::new(2, 2, v.to_vec()).unwrap()
    }

    fn dom(gt: &Raster) -> ActiveDomain {
        ActiveDomain::from_truth(gt, &[false; 4], &[1.0; 4]).unwrap()
    }

    #[test]
    fn hand_evaluated_example() {
        let gt = r(&[0.0, 100.0, 50.0, f32::NAN]);
        let pred = r(&[10.0, 80.0, 50.0, f32::NAN]);
        let d = dom(&gt);
        assert_eq!(d.count(), 3);
        let t = Threshold::default();
        assert!((metric(MetricKind::Mae, &pred, &gt, &d, t).unwrap() - 10.0).abs() < 1e-12);
        let rmse = metric(MetricKind::Rmse, &pred, &gt, &d, t).unwrap();
        assert!((rmse - (500.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((rmse - 12.91).abs() < 5e-3);
        assert_eq!(metric(MetricKind::Iiee, &pred, &gt, &d, t).unwrap(), 0.0);
        let flipped = r(&[20.0, 80.0, 50.0, f32::NAN]);
        assert!((metric(MetricKind::Iiee, &flipped, &gt, &d, t).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_strict() {
        let gt = r(&[15.0, 15.0, 15.0, 15.0]);
        let pred = r(&[15.0, 15.0, 15.0, 15.5]);
        let v = metric(MetricKind::Iiee, &pred, &gt, &dom(&gt), Threshold::default()).unwrap();
        assert_eq!(v, 0.25);
    }

    #[test]
    fn errors() {
        let gt = r(&[1.0; 4]);
        let pred = r(&[1.0, f32::NAN, 1.0, 1.0]);
        let t = Threshold::default();
        assert_eq!(metric(MetricKind::Mae, &pred, &gt, &dom(&gt), t).unwrap_err().category(), "incomplete-forecast");
        let empty = ActiveDomain::new(vec![false; 4], vec![1.0; 4]).unwrap();
        assert_eq!(metric(MetricKind::Mae, &gt, &gt, &empty, t).unwrap_err().category(), "empty-domain");
    }

    #[test]
    fn miz() {
        let d = dom(&r(&[0.0; 4]));
        assert_eq!(miz_fraction(&r(&[50.0; 4]), &d).unwrap(), 1.0);
        assert_eq!(miz_fraction(&r(&[0.0; 4]), &d).unwrap(), 0.0);
        assert_eq!(miz_fraction(&r(&[50.0, 0.0, 50.0, 0.0]), &d).unwrap(), 0.5);
        assert_eq!(miz_fraction(&r(&[15.0, 80.0, 14.9, 80.1]), &d).unwrap(), 0.5);
    }

    fn mv(value: f64, lead: usize, m: u32, d: u32) -> MetricValue {
        MetricValue {
            kind: MetricKind::Mae,
            value,
            lead_day: lead,
            date: NaiveDate::from_ymd_opt(2021, m, d).unwrap(),
        }
    }

    #[test]
    fn aggregation() {
        let t = aggregate(&[mv(2.0, 1, 1, 1)], GroupBy::Lead).unwrap();
        assert_eq!(t.get(GroupKey::Lead(1), MetricKind::Mae), Some(2.0));
        let t = aggregate(&[mv(2.0, 1, 1, 1), mv(4.0, 1, 1, 2)], GroupBy::Lead).unwrap();
        assert_eq!(t.get(GroupKey::Lead(1), MetricKind::Mae), Some(3.0));
        assert!(aggregate(&[], GroupBy::Lead).is_err());

        let mut vals = Vec::new();
        for m in 1..=3 {
            for d in 1..=10 {
                for l in 1..=3 {
                    vals.push(mv((m * 7 + d * 3 + l as u32) as f64 * 0.1, l, m, d));
                }
            }
        }
        let grid = aggregate(&vals, GroupBy::LeadMonth).unwrap();
        assert_eq!(grid.cells.len(), 9);
        let grand: f64 = grid.cells.values().map(|c| c.value).sum::<f64>() / 9.0;
        let flat: f64 = vals.iter().map(|v| v.value).sum::<f64>() / vals.len() as f64;
        assert!((grand - flat).abs() < 1e-12);
        let keys: Vec<_> = grid.cells.keys().map(|k| k.0).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn improvement_modes() {
        assert!((improvement_value(1.73, 2.67, ImprovementMode::AbsolutePp).unwrap() - 0.94).abs() < 1e-12);
        let rel = improvement_value(1.73, 2.67, ImprovementMode::RelativePercent).unwrap();
        assert!((rel - 35.2).abs() < 0.05, "{rel}");
        assert_eq!(improvement_value(2.0, 2.0, ImprovementMode::AbsolutePp).unwrap(), 0.0);
        assert_eq!(improvement_value(2.0, 2.0, ImprovementMode::RelativePercent).unwrap(), 0.0);
        assert_eq!(
            improvement_value(1.0, 0.0, ImprovementMode::RelativePercent).unwrap_err().category(),
            "undefined-ratio"
        );
        let a = aggregate(&[mv(1.0, 1, 1, 1)], GroupBy::Lead).unwrap();
        let b = aggregate(&[mv(1.0, 2, 1, 1)], GroupBy::Lead).unwrap();
        assert!(improvement(&a, &b, ImprovementMode::AbsolutePp).is_err());
    }

    #[test]
    fn pearson() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((correlation(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlation(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(correlation(&x, &[1.0; 10]).unwrap_err().category(), "undefined-correlation");
    }
}
