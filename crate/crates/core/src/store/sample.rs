use std::cell::RefCell;
use std::sync::Arc;

use chrono::{Days, NaiveDate};

use super::catalog::Catalog;
use super::channels;
use super::sigs::GridStack;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Mean of two passes, using whichever is finite when one is missing.
pub fn daily_composite(ascending: &Raster, descending: &Raster) -> Result<Raster> {
    ascending.same_extent(descending)?;
    let data = ascending
        .data
        .iter()
        .zip(&descending.data)
        .map(|(&a, &d)| match (a.is_finite(), d.is_finite()) {
            (true, true) => ((a as f64 + d as f64) / 2.0) as f32,
            (true, false) => a,
            (false, true) => d,
            (false, false) => f32::NAN,
        })
        .collect();
    Raster::new(ascending.rows, ascending.cols, data)
}

/// One training or evaluation item.
#[derive(Clone, Debug)]
pub struct Sample {
    /// Last observed day.
    pub base_date: NaiveDate,
    /// `D_in` records ending at `base_date`, oldest first.
    pub past: Vec<Arc<GridStack>>,
    /// Forecasts issued on `base_date` for lead days `1..=D_out`, one stack per
    /// lead, dated at the valid day and keyed by plain variable name.
    pub future_aux: Vec<GridStack>,
    /// Observed SIC for lead days `1..=D_out` (empty when unobserved).
    pub target: Vec<Raster>,
    /// Finite-target cells per lead day.
    pub active_mask: Vec<Vec<bool>>,
}

impl Sample {
    pub fn d_in(&self) -> usize {
        self.past.len()
    }

    pub fn d_out(&self) -> usize {
        self.future_aux.len()
    }

    pub fn extent(&self) -> (usize, usize) {
        self.past.first().map(|s| (s.rows, s.cols)).unwrap_or((0, 0))
    }

    pub fn last_sic(&self) -> Result<Raster> {
        self.past
            .last()
            .ok_or_else(|| Error::History("empty history".into()))?
            .raster(channels::SIC)
    }

    pub fn recompute_mask(&mut self) {
        self.active_mask = self
            .target
            .iter()
            .map(|t| t.data.iter().map(|v| v.is_finite()).collect())
            .collect();
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        let first = self.base_date - Days::new(self.d_in() as u64 - 1);
        (0..(self.d_in() + self.d_out()) as u64)
            .map(|k| first + Days::new(k))
            .collect()
    }
}

fn shift(date: NaiveDate, delta: i64) -> NaiveDate {
    if delta >= 0 {
        date + Days::new(delta as u64)
    } else {
        date - Days::new((-delta) as u64)
    }
}

/// Splits the forecast channels of an issue-day record into per-lead stacks.
fn forecasts_from(issue: &GridStack, d_out: usize) -> Result<Vec<GridStack>> {
    (1..=d_out)
        .map(|lead| {
            let suffix = format!("_f{lead}");
            let mut names = Vec::new();
            let mut data = Vec::new();
            for (i, name) in issue.channels.iter().enumerate() {
                if let Some(var) = name.strip_suffix(&suffix) {
                    names.push(var.to_string());
                    data.extend_from_slice(issue.plane(i));
                }
            }
            GridStack::new(
                issue.region.clone(),
                shift(issue.date, lead as i64),
                names,
                issue.rows,
                issue.cols,
                data,
            )
        })
        .collect()
}

fn assemble(
    get: impl Fn(NaiveDate) -> Option<Arc<GridStack>>,
    base_date: NaiveDate,
    d_in: usize,
    d_out: usize,
    with_target: bool,
) -> Result<Sample> {
    if d_in == 0 {
        return Err(Error::Config("D_in must be at least 1".into()));
    }
    let mut missing = Vec::new();
    let mut past = Vec::with_capacity(d_in);
    for k in (0..d_in as i64).rev() {
        let d = shift(base_date, -k);
        match get(d) {
            Some(s) => past.push(s),
            None => missing.push(d),
        }
    }
    let mut target = Vec::new();
    if with_target {
        for lead in 1..=d_out as i64 {
            let d = shift(base_date, lead);
            match get(d) {
                Some(s) => target.push(s.raster(channels::SIC)?),
                None => missing.push(d),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Gap(missing));
    }
    let future_aux = forecasts_from(past.last().expect("d_in ≥ 1"), d_out)?;
    let mut s = Sample {
        base_date,
        past,
        future_aux,
        target,
        active_mask: Vec::new(),
    };
    s.recompute_mask();
    Ok(s)
}

/// Builds the sample whose last observed day is `base_date`.
pub fn window(catalog: &Catalog, base_date: NaiveDate, d_in: usize, d_out: usize) -> Result<Sample> {
    assemble(|d| catalog.get(d).cloned(), base_date, d_in, d_out, true)
}

/// All samples of a catalog, plus base dates skipped because of gaps.
#[derive(Clone, Debug, Default)]
pub struct WindowSet {
    pub samples: Vec<Sample>,
    pub skipped: Vec<NaiveDate>,
}

/// Enumerates every base date whose full window could fit inside the
/// catalog's date range. A window must lie entirely within the catalog, so
/// windowing a split catalog never crosses split boundaries.
pub fn windows(catalog: &Catalog, d_in: usize, d_out: usize) -> Result<WindowSet> {
    let mut out = WindowSet::default();
    let (Some(first), Some(last)) = (catalog.first_date(), catalog.last_date()) else {
        return Ok(out);
    };
    let mut base = shift(first, d_in as i64 - 1);
    let stop = shift(last, -(d_out as i64));
    while base <= stop {
        match window(catalog, base, d_in, d_out) {
            Ok(s) => out.samples.push(s),
            Err(Error::Gap(_)) => out.skipped.push(base),
            Err(e) => return Err(e),
        }
        base = shift(base, 1);
    }
    Ok(out)
}

/// Read-only catalog access for a forecaster at a fixed base date. Every
/// record read is logged so evaluation can audit for leakage.
pub struct HistoryView<'a> {
    catalog: &'a Catalog,
    base_date: NaiveDate,
    reads: RefCell<Vec<NaiveDate>>,
}

impl<'a> HistoryView<'a> {
    pub fn new(catalog: &'a Catalog, base_date: NaiveDate) -> Self {
        Self {
            catalog,
            base_date,
            reads: RefCell::new(Vec::new()),
        }
    }

    pub fn base_date(&self) -> NaiveDate {
        self.base_date
    }

    pub fn get(&self, date: NaiveDate) -> Option<Arc<GridStack>> {
        self.reads.borrow_mut().push(date);
        self.catalog.get(date).cloned()
    }

    /// Past records and issued forecasts for a `D_in`/`D_out` window; the
    /// target is left empty.
    pub fn inputs(&self, d_in: usize, d_out: usize) -> Result<Sample> {
        assemble(|d| self.get(d), self.base_date, d_in, d_out, false)
    }

    /// The last `n` SIC rasters ending at the base date, oldest first.
    pub fn sic_history(&self, n: usize) -> Result<Vec<Raster>> {
        let mut out = Vec::with_capacity(n);
        let mut missing = Vec::new();
        for k in (0..n as i64).rev() {
            let d = shift(self.base_date, -k);
            match self.get(d) {
                Some(s) => out.push(s.raster(channels::SIC)?),
                None => missing.push(d),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Gap(missing));
        }
        Ok(out)
    }

    pub fn reads(&self) -> Vec<NaiveDate> {
        self.reads.borrow().clone()
    }
}
