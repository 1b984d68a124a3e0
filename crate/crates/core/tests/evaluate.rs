use chrono::{Datelike, Days, NaiveDate};
use seaice_core::baselines::BaselineKind;
use seaice_core::evaluate::{evaluate_model, parse_per_date_csv, BaselineForecaster, EvalOptions, Forecaster, ModelForecaster};
use seaice_core::metrics::{aggregate, GroupBy, GroupKey, MetricKind};
use seaice_core::model::{ChannelConfig, ForecastModel, ModelSpec, Regime};
use seaice_core::preprocess::{compute_climatology, doy_slot, Preprocessor};
use seaice_core::raster::Raster;
use seaice_core::store::{split_by_years, Catalog, GridStack, HistoryView, SplitYears};
use seaice_core::synth::{generate, SynthConfig};

fn quiet(seed: u64, rows: usize, cols: usize) -> SynthConfig {
    let mut c = SynthConfig::new(seed, 3, rows, cols);
    c.noise_std = 0.0;
    c.drift_gain = 0.0;
    c
}

fn baseline(kind: BaselineKind) -> BaselineForecaster {
    BaselineForecaster { kind, climatology: None }
}

#[test]
fn persistence_lead_one_equals_mean_daily_change() {
    let (grid, cat) = generate(&quiet(5, 12, 10)).unwrap();
    let test = split_by_years(&cat, SplitYears::default()).test;
    let report = evaluate_model(
        &mut baseline(BaselineKind::Persistence),
        &test,
        &grid.land_mask,
        &grid.cell_area_m2,
        &EvalOptions::new(1),
    )
    .unwrap();

    let dates: Vec<NaiveDate> = test.dates().collect();
    let mut total = 0.0f64;
    for w in dates.windows(2) {
        let a = test.get(w[0]).unwrap().channel("sic").unwrap();
        let b = test.get(w[1]).unwrap().channel("sic").unwrap();
        let (mut s, mut n) = (0.0f64, 0usize);
        for c in 0..a.len() {
            if !grid.land_mask[c] {
                s += (b[c] as f64 - a[c] as f64).abs();
                n += 1;
            }
        }
        total += s / n as f64;
    }
    let oracle = total / (dates.len() - 1) as f64;
    let got = report.mean(MetricKind::Mae);
    assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    assert!(oracle > 0.0);
}

/// Reads future truth straight from the catalog.
struct Oracle<'a>(&'a Catalog);

impl Forecaster for Oracle<'_> {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn history_len(&self) -> usize {
        1
    }
    fn forecast(&mut self, view: &HistoryView, d_out: usize) -> seaice_core::Result<Vec<Raster>> {
        (1..=d_out as u64)
            .map(|k| self.0.get(view.base_date() + Days::new(k)).unwrap().raster("sic"))
            .collect()
    }
}

/// Peeks at the day after the base date through the audited view.
struct Cheat;

impl Forecaster for Cheat {
    fn name(&self) -> String {
        "cheat".into()
    }
    fn history_len(&self) -> usize {
        1
    }
    fn forecast(&mut self, view: &HistoryView, d_out: usize) -> seaice_core::Result<Vec<Raster>> {
        let next = view.get(view.base_date() + Days::new(1)).unwrap().raster("sic")?;
        Ok(vec![next; d_out])
    }
}

#[test]
fn perfect_forecasts_score_zero() {
    let (grid, cat) = generate(&SynthConfig::new(6, 3, 8, 8)).unwrap();
    let test = split_by_years(&cat, SplitYears::default()).test;
    let r = evaluate_model(&mut Oracle(&test), &test, &grid.land_mask, &grid.cell_area_m2, &EvalOptions::new(3)).unwrap();
    for kind in MetricKind::ALL {
        assert_eq!(r.mean(kind), 0.0, "{kind}");
    }
    assert!(r.persistence_mean(MetricKind::Mae) > 0.0);
}

#[test]
fn climatology_of_a_linear_cycle_is_exact() {
    // SIC rises linearly with the day-of-year slot and repeats every year, so
    // the 3-day window mean equals the centre day away from the year ends.
    let (rows, cols) = (4, 5);
    let mut stacks = Vec::new();
    let mut d = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    while d.year() < 2022 {
        let slot = doy_slot(d) as f32;
        let data = (0..rows * cols).map(|c| 10.0 + 0.2 * slot + c as f32).collect();
        stacks.push(GridStack::new("r", d, vec!["sic".into()], rows, cols, data).unwrap());
        d = d + Days::new(1);
    }
    let cat = Catalog::from_stacks(stacks).unwrap();
    let s = split_by_years(&cat, SplitYears::default());
    let clim = compute_climatology(&s.train, "sic").unwrap();
    let test = s.test.filter(|d| (4..=11).contains(&d.month()));
    let land = vec![false; rows * cols];
    let areas = vec![1.0; rows * cols];
    let mut f = BaselineForecaster { kind: BaselineKind::Climatology, climatology: Some(clim) };
    let r = evaluate_model(&mut f, &test, &land, &areas, &EvalOptions::new(3)).unwrap();
    let by_lead = r.table(GroupBy::Lead).unwrap();
    for lead in 1..=3 {
        let mae = by_lead.get(GroupKey::Lead(lead), MetricKind::Mae).unwrap();
        assert!(mae < 1e-4, "lead {lead}: {mae}");
    }
}

#[test]
fn evaluation_never_reads_past_the_base_date() {
    let (grid, cat) = generate(&SynthConfig::new(7, 3, 16, 16)).unwrap();
    let s = split_by_years(&cat, SplitYears::default());
    let prep = Preprocessor::fit(&s.train, true).unwrap();
    let clim = compute_climatology(&s.train, "sic").unwrap();
    let cfg = ChannelConfig::new(7, 3, Regime::R, true).unwrap();
    let model = ForecastModel::new(ModelSpec::new(cfg, 2, 4, true), &prep, 1).unwrap();
    let mut forecasters: Vec<Box<dyn Forecaster>> = vec![
        Box::new(baseline(BaselineKind::Persistence)),
        Box::new(BaselineForecaster { kind: BaselineKind::Climatology, climatology: Some(clim) }),
        Box::new(baseline(BaselineKind::trend(2, 5).unwrap())),
        Box::new(ModelForecaster { model, prep, land: grid.land_mask.clone() }),
    ];
    let test = s.test.filter(|d| d.month() == 3);
    for f in forecasters.iter_mut() {
        let r = evaluate_model(f.as_mut(), &test, &grid.land_mask, &grid.cell_area_m2, &EvalOptions::new(3)).unwrap();
        assert!(r.leaks.is_empty(), "{}: {:?}", r.model, &r.leaks[..r.leaks.len().min(3)]);
        assert!(!r.values.is_empty());
    }
    let r = evaluate_model(&mut Cheat, &test, &grid.land_mask, &grid.cell_area_m2, &EvalOptions::new(1)).unwrap();
    assert_eq!(r.leaks.len(), r.values.len() / 3);
}

#[test]
fn per_date_rows_rebuild_the_tables() {
    let (grid, cat) = generate(&SynthConfig::new(8, 3, 12, 12)).unwrap();
    let test = split_by_years(&cat, SplitYears::default()).test;
    let dir = tempfile::tempdir().unwrap();
    let mut opts = EvalOptions::new(3);
    opts.render_dates = vec![NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()];
    let r = evaluate_model(&mut baseline(BaselineKind::trend(1, 3).unwrap()), &test, &grid.land_mask, &grid.cell_area_m2, &opts)
        .unwrap();
    r.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("per_date.csv")).unwrap();
    let back = parse_per_date_csv(&text).unwrap();
    assert_eq!(back.len(), r.values.len());
    for by in [GroupBy::Lead, GroupBy::Month, GroupBy::LeadMonth] {
        let a = aggregate(&back, by).unwrap();
        let b = r.table(by).unwrap();
        assert_eq!(a.cells.len(), b.cells.len());
        for (k, cell) in &b.cells {
            let v = a.cells[k].value;
            assert!((v - cell.value).abs() <= 1e-12 * cell.value.abs().max(1.0), "{k:?}");
            assert_eq!(a.cells[k].count, cell.count);
        }
    }
    for name in ["summary.csv", "by_lead.csv", "month_lead.csv", "miz_month.csv", "barents_2021-03-01_3.ppm"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("trend1w3,barents,MAE,"));
    assert!(summary.contains("persistence,barents,MAE,"));
}

#[test]
fn persistence_error_tracks_the_marginal_zone() {
    let (grid, cat) = generate(&SynthConfig::new(0, 3, 32, 32)).unwrap();
    let test = split_by_years(&cat, SplitYears::default()).test;
    let r = evaluate_model(
        &mut baseline(BaselineKind::Persistence),
        &test,
        &grid.land_mask,
        &grid.cell_area_m2,
        &EvalOptions::new(3),
    )
    .unwrap();
    assert_eq!(r.monthly_mae().len(), 12);
    let corr = r.mae_miz_correlation().unwrap();
    assert!(corr > 0.6, "{corr}");
}
