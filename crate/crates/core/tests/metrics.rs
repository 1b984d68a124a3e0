use chrono::NaiveDate;
use proptest::prelude::*;
use seaice_core::metrics::{
    aggregate, correlation, improvement, metric, ActiveDomain, GroupBy, GroupKey, ImprovementMode, MetricKind,
    MetricValue, Threshold,
};
use seaice_core::preprocess::ChannelScaler;
use seaice_core::raster::Raster;

#[derive(Debug)]
struct Case {
    pred: Vec<f32>,
    gt: Vec<f32>,
    mask: Vec<bool>,
    areas: Vec<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    (
        prop::collection::vec(0f32..100.0, 64),
        prop::collection::vec(0f32..100.0, 64),
        prop::collection::vec(any::<bool>(), 64),
        prop::collection::vec(0.1f64..10.0, 64),
        0usize..64,
    )
        .prop_map(|(pred, gt, mut mask, areas, forced)| {
            mask[forced] = true;
            Case { pred, gt, mask, areas }
        })
}

/// Straightforward row/column loop in f64.
fn oracle(kind: MetricKind, c: &Case, c0: f32) -> f64 {
    let (mut acc, mut total) = (0.0f64, 0.0f64);
    for i in 0..8 {
        for j in 0..8 {
            let k = i * 8 + j;
            if !c.mask[k] {
                continue;
            }
            total += c.areas[k];
            let (p, g) = (c.pred[k] as f64, c.gt[k] as f64);
            acc += match kind {
                MetricKind::Mae => (p - g).abs() * c.areas[k],
                MetricKind::Rmse => (p - g) * (p - g) * c.areas[k],
                MetricKind::Iiee => {
                    if (c.pred[k] > c0) != (c.gt[k] > c0) {
                        c.areas[k]
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    match kind {
        MetricKind::Rmse => (acc / total).sqrt(),
        _ => acc / total,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_equal_the_naive_loop(c in case()) {
        let pred = Raster::new(8, 8, c.pred.clone()).unwrap();
        let gt = Raster::new(8, 8, c.gt.clone()).unwrap();
        let domain = ActiveDomain::new(c.mask.clone(), c.areas.clone()).unwrap();
        for kind in MetricKind::ALL {
            let got = metric(kind, &pred, &gt, &domain, Threshold::default()).unwrap();
            prop_assert_eq!(got.to_bits(), oracle(kind, &c, 15.0).to_bits(), "{}", kind);
        }
    }

    #[test]
    fn metrics_are_permutation_invariant(c in case(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..64).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let perm = |v: &[f32]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let domain = ActiveDomain::new(c.mask.clone(), c.areas.clone()).unwrap();
        let pdomain = ActiveDomain::new(
            order.iter().map(|&i| c.mask[i]).collect(),
            order.iter().map(|&i| c.areas[i]).collect(),
        ).unwrap();
        for kind in MetricKind::ALL {
            let a = metric(kind, &Raster::new(8, 8, c.pred.clone()).unwrap(), &Raster::new(8, 8, c.gt.clone()).unwrap(), &domain, Threshold::default()).unwrap();
            let b = metric(kind, &Raster::new(8, 8, perm(&c.pred)).unwrap(), &Raster::new(8, 8, perm(&c.gt)).unwrap(), &pdomain, Threshold::default()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            prop_assert!(a >= 0.0);
            if kind == MetricKind::Iiee {
                prop_assert!(a <= 1.0);
            }
        }
    }

    #[test]
    fn scaler_round_trip(values in prop::collection::vec(-1e4f32..1e4, 2..200), probe in -1e4f32..1e4) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let s = ChannelScaler::fit_values("x", values.clone()).unwrap();
        let back = s.invert_value(s.apply_value(probe));
        prop_assert!((back - probe).abs() <= 1e-3 * probe.abs().max(1.0));
        let z: Vec<f64> = values.iter().map(|&v| s.apply_value(v) as f64).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        prop_assert!(mean.abs() < 1e-3);
    }
}

#[test]
fn threshold_is_strict_and_empty_domain_fails() {
    let pred = Raster::new(1, 2, vec![15.0, 15.5]).unwrap();
    let gt = Raster::new(1, 2, vec![14.0, 16.0]).unwrap();
    let domain = ActiveDomain::new(vec![true, true], vec![1.0, 3.0]).unwrap();
    // 15 is water under the strict threshold: both cells agree.
    assert_eq!(metric(MetricKind::Iiee, &pred, &gt, &domain, Threshold::default()).unwrap(), 0.0);
    let none = ActiveDomain::new(vec![false, false], vec![1.0, 3.0]).unwrap();
    assert!(matches!(
        metric(MetricKind::Mae, &pred, &gt, &none, Threshold::default()),
        Err(seaice_core::Error::EmptyDomain)
    ));
}

#[test]
fn correlation_examples() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((correlation(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((correlation(&x, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
    // Hand-computed: sxy = 3.25, sxx = 5, syy = 3.6875.
    let r = correlation(&x, &[1.0, 3.0, 2.0, 3.5]).unwrap();
    assert!((r - 3.25 / (5.0f64 * 3.6875).sqrt()).abs() < 1e-12, "{r}");
    assert!(correlation(&x, &[5.0; 4]).is_err());
    assert!(correlation(&[1.0], &[2.0]).is_err());
}

#[test]
fn tables_and_improvement() {
    let d = |m| NaiveDate::from_ymd_opt(2021, m, 3).unwrap();
    let v = |value, lead_day, date| MetricValue { kind: MetricKind::Mae, value, lead_day, date };
    let model = vec![v(1.0, 1, d(1)), v(3.0, 1, d(2)), v(4.0, 2, d(1))];
    let base = vec![v(4.0, 1, d(1)), v(4.0, 1, d(2)), v(5.0, 2, d(1))];
    let by_lead = aggregate(&model, GroupBy::Lead).unwrap();
    assert_eq!(by_lead.get(GroupKey::Lead(1), MetricKind::Mae), Some(2.0));
    let imp = improvement(&by_lead, &aggregate(&base, GroupBy::Lead).unwrap(), ImprovementMode::RelativePercent).unwrap();
    assert_eq!(imp.get(GroupKey::Lead(1), MetricKind::Mae), Some(50.0));
    assert_eq!(imp.get(GroupKey::Lead(2), MetricKind::Mae), Some(20.0));
}
