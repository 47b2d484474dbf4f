use prc::cox::LambdaChoice;
use prc::data::{ItemMap, LongitudinalDataset, LongitudinalRow, Study, SubjectId, SurvivalDataset, SurvivalRecord};
use prc::metrics::MetricRequest;
use prc::pipeline::{fit_prc, AgePolicy, PipelineConfig, PrcModel, Variant, AGE_COLUMN};
use prc::simulation::{generate_study, Design, ScenarioSpec};
use std::time::Instant;

fn study(id: u32, n: usize, design: Design, seed: u64) -> Study {
    let spec = ScenarioSpec::scenario(id, n, design).unwrap();
    generate_study(&spec, seed).unwrap().study
}

fn config(variant: Variant) -> PipelineConfig {
    let mut c = PipelineConfig {
        variant,
        ..Default::default()
    };
    c.penalty.seed = 3;
    c
}

#[test]
fn mlpmm_shared_effects_give_two_columns_per_process() {
    let s = study(7, 150, Design::Few, 1);
    let m = fit_prc(&s, &config(Variant::PrcMlpmmU)).unwrap();
    assert_eq!(m.n_predictors(), 20);
    assert!(!m.include_age);
    assert!(m.cox.columns.iter().all(|c| c.starts_with('P')));
}

#[test]
fn mlpmm_with_item_intercepts_adds_one_column_per_item() {
    let s = study(7, 150, Design::Few, 1);
    let m = fit_prc(&s, &config(Variant::PrcMlpmmUb)).unwrap();
    assert_eq!(m.n_predictors(), 20 + 30);
}

#[test]
fn baseline_comparator_has_one_column_per_item() {
    let s = study(7, 150, Design::Few, 1);
    let m = fit_prc(&s, &config(Variant::BaselinePcox)).unwrap();
    assert_eq!(m.n_predictors(), 30);
    assert!(m.mixed.is_none());
    let d = m.design(&s).unwrap();
    for i in [0, 17, 149] {
        let visits = s.longitudinal.visits(i);
        for q in 0..30 {
            if let Some(y) = visits.value(0, q) {
                assert_eq!(d.x.columns[q][i], y);
            }
        }
    }
}

#[test]
fn baseline_comparator_fills_missing_items_with_training_mean() {
    let map = ItemMap::identity(&["a", "b"]).unwrap();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for i in 0..40 {
        let id = SubjectId::new(format!("s{i:02}")).unwrap();
        let b = if i % 4 == 0 { None } else { Some(i as f64) };
        rows.push(LongitudinalRow { subject: id.clone(), age: 50.0, values: vec![Some((i % 7) as f64), b] });
        rows.push(LongitudinalRow { subject: id.clone(), age: 51.0, values: vec![Some(100.0), Some(100.0)] });
        records.push(SurvivalRecord { subject: id, baseline_age: 50.0, time: 1.0 + (i % 5) as f64, status: i % 3 != 0 });
    }
    let s = Study::align(
        LongitudinalDataset::from_rows(rows, &map).unwrap(),
        SurvivalDataset::from_records(records).unwrap(),
        map,
    )
    .unwrap();
    let mut c = config(Variant::BaselinePcox);
    c.penalty.lambda = LambdaChoice::Fixed(0.1);
    let m = fit_prc(&s, &c).unwrap();
    let fill = m.baseline_fill.as_ref().unwrap();
    let seen: Vec<f64> = (0..40).filter(|i| i % 4 != 0).map(|i| i as f64).collect();
    let mean = seen.iter().sum::<f64>() / seen.len() as f64;
    assert!((fill[1] - mean).abs() < 1e-12);
    let d = m.design(&s).unwrap();
    assert_eq!(d.x.columns[1][0], mean);
    assert_eq!(d.x.columns[1][1], 1.0);
}

#[test]
fn lmm_variant_gives_intercept_and_slope_per_item() {
    let s = study(1, 120, Design::Few, 2);
    let m = fit_prc(&s, &config(Variant::PrcLmm)).unwrap();
    assert_eq!(m.n_predictors(), 60);
    assert_eq!(m.n_penalized(), 60);
}

#[test]
fn age_is_unpenalized_when_included() {
    let s = study(1, 120, Design::Few, 2);
    let mut c = config(Variant::PrcLmm);
    c.age = AgePolicy::Include;
    let m = fit_prc(&s, &c).unwrap();
    assert!(m.include_age);
    assert_eq!(m.cox.columns[0], AGE_COLUMN);
    assert_eq!(m.cox.penalty_factors[0], 0.0);
    assert_eq!(m.n_penalized(), 60);
    assert_eq!(m.n_predictors(), 61);
}

#[test]
fn predictions_on_training_data_reproduce_fit() {
    let s = study(7, 150, Design::Few, 4);
    for v in [Variant::BaselinePcox, Variant::PrcMlpmmU, Variant::PrcMlpmmUb] {
        let m = fit_prc(&s, &config(v)).unwrap();
        let lp = m.linear_predictor(&s).unwrap();
        for (a, b) in lp.iter().zip(&m.cox.train_lp) {
            assert!((a - b).abs() < 1e-10, "{v:?}");
        }
    }
}

#[test]
fn model_survives_json_round_trip() {
    let s = study(7, 120, Design::Few, 5);
    let m = fit_prc(&s, &config(Variant::PrcMlpmmUb)).unwrap();
    let back: PrcModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    let times = [0.5, 1.0, 2.0, 5.0];
    assert_eq!(m.survival_curves(&s, &times).unwrap(), back.survival_curves(&s, &times).unwrap());
    let metrics = MetricRequest::default_set();
    assert_eq!(m.score(&s, &metrics).unwrap(), back.score(&s, &metrics).unwrap());
}

#[test]
fn alpha_is_chosen_from_the_grid() {
    let s = study(1, 120, Design::Few, 6);
    let mut c = config(Variant::PrcLmm);
    c.alpha_grid = Some(vec![0.0, 0.5, 1.0]);
    c.penalty.folds = 3;
    c.penalty.path_length = 30;
    c.penalty.min_ratio = Some(0.05);
    let m = fit_prc(&s, &c).unwrap();
    let sel = m.alpha_selection.as_ref().unwrap();
    assert!(sel.grid.contains(&m.cox.alpha));
    assert_eq!(sel.alpha, m.cox.alpha);
    assert_eq!(sel.outer_deviance.len(), 3);
}

#[test]
fn scoring_rejects_other_items() {
    let s = study(7, 100, Design::Few, 7);
    let m = fit_prc(&s, &config(Variant::PrcMlpmmU)).unwrap();
    let other = study(1, 100, Design::Few, 7);
    assert!(m.linear_predictor(&other).is_err());
}

#[test]
fn undefined_metrics_are_reported_not_raised() {
    let s = study(1, 100, Design::Few, 8);
    let m = fit_prc(&s, &config(Variant::PrcLmm)).unwrap();
    let v = m.score(&s, &[MetricRequest::c_index(), MetricRequest::tdauc(1e-9)]).unwrap();
    assert!(v[0].value.is_some());
    assert!(v[1].value.is_none() && v[1].error.is_some());
}

#[test]
fn fit_is_deterministic() {
    let s = study(1, 100, Design::Many, 9);
    let a = fit_prc(&s, &config(Variant::PrcLmm)).unwrap();
    let b = fit_prc(&s, &config(Variant::PrcLmm)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
#[ignore]
fn timing_probe() {
    for (id, v) in [(2, Variant::PrcLmm), (2, Variant::BaselinePcox), (10, Variant::PrcMlpmmUb)] {
        let s = study(id, 300, Design::Many, 1);
        let t = Instant::now();
        let m = fit_prc(&s, &config(v)).unwrap();
        eprintln!("scenario {id} {v:?}: {:?}, d = {}", t.elapsed(), m.n_predictors());
    }
}

