use prc::data::SurvivalOutcome;
use prc::metrics::c_index;
use prc::rng::stream_rng;
use prc::simulation::{
    apply_design_and_censoring, generate_lmm_study, generate_mlpmm_study, generate_study, weibull_event_times, Design,
    EffectLaw, MarkerModel, ScenarioSpec, SimulationError,
};

/// Asymptotic Kolmogorov p-value of the one-sample KS statistic.
fn ks_pvalue(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0_f64;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let z = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * z * z).exp();
    }
    p.clamp(0.0, 1.0)
}

fn median(v: &[f64]) -> f64 {
    let mut x = v.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    0.5 * (x[(n - 1) / 2] + x[n / 2])
}

#[test]
fn ks_helper_rejects_wrong_law() {
    let mut rng = stream_rng(0, 200);
    let t = weibull_event_times(&[0.0; 2000], 1.0, 1.0, &mut rng);
    assert!(ks_pvalue(&t, |x| 1.0 - (-x).exp()) > 0.01);
    assert!(ks_pvalue(&t, |x| 1.0 - (-2.0 * x).exp()) < 1e-6);
}

#[test]
fn unit_weibull_is_exponential() {
    let mut passes = 0;
    for seed in 0..20 {
        let mut rng = stream_rng(seed, 201);
        let t = weibull_event_times(&vec![0.0; 5000], 1.0, 1.0, &mut rng);
        if ks_pvalue(&t, |x| 1.0 - (-x).exp()) > 0.01 {
            passes += 1;
        }
    }
    assert!(passes >= 18, "{passes} of 20");
}

#[test]
fn weibull_survival_matches_closed_form() {
    let mut rng = stream_rng(1, 202);
    let t = weibull_event_times(&vec![0.0; 5000], 2.0, 0.5, &mut rng);
    let s1 = t.iter().filter(|&&x| x > 1.0).count() as f64 / 5000.0;
    assert!((s1 - (-0.5f64).exp()).abs() < 0.02, "{s1}");
    assert!(ks_pvalue(&t, |x| 1.0 - (-0.5 * x * x).exp()) > 0.01);
}

#[test]
fn higher_risk_fails_earlier() {
    let mut rng = stream_rng(2, 203);
    let a = weibull_event_times(&vec![0.5; 5000], 2.0, 1.0, &mut rng);
    let b = weibull_event_times(&vec![0.0; 5000], 2.0, 1.0, &mut rng);
    assert!(median(&a) < median(&b));
}

#[test]
fn visits_are_truncated_at_follow_up_end() {
    let mut rng = stream_rng(3, 204);
    let f = apply_design_and_censoring(&[1.4], Design::Few, 1e9, &mut rng).unwrap();
    assert_eq!(f[0].visits, vec![0.0, 1.0]);
    assert!(f[0].status);
    assert_eq!(f[0].time, 1.4);
    let f = apply_design_and_censoring(&[6.0], Design::Many, 1e12, &mut rng).unwrap();
    assert_eq!(f[0].visits.len(), 10);
    assert!(apply_design_and_censoring(&[1.0], Design::Few, 0.0, &mut rng).is_err());
}

#[test]
fn predefined_scenarios_have_stated_shapes() {
    let s1 = ScenarioSpec::scenario(1, 300, Design::Few).unwrap();
    assert_eq!((s1.processes, s1.n_items(), s1.active), (30, 30, 6));
    assert_eq!(s1.model, MarkerModel::Lmm { fixed: [1.0, 0.5], d: [[1.0, 0.0], [0.0, 1.0]], sigma2_eps: 0.5 });
    let s2 = ScenarioSpec::scenario(2, 300, Design::Few).unwrap();
    assert_eq!(s2.effects, EffectLaw::SlopesOnly);
    let s3 = ScenarioSpec::scenario(3, 300, Design::Few).unwrap();
    assert!(matches!(s3.model, MarkerModel::Lmm { d: [[0.1, 0.0], [0.0, 2.0]], .. }));
    let s4 = ScenarioSpec::scenario(4, 300, Design::Many).unwrap();
    assert_eq!((s4.processes, s4.active), (150, 10));
    let s7 = ScenarioSpec::scenario(7, 300, Design::Many).unwrap();
    assert_eq!((s7.processes, s7.n_items(), s7.active), (10, 30, 4));
    let s9 = ScenarioSpec::scenario(9, 300, Design::Many).unwrap();
    let c = 0.5 * 0.2f64.sqrt();
    assert!(matches!(s9.model, MarkerModel::Mlpmm { sigma_u, .. } if sigma_u == [[0.1, c], [c, 2.0]]));
    let s10 = ScenarioSpec::scenario(10, 300, Design::Many).unwrap();
    assert_eq!((s10.processes, s10.n_items(), s10.active), (50, 150, 10));
    let map = s10.item_map();
    assert_eq!(map.n_processes(), 50);
    assert_eq!(map.items()[0], "P01_1");
    assert!(ScenarioSpec::scenario(13, 300, Design::Few).is_err());
}

#[test]
fn generation_is_deterministic() {
    let spec = ScenarioSpec::scenario(7, 60, Design::Few).unwrap();
    let a = generate_mlpmm_study(&spec, 5).unwrap();
    let b = generate_mlpmm_study(&spec, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = generate_mlpmm_study(&spec, 6).unwrap();
    assert_ne!(a.truth.linear_predictor, c.truth.linear_predictor);
}

#[test]
fn generators_check_marker_model() {
    let lmm = ScenarioSpec::scenario(1, 20, Design::Few).unwrap();
    let mlpmm = ScenarioSpec::scenario(7, 20, Design::Few).unwrap();
    assert!(matches!(generate_mlpmm_study(&lmm, 0), Err(SimulationError::Spec(_))));
    assert!(matches!(generate_lmm_study(&mlpmm, 0), Err(SimulationError::Spec(_))));
    let mut bad = lmm.clone();
    bad.active = 31;
    assert!(generate_study(&bad, 0).is_err());
    let mut bad = lmm.clone();
    bad.model = MarkerModel::Lmm { fixed: [0.0, 0.0], d: [[1.0, 2.0], [2.0, 1.0]], sigma2_eps: 1.0 };
    assert!(generate_study(&bad, 0).is_err());
}

#[test]
fn retained_visits_precede_end_of_follow_up() {
    let spec = ScenarioSpec::scenario(1, 200, Design::Many).unwrap();
    let sim = generate_lmm_study(&spec, 3).unwrap();
    let study = &sim.study;
    for (i, rec) in study.survival.records().iter().enumerate() {
        let ages = study.longitudinal.visits(i).ages;
        assert!(!ages.is_empty());
        assert_eq!(ages[0], 0.0);
        assert!(ages.iter().all(|&a| a <= rec.time));
    }
}

#[test]
fn censoring_is_calibrated_to_thirty_percent() {
    for id in 1..=12 {
        let design = if id % 2 == 0 { Design::Few } else { Design::Many };
        let spec = ScenarioSpec::scenario(id, 1000, design).unwrap();
        let sim = generate_study(&spec, 11).unwrap();
        let frac = sim.study.survival.n_censored() as f64 / 1000.0;
        assert!((frac - 0.3).abs() <= 0.05, "scenario {id}: {frac}");
        let med = median(&sim.truth.event_time);
        assert!((med - 2.5).abs() < 0.5, "scenario {id}: median {med}");
    }
}

#[test]
fn true_linear_predictor_discriminates() {
    for id in 1..=12 {
        let spec = ScenarioSpec::scenario(id, 1000, Design::Few).unwrap();
        let sim = generate_study(&spec, 12).unwrap();
        let c = c_index(&sim.truth.linear_predictor, &sim.study.survival.outcome(), None).unwrap();
        assert!(c > 0.7, "scenario {id}: {c}");
    }
}

#[test]
fn null_scenario_times_ignore_random_effects() {
    let mut spec = ScenarioSpec::scenario(1, 1000, Design::Few).unwrap();
    spec.active = 0;
    let sim = generate_lmm_study(&spec, 13).unwrap();
    assert!(sim.truth.linear_predictor.iter().all(|&e| e == 0.0));
    let surv = SurvivalOutcome::new(sim.truth.event_time.clone(), vec![true; 1000]);
    let u0: Vec<f64> = sim.truth.shared.iter().map(|u| u[0][0] + u[0][1]).collect();
    let c = c_index(&u0, &surv, None).unwrap();
    assert!((c - 0.5).abs() < 0.03, "{c}");
}

#[test]
fn random_effect_moments_match_spec() {
    for id in [7, 9, 3] {
        let spec = ScenarioSpec::scenario(id, 5000, Design::Few).unwrap();
        let sim = generate_study(&spec, 14).unwrap();
        let target = match spec.model {
            MarkerModel::Lmm { d, .. } => d,
            MarkerModel::Mlpmm { sigma_u, .. } => sigma_u,
        };
        for s in 0..3 {
            let u: Vec<[f64; 2]> = sim.truth.shared.iter().map(|x| x[s]).collect();
            let n = u.len() as f64;
            let m0 = u.iter().map(|x| x[0]).sum::<f64>() / n;
            let m1 = u.iter().map(|x| x[1]).sum::<f64>() / n;
            let c00 = u.iter().map(|x| (x[0] - m0).powi(2)).sum::<f64>() / (n - 1.0);
            let c11 = u.iter().map(|x| (x[1] - m1).powi(2)).sum::<f64>() / (n - 1.0);
            let c01 = u.iter().map(|x| (x[0] - m0) * (x[1] - m1)).sum::<f64>() / (n - 1.0);
            assert!((c00 - target[0][0]).abs() < 0.05, "scenario {id}");
            assert!((c11 - target[1][1]).abs() < 0.05 * target[1][1].max(1.0), "scenario {id}: {c11}");
            assert!((c01 - target[0][1]).abs() < 0.05, "scenario {id}");
        }
    }
}

#[test]
fn slopes_only_scenarios_zero_the_intercept_coefficients() {
    let spec = ScenarioSpec::scenario(8, 50, Design::Few).unwrap();
    let sim = generate_study(&spec, 15).unwrap();
    for (s, c) in sim.truth.coefficients.iter().enumerate() {
        assert_eq!(c[0], 0.0);
        if s < 4 {
            assert!((0.5..=1.0).contains(&c[1].abs()));
        } else {
            assert_eq!(c[1], 0.0);
        }
    }
}

#[test]
fn custom_spec_from_toml() {
    let text = r#"
        processes = 4
        n = 80
        design = "FEW"
        active = 2
        effects = "slopes_only"
        weibull_scale = 0.2
        censor_max = 8.0
        baseline_age = 7.5

        [model]
        kind = "mlpmm"
        items = 2
        fixed = [0.0, 1.0]
        sigma_u = [[1.0, 0.0], [0.0, 0.5]]
        sigma2_b = 0.3
        sigma2_eps = 0.2
    "#;
    let spec: ScenarioSpec = toml::from_str(text).unwrap();
    assert_eq!(spec.id, None);
    assert_eq!(spec.weibull_shape, 2.0);
    let sim = generate_mlpmm_study(&spec, 1).unwrap();
    assert_eq!(sim.truth.weibull_scale, 0.2);
    assert_eq!(sim.truth.censor_max, 8.0);
    assert_eq!(sim.study.longitudinal.n_items(), 8);
    assert!(sim.study.survival.records().iter().all(|r| r.baseline_age == 7.5));
    assert!(sim.study.longitudinal.visits(0).ages[0] == 7.5);
    assert!(toml::from_str::<ScenarioSpec>("processes = 1\nunknown = 3").is_err());
}
