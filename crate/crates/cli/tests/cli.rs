use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::TempDir;

fn prc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prc"))
}

fn run(args: &[&str], dir: &Path) -> (i32, String) {
    let out = prc().args(args).current_dir(dir).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(args: &[&str], dir: &Path) {
    let (code, err) = run(args, dir);
    assert_eq!(code, 0, "{args:?}: {err}");
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn simulate(dir: &Path, scenario: u32, n: usize) -> PathBuf {
    let out = format!("sim{scenario}");
    ok(&["simulate", "--scenario", &scenario.to_string(), "--n", &n.to_string(), "--seed", "7", "--out-dir", &out], dir);
    dir.join(out).join("few")
}

fn write_config(dir: &Path, name: &str, data: &Path, variant: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        "schema_version = 1\nseed = 4\n{extra}\n[data]\nlongitudinal = \"{d}/longitudinal.csv\"\nsurvival = \"{d}/survival.csv\"\nitem_map = \"{d}/item_map.csv\"\n\n[pipeline]\nvariant = \"{variant}\"\n\n[pipeline.penalty]\nfolds = 5\npath_length = 40\n\n[bootstrap]\nreplicates = 2\n",
        d = data.display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn bundle(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(dir.join("model.json"))).unwrap()
}

fn all_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_both_designs() {
    let t = TempDir::new().unwrap();
    let few = simulate(t.path(), 1, 40);
    let many = few.parent().unwrap().join("many");
    for d in [&few, &many] {
        for f in ["longitudinal.csv", "survival.csv", "item_map.csv", "truth.json"] {
            assert!(d.join(f).exists(), "{}", d.join(f).display());
        }
        let header = read(d.join("longitudinal.csv")).lines().next().unwrap().to_string();
        assert_eq!(header.split(',').count(), 2 + 30);
        assert_eq!(read(d.join("survival.csv")).lines().count(), 41);
    }
    let map = read(simulate(t.path(), 12, 20).join("item_map.csv"));
    assert_eq!(map.lines().count(), 151);
}

#[test]
fn simulate_honours_custom_spec() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("sim.toml");
    fs::write(
        &cfg,
        r#"schema_version = 1
seed = 2

[simulation.spec]
id = 99
processes = 4
n = 25
design = "MANY"
active = 2
effects = "slopes_only"
coef_range = [0.5, 1.0]
weibull_shape = 1.5
weibull_scale = 0.1
target_median = 2.5
censor_max = 8.0
target_censoring = 0.3
baseline_age = 40.0

[simulation.spec.model]
kind = "mlpmm"
items = 2
fixed = [1.0, 0.5]
sigma_u = [[0.1, 0.0], [0.0, 2.0]]
sigma2_b = 0.5
sigma2_eps = 0.5
"#,
    )
    .unwrap();
    ok(&["simulate", "--config", "sim.toml", "--out-dir", "out"], t.path());
    let d = t.path().join("out/many");
    assert_eq!(read(d.join("item_map.csv")).lines().count(), 1 + 8);
    let surv = read(d.join("survival.csv"));
    assert_eq!(surv.lines().count(), 26);
    assert!(surv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("40")));
    let truth: serde_json::Value = serde_json::from_str(&read(d.join("truth.json"))).unwrap();
    assert_eq!(truth["weibull_scale"], 0.1);
    assert_eq!(truth["censor_max"], 8.0);
    assert_eq!(truth["spec"]["weibull_shape"], 1.5);
    let coefs = truth["coefficients"].as_array().unwrap();
    let active = coefs.iter().filter(|c| c[1].as_f64().unwrap() != 0.0).count();
    assert_eq!(active, 2);
    assert!(coefs.iter().all(|c| c[0].as_f64().unwrap() == 0.0));
}

#[test]
fn fit_counts_covariates_per_variant() {
    let t = TempDir::new().unwrap();
    let data = simulate(t.path(), 7, 120);
    for (variant, expected) in [("PRC_MLPMM_U", 20), ("BASELINE_PCOX", 30), ("PRC_MLPMM_UB", 50)] {
        let cfg = write_config(t.path(), "fit.toml", &data, variant, "");
        let out = format!("fit_{variant}");
        ok(&["fit", "--config", cfg.to_str().unwrap(), "--out-dir", &out], t.path());
        let b = bundle(&t.path().join(&out));
        assert_eq!(b["model"]["cox"]["columns"].as_array().unwrap().len(), expected, "{variant}");
        assert_eq!(b["config"]["pipeline"]["penalty"]["seed"], 4);
        assert_eq!(b["config"]["pipeline"]["penalty"]["path_length"], 40);
        assert!(b["config"]["pipeline"]["mixed"]["max_iter"].is_number());
    }
}

#[test]
fn predict_and_evaluate_reproduce_fit() {
    let t = TempDir::new().unwrap();
    let data = simulate(t.path(), 1, 80);
    let cfg = write_config(t.path(), "fit.toml", &data, "PRC_LMM", "");
    ok(&["fit", "--config", cfg.to_str().unwrap(), "--out-dir", "fit"], t.path());
    let l = data.join("longitudinal.csv");
    let s = data.join("survival.csv");
    ok(
        &["evaluate", "--model", "fit/model.json", "--longitudinal", l.to_str().unwrap(), "--survival", s.to_str().unwrap(), "--out-dir", "ev"],
        t.path(),
    );
    assert_eq!(read(t.path().join("ev/metrics.json")), read(t.path().join("fit/metrics.json")));
    assert!(read(t.path().join("ev/km.csv")).starts_with("time,n_risk,n_event,n_censor,survival\n"));

    // A copy of the first subject under a new id, plus a single-visit and a
    // visit-free subject.
    let longit = read(&l);
    let mut lines = longit.lines();
    let header = lines.next().unwrap();
    let first: Vec<&str> = lines.clone().take_while(|r| r.starts_with("s01,")).collect();
    let one = lines.find(|r| r.starts_with("s02,")).unwrap();
    let mut new_l = format!("{header}\n");
    for r in &first {
        new_l.push_str(&r.replacen("s01,", "copy,", 1));
        new_l.push('\n');
    }
    new_l.push_str(&one.replacen("s02,", "single,", 1));
    new_l.push('\n');
    fs::write(t.path().join("new_l.csv"), new_l).unwrap();
    fs::write(t.path().join("new_s.csv"), "subject,baseline_age\ncopy,0\nsingle,0\nempty,0\n").unwrap();
    let times = "0.5,1,2,3.5";
    ok(
        &["predict", "--model", "fit/model.json", "--longitudinal", "new_l.csv", "--subjects", "new_s.csv", "--times", times, "--out-dir", "new"],
        t.path(),
    );
    ok(
        &["predict", "--model", "fit/model.json", "--longitudinal", l.to_str().unwrap(), "--subjects", s.to_str().unwrap(), "--times", times, "--out-dir", "train"],
        t.path(),
    );
    let curve = |file: &str, id: &str| -> Vec<f64> {
        read(t.path().join(file))
            .lines()
            .filter(|r| r.starts_with(&format!("{id},")))
            .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
            .collect()
    };
    let a = curve("new/survival.csv", "copy");
    let b = curve("train/survival.csv", "s01");
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
    let single = curve("new/survival.csv", "single");
    assert!(single.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    let preds = read(t.path().join("new/predictions.csv"));
    let row = |id: &str| preds.lines().find(|r| r.starts_with(&format!("{id},"))).unwrap().to_string();
    assert!(row("single").contains("single_visit"), "{preds}");
    assert!(row("empty").contains("prior_mean"));
    assert!(row("copy").ends_with(','));

    // The training lp reproduces the fitted one.
    let b = bundle(&t.path().join("fit"));
    let fitted: Vec<f64> = b["model"]["cox"]["train_lp"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let lp: Vec<f64> = read(t.path().join("train/predictions.csv"))
        .lines()
        .skip(1)
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    for (x, y) in lp.iter().zip(&fitted) {
        assert!((x - y).abs() < 1e-10);
    }

    ok(
        &["predict", "--model", "fit/model.json", "--longitudinal", "new_l.csv", "--subjects", "new_s.csv", "--times", "", "--out-dir", "none"],
        t.path(),
    );
    assert_eq!(read(t.path().join("none/survival.csv")), "subject,time,survival\n");
}

#[test]
fn evaluate_scores_file() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    // Events at 1, 2, 3 with decreasing risk; a survivor censored at 4.
    fs::write(p.join("s.csv"), "subject,baseline_age,time,status\na,0,1,1\nb,0,2,1\nc,0,3,1\nd,0,4,0\n").unwrap();
    fs::write(p.join("sc.csv"), "subject,score\nd,-1\nc,0\nb,1\na,2\n").unwrap();
    fs::write(p.join("sc2.csv"), "subject,score\nd,-10\nc,0\nb,3\na,100\n").unwrap();
    fs::write(
        p.join("m.toml"),
        "schema_version = 1\nmetrics = [{ metric = \"C_INDEX\" }, { metric = \"TDAUC\", horizon = 2.5 }]\n",
    )
    .unwrap();
    ok(&["evaluate", "--config", "m.toml", "--scores", "sc.csv", "--survival", "s.csv", "--out-dir", "e1"], p);
    ok(&["evaluate", "--config", "m.toml", "--scores", "sc2.csv", "--survival", "s.csv", "--out-dir", "e2"], p);
    let m1 = read(p.join("e1/metrics.csv"));
    assert_eq!(m1, read(p.join("e2/metrics.csv")));
    let c: f64 = m1.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(c, 1.0);
    let km = read(p.join("e1/km.csv"));
    let surv: Vec<f64> = km.lines().skip(1).map(|r| r.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert!((surv[0] - 0.75).abs() < 1e-12);
    assert!((surv[1] - 0.5).abs() < 1e-12);
    assert!((surv[2] - 0.25).abs() < 1e-12);
    assert!((surv[3] - 0.25).abs() < 1e-12);

    fs::write(p.join("short.csv"), "subject,score\na,1\n").unwrap();
    let (code, err) = run(&["evaluate", "--scores", "short.csv", "--survival", "s.csv", "--out-dir", "e3"], p);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn validate_writes_one_row_per_replicate_and_metric() {
    let t = TempDir::new().unwrap();
    let data = simulate(t.path(), 1, 60);
    let cfg = write_config(t.path(), "v.toml", &data, "BASELINE_PCOX", "metrics = [{ metric = \"C_INDEX\" }, { metric = \"TDAUC\", horizon = 1.0 }, { metric = \"TDAUC\", horizon = 2.0 }]");
    ok(&["validate", "--config", cfg.to_str().unwrap(), "--out-dir", "v1"], t.path());
    ok(&["validate", "--config", cfg.to_str().unwrap(), "--out-dir", "v2"], t.path());
    let rows = read(t.path().join("v1/replicates.csv"));
    assert_eq!(rows.lines().count(), 1 + 2 * 3);
    assert_eq!(all_files(&t.path().join("v1")), all_files(&t.path().join("v2")));
    let report: serde_json::Value = serde_json::from_str(&read(t.path().join("v1/validation.json"))).unwrap();
    assert_eq!(report["records"][1]["stream"], 10001);
}

#[test]
fn every_subcommand_is_deterministic_across_worker_counts() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    let data = simulate(p, 7, 60);
    write_config(p, "c.toml", &data, "PRC_MLPMM_UB", "");
    let l = data.join("longitudinal.csv");
    let s = data.join("survival.csv");
    for w in ["1", "3"] {
        let dir = format!("w{w}");
        ok(&["simulate", "--scenario", "4", "--n", "30", "--seed", "1", "--workers", w, "--out-dir", &format!("{dir}/sim")], p);
        ok(&["fit", "--config", "c.toml", "--workers", w, "--out-dir", &format!("{dir}/fit")], p);
        ok(&["validate", "--config", "c.toml", "--workers", w, "--out-dir", &format!("{dir}/val")], p);
        ok(
            &["predict", "--model", &format!("{dir}/fit/model.json"), "--longitudinal", l.to_str().unwrap(), "--subjects", s.to_str().unwrap(), "--workers", w, "--out-dir", &format!("{dir}/pred")],
            p,
        );
        ok(
            &["evaluate", "--model", &format!("{dir}/fit/model.json"), "--longitudinal", l.to_str().unwrap(), "--survival", s.to_str().unwrap(), "--workers", w, "--out-dir", &format!("{dir}/ev")],
            p,
        );
    }
    let a = all_files(&p.join("w1"));
    assert_eq!(a.len(), 4 * 2 + 3 + 4 + 2 + 3);
    assert_eq!(a, all_files(&p.join("w3")));
}

#[test]
fn errors_map_to_exit_codes() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    let (code, _) = run(&["fit", "--out-dir", "x"], p);
    assert_eq!(code, 2);
    fs::write(p.join("bad.toml"), "schema_version = 9\n").unwrap();
    assert_eq!(run(&["fit", "--config", "bad.toml"], p).0, 2);
    fs::write(p.join("typo.toml"), "schema_version = 1\nsead = 3\n").unwrap();
    assert_eq!(run(&["fit", "--config", "typo.toml"], p).0, 2);
    let missing = write_config(p, "missing.toml", &p.join("nowhere"), "PRC_LMM", "");
    let (code, err) = run(&["fit", "--config", missing.to_str().unwrap()], p);
    assert_eq!(code, 2);
    assert!(err.contains("data"), "{err}");

    let data = simulate(p, 7, 40);
    let strict = write_config(p, "strict.toml", &data, "PRC_MLPMM_U", "");
    let text = read(&strict) + "\n[pipeline.mixed]\nmax_iter = 1\n";
    let text = text.replace("[pipeline]\n", "[pipeline]\nrequire_convergence = true\n");
    fs::write(&strict, text).unwrap();
    let (code, err) = run(&["fit", "--config", strict.to_str().unwrap(), "--out-dir", "s"], p);
    assert_eq!(code, 3, "{err}");
}
