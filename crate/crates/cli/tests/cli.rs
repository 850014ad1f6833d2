use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mr_impute(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mr-impute"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn header(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(String::from).collect()
}

const SPEC: &str = r#"
size = 1000
distribution = "gamma"
beta = [1.0, 1.0, 0.4]
seed = 42
"#;

#[test]
fn gen_impute_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("pop.toml");
    fs::write(&spec, SPEC).unwrap();

    let pop = dir.path().join("pop.csv");
    let out = mr_impute(&["gen", "--spec", p(&spec), "--out", p(&pop)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&pop), ["id", "v1", "v2", "y"]);
    assert_eq!(fs::read_to_string(&pop).unwrap().lines().count(), 1001);

    let survey = dir.path().join("survey.csv");
    let out = mr_impute(&["gen", "--spec", p(&spec), "--out", p(&survey), "--sample", "80"]);
    assert!(out.status.success());
    assert_eq!(header(&survey), ["id", "w", "r", "y", "v1", "v2"]);

    let imputed = dir.path().join("imputed.csv");
    let summary = dir.path().join("summary.json");
    let out = mr_impute(&[
        "impute",
        "--in",
        p(&survey),
        "--out",
        p(&imputed),
        "--nonresponse",
        "1,v1,v1^2",
        "--imputation",
        "1,v1,v1^2",
        "--bootstrap",
        "50",
        "--seed",
        "3",
        "--summary",
        p(&summary),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let h = header(&imputed);
    for col in ["y_imputed", "psi_hat", "cond_bias", "cond_bias_boot"] {
        assert!(h.iter().any(|c| c == col), "missing {col}");
    }
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    // N inferred from the constant weights 1000/80.
    assert_eq!(s["population_size"], 1000);
    assert_eq!(s["n"], 80);
    let (t, rt) = (s["total"].as_f64().unwrap(), s["robust_total"].as_f64().unwrap());
    let (bmin, bmax) = (s["b_min"].as_f64().unwrap(), s["b_max"].as_f64().unwrap());
    assert!((rt - (t - (bmin + bmax) / 2.0)).abs() <= 1e-9 * t.abs());
    assert_eq!(s["bootstrap"]["replicates"], 50);

    // Same input and seed: identical output.
    let again = dir.path().join("again.csv");
    let out = mr_impute(&[
        "impute", "--in", p(&survey), "--out", p(&again), "--nonresponse", "1,v1,v1^2", "--imputation", "1,v1,v1^2",
        "--bootstrap", "50", "--seed", "3", "--summary", p(&dir.path().join("s2.json")),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read(&imputed).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn impute_with_models_file_and_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("pop.toml");
    fs::write(&spec, SPEC.replace("gamma", "normal").replace("[1.0, 1.0, 0.4]", "[10.0, 10.0, 10.0]")).unwrap();
    let survey = dir.path().join("survey.csv");
    assert!(mr_impute(&["gen", "--spec", p(&spec), "--out", p(&survey), "--sample", "60"]).status.success());
    let models = dir.path().join("models.toml");
    fs::write(
        &models,
        "[[imputation]]\npredictors = [\"1\", \"v1\", \"v1^2\"]\n\n[[imputation]]\npredictors = [\"1\", \"v1\", \"v2\"]\n",
    )
    .unwrap();
    let imputed = dir.path().join("imputed.csv");
    let out = mr_impute(&[
        "impute",
        "--in",
        p(&survey),
        "--out",
        p(&imputed),
        "--models",
        p(&models),
        "--population-size",
        "1000",
        "--calibrate",
        "--distance",
        "logit",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let (cal, robust) = (s["calibrated_total"].as_f64().unwrap(), s["robust_total"].as_f64().unwrap());
    assert!((cal - robust).abs() <= 1e-10 * robust.abs());
    assert!(header(&imputed).iter().any(|c| c == "y_final"));
}

#[test]
fn calibrate_command() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, "id,w,r,y,y_star\n1,10,1,2.0,\n2,10,0,,1.0\n3,10,0,,2.0\n4,10,0,,3.0\n").unwrap();
    let output = dir.path().join("out.csv");
    let out = mr_impute(&["calibrate", "--in", p(&input), "--out", p(&output), "--target", "74"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&output).unwrap();
    let finals: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    // Σ w y_F = 74 with y_F ∝ y* under chi-square and q = 1 weights.
    assert_eq!(finals.len(), 4);
    assert!((finals.iter().zip([10.0; 4]).map(|(y, w)| y * w).sum::<f64>() - 74.0).abs() < 1e-10);
    for (got, want) in finals[1..].iter().zip([0.9, 1.8, 2.7]) {
        assert!((got - want).abs() < 1e-12);
    }

    // A ratio-bounded distance cannot reach a target far outside its range.
    let out = mr_impute(&[
        "calibrate", "--in", p(&input), "--out", p(&output), "--target", "500", "--distance", "logit",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_command_writes_table_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        r#"
[[scenario]]
name = "small"
n = 40
replicates = 30
seed = 5
population = { size = 800, distribution = "normal", beta = [10.0, 10.0, 10.0] }
reference = { rb = 0.2, rb_star = -0.1, re = 103 }

[[scenario.imputation]]
predictors = ["1", "v1", "v1^2"]
"#,
    )
    .unwrap();
    let table = dir.path().join("out.csv");
    let json = dir.path().join("out.json");
    let out = mr_impute(&["run", "--config", p(&cfg), "--out", p(&table), "--json", p(&json), "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let h = header(&table);
    assert_eq!(h[0], "name");
    assert!(h.iter().any(|c| c == "rb_mr_star"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v[0]["completed"], 30);

    let out = mr_impute(&["run", "--config", p(&cfg), "--replicates", "10", "--only", "small"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("name,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // 2: configuration errors.
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[[scenario]]\nname = 3\n").unwrap();
    assert_eq!(mr_impute(&["run", "--config", p(&bad)]).status.code(), Some(2));
    let spec = dir.path().join("pop.toml");
    fs::write(&spec, "size = 10\ndistribution = \"pareto\"\nbeta = [-5.0, 0.0, 0.0]\n").unwrap();
    assert_eq!(mr_impute(&["gen", "--spec", p(&spec), "--out", p(&dir.path().join("x.csv"))]).status.code(), Some(2));
    let survey = dir.path().join("s.csv");
    fs::write(&survey, "id,w,r,y,v1\n1,5,1,1.0,0.5\n2,5,0,,1.5\n").unwrap();
    let out = mr_impute(&["impute", "--in", p(&survey), "--out", p(&dir.path().join("o.csv")), "--imputation", "1,v1^x"]);
    assert_eq!(out.status.code(), Some(2));

    // 3: numerical failures (one respondent cannot fit an intercept and slope).
    let out = mr_impute(&["impute", "--in", p(&survey), "--out", p(&dir.path().join("o.csv")), "--imputation", "1,v1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // 4: I/O and input errors.
    let missing = dir.path().join("missing.csv");
    let out = mr_impute(&["impute", "--in", p(&missing), "--out", p(&dir.path().join("o.csv")), "--imputation", "1,v1"]);
    assert_eq!(out.status.code(), Some(4));
    let broken = dir.path().join("broken.csv");
    fs::write(&broken, "id,w,r,y,v1\n1,5,maybe,1.0,0.5\n").unwrap();
    let out = mr_impute(&["impute", "--in", p(&broken), "--out", p(&dir.path().join("o.csv")), "--imputation", "1,v1"]);
    assert_eq!(out.status.code(), Some(4));
}
