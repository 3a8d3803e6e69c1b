use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmm_core::sim::{generate_dataset, Effect, ScenarioKind, SimulationScenario};
use pmm_core::{manifest_for, write_dataset_to};
use serde_json::Value;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn award() -> String {
    data_dir().join("award_lookalike.csv").display().to_string()
}

fn pmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmm")).args(args).output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not error JSON: {text}"))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn validate_reports_final_visit_margins() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmm(&["validate", "--data", &award(), "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("patterns.csv"));
    assert_eq!(header[..3], ["arm", "visit", "n"]);
    let finals: Vec<_> = rows.iter().filter(|r| r[1] == "26").collect();
    let sizes: Vec<&str> = finals.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(sizes, ["141", "280", "279"]);
    // Retrieved dropouts per arm as in the trial's disposition table.
    let retrieved: Vec<&str> = finals.iter().map(|r| r[5].as_str()).collect();
    assert_eq!(retrieved, ["5", "9", "9"]);
    let manifest = read_json(&dir.path().join("run_manifest.json"));
    assert_eq!(manifest["command"], "validate");
    assert_eq!(manifest["outputs"], serde_json::json!(["patterns.csv"]));
}

#[test]
fn estimate_writes_csv_and_matching_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv_dir = dir.path().join("csv");
    let json_dir = dir.path().join("json");
    for (d, fmt) in [(&csv_dir, "csv"), (&json_dir, "json")] {
        let o = pmm(&["estimate", "--data", &award(), "--method", "rd,mar", "--format", fmt, "--out", &out_arg(d)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (header, rows) = read_csv(&csv_dir.join("contrasts.csv"));
    assert_eq!(header, ["method", "contrast", "estimate", "se", "ci_lower", "ci_upper", "p_value"]);
    assert_eq!(rows.len(), 4);
    let high = rows.iter().find(|r| r[0] == "rd" && r[1] == "dula_1.5 - placebo").unwrap();
    assert!((num(&high[2]) + 0.87).abs() <= 0.05);
    assert!((num(&high[3]) - 0.09).abs() <= 0.02);

    let (_, arms) = read_csv(&csv_dir.join("estimates.csv"));
    let json = read_json(&json_dir.join("estimates.json"));
    assert_eq!(json["schema_version"], "1.0");
    assert_eq!(json["reference"], "placebo");
    let mut from_json = Vec::new();
    for r in json["results"].as_array().unwrap() {
        for a in r["arms"].as_array().unwrap() {
            from_json.push((
                r["method"].as_str().unwrap().to_string(),
                a["mean"].as_f64().unwrap(),
                a["se"].as_f64().unwrap(),
            ));
        }
    }
    assert_eq!(from_json.len(), arms.len());
    for (row, (method, mean, se)) in arms.iter().zip(&from_json) {
        assert_eq!(&row[0], method);
        assert_eq!(num(&row[3]), *mean);
        assert_eq!(num(&row[4]), *se);
    }
}

#[test]
fn j2r_equals_mar_on_complete_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = SimulationScenario::standard(ScenarioKind::Pmm, Effect::Differential);
    sc.missingness = false;
    let ds = generate_dataset(&sc, 5).unwrap();
    let data = dir.path().join("complete.csv");
    write_dataset_to(&ds, std::fs::File::create(&data).unwrap()).unwrap();
    let manifest = serde_json::to_string(&manifest_for(&ds)).unwrap();
    std::fs::write(dir.path().join("complete.manifest.json"), manifest).unwrap();

    let out = dir.path().join("out");
    let o =
        pmm(&["estimate", "--data", &data.display().to_string(), "--method", "mar,j2r,r2b", "--out", &out_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&out.join("estimates.csv"));
    let pick = |m: &str| -> Vec<Vec<String>> { rows.iter().filter(|r| r[0] == m).map(|r| r[1..].to_vec()).collect() };
    assert_eq!(pick("mar"), pick("j2r"));
    assert_eq!(pick("mar"), pick("r2b"));
}

#[test]
fn empty_method_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for args in [vec!["--method", ""], vec![]] {
        let data = award();
        let mut full = vec!["estimate", "--data", &data];
        let out = out_arg(dir.path());
        full.extend(args.iter().copied());
        full.extend(["--out", &out]);
        let o = pmm(&full);
        assert_eq!(o.status.code(), Some(2));
        assert_eq!(stderr_error(&o)["error"]["kind"], "Usage");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(&dir.path().join("x"));
    let data = award();
    let cases: Vec<Vec<&str>> = vec![
        vec!["estimate", "--data", "/nonexistent.csv", "--method", "mar"],
        vec!["estimate", "--method", "mar"],
        vec!["estimate", "--data", &data, "--method", "cr"],
        vec!["estimate", "--data", &data, "--method", "mar", "--alpha", "0.7"],
        vec!["tipping", "--data", &data, "--method", "rd", "--delta0-range", "3:1"],
        vec!["tipping", "--data", &data, "--method", "rd", "--arm", "nope"],
        vec!["simulate", "--reps", "10", "--methods", "mar"],
        vec!["estimate", "--data", &data, "--method", "mar", "--threads", "0"],
        vec!["frobnicate"],
    ];
    for mut args in cases {
        args.extend(["--out", &out]);
        let o = pmm(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!dir.path().join("x").exists());
}

#[test]
fn computational_error_exits_1_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fail");
    // Placebo washout needs every Pattern B endpoint missing; this data has
    // retrieved dropouts in Pattern B.
    let o = pmm(&["estimate", "--data", &award(), "--method", "mar,pw", "--out", &out_arg(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_error(&o);
    assert_eq!(err["error"]["kind"], "PatternViolation");
    assert!(err["error"]["message"].as_str().unwrap().contains("placebo washout"));
    assert!(!out.exists());
}

#[test]
fn tipping_grid_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmm(&[
        "tipping",
        "--data",
        &award(),
        "--method",
        "rd",
        "--arm",
        "dula_1.5",
        "--delta0-range",
        "-6:0",
        "--delta1-range",
        "-1:5",
        "--resolution",
        "7",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("grid_dula_1.5.csv"));
    assert_eq!(header, ["delta0", "delta1", "p"]);
    assert_eq!(rows.len(), 49);
    let p = |d0: &str, d1: &str| num(&rows.iter().find(|r| r[0] == d0 && r[1] == d1).unwrap()[2]);
    assert!(p("-5", "0") < 0.05);
    assert!(p("-5", "2") > 0.05);
    let (header, boundary) = read_csv(&dir.path().join("boundary_dula_1.5.csv"));
    assert_eq!(header[0], "delta0");
    assert_eq!(boundary.len(), 7);
    let at_minus5 = boundary.iter().find(|r| r[0] == "-5").unwrap();
    let roots: Vec<f64> = at_minus5[1..].iter().filter(|c| !c.is_empty()).map(|c| num(c)).collect();
    assert!(roots.iter().any(|r| *r > 0.0 && *r <= 2.0), "{roots:?}");
}

#[test]
fn tipping_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmm(&[
        "tipping",
        "--data",
        &award(),
        "--method",
        "rd",
        "--resolution",
        "3",
        "--format",
        "json",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for arm in ["dula_0.75", "dula_1.5"] {
        let path = dir.path().join(format!("tipping_{arm}.json"));
        let v = read_json(&path);
        assert_eq!(v["arm"], arm);
        let again: Value = serde_json::from_str(&serde_json::to_string_pretty(&v).unwrap()).unwrap();
        assert_eq!(v, again);
    }
    let manifest = read_json(&dir.path().join("run_manifest.json"));
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn synth_award_reproduces_the_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmm(&["synth-award", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["award_lookalike.csv", "award_lookalike.manifest.json"] {
        let ours = std::fs::read(dir.path().join(name)).unwrap();
        let shipped = std::fs::read(data_dir().join(name)).unwrap();
        assert!(ours == shipped, "{name} differs from the shipped copy");
    }
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    let out = dir.path().join("out");
    std::fs::write(
        &config,
        serde_json::json!({
            "data": award(),
            "method": ["rd"],
            "alpha": 0.1,
            "format": "json",
            "out": out_arg(&dir.path().join("ignored")),
        })
        .to_string(),
    )
    .unwrap();
    let o = pmm(&["estimate", "--config", &config.display().to_string(), "--format", "csv", "--out", &out_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("estimates.csv").exists());
    assert!(!dir.path().join("ignored").exists());
    let manifest = read_json(&out.join("run_manifest.json"));
    assert_eq!(manifest["alpha"], 0.1);
    // 90% interval: half-width is 1.644854 standard errors.
    let (_, rows) = read_csv(&out.join("contrasts.csv"));
    let (est, se, lo) = (num(&rows[1][2]), num(&rows[1][3]), num(&rows[1][4]));
    assert!(((est - lo) / se - 1.644854).abs() < 1e-4);

    std::fs::write(&config, r#"{"methd": "rd"}"#).unwrap();
    let o = pmm(&["estimate", "--config", &config.display().to_string(), "--data", &award()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mi_compare_writes_every_imputation_and_the_pooled_result() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmm(&[
        "mi-compare",
        "--data",
        &award(),
        "--method",
        "rd",
        "--imputations",
        "5",
        "--seed",
        "9",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("imputations.csv"));
    assert_eq!(header, ["imputation", "target", "estimate", "variance"]);
    // Three arms and two contrasts per imputation.
    assert_eq!(rows.len(), 5 * 5);
    let pooled = read_json(&dir.path().join("pooled.json"));
    let arms = pooled["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 3);
    for a in arms {
        let t = a["total"].as_f64().unwrap();
        let w = a["within"].as_f64().unwrap();
        let b = a["between"].as_f64().unwrap();
        assert!((t - (w + 1.2 * b)).abs() <= 1e-5 * t);
        assert!(a["direct"].is_number());
    }
    let again = pmm(&[
        "mi-compare",
        "--data",
        &award(),
        "--method",
        "rd",
        "--imputations",
        "5",
        "--seed",
        "9",
        "--out",
        &out_arg(&dir.path().join("b")),
    ]);
    assert!(again.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("imputations.csv")).unwrap(),
        std::fs::read(dir.path().join("b/imputations.csv")).unwrap()
    );
}

#[test]
fn simulate_writes_a_table_shaped_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmm(&[
        "simulate",
        "--kind",
        "rd",
        "--scenario",
        "null",
        "--reps",
        "100",
        "--methods",
        "rd",
        "--threads",
        "1",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("table.csv"));
    assert_eq!(header, ["Setting", "Method", "Group", "True", "Bias", "SD", "SE", "CP"]);
    let groups: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(groups, ["P", "E", "E-P"]);
    assert_eq!(rows[2][3], "0.000");
    let manifest = read_json(&dir.path().join("run_manifest.json"));
    assert_eq!(manifest["parallel"], false);
}
