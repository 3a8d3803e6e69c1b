use std::path::{Path, PathBuf};

use anyhow::Context;
use pmm_core::estimators::DeltaScope;
use pmm_core::mi::{run_mi, ImputationConfig, PooledResult};
use pmm_core::sensitivity::{linspace, pvalue_grid, tipping_boundary};
use pmm_core::sim::{award_lookalike, run_study, Effect, ScenarioKind, SimulationScenario, StudyConfig, AWARD_SEED};
use pmm_core::{
    adjust_baseline, derive_indicators, estimate, load_dataset, manifest_for, normal, summarize_patterns,
    write_dataset_to, DatasetManifest, EstimandResult, EstimateOptions, Execution, LongitudinalDataset, Method,
    PatternRule,
};
use serde_json::{json, Value};

use crate::args::{
    parse_range, pick, pick_bool, pick_list, usage, ConfigFile, DataArgs, EstimateArgs, Format, Kind, MiArgs,
    PatternMode, Scenario, SimulateArgs, TippingArgs,
};
use crate::report::{cell, fmt6, slug, Outputs};

pub const DEFAULT_SEED: u64 = 1;

/// Settings shared by every subcommand.
pub struct RunContext {
    pub config: ConfigFile,
    pub seed: u64,
    pub seed_given: bool,
    pub alpha: f64,
    pub format: Format,
    pub exec: Execution,
}

impl RunContext {
    fn z(&self) -> f64 {
        normal::quantile(1.0 - self.alpha / 2.0)
    }
}

fn parse_method(s: &str) -> anyhow::Result<Method> {
    s.parse::<Method>().map_err(|e| usage(e.to_string()))
}

fn parse_methods(list: &[String]) -> anyhow::Result<Vec<Method>> {
    if list.is_empty() {
        return Err(usage("at least one method is required"));
    }
    let mut out = Vec::new();
    for s in list {
        let m = parse_method(s)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

fn single_method(flag: Option<String>, config: &ConfigFile) -> anyhow::Result<Method> {
    let list = match flag {
        Some(m) => vec![m],
        None => pick_list(Vec::new(), config.method.clone()),
    };
    match list.as_slice() {
        [m] => parse_method(m),
        [] => Err(usage("--method is required")),
        _ => Err(usage("exactly one method is expected")),
    }
}

/// Dataset with pattern indicators derived, plus the resolved settings.
struct Loaded {
    ds: LongitudinalDataset,
    data: PathBuf,
    manifest: DatasetManifest,
    rule: PatternRule,
}

fn sibling_manifest(data: &Path) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.with_file_name(format!("{stem}.manifest.json"))
}

fn load(args: &DataArgs, config: &ConfigFile) -> anyhow::Result<Loaded> {
    let data = pick(args.data.clone(), config.data.clone()).ok_or_else(|| usage("--data is required"))?;
    if !data.is_file() {
        return Err(usage(format!("data file {} does not exist", data.display())));
    }
    let manifest_path = match pick(args.manifest.clone(), config.manifest.clone()) {
        Some(p) if !p.is_file() => return Err(usage(format!("manifest {} does not exist", p.display()))),
        Some(p) => Some(p),
        None => Some(sibling_manifest(&data)).filter(|p| p.is_file()),
    };
    let mut manifest = match &manifest_path {
        Some(p) => DatasetManifest::from_path(p).map_err(|e| usage(format!("manifest {}: {e}", p.display())))?,
        None => DatasetManifest::default(),
    };
    if let Some(r) = pick(args.reference.clone(), config.reference.clone()) {
        manifest.reference_arm = Some(r);
    }
    if manifest.reference_arm.is_none() {
        return Err(usage("a reference arm is required (--reference or the manifest's reference_arm)"));
    }
    let missing_b = pick_bool(args.missing_is_pattern_b, config.missing_is_pattern_b);
    let rule = match pick(args.pattern_rule, config.pattern_rule) {
        Some(PatternMode::A3Collapse) => PatternRule::A3Collapse,
        Some(PatternMode::ExplicitColumn) => PatternRule::ExplicitColumn { enforce_monotone: true, require_a3: false },
        Some(PatternMode::AdherenceDerived) => PatternRule::AdherenceDerived { missing_is_pattern_b: missing_b },
        None => manifest.pattern_rule.clone().unwrap_or(PatternRule::A3Collapse),
    };
    let raw = load_dataset(&data, &manifest)?;
    let ds = derive_indicators(&raw, rule.clone())?;
    manifest.pattern_rule = Some(rule.clone());
    Ok(Loaded { ds, data, manifest, rule })
}

fn data_echo(l: &Loaded) -> Value {
    json!({
        "data": l.data.display().to_string(),
        "reference": l.manifest.reference_arm,
        "pattern_rule": l.rule,
        "subjects": l.ds.len(),
        "arms": l.ds.arm_labels(),
    })
}

pub fn validate(ctx: &RunContext, args: &DataArgs, out: &mut Outputs) -> anyhow::Result<Value> {
    let l = load(args, &ctx.config)?;
    let summary = summarize_patterns(&l.ds)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (arm, per_visit) in summary.counts.iter().enumerate() {
        for (v, c) in per_visit.iter().enumerate() {
            let (label, visit) = (&summary.arm_labels[arm], &summary.visit_labels[v]);
            rows.push(vec![
                label.clone(),
                visit.clone(),
                c.total().to_string(),
                c.adherent_observed.to_string(),
                c.adherent_missing.to_string(),
                c.retrieved.to_string(),
                c.nonadherent_missing.to_string(),
                fmt6(c.pi()),
                fmt6(c.tau()),
                fmt6(c.phi()),
            ]);
            records.push(json!({
                "arm": label, "visit": visit, "n": c.total(),
                "adherent_observed": c.adherent_observed, "adherent_missing": c.adherent_missing,
                "retrieved": c.retrieved, "nonadherent_missing": c.nonadherent_missing,
                "pi": c.pi(), "tau": c.tau(), "phi": c.phi(),
            }));
        }
    }
    let non_monotone = l.ds.subjects().iter().filter(|s| !s.is_monotone()).count();
    let last = l.ds.visits() - 1;
    println!("{} subjects, {} visits, reference arm '{}'", l.ds.len(), l.ds.visits(), l.ds.arm_labels()[0]);
    println!("{:<16} {:>6} {:>10} {:>10} {:>10} {:>12}", "arm", "n", "adh_obs", "adh_miss", "retrieved", "nonadh_miss");
    for (arm, per_visit) in summary.counts.iter().enumerate() {
        let c = per_visit[last];
        println!(
            "{:<16} {:>6} {:>10} {:>10} {:>10} {:>12}",
            summary.arm_labels[arm],
            c.total(),
            c.adherent_observed,
            c.adherent_missing,
            c.retrieved,
            c.nonadherent_missing
        );
    }
    if non_monotone > 0 {
        println!("{non_monotone} subjects have intermittent missingness");
    }
    match ctx.format {
        Format::Csv => {
            out.write_csv(
                "patterns.csv",
                &[
                    "arm",
                    "visit",
                    "n",
                    "adherent_observed",
                    "adherent_missing",
                    "retrieved",
                    "nonadherent_missing",
                    "pi",
                    "tau",
                    "phi",
                ],
                &rows,
            )?;
        }
        Format::Json => {
            out.write_json(
                "patterns.json",
                json!({
                    "schema_version": crate::report::SCHEMA_VERSION,
                    "non_monotone_subjects": non_monotone,
                    "cells": records,
                }),
            )?;
        }
    }
    Ok(data_echo(&l))
}

fn arm_rows(ctx: &RunContext, r: &EstimandResult) -> Vec<Value> {
    let z = ctx.z();
    (0..r.arms())
        .map(|i| {
            let se = r.mean_se(i);
            json!({
                "arm": r.arm_labels[i],
                "n": r.arm_sizes[i],
                "mean": r.means[i],
                "se": se,
                "ci_lower": r.means[i] - z * se,
                "ci_upper": r.means[i] + z * se,
                "missing_share": r.q[i],
            })
        })
        .collect()
}

fn contrast_rows(ctx: &RunContext, r: &EstimandResult) -> Vec<Value> {
    let z = ctx.z();
    r.contrasts()
        .into_iter()
        .map(|c| {
            json!({
                "contrast": c.label,
                "estimate": c.estimate,
                "se": c.se,
                "ci_lower": c.estimate - z * c.se,
                "ci_upper": c.estimate + z * c.se,
                "p_value": c.p_value,
            })
        })
        .collect()
}

fn as_cells(v: &Value, keys: &[&str]) -> Vec<String> {
    keys.iter()
        .map(|k| match &v[*k] {
            Value::String(s) => s.clone(),
            Value::Number(n) if n.is_u64() || n.is_i64() => n.to_string(),
            Value::Number(n) => cell(n.as_f64()),
            Value::Bool(b) => b.to_string(),
            _ => String::new(),
        })
        .collect()
}

const ARM_KEYS: [&str; 7] = ["arm", "n", "mean", "se", "ci_lower", "ci_upper", "missing_share"];
const CONTRAST_KEYS: [&str; 6] = ["contrast", "estimate", "se", "ci_lower", "ci_upper", "p_value"];

fn prefixed(method: Method, cells: Vec<String>) -> Vec<String> {
    std::iter::once(method.name().to_string()).chain(cells).collect()
}

fn theta_json(r: &EstimandResult) -> anyhow::Result<Value> {
    let stack = r.stack.as_ref().context("the estimate carries no stacked parameter vector")?;
    let cov: Vec<Vec<f64>> = (0..stack.len()).map(|i| stack.covariance.row(i).iter().copied().collect()).collect();
    Ok(json!({
        "schema_version": crate::report::SCHEMA_VERSION,
        "method": r.method.name(),
        "theta": stack.theta.iter().collect::<Vec<_>>(),
        "covariance": cov,
        "index": stack.index,
    }))
}

pub fn estimate_cmd(ctx: &RunContext, args: &EstimateArgs, out: &mut Outputs) -> anyhow::Result<Value> {
    let c = &ctx.config;
    let methods = parse_methods(&pick_list(args.method.clone(), c.method.clone().or(c.methods.clone())))?;
    let adjust = pick_bool(args.adjust_baseline, c.adjust_baseline);
    let pooled = pick_bool(args.pooled_baseline, c.pooled_baseline);
    let dump_fits = pick_bool(args.dump_fits, c.dump_fits);
    let dump_theta = pick_bool(args.dump_theta, c.dump_theta);
    let l = load(&args.data, c)?;
    let opts = EstimateOptions { pooled_baseline: pooled, ..EstimateOptions::default() };
    let mut results = Vec::new();
    for &m in &methods {
        let r = estimate(&l.ds, m, &opts)?;
        let r = if adjust { adjust_baseline(&r, None)? } else { r };
        results.push(r);
    }

    let mut arm_csv = Vec::new();
    let mut contrast_csv = Vec::new();
    let mut json_results = Vec::new();
    for r in &results {
        let arms = arm_rows(ctx, r);
        let contrasts = contrast_rows(ctx, r);
        arm_csv.extend(arms.iter().map(|a| prefixed(r.method, as_cells(a, &ARM_KEYS))));
        contrast_csv.extend(contrasts.iter().map(|a| prefixed(r.method, as_cells(a, &CONTRAST_KEYS))));
        println!("{}", r.method);
        for a in &contrasts {
            println!(
                "  {:<28} {:>10} (SE {}) p = {}",
                a["contrast"].as_str().unwrap_or(""),
                fmt6(a["estimate"].as_f64().unwrap_or(f64::NAN)),
                fmt6(a["se"].as_f64().unwrap_or(f64::NAN)),
                fmt6(a["p_value"].as_f64().unwrap_or(f64::NAN)),
            );
        }
        json_results.push(json!({
            "method": r.method.name(),
            "baseline_adjusted": r.baseline_adjusted,
            "arms": arms,
            "contrasts": contrasts,
        }));
    }
    match ctx.format {
        Format::Csv => {
            let mut h: Vec<&str> = vec!["method"];
            h.extend(ARM_KEYS);
            out.write_csv("estimates.csv", &h, &arm_csv)?;
            let mut h: Vec<&str> = vec!["method"];
            h.extend(CONTRAST_KEYS);
            out.write_csv("contrasts.csv", &h, &contrast_csv)?;
        }
        Format::Json => {
            out.write_json(
                "estimates.json",
                json!({
                    "schema_version": crate::report::SCHEMA_VERSION,
                    "alpha": ctx.alpha,
                    "reference": l.ds.arm_labels()[0],
                    "results": json_results,
                }),
            )?;
        }
    }
    for r in &results {
        if dump_fits {
            out.write_json(&format!("fits_{}.json", r.method.name()), serde_json::to_value(&r.fits)?)?;
        }
        if dump_theta {
            out.write_json(&format!("theta_{}.json", r.method.name()), theta_json(r)?)?;
        }
    }
    let mut echo = data_echo(&l);
    echo["methods"] = json!(methods.iter().map(|m| m.name()).collect::<Vec<_>>());
    echo["adjust_baseline"] = json!(adjust);
    echo["pooled_baseline"] = json!(pooled);
    Ok(echo)
}

pub fn tipping_cmd(ctx: &RunContext, args: &TippingArgs, out: &mut Outputs) -> anyhow::Result<Value> {
    let c = &ctx.config;
    let method = single_method(args.method.clone(), c)?;
    let one_way = pick_bool(args.one_way, c.one_way);
    let b_only = pick_bool(args.pattern_b_only, c.pattern_b_only);
    let resolution = pick(args.resolution, c.resolution).unwrap_or(201);
    if resolution < 2 {
        return Err(usage("--resolution must be at least 2"));
    }
    let r0 = parse_range(&pick(args.delta0_range.clone(), c.delta0_range.clone()).unwrap_or("-10:10".into()))?;
    let r1 = parse_range(&pick(args.delta1_range.clone(), c.delta1_range.clone()).unwrap_or("-10:10".into()))?;
    let l = load(&args.data, c)?;
    let arms: Vec<usize> = match pick(args.arm.clone(), c.arm.clone()) {
        Some(label) => {
            let i =
                l.ds.arm_labels()
                    .iter()
                    .position(|a| *a == label)
                    .ok_or_else(|| usage(format!("unknown arm '{label}'")))?;
            if i == 0 {
                return Err(usage("--arm must not be the reference arm"));
            }
            vec![i]
        }
        None => (1..l.ds.arm_count()).collect(),
    };
    let opts = EstimateOptions {
        delta_scope: if b_only { DeltaScope::PatternBOnly } else { DeltaScope::AllImputed },
        ..EstimateOptions::default()
    };
    let res = estimate(&l.ds, method, &opts)?;
    let d0 = if one_way { vec![0.0] } else { linspace(r0.0, r0.1, resolution) };
    let d1 = linspace(r1.0, r1.1, resolution);
    for &arm in &arms {
        let label = &res.arm_labels[arm];
        let boundary = tipping_boundary(&res, arm, ctx.alpha, &d0)?;
        let grid = pvalue_grid(&res, arm, &d0, &d1, ctx.exec)?;
        println!("{} vs {}: one-way tipping points {:?}", label, res.arm_labels[0], boundary.one_way);
        let name = slug(label);
        match ctx.format {
            Format::Csv => {
                let rows: Vec<Vec<String>> = boundary
                    .points
                    .iter()
                    .map(|p| vec![fmt6(p.delta0), cell(p.roots.first().copied()), cell(p.roots.get(1).copied())])
                    .collect();
                out.write_csv(&format!("boundary_{name}.csv"), &["delta0", "delta1_root1", "delta1_root2"], &rows)?;
                let mut rows = Vec::with_capacity(d0.len() * d1.len());
                for (a, &x) in d0.iter().enumerate() {
                    for (b, &y) in d1.iter().enumerate() {
                        rows.push(vec![fmt6(x), fmt6(y), fmt6(grid.p[a][b])]);
                    }
                }
                out.write_csv(&format!("grid_{name}.csv"), &["delta0", "delta1", "p"], &rows)?;
            }
            Format::Json => {
                out.write_json(
                    &format!("tipping_{name}.json"),
                    json!({
                        "schema_version": crate::report::SCHEMA_VERSION,
                        "method": method.name(),
                        "arm": label,
                        "reference": res.arm_labels[0],
                        "alpha": ctx.alpha,
                        "direction": boundary.direction,
                        "variance_quadratic": boundary.quadratic,
                        "one_way": boundary.one_way,
                        "boundary": boundary.points,
                        "grid": {"delta0": grid.delta0, "delta1": grid.delta1, "p": grid.p},
                    }),
                )?;
            }
        }
    }
    let mut echo = data_echo(&l);
    echo["method"] = json!(method.name());
    echo["delta0_range"] = json!([r0.0, r0.1]);
    echo["delta1_range"] = json!([r1.0, r1.1]);
    echo["resolution"] = json!(resolution);
    echo["one_way"] = json!(one_way);
    echo["pattern_b_only"] = json!(b_only);
    Ok(echo)
}

pub fn simulate_cmd(ctx: &RunContext, args: &SimulateArgs, out: &mut Outputs) -> anyhow::Result<Value> {
    let c = &ctx.config;
    let methods = parse_methods(&pick_list(args.methods.clone(), c.methods.clone().or(c.method.clone())))?;
    let kind = pick(args.kind, c.kind).unwrap_or(Kind::Pmm);
    let scenario = pick(args.scenario, c.scenario).unwrap_or(Scenario::Diff);
    let reps = pick(args.reps, c.reps).unwrap_or(2000);
    let mi = pick(args.mi, c.mi);
    let oracle = pick(args.oracle_size, c.oracle_size).unwrap_or(1_000_000);
    if reps < 100 {
        return Err(usage(format!("--reps {reps} is below the minimum of 100")));
    }
    if oracle < 1_000_000 {
        return Err(usage(format!("--oracle-size {oracle} is below the minimum of 1000000")));
    }
    if mi.is_some_and(|m| m < 2) {
        return Err(usage("--mi needs at least 2 imputations"));
    }
    let sc = SimulationScenario::standard(
        match kind {
            Kind::Pmm => ScenarioKind::Pmm,
            Kind::Rd => ScenarioKind::Rd,
        },
        match scenario {
            Scenario::Null => Effect::Null,
            Scenario::Diff => Effect::Differential,
        },
    );
    let mut cfg = StudyConfig::new(methods.clone(), reps, ctx.seed);
    cfg.mi_imputations = mi;
    cfg.oracle_size = oracle;
    cfg.exec = ctx.exec;
    let metrics = run_study(&sc, &cfg)?;
    match ctx.format {
        Format::Csv => {
            let mut buf = Vec::new();
            metrics.write_csv(&mut buf)?;
            out.write("table.csv", &buf)?;
            let rows: Vec<Vec<String>> = metrics
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.method.name().to_string(),
                        r.estimator.label().to_string(),
                        r.group.clone(),
                        fmt6(r.truth),
                        fmt6(r.truth_mc_se),
                        fmt6(r.bias),
                        fmt6(r.bias_mc_se),
                        fmt6(r.sd),
                        fmt6(r.sd_mc_se),
                        fmt6(r.se),
                        fmt6(r.se_mc_se),
                        fmt6(r.cp),
                        fmt6(r.cp_mc_se),
                        r.reps_used.to_string(),
                        r.failures.to_string(),
                    ]
                })
                .collect();
            out.write_csv(
                "metrics.csv",
                &[
                    "method",
                    "estimator",
                    "group",
                    "truth",
                    "truth_mc_se",
                    "bias",
                    "bias_mc_se",
                    "sd",
                    "sd_mc_se",
                    "se",
                    "se_mc_se",
                    "cp",
                    "cp_mc_se",
                    "reps_used",
                    "failures",
                ],
                &rows,
            )?;
        }
        Format::Json => {
            let mut v = serde_json::to_value(&metrics)?;
            v["schema_version"] = json!(crate::report::SCHEMA_VERSION);
            out.write_json("metrics.json", v)?;
        }
    }
    let mut buf = Vec::new();
    metrics.write_csv(&mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(json!({
        "kind": kind,
        "scenario": scenario,
        "reps": reps,
        "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "mi": mi,
        "oracle_size": oracle,
    }))
}

fn pooled_json(p: &PooledResult) -> Value {
    json!({
        "estimate": p.estimate, "within": p.within, "between": p.between, "total": p.total,
        "se": p.se, "df": p.df, "ci_lower": p.ci_lower, "ci_upper": p.ci_upper, "p_value": p.p_value,
    })
}

pub fn mi_cmd(ctx: &RunContext, args: &MiArgs, out: &mut Outputs) -> anyhow::Result<Value> {
    let c = &ctx.config;
    let method = single_method(args.method.clone(), c)?;
    let m = pick(args.imputations, c.imputations).unwrap_or(200);
    if m < 2 {
        return Err(usage("--imputations must be at least 2"));
    }
    let l = load(&args.data, c)?;
    let mut cfg = ImputationConfig::new(method, m, ctx.seed);
    cfg.alpha = ctx.alpha;
    cfg.exec = ctx.exec;
    let mi = run_mi(&l.ds, &cfg)?;
    let opts = EstimateOptions { pooled_baseline: method == Method::R2b, ..EstimateOptions::default() };
    let direct = estimate(&l.ds, method, &opts)?;
    let labels = l.ds.arm_labels();
    let contrast_labels: Vec<String> = (1..labels.len()).map(|i| format!("{} - {}", labels[i], labels[0])).collect();

    // Direct counterparts on the imputation scale: mean change from baseline when
    // the dataset names a baseline outcome.
    let base = l.ds.baseline_outcome();
    let arm_direct: Vec<f64> = (0..labels.len())
        .map(|i| {
            let members = l.ds.arm_subjects(i);
            let y0 = base
                .map(|b| members.iter().map(|s| s.covariates()[b]).sum::<f64>() / members.len() as f64)
                .unwrap_or(0.0);
            direct.means[i] - y0
        })
        .collect();

    let mut rows = Vec::new();
    for (r, a) in mi.per_imputation.iter().enumerate() {
        for (i, (e, v)) in a.arms.iter().enumerate() {
            rows.push(vec![(r + 1).to_string(), labels[i].clone(), fmt6(*e), fmt6(*v)]);
        }
        for (i, (e, v)) in a.contrasts.iter().enumerate() {
            rows.push(vec![(r + 1).to_string(), contrast_labels[i].clone(), fmt6(*e), fmt6(*v)]);
        }
    }
    match ctx.format {
        Format::Csv => {
            out.write_csv("imputations.csv", &["imputation", "target", "estimate", "variance"], &rows)?;
        }
        Format::Json => {
            let recs: Vec<Value> = mi
                .per_imputation
                .iter()
                .map(|a| json!({"arms": a.arms, "contrasts": a.contrasts, "df": a.df}))
                .collect();
            out.write_json(
                "imputations.json",
                json!({"schema_version": crate::report::SCHEMA_VERSION, "imputations": recs}),
            )?;
        }
    }
    let arms: Vec<Value> = mi
        .arms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut v = pooled_json(p);
            v["arm"] = json!(labels[i]);
            v["direct"] = json!(arm_direct[i]);
            v
        })
        .collect();
    let contrasts: Vec<Value> = mi
        .contrasts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = direct.contrast(i + 1).expect("valid arm");
            let mut v = pooled_json(p);
            v["contrast"] = json!(contrast_labels[i]);
            v["direct"] = json!({"estimate": d.estimate, "se": d.se, "p_value": d.p_value});
            v
        })
        .collect();
    for (i, p) in mi.contrasts.iter().enumerate() {
        println!(
            "{:<28} MI {} (SE {})  direct {} (SE {})",
            contrast_labels[i],
            fmt6(p.estimate),
            fmt6(p.se),
            fmt6(direct.contrast(i + 1).expect("valid arm").estimate),
            fmt6(direct.contrast(i + 1).expect("valid arm").se)
        );
    }
    out.write_json(
        "pooled.json",
        json!({
            "schema_version": crate::report::SCHEMA_VERSION,
            "method": method.name(),
            "imputations": m,
            "alpha": ctx.alpha,
            "arms": arms,
            "contrasts": contrasts,
        }),
    )?;
    let mut echo = data_echo(&l);
    echo["method"] = json!(method.name());
    echo["imputations"] = json!(m);
    Ok(echo)
}

pub fn synth_award(ctx: &RunContext, out: &mut Outputs) -> anyhow::Result<Value> {
    let seed = if ctx.seed_given { ctx.seed } else { AWARD_SEED };
    let ds = award_lookalike(seed)?;
    let mut buf = Vec::new();
    write_dataset_to(&ds, &mut buf)?;
    out.write("award_lookalike.csv", &buf)?;
    let mut manifest = manifest_for(&ds);
    manifest.pattern_rule = Some(PatternRule::AdherenceDerived { missing_is_pattern_b: true });
    // Field order of the struct, unlike write_json which sorts keys.
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    out.write("award_lookalike.manifest.json", text.as_bytes())?;
    println!("{} subjects written", ds.len());
    Ok(json!({"award_seed": seed}))
}
