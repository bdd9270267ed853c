mod common;

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tempfile::TempDir;

use common::{checkpoint_param_count, json_file, run, run_ok, s, write_config};

fn tiny(estimator: Value) -> Value {
    json!({
        "version": 1, "seed": 11,
        "dataset": {"name": "sine", "overrides": {"n": 400, "length": 4}},
        "model": {"hidden": 8, "n_blocks": 1, "time_embed_dim": 4},
        "schedule": {"kind": "cosine", "steps": 12},
        "train": {"steps": 150, "batch": 64},
        "estimator": estimator,
        "posterior": {"n_pairs": 128},
        "n_samples": 60,
        "eval": {"resamples": 100, "discriminator": {"steps": 150, "batch": 32}}
    })
}

/// Trains once and scores with every estimator in `estimators`, each into
/// its own directory next to the checkpoint.
fn pipeline(dir: &Path, estimators: &[(&str, Value)]) -> PathBuf {
    let base = write_config(dir, "base.json", &tiny(json!({"kind": "last_layer"})));
    let out = dir.join("run");
    run_ok(&["--config", s(&base), "--out", s(&out), "gen-data"]);
    run_ok(&["--config", s(&base), "--out", s(&out), "train", "--data", s(&out.join("data.csv"))]);
    for (name, est) in estimators {
        let cfg = write_config(dir, &format!("{name}.json"), &tiny(est.clone()));
        let target = out.join(name);
        run_ok(&[
            "--config",
            s(&cfg),
            "--out",
            s(&target),
            "score",
            "--checkpoint",
            s(&out.join("checkpoint.flre")),
            "--data",
            s(&out.join("data.csv")),
        ]);
    }
    out
}

#[test]
fn full_pipeline_writes_schema_valid_metrics() {
    let tmp = TempDir::new().unwrap();
    let ests = [
        ("flare", json!({"kind": "flare", "m": 40})),
        ("llla", json!({"kind": "last_layer"})),
        ("bd", json!({"kind": "predictive_variance", "draws": 4})),
    ];
    let out = pipeline(tmp.path(), &ests);
    let samples: Vec<Vec<u8>> = ests.iter().map(|(n, _)| std::fs::read(out.join(n).join("samples.csv")).unwrap()).collect();
    assert!(samples.windows(2).all(|w| w[0] == w[1]), "estimators must share the sampled paths");

    let cfg = tmp.path().join("base.json");
    let eval_out = out.join("eval");
    let res = run_ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(&eval_out),
        "eval",
        "--real",
        s(&out.join("data.csv")),
        "--samples",
        s(&out.join("flare/samples.csv")),
        "--scores",
        s(&out.join("flare/scores_flare.csv")),
        s(&out.join("llla/scores_llla.csv")),
        &format!("bd={}", s(&out.join("bd/scores_bayesdiff_style.csv"))),
    ]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().count(), 3, "{stdout}");

    let metrics = json_file(&eval_out.join("metrics.json"));
    let schema = json_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/metrics.schema.json"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&metrics).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(metrics["reports"].as_array().unwrap().len(), 3);
    assert_eq!(metrics["comparisons"].as_array().unwrap().len(), 6);
    let parsed: flare_uq::commands::MetricsFile = serde_json::from_value(metrics).unwrap();
    assert_eq!(parsed.version, flare_uq::commands::METRICS_VERSION);
    assert!(eval_out.join("filter_flare.svg").exists());

    let manifest = json_file(&eval_out.join("eval_manifest.json"));
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["inputs"]["flare"]["file"], "scores_flare.csv");
    let aleatoric = std::fs::read_to_string(out.join("flare/aleatoric_flare.csv")).unwrap();
    assert_eq!(aleatoric.lines().count(), 61);
    assert!(!out.join("bd/aleatoric_bayesdiff_style.csv").exists());
}

#[test]
fn flare_with_every_parameter_matches_the_full_fisher() {
    let tmp = TempDir::new().unwrap();
    let base = write_config(tmp.path(), "probe.json", &tiny(json!({"kind": "full_fisher"})));
    let probe = tmp.path().join("probe");
    run_ok(&["--config", s(&base), "--out", s(&probe), "train"]);
    let p = checkpoint_param_count(&probe.join("checkpoint.flre"));
    let out = pipeline(tmp.path(), &[("full", json!({"kind": "full_fisher"})), ("all", json!({"kind": "flare", "m": p}))]);
    let full = std::fs::read_to_string(out.join("full/scores_full_fisher.csv")).unwrap();
    let all = std::fs::read_to_string(out.join("all/scores_flare.csv")).unwrap();
    assert_eq!(full, all);
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["--out", s(&out), "gen-data"]).status.code(), Some(2));
    assert_eq!(run(&["--out", s(&out), "no-such-command"]).status.code(), Some(2));
    let bad = write_config(tmp.path(), "bad.json", &json!({"version": 1, "seed": 1, "dataset": {"name": "sine"}, "typo": 3}));
    let res = run(&["--config", s(&bad), "--out", s(&out), "gen-data"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("typo"));
    let cfg = write_config(tmp.path(), "ok.json", &tiny(json!({"kind": "last_layer"})));
    let missing = run(&["--config", s(&cfg), "--out", s(&out), "score", "--checkpoint", s(&tmp.path().join("nope.flre"))]);
    assert_eq!(missing.status.code(), Some(2));

    assert_eq!(run(&["--out", s(&out), "validate", "unroll"]).status.code(), Some(0));
    let report = json_file(&out.join("validate_unroll.json"));
    assert_eq!(report["pass"], true);
    let hard = write_config(
        tmp.path(),
        "hard.json",
        &json!({"version": 1, "seed": 3, "dataset": {"name": "sine"},
                "eval": {"sketch": {"instance": {"p": 128, "nd": 64, "rank": 32}, "m_grid": [40, 64], "trials": 5}}}),
    );
    assert_eq!(run(&["--config", s(&hard), "--out", s(&out), "validate", "sketch"]).status.code(), Some(1));
    assert_eq!(json_file(&out.join("validate_sketch.json"))["pass"], false);
}

#[test]
fn schedule_mismatch_is_refused() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &tiny(json!({"kind": "last_layer"})));
    let out = tmp.path().join("o");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "train"]);
    let mut other = tiny(json!({"kind": "last_layer"}));
    other["schedule"]["steps"] = json!(13);
    let cfg2 = write_config(tmp.path(), "b.json", &other);
    let res = run(&["--config", s(&cfg2), "--out", s(&out), "score", "--checkpoint", s(&out.join("checkpoint.flre"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("schedule"));
}

#[test]
fn grid_preset_records_its_schedule_length() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "grid.json", &json!({"version": 1, "seed": 5, "dataset": {"name": "grid"}}));
    let out = tmp.path().join("o");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "gen-data"]);
    let manifest = json_file(&out.join("gen_data_manifest.json"));
    assert_eq!(manifest["resolved"]["schedule_steps"], 800);
    assert_eq!(manifest["resolved"]["model"]["total_steps"], 800);
    let sidecar = json_file(&out.join("data.json"));
    assert_eq!(sidecar["dim"], 2);
    assert_eq!(sidecar["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &tiny(json!({"kind": "last_layer"})));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run_ok(&["--config", s(&cfg), "--out", s(&a), "gen-data"]);
    run_ok(&["--config", s(&cfg), "--out", s(&b), "--seed", "11", "gen-data"]);
    run_ok(&["--config", s(&cfg), "--out", s(&c), "--seed", "12", "gen-data"]);
    let read = |d: &Path| std::fs::read(d.join("data.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn ablation_scores_grow_with_the_keep_fraction() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny(json!({"kind": "last_layer"}));
    cfg["ablate"] = json!({"fractions": [0.1, 0.5, 1.0], "n_samples": 10});
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("o");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "train"]);
    let res = run_ok(&["--config", s(&cfg), "--out", s(&out), "ablate-keep", "--checkpoint", s(&out.join("checkpoint.flre"))]);
    assert_eq!(String::from_utf8_lossy(&res.stdout).lines().count(), 3);
    let mut rdr = csv::Reader::from_path(out.join("ablate_keep.csv")).unwrap();
    let means: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(means.len(), 3);
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
    assert!(out.join("ablate_keep.svg").exists());
}

#[test]
fn indistinguishable_samples_report_undefined_gap_closure() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let rows = |n: usize| {
        let mut text = String::from("x0,x1\n");
        for _ in 0..n {
            text.push_str("0.25,-0.5\n");
        }
        text
    };
    std::fs::write(dir.join("real.csv"), rows(200)).unwrap();
    std::fs::write(dir.join("samples.csv"), rows(100)).unwrap();
    let mut scores = String::from("sample_id,score,raw_trace\n");
    for i in 0..100 {
        scores.push_str(&format!("{i},{},{}\n", i as f64, 2.0 * i as f64));
    }
    std::fs::write(dir.join("scores_const.csv"), scores).unwrap();
    let cfg = write_config(
        dir,
        "c.json",
        &json!({"version": 1, "seed": 2, "dataset": {"name": "grid"}, "eval": {"resamples": 100, "discriminator": {"steps": 20}}}),
    );
    let out = dir.join("o");
    let res = run_ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "eval",
        "--real",
        s(&dir.join("real.csv")),
        "--samples",
        s(&dir.join("samples.csv")),
        "--scores",
        s(&dir.join("scores_const.csv")),
    ]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("gap-closure n/a"), "{stdout}");
    let metrics = json_file(&out.join("metrics.json"));
    assert_eq!(metrics["reports"][0]["acc_unfiltered"], 0.5);
    assert!(metrics["reports"][0]["gap_closure_pct"].is_null());
}

#[test]
fn chirp_rows_have_eighty_columns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &json!({"version": 1, "seed": 1, "dataset": {"name": "chirp", "overrides": {"n": 20}}}));
    let out = tmp.path().join("o");
    run_ok(&["--config", s(&cfg), "--out", s(&out), "gen-data"]);
    let text = std::fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 80);
    assert_eq!(text.lines().count(), 21);
    let manifest = json_file(&out.join("gen_data_manifest.json"));
    assert_eq!(manifest["resolved"]["filter_percentile"], 25.0);
}
