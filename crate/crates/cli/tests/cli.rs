use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polsbe_core::dp::value_dp;
use polsbe_core::envgen::make_adversary;
use polsbe_core::model::LinearMdpModel;
use polsbe_core::policy::PolicyTable;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn polsbe(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_polsbe"));
    cmd.args(args).env_remove("POLSBE_OUT_DIR");
    if let Some(out) = out {
        cmd.arg("--out").arg(out);
    }
    cmd.output().expect("binary runs")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn column(csv_text: &str, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn zero_adversary_gives_zero_regret_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let out = polsbe(&["run", "--config", &cfg("zero.json")], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut csvs = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            csvs += 1;
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(column(&text, "cum_regret").iter().all(|&x| x == 0.0), "{}", path.display());
        }
    }
    assert_eq!(csvs, 8);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["adversary_kind"], "fixed_schedule");
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 8);
}

#[test]
fn decomposition_columns_present_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    assert!(polsbe(&["run", "--config", &cfg("simulator.json"), "--seed", "3"], Some(dir.path())).status.success());
    let text = std::fs::read_to_string(dir.path().join("polsbe_simulator_seed3.csv")).unwrap();
    assert!(text.starts_with("k,value_pik,value_pistar,cum_regret,bias1,bias2,omd,exploration\n"));
    let regret: Vec<f64> = column(&text, "value_pik").iter().zip(column(&text, "value_pistar")).map(|(a, b)| a - b).collect();
    let parts = ["bias1", "bias2", "omd", "exploration"].map(|c| column(&text, c));
    for (k, r) in regret.iter().enumerate() {
        let sum: f64 = parts.iter().map(|p| p[k]).sum();
        assert!((sum - r).abs() < 1e-8);
    }
    let uniform = std::fs::read_to_string(dir.path().join("uniform_seed3.csv")).unwrap();
    assert!(uniform.starts_with("k,value_pik,value_pistar,cum_regret\n"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        assert!(polsbe(&["run", "--config", &cfg("oscillating.json"), "--jobs", jobs], Some(dir.path())).status.success());
    }
    for name in ["polsbe_blocking_seed2.csv", "uniform_seed0.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn uniform_baseline_matches_direct_dp() {
    let dir = tempfile::tempdir().unwrap();
    assert!(polsbe(&["run", "--config", &cfg("oscillating.json"), "--seed", "4"], Some(dir.path())).status.success());
    let text = std::fs::read_to_string(dir.path().join("uniform_seed4.csv")).unwrap();
    let config: polsbe_cli::config::ExperimentConfig = polsbe_cli::config::load(&configs().join("oscillating.json")).unwrap();
    let model = config.load_model(&configs()).unwrap();
    let adversary = make_adversary(&config.adversary_for_seed(4), &model).unwrap();
    let schedule = polsbe_core::model::CostSchedule {
        episodes: (0..config.episodes).map(|k| adversary.next_costs(k, &[])).collect(),
    };
    let (best, _) = polsbe_core::dp::best_in_hindsight(&model, &schedule);
    let uniform = PolicyTable::uniform(model.horizon(), model.num_states(), model.num_actions());
    let direct: f64 = schedule
        .episodes
        .iter()
        .map(|c| {
            let l = model.loss_table(c);
            value_dp(&model, &uniform, &l).initial_value(&model) - value_dp(&model, &best, &l).initial_value(&model)
        })
        .sum();
    let reported = *column(&text, "cum_regret").last().unwrap();
    assert!((reported - direct).abs() < 1e-8 * direct.abs().max(1.0));
}

#[test]
fn config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"environment\": {\"generate\": {\"kind\": \"tabular_onehot\",\n    \"S\": 2, \"A\": 2, \"H\": 2, \"d\": 4, \"sed\": 1}}\n}\n").unwrap();
    let out = polsbe(&["run", "--config", bad.to_str().unwrap()], Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown field `sed`") && err.contains("line 3"), "{err}");

    assert_eq!(polsbe(&["run"], Some(dir.path())).status.code(), Some(2));
    assert_eq!(polsbe(&["run", "--config", "/nonexistent.json"], None).status.code(), Some(2));
    assert_eq!(polsbe(&["bogus-command"], None).status.code(), Some(2));

    // a γ that MGR refuses is a config error too
    let text = std::fs::read_to_string(configs().join("zero.json")).unwrap().replace("\"gamma\": 0.2", "\"gamma\": 0.0");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(polsbe(&["run", "--config", bad.to_str().unwrap()], Some(dir.path())).status.code(), Some(2));
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_polsbe"))
        .args(["gen-env", "--config", &cfg("generator.json"), "--seed", "9"])
        .env("POLSBE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("environment.json")).unwrap();
    let model = LinearMdpModel::<f64>::from_json(&text).unwrap();
    assert_eq!((model.num_states(), model.num_actions(), model.horizon(), model.feature_dim()), (5, 3, 4, 3));
}

#[test]
fn generated_environment_file_can_be_run() {
    let dir = tempfile::tempdir().unwrap();
    assert!(polsbe(&["gen-env", "--config", &cfg("generator.json")], Some(dir.path())).status.success());
    let config = std::fs::read_to_string(configs().join("zero.json"))
        .unwrap()
        .replace(
            "{\"generate\": {\"kind\": \"simplex_mixture\", \"S\": 3, \"A\": 2, \"H\": 3, \"d\": 2, \"seed\": 1}}",
            "{\"file\": \"environment.json\"}",
        );
    assert!(config.contains("environment.json"));
    let path = dir.path().join("exp.json");
    std::fs::write(&path, config).unwrap();
    let out = polsbe(&["run", "--config", path.to_str().unwrap()], Some(&dir.path().join("out")));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"num_states\": 5"));
}

#[test]
fn sweep_aggregates_cells() {
    let dir = tempfile::tempdir().unwrap();
    assert!(polsbe(&["sweep", "--config", &cfg("sweep.json")], Some(dir.path())).status.success());
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let agent: Vec<(usize, f64, f64, f64)> = rows
        .iter()
        .filter(|x| &x[0] == "polsbe_blocking")
        .map(|x| (x[1].parse().unwrap(), x[4].parse().unwrap(), x[5].parse().unwrap(), x[6].parse().unwrap()))
        .collect();
    for w in agent.windows(2) {
        assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1, "mean regret nondecreasing in K");
    }
    for (_, _, std, se) in agent {
        assert!((se - std / 2.0).abs() < 1e-12);
    }
}

#[test]
fn zero_sweep_is_all_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let zero: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(configs().join("zero.json")).unwrap()).unwrap();
    let sweep = serde_json::json!({"experiment": zero, "grid": {"episodes": [16, 32]}, "replications": 2});
    let path = dir.path().join("sweep.json");
    std::fs::write(&path, sweep.to_string()).unwrap();
    assert!(polsbe(&["sweep", "--config", path.to_str().unwrap()], Some(dir.path())).status.success());
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[4], "0");
        assert_eq!(&rec[5], "0");
    }
}

#[test]
fn validate_passes_and_detects_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["validate", "--instances", "20", "--trials", "5"];
    let ok = polsbe(&args, Some(&dir.path().join("ok")));
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ok/validation_report.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);
    let checks = report["checks"].as_array().unwrap();
    for c in checks {
        match c["kind"].as_str().unwrap() {
            "statistical" => assert!(c["ci"].is_number(), "{c}"),
            _ => assert!(c.get("ci").is_none(), "{c}"),
        }
    }

    let mut faulty = args.to_vec();
    faulty.extend(["--inject-fault", "disable-clipping"]);
    let bad = polsbe(&faulty, Some(&dir.path().join("bad")));
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL bonus_clipping")), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("FAIL")).count(), 1);
}

#[test]
fn bench_reports_both_kernels() {
    let out = polsbe(&["bench"], None);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mgr") && stdout.contains("olspe"));
}
