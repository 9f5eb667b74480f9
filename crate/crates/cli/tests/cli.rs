//! Runs the built binary. Stable outputs are compared against files in
//! `tests/golden`; set `UPDATE_GOLDEN=1` to rewrite them.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

const KEYS: [&str; 11] = [
    "CONFIG", "STORE", "UNIVERSE", "PLAN", "MODEL", "SEED", "PERIOD", "PORT", "SIM_PORT", "VENDOR", "OUT",
];

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

fn command(dir: &Path, args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spotarc"));
    cmd.current_dir(dir).args(args);
    for k in KEYS {
        cmd.env_remove(format!("SPOTLAKE_{k}"));
    }
    cmd
}

fn run_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = command(dir, args);
    cmd.envs(env.iter().copied());
    cmd.output().unwrap()
}

fn run(dir: &Path, args: &[&str]) -> Output {
    run_env(dir, args, &[])
}

/// Stdout of a run that must succeed.
fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and stderr of a run that must fail.
fn fails(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} succeeded");
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}; run with UPDATE_GOLDEN=1 to create it", path.display()));
    assert!(expected == actual, "{name} differs from its golden file\n--- expected\n{expected}\n--- actual\n{actual}");
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn plan_from_universe() {
    let dir = tmp();
    let plan = ok(dir.path(), &["plan", "--universe", &fixture("universe.json")]);
    golden("plan.json", &plan);
    let summary = ok(dir.path(), &["plan", "--universe", &fixture("universe.json"), "--out", "p.json"]);
    golden("plan_summary.json", &summary);
    assert_eq!(std::fs::read_to_string(dir.path().join("p.json")).unwrap(), plan);
}

#[test]
fn plan_from_support_map_with_small_capacity() {
    let dir = tmp();
    std::fs::write(
        dir.path().join("map.json"),
        r#"{"m5.large": {"us-east-1": 3, "us-west-2": 2, "eu-west-1": 2}}"#,
    )
    .unwrap();
    let plan: Value = serde_json::from_str(&ok(dir.path(), &["plan", "--support-map", "map.json", "--capacity", "4", "--per-account", "1"])).unwrap();
    let rows = plan.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["account"], "account-000");
    assert_eq!(rows[1]["account"], "account-001");
    let (code, err) = fails(dir.path(), &["plan", "--support-map", "map.json", "--capacity", "2"]);
    assert_eq!(code, 2);
    assert!(err.contains("stage \"plan\""), "{err}");
}

#[test]
fn simulate_summary() {
    let dir = tmp();
    let out = ok(dir.path(), &["simulate", "--universe", &fixture("universe.json"), "--hours", "6", "--emit-universe", "u.json"]);
    golden("simulate.json", &out);
    let emitted = std::fs::read_to_string(dir.path().join("u.json")).unwrap();
    let again = ok(dir.path(), &["simulate", "--universe", "u.json", "--hours", "6"]);
    assert_eq!(again, out, "emitted universe reproduces the run");
    assert!(emitted.contains("p3.2xlarge"));
}

#[test]
fn collect_export_import() {
    let dir = tmp();
    let d = dir.path();
    let ticks = ok(d, &["collect", "--universe", &fixture("universe.json"), "--store", "s", "--ticks", "3", "--period", "1h"]);
    golden("collect.jsonl", &ticks);
    assert_eq!(ticks.lines().count(), 3);

    let exported = ok(d, &["export", "--store", "s", "--filter", "metrics=placementScore", "--filter", "regions=eu-west-1"]);
    golden("export.jsonl", &exported);
    assert!(exported.lines().all(|l| l.contains("placementScore") && l.contains("eu-west-1")));

    let all = ok(d, &["export", "--store", "s"]);
    std::fs::write(d.join("all.jsonl"), &all).unwrap();
    let report: Value = serde_json::from_str(&ok(d, &["import", "all.jsonl", "--store", "t"])).unwrap();
    assert_eq!(report["accepted"], all.lines().count());
    assert_eq!(report["duplicates"], 0);
    assert_eq!(ok(d, &["export", "--store", "t"]), all);
    let again: Value = serde_json::from_str(&ok(d, &["import", "all.jsonl", "--store", "t"])).unwrap();
    assert_eq!(again["accepted"], 0);

    let written = ok(d, &["export", "--store", "s", "--from", "2022-01-01T01:00:00Z", "--to", "2022-01-01T01:00:00Z", "--out", "one.jsonl"]);
    let n: Value = serde_json::from_str(&written).unwrap();
    let file = std::fs::read_to_string(d.join("one.jsonl")).unwrap();
    assert_eq!(n["exported"], file.lines().count());
    assert!(file.lines().all(|l| l.contains("\"ts\":\"2022-01-01T01:00:00Z\"")));
}

#[test]
fn experiment_cases_and_table() {
    let dir = tmp();
    let cases = ok(dir.path(), &["experiment", "--per-stratum", "2"]);
    golden("experiment.jsonl", &cases);
    assert_eq!(cases.lines().count(), 10);
    let table = ok(dir.path(), &["experiment", "--per-stratum", "2", "--out", "c.jsonl"]);
    golden("experiment_table.csv", &table);
    assert_eq!(std::fs::read_to_string(dir.path().join("c.jsonl")).unwrap(), cases);
}

#[test]
fn experiment_rejects_unstudied_strata() {
    let dir = tmp();
    let (code, err) = fails(dir.path(), &["experiment", "--strata", "HM"]);
    assert_eq!(code, 2);
    assert!(err.contains("stage \"experiment\""), "{err}");
    ok(dir.path(), &["experiment", "--strata", "HM", "--exploratory", "--per-stratum", "1"]);
}

#[test]
fn analyses_over_the_fixture() {
    let dir = tmp();
    let runs: [(&str, &[&str]); 8] = [
        ("distribution.csv", &["distribution", "--metric", "placementScore"]),
        ("distribution_if.csv", &["distribution", "--metric", "interruptionFree"]),
        ("correlation.json", &["correlation"]),
        ("frequency.json", &["frequency", "--metric", "interruptionFree"]),
        ("heatmap.csv", &["heatmap"]),
        ("heatmap_day.csv", &["heatmap", "--rows", "family-class", "--cols", "day"]),
        ("difference.csv", &["difference"]),
        ("size.csv", &["size"]),
    ];
    for (name, args) in runs {
        let mut full = vec!["analyze"];
        full.extend_from_slice(args);
        full.push("--fixture");
        golden(&format!("analyze_{name}"), &ok(dir.path(), &full));
    }
}

#[test]
fn analyze_reads_a_store_and_writes_files() {
    let dir = tmp();
    let d = dir.path();
    std::fs::write(d.join("a.jsonl"), spotarc_cli::commands::FIXTURE_ARCHIVE).unwrap();
    ok(d, &["import", "a.jsonl", "--store", "s"]);
    let direct = ok(d, &["analyze", "difference", "--store", "s"]);
    assert_eq!(direct, ok(d, &["analyze", "difference", "--fixture"]));
    ok(d, &["analyze", "difference", "--store", "s", "--out", "diff.csv"]);
    assert_eq!(std::fs::read_to_string(d.join("diff.csv")).unwrap(), direct);
}

#[test]
fn analyze_errors() {
    let dir = tmp();
    let d = dir.path();
    for args in [
        &["analyze", "distribution", "--fixture"][..],
        &["analyze", "distribution", "--fixture", "--metric", "bogus"],
        &["analyze", "difference", "--fixture", "--from", "2022-01-05T00:00:00Z", "--to", "2022-01-02T00:00:00Z"],
        &["analyze", "difference"],
    ] {
        let (code, err) = fails(d, args);
        assert_eq!(code, 2, "{args:?}: {err}");
        assert!(err.contains("stage \"analyze\""), "{err}");
    }
    // the analysis itself rejects a zero grid
    let (code, err) = fails(d, &["analyze", "correlation", "--fixture", "--grid", "0"]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn train_and_evaluate() {
    let dir = tmp();
    let d = dir.path();
    ok(d, &["collect", "--store", "s", "--ticks", "12"]);
    ok(d, &["experiment", "--warmup-hours", "2", "--per-stratum", "10", "--out", "cases.jsonl"]);
    let trained = ok(d, &["train", "--cases", "cases.jsonl", "--store", "s", "--trees", "5", "--out", "m.bin"]);
    golden("train.json", &trained);
    let report = ok(d, &["evaluate", "--model", "m.bin", "--cases", "cases.jsonl", "--store", "s", "--out", "eval.csv"]);
    golden("evaluate.txt", &report);
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    assert!(report.starts_with(&csv));
    assert_eq!(csv.lines().map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(), ["method", "RF", "SPS", "IF", "CostSave"]);

    // no history before any submission
    ok(d, &["collect", "--store", "empty", "--ticks", "0"]);
    let (code, err) = fails(d, &["train", "--cases", "cases.jsonl", "--store", "empty", "--out", "x.bin"]);
    assert_eq!(code, 1);
    assert!(err.contains("stage \"train\""), "{err}");

    std::fs::write(d.join("bad.bin"), "not a model").unwrap();
    let (code, _) = fails(d, &["evaluate", "--model", "bad.bin", "--cases", "cases.jsonl", "--store", "s"]);
    assert_eq!(code, 2);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts `serve` and returns the URLs it announces.
fn serve(dir: &Path, args: &[&str], lines: usize) -> (Server, Vec<String>) {
    let mut cmd = command(dir, args);
    let mut child = cmd.stdout(Stdio::null()).stderr(Stdio::piped()).spawn().unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut urls = Vec::new();
    for _ in 0..lines {
        let mut line = String::new();
        stderr.read_line(&mut line).unwrap();
        let url = line.trim().rsplit(' ').next().unwrap().to_string();
        assert!(url.starts_with("http://"), "unexpected startup line `{line}`");
        urls.push(url);
    }
    (Server(child), urls)
}

fn get(url: &str) -> (u16, Value) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent.get(url).call().unwrap();
    (resp.status().as_u16(), resp.body_mut().read_json().unwrap())
}

#[test]
fn serve_answers_queries() {
    let dir = tmp();
    let d = dir.path();
    std::fs::write(d.join("a.jsonl"), spotarc_cli::commands::FIXTURE_ARCHIVE).unwrap();
    ok(d, &["import", "a.jsonl", "--store", "s"]);
    let (_server, urls) = serve(d, &["serve", "--store", "s", "--port", "0"], 1);
    let (status, meta) = get(&format!("{}/v1/meta", urls[0]));
    assert_eq!(status, 200);
    assert_eq!(meta["instanceTypes"].as_array().unwrap().len(), 4);
    assert_eq!(meta["simulator"], false);
    let (status, page) = get(&format!("{}/v1/records?limit=5&metrics=placementScore", urls[0]));
    assert_eq!(status, 200);
    assert_eq!(page["records"].as_array().unwrap().len(), 5);
    assert!(page["nextCursor"].is_string());
    let (status, body) = get(&format!("{}/v1/analysis/difference", urls[0]));
    assert_eq!(status, 200);
    assert_eq!(body["analysis"], "difference");
    let (status, body) = get(&format!("{}/v1/whatif/budget", urls[0]));
    assert_eq!((status, body["code"].as_str()), (404, Some("NotConfigured")));
}

#[test]
fn serve_with_simulator() {
    let dir = tmp();
    let d = dir.path();
    let args = ["serve", "--store", "s", "--port", "0", "--sim-universe", &fixture("universe.json")];
    let (_server, urls) = serve(d, &args, 2);
    let (status, now) = get(&format!("{}/v1/vendor/now", urls[1]));
    assert_eq!(status, 200);
    assert_eq!(now["now"], "2022-01-01T00:00:00Z");
    let (status, scores) = get(&format!("{}/v1/whatif/scores?instanceTypes=m5.large&regions=us-east-1", urls[0]));
    assert_eq!(status, 200, "{scores}");
    assert_eq!(scores["scores"].as_array().unwrap().len(), 2);

    // the served simulator drives a collector over the wire
    let report = ok(d, &["collect", "--vendor", &urls[1], "--store", "w", "--ticks", "1"]);
    let report: Value = serde_json::from_str(report.trim()).unwrap();
    assert!(report["recordsWritten"].as_u64().unwrap() > 0);
}

#[test]
fn serve_errors() {
    let dir = tmp();
    let (code, err) = fails(dir.path(), &["serve", "--store", "s", "--port", "0", "--model", "missing.bin"]);
    assert_eq!(code, 2);
    assert!(err.contains("stage \"serve\""), "{err}");
}

#[test]
fn unreachable_vendor_is_a_runtime_failure() {
    let dir = tmp();
    let (code, err) = fails(dir.path(), &["collect", "--vendor", "http://127.0.0.1:9", "--store", "s", "--ticks", "1"]);
    assert_eq!(code, 1);
    assert!(err.contains("stage \"collect\""), "{err}");
    let (code, _) = fails(dir.path(), &["collect", "--vendor", "ftp://x", "--store", "s"]);
    assert_eq!(code, 2);
}

#[test]
fn small_demo() {
    let dir = tmp();
    let d = dir.path();
    let args = ["demo", "--out", "d", "--hours", "2", "--per-stratum", "5", "--campaign-cases", "300"];
    let report = ok(d, &args);
    let report = report.replace(&d.join("d").display().to_string(), "<out>").replace("d/store", "<out>/store");
    golden("demo.txt", &report);
    for name in spotarc_cli::demo::REPORTS.iter().chain(&["table2.csv", "plan.json", "collect.jsonl", "cases.jsonl", "model.bin"]) {
        assert!(d.join("d").join(name).is_file(), "{name} missing");
    }
    let first = std::fs::read(d.join("d/table4.csv")).unwrap();
    ok(d, &args);
    assert_eq!(std::fs::read(d.join("d/table4.csv")).unwrap(), first);
}

#[test]
fn missing_universe_is_a_configuration_error() {
    let dir = tmp();
    let (code, err) = fails(dir.path(), &["simulate", "--universe", "nope.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("stage \"simulate\""), "{err}");
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tmp();
    for args in [&["frobnicate"][..], &["analyze", "nothing", "--fixture"], &["collect", "--ticks", "many"], &[]] {
        let (code, _) = fails(dir.path(), args);
        assert_eq!(code, 2, "{args:?}");
    }
    assert!(ok(dir.path(), &["--help"]).contains("Exit codes"));
}

fn seed_of(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> u64 {
    let mut full = vec!["simulate", "--hours", "0"];
    full.extend_from_slice(args);
    let out = run_env(dir, &full, env);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["seed"].as_u64().unwrap()
}

#[test]
fn settings_layer_flag_over_env_over_file() {
    let dir = tmp();
    let d = dir.path();
    let conf_dir: PathBuf = d.join("conf");
    std::fs::create_dir(&conf_dir).unwrap();
    std::fs::copy(fixture("universe.json"), conf_dir.join("small.json")).unwrap();
    std::fs::write(conf_dir.join("spotarc.toml"), "seed = 7\nuniverse = \"small.json\"\n").unwrap();
    let conf = conf_dir.join("spotarc.toml").display().to_string();

    assert_eq!(seed_of(d, &[], &[]), 42);
    assert_eq!(seed_of(d, &["--config", &conf], &[]), 7);
    assert_eq!(seed_of(d, &["--config", &conf], &[("SPOTLAKE_SEED", "9")]), 9);
    assert_eq!(seed_of(d, &["--config", &conf, "--seed", "11"], &[("SPOTLAKE_SEED", "9")]), 11);
    assert_eq!(seed_of(d, &[], &[("SPOTLAKE_CONFIG", conf.as_str())]), 7);

    // the universe path resolves against the config file's directory
    let out = run_env(d, &["simulate", "--hours", "0", "--config", &conf], &[]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["types"], 4);

    let (code, err) = {
        let out = run_env(d, &["simulate"], &[("SPOTLAKE_SEED", "abc")]);
        (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
    };
    assert_eq!(code, 2);
    assert!(err.contains("SPOTLAKE_SEED"), "{err}");

    std::fs::write(d.join("bad.toml"), "seed = [\n").unwrap();
    let (code, _) = fails(d, &["--config", "bad.toml", "simulate"]);
    assert_eq!(code, 2);
    std::fs::write(d.join("unknown.toml"), "colour = \"blue\"\n").unwrap();
    let (code, err) = fails(d, &["--config", "unknown.toml", "simulate"]);
    assert_eq!(code, 2);
    assert!(err.contains("colour"), "{err}");
}
