use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use macro_router_core::pipeline::{PipelineConfig, RouteOutcome, Snapshot};
use macro_router_core::registry::Registry;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_macro-router");
const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");

/// Temp dir holding a copy of the fixture registry and a config that
/// points at it and at the fixture simulator.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(format!("{FIXTURES}/macros.json"), dir.path().join("macros.json")).unwrap();
    let config = serde_json::json!({
        "registry_path": "macros.json",
        "simulator": format!("{FIXTURES}/simulator.json"),
    });
    let path = dir.path().join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    (dir, path)
}

fn run(config: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("MACRO_ROUTER_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn route_json_matches_library() {
    let (dir, config) = workspace();
    let utterance = "Analyze home price trends in downtown Chicago over the last year.";
    let out = run(&config, &["route", "--json", utterance], "");
    assert!(out.status.success(), "{}", stderr(&out));
    let cli: RouteOutcome = serde_json::from_slice(&out.stdout).unwrap();
    let reg = Registry::load(dir.path().join("macros.json")).unwrap();
    let lib = Snapshot::build(&reg, &PipelineConfig::default()).route(utterance);
    assert_eq!(
        serde_json::to_value(&cli.decision).unwrap(),
        serde_json::to_value(&lib.decision).unwrap()
    );
    assert_eq!(cli.decision.matched_id().map(|i| i.0), Some(12));
}

#[test]
fn route_text_names_decision() {
    let (_dir, config) = workspace();
    let out = run(&config, &["route", "Compile a weekly digest of political news."], "");
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.contains("decision: matched #7 GENERATE_NEWS_DIGEST [Personalized News Digest]"),
        "{text}"
    );
    assert!(text.contains("---- theta 0.30 ----"));
}

#[test]
fn dry_run_prints_plan_and_keeps_stats() {
    let (dir, config) = workspace();
    let out = run(
        &config,
        &["exec", "--dry-run", "Compare my spending on groceries in March"],
        "",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("dry run, nothing sent"));
    assert!(text.contains("GET http://api.local/finance/spending?category=groceries&dates=march"));
    let reg = Registry::load(dir.path().join("macros.json")).unwrap();
    assert!(reg.macros().iter().all(|m| m.stats.attempts == 0));
}

#[test]
fn exec_against_simulator_persists_feedback() {
    let (dir, config) = workspace();
    let out = run(
        &config,
        &["exec", "--json", "Compare my spending on groceries in March"],
        "",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "executed");
    let reg = Registry::load(dir.path().join("macros.json")).unwrap();
    assert_eq!(reg.macros()[0].stats.successes, 1);

    let out = run(
        &config,
        &["exec", "Sort and prioritize customer complaints received via email."],
        "",
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("-> 500"));
}

#[test]
fn exec_without_match_exits_one() {
    let (_dir, config) = workspace();
    let out = run(&config, &["exec", "How do I make a mojito?"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("no match"));
}

#[test]
fn removing_unknown_macro_is_not_found() {
    let (_dir, config) = workspace();
    let out = run(&config, &["macros", "rm", "999"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not_found"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_two() {
    let (_dir, config) = workspace();
    for args in [&["bogus"][..], &["feedback", "1", "maybe"], &["macros", "rm", "x"], &[]] {
        let out = run(&config, args, "");
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!stderr(&out).is_empty());
    }
}

#[test]
fn macros_add_list_rm_and_feedback() {
    let (dir, config) = workspace();
    let draft = format!("{FIXTURES}/order_from_nearby_market.json");
    let out = run(&config, &["macros", "add", &draft], "");
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "added #16 ORDER_FROM_NEARBY_MARKET");
    let out = run(&config, &["macros", "add", &draft], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("conflict"));

    let out = run(&config, &["macros", "list", "--json"], "");
    let rows: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.len(), 16);
    assert!(stdout(&run(&config, &["macros", "list"], "")).contains("ORDER_FROM_NEARBY_MARKET"));

    let out = run(&config, &["feedback", "16", "success"], "");
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "#16: 1/1 succeeded, smoothed rate 0.667");

    let out = run(&config, &["macros", "rm", "16"], "");
    assert!(out.status.success());
    assert_eq!(Registry::load(dir.path().join("macros.json")).unwrap().len(), 15);
}

#[test]
fn eval_prints_report_and_saves_config() {
    let (dir, config) = workspace();
    let saved = dir.path().join("tuned.json");
    let out = run(
        &config,
        &["eval", "--fixtures", FIXTURES, "--save-config", saved.to_str().unwrap()],
        "",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("top-1 accuracy            0.4556 (41/90)"));
    let tuned = PipelineConfig::load(&saved).unwrap();
    assert!((tuned.theta - (0.8 * 0.01 + 0.2 * 0.5)).abs() < 1e-12);

    let out = run(&config, &["eval", "--json", "--fixtures", FIXTURES], "");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["out_of_scope_nomatch"], 8);
}

#[test]
fn config_path_from_environment() {
    let (_dir, config) = workspace();
    let out = Command::new(BIN)
        .args(["macros", "list", "--json"])
        .env("MACRO_ROUTER_CONFIG", &config)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let rows: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.len(), 15);
}

#[test]
fn interactive_training_commits_and_routes() {
    let (dir, config) = workspace();
    let script = [
        "Order groceries from the closest market to my home",
        "",
        "",
        "Grocery Ordering",
        "",
        "ORDER_FROM_NEARBY_MARKET",
        "X",
        "items to buy",
        "Y",
        "delivery address",
        "",
        "order {X} from the closest market",
        "n",
        "market to {Y}",
        "n",
        "GET http://api.local/grocery/stores?near={Y}",
        "",
        "store_id=stores.0.id",
        "POST http://api.local/grocery/carts",
        r#"{"store_id": "{store_id}", "items": "{X}"}"#,
        "cart_id=cart_id",
        "POST http://api.local/grocery/carts/{cart_id}/order",
        r#"{"deliver_to": "{Y}"}"#,
        "",
        "",
        "y",
    ]
    .join("\n");
    let out = run(&config, &["train"], &(script + "\n"));
    assert!(out.status.success(), "{}\n{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("committed #16"));
    let reg = Registry::load(dir.path().join("macros.json")).unwrap();
    assert_eq!(reg.len(), 16);

    let out = run(
        &config,
        &[
            "exec",
            "--json",
            "Please, order 6 of the cheapest yogurt cups and 0.5 kilogram of any cheese from the closest market to my home",
        ],
        "",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["decision"]["id"], 16);
    assert_eq!(v["result"]["per_call"].as_array().unwrap().len(), 3);
}

#[test]
fn training_cancelled_at_end_of_input() {
    let (dir, config) = workspace();
    let out = run(&config, &["train"], "Order groceries\n\n");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cancelled"));
    assert_eq!(Registry::load(dir.path().join("macros.json")).unwrap().len(), 15);
}

#[test]
fn training_can_reuse_existing_macro() {
    let (dir, config) = workspace();
    let out = run(&config, &["train"], "Plan a trip to Lisbon\n3\n");
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("reusing #3"));
    assert_eq!(Registry::load(dir.path().join("macros.json")).unwrap().len(), 15);
}

#[test]
fn serve_answers_http() {
    let (_dir, config) = workspace();
    let mut child = Command::new(BIN)
        .arg("--config")
        .arg(&config)
        .args(["serve", "--port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /stats HTTP/1.1\r\nhost: {addr}\r\nconnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"smoothed_rate\":0.5"));
}
