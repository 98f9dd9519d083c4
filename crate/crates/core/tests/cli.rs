use chunkmt::backend::MockBackend;
use chunkmt::corpus_io::{read_lines, read_trace_file, RunManifest};
use chunkmt::engine::{Stage, Strategy};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn demo(name: &str) -> String {
    root().join("fixtures/demo").join(name).display().to_string()
}

fn template() -> String {
    root().join("fixtures/templates/zsm-ind.tpl").display().to_string()
}

fn chunkmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chunkmt"))
        .args(args)
        .env_remove("CHUNKMT_ENDPOINT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn translate(out: &Path, extra: &[&str]) -> Output {
    let (src, lex, tpl) = (demo("zsm.txt"), demo("zsm-ind.lex.tsv"), template());
    let out = out.display().to_string();
    let mut args = vec![
        "translate", "--src", &src, "--template", &tpl, "--backend", "mock", "--lexicon", &lex, "--out", &out,
    ];
    args.extend_from_slice(extra);
    chunkmt(&args)
}

#[test]
fn decomt_with_lexicon_mock_reproduces_mapped_sources() {
    let dir = TempDir::new().unwrap();
    let o = translate(&dir.path().join("run"), &["--pair", "zsm-ind"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mock = MockBackend::parse_lexicon(&std::fs::read_to_string(demo("zsm-ind.lex.tsv")).unwrap()).unwrap();
    let sources = read_lines(Path::new(&demo("zsm.txt"))).unwrap();
    let hyps = read_lines(&dir.path().join("run/hypotheses.txt")).unwrap();
    let expected: Vec<String> = sources.iter().map(|s| mock.map_text(s)).collect();
    assert_eq!(hyps, expected);
    assert_eq!(hyps, read_lines(Path::new(&demo("ind.txt"))).unwrap());

    let traces = read_trace_file(&dir.path().join("run/traces.jsonl")).unwrap();
    assert_eq!(traces.len(), 30);
    let manifest = RunManifest::load(&dir.path().join("run/manifest.json")).unwrap();
    assert_eq!(manifest.strategy, Strategy::Decomt);
    assert_eq!(manifest.engine.m, 4);
    assert!(manifest.template_matches(Path::new(&template())).unwrap());
}

#[test]
fn single_stage_makes_no_contextual_calls() {
    let dir = TempDir::new().unwrap();
    let o = translate(dir.path(), &["--m", "3", "--single-stage"]);
    assert!(o.status.success());
    let traces = read_trace_file(&dir.path().join("traces.jsonl")).unwrap();
    assert!(traces.iter().all(|t| t.calls_in_stage(Stage::Contextual) == 0));
    assert!(traces.iter().all(|t| t.strategy == Strategy::DecomtSingleStage));
}

#[test]
fn pair_defaults_resolve_chunk_size() {
    let dir = TempDir::new().unwrap();
    assert!(translate(dir.path(), &["--pair", "hin-mal"]).status.success());
    assert_eq!(RunManifest::load(&dir.path().join("manifest.json")).unwrap().engine.m, 5);
    let o = translate(&dir.path().join("x"), &["--pair", "eng-fra"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--m"));
}

#[test]
fn identical_runs_write_identical_traces() {
    let dir = TempDir::new().unwrap();
    for run in ["a", "b"] {
        assert!(translate(&dir.path().join(run), &["--m", "5", "--strategy", "decomt"]).status.success());
    }
    let a = std::fs::read(dir.path().join("a/traces.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/traces.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn baselines_run_from_the_cli() {
    let dir = TempDir::new().unwrap();
    for strategy in ["sp", "sap"] {
        let o = translate(&dir.path().join(strategy), &["--strategy", strategy]);
        assert!(o.status.success(), "{strategy}: {}", String::from_utf8_lossy(&o.stderr));
        let hyps = read_lines(&dir.path().join(strategy).join("hypotheses.txt")).unwrap();
        assert_eq!(hyps, read_lines(Path::new(&demo("ind.txt"))).unwrap());
    }
    let o = translate(&dir.path().join("bad"), &["--strategy", "sap", "--single-stage"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_reports_scores_and_rejects_mismatches() {
    let refs = demo("ind.txt");
    let o = chunkmt(&["evaluate", "--hyp", &refs, "--ref", &refs, "--metric", "chrfpp", "--metric", "bleu"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("chrF++ = 100.00 (nrefs:1|case:mixed|eff:yes|nc:6|nw:2|space:no)"));
    assert!(text.contains("BLEU = 100.00"));

    let golden: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root().join("tests/fixtures/metrics/golden.json")).unwrap(),
    )
    .unwrap();
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("scores.json");
    let fx = |n: &str| root().join("tests/fixtures/metrics").join(n).display().to_string();
    let o = chunkmt(&["evaluate", "--hyp", &fx("hyp.txt"), "--ref", &fx("ref.txt"), "--out", &json.display().to_string()]);
    assert!(o.status.success());
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let got = reports[0]["corpus_score"].as_f64().unwrap();
    assert!((got - golden["chrfpp_corpus"].as_f64().unwrap()).abs() <= 0.05);

    let o = chunkmt(&["evaluate", "--hyp", &demo("zsm.txt"), "--ref", &fx("ref.txt")]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("30 hypotheses but 50 references"));

    let o = chunkmt(&["evaluate", "--hyp", &refs, "--ref", &refs, "--metric", "spbleu"]);
    assert_eq!(o.status.code(), Some(2));
    let o = chunkmt(&["evaluate", "--hyp", &refs, "--ref", &refs, "--metric", "spbleu", "--tokenizer-cmd", "cat"]);
    assert!(stdout(&o).contains("spBLEU = 100.00"));
}

#[test]
fn compare_system_with_itself_and_with_a_weaker_one() {
    let (refs, src) = (demo("ind.txt"), demo("zsm.txt"));
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("cmp.json");
    let o = chunkmt(&[
        "compare", "--hyp", &refs, "--hyp", &refs, "--ref", &refs, "--src", &src, "--out", &json.display().to_string(),
    ]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(r["bootstrap"]["p_value"].as_f64().unwrap() >= 0.95);
    assert_eq!(r["bootstrap"]["delta"].as_f64().unwrap(), 0.0);
    for side in ["buckets_a", "buckets_b"] {
        let buckets = r[side]["buckets"].as_array().unwrap();
        assert!(buckets.iter().all(|b| b["sentence_count"].as_u64().unwrap() >= 20));
    }

    let o = chunkmt(&["compare", "--hyp", &refs, "--hyp", &src, "--ref", &refs, "--src", &src]);
    assert!(stdout(&o).contains("p < 0.001"));
    assert!(stdout(&o).contains("length buckets for A"));

    let o = chunkmt(&["compare", "--hyp", &refs, "--ref", &refs]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_breaks_ties_towards_small_chunks() {
    let dir = TempDir::new().unwrap();
    let (src, refs, lex, tpl) = (demo("zsm.txt"), demo("ind.txt"), demo("zsm-ind.lex.tsv"), template());
    let out = dir.path().display().to_string();
    let o = chunkmt(&[
        "sweep", "--src", &src, "--ref", &refs, "--template", &tpl, "--backend", "mock", "--lexicon", &lex, "--out", &out,
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("choosing the smallest, m=3"));
    for m in 3..=5 {
        let manifest = RunManifest::load(&dir.path().join(format!("m{m}/manifest.json"))).unwrap();
        assert_eq!(manifest.engine.m, m);
    }
}

#[test]
fn unreachable_backend_exits_with_transport_code() {
    let dir = TempDir::new().unwrap();
    let (src, tpl) = (demo("zsm.txt"), template());
    let out = dir.path().display().to_string();
    let o = Command::new(env!("CARGO_BIN_EXE_chunkmt"))
        .args(["translate", "--src", &src, "--template", &tpl, "--m", "4", "--retries", "0", "--out", &out])
        .env("CHUNKMT_ENDPOINT", "127.0.0.1:1")
        .env("CHUNKMT_TIMEOUT_MS", "500")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("hypotheses.txt").exists());
    assert_eq!(RunManifest::load(&dir.path().join("manifest.json")).unwrap().failures, 30);
}
