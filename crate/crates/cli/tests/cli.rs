use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_apce");

fn apce(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("APCE_LOG", "debug")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schema")
        .join(name);
    let s: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "schema errors: {errors:?}");
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(extra_config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let words = [
            "harbor", "lantern", "storm", "sailor", "anchor", "tide", "gull", "rope", "mast",
            "reef",
        ];
        let mut lines = Vec::new();
        for d in 0..2 {
            let text: Vec<&str> = (0..240)
                .map(|i| words[(i * 7 + d * 3 + i / 11) % words.len()])
                .collect();
            lines.push(
                serde_json::json!({
                    "id": format!("doc-{d}"),
                    "text": text.join(" "),
                    "query": "what happened to the lantern in the storm",
                    "reference": "the storm broke the lantern near the harbor",
                })
                .to_string(),
            );
        }
        fs::write(dir.path().join("corpus.jsonl"), lines.join("\n") + "\n").unwrap();
        let cfg = format!(
            "chunk_size = 30\nmax_chunks = 3\ninput.corpus = \"corpus.jsonl\"\n\
             generation.max_new_tokens = 40\nreprioritization.interval = 10\n\
             {latency}load.decode_latency = 0.001\nload.async_start = 2\n\
             model.n_layers = 2\nmodel.n_heads = 2\nmodel.d_model = 16\nmodel.d_head = 8\n\
             model.d_kv_total = 8\nmodel.vocab_size = 4096\n{extra_config}",
            latency = if extra_config.contains("load.per_chunk_latency") {
                ""
            } else {
                "load.per_chunk_latency = 0.01\n"
            }
        );
        fs::write(dir.path().join("run.toml"), cfg).unwrap();
        Self { dir }
    }

    fn config(&self) -> String {
        self.dir.path().join("run.toml").display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, extra: &[&str], out: &str) -> Output {
        let out = self.out(out).display().to_string();
        let cfg = self.config();
        let mut args = vec!["run", "--config", &cfg, "--out-dir", &out];
        args.extend_from_slice(extra);
        apce(&args)
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn memtable_text_reproduces_cells() {
    let text = stdout(&apce(&["memtable"]));
    for cell in [
        "32.40", "260.80", "21.88", "147.31", "620.51", "1003.12", "116.96", "75.05",
    ] {
        assert!(text.contains(cell), "missing {cell}");
    }
    assert!(!text.contains('*'));
    let flagged = stdout(&apce(&["memtable", "--flag-inconsistent"]));
    assert_eq!(flagged.lines().filter(|l| l.starts_with("* ")).count(), 2);
    assert!(flagged.contains("1085.67*") && flagged.contains("2175.49*"));
    assert!(flagged.contains("28416 bytes = 27.75 KB (published as 28 MB)"));
}

#[test]
fn memtable_formats() {
    let csv = stdout(&apce(&[
        "memtable",
        "--format",
        "csv",
        "--flag-inconsistent",
    ]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(
        lines[3],
        "20k,dense,20111,78.56,1085.67,78.61,prefill_attn_mb"
    );
    assert_eq!(lines[2], "8k,apce,5600,21.88,147.31,21.90,");
    let json: Value =
        serde_json::from_str(&stdout(&apce(&["memtable", "--format", "json"]))).unwrap();
    assert_valid(&schema("memtable.schema.json"), &json);
    assert_eq!(json["matched_cells"], 16);
    assert_eq!(json["embedding_store"]["bytes"], 28416);
}

#[test]
fn memtable_custom_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("mem.toml");
    fs::write(
        &cfg,
        "[[memtable.rows]]\nlabel = \"tiny\"\nseq_len = 1000\nn_chunks_selected = 1\nchunk_size = 500\n",
    )
    .unwrap();
    let out = dir.path().join("tables");
    let json = stdout(&apce(&[
        "memtable",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
        "--out-dir",
        out.to_str().unwrap(),
    ]));
    let v: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
    assert_eq!(v["matched_cells"], 0);
    assert_eq!(v["rows"][0]["apce"]["kv_cache_bytes"], 500 * 2 * 1024 * 2);
    assert!(out.join("memtable.json").exists());
}

#[test]
fn bad_config_exits_2() {
    let ws = Workspace::new("");
    let bad = ws.out("bad.toml");
    for text in [
        "mode = \"sparse\"\n",
        "chunk_size = 0\n",
        "reprioritization.intervall = 5\n",
        "max_chunks = [",
    ] {
        fs::write(&bad, text).unwrap();
        let o = apce(&["run", "--config", bad.to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{text}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = apce(&["run", "--config", ws.out("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = ws.run(&["--interval", "0"], "o");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_exits_3() {
    let ws = Workspace::new("");
    assert_eq!(apce(&["run"]).status.code(), Some(3));
    let o = ws.run(&["--input", "/nonexistent/corpus.jsonl"], "o");
    assert_eq!(o.status.code(), Some(3));
    let o = ws.run(&["--record", "no-such-id"], "o");
    assert_eq!(o.status.code(), Some(3));
    let noquery = ws.out("noquery.jsonl");
    fs::write(&noquery, "{\"id\":\"a\",\"text\":\"some words here\"}\n").unwrap();
    let o = ws.run(&["--input", noquery.to_str().unwrap()], "o");
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn run_reports_validate_and_summarize() {
    let ws = Workspace::new("");
    let v = schema("run_report.schema.json");
    for mode in ["apce", "dense"] {
        let out = format!("out-{mode}");
        stdout(&ws.run(&["--mode", mode], &out));
        for d in 0..2 {
            let id = format!("doc-{d}__{mode}__s0");
            let report = read_json(&ws.out(&out).join("runs").join(format!("{id}.json")));
            assert_valid(&v, &report);
            assert_eq!(report["trace"]["output_tokens"], 40);
            if mode == "dense" {
                assert!(report["replacement_log"].as_array().unwrap().is_empty());
            } else {
                assert_eq!(report["replacement_stats"]["reprioritization_events"], 4);
            }
            let profile = read_json(&ws.out(&out).join("runs").join(format!("{id}.profile.json")));
            assert!(profile["wall_seconds"].as_f64().unwrap() >= 0.0);
        }
        let summary = fs::read_to_string(ws.out(&out).join("summary.csv")).unwrap();
        let mut lines = summary.lines();
        assert_eq!(lines.next(), Some("run_id,mode,ttft,total_time,tokens"));
        assert_eq!(lines.count(), 2);
    }
}

#[test]
fn replay_is_byte_identical() {
    let ws = Workspace::new("");
    let a = stdout(&ws.run(&["--seed", "9", "--format", "json"], "a"));
    let b = stdout(&ws.run(&["--seed", "9", "--format", "json", "--sequential"], "b"));
    let c = stdout(&ws.run(&["--seed", "10", "--format", "json"], "c"));
    let name = "runs/doc-1__apce__s9.json";
    let ra = fs::read(ws.out("a").join(name)).unwrap();
    let rb = fs::read(ws.out("b").join(name)).unwrap();
    let strip = |s: &str| {
        s.replace("\"parallel\":false", "\"parallel\":true")
            .replace("\"parallel\": false", "\"parallel\": true")
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(
        strip(&String::from_utf8(ra).unwrap()),
        strip(&String::from_utf8(rb).unwrap())
    );
    let rerun = stdout(&ws.run(&["--seed", "9", "--format", "json"], "a2"));
    assert_eq!(a, rerun);
    assert_eq!(
        fs::read(ws.out("a").join(name)).unwrap(),
        fs::read(ws.out("a2").join(name)).unwrap()
    );
    assert_ne!(a, c);
}

#[test]
fn full_selection_matches_dense_output() {
    let ws = Workspace::new("reprioritization.enabled = false\nload.per_chunk_latency = 0.0\n");
    let apce_out = stdout(&ws.run(&["--max-chunks", "1000", "--format", "json"], "a"));
    let dense_out = stdout(&ws.run(&["--mode", "dense", "--format", "json"], "d"));
    let texts = |s: &str| -> Vec<Value> {
        s.lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["output"].clone())
            .collect()
    };
    assert_eq!(texts(&apce_out), texts(&dense_out));
}

#[test]
fn sweeps_have_table_shapes() {
    let ws = Workspace::new("");
    let v = schema("aggregate.schema.json");
    let out = ws.out("sweep").display().to_string();
    let cfg = ws.config();
    let json = stdout(&apce(&[
        "sweep",
        "--config",
        &cfg,
        "--out-dir",
        &out,
        "--axis",
        "chunk_size",
        "--values",
        "20,30,60",
        "--format",
        "json",
    ]));
    let rep: Value = serde_json::from_str(&json).unwrap();
    assert_valid(&v, &rep);
    let labels: Vec<&str> = rep["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["label"].as_str().unwrap())
        .collect();
    assert_eq!(
        labels,
        [
            "APCE (20 token chksize)",
            "APCE (30 token chksize)",
            "APCE (60 token chksize)"
        ]
    );
    assert!(Path::new(&out).join("sweep_chunk_size.csv").exists());
    assert_valid(
        &v,
        &read_json(&Path::new(&out).join("sweep_chunk_size.json")),
    );

    let csv = stdout(&apce(&[
        "sweep",
        "--config",
        &cfg,
        "--out-dir",
        &out,
        "--axis",
        "reprioritization_interval",
        "--values",
        "1,5,10,25,50,100,200",
        "--format",
        "csv",
    ]));
    assert_eq!(csv.lines().count(), 8);
    assert!(csv.starts_with("label,value,mode,runs,rouge_l_f1"));

    let n = stdout(&apce(&[
        "sweep",
        "--config",
        &cfg,
        "--out-dir",
        &out,
        "--axis",
        "n_chunks",
        "--values",
        "2,4",
        "--format",
        "json",
    ]));
    let n: Value = serde_json::from_str(&n).unwrap();
    assert_eq!(n["rows"][1]["label"], "APCE (4 chunks)");
}

#[test]
fn single_value_sweep_equals_run() {
    let ws = Workspace::new("");
    let cfg = ws.config();
    let out = ws.out("s").display().to_string();
    let rep: Value = serde_json::from_str(&stdout(&apce(&[
        "sweep",
        "--config",
        &cfg,
        "--out-dir",
        &out,
        "--axis",
        "n_chunks",
        "--values",
        "3",
        "--format",
        "json",
    ])))
    .unwrap();
    let run = stdout(&ws.run(&["--format", "json"], "r"));
    let ttfts: Vec<f64> = run
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["trace"]["ttft"]
                .as_f64()
                .unwrap()
        })
        .collect();
    let mean = ttfts.iter().sum::<f64>() / ttfts.len() as f64;
    assert_eq!(rep["rows"][0]["ttft"]["mean"].as_f64().unwrap(), mean);
    assert_eq!(rep["rows"][0]["runs"], 2);
}

#[test]
fn ablation_has_dense_row_and_intervals() {
    let ws = Workspace::new("");
    let out = ws.out("abl").display().to_string();
    let rep: Value = serde_json::from_str(&stdout(&apce(&[
        "ablate",
        "--config",
        &ws.config(),
        "--out-dir",
        &out,
        "--format",
        "json",
    ])))
    .unwrap();
    assert_valid(&schema("aggregate.schema.json"), &rep);
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0]["label"], "Dense");
    for r in &rows[1..] {
        assert!(
            r["replacements_taken"]["mean"].as_f64()
                <= r["replacements_available"]["mean"].as_f64()
        );
    }
    let text = stdout(&apce(&[
        "ablate",
        "--config",
        &ws.config(),
        "--out-dir",
        &out,
        "--intervals",
        "5,50",
    ]));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn file_embeddings_drive_selection() {
    let ws = Workspace::new("");
    let dim = 4;
    let emb: String = (0..8)
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i % dim] = 1.0 + i as f64;
            format!("{{\"chunk_index\": {i}, \"vector\": {v:?}}}\n")
        })
        .collect();
    fs::write(ws.out("chunks.jsonl"), emb).unwrap();
    fs::write(
        ws.out("query.jsonl"),
        "{\"chunk_index\": 0, \"vector\": [0.0, 0.0, 1.0, 0.0]}\n",
    )
    .unwrap();
    let cfg = ws.out("file.toml");
    let base = fs::read_to_string(ws.config()).unwrap();
    fs::write(
        &cfg,
        format!("{base}embedding.provider = \"file\"\nembedding.dim = 4\nembedding.file = \"chunks.jsonl\"\nembedding.query_file = \"query.jsonl\"\n"),
    )
    .unwrap();
    let out = ws.out("f").display().to_string();
    let json = stdout(&apce(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        &out,
        "--record",
        "doc-0",
        "--format",
        "json",
        "--async-start",
        "8",
    ]));
    let rep: Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
    let first: Vec<u64> = rep["selection_history"][0]["selected"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(first, [0, 2, 6]);

    fs::write(
        &cfg,
        format!("{base}embedding.provider = \"file\"\nembedding.dim = 5\nembedding.file = \"chunks.jsonl\"\nembedding.query_file = \"query.jsonl\"\n"),
    )
    .unwrap();
    let o = apce(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(2));
}
