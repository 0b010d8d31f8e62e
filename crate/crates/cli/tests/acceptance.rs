//! Acceptance: every subcommand, re-run on identical inputs and seeds,
//! produces byte-identical outputs. The whole pipeline is executed twice in
//! separate directories with relative paths and the artifacts and captured
//! stdout are compared byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;

fn write_fixture(dir: &Path) {
    std::fs::create_dir_all(dir.join("in")).unwrap();

    // 60-document corpus in two shards; every fifth document is filler.
    let mut shard0 = String::new();
    let mut shard1 = String::new();
    for i in 0..60usize {
        let text = if i % 5 == 4 {
            format!("fill{} alone here", i % 7)
        } else {
            format!(
                "alpha{} joins beta{} and alpha{} nearby",
                i % 10,
                i % 6,
                (i * 3 + 1) % 10
            )
        };
        let line = format!("{{\"text\":\"{text}\"}}\n");
        if i < 30 {
            shard0.push_str(&line);
        } else {
            shard1.push_str(&line);
        }
    }
    std::fs::write(dir.join("in/shard0.jsonl"), shard0).unwrap();
    std::fs::write(dir.join("in/shard1.jsonl"), shard1).unwrap();

    let mut gaz = String::new();
    for k in 0..10 {
        writeln!(gaz, "alpha{k}\tE{k:02}\t0.9").unwrap();
    }
    for k in 0..6 {
        writeln!(gaz, "beta{k}\tB{k}\t0.8").unwrap();
    }
    std::fs::write(dir.join("in/gazetteer.tsv"), gaz).unwrap();

    // 30 QA examples whose pairs co-occur by construction.
    let mut qa = String::new();
    for i in 0..30usize {
        writeln!(
            qa,
            "{{\"id\":\"q{i:02}\",\"question\":\"tell me about alpha{} please\",\"answers\":[\"beta{}\",\"beta{}\"]}}",
            i % 10,
            i % 6,
            (i + 1) % 6
        )
        .unwrap();
    }
    std::fs::write(dir.join("in/questions.jsonl"), qa).unwrap();

    let mut preds = String::new();
    for i in 0..30usize {
        let answer = if i % 3 == 0 { format!("beta{}", i % 6) } else { "wrong".to_string() };
        writeln!(preds, "{{\"id\":\"q{i:02}\",\"prediction\":\"{answer}\"}}").unwrap();
    }
    std::fs::write(dir.join("in/predictions.jsonl"), preds).unwrap();

    let mut loo = String::new();
    for i in 0..4usize {
        writeln!(
            loo,
            "{{\"id\":\"h{i}\",\"raters\":[[\"Paris\"],[\"paris!\"],[\"{}\"]]}}",
            if i % 2 == 0 { "Paris" } else { "London" }
        )
        .unwrap();
    }
    std::fs::write(dir.join("in/raters.jsonl"), loo).unwrap();

    std::fs::write(
        dir.join("in/labels.txt"),
        "full\npartial\nnone\nfull\nfull\npartial\nnone\nnone\nfull\npartial\n",
    )
    .unwrap();

    std::fs::write(
        dir.join("in/pairs.csv"),
        "x,y\n1,2\n4,5\n9,7\n16,11\n25,13\n36,17\n49,23\n64,29\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("in/points.csv"),
        "params,accuracy\n1e8,0.31\n1e9,0.34\n1e10,0.41\n1e11,0.44\n560e6,0.33\n176e9,0.47\n",
    )
    .unwrap();
    std::fs::write(dir.join("in/counts.txt"), "0\n1\n5\n12\n300\n4567\n").unwrap();

    // In-context examples and test questions for prompt construction, plus
    // gold pages for the oracle mode.
    let incontext = "{\"id\":\"c0\",\"question\":\"find alpha1 now\",\"answers\":[\"beta1\"]}\n\
                     {\"id\":\"c1\",\"question\":\"find alpha2 now\",\"answers\":[\"beta2\"]}\n";
    std::fs::write(dir.join("in/incontext.jsonl"), incontext).unwrap();
    let tests = "{\"id\":\"t0\",\"question\":\"where is alpha3\",\"answers\":[\"beta3\"]}\n\
                 {\"id\":\"t1\",\"question\":\"where is alpha4\",\"answers\":[\"beta4\"]}\n";
    std::fs::write(dir.join("in/tests.jsonl"), tests).unwrap();
    let mut pages = String::new();
    for (id, k) in [("c0", 1), ("c1", 2), ("t0", 3), ("t1", 4)] {
        let mut body: Vec<String> = (0..120).map(|w| format!("word{w}")).collect();
        body[60] = format!("beta{k}");
        writeln!(pages, "{{\"id\":\"{id}\",\"text\":\"{}\"}}", body.join(" ")).unwrap();
    }
    std::fs::write(dir.join("in/pages.jsonl"), pages).unwrap();
}

/// Run one subcommand with relative paths from `dir`; returns its stdout.
fn run(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ltk"))
        .current_dir(dir)
        .env_remove("LTK_WORKERS")
        .args(args)
        .output()
        .expect("spawn ltk");
    assert!(
        out.status.success(),
        "ltk {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// Execute every subcommand once; returns concatenated stdout transcripts.
fn run_pipeline(dir: &Path) -> String {
    write_fixture(dir);
    std::fs::create_dir_all(dir.join("out")).unwrap();
    let mut transcript = String::new();
    let mut log = |name: &str, stdout: String| {
        writeln!(transcript, "=== {name}\n{stdout}").unwrap();
    };

    log(
        "ingest",
        run(dir, &[
            "ingest", "in/shard0.jsonl", "in/shard1.jsonl", "--format", "jsonl", "--output",
            "out/manifest.json",
        ]),
    );
    log(
        "link",
        run(dir, &[
            "link", "--manifest", "out/manifest.json", "--gazetteer", "in/gazetteer.tsv",
            "--output", "out/annotations.jsonl",
        ]),
    );
    log(
        "index build",
        run(dir, &[
            "index", "build", "--manifest", "out/manifest.json", "--annotations",
            "out/annotations.jsonl", "--shards", "4", "--output", "out/index.ltkx",
        ]),
    );
    log(
        "index build --range a",
        run(dir, &[
            "index", "build", "--manifest", "out/manifest.json", "--annotations",
            "out/annotations.jsonl", "--range", "0:25", "--output", "out/part-a.ltks",
        ]),
    );
    log(
        "index build --range b",
        run(dir, &[
            "index", "build", "--manifest", "out/manifest.json", "--annotations",
            "out/annotations.jsonl", "--range", "25:60", "--output", "out/part-b.ltks",
        ]),
    );
    log(
        "index merge",
        run(dir, &[
            "index", "merge", "out/part-b.ltks", "out/part-a.ltks", "--output",
            "out/merged.ltkx",
        ]),
    );
    log(
        "index query entity",
        run(dir, &["index", "query", "--index", "out/index.ltkx", "--entity", "E01"]),
    );
    log(
        "index query pair",
        run(dir, &["index", "query", "--index", "out/index.ltkx", "--pair", "E01", "B1"]),
    );
    log(
        "index query docs",
        run(dir, &["index", "query", "--index", "out/index.ltkx", "--docs", "E01", "B1"]),
    );
    log(
        "qa-link",
        run(dir, &[
            "qa-link", "--questions", "in/questions.jsonl", "--gazetteer", "in/gazetteer.tsv",
            "--index", "out/index.ltkx", "--output", "out/linked.jsonl", "--stats-output",
            "out/discards.json", "--holdout", "4", "--holdout-output", "out/holdout.jsonl",
            "--seed", "9",
        ]),
    );
    log(
        "eval em",
        run(dir, &[
            "eval", "em", "--questions", "in/questions.jsonl", "--predictions",
            "in/predictions.jsonl", "--output", "out/scores.jsonl",
        ]),
    );
    log(
        "eval bins",
        run(dir, &[
            "eval", "bins", "--linked", "out/linked.jsonl", "--scores", "out/scores.jsonl",
            "--min-samples", "2", "--output", "out/curve.csv",
        ]),
    );
    log(
        "eval heuristics",
        run(dir, &[
            "eval", "heuristics", "--linked", "out/linked.jsonl", "--index", "out/index.ltkx",
            "--mode", "question-only", "--output", "out/heuristic.csv",
        ]),
    );
    log(
        "eval bins --counts --max-pair-count",
        run(dir, &[
            "eval", "bins", "--linked", "out/linked.jsonl", "--scores", "out/scores.jsonl",
            "--counts", "out/heuristic.csv", "--max-pair-count", "100", "--min-samples", "1",
            "--output", "out/control-curve.csv",
        ]),
    );
    log(
        "eval loo",
        run(dir, &[
            "eval", "loo", "--annotations", "in/raters.jsonl", "--output", "out/loo.jsonl",
        ]),
    );
    log(
        "eval audit-sample",
        run(dir, &[
            "eval", "audit-sample", "--linked", "out/linked.jsonl", "--index", "out/index.ltkx",
            "--n", "5", "--seed", "11", "--output", "out/audit.csv",
        ]),
    );
    log(
        "eval audit-precision",
        run(dir, &[
            "eval", "audit-precision", "--labels", "in/labels.txt", "--output",
            "out/precision.json",
        ]),
    );
    log("stats spearman", run(dir, &["stats", "spearman", "--input", "in/pairs.csv"]));
    log(
        "stats scaling-fit",
        run(dir, &[
            "stats", "scaling-fit", "--input", "in/points.csv", "--output", "out/fit.json",
            "--extrapolate", "0.9",
        ]),
    );
    log(
        "stats scale-counts",
        run(dir, &[
            "stats", "scale-counts", "--input", "in/counts.txt", "--factor", "16.5", "--output",
            "out/scaled.txt",
        ]),
    );
    log(
        "counterfactual sample",
        run(dir, &[
            "counterfactual", "sample", "--linked", "out/linked.jsonl", "--n-per-bin", "3",
            "--seed", "21", "--output", "out/samples.json",
        ]),
    );
    log(
        "counterfactual filter",
        run(dir, &[
            "counterfactual", "filter", "--manifest", "out/manifest.json", "--samples",
            "out/samples.json", "--index", "out/index.ltkx", "--output-dir", "out/filtered",
        ]),
    );
    log(
        "retrieval segment",
        run(dir, &[
            "retrieval", "segment", "--manifest", "out/manifest.json", "--output",
            "out/passages.jsonl",
        ]),
    );
    log(
        "retrieval build",
        run(dir, &[
            "retrieval", "build", "--passages", "out/passages.jsonl", "--output",
            "out/bm25.json",
        ]),
    );
    log(
        "retrieval query",
        run(dir, &[
            "retrieval", "query", "--index", "out/bm25.json", "--question",
            "alpha1 and beta2", "--k", "4",
        ]),
    );
    log(
        "retrieval recall",
        run(dir, &[
            "retrieval", "recall", "--index", "out/bm25.json", "--linked", "out/linked.jsonl",
            "--questions", "in/questions.jsonl", "--ks", "1,3,5", "--min-samples", "1",
            "--output", "out/recall.csv",
        ]),
    );
    log(
        "retrieval prompts closed-book",
        run(dir, &[
            "retrieval", "prompts", "--questions", "in/tests.jsonl", "--incontext",
            "in/incontext.jsonl", "--mode", "closed-book", "--shots", "2", "--output",
            "out/prompts-closed.jsonl",
        ]),
    );
    log(
        "retrieval prompts bm25",
        run(dir, &[
            "retrieval", "prompts", "--questions", "in/tests.jsonl", "--incontext",
            "in/incontext.jsonl", "--mode", "bm25", "--shots", "2", "--bm25-index",
            "out/bm25.json", "--top-k", "3", "--output", "out/prompts-bm25.jsonl",
        ]),
    );
    log(
        "retrieval prompts oracle",
        run(dir, &[
            "retrieval", "prompts", "--questions", "in/tests.jsonl", "--incontext",
            "in/incontext.jsonl", "--mode", "oracle", "--shots", "2", "--pages",
            "in/pages.jsonl", "--output", "out/prompts-oracle.jsonl",
        ]),
    );
    transcript
}

/// All files under out/, keyed by relative path.
fn collect_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.join("out")];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn acceptance_cli_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let transcript_a = run_pipeline(dir_a.path());
    let transcript_b = run_pipeline(dir_b.path());

    assert_eq!(transcript_a, transcript_b, "stdout transcripts differ between runs");

    let outputs_a = collect_outputs(dir_a.path());
    let outputs_b = collect_outputs(dir_b.path());
    assert_eq!(
        outputs_a.keys().collect::<Vec<_>>(),
        outputs_b.keys().collect::<Vec<_>>(),
        "output file sets differ"
    );
    assert!(outputs_a.len() >= 20, "expected >= 20 artifacts, got {}", outputs_a.len());
    for (path, bytes) in &outputs_a {
        assert_eq!(bytes, &outputs_b[path], "artifact {path} differs between runs");
    }

    // A full build and a merge of explicitly built ranges describe the same
    // corpus, so the two index files must be byte-identical too.
    assert_eq!(outputs_a["out/index.ltkx"], outputs_a["out/merged.ltkx"]);

    println!(
        "ACCEPTANCE cli_determinism: PASS ({} artifacts byte-identical across re-runs)",
        outputs_a.len()
    );
}
