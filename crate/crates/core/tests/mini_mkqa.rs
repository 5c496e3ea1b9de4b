use std::collections::BTreeMap;
use std::path::PathBuf;

use xlrag::experiments::mini_mkqa::{self, Placement};
use xlrag::experiments::{run_sweep, SweepOptions, SweepSpec};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini-mkqa")
}

#[test]
fn shipped_files_match_generator() {
    let set = mini_mkqa::generate();
    mini_mkqa::verify(&set).unwrap();
    let dir = data_dir();
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap();
    assert_eq!(read("corpus.jsonl"), set.corpus_jsonl(), "run `cargo run --example gen_mini_mkqa`");
    assert_eq!(read("queries.jsonl"), set.queries_jsonl());
    assert_eq!(read("dictionary.jsonl"), set.dictionary_jsonl());
    assert_eq!(read("DESIGN.md"), set.design_markdown());
}

#[test]
fn every_query_behaves_as_designed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SweepSpec::load(&data_dir().join("sweep.toml")).unwrap();
    spec.output = tmp.path().join("out");
    spec.configs.retain(|c| c.perturb == Default::default());
    let outcome = run_sweep(&spec, &SweepOptions::default()).unwrap();
    assert!(outcome.manifest.is_complete());

    let set = mini_mkqa::generate();
    let design: BTreeMap<&str, Placement> = set.design.iter().map(|r| (r.query_id.as_str(), r.placement)).collect();
    let mut wrong = Vec::new();
    for ((label, _), records) in &outcome.records {
        for r in records {
            let expected = design[r.query_id.as_str()].expected_correct().contains(&label.as_str());
            if (r.em == 1) != expected {
                wrong.push(format!("{label} {} ({:?}): em {} pred {:?}", r.query_id, design[r.query_id.as_str()], r.em, r.prediction));
            }
        }
    }
    assert!(wrong.is_empty(), "{} unexpected outcomes:\n{}", wrong.len(), wrong.join("\n"));
}
