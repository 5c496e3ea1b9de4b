use std::fs;
use std::path::PathBuf;

use xlrag::evaluation::langid::{detect_language, Profiles, DEFAULT_THRESHOLD, DEFAULT_TOP, UNDETERMINED};

fn data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/langid")
}

fn heldout() -> Vec<(String, String)> {
    fs::read_to_string(data().join("heldout.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (lang, text) = l.split_once('\t').unwrap();
            (lang.to_string(), text.to_string())
        })
        .collect()
}

#[test]
fn shipped_profiles_match_seed_corpora() {
    let rebuilt = Profiles::build_from_seed_dir(&data().join("seed"), DEFAULT_TOP, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(rebuilt, Profiles::builtin(), "run `cargo run --example build_profiles` to refresh");
}

#[test]
fn seed_sentences_classify_as_their_language() {
    let p = Profiles::builtin();
    let mut wrong = Vec::new();
    for entry in fs::read_dir(data().join("seed")).unwrap() {
        let path = entry.unwrap().path();
        let lang = path.file_stem().unwrap().to_str().unwrap().to_string();
        for line in fs::read_to_string(&path).unwrap().lines().filter(|l| !l.trim().is_empty()) {
            let got = detect_language(line, &p);
            if got != lang {
                wrong.push(format!("{lang}->{got}: {line}"));
            }
        }
    }
    assert!(wrong.is_empty(), "{wrong:#?}");
}

#[test]
fn heldout_fixture_shape() {
    let rows = heldout();
    let mut per_lang = std::collections::BTreeMap::new();
    for (l, _) in &rows {
        *per_lang.entry(l.clone()).or_insert(0) += 1;
    }
    assert!(per_lang.len() >= 10);
    assert!(per_lang.values().all(|&n| n == 20), "{per_lang:?}");
}

#[test]
fn heldout_accuracy() {
    let p = Profiles::builtin();
    let rows = heldout();
    let mut errors = Vec::new();
    for (lang, text) in &rows {
        let got = detect_language(text, &p);
        if &got != lang {
            errors.push(format!("{lang}->{got}: {text}"));
        }
    }
    let acc = 1.0 - errors.len() as f64 / rows.len() as f64;
    assert!(acc >= 0.95, "accuracy {acc:.3}, errors {errors:#?}");
}

#[test]
fn empty_input_is_undetermined() {
    let p = Profiles::builtin();
    for t in ["", " ", "\n\t", "a", "42"] {
        assert_eq!(detect_language(t, &p), UNDETERMINED);
    }
}

#[test]
fn unrelated_script_is_undetermined() {
    let p = Profiles::builtin();
    // Devanagari and Georgian have no profile
    assert_eq!(detect_language("यह एक छोटा सा वाक्य है जो हिंदी में लिखा गया है", &p), UNDETERMINED);
    assert_eq!(detect_language("ეს არის მოკლე წინადადება ქართულ ენაზე", &p), UNDETERMINED);
}
