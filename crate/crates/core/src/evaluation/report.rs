//! Per-language tables, Avg/HR/LR rollups, deltas against a baseline and
//! retrieved-language mix.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalRecord, Resource, ResourceRegistry};
use crate::lang::Lang;
use crate::pipeline::Strategy;

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Which retrieval stage the language mix counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixDepth {
    /// In-context passages after rerank.
    #[default]
    Context,
    /// First-stage candidates.
    Retrieve,
}

impl std::str::FromStr for MixDepth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "context" => Ok(MixDepth::Context),
            "retrieve" => Ok(MixDepth::Retrieve),
            other => Err(format!("unknown mix depth `{other}` (expected context or retrieve)")),
        }
    }
}

/// Share of retrieved passages in English, in the query language and in
/// any other language, as percentages to one decimal. `sl` is `None` for
/// English queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanguageMix {
    pub en: f64,
    pub sl: Option<f64>,
    pub others: f64,
    pub passages: usize,
}

impl fmt::Display for LanguageMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sl {
            Some(sl) => write!(f, "{:.1}% / {:.1}% / {:.1}%", self.en, sl, self.others),
            None => write!(f, "{:.1}% / n/a / {:.1}%", self.en, self.others),
        }
    }
}

pub fn mix_from_histogram(hist: &BTreeMap<Lang, usize>, query_lang: Lang) -> Result<LanguageMix, EvalError> {
    let total: usize = hist.values().sum();
    if total == 0 {
        return Err(EvalError::NoPassages(query_lang));
    }
    let count = |l: Lang| hist.get(&l).copied().unwrap_or(0);
    let en = count(Lang::EN);
    let sl = if query_lang == Lang::EN { 0 } else { count(query_lang) };
    // Largest-remainder rounding in tenths of a percent so the three shares
    // always total exactly 100.0.
    let counts = [en, sl, total - en - sl];
    let mut tenths = counts.map(|n| 1000 * n / total);
    let mut order = [0, 1, 2];
    order.sort_by_key(|&i| std::cmp::Reverse((1000 * counts[i]) % total));
    let short = 1000 - tenths.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        tenths[i] += 1;
    }
    let pct = |i: usize| tenths[i] as f64 / 10.0;
    Ok(LanguageMix {
        en: pct(0),
        sl: (query_lang != Lang::EN).then(|| pct(1)),
        others: pct(2),
        passages: total,
    })
}

/// Language mix over all passages of `records`, which must share
/// `query_lang`.
pub fn language_mix(records: &[EvalRecord], query_lang: Lang, depth: MixDepth) -> Result<LanguageMix, EvalError> {
    let mut hist: BTreeMap<Lang, usize> = BTreeMap::new();
    for r in records {
        if r.query_lang != query_lang {
            return Err(EvalError::Mismatch(format!(
                "record {} has query language {}, expected {query_lang}",
                r.query_id, r.query_lang
            )));
        }
        let h = match depth {
            MixDepth::Context => &r.retrieved_lang_histogram,
            MixDepth::Retrieve => &r.candidate_lang_histogram,
        };
        for (l, n) in h {
            *hist.entry(*l).or_insert(0) += n;
        }
    }
    mix_from_histogram(&hist, query_lang)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangRow {
    pub lang: Lang,
    pub resource: Resource,
    pub n: usize,
    /// Percentages in [0, 100].
    pub em: f64,
    pub recall3: f64,
    pub lang_correct: f64,
}

/// Unweighted means over member languages. HR/LR are `None` when no
/// language of that class was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub avg: f64,
    pub hr: Option<f64>,
    pub lr: Option<f64>,
}

impl Rollup {
    pub fn from_rows(rows: &[LangRow], metric: impl Fn(&LangRow) -> f64) -> Rollup {
        let mean = |it: Vec<f64>| (!it.is_empty()).then(|| it.iter().sum::<f64>() / it.len() as f64);
        let of = |class: Option<Resource>| {
            mean(rows.iter().filter(|r| class.is_none_or(|c| r.resource == c)).map(&metric).collect())
        };
        Rollup { avg: of(None).unwrap_or(0.0), hr: of(Some(Resource::HR)), lr: of(Some(Resource::LR)) }
    }

    pub fn entries(&self) -> [(&'static str, Option<f64>); 3] {
        [("Avg", Some(self.avg)), ("HR", self.hr), ("LR", self.lr)]
    }
}

/// Results of one run label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub label: String,
    pub strategy: Strategy,
    pub rows: Vec<LangRow>,
    pub em: Rollup,
    pub recall3: Rollup,
    pub lang_correct: Rollup,
    pub mix: BTreeMap<Lang, LanguageMix>,
}

/// Accuracy difference of a label against the baseline, per rollup, each
/// side rounded to one decimal before subtracting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub label: String,
    pub baseline: String,
    pub avg: f64,
    pub hr: Option<f64>,
    pub lr: Option<f64>,
}

pub fn delta(a: f64, b: f64) -> f64 {
    round1(round1(a) - round1(b))
}

pub fn delta_row(table: &Rollup, label: &str, base: &Rollup, baseline: &str) -> DeltaRow {
    let opt = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| delta(a, b));
    DeltaRow {
        label: label.to_string(),
        baseline: baseline.to_string(),
        avg: delta(table.avg, base.avg),
        hr: opt(table.hr, base.hr),
        lr: opt(table.lr, base.lr),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tables: Vec<StrategyTable>,
    pub baseline: Option<String>,
    pub deltas: Vec<DeltaRow>,
    pub mix_depth: MixDepth,
}

pub const NORMALIZATION_NOTE: &str = "answers compared after NFKC, case folding, punctuation removal and whitespace collapse; \
same rules for every script";

/// Builds one table per run label (sorted), plus deltas against
/// `baseline` when given. `baseline` matches a label or a strategy name.
pub fn aggregate(
    records: &[EvalRecord],
    registry: &ResourceRegistry,
    baseline: Option<&str>,
    mix_depth: MixDepth,
) -> Result<Report, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut by_label: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_label.entry(&r.label).or_default().push(r);
    }
    let mut tables = Vec::new();
    for (label, recs) in by_label {
        let mut by_lang: BTreeMap<Lang, Vec<&EvalRecord>> = BTreeMap::new();
        for r in &recs {
            by_lang.entry(r.query_lang).or_default().push(r);
        }
        let mut rows = Vec::new();
        let mut mix = BTreeMap::new();
        for (lang, rs) in &by_lang {
            let n = rs.len();
            let pct = |f: &dyn Fn(&EvalRecord) -> f64| 100.0 * rs.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            rows.push(LangRow {
                lang: *lang,
                resource: registry.get(*lang)?,
                n,
                em: pct(&|r| f64::from(r.em)),
                recall3: pct(&|r| r.recall3),
                lang_correct: pct(&|r| f64::from(r.lang_correct)),
            });
            let owned: Vec<EvalRecord> = rs.iter().map(|r| (*r).clone()).collect();
            if let Ok(m) = language_mix(&owned, *lang, mix_depth) {
                mix.insert(*lang, m);
            }
        }
        tables.push(StrategyTable {
            label: label.to_string(),
            strategy: recs[0].strategy,
            em: Rollup::from_rows(&rows, |r| r.em),
            recall3: Rollup::from_rows(&rows, |r| r.recall3),
            lang_correct: Rollup::from_rows(&rows, |r| r.lang_correct),
            rows,
            mix,
        });
    }
    let mut deltas = Vec::new();
    let baseline_label = match baseline {
        None => None,
        Some(b) => {
            let base = tables
                .iter()
                .find(|t| t.label == b)
                .or_else(|| tables.iter().find(|t| t.strategy.as_str().eq_ignore_ascii_case(b)))
                .ok_or_else(|| EvalError::Mismatch(format!("baseline `{b}` not among the records")))?;
            for t in &tables {
                if t.label != base.label {
                    deltas.push(delta_row(&t.em, &t.label, &base.em, &base.label));
                }
            }
            Some(base.label.clone())
        }
    };
    Ok(Report { tables, baseline: baseline_label, deltas, mix_depth })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.1}"))
}

fn fmt_delta(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:+.1}", x + 0.0))
}

impl Report {
    pub fn table(&self, label: &str) -> Option<&StrategyTable> {
        self.tables.iter().find(|t| t.label == label)
    }

    /// Long-format CSV: `section,label,lang,resource,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,label,lang,resource,metric,value\n");
        for t in &self.tables {
            for r in &t.rows {
                let _ = writeln!(out, "lang,{},{},{},n,{}", t.label, r.lang, r.resource, r.n);
                for (m, v) in [("em", r.em), ("recall3", r.recall3), ("lang_correct", r.lang_correct)] {
                    let _ = writeln!(out, "lang,{},{},{},{m},{v:.1}", t.label, r.lang, r.resource);
                }
            }
            for (m, rollup) in [("em", &t.em), ("recall3", &t.recall3), ("lang_correct", &t.lang_correct)] {
                for (name, v) in rollup.entries() {
                    let _ = writeln!(out, "rollup,{},{name},,{m},{}", t.label, fmt_opt(v));
                }
            }
            for (lang, m) in &t.mix {
                let _ = writeln!(out, "mix,{},{lang},,pct_en,{:.1}", t.label, m.en);
                let _ = writeln!(out, "mix,{},{lang},,pct_sl,{}", t.label, fmt_opt(m.sl));
                let _ = writeln!(out, "mix,{},{lang},,pct_others,{:.1}", t.label, m.others);
            }
        }
        for d in &self.deltas {
            for (name, v) in [("Avg", Some(d.avg)), ("HR", d.hr), ("LR", d.lr)] {
                let _ = writeln!(out, "delta,{},{name},,em_vs_{},{}", d.label, d.baseline, fmt_delta(v));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {NORMALIZATION_NOTE}");
        let _ = writeln!(
            out,
            "# language mix over {} passages",
            match self.mix_depth {
                MixDepth::Context => "in-context",
                MixDepth::Retrieve => "first-stage",
            }
        );
        for t in &self.tables {
            let _ = writeln!(out, "\n== {} ({}) ==", t.label, t.strategy);
            let _ = writeln!(out, "{:<6}{:<5}{:>5}{:>8}{:>10}{:>10}   mix En / SL / Others", "lang", "res", "n", "EM", "Rec3", "LangOK");
            for r in &t.rows {
                let mix = t.mix.get(&r.lang).map(|m| m.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{:<6}{:<5}{:>5}{:>8.1}{:>10.1}{:>10.1}   {mix}",
                    r.lang.as_str(),
                    r.resource.to_string(),
                    r.n,
                    r.em,
                    r.recall3,
                    r.lang_correct
                );
            }
            for (name, v) in t.em.entries() {
                let _ = writeln!(out, "{name:<6}{:>18}", fmt_opt(v));
            }
        }
        if let Some(b) = &self.baseline {
            let _ = writeln!(out, "\n== EM deltas vs {b} ==");
            let _ = writeln!(out, "{:<24}{:>8}{:>8}{:>8}", "label", "Avg", "HR", "LR");
            for d in &self.deltas {
                let _ = writeln!(out, "{:<24}{:>8}{:>8}{:>8}", d.label, fmt_delta(Some(d.avg)), fmt_delta(d.hr), fmt_delta(d.lr));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &str, lang: &str, em: u8) -> EvalRecord {
        EvalRecord {
            query_id: format!("{label}-{lang}-{em}"),
            query_lang: lang.parse().unwrap(),
            label: label.into(),
            strategy: Strategy::Multi,
            prediction: String::new(),
            parse_failed: false,
            golds: vec!["x".into()],
            em,
            recall3: f64::from(em),
            pred_lang: "und".into(),
            lang_correct: 0,
            retrieved_lang_histogram: BTreeMap::new(),
            candidate_lang_histogram: BTreeMap::new(),
            short_evidence: false,
            seed: 0,
        }
    }

    #[test]
    fn mix_examples() {
        let de: Lang = "de".parse().unwrap();
        let hist: BTreeMap<Lang, usize> =
            [(Lang::EN, 5), (de, 43), ("fr".parse().unwrap(), 2)].into_iter().collect();
        let m = mix_from_histogram(&hist, de).unwrap();
        assert_eq!((m.en, m.sl, m.others), (10.0, Some(86.0), 4.0));
        let only_en: BTreeMap<Lang, usize> = [(Lang::EN, 5)].into_iter().collect();
        let m = mix_from_histogram(&only_en, de).unwrap();
        assert_eq!((m.en, m.sl, m.others), (100.0, Some(0.0), 0.0));
        assert!(matches!(mix_from_histogram(&BTreeMap::new(), de), Err(EvalError::NoPassages(_))));
        let shown = LanguageMix { en: 10.2, sl: Some(86.3), others: 3.1, passages: 1 }.to_string();
        assert_eq!(shown, "10.2% / 86.3% / 3.1%");
    }

    #[test]
    fn single_language_rollup() {
        let recs: Vec<_> = [1, 0, 1, 1].iter().map(|&e| record("M", "de", e)).collect();
        let recs: Vec<_> = recs.into_iter().enumerate().map(|(i, mut r)| { r.query_id = i.to_string(); r }).collect();
        let rep = aggregate(&recs, &ResourceRegistry::default(), None, MixDepth::Context).unwrap();
        let t = &rep.tables[0];
        assert_eq!(t.rows[0].em, 75.0);
        assert_eq!(t.em.avg, 75.0);
        assert_eq!(t.em.hr, Some(75.0));
        assert_eq!(t.em.lr, None);
    }

    #[test]
    fn two_language_rollup_and_delta() {
        let mut recs = Vec::new();
        for (lang, ems) in [("de", [1, 1, 1, 0, 0]), ("ko", [1, 1, 0, 0, 0])] {
            for (i, e) in ems.iter().enumerate() {
                let mut r = record("B", lang, *e);
                r.query_id = format!("{lang}{i}");
                recs.push(r);
                let mut r = record("A", lang, 1);
                r.query_id = format!("{lang}{i}");
                recs.push(r);
            }
        }
        let rep = aggregate(&recs, &ResourceRegistry::default(), Some("B"), MixDepth::Context).unwrap();
        let b = rep.table("B").unwrap();
        assert_eq!((b.em.avg, b.em.hr, b.em.lr), (50.0, Some(60.0), Some(40.0)));
        assert_eq!(rep.deltas.len(), 1);
        assert_eq!(rep.deltas[0].avg, 50.0);
        assert!(rep.to_csv().contains("delta,A,Avg,,em_vs_B,+50.0"));
        assert!(aggregate(&recs, &ResourceRegistry::default(), Some("nope"), MixDepth::Context).is_err());
    }

    #[test]
    fn delta_uses_rounded_sides() {
        assert_eq!(delta(60.4, 56.6), 3.8);
        assert_eq!(delta(57.2, 53.1), 4.1);
        assert_eq!(delta(57.24, 53.06), 4.1);
    }

    #[test]
    fn unmapped_language_is_an_error() {
        let reg = ResourceRegistry::from_pairs([("de".parse().unwrap(), Resource::HR)]);
        let recs = vec![record("M", "ko", 1)];
        assert!(matches!(
            aggregate(&recs, &reg, None, MixDepth::Context),
            Err(EvalError::UnmappedLanguage(_))
        ));
    }
}
