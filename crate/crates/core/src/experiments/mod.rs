//! Sweeps over strategy configurations and seeds, with a hashed manifest
//! of every output, and cross-report comparison with bar-chart plots.
//!
//! Output layout for a sweep:
//!
//! ```text
//! <output>/manifest.jsonl
//! <output>/calls.jsonl                      (not in the manifest)
//! <output>/seed-<s>/report.{csv,txt}        all configs, deltas vs baseline
//! <output>/seed-<s>/<label>/records.jsonl
//! <output>/seed-<s>/<label>/results.jsonl
//! <output>/seed-<s>/<label>/report.{csv,txt}
//! <output>/seed-<s>/<label>/run.json        effective config
//! <output>/plots/<task>-seed<s>.svg
//! ```

pub mod mini_mkqa;
pub mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ingest_corpus, Corpus, CorpusError, LangPolicy};
use crate::evaluation::langid::Profiles;
use crate::evaluation::report::{aggregate, delta_row, DeltaRow, MixDepth, Report, Rollup};
use crate::evaluation::{score, EvalError, EvalRecord, ResourceRegistry};
use crate::lang::{Lang, REGISTRY};
use crate::pipeline::stack::{build_stack, Source, StackSpec};
use crate::pipeline::{run_queries, PipelineError, Strategy, StrategyConfig};
use crate::providers::cache::write_atomic;
use crate::providers::{CallLog, ProviderError};
use crate::queries::{load_queries, QueryError, QueryItem};
use crate::retrieval::DEFAULT_DIM;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep spec {path}: {message}")]
    Spec { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Queries(#[from] QueryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io { path: path.display().to_string(), source }
}

/// One grid: every config runs against the same corpus and queries, once
/// per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Task name, used for plot file names.
    pub name: String,
    pub configs: Vec<StrategyConfig>,
    pub corpus: PathBuf,
    pub queries: PathBuf,
    /// Mock translator dictionary.
    pub dictionary: Option<PathBuf>,
    pub output: PathBuf,
    pub seeds: Vec<u64>,
    pub baseline: Option<String>,
    /// Expected corpus languages; every registered language when absent.
    pub languages: Option<BTreeSet<Lang>>,
    pub embedder: Source,
    pub dim: usize,
    pub endpoints: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: Option<String>,
    corpus: PathBuf,
    queries: PathBuf,
    dictionary: Option<PathBuf>,
    output: PathBuf,
    #[serde(default)]
    seeds: Vec<u64>,
    baseline: Option<String>,
    languages: Option<Vec<String>>,
    embedder: Option<String>,
    dim: Option<usize>,
    endpoints: Option<PathBuf>,
    #[serde(default)]
    defaults: toml::Table,
    configs: Vec<toml::Table>,
}

/// String form of a scalar TOML value, for flat `key = value` settings.
pub fn scalar(key: &str, value: &toml::Value) -> Result<String, String> {
    match value {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(format!("`{key}` must be a scalar")),
    }
}

/// Label unique within a sweep: the strategy, plus scope and perturbation
/// when they differ from the defaults.
pub fn run_label(config: &StrategyConfig) -> String {
    if let Some(l) = &config.label {
        return l.clone();
    }
    let mut label = config.strategy.to_string();
    if config.scope != config.strategy.default_scope() {
        label.push('-');
        label.push_str(config.scope.as_str());
    }
    if config.perturb != Default::default() {
        label.push('-');
        label.push_str(config.perturb.as_str());
    }
    label
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|message| SweepError::Spec { path: path.display().to_string(), message })
    }

    /// Parses TOML; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| e.to_string())?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let mut configs = Vec::new();
        for (i, table) in raw.configs.iter().enumerate() {
            let mut pairs: Vec<(String, String)> = Vec::new();
            for (k, v) in raw.defaults.iter().chain(table.iter()) {
                pairs.push((k.clone(), scalar(k, v)?));
            }
            let config = StrategyConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
                .map_err(|e| format!("configs[{i}]: {e}"))?;
            configs.push(config);
        }
        let languages = match raw.languages {
            None => None,
            Some(codes) => Some(codes.iter().map(|c| c.parse::<Lang>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?),
        };
        let corpus = resolve(raw.corpus);
        let spec = SweepSpec {
            name: raw.name.unwrap_or_else(|| {
                corpus.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into())
            }),
            configs,
            corpus,
            queries: resolve(raw.queries),
            dictionary: raw.dictionary.map(resolve),
            output: resolve(raw.output),
            seeds: if raw.seeds.is_empty() { vec![0] } else { raw.seeds },
            baseline: raw.baseline,
            languages,
            embedder: raw.embedder.as_deref().unwrap_or("reference").parse()?,
            dim: raw.dim.unwrap_or(DEFAULT_DIM),
            endpoints: raw.endpoints.map(resolve),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.configs.is_empty() {
            return Err("at least one [[configs]] entry is required".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.configs {
            c.validate().map_err(|e| e.to_string())?;
            let label = run_label(c);
            if !seen.insert(label.clone()) {
                return Err(format!("duplicate run label `{label}`; set `label` to disambiguate"));
            }
        }
        if let Some(b) = &self.baseline {
            let known = self.configs.iter().any(|c| run_label(c) == *b || c.strategy.as_str().eq_ignore_ascii_case(b));
            if !known {
                return Err(format!("baseline `{b}` matches no config"));
            }
        }
        Ok(())
    }
}

/// Runtime settings that do not change results.
#[derive(Clone)]
pub struct SweepOptions {
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    pub parallelism: usize,
    pub registry: ResourceRegistry,
    pub profiles: Arc<Profiles>,
    pub mix_depth: MixDepth,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            cache_dir: None,
            offline: true,
            parallelism: 1,
            registry: ResourceRegistry::default(),
            profiles: Arc::new(Profiles::builtin()),
            mix_depth: MixDepth::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestEntry {
    Sweep { name: String, corpus_sha256: String, queries_sha256: String, seeds: Vec<u64>, status: RunStatus },
    Run { label: String, seed: u64, status: RunStatus, #[serde(default, skip_serializing_if = "Option::is_none")] error: Option<String> },
    File { path: String, sha256: String, bytes: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Manifest { entries })
    }

    pub fn files(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.entries.iter().filter_map(|e| match e {
            ManifestEntry::File { path, sha256, bytes } => Some((path.as_str(), sha256.as_str(), *bytes)),
            _ => None,
        })
    }

    pub fn runs(&self) -> impl Iterator<Item = (&str, u64, &RunStatus)> {
        self.entries.iter().filter_map(|e| match e {
            ManifestEntry::Run { label, seed, status, .. } => Some((label.as_str(), *seed, status)),
            _ => None,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.runs().all(|(_, _, s)| *s == RunStatus::Ok)
    }

    /// Checks every listed file under `root` against its recorded hash.
    pub fn verify(&self, root: &Path) -> Result<(), String> {
        for (path, sha, bytes) in self.files() {
            let data = std::fs::read(root.join(path)).map_err(|e| format!("{path}: {e}"))?;
            if data.len() as u64 != bytes || sha256_hex(&data) != sha {
                return Err(format!("{path}: content does not match manifest"));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Everything a sweep produced, kept in memory for callers and tests.
pub struct SweepOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Report over all successful configs, per seed.
    pub reports: BTreeMap<u64, Report>,
    pub records: BTreeMap<(String, u64), Vec<EvalRecord>>,
    pub results: BTreeMap<(String, u64), Vec<crate::pipeline::PipelineResult>>,
    pub log: CallLog,
}

struct Writer<'a> {
    root: &'a Path,
    files: BTreeMap<String, (String, u64)>,
}

impl Writer<'_> {
    fn write(&mut self, rel: &str, data: &[u8]) -> Result<(), SweepError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        write_atomic(&path, data).map_err(io_err(&path))?;
        self.files.insert(rel.to_string(), (sha256_hex(data), data.len() as u64));
        Ok(())
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn load_corpus(path: &Path, languages: Option<&BTreeSet<Lang>>) -> Result<Corpus, CorpusError> {
    let all: BTreeSet<Lang> = REGISTRY.iter().map(|(c, _)| c.parse().expect("registered")).collect();
    Ok(ingest_corpus(path, languages.unwrap_or(&all), LangPolicy::Reject)?.corpus)
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    label: &'a str,
    seed: u64,
    config: BTreeMap<&'static str, String>,
    embedder: String,
    translator: String,
    llm: String,
    corpus_sha256: &'a str,
    queries: usize,
}

/// Runs every config for every seed. A config that fails (any query
/// error) is recorded as failed in the manifest and the sweep moves on.
pub fn run_sweep(spec: &SweepSpec, opts: &SweepOptions) -> Result<SweepOutcome, SweepError> {
    spec.validate().map_err(|message| SweepError::Spec { path: spec.output.display().to_string(), message })?;
    let corpus = load_corpus(&spec.corpus, spec.languages.as_ref())?;
    let queries = load_queries(&spec.queries)?;
    let queries_bytes = std::fs::read(&spec.queries).map_err(io_err(&spec.queries))?;
    std::fs::create_dir_all(&spec.output).map_err(io_err(&spec.output))?;

    let log = CallLog::new();
    let mut writer = Writer { root: &spec.output, files: BTreeMap::new() };
    let mut run_entries = Vec::new();
    let mut reports = BTreeMap::new();
    let mut all_records = BTreeMap::new();
    let mut all_results = BTreeMap::new();

    for &seed in &spec.seeds {
        let mut seed_records: Vec<EvalRecord> = Vec::new();
        for base in &spec.configs {
            let mut config = base.clone();
            config.seed = seed;
            let label = run_label(&config);
            config.label = Some(label.clone());
            tracing::info!(%label, seed, "running config");
            match run_one(spec, opts, &config, &corpus, &queries, &log) {
                Ok((results, records, meta)) => {
                    let dir = format!("seed-{seed}/{label}");
                    writer.write(&format!("{dir}/records.jsonl"), jsonl(&records).as_bytes())?;
                    writer.write(&format!("{dir}/results.jsonl"), jsonl(&results).as_bytes())?;
                    writer.write(&format!("{dir}/run.json"), meta.as_bytes())?;
                    let report = aggregate(&records, &opts.registry, None, opts.mix_depth)?;
                    writer.write(&format!("{dir}/report.csv"), report.to_csv().as_bytes())?;
                    writer.write(&format!("{dir}/report.txt"), report.to_text().as_bytes())?;
                    seed_records.extend(records.iter().cloned());
                    all_records.insert((label.clone(), seed), records);
                    all_results.insert((label.clone(), seed), results);
                    run_entries.push(ManifestEntry::Run { label, seed, status: RunStatus::Ok, error: None });
                }
                Err(error) => {
                    tracing::error!(%label, seed, %error, "config failed");
                    run_entries.push(ManifestEntry::Run { label, seed, status: RunStatus::Failed, error: Some(error) });
                }
            }
        }
        if seed_records.is_empty() {
            continue;
        }
        let baseline =
            spec.baseline.as_deref().filter(|b| seed_records.iter().any(|r| r.label == *b || r.strategy.as_str().eq_ignore_ascii_case(b)));
        let report = aggregate(&seed_records, &opts.registry, baseline, opts.mix_depth)?;
        writer.write(&format!("seed-{seed}/report.csv"), report.to_csv().as_bytes())?;
        writer.write(&format!("seed-{seed}/report.txt"), report.to_text().as_bytes())?;
        if let Some(b) = &report.baseline {
            let cmp = compare(std::slice::from_ref(&report), b)?;
            writer.write(&format!("plots/{}-seed{seed}.svg", spec.name), cmp.svg(&format!("{} (seed {seed})", spec.name)).as_bytes())?;
        }
        reports.insert(seed, report);
    }

    let status = if run_entries.iter().all(|e| matches!(e, ManifestEntry::Run { status: RunStatus::Ok, .. })) {
        RunStatus::Ok
    } else {
        RunStatus::Failed
    };
    let mut entries = vec![ManifestEntry::Sweep {
        name: spec.name.clone(),
        corpus_sha256: corpus.content_hash().to_string(),
        queries_sha256: sha256_hex(&queries_bytes),
        seeds: spec.seeds.clone(),
        status,
    }];
    entries.extend(run_entries);
    entries.extend(
        writer.files.iter().map(|(path, (sha256, bytes))| ManifestEntry::File { path: path.clone(), sha256: sha256.clone(), bytes: *bytes }),
    );
    let manifest = Manifest { entries };
    let manifest_path = spec.output.join("manifest.jsonl");
    write_atomic(&manifest_path, manifest.to_jsonl().as_bytes()).map_err(io_err(&manifest_path))?;
    let calls = spec.output.join("calls.jsonl");
    log.write_jsonl(&calls).map_err(io_err(&calls))?;
    Ok(SweepOutcome { manifest, manifest_path, reports, records: all_records, results: all_results, log })
}

type RunOutput = (Vec<crate::pipeline::PipelineResult>, Vec<EvalRecord>, String);

fn run_one(
    spec: &SweepSpec,
    opts: &SweepOptions,
    config: &StrategyConfig,
    corpus: &Corpus,
    queries: &[QueryItem],
    log: &CallLog,
) -> Result<RunOutput, String> {
    let stack_spec = StackSpec {
        embedder: spec.embedder.clone(),
        dim: spec.dim,
        translator: config.translator_id.parse()?,
        dictionary: spec.dictionary.clone(),
        llm: config.llm_id.parse()?,
        endpoints: spec.endpoints.clone(),
        cache_dir: opts.cache_dir.clone(),
        translation_cache: None,
        offline: opts.offline,
    };
    let stack = build_stack(&stack_spec, queries, log.clone()).map_err(|e| e.to_string())?;
    let label = config.label();
    let mut results = Vec::new();
    let mut records = Vec::new();
    for (query, outcome) in run_queries(config, queries, corpus, &stack.providers, opts.parallelism) {
        let result = outcome.map_err(|e: PipelineError| format!("query {}: {e}", query.id))?;
        records.push(score(&result, &query, &label, &opts.profiles));
        results.push(result);
    }
    let meta = RunMetadata {
        label: &label,
        seed: config.seed,
        config: config.to_pairs().into_iter().collect(),
        embedder: stack.providers.embedder.id(),
        translator: stack.translator_id(),
        llm: stack.llm_id(),
        corpus_sha256: corpus.content_hash(),
        queries: queries.len(),
    };
    let meta = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    Ok((results, records, meta))
}

/// Deltas of every table against one baseline, across reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    /// EM rollups in input order, baseline included.
    pub rollups: Vec<(String, Strategy, Rollup)>,
    pub deltas: Vec<DeltaRow>,
}

/// Compares every strategy table in `reports` with the `baseline` table
/// (matched by label, then by strategy name). All tables must cover the
/// same languages.
pub fn compare(reports: &[Report], baseline: &str) -> Result<Comparison, EvalError> {
    let tables: Vec<_> = reports.iter().flat_map(|r| r.tables.iter()).collect();
    let base = tables
        .iter()
        .find(|t| t.label == baseline)
        .or_else(|| tables.iter().find(|t| t.strategy.as_str().eq_ignore_ascii_case(baseline)))
        .ok_or_else(|| EvalError::Mismatch(format!("baseline `{baseline}` not among the reports")))?;
    let langs = |t: &crate::evaluation::report::StrategyTable| t.rows.iter().map(|r| r.lang).collect::<BTreeSet<_>>();
    let base_langs = langs(base);
    let mut rollups = Vec::new();
    let mut deltas = Vec::new();
    for t in &tables {
        if langs(t) != base_langs {
            return Err(EvalError::Mismatch(format!(
                "`{}` covers {:?} but baseline `{}` covers {:?}",
                t.label,
                langs(t).iter().map(Lang::as_str).collect::<Vec<_>>(),
                base.label,
                base_langs.iter().map(Lang::as_str).collect::<Vec<_>>()
            )));
        }
        rollups.push((t.label.clone(), t.strategy, t.em));
        if !std::ptr::eq(*t, *base) {
            deltas.push(delta_row(&t.em, &t.label, &base.em, &base.label));
        }
    }
    Ok(Comparison { baseline: base.label.clone(), rollups, deltas })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,baseline,rollup,delta\n");
        for d in &self.deltas {
            for (name, v) in [("Avg", Some(d.avg)), ("HR", d.hr), ("LR", d.lr)] {
                let v = v.map_or_else(|| "n/a".into(), |x| format!("{:+.1}", x + 0.0));
                let _ = writeln!(out, "{},{},{name},{v}", d.label, d.baseline);
            }
        }
        out
    }

    pub fn svg(&self, title: &str) -> String {
        plot::bar_chart(title, self)
    }

    /// Writes `deltas.csv` and `plots/<task>.svg` under `dir`.
    pub fn write(&self, dir: &Path, task: &str) -> std::io::Result<Vec<PathBuf>> {
        let plots = dir.join("plots");
        std::fs::create_dir_all(&plots)?;
        let csv = dir.join("deltas.csv");
        write_atomic(&csv, self.to_csv().as_bytes())?;
        let svg = plots.join(format!("{task}.svg"));
        write_atomic(&svg, self.svg(task).as_bytes())?;
        Ok(vec![csv, svg])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_with_defaults_and_labels() {
        let text = r#"
            corpus = "c.jsonl"
            queries = "q.jsonl"
            output = "out"
            baseline = "MONO"
            [defaults]
            k_retrieve = 20
            [[configs]]
            strategy = "MONO"
            [[configs]]
            strategy = "CROSS"
            perturb = "EN_FIRST"
        "#;
        let spec = SweepSpec::parse(text, Path::new("/data")).unwrap();
        assert_eq!(spec.corpus, PathBuf::from("/data/c.jsonl"));
        assert_eq!(spec.seeds, vec![0]);
        assert_eq!(spec.configs[0].k_retrieve, 20);
        assert_eq!(run_label(&spec.configs[1]), "CROSS-EN_FIRST");
        assert_eq!(spec.name, "c");
    }

    #[test]
    fn spec_rejects_duplicates_and_empty() {
        let base = "corpus = \"c\"\nqueries = \"q\"\noutput = \"o\"\n";
        assert!(SweepSpec::parse(&format!("{base}configs = []"), Path::new(".")).is_err());
        let dup = format!("{base}[[configs]]\nstrategy = \"MULTI\"\n[[configs]]\nstrategy = \"multi\"\n");
        assert!(SweepSpec::parse(&dup, Path::new(".")).unwrap_err().contains("duplicate"));
        let bad = format!("{base}[[configs]]\nstrategy = \"MONO\"\nscope = \"all\"\n");
        assert!(SweepSpec::parse(&bad, Path::new(".")).is_err());
    }
}
