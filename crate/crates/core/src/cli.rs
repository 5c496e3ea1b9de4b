//! Command-line entry point: `ingest`, `index`, `run`, `report`, `sweep`.
//!
//! Settings come from a flat TOML file (`--config`) and flags; a flag always
//! wins over the file. Exit codes: 0 success, 1 usage, 2 data or
//! validation, 3 provider failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::corpus::{ingest_corpus, Corpus, LangPolicy};
use crate::evaluation::langid::Profiles;
use crate::evaluation::report::{aggregate, MixDepth};
use crate::evaluation::{read_records, score, write_records, ResourceRegistry};
use crate::experiments::{compare, run_sweep, scalar, SweepOptions, SweepSpec};
use crate::lang::{Lang, REGISTRY};
use crate::pipeline::stack::{build_stack, Source, StackSpec};
use crate::pipeline::{run_queries, StrategyConfig, CONFIG_KEYS};
use crate::providers::cache::write_atomic;
use crate::providers::CallLog;
use crate::queries::load_queries;
use crate::retrieval::DEFAULT_DIM;

pub const CACHE_DIR_ENV: &str = "XLRAG_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".xlrag-cache";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Provider(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Provider(m) => m,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn provider(e: impl std::fmt::Display) -> CliError {
    CliError::Provider(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "xlrag", version, about = "Multilingual RAG strategies and their evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// Flat TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Serve providers from mocks and the warm cache only.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Response and index cache directory (env: XLRAG_CACHE_DIR).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Translation response cache; defaults to the shared cache dir.
    #[arg(long, global = true)]
    pub translation_cache: Option<PathBuf>,
    /// Base directory for relative data paths.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Log filter, e.g. `info` or `xlrag=debug`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// Provider endpoint registry (JSON lines).
    #[arg(long, global = true)]
    pub endpoints: Option<PathBuf>,
    /// HR/LR registry (`lang<TAB>HR|LR` lines).
    #[arg(long, global = true)]
    pub resource_registry: Option<PathBuf>,
    /// Language identification profiles.
    #[arg(long, global = true)]
    pub langid_profiles: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Validate a corpus file and print its language partition.
    Ingest(IngestArgs),
    /// Embed a corpus into the on-disk index cache.
    Index(IndexArgs),
    /// Run one strategy over a query set and score it.
    Run(RunArgs),
    /// Aggregate scored records into tables, deltas and plots.
    Report(ReportArgs),
    /// Run a grid of configurations from a sweep spec.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Expected corpus languages, comma separated (default: any registered).
    #[arg(long)]
    pub langs: Option<String>,
    /// `reject` or `skip` records outside the expected languages.
    #[arg(long)]
    pub ingest_policy: Option<String>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Write the accepted records here as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// `reference` or `http:<endpoint>`.
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Buckets to index together, comma separated (default: all populated).
    #[arg(long)]
    pub scope_langs: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Mock translator dictionary (JSON lines).
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// MONO, TRAG, MULTI or CROSS.
    #[arg(long)]
    pub strategy: Option<String>,
    /// sl, en, en+sl or all.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub k_retrieve: Option<usize>,
    #[arg(long)]
    pub k_context: Option<usize>,
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// `mock` or `http:<endpoint>`.
    #[arg(long)]
    pub translator: Option<String>,
    /// `mock` or `http:<endpoint>`.
    #[arg(long)]
    pub llm: Option<String>,
    /// ORIGINAL, RANDOM_SHUFFLE, EN_FIRST or EN_LAST.
    #[arg(long)]
    pub perturb: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Question language in TRAG prompts: sl or en.
    #[arg(long)]
    pub trag_prompt_lang: Option<String>,
    /// Prefix each evidence passage with its language code.
    #[arg(long)]
    pub annotate_evidence_lang: Option<bool>,
    /// fail-run or keep-original.
    #[arg(long)]
    pub translation_failure: Option<String>,
    #[arg(long)]
    pub temperature: Option<f32>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub label: Option<String>,
    /// context or retrieve.
    #[arg(long)]
    pub mix_depth: Option<String>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Scored record files (JSON lines).
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub mix_depth: Option<String>,
    /// Write report.csv, report.txt and, with a baseline, deltas and plots.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Task name for plot files.
    #[arg(long, default_value = "report")]
    pub task: String,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the sweep file's output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Effective settings: file values overlaid by flags. Paths keep the
/// directory they are relative to.
#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    bases: BTreeMap<String, PathBuf>,
}

const GLOBAL_KEYS: [&str; 20] = [
    "corpus",
    "queries",
    "dictionary",
    "output",
    "langs",
    "ingest_policy",
    "embedder",
    "dim",
    "translator",
    "llm",
    "endpoints",
    "cache_dir",
    "translation_cache",
    "data_dir",
    "offline",
    "parallelism",
    "log_level",
    "mix_depth",
    "resource_registry",
    "langid_profiles",
];

impl Settings {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut s = Settings::default();
        for (k, v) in &table {
            let known = GLOBAL_KEYS.contains(&k.as_str()) || (CONFIG_KEYS.contains(&k.as_str()) && !k.ends_with("_id"));
            if !known {
                return Err(data(format!("{}: unknown key `{k}`", path.display())));
            }
            let value = match v {
                toml::Value::Array(items) => {
                    items.iter().map(|i| scalar(k, i)).collect::<Result<Vec<_>, _>>().map_err(data)?.join(",")
                }
                other => scalar(k, other).map_err(data)?,
            };
            s.values.insert(k.clone(), value);
            s.bases.insert(k.clone(), base.clone());
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
        self.bases.remove(key);
    }

    fn set_opt(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Relative paths resolve against `data_dir` when set, else against
    /// the config file for file values and the working directory for flags.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = PathBuf::from(self.get(key)?);
        if raw.is_absolute() {
            return Some(raw);
        }
        let base = match (key, self.get("data_dir")) {
            ("cache_dir" | "translation_cache" | "data_dir" | "output", _) | (_, None) => self.bases.get(key).cloned().unwrap_or_default(),
            (_, Some(d)) => PathBuf::from(d),
        };
        Some(base.join(raw))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| v.parse::<T>().map_err(|e| data(format!("{key} = `{v}`: {e}")))).transpose()
    }

    fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key).ok_or_else(|| CliError::Usage(format!("missing `--{}` (or `{key}` in the config file)", key.replace('_', "-"))))
    }

    pub fn offline(&self) -> Result<bool, CliError> {
        Ok(self.parse::<bool>("offline")?.unwrap_or(false))
    }

    pub fn parallelism(&self) -> Result<usize, CliError> {
        Ok(self.parse::<usize>("parallelism")?.unwrap_or(1).max(1))
    }

    pub fn mix_depth(&self) -> Result<MixDepth, CliError> {
        Ok(self.parse::<MixDepth>("mix_depth")?.unwrap_or_default())
    }

    /// Flag, then environment, then config file, then `.xlrag-cache`.
    pub fn cache_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Some(env) = std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(env);
        }
        self.path("cache_dir").unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    fn langs(&self, key: &str) -> Result<Option<BTreeSet<Lang>>, CliError> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let set = v
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|c| c.parse::<Lang>().map_err(data))
            .collect::<Result<BTreeSet<_>, _>>()?;
        Ok(Some(set))
    }

    pub fn strategy_config(&self) -> Result<StrategyConfig, CliError> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for key in CONFIG_KEYS {
            let source = match key {
                "translator_id" => "translator",
                "llm_id" => "llm",
                k => k,
            };
            if let Some(v) = self.get(source) {
                pairs.push((key, v));
            }
        }
        if !pairs.iter().any(|(k, _)| *k == "strategy") {
            return Err(CliError::Usage("missing `--strategy` (or `strategy` in the config file)".into()));
        }
        StrategyConfig::from_pairs(pairs).map_err(data)
    }

    fn stack_spec(&self, cache_dir: PathBuf) -> Result<StackSpec, CliError> {
        let source = |key: &str, default: &str| -> Result<Source, CliError> {
            self.get(key).unwrap_or(default).parse::<Source>().map_err(data)
        };
        Ok(StackSpec {
            embedder: source("embedder", "reference")?,
            dim: self.parse("dim")?.unwrap_or(DEFAULT_DIM),
            translator: source("translator", "mock")?,
            dictionary: self.path("dictionary"),
            llm: source("llm", "mock")?,
            endpoints: self.path("endpoints"),
            cache_dir: Some(cache_dir),
            translation_cache: self.path("translation_cache"),
            offline: self.offline()?,
        })
    }

    fn registry(&self) -> Result<ResourceRegistry, CliError> {
        match self.path("resource_registry") {
            Some(p) => ResourceRegistry::load(&p).map_err(data),
            None => Ok(ResourceRegistry::default()),
        }
    }

    fn profiles(&self) -> Result<Profiles, CliError> {
        match self.path("langid_profiles") {
            Some(p) => Profiles::load(&p).map_err(data),
            None => Ok(Profiles::builtin()),
        }
    }

    fn load_corpus(&self) -> Result<Corpus, CliError> {
        let path = self.require_path("corpus")?;
        let all: BTreeSet<Lang> = REGISTRY.iter().map(|(c, _)| c.parse().expect("registered")).collect();
        let expected = self.langs("langs")?.unwrap_or(all);
        let policy = match self.get("ingest_policy").unwrap_or("reject") {
            "reject" => LangPolicy::Reject,
            "skip" => LangPolicy::Skip,
            other => return Err(data(format!("ingest_policy = `{other}`: expected reject or skip"))),
        };
        let ingested = ingest_corpus(&path, &expected, policy).map_err(data)?;
        for w in &ingested.warnings {
            tracing::warn!(line = w.line, id = %w.id, "{}", w.message);
        }
        Ok(ingested.corpus)
    }

    /// Effective settings as sorted `key = value` lines.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }
}

fn apply_corpus_flags(s: &mut Settings, a: &CorpusArgs) {
    s.set_opt("corpus", a.corpus.as_ref().map(|p| p.display()));
    s.set_opt("langs", a.langs.as_ref());
    s.set_opt("ingest_policy", a.ingest_policy.as_ref());
}

fn apply_run_flags(s: &mut Settings, a: &RunArgs) {
    apply_corpus_flags(s, &a.corpus);
    s.set_opt("queries", a.queries.as_ref().map(|p| p.display()));
    s.set_opt("dictionary", a.dictionary.as_ref().map(|p| p.display()));
    s.set_opt("output", a.output.as_ref().map(|p| p.display()));
    s.set_opt("strategy", a.strategy.as_ref());
    s.set_opt("scope", a.scope.as_ref());
    s.set_opt("k_retrieve", a.k_retrieve);
    s.set_opt("k_context", a.k_context);
    s.set_opt("embedder", a.embedder.as_ref());
    s.set_opt("dim", a.dim);
    s.set_opt("translator", a.translator.as_ref());
    s.set_opt("llm", a.llm.as_ref());
    s.set_opt("perturb", a.perturb.as_ref());
    s.set_opt("seed", a.seed);
    s.set_opt("trag_prompt_lang", a.trag_prompt_lang.as_ref());
    s.set_opt("annotate_evidence_lang", a.annotate_evidence_lang);
    s.set_opt("translation_failure", a.translation_failure.as_ref());
    s.set_opt("temperature", a.temperature);
    s.set_opt("max_tokens", a.max_tokens);
    s.set_opt("label", a.label.as_ref());
    s.set_opt("mix_depth", a.mix_depth.as_ref());
}

fn apply_global_flags(s: &mut Settings, g: &GlobalArgs) {
    if g.offline {
        s.set("offline", true);
    }
    s.set_opt("data_dir", g.data_dir.as_ref().map(|p| p.display()));
    s.set_opt("translation_cache", g.translation_cache.as_ref().map(|p| p.display()));
    s.set_opt("parallelism", g.parallelism);
    s.set_opt("log_level", g.log_level.as_ref());
    s.set_opt("endpoints", g.endpoints.as_ref().map(|p| p.display()));
    s.set_opt("resource_registry", g.resource_registry.as_ref().map(|p| p.display()));
    s.set_opt("langid_profiles", g.langid_profiles.as_ref().map(|p| p.display()));
}

fn init_logging(level: Option<&str>) {
    let filter = tracing_subscriber::EnvFilter::try_new(level.unwrap_or("warn"))
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut settings = match &cli.global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    apply_global_flags(&mut settings, &cli.global);
    match &cli.command {
        Command::Run(a) => apply_run_flags(&mut settings, a),
        Command::Ingest(a) => apply_corpus_flags(&mut settings, &a.corpus),
        Command::Index(a) => {
            apply_corpus_flags(&mut settings, &a.corpus);
            settings.set_opt("embedder", a.embedder.as_ref());
            settings.set_opt("dim", a.dim);
        }
        Command::Report(a) => settings.set_opt("mix_depth", a.mix_depth.as_ref()),
        Command::Sweep(_) => {}
    }
    init_logging(settings.get("log_level"));
    let cache_dir = settings.cache_dir(cli.global.cache_dir.as_deref());
    match &cli.command {
        Command::Ingest(a) => ingest(&settings, a),
        Command::Index(a) => index(&settings, a, cache_dir),
        Command::Run(_) => run(&settings, cache_dir),
        Command::Report(a) => report(&settings, a),
        Command::Sweep(a) => sweep(&settings, a, cache_dir),
    }
}

fn ingest(settings: &Settings, args: &IngestArgs) -> Result<(), CliError> {
    let corpus = settings.load_corpus()?;
    let buckets: BTreeMap<String, usize> =
        corpus.populated_languages().iter().map(|l| (l.to_string(), corpus.bucket_len(*l))).collect();
    if let Some(out) = &args.out {
        let mut text = String::new();
        for d in corpus.documents() {
            text.push_str(&serde_json::to_string(d.as_ref()).expect("document serializes"));
            text.push('\n');
        }
        write_atomic(out, text.as_bytes()).map_err(|e| data(format!("{}: {e}", out.display())))?;
    }
    let lengths: Vec<usize> = corpus.documents().iter().map(|d| d.text.chars().count()).collect();
    let summary = serde_json::json!({
        "corpus": corpus.name(),
        "documents": corpus.len(),
        "buckets": buckets,
        "text_chars": {
            "min": lengths.iter().min(),
            "max": lengths.iter().max(),
            "mean": lengths.iter().sum::<usize>() as f64 / lengths.len().max(1) as f64,
        },
        "content_sha256": corpus.content_hash(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn index(settings: &Settings, args: &IndexArgs, cache_dir: PathBuf) -> Result<(), CliError> {
    let corpus = settings.load_corpus()?;
    let langs = match &args.scope_langs {
        Some(v) => {
            let mut s = settings.clone();
            s.set("scope_langs", v);
            s.langs("scope_langs")?.unwrap_or_default()
        }
        None => corpus.populated_languages(),
    };
    let stack = build_stack(&settings.stack_spec(cache_dir)?, &[], CallLog::new()).map_err(provider)?;
    let embedder = stack.providers.embedder.as_ref();
    let index = stack.providers.index_cache.get_or_build(&corpus, &langs, embedder).map_err(|e| match e {
        crate::retrieval::RetrievalError::Embedder { .. } => provider(e),
        other => data(other),
    })?;
    let key = crate::retrieval::IndexCache::key(&corpus, &langs, embedder);
    let summary = serde_json::json!({
        "key": key,
        "path": stack.providers.index_cache.index_path(&key),
        "embedder": embedder.id(),
        "languages": langs.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        "indexed": index.len(),
        "excluded": index.excluded(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn run(settings: &Settings, cache_dir: PathBuf) -> Result<(), CliError> {
    let config = settings.strategy_config()?;
    let corpus = settings.load_corpus()?;
    let queries = load_queries(&settings.require_path("queries")?).map_err(data)?;
    let output = settings.require_path("output")?;
    let log = CallLog::new();
    let stack = build_stack(&settings.stack_spec(cache_dir.clone())?, &queries, log.clone()).map_err(provider)?;
    let profiles = settings.profiles()?;
    let registry = settings.registry()?;

    let label = config.label();
    let mut results = Vec::new();
    let mut records = Vec::new();
    for (query, outcome) in run_queries(&config, &queries, &corpus, &stack.providers, settings.parallelism()?) {
        match outcome {
            Ok(result) => {
                records.push(score(&result, &query, &label, &profiles));
                results.push(result);
            }
            Err(e) => {
                let msg = format!("query {}: {e}", query.id);
                let _ = std::fs::create_dir_all(&output).and_then(|_| log.write_jsonl(&output.join("calls.jsonl")));
                return Err(if e.is_provider_failure() { CliError::Provider(msg) } else { CliError::Data(msg) });
            }
        }
    }

    std::fs::create_dir_all(&output).map_err(|e| data(format!("{}: {e}", output.display())))?;
    write_records(&output.join("records.jsonl"), &records).map_err(data)?;
    let mut text = String::new();
    for r in &results {
        text.push_str(&serde_json::to_string(r).expect("result serializes"));
        text.push('\n');
    }
    write_file(&output.join("results.jsonl"), text.as_bytes())?;
    let report = aggregate(&records, &registry, None, settings.mix_depth()?).map_err(data)?;
    write_file(&output.join("report.csv"), report.to_csv().as_bytes())?;
    write_file(&output.join("report.txt"), report.to_text().as_bytes())?;
    let meta = serde_json::json!({
        "label": label,
        "seed": config.seed,
        "settings": settings.echo(),
        "config": config.to_pairs().into_iter().collect::<BTreeMap<_, _>>(),
        "cache_dir": cache_dir,
        "embedder": stack.providers.embedder.id(),
        "translator": stack.translator_id(),
        "llm": stack.llm_id(),
        "corpus_sha256": corpus.content_hash(),
        "queries": queries.len(),
    });
    write_file(&output.join("run.json"), (serde_json::to_string_pretty(&meta).expect("json") + "\n").as_bytes())?;
    log.write_jsonl(&output.join("calls.jsonl")).map_err(data)?;
    print!("{}", report.to_text());
    Ok(())
}

fn report(settings: &Settings, args: &ReportArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for path in &args.records {
        records.extend(read_records(path).map_err(data)?);
    }
    let registry = settings.registry()?;
    let report = aggregate(&records, &registry, args.baseline.as_deref(), settings.mix_depth()?).map_err(data)?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join("report.csv"), report.to_csv().as_bytes())?;
        write_file(&dir.join("report.txt"), report.to_text().as_bytes())?;
        if let Some(b) = &report.baseline {
            let cmp = compare(std::slice::from_ref(&report), b).map_err(data)?;
            cmp.write(dir, &args.task).map_err(data)?;
        }
    }
    print!("{}", report.to_text());
    Ok(())
}

fn sweep(settings: &Settings, args: &SweepArgs, cache_dir: PathBuf) -> Result<(), CliError> {
    let mut spec = SweepSpec::load(&args.spec).map_err(data)?;
    if let Some(out) = &args.output {
        spec.output = out.clone();
    }
    if let Some(p) = settings.path("endpoints") {
        spec.endpoints = Some(p);
    }
    let opts = SweepOptions {
        cache_dir: Some(cache_dir),
        offline: settings.offline()?,
        parallelism: settings.parallelism()?,
        registry: settings.registry()?,
        profiles: Arc::new(settings.profiles()?),
        mix_depth: settings.mix_depth()?,
    };
    let outcome = run_sweep(&spec, &opts).map_err(|e| match e {
        crate::experiments::SweepError::Provider(p) => provider(p),
        other => data(other),
    })?;
    for (seed, report) in &outcome.reports {
        println!("# seed {seed}");
        print!("{}", report.to_text());
    }
    println!("manifest: {}", outcome.manifest_path.display());
    let failed: Vec<String> = outcome
        .manifest
        .runs()
        .filter(|(_, _, s)| **s != crate::experiments::RunStatus::Ok)
        .map(|(l, seed, _)| format!("{l} (seed {seed})"))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(data(format!("{} run(s) failed: {}; see the manifest", failed.len(), failed.join(", "))))
    }
}
