use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use anyhow::{anyhow, Context};
use relex_core::ablate::{ablate_once, records_to_json, refine, write_records_csv, EvalContext};
use relex_core::assets;
use relex_core::docmodel::{
    import_chemdisgene, import_pubtator, read_canonical, write_canonical, Document, EntityMention, GoldConcept,
    GoldRelation, RelationTuple,
};
use relex_core::eval::{mean_std, MeanStd};
use relex_core::llmgateway::{CallStats, Gateway, ResponseCache};
use relex_core::pipeline::{
    coref_corpus, evaluate_run, extract_corpus, ner_corpus, run_corpus, DocFailure, Mode, RunOutput,
};
use relex_core::prompt::{has_errors, lint, FivePartTemplate, Severity};
use relex_core::stage2::{load_registry, PairFailure};
use serde::Serialize;
use tracing::info;

use crate::cli::{CacheAction, Cli, Command, CorpusFormat, ModeArg};
use crate::config::{DatasetFormat, RunConfig};

static QUIET: AtomicBool = AtomicBool::new(false);

/// Progress and summary output on stdout, silenced by `--quiet`.
macro_rules! say {
    ($($arg:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            print!($($arg)*);
        }
    };
}

macro_rules! sayln {
    ($($arg:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            println!($($arg)*);
        }
    };
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_QUALITY: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type Outcome = Result<u8, Failure>;

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const GOLD_CONCEPTS_FILE: &str = "gold_concepts.jsonl";
pub const GOLD_RELATIONS_FILE: &str = "gold_relations.jsonl";
pub const MENTIONS_FILE: &str = "mentions.jsonl";
pub const NER_MENTIONS_FILE: &str = "ner_mentions.jsonl";
pub const RELATIONS_FILE: &str = "relations.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPEATS_FILE: &str = "repeats.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_canonical(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_canonical(BufWriter::new(file), items)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub concepts: Vec<GoldConcept>,
    pub relations: Vec<GoldRelation>,
}

fn read_canonical_dir(dir: &Path) -> anyhow::Result<Corpus> {
    let optional = |name: &str| -> anyhow::Result<Option<PathBuf>> {
        let p = dir.join(name);
        Ok(p.exists().then_some(p))
    };
    Ok(Corpus {
        docs: read_jsonl(&dir.join(DOCUMENTS_FILE))?,
        concepts: optional(GOLD_CONCEPTS_FILE)?.map(|p| read_jsonl(&p)).transpose()?.unwrap_or_default(),
        relations: optional(GOLD_RELATIONS_FILE)?.map(|p| read_jsonl(&p)).transpose()?.unwrap_or_default(),
    })
}

fn chemdisgene_relation_names(names: &[String]) -> anyhow::Result<Vec<String>> {
    if !names.is_empty() {
        return Ok(names.to_vec());
    }
    Ok(load_registry(assets::REGISTRY_CHEMDISGENE, None)?
        .into_iter()
        .map(|s| s.relation)
        .collect())
}

fn import_corpus(
    format: CorpusFormat,
    input: &Path,
    relations: Option<&Path>,
    relation_names: &[String],
) -> anyhow::Result<Corpus> {
    let open = |p: &Path| File::open(p).map(BufReader::new).with_context(|| format!("opening {}", p.display()));
    let imported = match format {
        CorpusFormat::Pubtator => import_pubtator(open(input)?)?,
        CorpusFormat::Chemdisgene => {
            let table = relations.map(open).transpose()?;
            import_chemdisgene(open(input)?, table, &chemdisgene_relation_names(relation_names)?)?
        }
    };
    let mut corpus = Corpus::default();
    for d in imported {
        corpus.docs.push(d.document);
        corpus.concepts.extend(d.concepts);
        corpus.relations.extend(d.relations);
    }
    Ok(corpus)
}

fn load_corpus(cfg: &RunConfig, docs_override: Option<&Path>) -> anyhow::Result<Corpus> {
    if let Some(path) = docs_override {
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut corpus = if path.is_dir() { read_canonical_dir(path)? } else { read_canonical_dir(dir)? };
        if path.is_file() {
            corpus.docs = read_jsonl(path)?;
        }
        return Ok(corpus);
    }
    let d = cfg.dataset.as_ref().context("no dataset configured and no --docs given")?;
    match d.format {
        DatasetFormat::Canonical => read_canonical_dir(&d.path),
        DatasetFormat::Pubtator => import_corpus(CorpusFormat::Pubtator, &d.path, None, &[]),
        DatasetFormat::Chemdisgene => import_corpus(CorpusFormat::Chemdisgene, &d.path, d.relations.as_deref(), &[]),
    }
}

#[derive(Debug, Serialize)]
struct Runtime {
    started_at: String,
    elapsed_ms: u64,
    max_in_flight: usize,
}

/// Run record. Everything except `runtime` is a deterministic function of
/// the inputs and the cache.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    provider: String,
    model: String,
    temperature: f64,
    documents: usize,
    partial: bool,
    failed_documents: &'a [DocFailure],
    pair_failures: &'a [PairFailure],
    calls: CallStats,
    outputs: Vec<&'a str>,
    runtime: Runtime,
}

struct Session {
    cfg: RunConfig,
    gateway: Gateway,
    started: Instant,
    started_at: String,
}

impl Session {
    fn open(cli: &Cli) -> Result<Self, Failure> {
        let cfg = load_config(cli)?;
        let gateway = cfg.gateway(cli.max_in_flight, cli.cache_dir.as_deref()).or_exit(EXIT_INPUT)?;
        Ok(Self {
            cfg,
            gateway,
            started: Instant::now(),
            started_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn write_manifest(
        &self,
        out: &Path,
        command: &str,
        mode: Option<Mode>,
        documents: usize,
        failed: &[DocFailure],
        pair_failures: &[PairFailure],
        outputs: Vec<&str>,
    ) -> anyhow::Result<()> {
        let manifest = Manifest {
            command,
            mode,
            provider: self.cfg.provider_id(),
            model: self.cfg.provider.model.clone(),
            temperature: self.cfg.provider.temperature,
            documents,
            partial: !failed.is_empty() || !pair_failures.is_empty(),
            failed_documents: failed,
            pair_failures,
            calls: self.gateway.stats(),
            outputs,
            runtime: Runtime {
                started_at: self.started_at.clone(),
                elapsed_ms: self.started.elapsed().as_millis() as u64,
                max_in_flight: self.gateway.max_in_flight(),
            },
        };
        write_text(&out.join(MANIFEST_FILE), &to_json(&manifest))
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("no configuration: pass --config or set RELEX_CONFIG"))
        .or_exit(EXIT_INPUT)?;
    RunConfig::load(path).or_exit(EXIT_INPUT)
}

fn ensure_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .or_exit(EXIT_INPUT)
}

fn status(failed: &[DocFailure], pair_failures: &[PairFailure]) -> u8 {
    if failed.is_empty() && pair_failures.is_empty() {
        EXIT_OK
    } else {
        eprintln!(
            "partial results: {} failed document(s), {} failed pair(s); see {MANIFEST_FILE}",
            failed.len(),
            pair_failures.len()
        );
        EXIT_PROVIDER
    }
}

pub fn dispatch(cli: &Cli) -> Outcome {
    QUIET.store(cli.quiet, Ordering::Relaxed);
    match &cli.command {
        Command::Ingest {
            format,
            input,
            relations,
            relation_names,
            out,
        } => cmd_ingest(*format, input, relations.as_deref(), relation_names, out),
        Command::Ner { docs, out } => cmd_ner(cli, docs.docs.as_deref(), out),
        Command::Coref { docs, mentions, out } => cmd_coref(cli, docs.docs.as_deref(), mentions, out),
        Command::Extract { docs, mentions, out } => cmd_extract(cli, docs.docs.as_deref(), mentions, out),
        Command::Eval {
            docs,
            relations,
            mentions,
            out,
        } => cmd_eval(cli, docs.docs.as_deref(), relations, mentions, out),
        Command::Ablate {
            docs,
            template,
            mentions,
            out,
            refine,
        } => cmd_ablate(cli, docs.docs.as_deref(), template, mentions, out, *refine),
        Command::Lint { files, name } => cmd_lint(cli, files, name),
        Command::Run { out, mode, repeats } => cmd_run(cli, out, *mode, *repeats),
        Command::Cache { action } => cmd_cache(cli, *action),
    }
}

fn cmd_ingest(
    format: CorpusFormat,
    input: &Path,
    relations: Option<&Path>,
    relation_names: &[String],
    out: &Path,
) -> Outcome {
    let corpus = import_corpus(format, input, relations, relation_names).or_exit(EXIT_INPUT)?;
    ensure_dir(out)?;
    write_jsonl(&out.join(DOCUMENTS_FILE), &corpus.docs).or_exit(EXIT_INPUT)?;
    write_jsonl(&out.join(GOLD_CONCEPTS_FILE), &corpus.concepts).or_exit(EXIT_INPUT)?;
    write_jsonl(&out.join(GOLD_RELATIONS_FILE), &corpus.relations).or_exit(EXIT_INPUT)?;
    let mentions: usize = corpus.concepts.iter().map(|c| c.mentions.len()).sum();
    sayln!(
        "{} documents, {} concepts, {} mentions, {} relations",
        corpus.docs.len(),
        corpus.concepts.len(),
        mentions,
        corpus.relations.len()
    );
    Ok(EXIT_OK)
}

fn cmd_ner(cli: &Cli, docs: Option<&Path>, out: &Path) -> Outcome {
    let session = Session::open(cli)?;
    let pipeline = session.cfg.pipeline().or_exit(EXIT_INPUT)?;
    let corpus = load_corpus(&session.cfg, docs).or_exit(EXIT_INPUT)?;
    ensure_dir(out)?;
    let result = ner_corpus(&corpus.docs, &pipeline, &session.gateway)
        .map_err(anyhow::Error::msg)
        .or_exit(EXIT_INPUT)?;
    write_jsonl(&out.join(NER_MENTIONS_FILE), &result.mentions).or_exit(EXIT_INPUT)?;
    session
        .write_manifest(out, "ner", None, corpus.docs.len(), &result.failures, &[], vec![NER_MENTIONS_FILE])
        .or_exit(EXIT_INPUT)?;
    sayln!("{} mentions", result.mentions.len());
    Ok(status(&result.failures, &[]))
}

fn cmd_coref(cli: &Cli, docs: Option<&Path>, mentions: &Path, out: &Path) -> Outcome {
    let session = Session::open(cli)?;
    let pipeline = session.cfg.pipeline().or_exit(EXIT_INPUT)?;
    let corpus = load_corpus(&session.cfg, docs).or_exit(EXIT_INPUT)?;
    let mentions: Vec<EntityMention> = read_jsonl(mentions).or_exit(EXIT_INPUT)?;
    ensure_dir(out)?;
    let result = coref_corpus(&corpus.docs, &mentions, &pipeline, &session.gateway)
        .map_err(anyhow::Error::msg)
        .or_exit(EXIT_INPUT)?;
    write_jsonl(&out.join(MENTIONS_FILE), &result.mentions).or_exit(EXIT_INPUT)?;
    session
        .write_manifest(out, "coref", None, corpus.docs.len(), &result.failures, &[], vec![MENTIONS_FILE])
        .or_exit(EXIT_INPUT)?;
    let clusters: std::collections::BTreeSet<_> =
        result.mentions.iter().map(|m| (&m.doc_id, m.global_index)).collect();
    sayln!("{} mentions in {} clusters", result.mentions.len(), clusters.len());
    Ok(status(&result.failures, &[]))
}

fn cmd_extract(cli: &Cli, docs: Option<&Path>, mentions: &Path, out: &Path) -> Outcome {
    let session = Session::open(cli)?;
    let pipeline = session.cfg.pipeline().or_exit(EXIT_INPUT)?;
    let corpus = load_corpus(&session.cfg, docs).or_exit(EXIT_INPUT)?;
    let mentions: Vec<EntityMention> = read_jsonl(mentions).or_exit(EXIT_INPUT)?;
    if let Some(m) = mentions.iter().find(|m| m.global_index.is_none()) {
        return Err(Failure {
            code: EXIT_INPUT,
            error: anyhow!("mention {:?} in {} has no global index; run coref first", m.surface, m.doc_id),
        });
    }
    ensure_dir(out)?;
    let result = extract_corpus(&corpus.docs, &mentions, &pipeline, &session.gateway);
    write_jsonl(&out.join(RELATIONS_FILE), &result.tuples).or_exit(EXIT_INPUT)?;
    session
        .write_manifest(
            out,
            "extract",
            Some(Mode::TwoStage),
            corpus.docs.len(),
            &result.failures,
            &result.pair_failures,
            vec![RELATIONS_FILE],
        )
        .or_exit(EXIT_INPUT)?;
    sayln!("{} relation rows from {} calls", result.tuples.len(), result.calls);
    Ok(status(&result.failures, &result.pair_failures))
}

fn write_reports(out: &Path, reports: &relex_core::pipeline::Reports) -> anyhow::Result<()> {
    write_text(&out.join(REPORT_JSON), &to_json(reports))?;
    let file = File::create(out.join(REPORT_CSV))?;
    reports.re.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn cmd_eval(cli: &Cli, docs: Option<&Path>, relations: &Path, mentions: &Path, out: &Path) -> Outcome {
    let cfg = load_config(cli)?;
    let pipeline = cfg.pipeline().or_exit(EXIT_INPUT)?;
    let corpus = load_corpus(&cfg, docs).or_exit(EXIT_INPUT)?;
    let run = RunOutput {
        mentions: read_jsonl(mentions).or_exit(EXIT_INPUT)?,
        tuples: read_jsonl::<RelationTuple>(relations).or_exit(EXIT_INPUT)?,
        ..RunOutput::default()
    };
    ensure_dir(out)?;
    let reports = evaluate_run(&corpus.docs, &run, &corpus.concepts, &corpus.relations, &pipeline);
    write_reports(out, &reports).or_exit(EXIT_INPUT)?;
    say!("{}", reports.re.render_table());
    Ok(EXIT_OK)
}

fn cmd_ablate(cli: &Cli, docs: Option<&Path>, name: &str, mentions: &Path, out: &Path, do_refine: bool) -> Outcome {
    let session = Session::open(cli)?;
    let pipeline = session.cfg.pipeline().or_exit(EXIT_INPUT)?;
    let corpus = load_corpus(&session.cfg, docs).or_exit(EXIT_INPUT)?;
    let mentions: Vec<EntityMention> = read_jsonl(mentions).or_exit(EXIT_INPUT)?;
    let template = pipeline
        .templates
        .get(name)
        .cloned()
        .ok_or_else(|| anyhow!("no template named {name:?}"))
        .or_exit(EXIT_INPUT)?;
    ensure_dir(out)?;
    let ctx = EvalContext {
        docs: &corpus.docs,
        mentions: &mentions,
        gold_concepts: &corpus.concepts,
        gold_relations: &corpus.relations,
        registry: &pipeline.registry,
        templates: &pipeline.templates,
        answers: pipeline.answers.as_ref(),
        gateway: &session.gateway,
        policy: pipeline.grounding,
    };
    let records = if do_refine {
        let refined = refine(&template, &ctx).or_exit(EXIT_INPUT)?;
        let path = out.join(format!("{name}.refined.json"));
        write_text(&path, &(refined.template.to_json() + "\n")).or_exit(EXIT_INPUT)?;
        for (round, id) in &refined.removed {
            sayln!("round {round}: removed {id}");
        }
        sayln!(
            "F1 by round: {}",
            refined.f1_by_round.iter().map(|f| format!("{:.4}", f)).collect::<Vec<_>>().join(" -> ")
        );
        refined.records
    } else {
        let baseline = ctx.score(&template).or_exit(EXIT_INPUT)?;
        sayln!("baseline {}", baseline.metrics);
        let mut ids: Vec<&str> = template.scenarios().map(|s| s.id.as_str()).collect();
        ids.sort_by(|a, b| relex_core::ablate::natural_cmp(a, b));
        let mut records = Vec::new();
        for id in ids {
            let mut r = ablate_once(&template, id, baseline.metrics, &ctx).or_exit(EXIT_INPUT)?;
            r.round = 1;
            records.push(r);
        }
        records
    };
    let file = File::create(out.join(ABLATION_CSV)).or_exit(EXIT_INPUT)?;
    write_records_csv(&records, BufWriter::new(file)).or_exit(EXIT_INPUT)?;
    write_text(&out.join(ABLATION_JSON), &(records_to_json(&records) + "\n")).or_exit(EXIT_INPUT)?;
    sayln!("{:<8} {:<9} {:>9} {:>9} {:>9} {:>5}", "scenario", "polarity", "dP", "dR", "dF1", "round");
    for r in &records {
        sayln!(
            "{:<8} {:<9} {:>9.4} {:>9.4} {:>9.4} {:>5}",
            r.scenario_id, r.polarity, r.delta_p, r.delta_r, r.delta_f1, r.round
        );
    }
    session
        .write_manifest(out, "ablate", None, corpus.docs.len(), &[], &[], vec![ABLATION_CSV, ABLATION_JSON])
        .or_exit(EXIT_INPUT)?;
    Ok(EXIT_OK)
}

fn cmd_lint(cli: &Cli, files: &[PathBuf], names: &[String]) -> Outcome {
    let cfg = cli.config.as_ref().map(|_| load_config(cli)).transpose()?;
    let labels = cfg.as_ref().map(|c| c.label_set()).transpose().or_exit(EXIT_INPUT)?;
    let library = assets::load_templates(cfg.as_ref().and_then(|c| c.templates.dir.as_deref())).or_exit(EXIT_INPUT)?;

    let mut templates: Vec<FivePartTemplate> = Vec::new();
    for path in files {
        let raw = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .or_exit(EXIT_INPUT)?;
        let t = FivePartTemplate::from_json(&raw)
            .with_context(|| format!("in {}", path.display()))
            .or_exit(EXIT_INPUT)?;
        templates.push(t);
    }
    for name in names {
        let t = library
            .get(name)
            .cloned()
            .ok_or_else(|| anyhow!("no template named {name:?}"))
            .or_exit(EXIT_INPUT)?;
        templates.push(t);
    }
    if files.is_empty() && names.is_empty() {
        templates.extend(library.into_values());
    }

    let universe: Vec<String> = labels.as_ref().map(|l| l.all_labels().to_vec()).unwrap_or_default();
    let mut failed = false;
    for t in &templates {
        let findings = lint(t, labels.as_ref(), &universe);
        let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
        sayln!("{}: {} finding(s), {} error(s)", t.name, findings.len(), errors);
        for f in &findings {
            sayln!("  {} {:?}: {}", f.rule, f.severity, f.message);
        }
        failed |= has_errors(&findings);
    }
    Ok(if failed { EXIT_QUALITY } else { EXIT_OK })
}

#[derive(Debug, Serialize)]
struct RepeatSummary {
    repeats: usize,
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    precision_stats: MeanStd,
    recall_stats: MeanStd,
    f1_stats: MeanStd,
    identical_outputs: bool,
}

fn serialize_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_canonical(&mut buf, items).expect("in-memory write");
    buf
}

fn cmd_run(cli: &Cli, out: &Path, mode: ModeArg, repeats: Option<usize>) -> Outcome {
    let session = Session::open(cli)?;
    let pipeline = session.cfg.pipeline().or_exit(EXIT_INPUT)?;
    let corpus = load_corpus(&session.cfg, None).or_exit(EXIT_INPUT)?;
    let mode = match mode {
        ModeArg::TwoStage => Mode::TwoStage,
        ModeArg::OneStage => Mode::OneStage,
    };
    let repeats = repeats.unwrap_or(session.cfg.repeats).max(1);
    ensure_dir(out)?;

    let mut first: Option<(RunOutput, relex_core::pipeline::Reports)> = None;
    let mut metrics = Vec::with_capacity(repeats);
    let mut identical = true;
    for i in 0..repeats {
        info!(repeat = i + 1, of = repeats, "starting run");
        let run = run_corpus(&corpus.docs, &pipeline, &session.gateway, mode)
            .map_err(anyhow::Error::msg)
            .or_exit(EXIT_INPUT)?;
        let reports = evaluate_run(&corpus.docs, &run, &corpus.concepts, &corpus.relations, &pipeline);
        metrics.push(reports.re.micro.metrics);
        match &first {
            None => first = Some((run, reports)),
            Some((r0, _)) => {
                identical &= serialize_jsonl(&r0.tuples) == serialize_jsonl(&run.tuples)
                    && serialize_jsonl(&r0.mentions) == serialize_jsonl(&run.mentions);
            }
        }
    }
    let (run, reports) = first.expect("at least one repeat");

    write_jsonl(&out.join(MENTIONS_FILE), &run.mentions).or_exit(EXIT_INPUT)?;
    write_jsonl(&out.join(RELATIONS_FILE), &run.tuples).or_exit(EXIT_INPUT)?;
    write_reports(out, &reports).or_exit(EXIT_INPUT)?;
    let mut outputs = vec![MENTIONS_FILE, RELATIONS_FILE, REPORT_JSON, REPORT_CSV];
    if repeats > 1 {
        let col = |f: fn(&relex_core::eval::Metrics) -> f64| metrics.iter().map(f).collect::<Vec<_>>();
        let (p, r, f) = (col(|m| m.precision), col(|m| m.recall), col(|m| m.f1));
        let summary = RepeatSummary {
            repeats,
            precision_stats: mean_std(&p),
            recall_stats: mean_std(&r),
            f1_stats: mean_std(&f),
            precision: p,
            recall: r,
            f1: f,
            identical_outputs: identical,
        };
        write_text(&out.join(REPEATS_FILE), &to_json(&summary)).or_exit(EXIT_INPUT)?;
        sayln!(
            "over {repeats} repeats: F1 {:.2} ± {:.2}",
            summary.f1_stats.mean * 100.0,
            summary.f1_stats.std * 100.0
        );
        outputs.push(REPEATS_FILE);
    }
    session
        .write_manifest(out, "run", Some(mode), corpus.docs.len(), &run.failures, &run.pair_failures, outputs)
        .or_exit(EXIT_INPUT)?;
    say!("{}", reports.re.render_table());
    Ok(status(&run.failures, &run.pair_failures))
}

fn cmd_cache(cli: &Cli, action: CacheAction) -> Outcome {
    let dir = match &cli.cache_dir {
        Some(d) => d.clone(),
        None => load_config(cli)?.cache_dir,
    };
    let cache = ResponseCache::open(&dir).or_exit(EXIT_INPUT)?;
    match action {
        CacheAction::Stats => {
            let s = cache.stats().or_exit(EXIT_INPUT)?;
            sayln!("{}: {} entries, {} bytes", dir.display(), s.entries, s.bytes);
        }
        CacheAction::Clear => {
            let n = cache.clear().or_exit(EXIT_INPUT)?;
            sayln!("removed {n} entries from {}", dir.display());
        }
    }
    std::io::stdout().flush().ok();
    Ok(EXIT_OK)
}
