//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 7 needs the full CDR and ChemDisGene test sets, which are not
//! redistributed with this repository. Point these variables at them:
//!   RELEX_CDR_TEST                    CDR_TestSet.PubTator.txt
//!   RELEX_CHEMDISGENE_TEST            ChemDisGene test abstracts (PubTator)
//!   RELEX_CHEMDISGENE_TEST_RELATIONS  ChemDisGene test relation table (optional)

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use relex_cli::Cli;
use relex_core::ablate::{ablate_once, refine, EvalContext};
use relex_core::assets::{self, builtin_templates};
use relex_core::docmodel::{
    import_chemdisgene, import_pubtator, read_canonical, segment, write_canonical, ConceptRef, Document,
    EntityMention, GoldConcept, GoldMention, GoldRelation, ImportedDocument, LabelSet, Span,
};
use relex_core::eval::{f1, ConfusionCounts, GroundingPolicy, Metrics};
use relex_core::llmgateway::{
    CompletionRequest, Gateway, GatewayError, Matcher, NoMatchPolicy, Provider, RetryPolicy, ScriptedProvider,
};
use relex_core::prompt::{has_errors, lint, FivePartTemplate, Severity};
use relex_core::stage1::{resolve_hypernyms, resolve_synonyms, run_ner};
use relex_core::stage2::{extract_relations, filter_candidates, load_registry, pair_up, RelationSchema};

type Check = Result<String, String>;

/// Name, runtime limit and check of one criterion.
type Criterion = (&'static str, Option<Duration>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn cdr_labels() -> LabelSet {
    let l = vec!["Chemical".to_string(), "Disease".to_string()];
    LabelSet::new(l.clone(), l).unwrap()
}

fn fig2() -> ImportedDocument {
    let file = File::open(fixture("cdr_3535719.pubtator")).unwrap();
    import_pubtator(BufReader::new(file)).unwrap().remove(0)
}

fn fig2_gateway() -> (Arc<ScriptedProvider>, Gateway) {
    let raw = std::fs::read_to_string(fixture("script_3535719.json")).unwrap();
    let provider = Arc::new(ScriptedProvider::from_json(&raw).unwrap());
    let gw = Gateway::new(provider.clone(), "scripted").with_retry(RetryPolicy::none());
    (provider, gw)
}

fn fig2_stage1(gw: &Gateway) -> Vec<EntityMention> {
    let doc = fig2().document;
    let t = builtin_templates();
    let ner = run_ner(&doc, &cdr_labels(), &t["ner"], gw, &BTreeMap::new()).unwrap();
    let syn = resolve_synonyms(&doc, &ner, &t["synonym"], gw).unwrap();
    resolve_hypernyms(&doc, &syn.mentions, &t["hypernym"], gw).unwrap().mentions
}

// 1 -------------------------------------------------------------------------

fn metric_fidelity() -> Check {
    let cases = [(75.07, 81.19, 78.01), (53.12, 62.48, 57.42), (46.17, 55.23, 50.29)];
    let mut got = Vec::new();
    for (p, r, expected) in cases {
        let f = f1(p / 100.0, r / 100.0) * 100.0;
        ensure((f - expected).abs() <= 0.01, || format!("F1({p}, {r}) = {f:.4}, expected {expected}"))?;
        got.push(format!("{f:.4}"));
    }
    Ok(got.join(" "))
}

// 2 -------------------------------------------------------------------------

fn table1() -> Check {
    let (provider, gw) = fig2_gateway();
    let mentions = fig2_stage1(&gw);
    let mut first: Vec<&EntityMention> = Vec::new();
    for m in &mentions {
        if !first.iter().any(|f| f.surface == m.surface) {
            first.push(m);
        }
    }
    let got: Vec<_> = first
        .iter()
        .map(|m| (m.surface.as_str(), m.label.as_str(), m.sentence_index, m.span, m.global_index, m.hypernym_index, m.doc_id.as_str()))
        .collect();
    let expected = vec![
        ("toxicity", "Disease", 0, Span::new(3, 4), Some(0), None, "3535719"),
        ("netilmicin", "Chemical", 0, Span::new(5, 6), Some(1), None, "3535719"),
        ("tobramycin", "Chemical", 0, Span::new(7, 8), Some(2), None, "3535719"),
        ("netilmicin sulfate", "Chemical", 1, Span::new(8, 10), Some(1), None, "3535719"),
        ("ototoxicity", "Disease", 4, Span::new(0, 1), Some(3), Some(0), "3535719"),
    ];
    ensure(got == expected, || format!("rows differ: {got:?}"))?;
    Ok(format!("5 rows exact, {} LLM calls", provider.call_count()))
}

// 3 -------------------------------------------------------------------------

fn table2() -> Check {
    let (_, gw) = fig2_gateway();
    let mentions = fig2_stage1(&gw);
    let registry = load_registry(assets::REGISTRY_CDR, Some(&cdr_labels())).unwrap();
    let out = extract_relations(&fig2().document, &mentions, &registry, &builtin_templates(), None, &gw)
        .map_err(|e| e.to_string())?;
    let rows: BTreeSet<_> = out
        .tuples
        .iter()
        .map(|t| (t.head.surface.as_str(), t.head.global_index, t.relation.as_str(), t.tail.surface.as_str(), t.tail.global_index))
        .collect();
    let expected = BTreeSet::from([
        ("netilmicin", 1, "induced", "ototoxicity", 3),
        ("tobramycin", 2, "induced", "ototoxicity", 3),
        ("netilmicin sulfate", 1, "induced", "ototoxicity", 3),
    ]);
    ensure(rows == expected && out.tuples.len() == 3, || format!("rows differ: {rows:?}"))?;
    let toxicity = out.tuples.iter().any(|t| t.head.surface == "toxicity" || t.tail.surface == "toxicity");
    ensure(!toxicity, || "tuple involving hypernym 'toxicity'".into())?;
    Ok("3 rows exact, no hypernym tuple".into())
}

// 4 -------------------------------------------------------------------------

/// Answers `$` iff `(relation, head, tail)` is in `positive`; reads the
/// triple from a `Q[relation|head|tail]` marker in the prompt.
struct PairOracle {
    positive: HashSet<(String, String, String)>,
}

impl Provider for PairOracle {
    fn id(&self) -> &str {
        "oracle"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let start = request.prompt.find("Q[").expect("marker") + 2;
        let end = start + request.prompt[start..].find(']').expect("marker end");
        let parts: Vec<&str> = request.prompt[start..end].split('|').collect();
        let key = (parts[0].to_string(), parts[1].to_string(), parts[2].to_string());
        Ok(if self.positive.contains(&key) { "$" } else { "~" }.into())
    }
}

fn oracle_template(relation: &str) -> FivePartTemplate {
    let raw = serde_json::json!({
        "name": format!("t_{relation}"),
        "kind": "relation",
        "context": "{input}",
        "requirement": format!("Q[{relation}|{{head}}|{{tail}}] answer '$' or '~' only:"),
        "positive_scenarios": [{"id": "P1", "polarity": "POSITIVE", "text": "if {head} relates to {tail}", "answer_symbol": "$", "relation_binding": relation}],
        "negative_scenarios": [{"id": "N1", "polarity": "NEGATIVE", "text": "else if unrelated", "answer_symbol": "~"}],
        "output_format": "DO NOT output any other message.",
        "placeholders": ["head", "input", "tail"]
    });
    FivePartTemplate::from_json(&raw.to_string()).unwrap()
}

type Row = (String, String, usize, String, usize);

fn enumerate(mentions: &[EntityMention], relations: &[RelationSchema], positive: &HashSet<(String, String, String)>) -> BTreeSet<Row> {
    let hyper: BTreeSet<usize> = mentions.iter().filter_map(|m| m.hypernym_index).collect();
    let mut out = BTreeSet::new();
    for r in relations {
        // cluster -> (representative surface, all surfaces), representative
        // being the earliest mention in text order
        let clusters = |label: &str| {
            let mut c: BTreeMap<usize, (usize, String, Vec<String>)> = BTreeMap::new();
            for m in mentions.iter().filter(|m| m.label == label) {
                let g = m.global_index.unwrap();
                if hyper.contains(&g) {
                    continue;
                }
                let e = c.entry(g).or_insert((usize::MAX, String::new(), Vec::new()));
                if m.span.start < e.0 {
                    e.0 = m.span.start;
                    e.1 = m.surface.clone();
                }
                e.2.push(m.surface.clone());
            }
            c
        };
        for (hg, (_, hrep, hs)) in clusters(&r.head_label) {
            for (tg, (_, trep, ts)) in clusters(&r.tail_label) {
                if hg != tg && positive.contains(&(r.relation.clone(), hrep.clone(), trep.clone())) {
                    for h in &hs {
                        for t in &ts {
                            out.insert((h.clone(), r.relation.clone(), hg, t.clone(), tg));
                        }
                    }
                }
            }
        }
    }
    out
}

fn brute_force_oracle() -> Check {
    let mut rng = StdRng::seed_from_u64(20240607);
    let labels = ["Chemical", "Disease"];
    let doc = segment("d", "Placeholder article text.", "");
    let instances = 150;
    let mut total_rows = 0;
    for case in 0..instances {
        let n = rng.gen_range(1..=6);
        let mut hyper_of = [None; 8];
        for h in hyper_of.iter_mut() {
            if rng.gen_bool(0.25) {
                *h = Some(rng.gen_range(0..4));
            }
        }
        let mentions: Vec<EntityMention> = (0..n)
            .map(|pos| {
                let l = rng.gen_range(0..2);
                let cluster = l * 4 + rng.gen_range(0..4);
                let hypernym = hyper_of[cluster].map(|x| l * 4 + x).filter(|&x| x != cluster);
                EntityMention {
                    doc_id: "d".into(),
                    surface: format!("s{cluster}_{}", rng.gen_range(0..3)),
                    label: labels[l].into(),
                    sentence_index: 0,
                    span: Span::new(pos, pos + 1),
                    global_index: Some(cluster),
                    hypernym_index: hypernym,
                }
            })
            .collect();
        let relations: Vec<RelationSchema> = (0..rng.gen_range(1..=2))
            .map(|i| RelationSchema {
                relation: format!("rel{i}"),
                head_label: labels[rng.gen_range(0..2)].into(),
                tail_label: labels[rng.gen_range(0..2)].into(),
                template_name: format!("t_rel{i}"),
            })
            .collect();
        let mut positive = HashSet::new();
        for r in &relations {
            for a in &mentions {
                for b in &mentions {
                    if rng.gen_bool(0.5) {
                        positive.insert((r.relation.clone(), a.surface.clone(), b.surface.clone()));
                    }
                }
            }
        }
        let templates: BTreeMap<String, FivePartTemplate> =
            relations.iter().map(|r| (r.template_name.clone(), oracle_template(&r.relation))).collect();
        let gw = Gateway::new(Arc::new(PairOracle { positive: positive.clone() }), "m")
            .with_retry(RetryPolicy::none())
            .with_max_in_flight(3);
        let out = extract_relations(&doc, &mentions, &relations, &templates, None, &gw).map_err(|e| e.to_string())?;
        let got: BTreeSet<Row> = out
            .tuples
            .iter()
            .map(|t| (t.head.surface.clone(), t.relation.clone(), t.head.global_index, t.tail.surface.clone(), t.tail.global_index))
            .collect();
        let want = enumerate(&mentions, &relations, &positive);
        ensure(got == want, || format!("instance {case}: got {got:?}, oracle {want:?}"))?;
        let calls: usize = relations.iter().map(|r| pair_up(&filter_candidates(&mentions, r)).len()).sum();
        ensure(out.calls == calls, || format!("instance {case}: {} calls, expected {calls}", out.calls))?;
        total_rows += want.len();
    }
    Ok(format!("{instances} instances, {total_rows} rows"))
}

// 5 -------------------------------------------------------------------------

fn synonym_closure() -> Check {
    let mut rng = StdRng::seed_from_u64(99);
    let cases = 250;
    let template = &builtin_templates()["synonym"];
    for case in 0..cases {
        let n = rng.gen_range(1..=7);
        let words: Vec<String> = (0..n).map(|i| format!("w{i}q")).collect();
        let doc = segment("d", &words.join(" "), "");
        let mentions: Vec<EntityMention> = words
            .iter()
            .enumerate()
            .map(|(i, w)| EntityMention {
                doc_id: "d".into(),
                surface: w.clone(),
                label: "Chemical".into(),
                sentence_index: 0,
                span: Span::new(i, i + 1),
                global_index: None,
                hypernym_index: None,
            })
            .collect();
        let p_same = rng.gen_range(0.0..0.6);
        let mut same = Vec::new();
        let mut rules = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(p_same) {
                    same.push((a, b));
                    rules.push((Matcher::Contains(format!("Entity 1: \"{}\"\nEntity 2: \"{}\"", words[a], words[b])), "$".into()));
                }
            }
        }
        let provider = Arc::new(ScriptedProvider::new(rules, NoMatchPolicy::Default("~".into())));
        let gw = Gateway::new(provider, "m").with_retry(RetryPolicy::none());
        let out = resolve_synonyms(&doc, &mentions, template, &gw).map_err(|e| e.to_string())?;
        let idx: Vec<usize> = out.mentions.iter().map(|m| m.global_index.unwrap()).collect();
        // every SAME pair shares an index
        for &(a, b) in &same {
            ensure(idx[a] == idx[b], || format!("case {case}: SAME({a},{b}) split"))?;
        }
        // and no two mentions share one without a SAME path between them
        let mut reach = vec![vec![false; n]; n];
        for (a, row) in reach.iter_mut().enumerate() {
            row[a] = true;
        }
        for &(a, b) in &same {
            reach[a][b] = true;
            reach[b][a] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                ensure((idx[i] == idx[j]) == reach[i][j], || format!("case {case}: {i},{j} index/closure mismatch"))?;
            }
        }
    }
    Ok(format!("{cases} judgment sets"))
}

// 6 -------------------------------------------------------------------------

struct AblationFixture {
    docs: Vec<Document>,
    mentions: Vec<EntityMention>,
    concepts: Vec<GoldConcept>,
    relations: Vec<GoldRelation>,
    registry: Vec<RelationSchema>,
    templates: BTreeMap<String, FivePartTemplate>,
    gateway: Gateway,
}

/// Four chemicals against one disease. Gold: alpha and beta. alpha needs
/// P1, beta needs P1 or P2, gamma is rejected only by N1, delta only by N2.
fn ablation_fixture() -> AblationFixture {
    let names = ["alphamycin", "betamycin", "gammamycin", "deltamycin", "rash"];
    let docs = vec![segment("77", "Alphamycin betamycin gammamycin deltamycin and rash.", "")];
    let mut mentions = Vec::new();
    let mut concepts = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let (label, pos) = if i == 4 { ("Disease", 5) } else { ("Chemical", i) };
        mentions.push(EntityMention {
            doc_id: "77".into(),
            surface: name.to_string(),
            label: label.into(),
            sentence_index: 0,
            span: Span::new(pos, pos + 1),
            global_index: Some(i),
            hypernym_index: None,
        });
        concepts.push(GoldConcept {
            doc_id: "77".into(),
            concept_id: format!("C{i}"),
            label: label.into(),
            mentions: vec![GoldMention { sentence_index: 0, span: Span::new(pos, pos + 1), surface: name.to_string() }],
        });
    }
    let gold = |c: usize| GoldRelation {
        doc_id: "77".into(),
        head: ConceptRef { concept_id: format!("C{c}"), label: "Chemical".into() },
        relation: "induced".into(),
        tail: ConceptRef { concept_id: "C4".into(), label: "Disease".into() },
    };
    let key = |c: &str| format!("on the Xth day of {c} treatment");
    let all = |a: String, b: &str| Matcher::AllOf(vec![a, b.to_string()]);
    let rules = vec![
        (all(key("alphamycin"), "or alphamycin induce rash"), "$".to_string()),
        (all(key("betamycin"), "or betamycin induce rash"), "$".into()),
        (all(key("betamycin"), "because of betamycin"), "$".into()),
        (all(key("gammamycin"), "'gammamycin is mediating/attenuating rash'"), "~".into()),
        (Matcher::Contains(key("gammamycin")), "$".into()),
        (all(key("deltamycin"), "if deltamycin and rash have no relationship"), "~".into()),
        (Matcher::Contains(key("deltamycin")), "$".into()),
    ];
    let provider = Arc::new(ScriptedProvider::new(rules, NoMatchPolicy::Default("~".into())));
    AblationFixture {
        docs,
        mentions,
        concepts,
        relations: vec![gold(0), gold(1)],
        registry: load_registry(assets::REGISTRY_CDR, None).unwrap(),
        templates: builtin_templates(),
        gateway: Gateway::new(provider, "m").with_retry(RetryPolicy::none()),
    }
}

fn counts(tp: u64, fp: u64, fn_: u64) -> Metrics {
    ConfusionCounts { tp, fp, fn_ }.metrics()
}

fn ablation() -> Check {
    let fx = ablation_fixture();
    let ctx = EvalContext {
        docs: &fx.docs,
        mentions: &fx.mentions,
        gold_concepts: &fx.concepts,
        gold_relations: &fx.relations,
        registry: &fx.registry,
        templates: &fx.templates,
        answers: None,
        gateway: &fx.gateway,
        policy: GroundingPolicy::OverlapThenText,
    };
    let template = &fx.templates[assets::CDR_RE_TEMPLATE];
    let base = ctx.score(template).map_err(|e| e.to_string())?.metrics;
    ensure(base == counts(2, 0, 0), || format!("baseline {base}"))?;

    // hand-computed ablated confusion counts per scenario
    for (id, tp, fp, fn_) in [("N1", 2, 1, 0), ("N2", 2, 1, 0), ("P1", 1, 0, 1), ("P2", 2, 0, 0)] {
        let rec = ablate_once(template, id, base, &ctx).map_err(|e| e.to_string())?;
        let want = counts(tp, fp, fn_);
        let deltas = (base.precision - want.precision, base.recall - want.recall, base.f1 - want.f1);
        ensure((rec.delta_p, rec.delta_r, rec.delta_f1) == deltas, || {
            format!("{id}: got ({}, {}, {}), expected {deltas:?}", rec.delta_p, rec.delta_r, rec.delta_f1)
        })?;
        if id == "P2" {
            ensure(deltas == (0.0, 0.0, 0.0), || "no-effect scenario has non-zero delta".into())?;
        }
    }

    let refined = refine(template, &ctx).map_err(|e| e.to_string())?;
    let f = &refined.f1_by_round;
    ensure(f.windows(2).all(|w| w[1] >= w[0]), || format!("F1 decreased across rounds: {f:?}"))?;
    let last = ctx.score(&refined.template).map_err(|e| e.to_string())?.metrics.f1;
    ensure(last >= f[0], || format!("refined F1 {last} below initial {}", f[0]))?;
    Ok(format!("4 scenarios exact, refine removed {:?} in {} round(s)", refined.removed, f.len()))
}

// 7 -------------------------------------------------------------------------

fn verify_corpus(docs: &[ImportedDocument], expected: usize, what: &str) -> Check {
    ensure(docs.len() == expected, || format!("{what}: {} documents, expected {expected}", docs.len()))?;
    let mut checked = 0;
    for d in docs {
        for c in &d.concepts {
            for m in &c.mentions {
                let text = d
                    .document
                    .sentences
                    .get(m.sentence_index)
                    .and_then(|s| s.span_text(m.span))
                    .ok_or_else(|| format!("{what} {}: mention {:?} out of range", d.document.doc_id, m.surface))?;
                ensure(text.to_lowercase().contains(&m.surface.to_lowercase()), || {
                    format!("{what} {}: span text {text:?} does not cover {:?}", d.document.doc_id, m.surface)
                })?;
                checked += 1;
            }
        }
    }
    let documents: Vec<Document> = docs.iter().map(|d| d.document.clone()).collect();
    let concepts: Vec<GoldConcept> = docs.iter().flat_map(|d| d.concepts.clone()).collect();
    let relations: Vec<GoldRelation> = docs.iter().flat_map(|d| d.relations.clone()).collect();
    fn round_trip<T: serde::Serialize + serde::de::DeserializeOwned + PartialEq>(items: &[T]) -> bool {
        let mut buf = Vec::new();
        write_canonical(&mut buf, items).unwrap();
        read_canonical::<_, T>(buf.as_slice()).map(|back| back == items).unwrap_or(false)
    }
    ensure(round_trip(&documents) && round_trip(&concepts) && round_trip(&relations), || {
        format!("{what}: canonical round-trip lost data")
    })?;
    Ok(format!("{what}: {} documents, {checked} mention offsets verified, round-trip lossless", docs.len()))
}

fn importer_integrity() -> Check {
    let open = |p: &str| File::open(p).map(BufReader::new).map_err(|e| format!("{p}: {e}"));
    let fixture_ok = verify_corpus(&[fig2()], 1, "fixture")?;
    let cdr = std::env::var("RELEX_CDR_TEST")
        .map_err(|_| format!("RELEX_CDR_TEST not set; CDR test set unavailable ({fixture_ok})"))?;
    let cdg = std::env::var("RELEX_CHEMDISGENE_TEST")
        .map_err(|_| format!("RELEX_CHEMDISGENE_TEST not set; ChemDisGene test set unavailable ({fixture_ok})"))?;
    let cdr_docs = import_pubtator(open(&cdr)?).map_err(|e| e.to_string())?;
    let a = verify_corpus(&cdr_docs, 500, "CDR test")?;
    let names: Vec<String> = load_registry(assets::REGISTRY_CHEMDISGENE, None)
        .unwrap()
        .into_iter()
        .map(|s| s.relation)
        .collect();
    let table = std::env::var("RELEX_CHEMDISGENE_TEST_RELATIONS").ok().map(|p| open(&p)).transpose()?;
    let cdg_docs = import_chemdisgene(open(&cdg)?, table, &names).map_err(|e| e.to_string())?;
    let b = verify_corpus(&cdg_docs, 523, "ChemDisGene test")?;
    Ok(format!("{a}; {b}"))
}

// 8 -------------------------------------------------------------------------

/// Runs one `relex` command line in-process, quietly, returning its exit code.
fn relex(args: &[&str]) -> Result<u8, String> {
    let argv = ["relex", "--quiet"].into_iter().chain(args.iter().copied());
    let cli = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    Ok(relex_cli::run(&cli))
}

fn manifest_without_runtime(dir: &Path) -> Result<serde_json::Value, String> {
    let raw = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| e.to_string())?;
    let mut v: serde_json::Value = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
    v.as_object_mut().ok_or("manifest is not an object")?.remove("runtime");
    Ok(v)
}

fn balanced(manifest: &serde_json::Value) -> bool {
    let c = &manifest["calls"];
    let n = |k: &str| c[k].as_u64().unwrap_or(u64::MAX);
    n("attempted") == n("cache_hits") + n("misses") + n("failures")
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("relex.toml");
    let toml = format!(
        "registry = \"cdr\"\ncache_dir = \"cache\"\n\n[provider]\nkind = \"scripted\"\nscript = {:?}\nmodel = \"fixture\"\n\n\
         [labels]\nall = [\"Chemical\", \"Disease\"]\n\n[dataset]\nformat = \"pubtator\"\npath = {:?}\n",
        fixture("script_3535719.json"),
        fixture("cdr_3535719.pubtator"),
    );
    std::fs::write(&config, toml).map_err(|e| e.to_string())?;
    let dir = |name: &str| tmp.path().join(name);
    let run = |name: &str, in_flight: &str| -> Result<(), String> {
        let out = dir(name);
        let code = relex(&["--config", config.to_str().unwrap(), "run", "--out", out.to_str().unwrap(), "--max-in-flight", in_flight])?;
        ensure(code == 0, || format!("run {name} exited {code}"))
    };
    run("cold", "4")?;
    let warm = [("warm1", "1"), ("warm8", "8"), ("warm1b", "1"), ("warm8b", "8")];
    for (name, n) in warm {
        run(name, n)?;
    }
    let files = ["mentions.jsonl", "relations.jsonl", "report.json", "report.csv"];
    let read = |d: &str, f: &str| std::fs::read(dir(d).join(f)).map_err(|e| format!("{d}/{f}: {e}"));
    for f in files {
        let reference = read("cold", f)?;
        for (name, _) in warm {
            ensure(read(name, f)? == reference, || format!("{name}/{f} differs from cold run"))?;
        }
    }
    let cold = manifest_without_runtime(&dir("cold"))?;
    ensure(balanced(&cold), || format!("cold accounting unbalanced: {}", cold["calls"]))?;
    let reference = manifest_without_runtime(&dir("warm1"))?;
    for (name, _) in warm {
        let m = manifest_without_runtime(&dir(name))?;
        ensure(m == reference, || format!("{name} manifest differs: {m}"))?;
        ensure(balanced(&m), || format!("{name} accounting unbalanced"))?;
    }
    let calls = &reference["calls"];
    ensure(calls["misses"] == 0 && calls["cache_hits"] == cold["calls"]["attempted"], || {
        format!("warm run was not served from cache: {calls}")
    })?;
    Ok(format!(
        "4 warm runs byte-identical (in-flight 1 and 8), {} calls all cache hits",
        calls["attempted"]
    ))
}

// 9 -------------------------------------------------------------------------

fn lint_conformance() -> Check {
    let labels = cdr_labels();
    let universe = labels.all_labels().to_vec();
    let shipped = &builtin_templates()[assets::CDR_RE_TEMPLATE];
    let errors = |t: &FivePartTemplate, rule: &str| {
        lint(t, Some(&labels), &universe)
            .into_iter()
            .filter(|f| f.severity == Severity::Error && (rule.is_empty() || f.rule == rule))
            .count()
    };
    ensure(errors(shipped, "") == 0, || format!("shipped template: {:?}", lint(shipped, Some(&labels), &universe)))?;

    let mut yes_no = shipped.clone();
    for s in &mut yes_no.positive_scenarios {
        s.answer_symbol = Some("YES".into());
    }
    for s in &mut yes_no.negative_scenarios {
        s.answer_symbol = Some("NO".into());
    }
    ensure(errors(&yes_no, "P2") > 0, || "YES/NO mutant passes P2".into())?;

    let mut no_negatives = shipped.clone();
    no_negatives.negative_scenarios.clear();
    ensure(errors(&no_negatives, "P6-P9") > 0, || "negative-free mutant passes P6-P9".into())?;
    ensure(has_errors(&lint(&no_negatives, Some(&labels), &universe)), || "mutant has no errors".into())?;

    // the same verdicts through the command line
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut codes = Vec::new();
    for (name, t) in [("shipped", shipped), ("yes_no", &yes_no), ("no_negatives", &no_negatives)] {
        let path = tmp.path().join(format!("{name}.json"));
        std::fs::write(&path, t.to_json()).map_err(|e| e.to_string())?;
        codes.push(relex(&["lint", path.to_str().unwrap()])?);
    }
    ensure(codes == [0, 1, 1], || format!("lint exit codes {codes:?}, expected [0, 1, 1]"))?;
    Ok("shipped: 0 errors; YES/NO mutant fails P2; negative-free mutant fails P6-P9".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric fidelity", Some(Duration::from_secs(1)), metric_fidelity),
        ("entity table reconstruction", Some(Duration::from_secs(5)), table1),
        ("relation table reconstruction", Some(Duration::from_secs(5)), table2),
        ("brute-force oracle equivalence", Some(Duration::from_secs(30)), brute_force_oracle),
        ("synonym closure", None, synonym_closure),
        ("ablation correctness", None, ablation),
        ("importer integrity", None, importer_integrity),
        ("determinism", None, determinism),
        ("lint conformance", None, lint_conformance),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:?}, limit {limit:?}")),
            (r, _) => r,
        };
        let ms = elapsed.as_secs_f64() * 1000.0;
        match result {
            Ok(detail) => println!("criterion {n} {name}: PASS ({ms:.0} ms) {detail}"),
            Err(reason) => {
                println!("criterion {n} {name}: FAIL ({ms:.0} ms) {reason}");
                failed.push(n);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: {} of 9 criteria fail: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
